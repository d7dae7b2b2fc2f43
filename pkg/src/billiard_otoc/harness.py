"""Experiment orchestration: configs, caching, runs, sweeps, validation.

A run is described by a YAML config (see ``ExperimentConfig``), executes the
geometry -> classical -> spectral -> quantum pipeline into an output
directory it owns exclusively, and leaves behind CSVs, PNG figures, a fits
record, and a ``manifest.json`` listing every produced file with a content
checksum plus all resolved physical defaults.

Eigenbases are cached under a directory taken from the config, the
``BILLIARD_OTOC_CACHE`` environment variable, or ``<outdir>/cache``; the
cache key is (domain content hash, h, N) and deliberately excludes hbar_eff,
which only rescales energies.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import classical, fem, qotoc
from .geometry import (
    PolygonSpec,
    erode,
    normalize_to_unit_area,
    polygon_to_domain,
    round_reflex_corners,
)
from .meshing import MIN_ANGLE_DEG
from .presets import default_launch, polygon_preset, preset_names
from .plots import (
    plot_classical_otoc,
    plot_domain,
    plot_quantum_otoc,
    plot_rate_table,
    plot_weyl,
)

CACHE_ENV = "BILLIARD_OTOC_CACHE"

#: module parameters echoed into every manifest so no choice stays implicit
PARAMETERS = {
    "mass_blend": fem.MASS_BLEND,
    "reliable_fraction": fem.RELIABLE_FRACTION,
    "ortho_tol": fem.ORTHO_TOL,
    "residual_tol": fem.RESIDUAL_TOL,
    "min_angle_deg": MIN_ANGLE_DEG,
    "delta0_default": classical.DELTA0_DEFAULT,
    "renorm_factor": classical.RENORM_FACTOR,
    "capture_threshold": qotoc.CAPTURE_THRESHOLD,
    "eps_log": qotoc.EPS_LOG,
}


class HarnessError(RuntimeError):
    """Pipeline failure, tagged with the stage that raised it."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Resolved experiment description; every field has a usable default.

    ``domain`` is a preset name or an explicit CCW vertex list; the optional
    transform erodes by ``radius`` or rounds reflex corners with ``radius``.
    Units are enforced after normalization: area 1, |p0| = 1, mass 1.
    """

    preset: str = None
    vertices: list = None
    transform: str = "none"            # none | erode | round
    radius: float = 0.0
    normalize: bool = True
    hbar: list = field(default_factory=lambda: [2.0 ** -5])
    sigma: float = 1.0 / math.sqrt(2.0)
    r0: list = None                    # default: preset launch
    p0: list = None
    n_samples: int = 0                 # classical ensemble; 0 skips stage
    delta0: float = classical.DELTA0_DEFAULT
    lyapunov_time: float = 0.0         # 0 skips the Lyapunov fit
    h: object = "auto"
    n_states: int = 200
    t_max: float = 2.0
    n_times: int = 81
    fit_window: object = "auto"        # [ta, tb] or "auto"
    with_log: bool = False
    seed: int = 0
    outdir: str = "out"
    cache_dir: str = None

    @classmethod
    def from_dict(cls, data):
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise HarnessError("config", f"unknown config keys: "
                               f"{', '.join(sorted(extra))}")
        cfg = cls(**data)
        cfg.check()
        return cfg

    @classmethod
    def from_file(cls, path):
        with open(path) as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise HarnessError("config", f"{path} is not a mapping")
        return cls.from_dict(data)

    def check(self):
        if (self.preset is None) == (self.vertices is None):
            raise HarnessError("config",
                               "exactly one of preset/vertices is required")
        if self.preset is not None and self.preset not in preset_names():
            raise HarnessError(
                "config", f"unknown preset {self.preset!r}; available: "
                f"{', '.join(preset_names())}")
        if self.transform not in ("none", "erode", "round"):
            raise HarnessError("config",
                               f"unknown transform {self.transform!r}")
        if self.transform != "none" and self.radius <= 0:
            raise HarnessError("config", "transform needs radius > 0")
        if not self.hbar:
            raise HarnessError("config", "hbar list must be nonempty")
        if any(hb <= 0 for hb in self.hbar):
            raise HarnessError("config", "hbar values must be positive")
        if self.vertices is not None and self.r0 is None:
            raise HarnessError("config",
                               "explicit vertex lists need an explicit r0")
        if self.n_times < 2 or self.t_max <= 0:
            raise HarnessError("config", "bad time grid")

    def resolved(self):
        """Plain dict with every default made explicit (manifest echo)."""
        out = {}
        for name in self.__dataclass_fields__:
            v = getattr(self, name)
            out[name] = list(v) if isinstance(v, (tuple, np.ndarray)) else v
        return out

    def config_hash(self):
        blob = json.dumps(self.resolved(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def times(self):
        return np.linspace(0.0, self.t_max, self.n_times)

    def resolve_cache_dir(self):
        return (self.cache_dir or os.environ.get(CACHE_ENV)
                or os.path.join(self.outdir, "cache"))


def build_domain(config: ExperimentConfig):
    """Domain plus launch (r0, unit p0) in final normalized coordinates."""
    if config.preset is not None:
        spec = polygon_preset(config.preset)
    else:
        spec = PolygonSpec(np.array(config.vertices, float))
    if config.transform == "erode":
        domain = erode(spec, config.radius)
    elif config.transform == "round":
        domain = round_reflex_corners(spec, config.radius)
    else:
        domain = polygon_to_domain(spec)
    scale = 1.0
    if config.normalize:
        domain, scale = normalize_to_unit_area(domain)
    if config.r0 is not None:
        r0 = np.array(config.r0, float) * scale
        p0 = np.array(config.p0, float) if config.p0 is not None \
            else np.array([1.0, 0.0])
    else:
        r0, p0 = default_launch(config.preset)
        r0 = r0 * scale
    p0 = p0 / np.hypot(*p0)
    return domain, r0, p0


# ---------------------------------------------------------------------------
# eigenbasis cache
# ---------------------------------------------------------------------------

def auto_h(domain, n_states):
    """Mesh size from the inverse Weyl estimate of the cutoff energy.

    The cutoff is placed where the two-term Weyl count reaches the requested
    states divided by the reliable fraction, then padded by 10%.
    """
    target = n_states / fem.RELIABLE_FRACTION
    a = domain.area / (4.0 * math.pi)
    p = domain.perimeter / (4.0 * math.pi)
    sqrt_eps = (p + math.sqrt(p * p + 4.0 * a * target)) / (2.0 * a)
    return fem.default_h(1.1 * sqrt_eps ** 2)


def cache_path(cache_dir, domain, h, n_states):
    key = f"{fem.domain_hash(domain)[:16]}_h{h:.6g}_N{n_states}"
    return os.path.join(cache_dir, key + ".eigbas")


def _file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def load_or_solve(domain, h, n_states, cache_dir, seed=0):
    """Cached eigenbasis at hbar_eff = 1; returns (basis, cache_hit)."""
    os.makedirs(cache_dir, exist_ok=True)
    path = cache_path(cache_dir, domain, h, n_states)
    if os.path.exists(path):
        try:
            with open(path + ".sha256") as f:
                expected = f.read().strip()
            if _file_sha256(path) != expected:
                raise fem.FEMError("cache checksum mismatch")
            return fem.load_basis(path, 1.0, domain), True
        except (OSError, fem.FEMError, KeyError, ValueError):
            pass    # corrupt or stale: fall through and rebuild
    basis = fem.solve_domain(domain, h, n_states, 1.0, seed=seed)
    fem.save_basis(path, basis, domain)
    with open(path + ".sha256", "w") as f:
        f.write(_file_sha256(path) + "\n")
    return basis, False


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass
class RunManifest:
    config: dict
    config_hash: str
    parameters: dict
    files: dict = field(default_factory=dict)      # relpath -> sha256
    timings: dict = field(default_factory=dict)    # stage -> seconds
    outcomes: list = field(default_factory=list)   # validation entries

    def record(self, outdir, path):
        rel = os.path.relpath(path, outdir)
        self.files[rel] = _file_sha256(path)
        return path

    def write(self, outdir):
        path = os.path.join(outdir, "manifest.json")
        body = {
            "config": self.config,
            "config_hash": self.config_hash,
            "parameters": self.parameters,
            "files": self.files,
            "timings": self.timings,
            "outcomes": self.outcomes,
        }
        with open(path, "w") as f:
            json.dump(body, f, indent=2, sort_keys=True, default=str)
            f.write("\n")
        return path


def _hbtag(hb):
    return ("%g" % hb).replace(".", "p").replace("-", "m")


def _write_text(manifest, outdir, name, text):
    path = os.path.join(outdir, name)
    with open(path, "w") as f:
        f.write(text)
    return manifest.record(outdir, path)


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def _fit_window(config, t_e=None):
    if config.fit_window != "auto":
        ta, tb = config.fit_window
        return float(ta), float(tb)
    tb = 0.5 * config.t_max
    if t_e is not None and np.isfinite(t_e) and t_e > 0:
        tb = min(tb, t_e)
    return 0.05 * config.t_max, tb


def run(config: ExperimentConfig) -> RunManifest:
    """Execute the configured pipeline; see the module docstring."""
    os.makedirs(config.outdir, exist_ok=True)
    manifest = RunManifest(config.resolved(), config.config_hash(),
                           dict(PARAMETERS))
    outdir = config.outdir
    times = config.times()
    fits = {"hbar": {}, "classical": {}}

    def stage(name):
        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()
                return self

            def __exit__(self, exc_type, exc, tb):
                manifest.timings[name] = time.perf_counter() - self.t0
                if exc is not None and not isinstance(exc, HarnessError):
                    raise HarnessError(name, str(exc)) from exc
        return _Timer()

    with stage("geometry"):
        domain, r0, p0 = build_domain(config)
        _write_text(manifest, outdir, "domain.txt", domain.to_text())

    classical_series = {}
    if config.n_samples > 0:
        with stage("classical"):
            for hb in config.hbar:
                spec = classical.WignerEnsembleSpec(
                    r0, p0, config.sigma, hb, config.n_samples,
                    seed=config.seed, delta0=config.delta0)
                ser = classical.classical_otoc(spec, domain, times)
                classical_series[hb] = ser
                _write_text(manifest, outdir,
                            f"classical_otoc_hbar{_hbtag(hb)}.csv",
                            ser.to_csv())
            if config.lyapunov_time > 0:
                spec = classical.WignerEnsembleSpec(
                    r0, p0, config.sigma, min(config.hbar),
                    config.n_samples, seed=config.seed,
                    delta0=config.delta0)
                lyap = classical.finite_time_lyapunov(
                    spec, domain, config.lyapunov_time)
                fits["classical"] = {
                    "lambda_cl": lyap.lam, "window": list(lyap.window),
                    "valid": lyap.valid, "stderr": lyap.stderr,
                    "n_renormalizations": lyap.n_renormalizations,
                }
            else:
                lyap = None
            first = classical_series[config.hbar[0]]
            manifest.record(outdir, plot_classical_otoc(
                os.path.join(outdir, "classical_otoc.png"), first, lyap))

    basis1 = None
    if config.n_states > 0:
        with stage("spectral"):
            h = auto_h(domain, config.n_states) if config.h == "auto" \
                else float(config.h)
            basis1, hit = load_or_solve(domain, h, config.n_states,
                                        config.resolve_cache_dir(),
                                        seed=config.seed)
            manifest.outcomes.append({"check": "cache_hit", "passed": hit,
                                      "detail": f"h={h:.6g}"})
            basis1.check()
            weyl = fem.weyl_report(basis1, domain)
            manifest.outcomes.append({
                "check": "weyl", "passed": not weyl.flagged,
                "detail": f"max deviation {weyl.max_deviation:.2f} "
                          f"(band {weyl.band:.2f})"})
            manifest.record(outdir, plot_weyl(
                os.path.join(outdir, "weyl.png"), weyl))
            manifest.record(outdir, plot_domain(
                os.path.join(outdir, "domain.png"), domain,
                mesh=basis1.mesh, r0=r0))
            if weyl.flagged:
                raise HarnessError(
                    "spectral", "Weyl deviation exceeds the band; the basis "
                    "is missing or duplicating states")

    quantum_series = {}
    if basis1 is not None:
        with stage("quantum"):
            mats1 = qotoc.build_operator_matrices(basis1)
            for hb in config.hbar:
                basis = basis1.with_hbar(hb)
                spec = qotoc.WavePacketSpec(r0, p0, config.sigma, hb)
                state = qotoc.project_packet(spec, basis, domain)
                # p_factor is linear in hbar (energies scale as hbar^2)
                mats = qotoc.OperatorMatrices(
                    mats1.X, mats1.p_factor * hb,
                    mats1.p_median_discrepancy)
                ser = qotoc.otoc(times, mats, basis.energies[:basis.n_reliable],
                                 state, hb, with_log=config.with_log)
                quantum_series[hb] = ser
                _write_text(manifest, outdir,
                            f"otoc_hbar{_hbtag(hb)}.csv", ser.to_csv())

        with stage("fits"):
            lam_cl = fits["classical"].get("lambda_cl")
            for hb in config.hbar:
                t_e = (qotoc.ehrenfest_time(hb, lam_cl)
                       if lam_cl and lam_cl > 0 else None)
                window = _fit_window(config, t_e)
                try:
                    fit = qotoc.fit_growth_rate(quantum_series[hb], window)
                    entry = {"rate": fit.rate, "intercept": fit.intercept,
                             "window": list(fit.window), "valid": fit.valid}
                except qotoc.QuantumError as exc:
                    entry = {"error": str(exc), "window": list(window),
                             "valid": False}
                entry["captured_norm"] = quantum_series[hb].captured_norm
                entry["t_ehrenfest"] = t_e
                fits["hbar"][f"{hb:g}"] = entry
            cl = classical_series.get(config.hbar[0])
            manifest.record(outdir, plot_quantum_otoc(
                os.path.join(outdir, "otoc.png"), quantum_series,
                classical=cl,
                t_e=fits["hbar"][f"{config.hbar[0]:g}"]["t_ehrenfest"]))

    with stage("report"):
        _write_text(manifest, outdir, "fits.json",
                    json.dumps(fits, indent=2, sort_keys=True) + "\n")
        _write_text(manifest, outdir, "config.yaml",
                    yaml.safe_dump(config.resolved(), sort_keys=True))
    manifest.write(outdir)
    return manifest


def sweep_hbar(config: ExperimentConfig):
    """Multi-hbar run sharing one cached spectral solve; adds a rate table.

    Returns (manifest, rows) with rows of (hbar, fitted rate, valid).
    """
    if len(config.hbar) < 2:
        raise HarnessError("sweep", "a sweep needs at least two hbar values")
    manifest = run(config)
    rows = []
    for hb in sorted(config.hbar):
        fits = json.loads(
            open(os.path.join(config.outdir, "fits.json")).read())
        entry = fits["hbar"][f"{hb:g}"]
        rows.append((hb, entry.get("rate", float("nan")), entry["valid"]))
    table = ["hbar_eff,rate,valid"]
    table += ["%.17g,%.17g,%d" % (hb, r, int(v)) for hb, r, v in rows]
    _write_text(manifest, config.outdir, "rates.csv",
                "\n".join(table) + "\n")
    manifest.record(config.outdir, plot_rate_table(
        os.path.join(config.outdir, "sweep_rates.png"), rows))
    manifest.write(config.outdir)
    return manifest, rows


# ---------------------------------------------------------------------------
# validation suite (desk scale)
# ---------------------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _square_domain(unit=True):
    if unit:
        verts = [[0, 0], [1, 0], [1, 1], [0, 1]]
    else:
        verts = [[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]]
    return polygon_to_domain(PolygonSpec(np.array(verts, float)))


def validate(cache_dir=None, forced_failure=False, heavy=False,
             progress=None, names=None):
    """Desk-scale pass over the acceptance criteria.

    ``forced_failure`` solves the eigenvalue check on a deliberately coarse
    mesh as a negative control.  ``heavy`` also runs the slow criteria
    (classical dichotomy and the two-hbar quantum instability); without it
    those are skipped with a pointer to the test suite.  ``names`` limits
    the run to the listed checks.
    """
    cache_dir = cache_dir or os.environ.get(CACHE_ENV) or ".billiard-cache"
    results = []

    def check(name, fn):
        if names is not None and name not in names:
            return
        t0 = time.perf_counter()
        try:
            passed, detail = fn()
        except Exception as exc:   # report, never raise
            passed, detail = False, f"error: {exc}"
        res = CheckResult(name, passed, detail, time.perf_counter() - t0)
        results.append(res)
        if progress is not None:
            progress(res)

    square = _square_domain()

    def fem_accuracy():
        h = 0.08 if forced_failure else 0.02
        basis, _ = load_or_solve(square, h, 20, cache_dir)
        exact = np.sort(np.array(
            [n * n + m * m for n in range(1, 9) for m in range(1, 9)],
            float))[:20] * math.pi ** 2
        rel = float(np.max(np.abs(basis.lambdas - exact) / exact))
        return rel < 0.005, f"max relative eigenvalue error {rel:.2e}"

    def weyl_count():
        basis, _ = load_or_solve(square, 0.011, 100, cache_dir)
        exact = sum(1 for n in range(1, 40) for m in range(1, 40)
                    if math.pi ** 2 * (n * n + m * m) <= 1000)
        got = int(np.sum(basis.lambdas <= 1000))
        rep = fem.weyl_report(basis, square)
        ok = got == exact == 71 and not rep.flagged
        return ok, (f"count {got} vs enumeration {exact}, max Weyl "
                    f"deviation {rep.max_deviation:.2f}")

    def hygiene():
        basis, _ = load_or_solve(square, 0.02, 20, cache_dir)
        basis.check()
        centered = _square_domain(unit=False)
        sb = fem.symmetry_sector_solve(centered, 0.05, 6, 1.0)
        fb = fem.solve_domain(centered, 0.05, 12, 1.0)
        ok = np.allclose(sb.lambdas[:12], fb.lambdas, rtol=5e-3)
        return ok, "orthonormality, residuals and sector merge pass"

    def commutator_sanity():
        hb = 0.05
        basis, _ = load_or_solve(square, 0.015, 190, cache_dir)
        basis = basis.with_hbar(hb)
        spec = qotoc.WavePacketSpec([0.5, 0.5], [1.0, 0.0],
                                    1.0 / math.sqrt(2.0), hb)
        st = qotoc.project_packet(spec, basis, square)
        mats = qotoc.build_operator_matrices(basis)
        ser = qotoc.otoc(np.array([0.0]), mats,
                         basis.energies[:basis.n_reliable], st, hb)
        ratio = ser.c[0] / hb ** 2
        ok = st.captured_norm >= 0.999 and 0.98 <= ratio <= 1.02
        return ok, (f"C(0)/hbar^2 = {ratio:.4f}, captured "
                    f"{st.captured_norm:.5f}")

    def p_consistency():
        basis, _ = load_or_solve(square, 0.015, 190, cache_dir)
        mats = qotoc.build_operator_matrices(basis)
        d = mats.p_median_discrepancy
        return d < 0.01, f"median relative P discrepancy {d:.2e}"

    def box_revival():
        from .analytic import BoxBasis
        hb = 0.05
        box = BoxBasis(60, hb)
        st = box.project_packet(0.5, 1.0, 1.0 / math.sqrt(2.0))
        t_rev = box.revival_time()
        ser = qotoc.otoc(np.array([0.0, t_rev]), box.operator_matrices(),
                         box.energies, st, hb)
        rel = abs(ser.c[1] - ser.c[0]) / ser.c[0]
        return rel < 1e-6, f"|C(t_rev) - C(0)|/C(0) = {rel:.2e}"

    def rectangle_classical():
        spec = classical.WignerEnsembleSpec(
            [0.5, 0.5], [1.0, 0.0], 1.0 / math.sqrt(2.0), 2.0 ** -5, 10000)
        ser = classical.classical_otoc(spec, square,
                                       np.linspace(0.0, 3.0, 16))
        dev = np.max(np.abs(ser.c_cl - 1.0) / np.maximum(ser.c_cl_stderr,
                                                         1e-300))
        return dev <= 3.0, f"max |C_cl - 1| = {dev:.2f} standard errors"

    check("fem-accuracy", fem_accuracy)
    check("weyl-count", weyl_count)
    check("spectral-hygiene", hygiene)
    check("commutator-sanity", commutator_sanity)
    check("p-consistency", p_consistency)
    check("box-revival", box_revival)
    check("rectangle-classical", rectangle_classical)

    if heavy:
        def classical_dichotomy():
            from .presets import BUTTERFLY_ROUNDING
            hb = 2.0 ** -6
            poly = polygon_preset("butterfly")
            dom_p = polygon_to_domain(poly)
            dom_r, _ = normalize_to_unit_area(
                round_reflex_corners(poly, BUTTERFLY_ROUNDING))
            r0, p0 = default_launch("butterfly")
            lams = {}
            for name, dom in (("polygon", dom_p), ("rounded", dom_r)):
                spec = classical.WignerEnsembleSpec(r0, p0,
                                                    1.0 / math.sqrt(2.0),
                                                    hb, 2000)
                lams[name] = classical.finite_time_lyapunov(spec, dom, 30.0)
            ok = (not lams["polygon"].valid) and lams["rounded"].valid \
                and lams["rounded"].lam > 0
            return ok, (f"polygon valid={lams['polygon'].valid}, rounded "
                        f"lambda={lams['rounded'].lam:.3f} "
                        f"valid={lams['rounded'].valid}")

        def quantum_instability():
            cfg = ExperimentConfig(
                preset="butterfly", hbar=[2.0 ** -5, 2.0 ** -6],
                sigma=0.5, n_states=1200, t_max=6.0, n_times=121,
                fit_window=[0.0, 2.5],
                outdir=os.path.join(cache_dir, "validate-butterfly"),
                cache_dir=cache_dir)
            _, rows = sweep_hbar(cfg)
            (hb_lo, r_lo, v_lo), (hb_hi, r_hi, v_hi) = sorted(rows)
            ok = v_lo and v_hi and r_lo > r_hi > 0
            return ok, (f"rate({hb_lo:g}) = {r_lo:.2f}, "
                        f"rate({hb_hi:g}) = {r_hi:.2f}")

        check("classical-dichotomy", classical_dichotomy)
        check("quantum-instability", quantum_instability)
    elif names is None:
        results.append(CheckResult(
            "heavy-criteria", True,
            "skipped (run with --heavy or see tests/test_acceptance.py)",
            0.0))

    return results
