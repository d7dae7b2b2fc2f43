"""Command-line entry points.

Subcommands mirror the harness operations: ``solve`` (spectral only),
``classical`` (ensemble diagnostics only), ``otoc`` (full pipeline),
``sweep`` (multi-hbar with a rate table), ``validate`` (acceptance checks),
and ``presets`` (shipped shapes).  Flags mirror the config fields and
override values read with --config; the eigenbasis cache directory can also
be set through the BILLIARD_OTOC_CACHE environment variable.  Exit status
is 0 only if no stage errored.
"""

from __future__ import annotations

import json
import sys

import click

from . import fem, harness, presets
from .harness import ExperimentConfig, HarnessError


def _load_config(config_path, overrides):
    cfg = ExperimentConfig.from_file(config_path) if config_path \
        else ExperimentConfig()
    for key, value in overrides.items():
        if value is not None and value != ():
            setattr(cfg, key, list(value) if isinstance(value, tuple)
                    else value)
    cfg.check()
    return cfg


_common = [
    click.option("--config", "config_path", type=click.Path(exists=True),
                 help="YAML config file; flags override its fields."),
    click.option("--preset", help="shipped shape name"),
    click.option("--transform",
                 type=click.Choice(["none", "erode", "round"])),
    click.option("--radius", type=float, help="erode/round radius"),
    click.option("--hbar", multiple=True, type=float,
                 help="effective Planck constant (repeatable)"),
    click.option("--sigma", type=float),
    click.option("--h", type=float, help="mesh size (default: auto)"),
    click.option("--n-states", "n_states", type=int),
    click.option("--n-samples", "n_samples", type=int,
                 help="classical ensemble size"),
    click.option("--t-max", "t_max", type=float),
    click.option("--n-times", "n_times", type=int),
    click.option("--seed", type=int),
    click.option("--outdir", type=click.Path()),
    click.option("--cache-dir", "cache_dir", type=click.Path()),
]


def common_options(fn):
    for opt in reversed(_common):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Billiard OTOC pipeline: geometry, spectra, classical and quantum
    instability diagnostics."""


def _run_guarded(fn):
    try:
        return fn()
    except HarnessError as exc:
        click.echo(f"error {exc}", err=True)
        sys.exit(1)
    except Exception as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


@main.command()
@common_options
def solve(config_path, **overrides):
    """Solve the eigenproblem (cached) and print a Weyl summary."""
    cfg = _load_config(config_path, overrides)

    def go():
        domain, _, _ = harness.build_domain(cfg)
        h = harness.auto_h(domain, cfg.n_states) if cfg.h == "auto" \
            else float(cfg.h)
        basis, hit = harness.load_or_solve(domain, h, cfg.n_states,
                                           cfg.resolve_cache_dir(),
                                           seed=cfg.seed)
        basis.check()
        rep = fem.weyl_report(basis, domain)
        click.echo(f"cache {'hit' if hit else 'miss'}; h = {h:.6g}, "
                   f"{basis.n_states} states "
                   f"({basis.n_reliable} reliable)")
        click.echo(f"Weyl max deviation {rep.max_deviation:.2f} "
                   f"(band {rep.band:.2f})"
                   + (" FLAGGED" if rep.flagged else ""))
        if rep.flagged:
            sys.exit(1)
    _run_guarded(go)


@main.command()
@common_options
def classical(config_path, **overrides):
    """Classical OTOC and Lyapunov diagnostics only."""
    cfg = _load_config(config_path, overrides)
    if cfg.n_samples <= 0:
        cfg.n_samples = 4000
    cfg.n_states = 0
    if cfg.lyapunov_time <= 0:
        cfg.lyapunov_time = 5.0 * cfg.t_max
    manifest = _run_guarded(lambda: harness.run(cfg))
    click.echo(f"wrote {len(manifest.files)} files to {cfg.outdir}")


@main.command()
@common_options
def otoc(config_path, **overrides):
    """Full pipeline: geometry, spectra, quantum (and classical) OTOC."""
    cfg = _load_config(config_path, overrides)
    manifest = _run_guarded(lambda: harness.run(cfg))
    fits = json.loads(open(f"{cfg.outdir}/fits.json").read())
    for hb, entry in sorted(fits["hbar"].items(), key=lambda kv: float(kv[0])):
        if "rate" in entry:
            click.echo(f"hbar_eff = {hb}: 2 lambda-tilde = "
                       f"{entry['rate']:.3f} "
                       f"({'valid' if entry['valid'] else 'invalid'})")
        else:
            click.echo(f"hbar_eff = {hb}: fit failed ({entry['error']})")
    click.echo(f"wrote {len(manifest.files)} files to {cfg.outdir}")


@main.command()
@common_options
def sweep(config_path, **overrides):
    """hbar_eff sweep reusing one cached spectral solve."""
    cfg = _load_config(config_path, overrides)
    _, rows = _run_guarded(lambda: harness.sweep_hbar(cfg))
    click.echo("hbar_eff      rate    valid")
    for hb, rate, valid in rows:
        click.echo(f"{hb:<12g} {rate:7.3f}  {valid}")


@main.command()
@click.option("--cache-dir", "cache_dir", type=click.Path())
@click.option("--forced-failure", is_flag=True,
              help="negative control: coarse-mesh eigenvalue check")
@click.option("--heavy", is_flag=True,
              help="also run the slow classical/quantum criteria")
def validate(cache_dir, forced_failure, heavy):
    """Run the desk-scale acceptance checks and print pass/fail."""
    def show(res):
        mark = "PASS" if res.passed else "FAIL"
        click.echo(f"[{mark}] {res.name:22s} {res.detail} "
                   f"({res.seconds:.1f}s)")
    results = harness.validate(cache_dir=cache_dir,
                               forced_failure=forced_failure,
                               heavy=heavy, progress=show)
    if not all(r.passed for r in results):
        sys.exit(1)


@main.command("presets")
def presets_cmd():
    """List shipped shapes and their default launches."""
    for name in presets.preset_names():
        spec = presets.polygon_preset(name)
        line = f"{name:14s} {spec.n} vertices"
        try:
            r0, p0 = presets.default_launch(name)
            line += (f"  launch r0 = ({r0[0]:.3f}, {r0[1]:.3f}), "
                     f"p0 = ({p0[0]:.3f}, {p0[1]:.3f})")
        except Exception:
            pass
        click.echo(line)
    click.echo(f"butterfly rounding radius R_s = "
               f"{presets.BUTTERFLY_ROUNDING:.6g} "
               f"(= (sqrt(2)-1)/(16 sqrt(2)))")


if __name__ == "__main__":
    main()
