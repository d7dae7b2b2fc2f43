import math

import numpy as np
import pytest

from billiard_otoc import fem
from billiard_otoc.geometry import PolygonSpec, polygon_to_domain
from billiard_otoc.meshing import generate_mesh

UNIT_SQUARE = polygon_to_domain(
    PolygonSpec(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)))
CENTERED_SQUARE = polygon_to_domain(
    PolygonSpec(np.array([[-0.5, -0.5], [0.5, -0.5],
                          [0.5, 0.5], [-0.5, 0.5]], float)))


def square_lambdas(n_states):
    vals = sorted(n * n + m * m for n in range(1, 40) for m in range(1, 40))
    return np.array(vals[:n_states]) * math.pi ** 2


@pytest.fixture(scope="module")
def square_basis():
    return fem.solve_domain(UNIT_SQUARE, 0.02, 20, 1.0)


class TestAssembly:
    def test_stiffness_kernel_contains_constants(self):
        p = np.array([[0, 0], [1, 0], [0, 1]], float)
        Ke, Me = fem.element_matrices(p)
        assert np.allclose(Ke.sum(axis=1), 0.0, atol=1e-14)
        assert np.allclose(Ke, Ke.T)

    def test_element_mass_positive_and_total(self):
        p = np.array([[0, 0], [2, 0], [0, 3]], float)
        _, Me = fem.element_matrices(p)
        assert np.all(Me >= 0)
        assert Me.sum() == pytest.approx(3.0)  # triangle area

    def test_global_mass_equals_area(self):
        mesh = generate_mesh(UNIT_SQUARE, 0.1)
        _, M = fem.assemble_full(mesh)
        assert M.sum() == pytest.approx(1.0, abs=1e-10)

    def test_stiffness_psd_mass_pd(self):
        mesh = generate_mesh(UNIT_SQUARE, 0.1)
        K, M, _ = fem.assemble(mesh)
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = rng.standard_normal(K.shape[0])
            assert x @ (K @ x) >= -1e-10
            assert x @ (M @ x) > 0


class TestSolveLowest:
    def test_square_first_20_accuracy(self, square_basis):
        exact = square_lambdas(20)
        rel = np.abs(square_basis.lambdas - exact) / exact
        assert np.max(rel) < 0.005

    def test_h_convergence_order_two(self):
        exact = square_lambdas(20)
        errs = []
        for h in (0.08, 0.04):
            b = fem.solve_domain(UNIT_SQUARE, h, 20, 1.0)
            errs.append(np.abs(b.lambdas - exact) / exact)
        ratio = errs[0] / errs[1]
        assert np.all(ratio > 2.5) and np.all(ratio < 6.0)

    def test_degenerate_pair_orthonormal(self, square_basis):
        # states 2 and 3 are the degenerate (1,2)/(2,1) pair
        assert square_basis.lambdas[1] == pytest.approx(
            square_basis.lambdas[2], rel=2e-3)
        square_basis.check()

    def test_rectangle_ground_state(self):
        rect = polygon_to_domain(PolygonSpec(
            np.array([[0, 0], [2, 0], [2, 0.5], [0, 0.5]], float)))
        b = fem.solve_domain(rect, 0.02, 3, 1.0)
        assert b.energies[0] == pytest.approx(
            math.pi ** 2 * (0.25 + 4.0) / 2.0, rel=5e-3)

    def test_hbar_independence_and_energy_scaling(self, square_basis):
        b2 = square_basis.with_hbar(0.5)
        assert np.array_equal(b2.lambdas, square_basis.lambdas)
        assert np.allclose(b2.energies, 0.25 * square_basis.energies)

    def test_sign_convention_deterministic(self):
        b1 = fem.solve_domain(UNIT_SQUARE, 0.08, 10, 1.0)
        b2 = fem.solve_domain(UNIT_SQUARE, 0.08, 10, 1.0)
        assert np.array_equal(b1.vectors, b2.vectors)

    def test_windowed_walk_matches_single_window(self):
        mesh = generate_mesh(UNIT_SQUARE, 0.04)
        K, M, _ = fem.assemble(mesh)
        lam1, _ = fem.solve_lowest(K, M, 40)
        lam2, _ = fem.solve_lowest(K, M, 40, window=15)
        assert np.allclose(lam1, lam2, rtol=1e-9)

    def test_accuracy_guard(self):
        mesh = generate_mesh(UNIT_SQUARE, 0.1)
        K, M, _ = fem.assemble(mesh)
        with pytest.raises(fem.FEMError):
            fem.solve_lowest(K, M, K.shape[0] // 2)


class TestWeyl:
    def test_square_count_vs_enumeration(self):
        # enumeration oracle: states with pi^2 (n^2+m^2) <= 1000
        exact_count = sum(1 for n in range(1, 40) for m in range(1, 40)
                          if math.pi ** 2 * (n * n + m * m) <= 1000)
        assert exact_count == 71
        b = fem.solve_domain(UNIT_SQUARE, 0.011, 100, 1.0)
        fem_count = int(np.sum(b.lambdas <= 1000))
        assert fem_count == exact_count
        rep = fem.weyl_report(b, UNIT_SQUARE)
        assert not rep.flagged
        assert rep.max_deviation <= 5.0
        pred = fem.weyl_prediction(UNIT_SQUARE, np.array([1000.0]))[0]
        assert pred == pytest.approx(69.5, abs=1.0)

    def test_empty_range(self):
        assert fem.weyl_prediction(UNIT_SQUARE, 0.0) == pytest.approx(0.0)

    def test_dropped_state_flagged(self):
        b = fem.solve_domain(UNIT_SQUARE, 0.04, 20, 1.0)
        clean = fem.weyl_report(b, UNIT_SQUARE, band=2.0)
        assert not clean.flagged
        dropped = fem.EigenBasis(1.0, np.delete(b.lambdas, [0, 1]),
                                 np.delete(b.vectors, [0, 1], axis=1), b.mesh)
        rep = fem.weyl_report(dropped, UNIT_SQUARE, band=2.0)
        assert rep.flagged

    def test_counted_is_exact_step_function(self):
        b = fem.solve_domain(UNIT_SQUARE, 0.04, 10, 1.0)
        rep = fem.weyl_report(b, UNIT_SQUARE)
        assert np.array_equal(rep.counted, np.arange(1, 11))


class TestSectorSolve:
    def test_square_sectors(self):
        sb = fem.symmetry_sector_solve(CENTERED_SQUARE, 0.05, 8, 1.0)
        fb = fem.solve_domain(CENTERED_SQUARE, 0.05, 16, 1.0)
        # lowest state is even-even (1,1); the (2,2) mode leads the DD sector
        assert sb.sector_labels[0] == ("N", "N")
        dd = [i for i, lab in enumerate(sb.sector_labels)
              if lab == ("D", "D")]
        assert sb.lambdas[dd[0]] == pytest.approx(8 * math.pi ** 2, rel=5e-3)
        # merged energies track the full-domain solve within mesh error
        assert np.allclose(sb.lambdas[:16], fb.lambdas, rtol=5e-3)
        sb.check()

    def test_asymmetric_domain_errors(self):
        from billiard_otoc import presets
        from billiard_otoc.geometry import GeometryError
        tri = polygon_to_domain(presets.polygon_preset("triangle"))
        with pytest.raises(GeometryError):
            fem.symmetry_sector_solve(tri, 0.05, 4, 1.0)


class TestCache:
    def test_roundtrip(self, tmp_path, square_basis):
        p = tmp_path / "b.eigbas"
        fem.save_basis(p, square_basis, UNIT_SQUARE)
        back = fem.load_basis(p, 1.0, UNIT_SQUARE)
        assert np.array_equal(back.lambdas, square_basis.lambdas)
        assert np.array_equal(back.vectors, square_basis.vectors)
        assert np.array_equal(back.mesh.nodes, square_basis.mesh.nodes)

    def test_hbar_rescale_on_load(self, tmp_path, square_basis):
        p = tmp_path / "b.eigbas"
        fem.save_basis(p, square_basis, UNIT_SQUARE)
        back = fem.load_basis(p, 0.25, UNIT_SQUARE)
        assert np.allclose(back.energies, square_basis.energies / 16.0)

    def test_wrong_domain_rejected(self, tmp_path, square_basis):
        p = tmp_path / "b.eigbas"
        fem.save_basis(p, square_basis, UNIT_SQUARE)
        with pytest.raises(fem.FEMError):
            fem.load_basis(p, 1.0, CENTERED_SQUARE)
