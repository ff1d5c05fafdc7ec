import math

import numpy as np
import pytest

from metastab.expr import parse_potential
from metastab.landscape import Disk, Interval, Rectangle, analyze_landscape
from metastab.spectral import (
    SpectralError,
    admissible_h_floor,
    boundary_flux,
    discretize_generator,
    exit_expectation,
    laplace_reference,
    lowest_spectrum,
    qsd_measure,
    region_mass,
    subspace_dimension_below,
    well_masks,
)

QUARTIC = parse_potential("(x^2-1)^2", 1)
ZERO = parse_potential("0*x", 1)


@pytest.fixture(scope="module")
def quartic_sol():
    op = discretize_generator(QUARTIC, Interval(-1.3, 1.3), h=0.2, n=1024)
    return lowest_spectrum(op, k=3)


class TestAssembly:
    def test_flat_potential_dirichlet_laplacian(self):
        # f = 0: operator is (h/2) * Dirichlet Laplacian; lambda_1 = (h/2) pi^2
        op = discretize_generator(ZERO, Interval(0.0, 1.0), h=1.0, n=512)
        sol = lowest_spectrum(op, k=2)
        assert sol.eigenvalues[0] == pytest.approx(np.pi**2 / 2.0, rel=1e-3)

    def test_constant_shift_identical_entries(self):
        # identical up to the ulp rounding of evaluating f+7 before the min shift
        pot2 = parse_potential("(x^2-1)^2+7", 1)
        op1 = discretize_generator(QUARTIC, Interval(-1.3, 1.3), h=0.15, n=128)
        op2 = discretize_generator(pot2, Interval(-1.3, 1.3), h=0.15, n=128)
        A1, A2 = op1.matrix.toarray(), op2.matrix.toarray()
        assert np.allclose(A1, A2, rtol=1e-12, atol=0.0)

    def test_reflection_symmetry_of_matrix(self):
        op = discretize_generator(QUARTIC, Interval(-1.3, 1.3), h=0.15, n=256)
        A = op.matrix.toarray()
        assert np.array_equal(A, A[::-1, ::-1])

    def test_m_matrix_structure(self, quartic_sol):
        A = quartic_sol.operator.matrix
        off = A - __import__("scipy.sparse", fromlist=["diags"]).diags(A.diagonal())
        assert off.toarray().max() <= 0.0
        assert np.all(A.diagonal() > 0)

    def test_exact_symmetry(self, quartic_sol):
        A = quartic_sol.operator.matrix
        assert (A - A.T).nnz == 0

    def test_h_floor_refusal(self):
        with pytest.raises(SpectralError, match="admissible"):
            discretize_generator(QUARTIC, Interval(-1.3, 1.3), h=0.02, n=128)
        assert admissible_h_floor(0.4761) == pytest.approx(2 * 0.4761 / math.log(1e12), rel=1e-12)

    def test_factored_form_matches_matrix(self, quartic_sol):
        op = quartic_sol.operator
        rng = np.random.default_rng(0)
        V = rng.standard_normal((op.matrix.shape[0], 3))
        W = op.apply_C(V)
        assert np.allclose(W.T @ W, V.T @ (op.matrix @ V), rtol=1e-10, atol=1e-12)


class TestSpectrum:
    def test_two_low_lying(self, quartic_sol):
        lam = quartic_sol.eigenvalues
        assert lam[0] < lam[1] < math.sqrt(0.2) / 2.0 < lam[2]

    def test_subspace_dimension(self):
        op = discretize_generator(QUARTIC, Interval(-1.3, 1.3), h=0.1, n=1024)
        assert subspace_dimension_below(op, math.sqrt(0.1) / 2.0) == 2

    def test_flat_counts(self):
        op = discretize_generator(ZERO, Interval(0.0, 1.0), h=1.0, n=128)
        assert subspace_dimension_below(op, 0.5) == 0  # lambda_1 = pi^2/2 = 4.93
        assert subspace_dimension_below(op, 5.5) == 1

    def test_dense_vs_shift_invert(self):
        from metastab import spectral

        op = discretize_generator(QUARTIC, Interval(-1.3, 1.3), h=0.2, n=1024)
        dense = lowest_spectrum(op, k=3)
        saved = spectral.DENSE_LIMIT
        spectral.DENSE_LIMIT = 1
        try:
            iterative = lowest_spectrum(op, k=3)
        finally:
            spectral.DENSE_LIMIT = saved
        assert np.allclose(dense.eigenvalues, iterative.eigenvalues, rtol=1e-9)

    def test_ground_state_positive(self, quartic_sol):
        assert quartic_sol.ground_vector.min() > 0

    def test_residuals_small(self, quartic_sol):
        op = quartic_sol.operator
        assert np.all(quartic_sol.residuals <= 1e-10 * op.norm_estimate())

    def test_richardson_second_order(self):
        lams = []
        for n in (256, 512, 1024):
            op = discretize_generator(QUARTIC, Interval(-1.3, 1.3), h=0.2, n=n)
            lams.append(lowest_spectrum(op, k=1).eigenvalues[0])
        d1 = abs(lams[1] - lams[0])
        d2 = abs(lams[2] - lams[1])
        assert d2 <= d1 / 3.0  # ~1/4 for a second-order scheme

    def test_symmetric_eigenvector_structure(self):
        op = discretize_generator(QUARTIC, Interval(-1.3, 1.3), h=0.3, n=512)
        sol = lowest_spectrum(op, k=2)
        v1, v2 = sol.vectors[:, 0], sol.vectors[:, 1]
        assert np.allclose(v1, v1[::-1], atol=1e-9 * np.abs(v1).max())
        assert np.allclose(v2, -v2[::-1], atol=1e-9 * np.abs(v2).max())


class TestQsd:
    def test_normalized_and_supported(self, quartic_sol):
        m = qsd_measure(quartic_sol)
        assert m.total() == pytest.approx(1.0, abs=1e-12)
        assert np.all(m.weights >= 0)

    def test_symmetric_measure(self, quartic_sol):
        m = qsd_measure(quartic_sol)
        assert np.allclose(m.weights, m.weights[::-1], atol=1e-9 * m.weights.max())

    def test_mass_concentrates_in_wells(self):
        rep = analyze_landscape(QUARTIC, Interval(-1.3, 1.3))
        op = discretize_generator(QUARTIC, Interval(-1.3, 1.3), h=0.05, n=2048)
        sol = lowest_spectrum(op, k=1)
        m = qsd_measure(sol)
        labels = well_masks(rep.wells, op.mesh)
        inside = region_mass(m, labels > 0)
        assert inside >= 0.995
        c1 = region_mass(m, labels == 1)
        assert c1 == pytest.approx(0.5, abs=0.02)

    def test_region_mass_edges(self, quartic_sol):
        m = qsd_measure(quartic_sol)
        full = np.ones_like(m.weights, dtype=bool)
        assert region_mass(m, full) == pytest.approx(1.0, abs=1e-12)
        assert region_mass(m, ~full) == 0.0


class TestExitFunctional:
    def test_normalization_consistent(self, quartic_sol):
        val = exit_expectation(quartic_sol, lambda p: 1.0)
        assert val == pytest.approx(1.0, abs=1e-8)

    def test_normalization_stencils_converge(self):
        errs = {}
        for n in (1024, 2048):
            op = discretize_generator(QUARTIC, Interval(-1.3, 1.3), h=0.2, n=n)
            sol = lowest_spectrum(op, k=1)
            errs[n] = abs(exit_expectation(sol, lambda p: 1.0, method="stencil5") - 1.0)
        assert errs[2048] < errs[1024]
        assert errs[1024] < 1e-3

    def test_symmetric_left_exit_half(self, quartic_sol):
        left = exit_expectation(quartic_sol, lambda p: 1.0 if p[0] < 0 else 0.0)
        assert left == pytest.approx(0.5, abs=1e-6)

    def test_flux_points_on_boundary(self, quartic_sol):
        pts, contrib = boundary_flux(quartic_sol)
        assert sorted(pts[:, 0]) == [-1.3, 1.3]
        assert contrib.sum() == pytest.approx(1.0, abs=1e-8)

    def test_2d_rectangle_normalization(self):
        pot = parse_potential("x^2+0.5*y^2+1", 2)
        op = discretize_generator(pot, Rectangle(-1, 1, -1, 1), h=0.5, n=(64, 64))
        sol = lowest_spectrum(op, k=1)
        assert exit_expectation(sol, lambda p: 1.0) == pytest.approx(1.0, abs=1e-8)

    def test_disk_smoke(self):
        pot = parse_potential("0*x+0*y", 2)
        op = discretize_generator(pot, Disk(0.0, 0.0, 1.0), h=1.0, n=128)
        sol = lowest_spectrum(op, k=1)
        # Dirichlet disk ground state: (h/2) j01^2 / R^2, staircase boundary is O(delta)
        j01 = 2.404825557695773
        assert sol.eigenvalues[0] == pytest.approx(0.5 * j01**2, rel=0.05)
        assert exit_expectation(sol, lambda p: 1.0) == pytest.approx(1.0, abs=1e-8)


class TestLaplace:
    def test_hand_value(self):
        pot = parse_potential("x^2", 1)
        op = discretize_generator(pot, Interval(-1.0, 1.0), h=0.1, n=256)
        region = np.abs(op.mesh.points[:, 0]) < 0.5
        val = laplace_reference(pot, op.mesh, region, 0.1)
        assert val == pytest.approx(math.sqrt(0.1 * math.pi) / math.sqrt(2.0), rel=1e-12)

    def test_against_quadrature(self):
        h = 0.05
        op = discretize_generator(QUARTIC, Interval(-1.3, 1.3), h=h, n=2048)
        mesh = op.mesh
        region = mesh.points[:, 0] < 0.0
        ref = laplace_reference(QUARTIC, mesh, region, h)
        fv = QUARTIC.value_at(mesh.points[:, 0])
        quad = float(np.exp(-2 * fv[region] / h).sum()) * mesh.cell_volume
        assert abs(quad - ref) / ref <= 3 * h

    def test_region_without_minimum(self):
        op = discretize_generator(QUARTIC, Interval(-1.3, 1.3), h=0.2, n=256)
        region = (op.mesh.points[:, 0] > 0.1) & (op.mesh.points[:, 0] < 0.6)  # slope only
        with pytest.raises(SpectralError):
            laplace_reference(QUARTIC, op.mesh, region, 0.2)

    def test_two_minima_rejected(self):
        op = discretize_generator(QUARTIC, Interval(-1.3, 1.3), h=0.2, n=256)
        region = np.ones(op.mesh.n_interior, dtype=bool)
        with pytest.raises(SpectralError, match="exactly one"):
            laplace_reference(QUARTIC, op.mesh, region, 0.2)
