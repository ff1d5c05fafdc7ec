import numpy as np
import pytest
from scipy.optimize import brentq

from metastab.expr import parse_potential
from metastab.landscape import (
    Disk,
    Interval,
    LandscapeError,
    Rectangle,
    analyze_landscape,
    check_hwell,
    decompose_wells,
    locate_boundary_saddles,
    locate_critical_points,
    parse_domain,
)

QUARTIC = parse_potential("(x^2-1)^2", dim=1)


@pytest.fixture(scope="module")
def quartic_13():
    return analyze_landscape(QUARTIC, Interval(-1.3, 1.3))


class TestCriticalPoints:
    def test_quartic(self):
        pts = locate_critical_points(QUARTIC, Interval(-1.3, 1.3))
        locs = sorted(p.location[0] for p in pts)
        assert np.allclose(locs, [-1.0, 0.0, 1.0], atol=1e-9)
        kinds = {round(p.location[0]): p.kind for p in pts}
        assert kinds == {-1: "minimum", 0: "maximum", 1: "minimum"}
        for p in pts:
            if p.kind == "minimum":
                assert p.value == pytest.approx(0.0, abs=1e-12)

    def test_bowl_2d(self):
        pot = parse_potential("x^2+y^2", dim=2)
        pts = locate_critical_points(pot, Rectangle(-1, 1, -1, 1), grid_density=16)
        assert len(pts) == 1
        assert pts[0].kind == "minimum"
        assert np.allclose(pts[0].location, 0.0, atol=1e-10)

    def test_separable_saddle_2d(self):
        pot = parse_potential("(x^2-1)^2+2.5*y^2", dim=2)
        pts = locate_critical_points(pot, Rectangle(-1.3, 1.3, -1, 1), grid_density=24)
        by_kind = {}
        for p in pts:
            by_kind.setdefault(p.kind, []).append(p)
        assert len(by_kind["minimum"]) == 2
        assert len(by_kind["saddle_index_1"]) == 1
        sad = by_kind["saddle_index_1"][0]
        assert np.allclose(sad.location, [0.0, 0.0], atol=1e-9)
        assert sad.negative_eigenvalue == pytest.approx(-4.0, abs=1e-9)

    def test_gradient_norm_invariant(self):
        for p in locate_critical_points(QUARTIC, Interval(-1.3, 1.3)):
            assert p.grad_norm <= 1e-9

    def test_kind_matches_signature(self):
        for p in locate_critical_points(QUARTIC, Interval(-1.3, 1.3)):
            eigs = np.linalg.eigvalsh(p.hessian)
            assert p.index == int(np.sum(eigs < 0))
            assert (p.negative_eigenvalue is not None) == (p.index == 1)


class TestBoundarySaddles:
    def test_quartic_endpoints(self):
        sads = locate_boundary_saddles(QUARTIC, Interval(-1.3, 1.3))
        assert len(sads) == 2
        for s in sads:
            assert s.normal_derivative == pytest.approx(3.588, abs=1e-12)
            assert s.tangential_hessian_det == 1.0

    def test_asymmetric_interval(self):
        sads = locate_boundary_saddles(QUARTIC, Interval(-1.3, 1.5))
        dn = {round(s.location[0], 2): s.normal_derivative for s in sads}
        assert dn[-1.3] == pytest.approx(3.588, abs=1e-12)
        assert dn[1.5] == pytest.approx(7.5, abs=1e-12)  # 4*1.5*1.25

    def test_linear_on_disk_has_no_generalized_saddle(self):
        # the boundary minimum of f|_circle sits where f decreases outward
        pot = parse_potential("x", dim=2)
        assert locate_boundary_saddles(pot, Disk(0.0, 0.0, 1.0)) == []

    def test_disk_saddle(self):
        # f = x + y^2: f|_circle has a local minimum at (1,0) where dn f = 1
        pot = parse_potential("x + y^2", dim=2)
        sads = locate_boundary_saddles(pot, Disk(0.0, 0.0, 1.0))
        assert len(sads) == 1
        assert np.allclose(sads[0].location, [1.0, 0.0], atol=1e-8)
        assert sads[0].normal_derivative == pytest.approx(1.0, abs=1e-8)
        assert sads[0].tangential_hessian_det == pytest.approx(1.0, abs=1e-6)

    def test_vanishing_gradient_rejected(self):
        pot = parse_potential("x^2", dim=1)
        with pytest.raises(LandscapeError, match="vanishes"):
            # f'(0) = 0 on the boundary
            locate_boundary_saddles(pot, Interval(0.0, 1.0))


class TestWells:
    def test_quartic_components(self):
        dec = decompose_wells(QUARTIC, Interval(-1.3, 1.3))
        assert dec.threshold == pytest.approx(0.4761, abs=1e-12)
        c = dec.counts
        assert (c["n1"], c["n2"], c["m3"]) == (1, 1, 0)
        # oracle: solve (x^2-1)^2 = 0.4761 -> x^2 = 1 ± 0.69
        inner = brentq(lambda x: QUARTIC.value([x]) - 0.4761, -1.0, 0.0)
        assert inner == pytest.approx(-np.sqrt(0.31), abs=1e-10)
        left = dec.grid_points[dec.labels == 1][:, 0]
        assert left.min() == pytest.approx(-1.3, abs=3e-3)
        assert left.max() == pytest.approx(inner, abs=3e-3)

    def test_touching_saddle(self):
        dec = decompose_wells(QUARTIC, Interval(-np.sqrt(2), np.sqrt(2)))
        assert dec.threshold == pytest.approx(1.0, abs=1e-12)
        assert dec.m3 == 1
        z = dec.connecting[0]
        assert z.location[0] == pytest.approx(0.0, abs=1e-10)
        assert z.negative_eigenvalue == pytest.approx(-4.0, abs=1e-9)
        left = dec.grid_points[dec.labels == 1][:, 0]
        right = dec.grid_points[dec.labels == 2][:, 0]
        assert left.max() < 0 < right.min()

    def test_clipped_component(self):
        # threshold f(-1.05) ~ 0.0105: right component interior, well 2 contactless
        dec = decompose_wells(QUARTIC, Interval(-1.05, 1.3))
        assert dec.threshold == pytest.approx(0.01050625, abs=1e-12)
        assert dec.counts["n2"] == 0
        assert dec.well_touches_boundary == (True, False)
        right = dec.grid_points[dec.labels == 2][:, 0]
        assert right.min() > 0.9 and right.max() < 1.2

    def test_masks_disjoint_one_minimum_each(self):
        dec = decompose_wells(QUARTIC, Interval(-1.3, 1.3))
        for i, m in enumerate(dec.minima, start=1):
            lab = dec.classify_points(m.location[None, :])
            assert lab[0] == i

    def test_counts_identity(self):
        # n1 + n2 + n3 equals the number of generalized saddle points found
        dec = decompose_wells(QUARTIC, Interval(-np.sqrt(2), np.sqrt(2)))
        c = dec.counts
        total = len(dec.connecting) + len(dec.other_saddles) + c["n1"] + c["n2"]
        assert c["n1"] + c["n2"] + c["n3"] == total


class TestHWell:
    def test_quartic_pass(self, quartic_13):
        rep = quartic_13
        assert rep.passed
        assert rep.H == pytest.approx(0.4761, abs=1e-12)

    def test_tilt_breaks_degeneracy(self):
        pot = parse_potential("(x^2-1)^2+0.1*x", dim=1)
        rep = analyze_landscape(pot, Interval(-1.3, 1.3))
        assert not rep.passed
        assert "degenerate" in rep.reason or "differ" in rep.reason

    def test_single_well_fails(self):
        pot = parse_potential("x^2+1", dim=1)
        rep = analyze_landscape(pot, Interval(-1.0, 1.0))
        assert not rep.passed
        assert "two interior minima" in rep.reason

    def test_interior_component_fails(self):
        rep = analyze_landscape(QUARTIC, Interval(-1.05, 1.3))
        assert not rep.passed
        assert "touch" in rep.reason

    def test_h_mesh_independent(self):
        # H depends only on critical values: refining the grid leaves it fixed
        r1 = decompose_wells(QUARTIC, Interval(-1.3, 1.3), resolution=1024)
        r2 = decompose_wells(QUARTIC, Interval(-1.3, 1.3), resolution=2048)
        assert abs(r1.threshold - r2.threshold) < 1e-9

    def test_tilted_quartic_bundled_domain(self):
        pot = parse_potential("(x^2-1)^2*(1+0.3*x)", dim=1)
        rep = analyze_landscape(pot, Interval(-1.3, 1.2089878912729721))
        assert rep.passed
        assert rep.H == pytest.approx(0.290421, abs=1e-9)
        c = rep.wells.counts
        assert (c["n1"], c["n2"], c["m3"]) == (1, 1, 0)

    def test_twocontact_2d(self):
        pot = parse_potential(
            "0.125*(x^2-1)^2 + 0.12*exp(-(x^2)/0.18) + (145/144)*y^2 - (25/24)*y^3"
            " - (125/192)*y^4 + (625/576)*y^5",
            dim=2,
        )
        rep = analyze_landscape(pot, Rectangle(-1.6, 1.6, -0.4, 0.8), grid_density=32, resolution=256)
        assert rep.passed
        c = rep.wells.counts
        assert (c["n1"], c["n2"], c["m3"]) == (2, 2, 0)
        # wall level 0.2 plus the bump tail at the contact abscissa; the tail
        # cancels against the well depth so H is exactly 0.2
        assert rep.H == pytest.approx(0.2, abs=1e-10)
        for i in (1, 2):
            dns = sorted(s.normal_derivative for s in rep.wells.contacts[i])
            assert dns[0] == pytest.approx(0.5, abs=1e-9)
            assert dns[1] == pytest.approx(1.0, abs=1e-9)
            dets = [s.tangential_hessian_det for s in rep.wells.contacts[i]]
            assert dets[0] == pytest.approx(dets[1], rel=1e-9)


def test_parse_domain_roundtrip():
    for d in (Interval(-1, 2), Rectangle(0, 1, -2, 3), Disk(0.5, -0.5, 2.0)):
        assert parse_domain(d.to_dict()) == d
