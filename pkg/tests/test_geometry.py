import math

import numpy as np
import pytest

from billiard_otoc import presets
from billiard_otoc.geometry import (
    EPS_GEO,
    ArcSeg,
    BilliardDomain,
    GeometryError,
    LineSeg,
    PolygonSpec,
    erode,
    normalize_to_unit_area,
    polygon_to_domain,
    round_reflex_corners,
    symmetry_quadrant,
)

UNIT_SQUARE = PolygonSpec(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float))


def disk_domain(radius=1.0, center=(0.0, 0.0)):
    c = np.asarray(center, float)
    return BilliardDomain(tuple(
        ArcSeg(c, radius, i * math.pi / 2, math.pi / 2) for i in range(4)))


class TestPolygonSpec:
    def test_rejects_few_vertices(self):
        with pytest.raises(GeometryError):
            PolygonSpec(np.array([[0, 0], [1, 0]], float))

    def test_rejects_repeated_vertex(self):
        with pytest.raises(GeometryError):
            PolygonSpec(np.array([[0, 0], [0, 0], [1, 0], [1, 1]], float))

    def test_rejects_clockwise(self):
        with pytest.raises(GeometryError):
            PolygonSpec(np.array([[0, 0], [0, 1], [1, 1], [1, 0]], float))

    def test_rejects_self_intersection(self):
        with pytest.raises(GeometryError):
            PolygonSpec(np.array([[0, 0], [1, 1], [1, 0], [0, 1]], float))

    def test_reflex_detection(self):
        lsh = presets.polygon_preset("lshape")
        assert lsh.reflex_vertices() == [3]


class TestPolygonToDomain:
    def test_unit_square(self):
        dom = polygon_to_domain(UNIT_SQUARE)
        assert dom.area == pytest.approx(1.0, abs=1e-15)
        assert dom.perimeter == pytest.approx(4.0, abs=1e-15)

    def test_butterfly_preset_unit_area(self):
        dom = polygon_to_domain(presets.polygon_preset("butterfly"))
        assert dom.area == pytest.approx(1.0, abs=1e-12)


class TestAreaPerimeter:
    def test_disk_from_four_arcs(self):
        dom = disk_domain()
        assert dom.area == pytest.approx(math.pi, abs=1e-12)
        assert dom.perimeter == pytest.approx(2 * math.pi, abs=1e-12)

    def test_eroded_square(self):
        dom = erode(UNIT_SQUARE, 0.1)
        assert dom.area == pytest.approx(0.64, abs=1e-12)
        assert dom.perimeter == pytest.approx(3.2, abs=1e-12)


class TestErode:
    def test_zero_radius_identity(self):
        dom = erode(UNIT_SQUARE, 0.0)
        assert dom.area == pytest.approx(1.0)
        assert dom.perimeter == pytest.approx(4.0)

    def test_convex_offset_is_similar_polygon(self):
        dom = erode(UNIT_SQUARE, 0.1)
        assert all(isinstance(s, LineSeg) for s in dom.segments)
        pts = np.array([s.start for s in dom.segments])
        assert np.allclose(sorted(pts[:, 0]), [0.1, 0.1, 0.9, 0.9])

    def test_lshape_reflex_arc(self):
        dom = erode(presets.polygon_preset("lshape"), 0.05)
        arcs = [s for s in dom.segments if isinstance(s, ArcSeg)]
        assert len(arcs) == 1
        assert np.allclose(arcs[0].center, [1.0, 1.0])
        assert arcs[0].radius == pytest.approx(0.05)

    def test_reflex_vertex_distance_equals_radius(self):
        for r in (0.02, 0.05, 0.2):
            dom = erode(presets.polygon_preset("lshape"), r)
            assert dom.distance_to_boundary(np.array([1.0, 1.0])) == \
                pytest.approx(r, rel=1e-9)

    def test_area_nonincreasing_in_radius(self):
        spec = presets.polygon_preset("butterfly")
        radii = [0.0, 0.02, 0.05, 0.08]
        areas = [erode(spec, r).area for r in radii]
        assert all(a1 > a2 for a1, a2 in zip(areas, areas[1:]))

    def test_too_large_radius_errors(self):
        with pytest.raises(GeometryError):
            erode(UNIT_SQUARE, 0.6)


class TestRoundReflexCorners:
    def test_no_reflex_is_identity(self):
        dom = round_reflex_corners(UNIT_SQUARE, 0.1)
        assert dom.area == pytest.approx(1.0)
        assert all(isinstance(s, LineSeg) for s in dom.segments)

    def test_matches_erosion_near_reflex_vertex(self):
        # near the reflex corner both constructions follow the same circle
        spec = presets.polygon_preset("lshape")
        r = 0.05
        er, rd = erode(spec, r), round_reflex_corners(spec, r)
        v = np.array([1.0, 1.0])
        ths = np.linspace(math.pi, 1.5 * math.pi, 41)
        pts = v + r * np.c_[np.cos(ths), np.sin(ths)]
        assert np.max(er.distance_to_boundary(pts)) < 1e-12
        assert np.max(rd.distance_to_boundary(pts)) < 1e-12

    def test_edges_unchanged_away_from_corner(self):
        spec = presets.polygon_preset("lshape")
        rd = round_reflex_corners(spec, 0.05)
        probe = np.array([[0.5, 0.0], [2.0, 0.5], [0.0, 1.3]])
        assert np.max(rd.distance_to_boundary(probe)) < 1e-12

    def test_area_exceeds_erosion(self):
        spec = presets.polygon_preset("butterfly")
        r = 0.05
        assert round_reflex_corners(spec, r).area > erode(spec, r).area

    def test_overlapping_roundings_error(self):
        with pytest.raises(GeometryError):
            round_reflex_corners(presets.polygon_preset("lshape"), 1.05)

    def test_butterfly_default_rounding(self):
        dom = round_reflex_corners(presets.polygon_preset("butterfly"),
                                   presets.BUTTERFLY_ROUNDING)
        arcs = [s for s in dom.segments if isinstance(s, ArcSeg)]
        assert len(arcs) == 2
        assert dom.area < 1.0


class TestNormalize:
    def test_two_by_two_square(self):
        spec = PolygonSpec(np.array([[0, 0], [2, 0], [2, 2], [0, 2]], float))
        dom, scale = normalize_to_unit_area(polygon_to_domain(spec))
        assert scale == pytest.approx(0.5)
        assert dom.area == pytest.approx(1.0, abs=1e-12)

    def test_identity_for_unit_domain(self):
        dom, scale = normalize_to_unit_area(polygon_to_domain(UNIT_SQUARE))
        assert scale == 1.0

    def test_disk(self):
        dom, scale = normalize_to_unit_area(disk_domain())
        assert scale == pytest.approx(1 / math.sqrt(math.pi), rel=1e-12)
        assert dom.area == pytest.approx(1.0, abs=1e-12)

    def test_perimeter_scales_with_length(self):
        raw = polygon_to_domain(presets.polygon_preset("lshape"))
        dom, scale = normalize_to_unit_area(raw)
        assert dom.perimeter == pytest.approx(raw.perimeter * scale, rel=1e-12)


class TestContainment:
    def test_square_inside_outside(self):
        dom = polygon_to_domain(UNIT_SQUARE)
        assert dom.contains((0.5, 0.5))
        assert not dom.contains((1.5, 0.5))
        assert dom.distance_to_boundary((0.5, 0.5)) == pytest.approx(0.5)

    def test_boundary_tolerance_band(self):
        dom = polygon_to_domain(UNIT_SQUARE)
        assert dom.contains((1.0, 0.5))
        assert dom.contains((1.0 + 0.5 * EPS_GEO, 0.5))
        assert not dom.contains((1.0 + 1e-6, 0.5))

    def test_near_reflex_corner(self):
        dom = polygon_to_domain(presets.polygon_preset("lshape"))
        assert dom.contains((0.95, 0.95))
        assert not dom.contains((1.05, 1.05))

    def test_containment_implies_nonnegative_depth(self):
        dom = polygon_to_domain(presets.polygon_preset("butterfly"))
        rng = np.random.default_rng(7)
        pts = rng.uniform(-0.6, 0.6, size=(500, 2))
        sd = dom.signed_distance(pts)
        for p, s in zip(pts, sd):
            if dom.contains(p):
                assert s <= EPS_GEO

    def test_arc_domain_containment(self):
        dom = disk_domain()
        assert dom.contains((0.3, -0.4))
        assert not dom.contains((0.8, 0.8))
        assert dom.distance_to_boundary((0.0, 0.0)) == pytest.approx(1.0)


class TestSymmetryQuadrant:
    def test_square_quadrant(self):
        dom = polygon_to_domain(presets.polygon_preset("square"))
        quad, labels = symmetry_quadrant(dom)
        assert quad.area == pytest.approx(0.25, abs=1e-12)
        assert labels.count("cut_x") == 1 and labels.count("cut_y") == 1

    def test_butterfly_quadrant(self):
        dom = polygon_to_domain(presets.polygon_preset("butterfly"))
        quad, labels = symmetry_quadrant(dom)
        assert quad.area == pytest.approx(dom.area / 4, abs=1e-10)
        assert "cut_x" in labels and "cut_y" in labels

    def test_rounded_butterfly_quadrant_keeps_arc(self):
        dom = round_reflex_corners(presets.polygon_preset("butterfly"),
                                   presets.BUTTERFLY_ROUNDING)
        quad, labels = symmetry_quadrant(dom)
        assert any(isinstance(s, ArcSeg) for s in quad.segments)
        assert quad.area == pytest.approx(dom.area / 4, abs=1e-10)

    def test_asymmetric_domain_errors(self):
        dom = polygon_to_domain(presets.polygon_preset("triangle"))
        with pytest.raises(GeometryError):
            symmetry_quadrant(dom)


class TestSerialization:
    def test_roundtrip(self):
        dom = round_reflex_corners(presets.polygon_preset("butterfly"),
                                   presets.BUTTERFLY_ROUNDING)
        back = BilliardDomain.from_text(dom.to_text())
        assert back.area == pytest.approx(dom.area, abs=1e-15)
        assert back.perimeter == pytest.approx(dom.perimeter, abs=1e-15)
        assert len(back.segments) == len(dom.segments)

    def test_line_record_format(self):
        dom = polygon_to_domain(UNIT_SQUARE)
        first = dom.to_text().splitlines()[0].split()
        assert first[0] == "L" and len(first) == 5


class TestPresets:
    @pytest.mark.parametrize("name", ["butterfly", "quadrilateral",
                                      "triangle", "square"])
    def test_unit_area(self, name):
        dom = polygon_to_domain(presets.polygon_preset(name))
        assert dom.area == pytest.approx(1.0, abs=1e-12)

    def test_unknown_preset(self):
        with pytest.raises(GeometryError):
            presets.polygon_preset("hexaflexagon")

    def test_launch_points_inside_with_margin(self):
        # packets down to hbar_eff = 2^-6 (2^-5 for the butterfly) must fit;
        # the butterfly launch is sized for sigma = 0.5 packets, the rest
        # for sigma = 1/sqrt(2)
        sigma = 1 / math.sqrt(2)
        margins = {"butterfly": 3 * 0.5 * math.sqrt(2**-5),
                   "triangle": 3 * sigma * math.sqrt(2**-5),
                   "quadrilateral": 3 * sigma * math.sqrt(2**-6),
                   "square": 3 * sigma * math.sqrt(2**-5)}
        for name, margin in margins.items():
            dom = polygon_to_domain(presets.polygon_preset(name))
            r0, p0 = presets.default_launch(name)
            assert dom.contains(r0)
            assert dom.distance_to_boundary(r0) >= margin
            assert np.hypot(*p0) == pytest.approx(1.0)
