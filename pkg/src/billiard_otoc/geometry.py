"""Billiard domain geometry: polygons, disk-eroded billiards, corner rounding.

A domain is a closed, counterclockwise loop of line segments and circular
arcs.  The interior lies to the left of the travel direction, so the outward
normal is to the right.  Lengths are measured in units of sqrt(area); all
shipped presets are normalized to unit area.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

#: closure / membership tolerance, in units of sqrt(A)
EPS_GEO = 1e-9

TWO_PI = 2.0 * math.pi


class GeometryError(ValueError):
    """Raised for invalid or degenerate geometric input."""


def _cross(a, b):
    return a[0] * b[1] - a[1] * b[0]


def _unit(v):
    n = math.hypot(v[0], v[1])
    if n == 0.0:
        raise GeometryError("zero-length vector has no direction")
    return np.array([v[0] / n, v[1] / n])


def _wrap_2pi(x):
    """Wrap angle into [0, 2*pi)."""
    return x - TWO_PI * np.floor(x / TWO_PI)


# ---------------------------------------------------------------------------
# boundary segments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LineSeg:
    """Straight boundary piece from a to b."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise GeometryError("non-finite segment endpoint")
        if np.hypot(*(b - a)) <= EPS_GEO:
            raise GeometryError(f"degenerate line segment at {a}")

    @property
    def start(self):
        return self.a

    @property
    def end(self):
        return self.b

    @property
    def length(self):
        return float(np.hypot(*(self.b - self.a)))

    def point_at(self, s):
        """Point at fractional arclength s in [0, 1]."""
        return self.a + s * (self.b - self.a)

    def tangent_at(self, s):
        return _unit(self.b - self.a)

    def outward_normal_at(self, s):
        t = self.tangent_at(s)
        return np.array([t[1], -t[0]])

    def closest(self, pts):
        """Distance, fractional parameter of the closest point.

        pts has shape (n, 2); returns (dist (n,), s (n,)).
        """
        pts = np.atleast_2d(pts)
        d = self.b - self.a
        L2 = float(d @ d)
        s = np.clip(((pts - self.a) @ d) / L2, 0.0, 1.0)
        q = self.a + s[:, None] * d
        dist = np.hypot(*(pts - q).T)
        return dist, s

    def scaled(self, factor):
        return LineSeg(self.a * factor, self.b * factor)

    def area_contribution(self):
        """Contribution to (1/2) * integral of (x dy - y dx)."""
        return 0.5 * _cross(self.a, self.b)


@dataclass(frozen=True)
class ArcSeg:
    """Circular-arc boundary piece.

    Parametrized by angle theta0 + s * sweep for s in [0, 1]; a positive
    sweep traverses counterclockwise around the center.  Whether the arc
    bulges into or out of the domain follows from the sweep sign given the
    counterclockwise boundary convention.
    """

    center: np.ndarray
    radius: float
    theta0: float
    sweep: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        object.__setattr__(self, "center", c)
        if not np.all(np.isfinite(c)) or not math.isfinite(self.radius):
            raise GeometryError("non-finite arc parameters")
        if self.radius <= 0.0:
            raise GeometryError("arc radius must be positive")
        if self.sweep == 0.0 or abs(self.sweep) > TWO_PI + 1e-12:
            raise GeometryError("arc sweep must be nonzero and at most 2*pi")

    @property
    def start(self):
        return self.point_at(0.0)

    @property
    def end(self):
        return self.point_at(1.0)

    @property
    def length(self):
        return self.radius * abs(self.sweep)

    def angle_at(self, s):
        return self.theta0 + s * self.sweep

    def point_at(self, s):
        th = self.angle_at(s)
        return self.center + self.radius * np.array([math.cos(th), math.sin(th)])

    def tangent_at(self, s):
        th = self.angle_at(s)
        sgn = 1.0 if self.sweep > 0 else -1.0
        return sgn * np.array([-math.sin(th), math.cos(th)])

    def outward_normal_at(self, s):
        t = self.tangent_at(s)
        return np.array([t[1], -t[0]])

    def _angle_param(self, phi):
        """Fractional parameter for absolute angle(s) phi, or nan if outside."""
        phi = np.asarray(phi, dtype=float)
        if self.sweep > 0:
            u = _wrap_2pi(phi - self.theta0)
        else:
            u = _wrap_2pi(self.theta0 - phi)
        s = u / abs(self.sweep)
        return np.where(s <= 1.0 + 1e-12 / max(self.radius, 1.0), np.minimum(s, 1.0), np.nan)

    def closest(self, pts):
        pts = np.atleast_2d(pts)
        rel = pts - self.center
        rho = np.hypot(rel[:, 0], rel[:, 1])
        phi = np.arctan2(rel[:, 1], rel[:, 0])
        s = self._angle_param(phi)
        on_arc = ~np.isnan(s) & (rho > 0)
        dist = np.empty(len(pts))
        sout = np.empty(len(pts))
        dist[on_arc] = np.abs(rho[on_arc] - self.radius)
        sout[on_arc] = s[on_arc]
        if np.any(~on_arc):
            bad = ~on_arc
            d0 = np.hypot(*(pts[bad] - self.start).T)
            d1 = np.hypot(*(pts[bad] - self.end).T)
            dist[bad] = np.where(d0 <= d1, d0, d1)
            sout[bad] = np.where(d0 <= d1, 0.0, 1.0)
        return dist, sout

    def scaled(self, factor):
        return ArcSeg(self.center * factor, self.radius * factor,
                      self.theta0, self.sweep)

    def area_contribution(self):
        # integral of (x dy - y dx)/2 along the arc, exact
        th0 = self.theta0
        th1 = self.theta0 + self.sweep
        c = self.center
        r = self.radius
        term = r * (c[0] * (math.sin(th1) - math.sin(th0))
                    - c[1] * (math.cos(th1) - math.cos(th0)))
        return 0.5 * (r * r * self.sweep + term)


# ---------------------------------------------------------------------------
# polygon spec
# ---------------------------------------------------------------------------

def _shoelace(vertices):
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_intersect(p1, p2, p3, p4):
    """Proper or touching intersection of open segments p1p2, p3p4."""
    d1 = _cross(p4 - p3, p1 - p3)
    d2 = _cross(p4 - p3, p2 - p3)
    d3 = _cross(p2 - p1, p3 - p1)
    d4 = _cross(p2 - p1, p4 - p1)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
        return True
    return False


@dataclass(frozen=True)
class PolygonSpec:
    """Simple, positively oriented polygon given by its vertex loop."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise GeometryError("polygon needs at least 3 points in the plane")
        if not np.all(np.isfinite(v)):
            raise GeometryError("non-finite polygon vertex")
        object.__setattr__(self, "vertices", v)
        d = v - np.roll(v, 1, axis=0)
        if np.any(np.hypot(d[:, 0], d[:, 1]) <= EPS_GEO):
            raise GeometryError("repeated consecutive vertices")
        if _shoelace(v) <= 0:
            raise GeometryError("polygon must be positively oriented "
                                "(counterclockwise) and non-degenerate")
        n = len(v)
        for i in range(n):
            a, b = v[i], v[(i + 1) % n]
            for j in range(i + 1, n):
                if j == i or (j + 1) % n == i or (i + 1) % n == j:
                    continue
                c, d2 = v[j], v[(j + 1) % n]
                if _segments_intersect(a, b, c, d2):
                    raise GeometryError(
                        f"self-intersecting polygon: edges {i} and {j} cross")

    @property
    def n(self):
        return len(self.vertices)

    def area(self):
        return _shoelace(self.vertices)

    def edge(self, i):
        v = self.vertices
        return v[i], v[(i + 1) % len(v)]

    def turn_angle(self, i):
        """Signed exterior turn at vertex i (negative at a reflex corner)."""
        v = self.vertices
        n = len(v)
        e_in = _unit(v[i] - v[(i - 1) % n])
        e_out = _unit(v[(i + 1) % n] - v[i])
        return math.atan2(_cross(e_in, e_out), float(e_in @ e_out))

    def reflex_vertices(self):
        return [i for i in range(self.n) if self.turn_angle(i) < -EPS_GEO]

    def scaled(self, factor):
        return PolygonSpec(self.vertices * factor)


# ---------------------------------------------------------------------------
# billiard domain
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BilliardDomain:
    """Closed loop of line segments and circular arcs bounding a billiard."""

    segments: tuple
    area: float = field(init=False)
    perimeter: float = field(init=False)

    def __post_init__(self):
        segs = tuple(self.segments)
        if len(segs) < 1:
            raise GeometryError("empty boundary")
        object.__setattr__(self, "segments", segs)
        for i, seg in enumerate(segs):
            nxt = segs[(i + 1) % len(segs)]
            gap = np.hypot(*(seg.end - nxt.start))
            if gap > EPS_GEO * max(1.0, self.diameter_hint()):
                raise GeometryError(
                    f"boundary loop not closed between segments {i} and "
                    f"{(i + 1) % len(segs)} (gap {gap:.3e})")
        a = sum(s.area_contribution() for s in segs)
        if a <= 0:
            raise GeometryError("boundary must enclose positive area "
                                "counterclockwise")
        object.__setattr__(self, "area", float(a))
        object.__setattr__(self, "perimeter", float(sum(s.length for s in segs)))
        self._check_simple()

    def diameter_hint(self):
        pts = np.array([s.start for s in self.segments])
        return float(np.max(np.ptp(pts, axis=0))) if len(pts) else 1.0

    def _check_simple(self):
        pts = self.boundary_polyline(max(64, 16 * len(self.segments)))
        try:
            from shapely.geometry import LinearRing
        except ImportError:  # pragma: no cover
            return
        if not LinearRing(pts).is_valid:
            raise GeometryError("self-intersecting boundary")

    # -- sampling ----------------------------------------------------------

    def boundary_polyline(self, n_total):
        """Points along the boundary, at least one per segment."""
        per_seg = max(2, int(math.ceil(n_total / len(self.segments))))
        pts = []
        for seg in self.segments:
            ss = np.linspace(0.0, 1.0, per_seg, endpoint=False)
            pts.extend(seg.point_at(s) for s in ss)
        return np.array(pts)

    def junctions(self):
        """Start point of every segment (the segment meeting points)."""
        return np.array([s.start for s in self.segments])

    def bbox(self):
        pts = self.boundary_polyline(32 * len(self.segments))
        return pts.min(axis=0), pts.max(axis=0)

    # -- metric queries ----------------------------------------------------

    def distance_to_boundary(self, pts):
        """Unsigned distance from each point to the boundary.

        Accepts a single point or an (n, 2) array.
        """
        single = np.asarray(pts).ndim == 1
        d, _, _ = self._closest(np.atleast_2d(pts))
        return float(d[0]) if single else d

    def _closest(self, pts):
        """Per point: (distance, index of closest segment, its parameter)."""
        dists = np.empty((len(self.segments), len(pts)))
        params = np.empty_like(dists)
        for k, seg in enumerate(self.segments):
            dists[k], params[k] = seg.closest(pts)
        idx = np.argmin(dists, axis=0)
        ar = np.arange(len(pts))
        return dists[idx, ar], idx, params[idx, ar]

    def signed_distance(self, pts):
        """Signed distance to the boundary, negative inside.

        Accepts a single point or an (n, 2) array.
        """
        arr = np.atleast_2d(np.asarray(pts, dtype=float))
        single = np.asarray(pts).ndim == 1
        dist, idx, s = self._closest(arr)
        inside = np.empty(len(arr), dtype=bool)
        # parameter strictly interior to a segment: side test via the normal
        end_tol = 1e-9
        for k in range(len(arr)):
            seg = self.segments[idx[k]]
            sk = s[k]
            if sk < end_tol or sk > 1.0 - end_tol:
                inside[k] = self._inside_near_junction(arr[k], idx[k], sk)
            else:
                n = seg.outward_normal_at(sk)
                q = seg.point_at(sk)
                inside[k] = float((arr[k] - q) @ n) <= 0.0
        sd = np.where(inside, -dist, dist)
        return float(sd[0]) if single else sd

    def _inside_near_junction(self, p, seg_idx, s):
        """Wedge test when the closest boundary point is a segment junction."""
        nseg = len(self.segments)
        if s <= 0.5:
            i_in, i_out = (seg_idx - 1) % nseg, seg_idx
            v = self.segments[seg_idx].start
        else:
            i_in, i_out = seg_idx, (seg_idx + 1) % nseg
            v = self.segments[seg_idx].end
        t_in = self.segments[i_in].tangent_at(1.0)
        t_out = self.segments[i_out].tangent_at(0.0)
        d = p - v
        if np.hypot(*d) <= EPS_GEO:
            return True
        ci = _cross(t_in, d)
        co = _cross(t_out, d)
        if _cross(t_in, t_out) >= 0.0:  # convex junction
            return ci > 0.0 and co > 0.0
        return ci > 0.0 or co > 0.0

    def contains(self, p):
        """Membership with an EPS_GEO tolerance band around the boundary."""
        return self.signed_distance(np.asarray(p, dtype=float)) <= EPS_GEO

    # -- transforms --------------------------------------------------------

    def scaled(self, factor):
        if factor <= 0:
            raise GeometryError("scale factor must be positive")
        return BilliardDomain(tuple(s.scaled(factor) for s in self.segments))

    def is_symmetric_xy(self, tol=1e-8):
        """True if the boundary maps onto itself under x->-x and y->-y."""
        pts = self.boundary_polyline(64 * len(self.segments))
        for flip in (np.array([-1.0, 1.0]), np.array([1.0, -1.0])):
            mirrored = pts * flip
            if np.max(self.distance_to_boundary(mirrored)) > tol:
                return False
        return True

    # -- serialization -----------------------------------------------------

    def to_text(self):
        """One record per segment: 'L x1 y1 x2 y2' or 'A cx cy r th1 th2 flag'."""
        lines = []
        for seg in self.segments:
            if isinstance(seg, LineSeg):
                lines.append("L %.17g %.17g %.17g %.17g"
                             % (seg.a[0], seg.a[1], seg.b[0], seg.b[1]))
            else:
                flag = 1 if seg.sweep > 0 else -1
                lines.append("A %.17g %.17g %.17g %.17g %.17g %d"
                             % (seg.center[0], seg.center[1], seg.radius,
                                seg.theta0, seg.theta0 + seg.sweep, flag))
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text):
        segs = []
        for raw in text.splitlines():
            raw = raw.strip()
            if not raw or raw.startswith("#"):
                continue
            tok = raw.split()
            if tok[0] == "L":
                x1, y1, x2, y2 = map(float, tok[1:5])
                segs.append(LineSeg(np.array([x1, y1]), np.array([x2, y2])))
            elif tok[0] == "A":
                cx, cy, r, th1, th2 = map(float, tok[1:6])
                flag = int(tok[6])
                sweep = th2 - th1
                if flag * sweep < 0:
                    sweep += flag * TWO_PI
                segs.append(ArcSeg(np.array([cx, cy]), r, th1, sweep))
            else:
                raise GeometryError(f"unknown boundary record: {raw!r}")
        return BilliardDomain(tuple(segs))


# ---------------------------------------------------------------------------
# constructions
# ---------------------------------------------------------------------------

def polygon_to_domain(spec: PolygonSpec) -> BilliardDomain:
    """Domain whose boundary is exactly the polygon's edge loop."""
    segs = [LineSeg(*spec.edge(i)) for i in range(spec.n)]
    return BilliardDomain(tuple(segs))


def _offset_line(a, b, r):
    """Edge a->b shifted inward (to the left of travel) by r."""
    t = _unit(b - a)
    n_in = np.array([-t[1], t[0]])
    return a + r * n_in, b + r * n_in, t


def _line_intersection(p1, t1, p2, t2):
    den = _cross(t1, t2)
    if abs(den) < 1e-14:
        raise GeometryError("parallel offset edges do not intersect")
    s = _cross(p2 - p1, t2) / den
    return p1 + s * t1


def erode(spec: PolygonSpec, r: float) -> BilliardDomain:
    """Inward offset by a disk of radius r.

    The result is the set of disk-center positions at distance >= r from the
    polygon boundary: edges move inward by r, convex corners become sharp
    intersections of the offset edges, and reflex corners become circular
    arcs of radius r centered at the reflex vertex.
    """
    if r < 0:
        raise GeometryError("erosion radius must be nonnegative")
    if r == 0:
        return polygon_to_domain(spec)
    v = spec.vertices
    n = spec.n
    offs = []
    for i in range(n):
        a, b = spec.edge(i)
        offs.append(_offset_line(a, b, r))

    # endpoints assigned per vertex: intersection (convex) or tangency (reflex)
    start_pts = [None] * n  # start point of offset edge i
    end_pts = [None] * n    # end point of offset edge i
    vertex_arcs = {}
    for i in range(n):
        turn = spec.turn_angle(i)
        i_prev = (i - 1) % n
        pa, pb, tp = offs[i_prev]
        qa, qb, tq = offs[i]
        if turn >= -EPS_GEO:
            try:
                pt = _line_intersection(pa, tp, qa, tq)
            except GeometryError as exc:
                raise GeometryError(
                    f"near-degenerate offset at vertex {i} ({v[i]})") from exc
            end_pts[i_prev] = pt
            start_pts[i] = pt
        else:
            end_pts[i_prev] = pb
            start_pts[i] = qa
            th_a = math.atan2(pb[1] - v[i][1], pb[0] - v[i][0])
            vertex_arcs[i] = ArcSeg(v[i].copy(), r, th_a, turn)

    segs = []
    for i in range(n):
        a_i, b_i = start_pts[i], end_pts[i]
        t_i = offs[i][2]
        if float((b_i - a_i) @ t_i) <= EPS_GEO:
            raise GeometryError(
                f"erosion radius {r} collapses the edge after vertex {i} "
                f"({v[i]}); radius too large for this polygon")
        segs.append(LineSeg(a_i, b_i))
        j = (i + 1) % n
        if j in vertex_arcs:
            segs.append(vertex_arcs[j])
    try:
        dom = BilliardDomain(tuple(segs))
    except GeometryError as exc:
        raise GeometryError(
            f"erosion radius {r} yields an invalid (empty or self-"
            f"intersecting) interior: {exc}") from exc
    return dom


def round_reflex_corners(spec: PolygonSpec, radius: float):
    """Replace each reflex corner by the circular arc of the given radius
    centered at the vertex, trimming the incident edges at arclength
    ``radius`` from the vertex.

    Convex corners and all edges outside the trimmed neighborhoods are left
    untouched, so away from the reflex corners the boundary is the original
    polygon; near each reflex corner it coincides with the erosion arc of the
    same radius.  Returns the polygon unchanged (as a domain) when there are
    no reflex corners.
    """
    if radius <= 0:
        raise GeometryError("rounding radius must be positive")
    reflex = set(spec.reflex_vertices())
    if not reflex:
        return polygon_to_domain(spec)
    v = spec.vertices
    n = spec.n
    segs = []
    for i in range(n):
        a, b = spec.edge(i)
        L = float(np.hypot(*(b - a)))
        t = (b - a) / L
        s0, s1 = 0.0, L
        if i in reflex:
            s0 = radius
        if (i + 1) % n in reflex:
            s1 = L - radius
        if s1 - s0 <= EPS_GEO:
            raise GeometryError(
                f"rounding radius {radius} makes adjacent roundings overlap "
                f"on the edge after vertex {i}")
        segs.append(LineSeg(a + s0 * t, a + s1 * t))
        j = (i + 1) % n
        if j in reflex:
            # arc spans the interior wedge: sweep = turn - pi (clockwise)
            entry = b - radius * t
            th0 = math.atan2(entry[1] - v[j][1], entry[0] - v[j][0])
            sweep = spec.turn_angle(j) - math.pi
            segs.append(ArcSeg(v[j].copy(), radius, th0, sweep))
    return BilliardDomain(tuple(segs))


def normalize_to_unit_area(domain: BilliardDomain):
    """Uniformly rescale (about the origin) to unit area.

    Returns (scaled domain, applied length scale factor).
    """
    scale = 1.0 / math.sqrt(domain.area)
    if abs(scale - 1.0) < 1e-15:
        return domain, 1.0
    return domain.scaled(scale), scale


# ---------------------------------------------------------------------------
# half-plane clipping and symmetry quadrant
# ---------------------------------------------------------------------------

def _split_params(seg, axis):
    """Fractional parameters where the segment crosses coordinate axis line."""
    if isinstance(seg, LineSeg):
        fa, fb = seg.a[axis], seg.b[axis]
        if (fa < 0) == (fb < 0) and fa != 0 and fb != 0:
            return []
        den = fb - fa
        if den == 0:
            return []
        s = -fa / den
        return [s] if 1e-12 < s < 1 - 1e-12 else []
    # arc: center[axis] + r*trig(theta) = 0
    c = seg.center[axis]
    r = seg.radius
    if abs(c) >= r:
        return []
    base = math.acos(max(-1.0, min(1.0, -c / r)))
    if axis == 0:
        cands = [base, -base]
    else:
        cands = [math.asin(max(-1.0, min(1.0, -c / r)))]
        cands.append(math.pi - cands[0])
    out = []
    for phi in cands:
        s = seg._angle_param(np.array([phi]))[0]
        if not np.isnan(s) and 1e-9 < s < 1 - 1e-9:
            out.append(float(s))
    return sorted(out)


def _subsegment(seg, s0, s1):
    if isinstance(seg, LineSeg):
        return LineSeg(seg.point_at(s0), seg.point_at(s1))
    return ArcSeg(seg.center, seg.radius, seg.angle_at(s0),
                  (s1 - s0) * seg.sweep)


def _clip_halfplane(labeled_segments, axis, cut_label, tol=1e-12):
    """Keep the part of the loop with coordinate[axis] >= 0.

    labeled_segments: list of (segment, label); cut edges inserted along the
    clip line carry ``cut_label``.  The domain section on the clip line must
    be a single interval (true for the symmetric shapes handled here).
    """
    kept = []
    for seg, label in labeled_segments:
        params = [0.0] + _split_params(seg, axis) + [1.0]
        for s0, s1 in zip(params[:-1], params[1:]):
            piece = _subsegment(seg, s0, s1)
            mid = piece.point_at(0.5)
            if mid[axis] >= -tol:
                kept.append((piece, label))
    if not kept:
        raise GeometryError("clipping removed the entire boundary")
    out = []
    m = len(kept)
    for k in range(m):
        seg, label = kept[k]
        out.append((seg, label))
        nxt = kept[(k + 1) % m][0]
        gap = np.hypot(*(nxt.start - seg.end))
        if gap > EPS_GEO:
            if abs(seg.end[axis]) > 1e-7 or abs(nxt.start[axis]) > 1e-7:
                raise GeometryError(
                    "clip gap endpoints do not lie on the cut axis; the "
                    "domain section on the axis is not a single interval")
            out.append((LineSeg(seg.end.copy(), nxt.start.copy()), cut_label))
    # rotate so the loop starts at a segment whose predecessor closes onto it
    return out


def symmetry_quadrant(domain: BilliardDomain):
    """The x >= 0, y >= 0 quarter of a domain with both reflection symmetries.

    Returns (quadrant domain, cut edge labels) where the labels list has one
    entry per boundary segment of the quadrant: 'wall' for pieces of the
    original boundary, 'cut_x' for edges on the x = 0 axis and 'cut_y' for
    edges on the y = 0 axis.
    """
    for axis, name in ((0, "x -> -x"), (1, "y -> -y")):
        flip = np.array([1.0, 1.0])
        flip[axis] = -1.0
        pts = domain.boundary_polyline(64 * len(domain.segments)) * flip
        if np.max(domain.distance_to_boundary(pts)) > 1e-8:
            raise GeometryError(f"domain is not symmetric under {name}")
    labeled = [(s, "wall") for s in domain.segments]
    labeled = _clip_halfplane(labeled, axis=0, cut_label="cut_x")
    labeled = _clip_halfplane(labeled, axis=1, cut_label="cut_y")
    segs = tuple(s for s, _ in labeled)
    labels = [lab for _, lab in labeled]
    quad = BilliardDomain(segs)
    if abs(quad.area - domain.area / 4.0) > 1e-10 * domain.area:
        raise GeometryError("quadrant area does not equal a quarter of the "
                            "full area; clipping failed")
    return quad, labels
