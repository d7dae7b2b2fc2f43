"""Triangular meshing of billiard domains.

Domains (polygons, possibly with circular arcs) are meshed by iterative
force-based smoothing of a Delaunay triangulation: edges act as linear
springs pushing toward a target length, points escaping the domain are
projected back to the exact boundary, and the triangulation is rebuilt
whenever points move appreciably.

Boundary nodes land exactly on the true boundary (lines and circular arcs),
so the polygonal FEM boundary deviates from an arc only by the chord sagitta
h^2/(8r).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .geometry import ArcSeg, BilliardDomain, GeometryError, LineSeg

#: minimum acceptable triangle angle, degrees
MIN_ANGLE_DEG = 20.0


class MeshError(RuntimeError):
    pass


@dataclass
class Mesh:
    """Conforming triangle mesh of a billiard domain."""

    nodes: np.ndarray           # (n, 2)
    triangles: np.ndarray       # (m, 3) int
    boundary: np.ndarray        # (n,) bool
    h: float
    #: label -> bool mask over nodes; labels partition the boundary
    boundary_groups: dict = field(default_factory=dict)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def triangle_areas(self):
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def min_angle_deg(self):
        p = self.nodes[self.triangles]
        angs = []
        for i in range(3):
            u = p[:, (i + 1) % 3] - p[:, i]
            w = p[:, (i + 2) % 3] - p[:, i]
            c = np.sum(u * w, axis=1) / (
                np.hypot(u[:, 0], u[:, 1]) * np.hypot(w[:, 0], w[:, 1]))
            angs.append(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))
        return float(np.min(angs))

    def validate(self, domain=None):
        """Check conformity, orientation, quality, and boundary placement."""
        areas = self.triangle_areas()
        if np.any(areas <= 0):
            raise MeshError("mesh contains degenerate or inverted triangles")
        ang = self.min_angle_deg()
        if ang < MIN_ANGLE_DEG:
            raise MeshError(f"minimum triangle angle {ang:.2f} deg < "
                            f"{MIN_ANGLE_DEG} deg")
        used = np.zeros(self.n_nodes, dtype=bool)
        used[self.triangles.ravel()] = True
        if not np.all(used):
            raise MeshError("mesh has orphan nodes")
        # every boundary edge (edge on exactly one triangle) must join
        # boundary-flagged nodes
        e = self._edges_with_counts()
        onealt = e[1] == 1
        bedges = e[0][onealt]
        if not np.all(self.boundary[bedges].all(axis=1)):
            raise MeshError("hanging boundary edge with interior node")
        if domain is not None:
            d = domain.distance_to_boundary(self.nodes[self.boundary])
            if d.size and np.max(d) > self.h ** 2:
                raise MeshError("boundary node farther than h^2 from the "
                                "boundary")
        return True

    def _edges_with_counts(self):
        t = self.triangles
        e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]],
                                    t[:, [2, 0]]]), axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq, counts


# ---------------------------------------------------------------------------
# boundary projection helpers
# ---------------------------------------------------------------------------

def _closest_feet(domain, pts):
    """(signed-ish distance, foot point, outward normal) for each point.

    The sign is from the normal side test at the foot; points whose closest
    boundary point is a junction may be misclassified and get the exact
    wedge test instead.
    """
    d, idx, s = domain._closest(pts)
    foot = np.empty_like(pts)
    nrm = np.empty_like(pts)
    for k in np.unique(idx):
        seg = domain.segments[k]
        m = idx == k
        sk = s[m]
        if isinstance(seg, LineSeg):
            foot[m] = seg.a + sk[:, None] * (seg.b - seg.a)
            t = (seg.b - seg.a) / seg.length
            nrm[m] = np.array([t[1], -t[0]])
        else:
            th = seg.theta0 + sk * seg.sweep
            rad = np.c_[np.cos(th), np.sin(th)]
            foot[m] = seg.center + seg.radius * rad
            nrm[m] = rad if seg.sweep > 0 else -rad
    side = np.sum((pts - foot) * nrm, axis=1)
    sd = np.where(side > 0, d, -d)
    # exact wedge test where the foot is (nearly) a junction
    endish = (s < 1e-9) | (s > 1 - 1e-9)
    for k in np.flatnonzero(endish):
        inside = domain._inside_near_junction(pts[k], idx[k], s[k])
        sd[k] = -d[k] if inside else d[k]
    return sd, foot, nrm


def min_feature_size(domain):
    sizes = [s.length for s in domain.segments]
    sizes += [s.radius for s in domain.segments if isinstance(s, ArcSeg)]
    return float(min(sizes))


# ---------------------------------------------------------------------------
# force-based smoothing mesher
# ---------------------------------------------------------------------------

def _hex_seed(lo, hi, h):
    dy = h * math.sqrt(3.0) / 2.0
    xs = np.arange(lo[0] - h, hi[0] + h, h)
    ys = np.arange(lo[1] - h, hi[1] + h, dy)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    X[1::2] += h / 2.0
    return np.c_[X.ravel(), Y.ravel()]


def _boundary_seed(domain, h):
    """Points spread along every segment at spacing <= h (junctions first)."""
    pts = [domain.junctions()]
    for seg in domain.segments:
        n = max(1, int(math.ceil(seg.length / h)))
        ss = (np.arange(1, n) / n)
        if len(ss):
            pts.append(np.array([seg.point_at(t) for t in ss]))
    return np.concatenate(pts)


def _triangulate(pts, domain, geps):
    tri = Delaunay(pts)
    cells = tri.simplices
    cent = pts[cells].mean(axis=1)
    sd, _, _ = _closest_feet(domain, cent)
    keep = sd < -geps
    cells = cells[keep]
    # enforce counterclockwise orientation
    p = pts[cells]
    cr = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
          - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    flip = cr < 0
    cells[flip] = cells[flip][:, ::-1]
    return cells


def _smooth_mesh(domain, h, max_iter=250, seed=0):
    geps = 1e-3 * h
    lo, hi = domain.bbox()
    pts = _hex_seed(lo, hi, h)
    sd, _, _ = _closest_feet(domain, pts)
    pts = pts[sd < -geps]
    fixed = _boundary_seed(domain, h)
    nfix = len(fixed)
    # drop interior seeds colliding with the boundary layer
    if len(pts):
        tree = cKDTree(fixed)
        d, _ = tree.query(pts)
        pts = pts[d > 0.5 * h]
    pts = np.concatenate([fixed, pts])
    rng = np.random.default_rng(seed)
    pts[nfix:] += 1e-3 * h * rng.standard_normal(pts[nfix:].shape)

    fscale, deltat, ttol, dptol = 1.2, 0.2, 0.1, 1e-3
    old = np.full_like(pts, np.inf)
    cells = None
    for _ in range(max_iter):
        if np.max(np.hypot(*(pts - old).T)) > ttol * h:
            old = pts.copy()
            cells = _triangulate(pts, domain, geps)
            edges = np.unique(np.sort(np.concatenate(
                [cells[:, [0, 1]], cells[:, [1, 2]], cells[:, [2, 0]]]),
                axis=1), axis=0)
        vec = pts[edges[:, 0]] - pts[edges[:, 1]]
        L = np.hypot(vec[:, 0], vec[:, 1])
        L0 = fscale * math.sqrt(np.sum(L ** 2) / len(L))
        F = np.maximum(L0 - L, 0.0)
        Fvec = (F / np.maximum(L, 1e-30))[:, None] * vec
        move = np.zeros_like(pts)
        np.add.at(move, edges[:, 0], Fvec)
        np.add.at(move, edges[:, 1], -Fvec)
        move[:nfix] = 0.0
        pts = pts + deltat * move
        sd, foot, _ = _closest_feet(domain, pts[nfix:])
        out = sd > 0
        pts[nfix:][out] = foot[out]
        interior = np.hypot(*(deltat * move[nfix:][sd < -geps]).T)
        if interior.size == 0 or np.max(interior) < dptol * h:
            break
    # snap the settled layer next to the boundary onto the exact boundary
    sd, foot, _ = _closest_feet(domain, pts)
    snap = sd > -0.25 * h
    snap[:nfix] = False
    pts[snap] = foot[snap]
    # merge snapped nodes that crowd existing boundary nodes
    bmask = np.zeros(len(pts), dtype=bool)
    bmask[:nfix] = True
    bmask |= snap
    bidx = np.flatnonzero(bmask)
    tree = cKDTree(pts[bidx])
    pairs = tree.query_pairs(0.4 * h, output_type="ndarray")
    drop = set()
    for i, j in pairs:
        gi, gj = bidx[i], bidx[j]
        victim = gj if gj >= nfix else gi
        if victim >= nfix:
            drop.add(victim)
    keep = np.setdiff1d(np.arange(len(pts)), np.array(sorted(drop), int))
    pts = pts[keep]
    cells = _triangulate(pts, domain, geps)
    used = np.unique(cells)
    remap = -np.ones(len(pts), dtype=int)
    remap[used] = np.arange(len(used))
    return pts[used], remap[cells]


def generate_mesh(domain: BilliardDomain, h: float, segment_labels=None,
                  seed: int = 0) -> Mesh:
    """Quality triangle mesh with target edge length h.

    ``segment_labels`` optionally names each boundary segment (defaults to
    "wall"); every boundary node is tagged with the labels of the segments
    it lies on, exposed through ``Mesh.boundary_groups``.
    """
    if h <= 0:
        raise MeshError("h must be positive")
    if h >= min_feature_size(domain):
        raise MeshError(
            f"h = {h} is not smaller than the minimum boundary feature "
            f"size {min_feature_size(domain):.4g}")
    if segment_labels is None:
        segment_labels = ["wall"] * len(domain.segments)
    if len(segment_labels) != len(domain.segments):
        raise MeshError("one label per boundary segment required")

    nodes, tris = _smooth_mesh(domain, h, seed=seed)
    boundary = domain.distance_to_boundary(nodes) <= 1e-7 * h

    groups = {}
    tol = 1e-6 * h
    bidx = np.flatnonzero(boundary)
    if bidx.size:
        for k, seg in enumerate(domain.segments):
            d, _ = seg.closest(nodes[bidx])
            on = bidx[d <= tol]
            lab = segment_labels[k]
            if lab not in groups:
                groups[lab] = np.zeros(len(nodes), dtype=bool)
            groups[lab][on] = True
    mesh = Mesh(nodes, tris, boundary, h, groups)
    mesh.validate(domain)
    return mesh
