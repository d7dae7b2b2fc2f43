"""Shipped billiard shapes.

The non-convex "butterfly" decagon and the "deformed triangle" quadrilateral
(with its convex-triangle variant) come with documented default coordinates;
all presets are normalized to unit area.  The defaults are configurable:
arbitrary vertex lists are accepted everywhere a preset name is.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import GeometryError, PolygonSpec, _shoelace

#: default rounding radius for the smoothened butterfly comparison shape
BUTTERFLY_ROUNDING = (math.sqrt(2.0) - 1.0) / (16.0 * math.sqrt(2.0))

# raw vertex loops (counterclockwise), before unit-area normalization
_RAW = {
    # two mirror-symmetric wings joined at a notched waist; the reflex
    # corners at (0, +-0.5) point into the interior with 45-degree notch
    # edges (interior angle 270 degrees), so corner rounding produces
    # quarter-circle arcs.  The elongated wings keep the position variance
    # along x large (Var x ~ 0.19 after unit-area normalization), which
    # sets the OTOC saturation plateau ln(2 Var(x) <p_x^2> / hbar^2) high
    # enough that the exponential window spans >= 5 e-folds at
    # hbar_eff = 2^-5 and that the classical OTOC of the rounded variant
    # tracks the quantum one up to the Ehrenfest time; each wing still
    # clears a packet of sigma = 0.5 down to hbar_eff = 2^-5 (margin
    # 3 sigma sqrt(hbar) ~ 0.27 against a wall distance of ~ 0.29).
    "butterfly": [(-3.0, -1.0), (-0.5, -1.0), (0.0, -0.5), (0.5, -1.0),
                  (3.0, -1.0), (3.0, 1.0), (0.5, 1.0), (0.0, 0.5),
                  (-0.5, 1.0), (-3.0, 1.0)],
    # non-convex quadrilateral: a triangle with its boundary dented inward
    # to the reflex vertex at the origin
    "quadrilateral": [(0.0, 0.0), (1.2, -0.5), (0.1, 1.1), (-1.0, -0.6)],
    # the quadrilateral with the reflex vertex removed: a generic
    # (irrational-angle) convex triangle
    "triangle": [(1.2, -0.5), (0.1, 1.1), (-1.0, -0.6)],
    # unit square centered at the origin (both reflection symmetries)
    "square": [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)],
    # L-shaped hexagon with a single reflex corner; used in erosion and
    # rounding tests, not normalized physics runs
    "lshape": [(0.0, 0.0), (2.0, 0.0), (2.0, 1.0),
               (1.0, 1.0), (1.0, 2.0), (0.0, 2.0)],
}

# default wave-packet launch per preset, in normalized (unit-area)
# coordinates: position and aim point (the velocity points from r0 toward
# the aim).  Butterfly launches aim at an inner (reflex) corner.
_LAUNCH = {
    "butterfly": {"r0": (-1.1 / math.sqrt(11.5), 0.0),
                  "aim": (0.0, 0.5 / math.sqrt(11.5))},
    "quadrilateral": {"r0": (0.10, 0.35), "aim": (0.0, 0.0)},
    "triangle": {"r0": (0.084, 0.029), "aim": (0.074, 0.816)},
    "square": {"r0": (0.0, 0.0), "aim": (0.5, 0.25)},
}


def preset_names():
    return sorted(_RAW)


def polygon_preset(name: str, normalized: bool = True) -> PolygonSpec:
    """Vertex loop of a shipped shape, unit-area by default."""
    try:
        verts = np.array(_RAW[name], dtype=float)
    except KeyError:
        raise GeometryError(
            f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    if normalized and name != "lshape":
        verts = verts / math.sqrt(_shoelace(verts))
    return PolygonSpec(verts)


def default_launch(name: str):
    """Default packet position r0 and unit momentum direction for a preset."""
    try:
        entry = _LAUNCH[name]
    except KeyError:
        raise GeometryError(f"no default launch for preset {name!r}")
    r0 = np.array(entry["r0"], dtype=float)
    aim = np.array(entry["aim"], dtype=float)
    direction = aim - r0
    return r0, direction / np.hypot(*direction)
