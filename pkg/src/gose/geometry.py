"""Bounding-box and segment geometry on the unit page.

Distances and directions between box anchors feed the spatial features of
the model; the proper-crossing test backs both the synthetic generator and
the crossing-conflict metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

__all__ = ["BBox", "PairGeometry", "pair_geometry", "segments_cross", "wrap_angle"]


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in normalized page coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 <= self.x2 and self.y1 <= self.y2):
            raise ValueError(f"degenerate box: ({self.x1},{self.y1},{self.x2},{self.y2})")
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"box coordinate {v} outside [0, 1]")

    @property
    def top_left(self) -> tuple[float, float]:
        return (self.x1, self.y1)

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    @property
    def bottom_right(self) -> tuple[float, float]:
        return (self.x2, self.y2)


@dataclass(frozen=True)
class PairGeometry:
    """Distance and direction between matching anchors of two boxes."""

    dist_tl: float
    dist_ct: float
    dist_br: float
    dir_tl: float
    dir_ct: float
    dir_br: float


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    t = math.fmod(theta + math.pi, 2.0 * math.pi)
    if t <= 0.0:
        t += 2.0 * math.pi
    return t - math.pi


def _dist_dir(p: tuple[float, float], q: tuple[float, float]) -> tuple[float, float]:
    dx = q[0] - p[0]
    dy = q[1] - p[1]
    dist = math.hypot(dx, dy)
    if dist == 0.0:
        return 0.0, 0.0  # coincident points: direction 0 by convention
    d = math.atan2(dy, dx)
    if d == -math.pi:
        d = math.pi
    return dist, d


def pair_geometry(a: BBox, b: BBox) -> PairGeometry:
    """Anchor-wise distance and direction from box ``a`` to box ``b``.

    The two-argument arctangent handles vertical lines and keeps quadrant
    information; directions lie in (-pi, pi].
    """
    d_tl, a_tl = _dist_dir(a.top_left, b.top_left)
    d_ct, a_ct = _dist_dir(a.center, b.center)
    d_br, a_br = _dist_dir(a.bottom_right, b.bottom_right)
    return PairGeometry(d_tl, d_ct, d_br, a_tl, a_ct, a_br)


def _orient(p, q, r) -> Fraction:
    # Exact rational arithmetic: a rounded determinant can change sign under
    # endpoint swaps for nearly-degenerate segments, breaking symmetry.
    px, py = Fraction(p[0]), Fraction(p[1])
    qx, qy = Fraction(q[0]), Fraction(q[1])
    rx, ry = Fraction(r[0]), Fraction(r[1])
    return (qx - px) * (ry - py) - (qy - py) * (rx - px)


def segments_cross(p1, p2, q1, q2) -> bool:
    """True iff the open segments p1-p2 and q1-q2 properly intersect.

    Shared endpoints and collinear overlap do not count: links that fan out
    from one entity are legitimate and must not register as conflicts.
    """
    o1 = _orient(p1, p2, q1)
    o2 = _orient(p1, p2, q2)
    o3 = _orient(q1, q2, p1)
    o4 = _orient(q1, q2, p2)
    return (o1 * o2 < 0.0) and (o3 * o4 < 0.0)
