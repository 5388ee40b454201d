"""Planar polygon primitives and overlap measures.

Crown footprints are simple single-ring polygons in a projected (planar)
coordinate system. Construction validates geometry once; every operation
after that is a pure function of immutable inputs, so everything here is
safe to call concurrently.

Boolean operations (intersection, union, clipping) are delegated to GEOS
via shapely; closed-form quantities (shoelace area, centroid) are computed
directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from shapely.geometry import Polygon as _GeosPolygon
from shapely.geometry import box as _geos_box
from shapely.ops import unary_union as _unary_union

from .errors import DisjointUnion, InvalidPolygon

__all__ = [
    "Point2",
    "CrownPolygon",
    "area",
    "centroid",
    "intersection_area",
    "iou",
    "ios",
    "union_geometry",
    "clip_to_box",
]


@dataclass(frozen=True)
class Point2:
    """A 2D point. Units are context-dependent (world meters or pixels)."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidPolygon(f"non-finite coordinate ({self.x}, {self.y})")


class CrownPolygon:
    """A simple closed polygon, stored counter-clockwise without the
    closing vertex repeated.

    Invariants enforced at construction: at least 3 vertices, all finite,
    no consecutive duplicate vertices (including last-to-first closure),
    non-self-intersecting, nonzero area. Clockwise input is reversed.
    """

    __slots__ = ("_coords", "_geos", "_area", "_centroid")

    def __init__(self, vertices: Iterable[Point2 | Sequence[float]]):
        coords = np.array(
            [(v.x, v.y) if isinstance(v, Point2) else (v[0], v[1]) for v in vertices],
            dtype=float,
        )
        if coords.ndim != 2 or coords.shape[0] < 3:
            raise InvalidPolygon(f"need >= 3 vertices, got {coords.shape[0] if coords.ndim == 2 else 0}")
        if not np.isfinite(coords).all():
            raise InvalidPolygon("non-finite vertex coordinate")
        if np.any(np.all(coords == np.roll(coords, -1, axis=0), axis=1)):
            raise InvalidPolygon("consecutive duplicate vertices")

        signed = _signed_area(coords)
        if signed == 0.0:
            raise InvalidPolygon("zero signed area")
        if signed < 0.0:
            coords = coords[::-1].copy()
            signed = -signed

        geos = _GeosPolygon(coords)
        if not geos.is_valid:
            raise InvalidPolygon("self-intersecting polygon")

        self._coords = coords
        self._coords.setflags(write=False)
        self._geos = geos
        self._area = signed
        self._centroid = None

    @property
    def exterior(self) -> tuple[Point2, ...]:
        return tuple(Point2(x, y) for x, y in self._coords)

    @property
    def coords(self) -> np.ndarray:
        """(n, 2) read-only vertex array, counter-clockwise, open ring."""
        return self._coords

    @property
    def area(self) -> float:
        return self._area

    @property
    def centroid(self) -> Point2:
        if self._centroid is None:
            self._centroid = _centroid_of(self._coords, self._area)
        return self._centroid

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax)."""
        lo = self._coords.min(axis=0)
        hi = self._coords.max(axis=0)
        return (lo[0], lo[1], hi[0], hi[1])

    def translated(self, dx: float, dy: float) -> "CrownPolygon":
        return CrownPolygon(self._coords + np.array([dx, dy]))

    def __len__(self) -> int:
        return self._coords.shape[0]

    def __repr__(self) -> str:
        return f"CrownPolygon({len(self)} vertices, area={self._area:.3f})"


def _signed_area(coords: np.ndarray) -> float:
    x, y = coords[:, 0], coords[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return 0.5 * float(np.sum(x * yn - xn * y))


def _centroid_of(coords: np.ndarray, area_: float) -> Point2:
    # Area-weighted polygon centroid, not the vertex mean.
    x, y = coords[:, 0], coords[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    cx = float(np.sum((x + xn) * cross)) / (6.0 * area_)
    cy = float(np.sum((y + yn) * cross)) / (6.0 * area_)
    return Point2(cx, cy)


def area(p: CrownPolygon) -> float:
    """Shoelace area; always positive."""
    return p.area


def centroid(p: CrownPolygon) -> Point2:
    return p.centroid


def _ordered(a: CrownPolygon, b: CrownPolygon) -> tuple[CrownPolygon, CrownPolygon]:
    # Canonical argument order so f(a, b) and f(b, a) evaluate the exact
    # same floating-point expression.
    if a._coords.tobytes() > b._coords.tobytes():
        return b, a
    return a, b


def intersection_area(a: CrownPolygon, b: CrownPolygon) -> float:
    """Area of the geometric intersection; 0 when disjoint. Symmetric."""
    a, b = _ordered(a, b)
    return a._geos.intersection(b._geos).area


def iou(a: CrownPolygon, b: CrownPolygon) -> float:
    """Intersection over union, in [0, 1]; 1 for identical geometry."""
    a, b = _ordered(a, b)
    inter = a._geos.intersection(b._geos).area
    union = a._geos.area + b._geos.area - inter
    # overlay roundoff can push the ratio an ulp past 1 under containment
    return min(inter / union, 1.0)


def ios(a: CrownPolygon, b: CrownPolygon) -> float:
    """Intersection over the smaller area, in [0, 1]; 1 under containment."""
    a, b = _ordered(a, b)
    inter = a._geos.intersection(b._geos).area
    return min(inter / min(a._geos.area, b._geos.area), 1.0)


def _from_geos(geom) -> CrownPolygon:
    """Wrap a GEOS polygon result back into a CrownPolygon.

    MultiPolygon/collection results keep only the largest part; interior
    rings are dropped (crown footprints are single-ring by design).
    """
    if geom.geom_type != "Polygon":
        parts = [g for g in getattr(geom, "geoms", []) if g.geom_type == "Polygon" and g.area > 0]
        if not parts:
            raise InvalidPolygon(f"no polygonal result ({geom.geom_type})")
        geom = max(parts, key=lambda g: g.area)
    coords = np.asarray(geom.exterior.coords)[:-1]
    # GEOS may emit repeated vertices after overlay; collapse exact ones.
    keep = np.any(coords != np.roll(coords, -1, axis=0), axis=1)
    return CrownPolygon(coords[keep])


def union_geometry(a: CrownPolygon, b: CrownPolygon) -> CrownPolygon:
    """Boundary polygon of the union of two overlapping crowns.

    Raises DisjointUnion when the inputs have no positive-area overlap:
    merging disjoint crowns is a caller bug, not a geometry question.
    """
    a, b = _ordered(a, b)
    if a._geos.intersection(b._geos).area <= 0.0:
        raise DisjointUnion("polygons do not overlap")
    return _from_geos(a._geos.union(b._geos))


def union_many(parts: Sequence[CrownPolygon]) -> CrownPolygon:
    """Union of mutually overlapping parts (one connected component).

    Raises DisjointUnion if the parts do not dissolve into a single polygon.
    """
    if len(parts) == 1:
        return parts[0]
    merged = _unary_union([p._geos for p in parts])
    if merged.geom_type != "Polygon":
        raise DisjointUnion("parts do not form a single connected polygon")
    return _from_geos(merged)


def clip_to_box(
    p: CrownPolygon, xmin: float, ymin: float, xmax: float, ymax: float
) -> list[CrownPolygon]:
    """Intersect a polygon with an axis-aligned box.

    Returns zero or more positive-area fragments (a non-convex crown can
    split when clipped). Fragment order follows GEOS output.
    """
    inter = p._geos.intersection(_geos_box(xmin, ymin, xmax, ymax))
    if inter.is_empty or inter.area == 0.0:
        return []
    if inter.geom_type == "Polygon":
        geoms = [inter]
    else:
        geoms = [g for g in getattr(inter, "geoms", []) if g.geom_type == "Polygon" and g.area > 0]
    return [_from_geos(g) for g in geoms]
