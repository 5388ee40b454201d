"""Vegetation indices over crown footprints on the orthomosaic.

Green Chromatic Coordinate is the primary index; Excess Green is the
optional secondary. Channel totals are accumulated as exact integers and
divided once, so pixel visitation order cannot perturb the result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import AllBlackRegion, EmptyCoverage
from .formats import GeoRaster
from .geometry import CrownPolygon


@dataclass(frozen=True)
class IndexValue:
    crown: CrownPolygon
    gcc: float
    exg: Optional[float]
    pixel_count: int


def _strict_range(lo: float, hi: float, limit: int) -> range:
    """Indices i with lo < i + 0.5 < hi, clamped to [0, limit)."""
    start = int(math.floor(lo - 0.5)) + 1
    while start + 0.5 <= lo:
        start += 1
    end = int(math.ceil(hi - 0.5)) - 1
    while end + 0.5 >= hi:
        end -= 1
    return range(max(start, 0), min(end, limit - 1) + 1)


def rasterize_crown(polygon: CrownPolygon, raster: GeoRaster) -> np.ndarray:
    """Pixels whose CENTER lies strictly inside the polygon, as a sorted
    (n, 2) array of (row, col) indices. Centers exactly on the boundary are
    excluded. The polygon is in world coordinates; the raster transform
    maps it into pixel space before the scanline fill."""
    pix = raster.transform.world_to_pixel(polygon.coords)
    x1s, y1s = pix[:, 0], pix[:, 1]
    x2s, y2s = np.roll(x1s, -1), np.roll(y1s, -1)

    rows = []
    cols = []
    miny, maxy = float(y1s.min()), float(y1s.max())
    for j in _strict_range(miny, maxy, raster.height):
        y = j + 0.5
        straddles = (y1s > y) != (y2s > y)
        if not straddles.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            xs = x1s[straddles] + (y - y1s[straddles]) \
                * (x2s[straddles] - x1s[straddles]) / (y2s[straddles] - y1s[straddles])
        xs = np.sort(xs)
        for k in range(0, len(xs) - 1, 2):
            for i in _strict_range(float(xs[k]), float(xs[k + 1]), raster.width):
                rows.append(j)
                cols.append(i)
    if not rows:
        raise EmptyCoverage("no pixel center falls strictly inside the crown")

    idx = np.unique(np.column_stack([rows, cols]), axis=0)
    # drop centers that sit exactly on an edge segment
    cx = idx[:, 1] + 0.5
    cy = idx[:, 0] + 0.5
    cross = (x2s - x1s) * (cy[:, None] - y1s) - (y2s - y1s) * (cx[:, None] - x1s)
    on_seg = (
        (cross == 0.0)
        & (cx[:, None] >= np.minimum(x1s, x2s))
        & (cx[:, None] <= np.maximum(x1s, x2s))
        & (cy[:, None] >= np.minimum(y1s, y2s))
        & (cy[:, None] <= np.maximum(y1s, y2s))
    ).any(axis=1)
    idx = idx[~on_seg]
    if len(idx) == 0:
        raise EmptyCoverage("no pixel center falls strictly inside the crown")
    return idx


def _channel_sums(polygon: CrownPolygon, raster: GeoRaster) -> tuple[int, int, int, int]:
    """Exact integer (sum R, sum G, sum B, used pixel count) over the crown,
    excluding pure-black nodata pixels."""
    idx = rasterize_crown(polygon, raster)
    values = raster.as_array()[idx[:, 0], idx[:, 1]].astype(np.int64)
    keep = values.any(axis=1)  # (0,0,0) encodes nodata after mosaic cropping
    values = values[keep]
    if len(values) == 0:
        raise AllBlackRegion("crown covers only nodata pixels")
    sr, sg, sb = (int(v) for v in values.sum(axis=0))
    return sr, sg, sb, len(values)


def gcc(polygon: CrownPolygon, raster: GeoRaster) -> IndexValue:
    """Green Chromatic Coordinate: sum G / (sum R + sum G + sum B)."""
    sr, sg, sb, n = _channel_sums(polygon, raster)
    return IndexValue(polygon, sg / (sr + sg + sb), None, n)


def exg(polygon: CrownPolygon, raster: GeoRaster) -> float:
    """Excess Green, normalized: (2 sum G - sum R - sum B) / (sum R + G + B)."""
    sr, sg, sb, _ = _channel_sums(polygon, raster)
    return (2 * sg - sr - sb) / (sr + sg + sb)


def crown_indices(polygon: CrownPolygon, raster: GeoRaster) -> IndexValue:
    """Both indices from a single rasterization pass."""
    sr, sg, sb, n = _channel_sums(polygon, raster)
    denom = sr + sg + sb
    return IndexValue(polygon, sg / denom, (2 * sg - sr - sb) / denom, n)
