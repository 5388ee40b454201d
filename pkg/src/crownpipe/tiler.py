"""Orthomosaic tiling: plan overlapping windows, crop them out, and map
geometry between tile-local and mosaic pixel frames."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidPolygon, OriginOutOfBounds
from .formats import CrownPrediction, GeoRaster
from .geometry import CrownPolygon, clip_to_box

MIN_FRAGMENT_AREA = 4.0  # px^2; clipped ground-truth slivers below this are dropped


@dataclass(frozen=True)
class TileSpec:
    tile_size: int = 1024
    overlap_fraction: float = 0.2

    def __post_init__(self):
        if self.tile_size < 1:
            raise ValueError("tile_size must be >= 1")
        if not (0.0 <= self.overlap_fraction < 1.0):
            raise ValueError("overlap_fraction must be in [0, 1)")

    @property
    def stride(self) -> int:
        # floor guarantees overlap >= nominal; clamp keeps the walk advancing
        return max(1, math.floor(self.tile_size * (1.0 - self.overlap_fraction)))


def _axis_origins(extent: int, size: int, stride: int) -> list[int]:
    out = []
    pos = 0
    while pos + size < extent:
        out.append(pos)
        pos += stride
    out.append(max(0, extent - size))
    return out


def plan_tiles(width: int, height: int, spec: TileSpec) -> list[tuple[int, int]]:
    """Tile origins in row-major order; the last tile on each axis is
    clamped flush to the mosaic edge."""
    if width < 1 or height < 1:
        raise ValueError("raster extent must be >= 1 pixel on each axis")
    xs = _axis_origins(width, spec.tile_size, spec.stride)
    ys = _axis_origins(height, spec.tile_size, spec.stride)
    return [(ox, oy) for oy in ys for ox in xs]


def tile_window(
    width: int, height: int, origin: tuple[int, int], spec: TileSpec,
) -> tuple[int, int]:
    """Actual (tile_width, tile_height) of the window at origin, cropped
    at the mosaic edge."""
    ox, oy = origin
    if not (0 <= ox < width and 0 <= oy < height):
        raise OriginOutOfBounds(
            f"origin {origin} outside raster {width}x{height}")
    return min(spec.tile_size, width - ox), min(spec.tile_size, height - oy)


def crop_tile(raster: GeoRaster, origin: tuple[int, int], spec: TileSpec) -> GeoRaster:
    """Bit-exact sub-window whose transform maps tile pixel (0,0) to the
    world point of the mosaic origin pixel."""
    tw, th = tile_window(raster.width, raster.height, origin, spec)
    ox, oy = origin
    sub = raster.as_array()[oy:oy + th, ox:ox + tw]
    return GeoRaster.from_array(sub, raster.transform.shifted(ox, oy))


def lift_to_mosaic(
    pred: CrownPrediction,
    origin: tuple[int, int],
    tile_width: int | None = None,
    tile_height: int | None = None,
) -> CrownPrediction:
    """Translate a tile-frame prediction into the mosaic frame.

    When the tile extent is given, vertices that spill past it (detector
    overshoot of up to ~2 px) are clamped onto the tile edge first; if the
    clamp degenerates the ring the unclamped geometry is kept.
    """
    ox, oy = origin
    coords = pred.polygon.coords
    if tile_width is not None and tile_height is not None:
        clamped = np.clip(coords, 0.0, [float(tile_width), float(tile_height)])
        if not np.array_equal(clamped, coords):
            try:
                poly = CrownPolygon(_dedupe(clamped)).translated(ox, oy)
                return CrownPrediction(poly, pred.confidence, pred.source_image_id)
            except (InvalidPolygon, ValueError):
                pass
    return CrownPrediction(
        pred.polygon.translated(ox, oy), pred.confidence, pred.source_image_id)


def _dedupe(coords: np.ndarray) -> np.ndarray:
    keep = [coords[0]]
    for p in coords[1:]:
        if p[0] != keep[-1][0] or p[1] != keep[-1][1]:
            keep.append(p)
    while len(keep) > 1 and np.array_equal(keep[0], keep[-1]):
        keep.pop()
    return np.array(keep)


def split_ground_truth(
    crowns: Sequence[CrownPolygon],
    width: int,
    height: int,
    spec: TileSpec,
    min_fragment_area: float = MIN_FRAGMENT_AREA,
) -> dict[tuple[int, int], list[CrownPolygon]]:
    """Clip mosaic-frame ground truth into tile-local polygons per origin,
    dropping slivers below min_fragment_area."""
    out: dict[tuple[int, int], list[CrownPolygon]] = {}
    for origin in plan_tiles(width, height, spec):
        ox, oy = origin
        tw, th = tile_window(width, height, origin, spec)
        pieces = []
        for crown in crowns:
            for frag in clip_to_box(crown, ox, oy, ox + tw, oy + th):
                if frag.area >= min_fragment_area:
                    pieces.append(frag.translated(-ox, -oy))
        out[origin] = pieces
    return out


_TILE_NAME = re.compile(r"tile_x(\d+)_y(\d+)")


def tile_name(origin: tuple[int, int]) -> str:
    return f"tile_x{origin[0]:06d}_y{origin[1]:06d}"


def parse_tile_name(name: str) -> tuple[int, int] | None:
    """Recover a tile origin from a file name; None when it does not encode one."""
    m = _TILE_NAME.search(name)
    if m is None:
        return None
    return int(m.group(1)), int(m.group(2))
