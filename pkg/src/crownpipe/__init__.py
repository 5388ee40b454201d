"""crownpipe: post-segmentation analytics for drone crown-dieback surveys.

Takes per-tile or per-mosaic crown predictions produced by an external
detector and carries them through recombination (greedy non-maximum
merging), crown-trunk matching, Green Chromatic Coordinate extraction,
segmentation-quality evaluation (COCO-style mAP), and the OLS correlation
analyses, with parsers/writers for every on-disk artifact in between.
"""

from . import (
    errors,
    evaluator,
    formats,
    geometry,
    indices,
    matcher,
    merger,
    stats,
    synth,
    tiler,
)
from .geometry import CrownPolygon, Point2

__version__ = "0.1.0"

__all__ = [
    "CrownPolygon",
    "Point2",
    "errors",
    "evaluator",
    "formats",
    "geometry",
    "indices",
    "matcher",
    "merger",
    "stats",
    "synth",
    "tiler",
]
