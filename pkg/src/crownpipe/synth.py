"""Deterministic synthetic scenes: planted crowns with known dieback.

Every pipeline stage gets an exact oracle this way. Crowns are filled star
polygons whose green channel decreases linearly with planted dieback while
red increases; trunks sit at jittered centroids; predictions are the ground
truth with vertex noise and optional duplicates. Colors are crude on
purpose, the point is a known-sign regression target, not foliage realism.

Randomness comes from numpy's PCG64 generator seeded directly with
spec.seed, and draws happen in a fixed order (per crown: vertex count,
angle jitter, radii, radius, center, dieback; then per crown: trunk
offset; then per crown: prediction noise, confidence, duplicate draw), so
a given seed reproduces the same scene byte for byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import indices
from .errors import EmptyCoverage, InfeasibleSpec, InvalidPolygon
from .formats import (CocoImage, CrownPrediction, GeoRaster, GeoTransform,
                      TrunkRecord, write_coco, write_coco_results,
                      write_raster, write_trunk_csv, write_world_file)
from .geometry import CrownPolygon, ios

HEALTHY_COLOR = (58, 138, 45)
DIEBACK_COLOR = (139, 92, 46)
BACKGROUND_COLOR = (125, 110, 84)


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    extent: float = 30.0  # square scene side, meters
    gsd: float = 0.03  # meters per pixel
    n_crowns: int = 10
    radius_range: tuple[float, float] = (1.0, 2.5)  # meters
    dieback_range: tuple[float, float] = (0.0, 1.0)
    trunk_jitter: float = 0.3  # meters
    overlap_fraction: float = 0.0  # max allowed IOS between planted crowns
    vertex_noise: float = 0.05  # meters of prediction perturbation
    duplicate_rate: float = 0.0

    def __post_init__(self):
        if self.extent <= 0 or self.gsd <= 0:
            raise ValueError("extent and gsd must be positive")
        if self.n_crowns < 0:
            raise ValueError("n_crowns must be >= 0")
        lo, hi = self.radius_range
        if not (0 < lo <= hi):
            raise ValueError(f"bad radius range {self.radius_range!r}")
        dlo, dhi = self.dieback_range
        if not (0.0 <= dlo <= dhi <= 1.0):
            raise ValueError(f"bad dieback range {self.dieback_range!r}")
        if self.trunk_jitter < 0 or self.vertex_noise < 0:
            raise ValueError("jitter and noise must be >= 0")
        if not (0.0 <= self.overlap_fraction < 1.0):
            raise ValueError("overlap_fraction must be in [0, 1)")
        if not (0.0 <= self.duplicate_rate <= 1.0):
            raise ValueError("duplicate_rate must be in [0, 1]")

    @property
    def pixels(self) -> int:
        return max(1, int(round(self.extent / self.gsd)))

    @property
    def transform(self) -> GeoTransform:
        # world origin at the bottom-left corner, y up
        return GeoTransform(a=self.gsd, b=0.0, c=0.0,
                            d=0.0, e=-self.gsd, f=self.extent)


def crown_color(dieback: float) -> tuple[int, int, int]:
    return tuple(int(round(h + dieback * (d - h)))
                 for h, d in zip(HEALTHY_COLOR, DIEBACK_COLOR))


def _star_polygon(rng: np.random.Generator, cx: float, cy: float,
                  r: float) -> CrownPolygon:
    k = int(rng.integers(8, 13))
    jitter = rng.uniform(-0.35, 0.35, size=k)
    angles = (np.arange(k) + jitter) * (2.0 * math.pi / k)
    radii = rng.uniform(0.6, 1.0, size=k) * r
    coords = np.column_stack((cx + radii * np.cos(angles),
                              cy + radii * np.sin(angles)))
    return CrownPolygon(coords)


def _perturbed(rng: np.random.Generator, crown: CrownPolygon,
               noise: float) -> CrownPolygon:
    for _ in range(10):
        wiggled = crown.coords + rng.normal(scale=noise,
                                            size=crown.coords.shape)
        try:
            return CrownPolygon(wiggled)
        except InvalidPolygon:
            continue
    return crown


def generate_scene(
    spec: SceneSpec,
) -> tuple[GeoRaster, list[CrownPolygon], list[TrunkRecord], list[CrownPrediction]]:
    """Build a scene; crowns, trunks, and predictions are in world meters."""
    rng = np.random.default_rng(spec.seed)
    side = spec.pixels
    arr = np.empty((side, side, 3), dtype=np.uint8)
    arr[:, :] = BACKGROUND_COLOR
    base = GeoRaster.from_array(arr, spec.transform)

    crowns: list[CrownPolygon] = []
    pixel_sets: list[np.ndarray] = []
    diebacks: list[float] = []
    budget = 10 * spec.n_crowns
    attempts = 0
    while len(crowns) < spec.n_crowns:
        if attempts >= budget:
            raise InfeasibleSpec(
                f"placed {len(crowns)} of {spec.n_crowns} crowns "
                f"in {attempts} attempts")
        attempts += 1
        r = rng.uniform(*spec.radius_range)
        if 2.0 * r >= spec.extent:
            continue
        cx = rng.uniform(r, spec.extent - r)
        cy = rng.uniform(r, spec.extent - r)
        candidate = _star_polygon(rng, cx, cy, r)
        if any(ios(candidate, other) > spec.overlap_fraction
               for other in crowns):
            continue
        try:
            covered = indices.rasterize_crown(candidate, base)
        except EmptyCoverage:
            continue
        crowns.append(candidate)
        pixel_sets.append(covered)
        diebacks.append(float(rng.uniform(*spec.dieback_range)))

    for covered, dieback in zip(pixel_sets, diebacks):
        arr[covered[:, 0], covered[:, 1]] = crown_color(dieback)
    raster = GeoRaster.from_array(arr, spec.transform)

    trunks = []
    for i, (crown, dieback) in enumerate(zip(crowns, diebacks)):
        center = crown.centroid
        angle = rng.uniform(0.0, 2.0 * math.pi)
        dist = rng.uniform(0.0, spec.trunk_jitter)
        trunks.append(TrunkRecord(
            tree_id=f"t{i + 1}",
            x=center.x + dist * math.cos(angle),
            y=center.y + dist * math.sin(angle),
            defoliation=dieback,
        ))

    predictions = []
    for crown in crowns:
        primary = _perturbed(rng, crown, spec.vertex_noise)
        conf = float(rng.uniform(0.5, 0.95))
        predictions.append(CrownPrediction(primary, conf, "1"))
        if rng.uniform() < spec.duplicate_rate:
            for _ in range(10):
                dup = _perturbed(rng, crown, spec.vertex_noise)
                if ios(dup, primary) >= 0.5:
                    conf = float(rng.uniform(0.35, 0.9))
                    predictions.append(CrownPrediction(dup, conf, "1"))
                    break
    return raster, crowns, trunks, predictions


def write_scene(spec: SceneSpec, out_dir: str | Path) -> dict[str, Path]:
    """Generate a scene and write it in the formats the pipeline ingests.

    Emits the raster PNG with a world file, COCO ground truth and results
    (both in pixel coordinates), the trunk CSV (world coordinates), and a
    project config pointing the pipeline at all of them.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    raster, crowns, trunks, predictions = generate_scene(spec)
    inv = raster.transform

    paths = {
        "raster": out / "scene.png",
        "world": out / "scene.pgw",
        "ground_truth": out / "ground_truth.json",
        "results": out / "predictions.json",
        "trunks": out / "trunks.csv",
        "config": out / "project.toml",
    }
    paths["raster"].write_bytes(write_raster(raster))
    paths["world"].write_text(write_world_file(inv))
    image = CocoImage("1", "scene.png", raster.width, raster.height)
    gt_px = [inv.invert_polygon(c) for c in crowns]
    paths["ground_truth"].write_bytes(write_coco([image], {"1": gt_px}))
    preds_px = [CrownPrediction(inv.invert_polygon(p.polygon),
                                p.confidence, p.source_image_id)
                for p in predictions]
    paths["results"].write_bytes(write_coco_results(preds_px))
    paths["trunks"].write_bytes(write_trunk_csv(trunks))
    paths["config"].write_text(
        "[[area]]\n"
        "id = 1\n"
        'raster = "scene.png"\n'
        'world = "scene.pgw"\n'
        'ground_truth = "ground_truth.json"\n'
        'results = "predictions.json"\n'
        'trunks = "trunks.csv"\n'
        "fold = 1\n")
    return paths
