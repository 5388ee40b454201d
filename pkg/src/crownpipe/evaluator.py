"""COCO-style instance segmentation metrics over crown polygons.

Average precision uses 101-point interpolation; mAP averages the IoU
thresholds 0.50 to 0.95 in steps of 0.05. Cross-validation aggregation
covers both the per-tile (tiled) and whole-mosaic (orthomosaic) stages.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NoGroundTruth
from .formats import AreaDataset, CrownPrediction
from .geometry import CrownPolygon, iou

COCO_THRESHOLDS = tuple(i / 20 for i in range(10, 20))
RECALL_GRID = tuple(j / 100 for j in range(101))


@dataclass(frozen=True)
class EvalRow:
    area_id: int
    map: float
    map50: float
    map75: float
    stage: str


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[EvalRow, ...]
    mean: tuple[float, float, float]
    std: tuple[float, float, float]
    stage: str


def _iou_matrix(
    preds: Sequence[CrownPrediction], gts: Sequence[CrownPolygon],
) -> np.ndarray:
    m = np.zeros((len(preds), len(gts)))
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            m[i, j] = iou(p.polygon, g)
    return m


def _match_flags(
    ious: np.ndarray, confidences: Sequence[float], threshold: float,
) -> list[bool]:
    """True-positive flag per prediction in confidence order (ties keep
    input order): each prediction claims the unmatched ground truth with
    the highest IoU, provided it reaches the threshold."""
    order = sorted(range(len(confidences)), key=lambda k: -confidences[k])
    taken = [False] * ious.shape[1]
    flags = []
    for k in order:
        best_j = -1
        best = 0.0
        for j in range(ious.shape[1]):
            if taken[j]:
                continue
            if ious[k, j] > best:
                best = ious[k, j]
                best_j = j
        if best_j >= 0 and best >= threshold:
            taken[best_j] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def _ap_from_flags(flags: Sequence[bool], n_gt: int) -> float:
    if not flags:
        return 0.0
    tp = np.cumsum(flags)
    precision = tp / np.arange(1, len(flags) + 1)
    recall = tp / n_gt
    total = 0.0
    for r in RECALL_GRID:
        reachable = precision[recall >= r]
        if reachable.size:
            total += float(reachable.max())
    return total / len(RECALL_GRID)


def average_precision(
    preds: Sequence[CrownPrediction],
    gts: Sequence[CrownPolygon],
    iou_threshold: float,
) -> float:
    """101-point interpolated AP at one IoU threshold."""
    if not gts:
        raise NoGroundTruth("AP is undefined without ground truth")
    if not preds:
        return 0.0
    ious = _iou_matrix(preds, gts)
    confs = [p.confidence for p in preds]
    return _ap_from_flags(_match_flags(ious, confs, iou_threshold), len(gts))


def map_coco(
    preds: Sequence[CrownPrediction], gts: Sequence[CrownPolygon],
) -> tuple[float, float, float]:
    """(mAP over 0.50:0.95, AP at 0.50, AP at 0.75)."""
    if not gts:
        raise NoGroundTruth("AP is undefined without ground truth")
    if not preds:
        return 0.0, 0.0, 0.0
    ious = _iou_matrix(preds, gts)
    confs = [p.confidence for p in preds]
    aps = {thr: _ap_from_flags(_match_flags(ious, confs, thr), len(gts))
           for thr in COCO_THRESHOLDS}
    return (sum(aps.values()) / len(aps), aps[10 / 20], aps[15 / 20])


def summary_stats(values: Sequence[float]) -> tuple[float, float]:
    """Unweighted mean and population standard deviation, the convention
    that reproduces the published per-area summary rows."""
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=0))


def _area_triple_tiled(dataset: AreaDataset) -> tuple[float, float, float] | None:
    if dataset.crowns_by_image is None:
        raise ValueError(
            f"area {dataset.area_id}: tiled evaluation needs per-tile crowns")
    by_image: dict[str, list[CrownPrediction]] = {}
    for p in dataset.predictions:
        by_image.setdefault(p.source_image_id, []).append(p)
    triples = []
    for image_id in sorted(dataset.crowns_by_image):
        gts = dataset.crowns_by_image[image_id]
        if not gts:
            continue  # AP undefined on this tile; absent, not zero
        triples.append(map_coco(by_image.get(image_id, []), gts))
    if not triples:
        return None
    arr = np.array(triples)
    return tuple(arr.mean(axis=0))


def crossval_report(datasets: Sequence[AreaDataset], stage: str) -> EvalReport:
    """Per-area metric rows plus the mean and std summary over areas.

    stage "tiled" averages per-tile AP within each area; "orthomosaic"
    scores each area as a single frame. Areas without predictions (or
    without any ground truth) are skipped with a warning.
    """
    if stage not in ("tiled", "orthomosaic"):
        raise ValueError(f"unknown stage {stage!r}")
    rows = []
    for dataset in sorted(datasets, key=lambda d: d.area_id):
        if dataset.predictions is None:
            warnings.warn(f"area {dataset.area_id}: no predictions; row skipped")
            continue
        try:
            if stage == "tiled":
                triple = _area_triple_tiled(dataset)
            else:
                gts = dataset.crowns
                triple = map_coco(dataset.predictions, gts) if gts else None
        except NoGroundTruth:
            triple = None
        if triple is None:
            warnings.warn(f"area {dataset.area_id}: no ground truth; row skipped")
            continue
        rows.append(EvalRow(dataset.area_id, *triple, stage=stage))
    if rows:
        cols = np.array([(r.map, r.map50, r.map75) for r in rows])
        mean = tuple(float(v) for v in cols.mean(axis=0))
        std = tuple(float(v) for v in cols.std(ddof=0, axis=0))
    else:
        mean = std = (float("nan"),) * 3
    return EvalReport(tuple(rows), mean, std, stage)
