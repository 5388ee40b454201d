"""Recombine mosaic-frame tile predictions into whole-crown footprints:
confidence filtering followed by greedy Non-Maximum Merging driven by an
Intersection-Over-Smaller match threshold."""

from __future__ import annotations

from typing import Sequence

from .formats import CrownPrediction
from .geometry import ios, union_geometry

DEFAULT_CONF_THRESHOLD = 0.3
DEFAULT_IOS_THRESHOLD = 0.5


def filter_confidence(
    preds: Sequence[CrownPrediction],
    threshold: float = DEFAULT_CONF_THRESHOLD,
) -> list[CrownPrediction]:
    """Predictions with confidence >= threshold, input order preserved."""
    return [p for p in preds if p.confidence >= threshold]


def _priority(entries: list[list]) -> list[int]:
    # confidence descending, then larger area, then current slot order
    return sorted(range(len(entries)),
                  key=lambda k: (-entries[k][0].confidence,
                                 -entries[k][0].polygon.area, k))


def _merge_pass(entries: list[list], thr: float) -> tuple[list[list], bool]:
    order = _priority(entries)
    consumed = [False] * len(entries)
    out = []
    merged_any = False
    for idx in order:
        if consumed[idx]:
            continue
        consumed[idx] = True
        keeper, members = entries[idx]
        grew = True
        while grew:
            # geometry growth can pull in new matches, so rescan after each
            grew = False
            for jdx in order:
                if consumed[jdx]:
                    continue
                other, other_members = entries[jdx]
                if ios(keeper.polygon, other.polygon) >= thr:
                    keeper = CrownPrediction(
                        union_geometry(keeper.polygon, other.polygon),
                        max(keeper.confidence, other.confidence),
                        keeper.source_image_id)
                    members = members | other_members
                    consumed[jdx] = True
                    grew = True
                    merged_any = True
        out.append([keeper, members])
    return out, merged_any


def nmm_merge_groups(
    preds: Sequence[CrownPrediction],
    ios_threshold: float = DEFAULT_IOS_THRESHOLD,
) -> tuple[list[CrownPrediction], list[frozenset[int]]]:
    """Greedy Non-Maximum Merging, also reporting which input indices were
    absorbed into each output prediction.

    The keeper scan repeats until no pair of outputs matches, so the
    postcondition (every output pair has IOS below the threshold) holds even
    when a late merge regrows geometry toward an already-settled keeper.
    """
    if not (0.0 < ios_threshold <= 1.0):
        raise ValueError("ios_threshold must be in (0, 1]")
    entries = [[p, frozenset([i])] for i, p in enumerate(preds)]
    while True:
        entries, merged_any = _merge_pass(entries, ios_threshold)
        if not merged_any:
            break
    return [e[0] for e in entries], [e[1] for e in entries]


def nmm_merge(
    preds: Sequence[CrownPrediction],
    ios_threshold: float = DEFAULT_IOS_THRESHOLD,
) -> list[CrownPrediction]:
    """Merged predictions sorted by confidence descending."""
    merged, _ = nmm_merge_groups(preds, ios_threshold)
    return merged
