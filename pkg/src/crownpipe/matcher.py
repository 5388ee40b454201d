"""Match crown footprints to surveyed trunk locations.

Greedy global-minimum pairing over the trunk/crown distance matrix, then a
post-hoc discard of pairs whose distance exceeds the square root of the
crown area.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .formats import TrunkRecord
from .geometry import CrownPolygon


@dataclass(frozen=True)
class MatchResult:
    """pairs/discarded entries are (tree_id, crown index, distance)."""

    pairs: list[tuple[str, int, float]] = field(default_factory=list)
    discarded: list[tuple[str, int, float]] = field(default_factory=list)
    unmatched_trunks: list[str] = field(default_factory=list)
    unmatched_crowns: list[int] = field(default_factory=list)

    @property
    def matched(self) -> list[tuple[str, int, float]]:
        return list(self.pairs)


def match_crowns(
    crowns: Sequence[CrownPolygon],
    trunks: Sequence[TrunkRecord],
) -> MatchResult:
    """Iteratively take the globally closest (trunk, crown centroid) pair,
    removing both from the pool, until either side is exhausted; then move
    pairs with distance > sqrt(crown area) to discarded.

    Ties on distance resolve to the lower trunk input index, then the lower
    crown input index. Discarded pairs still consume their trunk and crown.
    """
    if not crowns or not trunks:
        return MatchResult(
            unmatched_trunks=[t.tree_id for t in trunks],
            unmatched_crowns=list(range(len(crowns))),
        )
    cents = np.array([(c.centroid.x, c.centroid.y) for c in crowns])
    points = np.array([(t.x, t.y) for t in trunks])
    dist = np.linalg.norm(points[:, None, :] - cents[None, :, :], axis=2)

    trunk_left = list(range(len(trunks)))
    crown_left = list(range(len(crowns)))
    raw = []
    while dist.shape[0] > 0 and dist.shape[1] > 0:
        # row-major argmin = first minimal entry = lowest trunk then crown index
        i, j = np.unravel_index(int(np.argmin(dist)), dist.shape)
        raw.append((trunk_left[i], crown_left[j], float(dist[i, j])))
        dist = np.delete(np.delete(dist, i, axis=0), j, axis=1)
        del trunk_left[i]
        del crown_left[j]

    pairs = []
    discarded = []
    for ti, ci, d in raw:
        entry = (trunks[ti].tree_id, ci, d)
        if d > math.sqrt(crowns[ci].area):
            discarded.append(entry)
        else:
            pairs.append(entry)
    return MatchResult(
        pairs=pairs,
        discarded=discarded,
        unmatched_trunks=[trunks[ti].tree_id for ti in trunk_left],
        unmatched_crowns=crown_left,
    )
