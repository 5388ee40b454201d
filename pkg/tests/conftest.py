"""Shared test helpers: independent brute-force oracles and factories.

Nothing here may call into the library code paths it is used to check:
point-in-polygon, areas and readers below are deliberately naive
re-implementations.
"""

import json
import math

import numpy as np
import pytest

from crownpipe.geometry import CrownPolygon


def point_strictly_inside(px, py, coords):
    """Even-odd ray cast; points exactly on the boundary are outside."""
    n = len(coords)
    inside = False
    for i in range(n):
        x1, y1 = coords[i]
        x2, y2 = coords[(i + 1) % n]
        # exact on-segment test
        cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        if (
            cross == 0.0
            and min(x1, x2) <= px <= max(x1, x2)
            and min(y1, y2) <= py <= max(y1, y2)
        ):
            return False
        if (y1 > py) != (y2 > py):
            xx = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if px < xx:
                inside = not inside
    return inside


def points_strictly_inside(xs, ys, coords):
    """Vectorized even-odd ray cast over many query points; boundary
    points count as outside. Same rule as point_strictly_inside."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    c = np.asarray(coords, dtype=float)
    x1, y1 = c[:, 0], c[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    px = xs[:, None]
    py = ys[:, None]
    cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
    on_seg = (
        (cross == 0.0)
        & (px >= np.minimum(x1, x2))
        & (px <= np.maximum(x1, x2))
        & (py >= np.minimum(y1, y2))
        & (py <= np.maximum(y1, y2))
    ).any(axis=1)
    straddles = (y1 > py) != (y2 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xx = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
    crossings = (straddles & (px < xx)).sum(axis=1)
    return (crossings % 2 == 1) & ~on_seg


def monte_carlo_intersection_area(coords_a, coords_b, n_samples, rng):
    """Estimate |A ∩ B| by uniform sampling over the bbox overlap."""
    a = np.asarray(coords_a)
    b = np.asarray(coords_b)
    xmin = max(a[:, 0].min(), b[:, 0].min())
    xmax = min(a[:, 0].max(), b[:, 0].max())
    ymin = max(a[:, 1].min(), b[:, 1].min())
    ymax = min(a[:, 1].max(), b[:, 1].max())
    if xmin >= xmax or ymin >= ymax:
        return 0.0
    xs = rng.uniform(xmin, xmax, n_samples)
    ys = rng.uniform(ymin, ymax, n_samples)
    hits = points_strictly_inside(xs, ys, a) & points_strictly_inside(xs, ys, b)
    return (xmax - xmin) * (ymax - ymin) * hits.sum() / n_samples


def shoelace(coords):
    s = 0.0
    n = len(coords)
    for i in range(n):
        x1, y1 = coords[i]
        x2, y2 = coords[(i + 1) % n]
        s += x1 * y2 - x2 * y1
    return abs(s) / 2.0


def _jittered_angles(rng, k):
    # evenly spaced + bounded jitter: gaps stay well below pi, so radial
    # polygons built on these angles are always simple
    base = 2.0 * math.pi * np.arange(k) / k
    return base + rng.uniform(-0.35, 0.35, k) * (2.0 * math.pi / k)


def random_convex_polygon(rng, center=(0.0, 0.0), radius=1.0, k=8):
    """Convex polygon: k distinct angles on a circle."""
    angles = _jittered_angles(rng, k)
    xs = center[0] + radius * np.cos(angles)
    ys = center[1] + radius * np.sin(angles)
    return CrownPolygon(np.c_[xs, ys])


def random_blob(rng, center=(0.0, 0.0), radius=1.0, k=12):
    """Star-shaped (simple, generally non-convex) polygon around center."""
    angles = _jittered_angles(rng, k)
    radii = radius * rng.uniform(0.55, 1.0, k)
    xs = center[0] + radii * np.cos(angles)
    ys = center[1] + radii * np.sin(angles)
    return CrownPolygon(np.c_[xs, ys])


def read_geojson_crowns(data):
    """Test-only GeoJSON reader: vertex lists + properties per feature."""
    doc = json.loads(data)
    assert doc["type"] == "FeatureCollection"
    out = []
    for feat in doc["features"]:
        geom = feat["geometry"]
        assert geom["type"] == "Polygon"
        ring = geom["coordinates"][0]
        assert ring[0] == ring[-1], "ring must be closed"
        out.append((ring[:-1], feat.get("properties", {})))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20210517)
