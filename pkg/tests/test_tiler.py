import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crownpipe.errors import OriginOutOfBounds
from crownpipe.formats import CrownPrediction, GeoRaster, GeoTransform
from crownpipe.geometry import CrownPolygon
from crownpipe.tiler import (
    TileSpec,
    crop_tile,
    lift_to_mosaic,
    parse_tile_name,
    plan_tiles,
    split_ground_truth,
    tile_name,
    tile_window,
)

DEFAULT = TileSpec()


def make_raster(width, height, rng, transform=None):
    arr = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    return GeoRaster.from_array(arr, transform or GeoTransform.identity())


class TestTileSpec:
    def test_defaults(self):
        assert DEFAULT.tile_size == 1024
        assert DEFAULT.overlap_fraction == 0.2

    def test_stride(self):
        assert DEFAULT.stride == 819

    def test_zero_overlap_stride(self):
        assert TileSpec(512, 0.0).stride == 512

    def test_bad_overlap(self):
        with pytest.raises(ValueError):
            TileSpec(1024, 1.0)


class TestPlanTiles:
    def test_exact_fit_single_tile(self):
        assert plan_tiles(1024, 1024, DEFAULT) == [(0, 0)]

    def test_double_width_origins(self):
        # stride 819; 1638+1024 overruns so the walk stops and the final
        # origin clamps to 2048-1024
        origins = plan_tiles(2048, 1024, DEFAULT)
        assert origins == [(0, 0), (819, 0), (1024, 0)]

    def test_smaller_than_tile(self):
        assert plan_tiles(1000, 900, DEFAULT) == [(0, 0)]

    def test_row_major_order(self):
        origins = plan_tiles(2048, 2048, DEFAULT)
        xs = [0, 819, 1024]
        assert origins == [(ox, oy) for oy in xs for ox in xs]

    @settings(max_examples=300, deadline=None)
    @given(
        width=st.integers(1, 4096),
        height=st.integers(1, 4096),
        tile_size=st.integers(1, 1200),
        overlap=st.floats(0.0, 0.95),
    )
    def test_coverage_and_uniqueness(self, width, height, tile_size, overlap):
        spec = TileSpec(tile_size, overlap)
        origins = plan_tiles(width, height, spec)
        assert len(set(origins)) == len(origins)
        assert origins == plan_tiles(width, height, spec)
        xs = sorted({ox for ox, _ in origins})
        ys = sorted({oy for _, oy in origins})
        for axis, extent in ((xs, width), (ys, height)):
            assert axis[0] == 0
            for prev, nxt in zip(axis, axis[1:]):
                assert nxt <= prev + tile_size  # no gap between tiles
            assert axis[-1] + tile_size >= extent

    @settings(max_examples=100, deadline=None)
    @given(tile_size=st.integers(2, 600), overlap=st.floats(0.0, 0.9))
    def test_interior_overlap_band(self, tile_size, overlap):
        spec = TileSpec(tile_size, overlap)
        width = tile_size * 6
        xs = [ox for ox, _ in plan_tiles(width, 1, spec)]
        for prev, nxt in zip(xs[:-2], xs[1:-1]):  # interior pairs
            assert nxt - prev == spec.stride
            assert tile_size - (nxt - prev) == tile_size - spec.stride


class TestCropTile:
    def test_origin_zero_keeps_transform(self, rng):
        raster = make_raster(64, 48, rng)
        tile = crop_tile(raster, (0, 0), TileSpec(32, 0.0))
        assert tile.transform == raster.transform
        assert (tile.width, tile.height) == (32, 32)

    def test_offset_shifts_world_origin(self, rng):
        t = GeoTransform(0.03, 0.0, 100.0, 0.0, -0.03, 200.0)
        raster = make_raster(2048, 1024, rng, t)
        tile = crop_tile(raster, (819, 0), DEFAULT)
        assert tile.transform.c == pytest.approx(100.0 + 819 * 0.03)
        assert tile.transform.f == pytest.approx(200.0)

    def test_pixels_are_subwindow(self, rng):
        raster = make_raster(100, 80, rng)
        spec = TileSpec(32, 0.0)
        tile = crop_tile(raster, (40, 16), spec)
        expected = raster.as_array()[16:48, 40:72]
        assert np.array_equal(tile.as_array(), expected)

    def test_edge_tile_cropped(self, rng):
        raster = make_raster(1000, 900, rng)
        tile = crop_tile(raster, (0, 0), DEFAULT)
        assert (tile.width, tile.height) == (1000, 900)

    def test_origin_out_of_bounds(self, rng):
        raster = make_raster(64, 64, rng)
        with pytest.raises(OriginOutOfBounds):
            crop_tile(raster, (64, 0), TileSpec(32, 0.0))
        with pytest.raises(OriginOutOfBounds):
            crop_tile(raster, (0, -1), TileSpec(32, 0.0))

    def test_window_world_anchor_matches_mosaic(self, rng):
        t = GeoTransform(0.03, 0.001, 7.0, -0.002, -0.03, 11.0)
        raster = make_raster(256, 256, rng, t)
        for origin in plan_tiles(256, 256, TileSpec(100, 0.2)):
            tile = crop_tile(raster, origin, TileSpec(100, 0.2))
            assert tile.transform.apply(0, 0) == pytest.approx(
                t.apply(*origin), abs=1e-12)


class TestLiftToMosaic:
    def test_translation(self):
        poly = CrownPolygon([(10, 10), (20, 10), (20, 20), (10, 20)])
        pred = CrownPrediction(poly, 0.9, "t")
        lifted = lift_to_mosaic(pred, (819, 0))
        assert lifted.polygon.coords[0].tolist() == [829.0, 10.0]
        assert lifted.confidence == 0.9

    def test_zero_origin_identity(self):
        poly = CrownPolygon([(1, 2), (5, 2), (3, 7)])
        pred = CrownPrediction(poly, 0.5, "t")
        out = lift_to_mosaic(pred, (0, 0))
        assert np.array_equal(out.polygon.coords, poly.coords)

    def test_overshoot_clamped(self):
        poly = CrownPolygon([(1000, 0), (1025.5, 0), (1025.5, 30), (1000, 30)])
        pred = CrownPrediction(poly, 0.8, "t")
        out = lift_to_mosaic(pred, (100, 0), tile_width=1024, tile_height=1024)
        assert out.polygon.coords[:, 0].max() == 1024 + 100

    def test_inside_not_clamped(self):
        poly = CrownPolygon([(1, 2), (5, 2), (3, 7)])
        pred = CrownPrediction(poly, 0.5, "t")
        out = lift_to_mosaic(pred, (10, 20), tile_width=1024, tile_height=1024)
        assert np.array_equal(out.polygon.coords, poly.coords + [10, 20])

    @settings(max_examples=200, deadline=None)
    @given(
        ox=st.integers(0, 4096), oy=st.integers(0, 4096),
        base=st.integers(1, 900), data=st.data(),
    )
    def test_round_trip_exact_on_dyadic_grid(self, ox, oy, base, data):
        # detector coordinates quantized to 1/64 px survive the local->mosaic
        # ->local translation bit-exactly
        k = data.draw(st.integers(3, 8))
        offsets = data.draw(
            st.lists(st.tuples(st.integers(0, 6400), st.integers(0, 6400)),
                     min_size=k, max_size=k, unique=True))
        pts = np.array([(base + dx / 64.0, base + dy / 64.0)
                        for dx, dy in offsets])
        try:
            local = CrownPolygon(pts)
        except Exception:
            return  # degenerate random ring; construction is under test elsewhere
        pred = CrownPrediction(local, 0.5, "t")
        lifted = lift_to_mosaic(pred, (ox, oy))
        back = lifted.polygon.translated(-ox, -oy)
        assert np.array_equal(back.coords, local.coords)


class TestSplitGroundTruth:
    def test_straddling_crown_split(self):
        spec = TileSpec(100, 0.0)
        crown = CrownPolygon([(80, 10), (120, 10), (120, 50), (80, 50)])
        parts = split_ground_truth([crown], 200, 100, spec)
        (left,) = parts[(0, 0)]
        (right,) = parts[(100, 0)]
        assert left.area == pytest.approx(20 * 40)
        assert right.area == pytest.approx(20 * 40)
        # tile-local coordinates
        assert right.bounds[0] == pytest.approx(0.0)
        assert left.bounds[2] == pytest.approx(100.0)

    def test_sliver_dropped(self):
        spec = TileSpec(100, 0.0)
        # 1.5 px of the crown pokes into the right tile: 1.5*2 = 3 px^2 < 4
        crown = CrownPolygon([(90, 10), (101.5, 10), (101.5, 12), (90, 12)])
        parts = split_ground_truth([crown], 200, 100, spec)
        assert parts[(100, 0)] == []
        assert len(parts[(0, 0)]) == 1

    def test_crown_inside_one_tile(self):
        spec = TileSpec(100, 0.0)
        crown = CrownPolygon([(10, 10), (40, 10), (40, 40), (10, 40)])
        parts = split_ground_truth([crown], 100, 100, spec)
        (piece,) = parts[(0, 0)]
        assert piece.area == pytest.approx(crown.area)


class TestTileNames:
    def test_roundtrip(self):
        assert parse_tile_name(tile_name((819, 0)) + ".png") == (819, 0)

    def test_no_origin(self):
        assert parse_tile_name("orthomosaic.png") is None
