"""Command line front end for the crown analysis pipeline.

Every subcommand writes its outputs plus a manifest.json into a run
directory. The manifest records the command, parameter values, and sha256
hashes of all inputs and outputs; timestamps live only there, so reruns on
identical inputs produce byte-identical data files.

Exit codes: 0 success, 1 validation error (bad flags, missing or malformed
input files), 2 processing error (a stage failed on valid inputs).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import tomli

from . import stats
from .errors import CrownPipeError, EmptyCoverage, FormatError
from .evaluator import crossval_report
from .formats import (AreaDataset, CocoImage, CrownPrediction, GeoTransform,
                      parse_coco, parse_coco_results, parse_trunk_csv,
                      parse_world_file, read_geojson, read_raster,
                      write_coco, write_coco_results, write_geojson,
                      write_raster, write_world_file)
from .indices import crown_indices
from .matcher import MatchResult, match_crowns
from .merger import (DEFAULT_CONF_THRESHOLD, DEFAULT_IOS_THRESHOLD,
                     filter_confidence, nmm_merge_groups)
from .synth import SceneSpec, write_scene
from .tiler import (TileSpec, crop_tile, lift_to_mosaic, parse_tile_name,
                    plan_tiles, split_ground_truth, tile_name, tile_window)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_PROCESSING = 2

WORKERS_ENV = "CROWNPIPE_WORKERS"


class UsageError(Exception):
    """Input problem the user can fix: missing file, bad config, bad flag."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; remap to the
    # validation code so 2 stays reserved for processing failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


class RunDir:
    """Output directory plus the bookkeeping behind manifest.json."""

    def __init__(self, out_dir: str | Path, command: str, parameters: dict):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.parameters = parameters
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.started = _utcnow()

    def read_input(self, path: str | Path) -> bytes:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"input file not found: {p}")
        data = p.read_bytes()
        self.inputs[str(p)] = _sha256(data)
        return data

    def write(self, name: str, data: bytes | str) -> Path:
        if isinstance(data, str):
            data = data.encode("utf-8")
        target = self.dir / name
        target.write_bytes(data)
        self.outputs[name] = _sha256(data)
        return target

    def note_output(self, path: Path) -> None:
        self.outputs[path.name] = _sha256(path.read_bytes())

    def finish(self) -> None:
        manifest = {
            "command": self.command,
            "parameters": self.parameters,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "started": self.started,
            "finished": _utcnow(),
        }
        (self.dir / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _parse_with_context(path, data, parser_fn, *args, **kwargs):
    try:
        return parser_fn(data, *args, **kwargs)
    except FormatError as exc:
        raise UsageError(f"{path}: {exc}") from exc


def _load_transform(run: RunDir, world_path) -> GeoTransform:
    if world_path is None:
        return GeoTransform.identity()
    data = run.read_input(world_path)
    return _parse_with_context(world_path, data, parse_world_file)


def _csv_bytes(header: list[str], rows: list[list]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def _fmt(value: float) -> str:
    return repr(float(value))


# ---------------------------------------------------------------------------
# project config


AREA_KEYS = ("raster", "world", "ground_truth", "results", "trunks")


class AreaConfig:
    def __init__(self, area_id: int, fold, paths: dict[str, Path | None]):
        self.area_id = area_id
        self.fold = fold
        self.paths = paths

    def require(self, key: str) -> Path:
        path = self.paths.get(key)
        if path is None:
            raise UsageError(
                f"area {self.area_id}: config entry {key!r} is missing")
        if not path.is_file():
            raise UsageError(
                f"area {self.area_id}: {key} file not found: {path}")
        return path


def load_config(config_path: str | Path) -> list[AreaConfig]:
    config_path = Path(config_path)
    if not config_path.is_file():
        raise UsageError(f"config file not found: {config_path}")
    try:
        doc = tomli.loads(config_path.read_text(encoding="utf-8"))
    except (tomli.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise UsageError(f"{config_path}: {exc}") from exc
    entries = doc.get("area")
    if not isinstance(entries, list) or not entries:
        raise UsageError(f"{config_path}: expected at least one [[area]] table")
    base = config_path.parent
    areas = []
    seen = set()
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "id" not in entry:
            raise UsageError(f"{config_path}: [[area]] #{i + 1} lacks an id")
        area_id = entry["id"]
        if not isinstance(area_id, int):
            raise UsageError(f"{config_path}: area id must be an integer")
        if area_id in seen:
            raise UsageError(f"{config_path}: duplicate area id {area_id}")
        seen.add(area_id)
        paths = {}
        for key in AREA_KEYS:
            value = entry.get(key)
            paths[key] = base / value if isinstance(value, str) else None
        areas.append(AreaConfig(area_id, entry.get("fold"), paths))
    return sorted(areas, key=lambda a: a.area_id)


def _worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be an integer, got {raw!r}")
    if n < 1:
        raise UsageError(f"{WORKERS_ENV} must be >= 1, got {n}")
    return n


def _map_areas(areas, fn):
    """Run fn over areas, possibly in parallel; results come back in
    area_id order regardless of completion order."""
    workers = _worker_count()
    if workers == 1 or len(areas) <= 1:
        return [fn(a) for a in areas]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, areas))


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    spec = SceneSpec(
        seed=args.seed, extent=args.extent, gsd=args.gsd,
        n_crowns=args.n_crowns,
        radius_range=(args.radius_min, args.radius_max),
        dieback_range=(args.dieback_min, args.dieback_max),
        trunk_jitter=args.trunk_jitter,
        overlap_fraction=args.overlap_budget,
        vertex_noise=args.vertex_noise,
        duplicate_rate=args.duplicate_rate,
    )
    run = RunDir(args.out, "synth", {
        "seed": spec.seed, "extent": spec.extent, "gsd": spec.gsd,
        "n_crowns": spec.n_crowns, "radius_range": list(spec.radius_range),
        "dieback_range": list(spec.dieback_range),
        "trunk_jitter": spec.trunk_jitter,
        "overlap_fraction": spec.overlap_fraction,
        "vertex_noise": spec.vertex_noise,
        "duplicate_rate": spec.duplicate_rate,
    })
    paths = write_scene(spec, run.dir)
    for path in paths.values():
        run.note_output(path)
    run.finish()
    print(f"scene with {spec.n_crowns} crowns written to {run.dir}")
    return EXIT_OK


def cmd_tile(args) -> int:
    spec = TileSpec(tile_size=args.tile_size, overlap_fraction=args.overlap)
    run = RunDir(args.out, "tile", {
        "image": str(args.image), "tile_size": spec.tile_size,
        "overlap_fraction": spec.overlap_fraction,
    })
    transform = _load_transform(run, args.world)
    raster = _parse_with_context(
        args.image, run.read_input(args.image), read_raster, transform)

    crowns = None
    if args.coco is not None:
        images, by_image, _ = _parse_with_context(
            args.coco, run.read_input(args.coco), parse_coco)
        if len(images) != 1:
            raise UsageError(
                f"{args.coco}: expected exactly one image entry for the "
                f"mosaic, got {len(images)}")
        crowns = by_image[images[0].image_id]

    plan = plan_tiles(raster.width, raster.height, spec)
    index_rows = []
    for origin in plan:
        name = tile_name(origin)
        tile = crop_tile(raster, origin, spec)
        run.write(f"{name}.png", write_raster(tile))
        run.write(f"{name}.pgw", write_world_file(tile.transform))
        index_rows.append([name, origin[0], origin[1],
                           tile.width, tile.height])
    run.write("tiles.csv",
              _csv_bytes(["name", "x", "y", "width", "height"], index_rows))

    if crowns is not None:
        split = split_ground_truth(crowns, raster.width, raster.height, spec)
        tile_images = []
        by_tile = {}
        for origin in plan:
            name = tile_name(origin)
            tw, th = tile_window(raster.width, raster.height, origin, spec)
            tile_images.append(CocoImage(name, f"{name}.png", tw, th))
            by_tile[name] = split[origin]
        run.write("tiles_ground_truth.json", write_coco(tile_images, by_tile))

    run.finish()
    print(f"{len(plan)} tiles written to {run.dir}")
    return EXIT_OK


def _lift_tiled_predictions(run, args, preds):
    images, _, _ = _parse_with_context(
        args.coco, run.read_input(args.coco), parse_coco)
    tiles = {}
    for im in images:
        origin = parse_tile_name(im.file_name)
        if origin is not None:
            tiles[im.image_id] = (origin, im.width, im.height)
    lifted = []
    for pred in preds:
        if pred.source_image_id not in tiles:
            raise UsageError(
                f"{args.results}: prediction references image "
                f"{pred.source_image_id!r} with no tile-named entry in "
                f"{args.coco}")
        origin, tw, th = tiles[pred.source_image_id]
        out = lift_to_mosaic(pred, origin, tw, th)
        lifted.append(CrownPrediction(out.polygon, out.confidence, "1"))
    return lifted


def cmd_merge(args) -> int:
    run = RunDir(args.out, "merge", {
        "results": str(args.results),
        "conf_threshold": args.conf_threshold,
        "ios_threshold": args.ios_threshold,
        "tiled": args.tiled,
    })
    preds = _parse_with_context(
        args.results, run.read_input(args.results), parse_coco_results)
    if args.tiled:
        if args.coco is None:
            raise UsageError("--tiled needs --coco with the tiled "
                             "ground-truth image table")
        preds = _lift_tiled_predictions(run, args, preds)
    kept = filter_confidence(preds, args.conf_threshold)
    merged, groups = nmm_merge_groups(kept, args.ios_threshold)

    transform = _load_transform(run, args.world)
    polygons = [transform.apply_polygon(p.polygon) for p in merged]
    props = [{"crown_id": i, "confidence": p.confidence}
             for i, p in enumerate(merged)]
    run.write("merged.geojson", write_geojson(polygons, props))
    run.write("merged_results.json", write_coco_results(merged))
    run.parameters["n_input"] = len(preds)
    run.parameters["n_kept"] = len(kept)
    run.parameters["n_merged"] = len(merged)
    run.finish()
    print(f"{len(preds)} predictions -> {len(kept)} kept -> "
          f"{len(merged)} merged crowns")
    return EXIT_OK


def _write_match_outputs(run, prefix, crowns, props, result: MatchResult):
    rows = [[tid, ci, _fmt(d), 0] for tid, ci, d in result.pairs]
    rows += [[tid, ci, _fmt(d), 1] for tid, ci, d in result.discarded]
    run.write(f"{prefix}matches.csv",
              _csv_bytes(["tree_id", "crown_id", "distance", "discarded"],
                         rows))
    by_crown = {ci: tid for tid, ci, _ in result.pairs}
    out_props = []
    for i, base in enumerate(props):
        entry = dict(base)
        entry["crown_id"] = i
        entry["tree_id"] = by_crown.get(i)
        out_props.append(entry)
    run.write(f"{prefix}matched.geojson", write_geojson(crowns, out_props))


def cmd_match(args) -> int:
    run = RunDir(args.out, "match", {
        "crowns": str(args.crowns), "trunks": str(args.trunks),
        "percent": args.percent,
    })
    crowns, props = _parse_with_context(
        args.crowns, run.read_input(args.crowns), read_geojson)
    trunks = _parse_with_context(
        args.trunks, run.read_input(args.trunks), parse_trunk_csv,
        percent=args.percent)
    result = match_crowns(crowns, trunks)
    _write_match_outputs(run, "", crowns, props, result)
    run.parameters["n_matched"] = len(result.pairs)
    run.parameters["n_discarded"] = len(result.discarded)
    run.finish()
    print(f"{len(result.pairs)} matched, {len(result.discarded)} discarded, "
          f"{len(result.unmatched_trunks)} trunks and "
          f"{len(result.unmatched_crowns)} crowns left over")
    return EXIT_OK


def _read_matches_csv(run, path) -> dict[int, tuple[str, float]]:
    """crown_id -> (tree_id, distance) for surviving pairs only."""
    data = run.read_input(path)
    out = {}
    reader = csv.DictReader(io.StringIO(data.decode("utf-8")))
    required = {"tree_id", "crown_id", "distance", "discarded"}
    if reader.fieldnames is None or not required <= set(reader.fieldnames):
        raise UsageError(f"{path}: expected columns {sorted(required)}")
    for row in reader:
        try:
            if int(row["discarded"]):
                continue
            out[int(row["crown_id"])] = (row["tree_id"],
                                         float(row["distance"]))
        except (TypeError, ValueError) as exc:
            raise UsageError(f"{path}: bad row {row!r}") from exc
    return out


def _index_rows(crowns, raster, matches):
    rows = []
    skipped = []
    for i, crown in enumerate(crowns):
        tree_id, _ = matches.get(i, ("", math.nan))
        try:
            value = crown_indices(crown, raster)
        except EmptyCoverage:
            skipped.append(i)
            continue
        rows.append([i, tree_id, _fmt(value.gcc), _fmt(value.exg),
                     value.pixel_count])
    return rows, skipped


def cmd_index(args) -> int:
    run = RunDir(args.out, "index", {
        "image": str(args.image), "crowns": str(args.crowns),
        "index": args.index,
    })
    transform = _load_transform(run, args.world)
    raster = _parse_with_context(
        args.image, run.read_input(args.image), read_raster, transform)
    crowns, _ = _parse_with_context(
        args.crowns, run.read_input(args.crowns), read_geojson)
    matches = _read_matches_csv(run, args.matches) if args.matches else {}
    rows, skipped = _index_rows(crowns, raster, matches)
    if args.index == "gcc":
        for row in rows:
            row[3] = ""
    elif args.index == "exg":
        for row in rows:
            row[2] = ""
    run.write("index.csv", _csv_bytes(
        ["crown_id", "tree_id", "gcc", "exg", "pixel_count"], rows))
    for i in skipped:
        print(f"warning: crown {i} covers no pixel centers; skipped",
              file=sys.stderr)
    run.parameters["n_crowns"] = len(crowns)
    run.parameters["n_skipped"] = len(skipped)
    run.finish()
    print(f"indices for {len(rows)} crowns written to {run.dir}")
    return EXIT_OK


def _read_index_csv(run, path) -> list[dict]:
    data = run.read_input(path)
    reader = csv.DictReader(io.StringIO(data.decode("utf-8")))
    required = {"crown_id", "tree_id", "gcc"}
    if reader.fieldnames is None or not required <= set(reader.fieldnames):
        raise UsageError(f"{path}: expected columns {sorted(required)}")
    rows = []
    for row in reader:
        try:
            rows.append({
                "crown_id": int(row["crown_id"]),
                "tree_id": (row["tree_id"] or "").strip(),
                "gcc": float(row["gcc"]) if row["gcc"] else math.nan,
            })
        except (TypeError, ValueError) as exc:
            raise UsageError(f"{path}: bad row {row!r}") from exc
    return rows


def _regression_files(run, prefix, report, correlation=None):
    doc = {
        "slope": report.slope,
        "intercept": report.intercept,
        "r_squared": report.r_squared,
        "p_value": report.p_value,
        "rmse": report.rmse,
        "n": report.n,
        "defoliation_unit": "fraction",
    }
    if correlation is not None:
        doc["abs_residual_distance_correlation"] = correlation
    run.write(f"{prefix}regression.json",
              json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


def _points_csv(run, name, xs, ys, report, distances):
    rows = []
    for x, y, (tid, resid, _), d in zip(xs, ys, report.residuals, distances):
        fitted = report.slope * x + report.intercept
        rows.append([tid, _fmt(x), _fmt(y), _fmt(fitted), _fmt(resid),
                     "" if d is None or math.isnan(d) else _fmt(d)])
    run.write(name, _csv_bytes(
        ["tree_id", "x", "y", "fitted", "residual", "distance"], rows))


def cmd_regress(args) -> int:
    run = RunDir(args.out, "regress", {
        "index": str(args.index), "trunks": str(args.trunks),
        "matches": str(args.matches) if args.matches else None,
        "percent": args.percent,
    })
    index_rows = _read_index_csv(run, args.index)
    trunks = _parse_with_context(
        args.trunks, run.read_input(args.trunks), parse_trunk_csv,
        percent=args.percent)
    defol = {t.tree_id: t.defoliation for t in trunks}
    matches = _read_matches_csv(run, args.matches) if args.matches else None

    xs, ys, ids, dists = [], [], [], []
    for row in index_rows:
        tid = row["tree_id"]
        if not tid or math.isnan(row["gcc"]):
            continue
        if tid not in defol:
            raise UsageError(
                f"{args.index}: tree {tid!r} absent from {args.trunks}")
        xs.append(defol[tid])
        ys.append(row["gcc"])
        ids.append(tid)
        if matches is None:
            dists.append(math.nan)
        else:
            dists.append(matches.get(row["crown_id"], (tid, math.nan))[1])
    report = stats.ols_fit(xs, ys, tree_ids=ids, distances=dists)
    correlation = None
    if any(not math.isnan(d) for d in dists):
        fake = MatchResult(pairs=[(tid, -1, d) for tid, d in zip(ids, dists)])
        correlation = stats.residual_vs_distance(
            report, fake).abs_residual_distance_correlation
    _regression_files(run, "", report, correlation)
    _points_csv(run, "points.csv", xs, ys, report, dists)
    run.finish()
    print(f"n={report.n} slope={report.slope:.6g} "
          f"r2={report.r_squared:.4f} p={report.p_value:.3g}")
    return EXIT_OK


def cmd_agree(args) -> int:
    run = RunDir(args.out, "agree", {
        "series_a": str(args.series_a), "series_b": str(args.series_b),
    })
    rows_a = _read_index_csv(run, args.series_a)
    rows_b = _read_index_csv(run, args.series_b)

    def key_of(row):
        return ("t", row["tree_id"]) if row["tree_id"] else ("c", row["crown_id"])

    a_by_key = {key_of(r): r["gcc"] for r in rows_a}
    b_by_key = {key_of(r): r["gcc"] for r in rows_b}
    keys = sorted(k for k in a_by_key if k in b_by_key
                  and not math.isnan(a_by_key[k])
                  and not math.isnan(b_by_key[k]))
    xs = [a_by_key[k] for k in keys]
    ys = [b_by_key[k] for k in keys]
    result = stats.agreement(xs, ys)
    fit = stats.ols_fit(xs, ys, tree_ids=[str(k[1]) for k in keys])
    doc = {
        "r_squared": result.r_squared,
        "rmse": result.rmse,
        "p_value": result.p_value,
        "regression_rmse": result.regression_rmse,
        "n": len(keys),
    }
    run.write("agreement.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _points_csv(run, "points.csv", xs, ys, fit, [math.nan] * len(keys))
    run.finish()
    print(f"n={len(keys)} r2={result.r_squared:.4f} "
          f"rmse={result.rmse:.4g} p={result.p_value:.3g}")
    return EXIT_OK


def _load_area_dataset(area: AreaConfig, stage: str) -> AreaDataset:
    gt_path = area.require("ground_truth")
    images, by_image, _ = _parse_with_context(
        gt_path, gt_path.read_bytes(), parse_coco)
    crowns = [c for im in images for c in by_image[im.image_id]]
    predictions = None
    results_path = area.paths.get("results")
    if results_path is not None and results_path.is_file():
        predictions = _parse_with_context(
            results_path, results_path.read_bytes(), parse_coco_results)
    dataset = AreaDataset(
        area_id=area.area_id, crowns=crowns, predictions=predictions,
        crowns_by_image=by_image if stage == "tiled" else None)
    return dataset


def cmd_eval(args) -> int:
    run = RunDir(args.out, "eval", {
        "config": str(args.config), "stage": args.stage,
    })
    areas = load_config(args.config)
    for area in areas:
        run.read_input(area.require("ground_truth"))
        results_path = area.paths.get("results")
        if results_path is not None and results_path.is_file():
            run.read_input(results_path)
    datasets = _map_areas(areas, lambda a: _load_area_dataset(a, args.stage))
    report = crossval_report(datasets, args.stage)

    folds = {a.area_id: a.fold for a in areas}
    csv_rows = [[r.area_id,
                 "" if folds.get(r.area_id) is None else folds[r.area_id],
                 _fmt(r.map), _fmt(r.map50), _fmt(r.map75)]
                for r in report.rows]
    run.write("eval.csv", _csv_bytes(
        ["area_id", "fold", "map", "map50", "map75"], csv_rows))

    lines = [f"stage: {args.stage}",
             f"{'area':>4}  {'fold':>4}  {'mAP':>6}  {'mAP50':>6}  {'mAP75':>6}"]
    for r in report.rows:
        fold = folds.get(r.area_id)
        lines.append(f"{r.area_id:>4}  {'' if fold is None else fold:>4}  "
                     f"{r.map:6.3f}  {r.map50:6.3f}  {r.map75:6.3f}")
    mean, std = report.mean[0], report.std[0]
    lines.append(f"mAP mean over areas: {mean:.3f} ± {std:.3f}")
    text = "\n".join(lines) + "\n"
    run.write("eval.txt", text)
    run.finish()
    sys.stdout.write(text)
    return EXIT_OK


def _pipeline_area(area: AreaConfig, conf: float, ios_thr: float,
                   percent: bool):
    """Merge, match, and index one area; returns output files plus the
    pooled regression rows. Pure function of its inputs, safe in a pool."""
    raster_path = area.require("raster")
    world_path = area.require("world")
    results_path = area.require("results")
    trunks_path = area.require("trunks")

    transform = _parse_with_context(
        world_path, world_path.read_bytes(), parse_world_file)
    raster = _parse_with_context(
        raster_path, raster_path.read_bytes(), read_raster, transform)
    preds = _parse_with_context(
        results_path, results_path.read_bytes(), parse_coco_results)
    trunks = _parse_with_context(
        trunks_path, trunks_path.read_bytes(), parse_trunk_csv,
        percent=percent)

    kept = filter_confidence(preds, conf)
    merged, _ = nmm_merge_groups(kept, ios_thr)
    crowns = [transform.apply_polygon(p.polygon) for p in merged]
    result = match_crowns(crowns, trunks)
    by_crown = {ci: (tid, d) for tid, ci, d in result.pairs}

    files = {}
    props = [{"crown_id": i, "confidence": p.confidence,
              "tree_id": by_crown.get(i, (None,))[0]}
             for i, p in enumerate(merged)]
    files[f"area{area.area_id}_merged.geojson"] = write_geojson(crowns, props)

    match_rows = [[tid, ci, _fmt(d), 0] for tid, ci, d in result.pairs]
    match_rows += [[tid, ci, _fmt(d), 1] for tid, ci, d in result.discarded]
    files[f"area{area.area_id}_matches.csv"] = _csv_bytes(
        ["tree_id", "crown_id", "distance", "discarded"], match_rows)

    index_rows, skipped = _index_rows(
        crowns, raster, {ci: v for ci, v in by_crown.items()})
    files[f"area{area.area_id}_index.csv"] = _csv_bytes(
        ["crown_id", "tree_id", "gcc", "exg", "pixel_count"], index_rows)

    defol = {t.tree_id: t.defoliation for t in trunks}
    points = []
    for row in index_rows:
        crown_id, tree_id, gcc_s = row[0], row[1], row[2]
        if not tree_id:
            continue
        points.append((f"a{area.area_id}:{tree_id}", defol[tree_id],
                       float(gcc_s), by_crown[crown_id][1]))
    inputs = {str(p): _sha256(p.read_bytes())
              for p in (raster_path, world_path, results_path, trunks_path)}
    warnings = [f"area {area.area_id}: crown {i} covers no pixel centers; "
                f"skipped" for i in skipped]
    return files, points, inputs, warnings


def cmd_pipeline(args) -> int:
    run = RunDir(args.out, "pipeline", {
        "config": str(args.config),
        "conf_threshold": args.conf_threshold,
        "ios_threshold": args.ios_threshold,
        "percent": args.percent,
    })
    areas = load_config(args.config)
    # surface missing files before any work starts
    for area in areas:
        for key in ("raster", "world", "results", "trunks"):
            area.require(key)

    outcomes = _map_areas(
        areas, lambda a: _pipeline_area(
            a, args.conf_threshold, args.ios_threshold, args.percent))

    points = []
    for (files, area_points, inputs, warnings), area in zip(outcomes, areas):
        for name in sorted(files):
            run.write(name, files[name])
        run.inputs.update(inputs)
        points.extend(area_points)
        for line in warnings:
            print(f"warning: {line}", file=sys.stderr)

    ids = [p[0] for p in points]
    xs = [p[1] for p in points]
    ys = [p[2] for p in points]
    dists = [p[3] for p in points]
    report = stats.ols_fit(xs, ys, tree_ids=ids, distances=dists)
    fake = MatchResult(pairs=[(i, -1, d) for i, d in zip(ids, dists)])
    correlation = stats.residual_vs_distance(
        report, fake).abs_residual_distance_correlation
    _regression_files(run, "", report, correlation)
    _points_csv(run, "points.csv", xs, ys, report, dists)
    run.finish()
    print(f"{len(areas)} areas, {report.n} matched trees: "
          f"slope={report.slope:.6g} r2={report.r_squared:.4f} "
          f"p={report.p_value:.3g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crownpipe",
                     description="Tree-crown dieback analysis pipeline.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def out_flag(p):
        p.add_argument("--out", required=True, metavar="DIR",
                       help="run directory for outputs and manifest.json")

    p = sub.add_parser("tile", help="cut an orthomosaic into overlapping tiles")
    p.add_argument("--image", required=True, help="orthomosaic PNG")
    p.add_argument("--world", help="world file for the mosaic")
    p.add_argument("--coco", help="ground-truth COCO to split per tile")
    p.add_argument("--tile-size", type=int, default=1024,
                   help="tile edge in pixels (default: %(default)s)")
    p.add_argument("--overlap", type=float, default=0.2,
                   help="fractional tile overlap (default: %(default)s)")
    out_flag(p)
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("merge",
                       help="confidence-filter and merge predictions")
    p.add_argument("--results", required=True, help="COCO results JSON")
    p.add_argument("--coco", help="tiled ground-truth COCO (tile name table)")
    p.add_argument("--world", help="world file to express crowns in meters")
    p.add_argument("--tiled", action="store_true",
                   help="lift tile-frame predictions to the mosaic first")
    p.add_argument("--conf-threshold", type=float,
                   default=DEFAULT_CONF_THRESHOLD,
                   help="minimum confidence kept (default: %(default)s)")
    p.add_argument("--ios-threshold", type=float,
                   default=DEFAULT_IOS_THRESHOLD,
                   help="intersection-over-smaller merge threshold "
                        "(default: %(default)s)")
    out_flag(p)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("match", help="match crowns to surveyed trunks")
    p.add_argument("--crowns", required=True, help="crowns GeoJSON (meters)")
    p.add_argument("--trunks", required=True, help="trunk CSV")
    p.add_argument("--percent", action="store_true",
                   help="trunk defoliation column is 0..100")
    out_flag(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("index", help="compute per-crown greenness indices")
    p.add_argument("--image", required=True, help="orthomosaic PNG")
    p.add_argument("--world", help="world file for the mosaic")
    p.add_argument("--crowns", required=True, help="crowns GeoJSON (meters)")
    p.add_argument("--matches", help="matches CSV to carry tree ids along")
    p.add_argument("--index", choices=["gcc", "exg", "both"], default="both",
                   help="which index columns to fill (default: %(default)s)")
    out_flag(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("eval", help="COCO mAP per area with a summary row")
    p.add_argument("--config", required=True, help="project TOML")
    p.add_argument("--stage", choices=["orthomosaic", "tiled"],
                   default="orthomosaic",
                   help="evaluation frame (default: %(default)s)")
    out_flag(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("regress",
                       help="regress GCC on field defoliation")
    p.add_argument("--index", required=True, help="index CSV")
    p.add_argument("--trunks", required=True, help="trunk CSV")
    p.add_argument("--matches", help="matches CSV for distances")
    p.add_argument("--percent", action="store_true",
                   help="trunk defoliation column is 0..100")
    out_flag(p)
    p.set_defaults(func=cmd_regress)

    p = sub.add_parser("agree", help="agreement between two index series")
    p.add_argument("--series-a", required=True, help="first index CSV")
    p.add_argument("--series-b", required=True, help="second index CSV")
    out_flag(p)
    p.set_defaults(func=cmd_agree)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--extent", type=float, default=30.0,
                   help="scene side in meters (default: %(default)s)")
    p.add_argument("--gsd", type=float, default=0.03,
                   help="meters per pixel (default: %(default)s)")
    p.add_argument("--n-crowns", type=int, default=10,
                   help="crowns to place (default: %(default)s)")
    p.add_argument("--radius-min", type=float, default=1.0)
    p.add_argument("--radius-max", type=float, default=2.5)
    p.add_argument("--dieback-min", type=float, default=0.0)
    p.add_argument("--dieback-max", type=float, default=1.0)
    p.add_argument("--trunk-jitter", type=float, default=0.3,
                   help="meters (default: %(default)s)")
    p.add_argument("--overlap-budget", type=float, default=0.0,
                   help="max planted crown IOS (default: %(default)s)")
    p.add_argument("--vertex-noise", type=float, default=0.05,
                   help="prediction vertex noise in meters "
                        "(default: %(default)s)")
    p.add_argument("--duplicate-rate", type=float, default=0.0,
                   help="chance of a duplicate prediction per crown "
                        "(default: %(default)s)")
    out_flag(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline",
                       help="merge, match, index, and regress per config")
    p.add_argument("--config", required=True, help="project TOML")
    p.add_argument("--conf-threshold", type=float,
                   default=DEFAULT_CONF_THRESHOLD,
                   help="minimum confidence kept (default: %(default)s)")
    p.add_argument("--ios-threshold", type=float,
                   default=DEFAULT_IOS_THRESHOLD,
                   help="intersection-over-smaller merge threshold "
                        "(default: %(default)s)")
    p.add_argument("--percent", action="store_true",
                   help="trunk defoliation column is 0..100")
    out_flag(p)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CrownPipeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROCESSING


if __name__ == "__main__":
    sys.exit(main())
