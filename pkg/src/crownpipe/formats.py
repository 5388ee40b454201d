"""Readers and writers for every on-disk artifact the pipeline touches.

Covered formats: COCO instance JSON, COCO results JSON, ESRI world files,
trunk-survey CSV, GeoJSON FeatureCollections, and 8-bit RGB PNG rasters.
All parsers are total: malformed input raises a FormatError subclass,
never an unstructured exception.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .errors import (
    CorruptImage,
    DefoliationOutOfRange,
    DisjointUnion,
    DuplicateId,
    InvalidPolygon,
    MalformedCsv,
    MalformedGeojson,
    MalformedJson,
    MissingColumn,
    ScoreOutOfRange,
    SingularTransform,
    UnparseableNumber,
    UnsupportedPixelFormat,
    UnsupportedSegmentation,
    WrongLineCount,
)
from .geometry import CrownPolygon, union_many


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class GeoTransform:
    """Affine pixel-to-world map: x = a*px + b*py + c, y = d*px + e*py + f."""

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float

    def __post_init__(self):
        vals = (self.a, self.b, self.c, self.d, self.e, self.f)
        if not all(math.isfinite(v) for v in vals):
            raise UnparseableNumber("transform coefficients must be finite")
        if self.det == 0.0:
            raise SingularTransform("a*e - b*d is zero; transform not invertible")

    @classmethod
    def identity(cls) -> "GeoTransform":
        return cls(1.0, 0.0, 0.0, 0.0, 1.0, 0.0)

    @property
    def det(self) -> float:
        return self.a * self.e - self.b * self.d

    def apply(self, px: float, py: float) -> tuple[float, float]:
        return (self.a * px + self.b * py + self.c,
                self.d * px + self.e * py + self.f)

    def invert(self, x: float, y: float) -> tuple[float, float]:
        u, v = x - self.c, y - self.f
        return ((self.e * u - self.b * v) / self.det,
                (self.a * v - self.d * u) / self.det)

    def pixel_to_world(self, coords: np.ndarray) -> np.ndarray:
        """Map an (n, 2) array of pixel coordinates to world coordinates."""
        coords = np.asarray(coords, dtype=float)
        m = np.array([[self.a, self.b], [self.d, self.e]])
        return coords @ m.T + np.array([self.c, self.f])

    def world_to_pixel(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=float)
        u = coords - np.array([self.c, self.f])
        minv = np.array([[self.e, -self.b], [-self.d, self.a]]) / self.det
        return u @ minv.T

    def shifted(self, ox: float, oy: float) -> "GeoTransform":
        """Transform for a sub-window whose pixel (0,0) sits at (ox,oy) here."""
        cx, cy = self.apply(ox, oy)
        return GeoTransform(self.a, self.b, cx, self.d, self.e, cy)

    def apply_polygon(self, poly: CrownPolygon) -> CrownPolygon:
        return CrownPolygon(self.pixel_to_world(poly.coords))

    def invert_polygon(self, poly: CrownPolygon) -> CrownPolygon:
        return CrownPolygon(self.world_to_pixel(poly.coords))


@dataclass(frozen=True)
class GeoRaster:
    """8-bit RGB raster with a world transform; pixels are row-major triples."""

    width: int
    height: int
    pixels: bytes
    transform: GeoTransform

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise CorruptImage("raster dimensions must be >= 1")
        if len(self.pixels) != self.width * self.height * 3:
            raise CorruptImage(
                f"expected {self.width * self.height * 3} pixel bytes, "
                f"got {len(self.pixels)}")

    def as_array(self) -> np.ndarray:
        """Read-only (height, width, 3) uint8 view of the pixel data."""
        arr = np.frombuffer(self.pixels, dtype=np.uint8)
        return arr.reshape(self.height, self.width, 3)

    @classmethod
    def from_array(cls, arr: np.ndarray, transform: GeoTransform) -> "GeoRaster":
        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise UnsupportedPixelFormat("expected (height, width, 3) array")
        h, w = arr.shape[:2]
        return cls(w, h, arr.tobytes(), transform)


@dataclass(frozen=True)
class TrunkRecord:
    tree_id: str
    x: float
    y: float
    defoliation: float

    def __post_init__(self):
        if not (0.0 <= self.defoliation <= 1.0):
            raise DefoliationOutOfRange(
                f"defoliation {self.defoliation!r} outside [0, 1] "
                f"for tree {self.tree_id!r}")


@dataclass(frozen=True)
class CrownPrediction:
    polygon: CrownPolygon
    confidence: float
    source_image_id: str

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ScoreOutOfRange(f"confidence {self.confidence!r} outside [0, 1]")


@dataclass(frozen=True)
class CocoImage:
    image_id: str
    file_name: str
    width: int
    height: int


@dataclass
class CocoParseReport:
    """Counts of annotations dropped or repaired during COCO ingest."""

    degenerate: int = 0
    invalid: int = 0
    union_fallback: int = 0


@dataclass
class AreaDataset:
    """One survey area: raster plus its ground truth and optional extras.

    crowns holds the flat ground truth; crowns_by_image additionally keys
    it by source image for per-tile evaluation.
    """

    area_id: int
    raster: GeoRaster | None = None
    crowns: list[CrownPolygon] = field(default_factory=list)
    predictions: list[CrownPrediction] | None = None
    trunks: list[TrunkRecord] | None = None
    crowns_by_image: dict[str, list[CrownPolygon]] | None = None

    def __post_init__(self):
        if not 1 <= self.area_id <= 9:
            raise ValueError(f"area_id must be in 1..9, got {self.area_id}")


# ---------------------------------------------------------------------------
# COCO


def _decode_json(data: bytes | str, err: str):
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedJson(f"{err}: not valid UTF-8") from exc
    try:
        return json.loads(data)
    except (json.JSONDecodeError, RecursionError) as exc:
        raise MalformedJson(f"{err}: {exc}") from exc


def _clean_ring(values: Sequence[float]) -> np.ndarray | None:
    """Flat x,y list -> (n, 2) array with consecutive (and closing)
    duplicates removed; None when fewer than 3 points survive."""
    pts = np.asarray(values, dtype=float).reshape(-1, 2)
    keep = [pts[0]]
    for p in pts[1:]:
        if not (p[0] == keep[-1][0] and p[1] == keep[-1][1]):
            keep.append(p)
    while len(keep) > 1 and keep[0][0] == keep[-1][0] and keep[0][1] == keep[-1][1]:
        keep.pop()
    if len(keep) < 3:
        return None
    return np.array(keep)


def _segmentation_parts(seg, report: CocoParseReport) -> list[CrownPolygon]:
    """Validate polygon-list segmentation and build one polygon per part."""
    if isinstance(seg, dict):
        raise UnsupportedSegmentation(
            "RLE segmentation not supported; polygon lists only")
    if not isinstance(seg, list) or not seg:
        raise MalformedJson("segmentation must be a non-empty list of rings")
    parts = []
    for ring in seg:
        if (not isinstance(ring, list) or len(ring) % 2 != 0
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                           for v in ring)):
            raise MalformedJson("segmentation ring must be a flat even-length "
                                "list of numbers")
        if len(ring) < 6:
            report.degenerate += 1
            continue
        pts = _clean_ring(ring)
        if pts is None:
            report.degenerate += 1
            continue
        try:
            parts.append(CrownPolygon(pts))
        except InvalidPolygon:
            report.invalid += 1
    return parts


def _annotation_polygon(seg, report: CocoParseReport) -> CrownPolygon | None:
    parts = _segmentation_parts(seg, report)
    if not parts:
        return None
    if len(parts) == 1:
        return parts[0]
    try:
        return union_many(parts)
    except (DisjointUnion, InvalidPolygon):
        report.union_fallback += 1
        return max(parts, key=lambda p: p.area)


def parse_coco(
    data: bytes | str,
) -> tuple[list[CocoImage], dict[str, list[CrownPolygon]], CocoParseReport]:
    """Parse a COCO instance file into images and per-image crown polygons.

    Multi-part segmentations are unioned; when the parts do not form a
    single connected polygon the largest part is kept and the event is
    counted in the returned report, as are degenerate (<3 point) and
    geometrically invalid annotations.
    """
    doc = _decode_json(data, "COCO file")
    if not isinstance(doc, dict):
        raise MalformedJson("COCO file must be a JSON object")
    raw_images = doc.get("images")
    raw_anns = doc.get("annotations")
    if not isinstance(raw_images, list) or not isinstance(raw_anns, list):
        raise MalformedJson('COCO file needs "images" and "annotations" arrays')

    images = []
    for entry in raw_images:
        if not isinstance(entry, dict) or "id" not in entry:
            raise MalformedJson("image entry must be an object with an id")
        try:
            width = int(entry.get("width", 0))
            height = int(entry.get("height", 0))
        except (TypeError, ValueError) as exc:
            raise MalformedJson("image width/height must be integers") from exc
        images.append(CocoImage(
            image_id=str(entry["id"]),
            file_name=str(entry.get("file_name", "")),
            width=width,
            height=height,
        ))

    report = CocoParseReport()
    crowns: dict[str, list[CrownPolygon]] = {im.image_id: [] for im in images}
    for entry in raw_anns:
        if not isinstance(entry, dict) or "image_id" not in entry \
                or "segmentation" not in entry:
            raise MalformedJson(
                "annotation must be an object with image_id and segmentation")
        poly = _annotation_polygon(entry["segmentation"], report)
        if poly is None:
            continue
        crowns.setdefault(str(entry["image_id"]), []).append(poly)
    return images, crowns, report


def parse_coco_results(data: bytes | str) -> list[CrownPrediction]:
    """Parse a COCO results array into predictions grouped by image id.

    Groups appear in first-occurrence order; order within a group is the
    file order. Degenerate polygons are skipped silently.
    """
    doc = _decode_json(data, "COCO results")
    if not isinstance(doc, list):
        raise MalformedJson("COCO results must be a JSON array")
    groups: dict[str, list[CrownPrediction]] = {}
    report = CocoParseReport()
    for entry in doc:
        if not isinstance(entry, dict) or "image_id" not in entry \
                or "segmentation" not in entry or "score" not in entry:
            raise MalformedJson(
                "result entry needs image_id, segmentation and score")
        score = entry["score"]
        if isinstance(score, bool) or not isinstance(score, (int, float)):
            raise MalformedJson("score must be a number")
        if not (0.0 <= score <= 1.0):
            raise ScoreOutOfRange(f"score {score!r} outside [0, 1]")
        poly = _annotation_polygon(entry["segmentation"], report)
        if poly is None:
            continue
        image_id = str(entry["image_id"])
        groups.setdefault(image_id, []).append(
            CrownPrediction(poly, float(score), image_id))
    return [pred for preds in groups.values() for pred in preds]


def _coco_id(image_id: str):
    # emit canonical decimal ids as JSON integers for interoperability
    return int(image_id) if image_id.isdigit() else image_id


def write_coco(
    images: Sequence[CocoImage],
    crowns_by_image: Mapping[str, Sequence[CrownPolygon]],
) -> bytes:
    image_entries = [
        {"id": _coco_id(im.image_id), "file_name": im.file_name,
         "width": im.width, "height": im.height}
        for im in images
    ]
    annotations = []
    next_id = 1
    for image_id, crowns in crowns_by_image.items():
        for poly in crowns:
            minx, miny, maxx, maxy = poly.bounds
            annotations.append({
                "id": next_id,
                "image_id": _coco_id(image_id),
                "category_id": 1,
                "segmentation": [poly.coords.ravel().tolist()],
                "area": poly.area,
                "bbox": [minx, miny, maxx - minx, maxy - miny],
                "iscrowd": 0,
            })
            next_id += 1
    doc = {
        "images": image_entries,
        "annotations": annotations,
        "categories": [{"id": 1, "name": "tree"}],
    }
    return json.dumps(doc).encode("utf-8")


def write_coco_results(preds: Sequence[CrownPrediction]) -> bytes:
    doc = [
        {"image_id": _coco_id(p.source_image_id),
         "category_id": 1,
         "segmentation": [p.polygon.coords.ravel().tolist()],
         "score": p.confidence}
        for p in preds
    ]
    return json.dumps(doc).encode("utf-8")


# ---------------------------------------------------------------------------
# world files


def parse_world_file(text: str | bytes) -> GeoTransform:
    """Parse a 6-line ESRI world file (line order a, d, b, e, c, f)."""
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    lines = [ln.strip() for ln in text.splitlines()]
    while lines and not lines[-1]:
        lines.pop()
    if len(lines) != 6:
        raise WrongLineCount(f"world file needs 6 lines, got {len(lines)}")
    vals = []
    for ln in lines:
        try:
            v = float(ln)
        except ValueError as exc:
            raise UnparseableNumber(f"bad world-file line {ln!r}") from exc
        if not math.isfinite(v):
            raise UnparseableNumber(f"non-finite world-file line {ln!r}")
        vals.append(v)
    a, d, b, e, c, f = vals
    return GeoTransform(a, b, c, d, e, f)


def write_world_file(t: GeoTransform) -> str:
    return "\n".join(repr(v) for v in (t.a, t.d, t.b, t.e, t.c, t.f)) + "\n"


# ---------------------------------------------------------------------------
# trunk CSV


_TRUNK_HEADER = ["tree_id", "x", "y", "defoliation"]


def parse_trunk_csv(data: bytes | str, percent: bool = False) -> list[TrunkRecord]:
    """Parse a trunk survey CSV with header tree_id,x,y,defoliation.

    With percent=True the defoliation column is read as 0..100 and
    converted to the canonical fraction.
    """
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedCsv("trunk CSV is not valid UTF-8") from exc
    try:
        rows = list(csv.reader(io.StringIO(data)))
    except csv.Error as exc:
        raise MalformedCsv(f"unreadable CSV: {exc}") from exc
    rows = [r for r in rows if r]
    if not rows:
        raise MissingColumn("empty file; expected header "
                            + ",".join(_TRUNK_HEADER))
    header = [h.strip() for h in rows[0]]
    if header != _TRUNK_HEADER:
        raise MissingColumn(
            f"expected header {','.join(_TRUNK_HEADER)!r}, got {','.join(header)!r}")
    records = []
    seen = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 4:
            raise MalformedCsv(f"line {lineno}: expected 4 fields, got {len(row)}")
        tree_id = row[0].strip()
        if not tree_id:
            raise MalformedCsv(f"line {lineno}: empty tree_id")
        if tree_id in seen:
            raise DuplicateId(f"line {lineno}: duplicate tree_id {tree_id!r}")
        seen.add(tree_id)
        try:
            x, y, defol = (float(v) for v in row[1:])
        except ValueError as exc:
            raise MalformedCsv(f"line {lineno}: non-numeric field") from exc
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(defol)):
            raise MalformedCsv(f"line {lineno}: non-finite value")
        if percent:
            defol /= 100.0
        records.append(TrunkRecord(tree_id, x, y, defol))
    return records


def write_trunk_csv(trunks: Sequence[TrunkRecord]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_TRUNK_HEADER)
    for t in trunks:
        writer.writerow([t.tree_id, repr(t.x), repr(t.y), repr(t.defoliation)])
    return buf.getvalue().encode("utf-8")


# ---------------------------------------------------------------------------
# rasters


def read_raster(data: bytes, transform: GeoTransform | None = None) -> GeoRaster:
    """Decode an 8-bit RGB PNG; the world transform comes from the sidecar
    world file (identity when absent)."""
    try:
        im = Image.open(io.BytesIO(data))
        fmt = im.format
        im.load()
    except Exception as exc:  # Pillow raises a zoo of types on bad bytes
        raise CorruptImage(f"undecodable image: {exc}") from exc
    if fmt != "PNG":
        raise UnsupportedPixelFormat(f"only PNG rasters supported, got {fmt}")
    if im.mode != "RGB":
        raise UnsupportedPixelFormat(
            f"only 8-bit RGB supported, got mode {im.mode}")
    if transform is None:
        transform = GeoTransform.identity()
    return GeoRaster(im.width, im.height, im.tobytes(), transform)


def write_raster(raster: GeoRaster) -> bytes:
    im = Image.frombytes("RGB", (raster.width, raster.height), raster.pixels)
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# GeoJSON


def write_geojson(
    polygons: Sequence[CrownPolygon],
    properties: Sequence[Mapping] | None = None,
) -> bytes:
    """Write crowns as an RFC 7946 FeatureCollection with closed rings."""
    if properties is None:
        properties = [{} for _ in polygons]
    if len(properties) != len(polygons):
        raise ValueError("one properties mapping per polygon required")
    features = []
    for poly, props in zip(polygons, properties):
        ring = poly.coords.tolist()
        ring.append(ring[0])
        features.append({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [ring]},
            "properties": dict(props),
        })
    doc = {"type": "FeatureCollection", "features": features}
    return json.dumps(doc).encode("utf-8")


def read_geojson(data: bytes | str) -> tuple[list[CrownPolygon], list[dict]]:
    """Read a FeatureCollection of Polygon features back into crowns."""
    doc = _decode_json(data, "GeoJSON")
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection" \
            or not isinstance(doc.get("features"), list):
        raise MalformedGeojson("expected a FeatureCollection object")
    polygons = []
    props = []
    for feat in doc["features"]:
        if not isinstance(feat, dict) or not isinstance(feat.get("geometry"), dict):
            raise MalformedGeojson("feature must be an object with a geometry")
        geom = feat["geometry"]
        if geom.get("type") != "Polygon":
            raise MalformedGeojson(
                f"only Polygon geometry supported, got {geom.get('type')!r}")
        rings = geom.get("coordinates")
        if not isinstance(rings, list) or not rings \
                or not isinstance(rings[0], list) or len(rings[0]) < 4:
            raise MalformedGeojson("Polygon needs one closed exterior ring")
        ring = rings[0]
        for pos in ring:
            if (not isinstance(pos, list) or len(pos) != 2
                    or not all(isinstance(v, (int, float))
                               and not isinstance(v, bool) for v in pos)):
                raise MalformedGeojson("ring positions must be [x, y] numbers")
        if ring[0] != ring[-1]:
            raise MalformedGeojson("exterior ring must be closed")
        try:
            polygons.append(CrownPolygon(np.asarray(ring[:-1], dtype=float)))
        except InvalidPolygon as exc:
            raise MalformedGeojson(f"unusable ring: {exc}") from exc
        p = feat.get("properties")
        props.append(dict(p) if isinstance(p, dict) else {})
    return polygons, props
