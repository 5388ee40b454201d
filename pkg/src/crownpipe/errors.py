"""Exception hierarchy for crownpipe.

Every structured failure raised by the library derives from CrownPipeError,
so callers (and the CLI) can distinguish our errors from genuine bugs.
Parsers additionally funnel everything through FormatError: feeding them
arbitrary bytes must never surface a bare ValueError or a crash.
"""


class CrownPipeError(Exception):
    """Base class for all crownpipe errors."""


class InvalidPolygon(CrownPipeError):
    """Polygon failed construction validation (too few vertices,
    consecutive duplicates, self-intersection, zero area, non-finite)."""


class DisjointUnion(CrownPipeError):
    """union_geometry called on polygons with no positive-area overlap."""


# ---------------------------------------------------------------------------
# formats


class FormatError(CrownPipeError):
    """Base class for parser/writer errors. All parsers are total:
    any input byte string either parses or raises a FormatError."""


class MalformedJson(FormatError):
    pass


class UnsupportedSegmentation(FormatError):
    """RLE or otherwise non-polygon segmentation encountered."""


class ScoreOutOfRange(FormatError):
    pass


class WrongLineCount(FormatError):
    pass


class UnparseableNumber(FormatError):
    pass


class SingularTransform(FormatError):
    pass


class MalformedCsv(FormatError):
    pass


class MissingColumn(FormatError):
    pass


class DefoliationOutOfRange(FormatError):
    pass


class DuplicateId(FormatError):
    pass


class UnsupportedPixelFormat(FormatError):
    pass


class CorruptImage(FormatError):
    pass


class MalformedGeojson(FormatError):
    pass


# ---------------------------------------------------------------------------
# tiler


class OriginOutOfBounds(CrownPipeError):
    pass


# ---------------------------------------------------------------------------
# indices


class EmptyCoverage(CrownPipeError):
    """No pixel center falls strictly inside the polygon."""


class AllBlackRegion(CrownPipeError):
    """Every covered pixel is nodata (0,0,0); index denominator is zero."""


# ---------------------------------------------------------------------------
# evaluator


class NoGroundTruth(CrownPipeError):
    """Average precision is undefined without ground-truth instances."""


class MissingPredictions(CrownPipeError):
    pass


# ---------------------------------------------------------------------------
# stats


class DegenerateX(CrownPipeError):
    """Regression predictor is constant."""


class TooFewPoints(CrownPipeError):
    pass


class UnknownTreeId(CrownPipeError):
    pass


# ---------------------------------------------------------------------------
# synth


class InfeasibleSpec(CrownPipeError):
    """Scene generator could not place crowns within the overlap budget."""
