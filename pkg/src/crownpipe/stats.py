"""Statistical analyses over matched crowns: OLS regression of index vs
field defoliation, series agreement, and residual-vs-match-distance checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import betainc

from .errors import DegenerateX, TooFewPoints, UnknownTreeId
from .matcher import MatchResult

P_FLOOR = 1e-300


@dataclass(frozen=True)
class RegressionReport:
    """residuals rows are (tree_id, residual, match_distance); ids default
    to the point index and distances to nan when the caller has none."""

    slope: float
    intercept: float
    r_squared: float
    p_value: float
    rmse: float
    n: int
    residuals: tuple[tuple[str, float, float], ...]


@dataclass(frozen=True)
class ResidualTable:
    rows: tuple[tuple[str, float, float], ...]  # (tree_id, distance, residual)
    abs_residual_distance_correlation: float


@dataclass(frozen=True)
class AgreementReport:
    r_squared: float
    rmse: float  # direct agreement RMSE of (b - a)
    p_value: float
    regression_rmse: float  # residual RMSE of the b-on-a fit


def t_sf_two_sided(t: float, df: int) -> float:
    """P(|T_df| >= t) through the regularized incomplete beta identity."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if math.isinf(t):
        return P_FLOOR
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return min(1.0, max(p, P_FLOOR))


def ols_fit(
    x: Sequence[float],
    y: Sequence[float],
    tree_ids: Sequence[str] | None = None,
    distances: Sequence[float] | None = None,
) -> RegressionReport:
    """Closed-form simple linear regression of y on x.

    The slope p-value is the two-sided t-test with n-2 degrees of freedom;
    RMSE is sqrt(SSres / n). R squared is reported as 0 when y has no
    variance at all.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise ValueError("x and y must have equal length")
    n = len(x)
    if n < 3:
        raise TooFewPoints(f"regression needs n >= 3, got {n}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DegenerateX("x is constant; slope undefined")
    slope = float(dx @ dy) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (slope * x + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(dy @ dy)
    r_squared = 0.0 if ss_tot == 0.0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))

    df = n - 2
    se_sq = ss_res / df / sxx
    if se_sq == 0.0:
        p_value = 1.0 if slope == 0.0 else P_FLOOR
    else:
        p_value = t_sf_two_sided(slope / math.sqrt(se_sq), df)

    if tree_ids is None:
        tree_ids = [str(i) for i in range(n)]
    if distances is None:
        distances = [math.nan] * n
    rows = tuple((str(tid), float(r), float(d))
                 for tid, r, d in zip(tree_ids, resid, distances))
    return RegressionReport(slope, intercept, r_squared, p_value,
                            math.sqrt(ss_res / n), n, rows)


def residual_vs_distance(report: RegressionReport, matches: MatchResult) -> ResidualTable:
    """Join regression residuals with their crown-trunk match distances.

    The summary statistic is the Pearson correlation between |residual| and
    distance (nan when either side has no variance).
    """
    by_tree = {tid: d for tid, _, d in matches.pairs}
    rows = []
    for tid, res, _ in report.residuals:
        if tid not in by_tree:
            raise UnknownTreeId(f"tree {tid!r} has no surviving match")
        rows.append((tid, by_tree[tid], res))
    abs_res = np.array([abs(r) for _, _, r in rows])
    dist = np.array([d for _, d, _ in rows])
    if len(rows) < 2 or abs_res.std() == 0.0 or dist.std() == 0.0:
        corr = math.nan
    else:
        corr = float(np.corrcoef(abs_res, dist)[0, 1])
    return ResidualTable(tuple(rows), corr)


def agreement(gcc_a: Sequence[float], gcc_b: Sequence[float]) -> AgreementReport:
    """Agreement between two index series paired by tree.

    r_squared and p_value come from the OLS fit of b on a; rmse is the
    direct root-mean-square difference between the series, reported
    separately from the fit's own residual RMSE.
    """
    a = np.asarray(gcc_a, dtype=float)
    b = np.asarray(gcc_b, dtype=float)
    if len(a) != len(b):
        raise ValueError("series must have equal length")
    fit = ols_fit(a, b)
    direct = float(np.sqrt(np.mean((b - a) ** 2)))
    return AgreementReport(fit.r_squared, direct, fit.p_value, fit.rmse)
