"""Pearson correlation, significance, the feature-vs-Dice correlation
matrix, and the pooled evaluation summary.

Two-sided p-values come from the Student-t distribution with n-2 degrees
of freedom, evaluated through the regularized incomplete beta function
(Lentz continued fraction, converged to 1e-12 or better). Signed r is
stored everywhere; displays use |r|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .grid import SCORED_TISSUES, TissueClass

SIGNIFICANCE_LEVEL = 0.05


class UndefinedCorrelationError(ValidationError):
    """Correlation of a constant series is undefined."""


def pearson_r(x, y) -> float:
    """Product-moment correlation of two equal-length series."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.size != y.size:
        raise ValidationError(f"series lengths differ: {x.size} vs {y.size}")
    if x.size < 3:
        raise ValidationError(f"need at least 3 points, got {x.size}")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(np.dot(xc, xc))
    syy = float(np.dot(yc, yc))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation of a constant series is undefined")
    r = float(np.dot(xc, yc)) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def _beta_cf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    max_iter = 300
    eps = 1e-14
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    front = math.exp(
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def pearson_p(r: float, n: int) -> float:
    """Two-sided p-value of observing |r| under the null, t-distributed."""
    if n < 3:
        raise ValidationError(f"p-value needs n >= 3, got {n}")
    if not -1.0 <= r <= 1.0:
        raise ValidationError(f"correlation {r} outside [-1, 1]")
    if abs(r) == 1.0:
        return 0.0
    nu = n - 2
    t_sq = r * r * nu / (1.0 - r * r)
    # 2*(1 - T_cdf(|t|, nu)) collapses to I_x(nu/2, 1/2) at x = nu/(nu+t^2)
    return betainc_regularized(nu / 2.0, 0.5, nu / (nu + t_sq))


@dataclass(frozen=True)
class CorrelationCell:
    """Signed r with its p-value; significant means p < 0.05."""

    r: float
    p: float
    significant: bool

    def __post_init__(self):
        if self.significant != (self.p < SIGNIFICANCE_LEVEL):
            raise ValidationError("significance flag inconsistent with p-value")

    @classmethod
    def from_r(cls, r: float, n: int) -> "CorrelationCell":
        p = pearson_p(r, n)
        return cls(r=r, p=p, significant=p < SIGNIFICANCE_LEVEL)


def _as_matrix(rows, width: int) -> np.ndarray:
    if isinstance(rows, np.ndarray):
        mat = rows.astype(np.float64)
    else:
        stacked = []
        for row in rows:
            if hasattr(row, "values"):
                stacked.append(np.asarray(row.values, dtype=np.float64))
            elif hasattr(row, "as_array"):
                stacked.append(row.as_array())
            else:
                stacked.append(np.asarray(row, dtype=np.float64))
        mat = np.array(stacked, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[1] != width:
        raise ValidationError(f"expected an (n, {width}) matrix, got {mat.shape}")
    return mat


def correlation_matrix(features, targets) -> list[list[CorrelationCell | None]]:
    """Tissue-by-feature grid of correlation cells over subjects.

    Rows follow the scored-tissue order, columns the feature schema.
    Constant columns make the correlation undefined; those cells are None.
    """
    from .feature_pipeline import N_FEATURES

    feat = _as_matrix(features, N_FEATURES)
    targ = _as_matrix(targets, len(SCORED_TISSUES))
    if feat.shape[0] != targ.shape[0]:
        raise ValidationError("feature and target row counts differ")
    n = feat.shape[0]
    if n < 3:
        raise ValidationError(f"correlation matrix needs at least 3 subjects, got {n}")

    grid: list[list[CorrelationCell | None]] = []
    for t in range(targ.shape[1]):
        row: list[CorrelationCell | None] = []
        for f in range(feat.shape[1]):
            try:
                row.append(CorrelationCell.from_r(pearson_r(feat[:, f], targ[:, t]), n))
            except UndefinedCorrelationError:
                row.append(None)
        grid.append(row)
    return grid


def matrix_to_json(grid: list[list[CorrelationCell | None]]) -> list[list[dict | None]]:
    return [
        [
            {"r": c.r, "p": c.p, "significant": c.significant} if c is not None else None
            for c in row
        ]
        for row in grid
    ]


@dataclass(frozen=True)
class TissueSummary:
    r: float | None
    p: float | None
    pairs: np.ndarray  # (n, 2) columns: actual, predicted


@dataclass(frozen=True)
class EvaluationReport:
    """Pooled and per-tissue agreement between predicted and actual Dice."""

    mean_abs_diff: float
    sd_abs_diff: float
    pearson_r: float | None
    pearson_p: float | None
    per_tissue: dict[TissueClass, TissueSummary]

    def to_json_dict(self) -> dict:
        return {
            "pooled": {
                "mae": self.mean_abs_diff,
                "sd": self.sd_abs_diff,
                "r": self.pearson_r,
                "p": self.pearson_p,
            },
            "per_tissue": {
                t.name.lower(): {
                    "r": s.r,
                    "p": s.p,
                    "pairs": [[float(a), float(p)] for a, p in s.pairs],
                }
                for t, s in self.per_tissue.items()
            },
        }


def _safe_correlation(x: np.ndarray, y: np.ndarray) -> tuple[float | None, float | None]:
    if x.size < 3:
        return None, None  # too few pairs, same flagging as a constant series
    try:
        r = pearson_r(x, y)
    except UndefinedCorrelationError:
        return None, None
    return r, pearson_p(r, x.size)


def summarize(predicted, actual) -> EvaluationReport:
    """Pool all tissue-subject pairs into the evaluation report."""
    pred = _as_matrix(predicted, len(SCORED_TISSUES))
    act = _as_matrix(actual, len(SCORED_TISSUES))
    if pred.shape != act.shape:
        raise ValidationError(f"prediction matrix {pred.shape} != actual matrix {act.shape}")
    if pred.size == 0:
        raise ValidationError("empty prediction matrix")

    # pooled ordering: tissue-major, subjects in cohort order
    pooled_pred = pred.T.reshape(-1)
    pooled_act = act.T.reshape(-1)
    abs_diff = np.abs(pooled_pred - pooled_act)
    pooled_r, pooled_p = _safe_correlation(pooled_pred, pooled_act)

    per_tissue = {}
    for idx, tissue in enumerate(SCORED_TISSUES):
        r, p = _safe_correlation(pred[:, idx], act[:, idx])
        pairs = np.stack([act[:, idx], pred[:, idx]], axis=1)
        per_tissue[tissue] = TissueSummary(r=r, p=p, pairs=pairs)

    return EvaluationReport(
        mean_abs_diff=float(np.mean(abs_diff)),
        sd_abs_diff=float(np.std(abs_diff)),
        pearson_r=pooled_r,
        pearson_p=pooled_p,
        per_tissue=per_tissue,
    )
