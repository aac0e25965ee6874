"""Contribution scoring: medians, evaluation quality and overall scores.

Two implementations of the same pipeline live here.  ``contribution_scores``
is a plain float64 reference; ``contract_scores_fixed_point`` uses integers
only (micro-units, ``UNIT`` = 1.0) the way on-chain code has to.  The
integer version carries medians as doubled values and per-evaluator worst
scores as exact fractions, so the only rounding is the final division for
each reported field.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .model import ModelError, ModelWeights

UNIT = 1_000_000


class ScoreError(ValueError):
    pass


def div_round(num: int, den: int) -> int:
    """Integer division rounding half away from zero."""
    if den == 0:
        raise ZeroDivisionError("div_round by zero")
    if den < 0:
        num, den = -num, -den
    q, r = divmod(abs(num), den)
    if 2 * r >= den:
        q += 1
    return q if num >= 0 else -q


def to_micro(x: float) -> int:
    """Float in natural units to micro-units, half away from zero."""
    v = math.floor(abs(float(x)) * UNIT + 0.5)
    return v if x >= 0 else -v


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    """``s[a, k]``: score evaluator ``a`` reported for model ``k``, in micro-units."""

    s: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s)
        if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] < 1:
            raise ScoreError(f"score matrix must be square and non-empty, got shape {s.shape}")
        if not np.issubdtype(s.dtype, np.integer):
            if not np.all(np.isfinite(s)) or not np.all(s == np.round(s)):
                raise ScoreError("score matrix entries must be integer micro-units")
        s = s.astype(np.int64)
        if s.min() < 0 or s.max() > UNIT:
            raise ScoreError(f"score entries must lie in [0, {UNIT}]")
        s.setflags(write=False)
        object.__setattr__(self, "s", s)

    @classmethod
    def from_float(cls, scores) -> ScoreMatrix:
        f = np.asarray(scores, dtype=np.float64)
        if not np.all(np.isfinite(f)) or f.min(initial=0) < 0 or f.max(initial=0) > 1:
            raise ScoreError("float scores must lie in [0, 1]")
        return cls(np.vectorize(to_micro, otypes=[np.int64])(f).reshape(f.shape))

    @property
    def n(self) -> int:
        return self.s.shape[0]

    def as_float(self) -> np.ndarray:
        return self.s / UNIT


@dataclass(frozen=True, eq=False)
class ScoreBreakdown:
    """Every intermediate of the scoring pipeline.

    Vectors are indexed by agent; ``t`` and ``t_prime`` are indexed
    ``[evaluator, model]``.  ``unit`` is 1.0 for the float reference and
    ``UNIT`` for the fixed-point contract version.
    """

    m: np.ndarray
    m_scaled: np.ndarray
    t: np.ndarray
    t_prime: np.ndarray
    d: np.ndarray
    d_scaled: np.ndarray
    p: np.ndarray
    unit: float = 1.0

    FIELDS = ("m", "m_scaled", "t", "t_prime", "d", "d_scaled", "p")

    def fields(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.FIELDS}

    def normalized(self) -> ScoreBreakdown:
        """Same breakdown with every value expressed as a float in [0, 1]."""
        if self.unit == 1.0:
            return self
        return ScoreBreakdown(**{k: v / self.unit for k, v in self.fields().items()})


def _as_float_matrix(scores) -> np.ndarray:
    if isinstance(scores, ScoreMatrix):
        return scores.as_float()
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] < 1:
        raise ScoreError(f"score matrix must be square and non-empty, got shape {s.shape}")
    if not np.all(np.isfinite(s)) or s.min() < 0 or s.max() > 1:
        raise ScoreError("scores must lie in [0, 1]")
    return s


def _safe_scale(v: np.ndarray) -> np.ndarray:
    top = v.max()
    return v / top if top > 0 else np.zeros_like(v)


def contribution_scores(scores) -> ScoreBreakdown:
    """Float reference of the scoring procedure; accepts a ScoreMatrix or floats in [0, 1]."""
    s = _as_float_matrix(scores)
    m = np.median(s, axis=0)
    m_scaled = _safe_scale(m)
    t = np.abs(s - m[None, :])
    t_prime = np.maximum(0.0, (0.5 - t) / (0.5 + t))
    d = t_prime.min(axis=1)
    d_scaled = _safe_scale(d)
    p = np.minimum(m_scaled, d_scaled)
    return ScoreBreakdown(m, m_scaled, t, t_prime, d, d_scaled, p)


def _ratio_micro(num: int, den: int) -> int:
    return div_round(num * UNIT, den)


def contract_scores_fixed_point(matrix: ScoreMatrix) -> ScoreBreakdown:
    """Integer-only scoring, as the contract executes it."""
    if not isinstance(matrix, ScoreMatrix):
        matrix = ScoreMatrix(matrix)
    n = matrix.n
    s = [[int(v) for v in row] for row in matrix.s.tolist()]

    # doubled medians keep even-count medians exact
    m2 = []
    for k in range(n):
        col = sorted(s[a][k] for a in range(n))
        mid = n // 2
        m2.append(2 * col[mid] if n % 2 else col[mid - 1] + col[mid])
    top_m2 = max(m2)
    m_scaled = [_ratio_micro(v, top_m2) if top_m2 > 0 else 0 for v in m2]

    # t2 = 2t; t' = (1/2 - t)/(1/2 + t) = (UNIT - t2)/(UNIT + t2)
    t2 = [[abs(2 * s[a][k] - m2[k]) for k in range(n)] for a in range(n)]
    t_prime_exact = [[Fraction(UNIT - v, UNIT + v) if v < UNIT else Fraction(0) for v in row]
                     for row in t2]
    d_exact = [min(row) for row in t_prime_exact]
    top_d = max(d_exact)
    d_scaled = [_ratio_micro(v.numerator * top_d.denominator, v.denominator * top_d.numerator)
                if top_d > 0 else 0 for v in d_exact]
    p = [min(a, b) for a, b in zip(m_scaled, d_scaled)]

    def arr(v):
        return np.array(v, dtype=np.int64)

    return ScoreBreakdown(
        m=arr([div_round(v, 2) for v in m2]),
        m_scaled=arr(m_scaled),
        t=arr([[div_round(v, 2) for v in row] for row in t2]),
        t_prime=arr([[_ratio_micro(f.numerator, f.denominator) for f in row]
                     for row in t_prime_exact]),
        d=arr([_ratio_micro(f.numerator, f.denominator) for f in d_exact]),
        d_scaled=arr(d_scaled),
        p=arr(p),
        unit=UNIT,
    )


def weighted_average(models: list[ModelWeights], p) -> ModelWeights:
    """Score-weighted mean of models; falls back to the plain mean when all scores are 0."""
    if not models:
        raise ModelError("no models to average")
    if len(models) != len(p):
        raise ModelError("one score per model required")
    dims = {mdl.dim for mdl in models}
    if len(dims) != 1:
        raise ModelError(f"models have mismatched dimensions {sorted(dims)}")
    thetas = np.stack([mdl.vector() for mdl in models])
    weights = np.asarray(p, dtype=np.float64)
    if np.any(weights < 0):
        raise ModelError("scores must be non-negative")
    if weights.sum() == 0:
        weights = np.ones(len(models))
    # zero-weight models are dropped outright; offsets from the first kept model
    # keep identical inputs (and a lone model) exact
    keep = weights > 0
    thetas, weights = thetas[keep], weights[keep]
    base = thetas[0]
    return ModelWeights.from_vector(base + weights @ (thetas - base) / weights.sum())
