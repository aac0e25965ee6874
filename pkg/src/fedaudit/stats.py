"""Summary statistics used by the experiment harness."""
from __future__ import annotations

import numpy as np
from scipy import stats as _st


class StatsError(ValueError):
    pass


def pearson_correlation(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise StatsError("need two equal-length vectors with at least 2 entries")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = dx @ dx, dy @ dy
    if sxx == 0 or syy == 0:
        raise StatsError("correlation undefined for zero variance")
    return float(np.clip(dx @ dy / np.sqrt(sxx * syy), -1.0, 1.0))


def rank_percentile(values) -> np.ndarray:
    """Fractional rank scaled to [0, 1]; ties share their average rank."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or len(v) == 0:
        raise StatsError("need a non-empty vector")
    if len(v) == 1:
        return np.array([0.5])
    return (_st.rankdata(v, method="average") - 1.0) / (len(v) - 1.0)


def welch_t(a, b) -> tuple[float, float]:
    """Welch's t statistic and Welch-Satterthwaite degrees of freedom."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise StatsError("each group needs at least 2 samples")
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    se2 = va + vb
    if se2 == 0:
        raise StatsError("both groups have zero variance")
    t = (a.mean() - b.mean()) / np.sqrt(se2)
    df = se2 ** 2 / (va ** 2 / (len(a) - 1) + vb ** 2 / (len(b) - 1))
    return float(t), float(df)


def significance_test(a, b) -> float:
    """Two-sided Welch t-test p-value for a difference in means.

    Two constant groups are decided exactly: equal means give 1.0, different
    means give 0.0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise StatsError("each group needs at least 2 samples")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise StatsError("non-finite sample")
    if a.var() == 0 and b.var() == 0:
        return 1.0 if a.mean() == b.mean() else 0.0
    t, df = welch_t(a, b)
    return float(min(1.0, 2.0 * _st.t.sf(abs(t), df)))
