"""Statistical primitives: Pearson correlation, t-tests, one-way ANOVA,
ANCOVA via nested linear models, Bonferroni and Cohen's d.

p-values come from Student t and F distributions expressed through the
regularized incomplete beta function, evaluated with a modified Lentz
continued fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateSampleError, InvalidDataError, ShapeError

_TINY = 1e-300
_EPS = 1e-16


def _betacf(a: float, b: float, x: float) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, 10_000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = _TINY if abs(d) < _TINY else d
        c = 1.0 + aa / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = _TINY if abs(d) < _TINY else d
        c = 1.0 + aa / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)``."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a, b > 0")
    if not 0.0 <= x <= 1.0:
        raise ValueError("betainc needs 0 <= x <= 1")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    # continued fraction converges fast for x < (a+1)/(a+b+2); use symmetry otherwise
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, df: float) -> float:
    """Two-sided tail probability ``P(|T| >= |t|)`` for Student's t."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if not math.isfinite(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def f_sf(f: float, df1: float, df2: float) -> float:
    """Upper tail ``P(F >= f)`` of the F distribution."""
    if df1 <= 0 or df2 <= 0:
        raise ValueError("degrees of freedom must be positive")
    if f <= 0:
        return 1.0
    if not math.isfinite(f):
        return 0.0
    return betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f))


def _vec(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float).ravel()
    if not np.all(np.isfinite(arr)):
        raise InvalidDataError(f"{name} contains non-finite values")
    return arr


def pearson(x, y) -> float:
    x, y = _vec(x, "x"), _vec(y, "y")
    if x.shape != y.shape:
        raise ShapeError("pearson needs equal-length inputs")
    if x.size < 2:
        raise DegenerateSampleError("pearson needs at least two observations")
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(xc @ xc)), math.sqrt(float(yc @ yc))
    if sx == 0 or sy == 0:
        raise DegenerateSampleError("pearson is undefined for a constant input")
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))


def pearson_test(x, y) -> tuple[float, float]:
    """Correlation and its two-sided p-value (t with n-2 df)."""
    r = pearson(x, y)
    n = np.asarray(x).size
    if n < 3:
        raise DegenerateSampleError("p-value needs at least three observations")
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return r, t_sf_two_sided(t, n - 2)


def two_sided_t_test(a, b, equal_var: bool = True) -> tuple[float, float]:
    """Two-sample t statistic and two-sided p-value.

    Pooled-variance (Student) by default; ``equal_var=False`` gives Welch's
    test with Satterthwaite degrees of freedom.
    """
    a, b = _vec(a, "a"), _vec(b, "b")
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise DegenerateSampleError("each group needs at least two observations")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    diff = a.mean() - b.mean()
    if equal_var:
        df = na + nb - 2
        sp2 = ((na - 1) * va + (nb - 1) * vb) / df
        se = math.sqrt(sp2 * (1.0 / na + 1.0 / nb))
    else:
        qa, qb = va / na, vb / nb
        se = math.sqrt(qa + qb)
        df = (qa + qb) ** 2 / (qa * qa / (na - 1) + qb * qb / (nb - 1)) if se > 0 else 1.0
    if se == 0:
        raise DegenerateSampleError("zero variance in both groups")
    t = diff / se
    return float(t), t_sf_two_sided(t, df)


def oneway_anova(groups: Sequence) -> tuple[float, float]:
    """One-way ANOVA F statistic and p-value."""
    gs = [_vec(g, "group") for g in groups]
    k = len(gs)
    if k < 2:
        raise DegenerateSampleError("ANOVA needs at least two groups")
    if any(g.size < 1 for g in gs):
        raise DegenerateSampleError("ANOVA groups must be non-empty")
    n = sum(g.size for g in gs)
    if n - k < 1:
        raise DegenerateSampleError("ANOVA needs more observations than groups")
    grand = sum(float(g.sum()) for g in gs) / n
    ss_between = sum(g.size * (g.mean() - grand) ** 2 for g in gs)
    ss_within = sum(float(((g - g.mean()) ** 2).sum()) for g in gs)
    if ss_within == 0:
        raise DegenerateSampleError("zero within-group variance")
    f = (ss_between / (k - 1)) / (ss_within / (n - k))
    return float(f), f_sf(f, k - 1, n - k)


def bonferroni(p: float | np.ndarray, m: int):
    """Bonferroni-corrected p-value(s) ``min(1, p * m)``."""
    out = np.minimum(1.0, np.asarray(p, dtype=float) * m)
    return float(out) if out.ndim == 0 else out


def cohens_d(a, b) -> float:
    """Standardized mean difference ``(mean(a) - mean(b)) / pooled SD``."""
    a, b = _vec(a, "a"), _vec(b, "b")
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise DegenerateSampleError("each group needs at least two observations")
    sp = math.sqrt(((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2))
    if sp == 0:
        raise DegenerateSampleError("pooled standard deviation is zero")
    return float((a.mean() - b.mean()) / sp)


@dataclass
class LinearModelFit:
    coefficients: np.ndarray
    rss: float
    df: int
    std_errors: np.ndarray
    p_values: np.ndarray


def ols(design, y) -> LinearModelFit:
    """Ordinary least squares with per-coefficient t-test p-values."""
    x = np.asarray(design, dtype=float)
    y = _vec(y, "y")
    n, p = x.shape
    if y.size != n:
        raise ShapeError("design rows and outcome length differ")
    df = n - p
    if df < 1:
        raise DegenerateSampleError(f"{n} observations for {p} coefficients leaves no residual df")
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ coef
    rss = float(resid @ resid)
    sigma2 = rss / df
    xtx_inv = np.linalg.pinv(x.T @ x)
    se = np.sqrt(np.maximum(np.diag(xtx_inv) * sigma2, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        tvals = np.where(se > 0, coef / se, np.inf)
    pvals = np.array([t_sf_two_sided(float(t), df) for t in tvals])
    return LinearModelFit(coef, rss, df, se, pvals)


def _dummies(group) -> np.ndarray:
    g = np.asarray(group)
    levels = sorted(set(g.tolist()), key=str)
    if len(levels) < 2:
        raise DegenerateSampleError("grouping variable needs at least two levels")
    return np.column_stack([(g == lv).astype(float) for lv in levels[1:]])


def ancova(outcome, group, covariates=None) -> tuple[float, float, float]:
    """Group effect adjusted for covariates (main effects, no interactions).

    Compares ``outcome ~ 1 + covariates`` with ``outcome ~ 1 + group +
    covariates`` and returns ``(F_group, p_group, partial_eta_sq)`` where
    ``partial_eta_sq = SS_group / (SS_group + SS_resid)``.
    """
    y = _vec(outcome, "outcome")
    n = y.size
    cov = np.zeros((n, 0)) if covariates is None else np.asarray(covariates, dtype=float).reshape(n, -1)
    dummies = _dummies(group)
    reduced = np.column_stack([np.ones(n), cov])
    full = np.column_stack([reduced, dummies])
    fit_full = ols(full, y)
    fit_red = ols(reduced, y)
    ss_group = max(fit_red.rss - fit_full.rss, 0.0)
    q = dummies.shape[1]
    if fit_full.rss == 0:
        raise DegenerateSampleError("zero residual variance in ANCOVA")
    f = (ss_group / q) / (fit_full.rss / fit_full.df)
    return float(f), f_sf(f, q, fit_full.df), float(ss_group / (ss_group + fit_full.rss))
