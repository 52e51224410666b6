"""Statistical kernel: polynomial OLS, t/F tail probabilities, percentiles, RNG streams.

The t and F tail probabilities are computed from the regularized incomplete
beta function, evaluated with a modified-Lentz continued fraction.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import DomainError, InsufficientDataError, SingularDesignError

BETA_RTOL = 1e-12
BETA_MAX_ITER = 300
_TINY = 1e-300
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class FitResult:
    """Least-squares polynomial fit.  ``coefficients`` are in raw-age form, intercept first."""

    degree: int
    coefficients: np.ndarray
    rss: float
    n: int
    coefficient_standard_errors: np.ndarray
    residual_df: int

    def predict(self, ages):
        return polyval(self.coefficients, ages)

    def coefficient_pvalues(self):
        out = []
        for c, se in zip(self.coefficients, self.coefficient_standard_errors):
            if se > 0:
                out.append(t_pvalue(c / se, self.residual_df))
            else:
                # zero residual: any non-zero coefficient is exact
                out.append(0.0 if c != 0 else 1.0)
        return np.array(out)


def polyval(coefficients, x):
    """Horner evaluation, intercept-first coefficient order."""
    x = np.asarray(x, dtype=float)
    acc = np.zeros_like(x)
    for c in coefficients[::-1]:
        acc = acc * x + c
    return acc


def _raw_transform(degree, center, scale):
    # T maps coefficients on u = (x - center)/scale to coefficients on x
    T = np.zeros((degree + 1, degree + 1))
    for k in range(degree + 1):
        for j in range(k + 1):
            T[j, k] = comb(k, j) * (-center) ** (k - j) / scale**k
    return T


def ols_polyfit(ages, values, degree):
    ages = np.asarray(ages, dtype=float)
    values = np.asarray(values, dtype=float)
    if ages.shape != values.shape or ages.ndim != 1:
        raise DomainError("ages and values must be 1-D and equally long")
    if not 0 <= degree <= 3:
        raise DomainError(f"degree must be in 0..3, got {degree}")
    n = ages.size
    p = degree + 1
    if n < p + 1:
        raise InsufficientDataError(f"need at least {p + 1} samples for degree {degree}, got {n}")

    center = float(ages.mean())
    scale = float(ages.std())
    if degree >= 1 and not scale > 0:
        raise SingularDesignError("all ages identical: polynomial design is rank deficient")
    if scale == 0:
        scale = 1.0
    u = (ages - center) / scale
    X = np.vander(u, p, increasing=True)
    Q, R = np.linalg.qr(X)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-10 * max(diag.max(), 1.0):
        raise SingularDesignError(f"rank-deficient design for degree {degree}")
    beta = np.linalg.solve(R, Q.T @ values)
    resid = values - X @ beta
    rss = float(resid @ resid)
    residual_df = n - p
    sigma2 = rss / residual_df
    Rinv = np.linalg.solve(R, np.eye(p))
    cov_scaled = sigma2 * (Rinv @ Rinv.T)
    T = _raw_transform(degree, center, scale)
    coef = T @ beta
    cov = T @ cov_scaled @ T.T
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return FitResult(
        degree=degree,
        coefficients=coef,
        rss=rss,
        n=n,
        coefficient_standard_errors=se,
        residual_df=residual_df,
    )


def _beta_cf(a, b, x):
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, BETA_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < BETA_RTOL:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc_regularized(a, b, x):
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise DomainError("incomplete beta requires a > 0 and b > 0")
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"x={x} outside [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _beta_cf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _beta_cf(b, a, 1.0 - x) / b


def t_pvalue(t_stat, df):
    """Two-sided tail probability of Student's t."""
    if df < 1:
        raise DomainError(f"t test needs df >= 1, got {df}")
    t = abs(float(t_stat))
    if math.isnan(t):
        raise DomainError("t statistic is NaN")
    if math.isinf(t):
        return 0.0
    t2 = t * t
    if t2 < df:
        # small |t|: df/(df+t^2) is close to 1, use the complementary argument
        p = 1.0 - betainc_regularized(0.5, df / 2.0, t2 / (df + t2))
    else:
        p = betainc_regularized(df / 2.0, 0.5, df / (df + t2))
    return min(1.0, max(0.0, p))


def f_sf(f_stat, d1, d2):
    """Upper tail P(F > f) of the F(d1, d2) distribution."""
    if d1 <= 0 or d2 <= 0:
        raise DomainError("F distribution needs positive degrees of freedom")
    if f_stat <= 0:
        return 1.0
    if math.isinf(f_stat):
        return 0.0
    x = d1 * f_stat
    if x < d2:
        return 1.0 - betainc_regularized(d1 / 2.0, d2 / 2.0, x / (d2 + x))
    return betainc_regularized(d2 / 2.0, d1 / 2.0, d2 / (d2 + x))


def f_test_vs_constant(fit: FitResult, values):
    """ANOVA F test of ``fit`` against the intercept-only model on the same values."""
    values = np.asarray(values, dtype=float)
    if fit.degree < 1:
        raise DomainError("F test against constant needs degree >= 1")
    if values.size != fit.n:
        raise DomainError("values do not match the fit sample")
    d = fit.degree
    df2 = fit.n - d - 1
    if df2 < 1:
        raise InsufficientDataError("no residual degrees of freedom for the F test")
    rss0 = float(np.sum((values - values.mean()) ** 2))
    if rss0 <= 1e-24 * float(np.sum(values ** 2)):
        return 1.0  # constant up to rounding of the mean: nothing to explain
    rss1 = fit.rss
    if rss1 <= 0.0 or rss1 <= 1e-15 * max(rss0, 1e-300):
        return 0.0 if rss0 > 0 else 1.0
    F = ((rss0 - rss1) / d) / (rss1 / df2)
    return f_sf(F, d, df2)


def percentile(values, q):
    """Linear-interpolation percentile with rank h = (n - 1) q + 1 on the sorted values."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        raise DomainError("percentile of an empty list")
    if not 0.0 <= q <= 1.0:
        raise DomainError(f"q={q} outside [0, 1]")
    h = (v.size - 1) * q
    lo = int(math.floor(h))
    hi = min(lo + 1, v.size - 1)
    return float(v[lo] + (h - lo) * (v[hi] - v[lo]))


def rng_stream(seed, stream_id=0):
    """Independent, reproducible generator for ``(seed, stream_id)``."""
    ss = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=(int(stream_id) & _MASK64,))
    return np.random.Generator(np.random.PCG64(ss))


def stream_id(*parts):
    """Stable 64-bit stream id from arbitrary printable parts."""
    digest = hashlib.blake2b("\x1f".join(map(str, parts)).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")
