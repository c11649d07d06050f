"""Mittag-Leffler function on the negative half-line and Gamma helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import mpmath
import numpy as np
from scipy import special

MAX_SERIES_TERMS = 10_000
# absolute size of the truncation error accepted on the asymptotic branch
_ASYMPTOTIC_TOL = 1e-14
_MAX_ASYMPTOTIC_TERMS = 400


def gamma_fn(x: float) -> float:
    """Gamma function; raises ``ValueError`` at the poles 0, -1, -2, ..."""
    x = float(x)
    if x <= 0.0 and x == math.floor(x):
        raise ValueError(f"Gamma has a pole at {x}")
    return math.gamma(x)


def rgamma(x: float) -> float:
    """1/Gamma(x), equal to 0 at the poles."""
    return float(special.rgamma(x))


@dataclass(frozen=True)
class MittagLefflerEval:
    alpha: float
    x: float
    value: float
    method: str  # "series" or "asymptotic"


def _check_args(alpha: float, x: float) -> tuple[float, float]:
    alpha = float(alpha)
    x = float(x)
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"order must lie in (0, 1], got {alpha}")
    if not x <= 0.0:
        raise ValueError(f"argument must be nonpositive, got {x}")
    return alpha, x


def _log_envelope(alpha: float, z: float, k: np.ndarray) -> np.ndarray:
    # |1/Gamma(1 - alpha k)| <= Gamma(alpha k)/pi by reflection: log bound on |term k|
    return special.gammaln(alpha * k) - k * math.log(z) - math.log(math.pi)


def _asymptotic_order(alpha: float, z: float) -> tuple[int, float]:
    """Truncation order (at least 2) and the envelope of the first omitted term.

    The expansion stops at the smallest term envelope, or earlier once the
    terms are negligible next to the leading one.
    """
    k = np.arange(1, _MAX_ASYMPTOTIC_TERMS + 1, dtype=float)
    logenv = _log_envelope(alpha, z, k)
    order = int(np.argmin(logenv[1:])) + 2
    negligible = np.nonzero(logenv[2:] < logenv[0] - 40.0)[0]
    if negligible.size:
        order = min(order, int(negligible[0]) + 2)
    order = min(order, _MAX_ASYMPTOTIC_TERMS - 1)
    return order, float(np.exp(logenv[order]))


def ml_asymptotic(alpha: float, x: float, order: int | None = None) -> float:
    """Algebraic expansion ``-sum_k x**(-k) / Gamma(1 - alpha k)``.

    ``order=2`` gives the two-term form ``-1/(x Gamma(1-alpha)) - 1/(x^2 Gamma(1-2 alpha))``;
    by default the expansion is truncated where its terms stop decreasing.
    """
    alpha, x = _check_args(alpha, x)
    if x == 0.0:
        raise ValueError("asymptotic expansion undefined at 0")
    z = -x
    if order is None:
        order, _ = _asymptotic_order(alpha, z)
    terms = [-(x ** -k) * rgamma(1.0 - alpha * k) for k in range(1, order + 1)]
    return math.fsum(terms)


def _series_peak(alpha: float, z: float) -> tuple[float, int]:
    """Natural log and index of the largest series term z^k / Gamma(alpha k + 1)."""
    k = np.arange(0, MAX_SERIES_TERMS, dtype=float)
    logs = k * math.log(z) - special.gammaln(alpha * k + 1.0)
    i = int(np.argmax(logs))
    return float(logs[i]), i


class SeriesNotConverged(ArithmeticError):
    pass


def ml_series(alpha: float, x: float) -> float:
    """Power series of E_alpha at ``x <= 0``.

    Terms are summed with :func:`math.fsum` while cancellation is mild, and in
    mpmath with enough digits to absorb it otherwise.
    """
    alpha, x = _check_args(alpha, x)
    if x == 0.0:
        return 1.0
    z = -x
    peak_log, k_peak = _series_peak(alpha, z)
    peak = peak_log / math.log(10.0)
    if peak < 1.0:
        lz = math.log(z)
        terms = []
        for k in range(MAX_SERIES_TERMS):
            mag = math.exp(k * lz - math.lgamma(alpha * k + 1.0))
            terms.append(-mag if k % 2 else mag)
            if k > k_peak and mag < 1e-18:
                return math.fsum(terms)
        raise SeriesNotConverged(f"series did not converge for alpha={alpha}, x={x}")
    with mpmath.workdps(int(peak) + 30):
        xm = mpmath.mpf(x)
        am = mpmath.mpf(alpha)
        total = mpmath.mpf(0)
        power = mpmath.mpf(1)
        tol = mpmath.mpf(10) ** (-int(peak) - 25)
        for k in range(MAX_SERIES_TERMS):
            term = power * mpmath.rgamma(am * k + 1)
            total += term
            if k > k_peak and abs(term) < tol:
                return float(total)
            power *= xm
    raise SeriesNotConverged(f"series did not converge for alpha={alpha}, x={x}")


@lru_cache(maxsize=256)
def switchover(alpha: float) -> float:
    """Smallest |x| from which the asymptotic branch is used.

    Chosen so that the first omitted asymptotic term is below 1e-14; the
    branches then agree far inside 1e-8 (checked in the test suite).
    """
    alpha = float(alpha)
    lo, hi = 0.5, 1.0
    while _asymptotic_order(alpha, hi)[1] > _ASYMPTOTIC_TOL:
        lo, hi = hi, hi * 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _asymptotic_order(alpha, mid)[1] > _ASYMPTOTIC_TOL:
            lo = mid
        else:
            hi = mid
    return hi


def ml_eval(alpha: float, x: float) -> MittagLefflerEval:
    alpha, x = _check_args(alpha, x)
    if x == 0.0:
        return MittagLefflerEval(alpha, x, 1.0, "series")
    if alpha == 1.0:
        # the series sums to exp(x) in closed form
        return MittagLefflerEval(alpha, x, math.exp(x), "series")
    if -x < switchover(alpha):
        try:
            return MittagLefflerEval(alpha, x, ml_series(alpha, x), "series")
        except SeriesNotConverged:
            pass
    return MittagLefflerEval(alpha, x, ml_asymptotic(alpha, x), "asymptotic")


def mittag_leffler(alpha: float, x):
    """E_alpha(x) for 0 < alpha <= 1 and x <= 0; accepts scalars or arrays."""
    if np.ndim(x) == 0:
        return ml_eval(alpha, x).value
    arr = np.asarray(x, dtype=float)
    out = np.empty(arr.shape)
    for idx, xi in np.ndenumerate(arr):
        out[idx] = ml_eval(alpha, xi).value
    return out
