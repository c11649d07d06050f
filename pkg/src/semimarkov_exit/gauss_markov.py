"""Gauss-Markov specifications and the time-change calculus between them.

A Gauss-Markov process G with mean m and triangular covariance
``c(s, t) = u(s) v(t)`` (s <= t) can be written ``G = m + v W(r)`` with
``r = u/v``.  Two such processes are then related by a deterministic time
map ``rho`` and a space factor ``phi``; first-passage densities and
thresholds move along the same maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize, special

from .rng_stable import RandomStream


class RatioNotInvertible(ValueError):
    """The source ratio leaves the range of the target ratio."""


@dataclass(frozen=True)
class GaussMarkovSpec:
    """Mean, covariance factors and ratio function of a Gauss-Markov process.

    Callables accept floats or numpy arrays.  ``ratio_inverse`` and
    ``ratio_second_deriv`` are optional; missing inverses fall back to
    bisection.  Specs sharing a non-None ``cov_key`` have identical u and v.
    """

    mean: Callable
    cov_u: Callable
    cov_v: Callable
    ratio: Callable
    ratio_deriv: Callable
    ratio_inverse: Callable | None = None
    ratio_second_deriv: Callable | None = None
    ratio_sup: float = math.inf
    cov_key: tuple | None = None
    name: str = "gauss-markov"

    def covariance(self, s, t):
        lo, hi = np.minimum(s, t), np.maximum(s, t)
        return self.cov_u(lo) * self.cov_v(hi)

    def variance(self, t):
        return self.cov_u(t) * self.cov_v(t)


def wiener_spec(drift: float = 0.0) -> GaussMarkovSpec:
    drift = float(drift)
    return GaussMarkovSpec(
        mean=lambda t: drift * np.asarray(t, dtype=float),
        cov_u=lambda t: np.asarray(t, dtype=float) * 1.0,
        cov_v=lambda t: np.ones_like(np.asarray(t, dtype=float)),
        ratio=lambda t: np.asarray(t, dtype=float) * 1.0,
        ratio_deriv=lambda t: np.ones_like(np.asarray(t, dtype=float)),
        ratio_inverse=lambda s: np.asarray(s, dtype=float) * 1.0,
        ratio_second_deriv=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
        cov_key=("wiener",),
        name=f"wiener(drift={drift})",
    )


def _ou_factors(theta: float, sigma: float) -> dict:
    def u(t):
        t = np.asarray(t, dtype=float)
        with np.errstate(over="ignore"):
            return sigma * theta / 2.0 * (np.exp(t / theta) - np.exp(-t / theta))

    def v(t):
        return sigma * np.exp(-np.asarray(t, dtype=float) / theta)

    def r(t):
        with np.errstate(over="ignore"):
            return theta / 2.0 * np.expm1(2.0 * np.asarray(t, dtype=float) / theta)

    def r_inv(s):
        return theta / 2.0 * np.log1p(2.0 * np.asarray(s, dtype=float) / theta)

    def r_dot(t):
        with np.errstate(over="ignore"):
            return np.exp(2.0 * np.asarray(t, dtype=float) / theta)

    def r_ddot(t):
        with np.errstate(over="ignore"):
            return 2.0 / theta * np.exp(2.0 * np.asarray(t, dtype=float) / theta)

    return dict(cov_u=u, cov_v=v, ratio=r, ratio_deriv=r_dot, ratio_inverse=r_inv,
                ratio_second_deriv=r_ddot, cov_key=("ou", float(theta), float(sigma)))


def _check_positive(**kw):
    for k, v in kw.items():
        if not (v > 0 and math.isfinite(v)):
            raise ValueError(f"{k} must be positive and finite, got {v}")


def ou_spec(theta: float, sigma: float) -> GaussMarkovSpec:
    """Zero-mean OU process ``dU = -U/theta dt + sigma dW`` started at 0."""
    theta, sigma = float(theta), float(sigma)
    _check_positive(theta=theta, sigma=sigma)
    return GaussMarkovSpec(mean=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
                           name=f"ou(theta={theta}, sigma={sigma})",
                           **_ou_factors(theta, sigma))


def ou_type_spec(theta: float, sigma: float, mean: Callable, name: str) -> GaussMarkovSpec:
    """OU covariance with an arbitrary mean function (used by the LIF model)."""
    theta, sigma = float(theta), float(sigma)
    _check_positive(theta=theta, sigma=sigma)
    return GaussMarkovSpec(mean=mean, name=name, **_ou_factors(theta, sigma))


@dataclass(frozen=True)
class Threshold:
    """Boundary ``S(t)`` of the open set ``{x < S(t)}``."""

    s_fn: Callable
    upper_bound: float | None = None

    def __call__(self, t):
        return self.s_fn(t)


def constant_threshold(level: float) -> Threshold:
    level = float(level)
    return Threshold(lambda t: np.full(np.shape(t), level) if np.ndim(t) else level,
                     upper_bound=level)


@dataclass(frozen=True)
class TransformPair:
    """Time map ``rho`` and space factor ``phi`` with ``G1 = m1 + phi (G2 - m2)(rho)``."""

    rho: Callable
    phi: Callable
    rho_deriv: Callable
    rho_inverse: Callable
    rho_second_deriv: Callable | None = None
    rho_deriv_limit: float | None = None  # lim rho'(t) as t -> inf, when known
    identity: bool = False


def _monotone_inverse(fn: Callable, s: float, tol: float = 1e-10) -> float:
    """Solve ``fn(t) = s`` for increasing ``fn`` with ``fn(0) <= s``; bracket grown geometrically."""
    if s <= fn(0.0):
        return 0.0
    hi = 1.0
    while fn(hi) < s:
        hi *= 2.0
        if hi > 1e300:
            raise RatioNotInvertible(f"value {s} is outside the range of the time map")
    return optimize.brentq(lambda t: fn(t) - s, 0.0, hi, xtol=tol * 1e-3, rtol=4 * np.finfo(float).eps)


def _vectorize_inverse(fn: Callable) -> Callable:
    def inv(s):
        if np.ndim(s) == 0:
            return _monotone_inverse(lambda t: float(fn(t)), float(s))
        arr = np.asarray(s, dtype=float)
        return np.array([_monotone_inverse(lambda t: float(fn(t)), x) for x in arr.ravel()]).reshape(arr.shape)
    return inv


def identity_pair() -> TransformPair:
    def one(t):
        return np.ones_like(np.asarray(t, dtype=float)) if np.ndim(t) else 1.0

    def same(t):
        return t

    def zero(t):
        return np.zeros_like(np.asarray(t, dtype=float)) if np.ndim(t) else 0.0

    return TransformPair(rho=same, phi=one, rho_deriv=one, rho_inverse=same,
                         rho_second_deriv=zero, rho_deriv_limit=1.0, identity=True)


def doob_transform(g: GaussMarkovSpec, kappa: float = 1.0) -> TransformPair:
    """Wiener representation ``G = m + phi W(rho)`` with ``rho = kappa r``, ``phi = v/sqrt(kappa)``."""
    kappa = float(kappa)
    _check_positive(kappa=kappa)
    root = math.sqrt(kappa)
    inv = g.ratio_inverse if g.ratio_inverse is not None else _vectorize_inverse(g.ratio)
    second = None
    if g.ratio_second_deriv is not None:
        second = lambda t: kappa * g.ratio_second_deriv(t)  # noqa: E731
    return TransformPair(
        rho=lambda t: kappa * g.ratio(t),
        phi=lambda t: g.cov_v(t) / root,
        rho_deriv=lambda t: kappa * g.ratio_deriv(t),
        rho_inverse=lambda s: inv(np.asarray(s, dtype=float) / kappa),
        rho_second_deriv=second,
    )


def gm_transform(g1: GaussMarkovSpec, g2: GaussMarkovSpec) -> TransformPair:
    """Maps with ``G1(t) = m1(t) + phi(t) (G2(rho(t)) - m2(rho(t)))`` in one-dimensional laws.

    ``rho = r2^{-1} o r1`` and ``phi = v1 / v2(rho)``.  Specs with the same
    covariance key give the identity pair exactly.
    """
    if g1 is g2 or (g1.cov_key is not None and g1.cov_key == g2.cov_key):
        return identity_pair()

    r2_inv = g2.ratio_inverse if g2.ratio_inverse is not None else _vectorize_inverse(g2.ratio)
    sup2 = g2.ratio_sup

    def rho(t):
        r1 = g1.ratio(t)
        # an infinite sup only bounds finite ratios (overflowed ratios pass through as inf)
        if math.isfinite(sup2) and np.any(np.asarray(r1) >= sup2):
            raise RatioNotInvertible(f"source ratio exceeds sup of target ratio ({sup2})")
        return r2_inv(r1)

    def phi(t):
        return g1.cov_v(t) / g2.cov_v(rho(t))

    def rho_deriv(t):
        return g1.ratio_deriv(t) / g2.ratio_deriv(rho(t))

    if g1.ratio_inverse is not None:
        def rho_inverse(s):
            return g1.ratio_inverse(g2.ratio(s))
    else:
        r1_inv = _vectorize_inverse(g1.ratio)

        def rho_inverse(s):
            return r1_inv(g2.ratio(s))

    second = None
    if g1.ratio_second_deriv is not None and g2.ratio_second_deriv is not None:
        def second(t):
            # differentiate r1'(t) / r2'(rho(t))
            q = rho(t)
            d2 = g2.ratio_deriv(q)
            return (g1.ratio_second_deriv(t) - g1.ratio_deriv(t) * g2.ratio_second_deriv(q) * rho_deriv(t) / d2) / d2

    return TransformPair(rho=rho, phi=phi, rho_deriv=rho_deriv, rho_inverse=rho_inverse,
                         rho_second_deriv=second)


def transform_threshold(g1: GaussMarkovSpec, g2: GaussMarkovSpec, s1: Threshold) -> Threshold:
    """Threshold for ``G2`` whose crossing time is the image under ``rho`` of the crossing of ``s1`` by ``G1``."""
    if g1 is g2:
        return s1
    pair = gm_transform(g1, g2)

    def s2(t):
        tau = pair.rho_inverse(t)
        return (s1(tau) - g1.mean(tau)) / pair.phi(tau) + g2.mean(t)

    bound = _scan_upper_bound(lambda tau: (s1(tau) - g1.mean(tau)) / pair.phi(tau) + g2.mean(pair.rho(tau)))
    return Threshold(s2, upper_bound=bound)


def _scan_grid(t_max: float = 1e6, n: int = 600) -> np.ndarray:
    return np.concatenate(([0.0], np.geomspace(1e-6, t_max, n)))


def _scan_upper_bound(fn: Callable, t_max: float = 1e6) -> float | None:
    """Max of ``fn`` over a geometric scan, or None if the scan suggests growth or blows up."""
    with np.errstate(all="ignore"):
        vals = np.asarray(fn(_scan_grid(t_max)), dtype=float)
    if not np.all(np.isfinite(vals)):
        return None
    # bounded-looking: the last stretch of the scan never tops what came before
    head, tail = vals[:-20], vals[-20:]
    scale = 1.0 + np.max(np.abs(vals))
    if np.max(tail) > np.max(head) + 1e-9 * scale:
        return None
    return float(np.max(vals))


def transform_fpt_density(pair: TransformPair, f2: Callable) -> Callable:
    """Density ``t -> rho'(t) f2(rho(t))`` of the source first-passage time."""
    if pair.identity:
        return f2

    def f1(t):
        dens = f2(pair.rho(t))
        with np.errstate(invalid="ignore"):
            out = pair.rho_deriv(t) * dens
        # rho' overflows only where the target density has already vanished
        return np.where(dens == 0.0, 0.0, out) if np.ndim(out) else (0.0 if dens == 0.0 else out)

    return f1


def wiener_fpt_density(c: float) -> Callable:
    """Levy density of the passage time of standard W from 0 to ``c > 0``."""
    c = float(c)
    _check_positive(c=c)

    def f(t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = c / math.sqrt(2.0 * math.pi) * np.exp(-c * c / (2.0 * t)) / t ** 1.5
        return np.where(t > 0, out, 0.0)

    return f


def wiener_fpt_cdf(c: float) -> Callable:
    c = float(c)
    _check_positive(c=c)

    def F(t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(t > 0, special.erfc(c / np.sqrt(2.0 * np.maximum(t, 1e-300))), 0.0)

    return F


def linear_boundary_fpt_cdf(a: float, b: float, t):
    """P(W hits ``a + b s`` before ``t``) for ``a > 0`` (Bachelier-Levy)."""
    t = np.asarray(t, dtype=float)
    st = np.sqrt(t)
    # exp(-2ab) * Phi(...) evaluated in log space to survive large |ab|
    second = np.exp(-2.0 * a * b + special.log_ndtr((b * t - a) / st))
    return special.ndtr(-(a + b * t) / st) + second


# finite-mean certificates ---------------------------------------------------

@dataclass(frozen=True)
class FiniteMeanTarget:
    kind: str  # "ou" or "drifted_wiener"
    theta: float | None = None
    sigma: float | None = None
    delta: float | None = None

    def spec(self) -> GaussMarkovSpec:
        if self.kind == "ou":
            return ou_spec(self.theta, self.sigma)
        if self.kind == "drifted_wiener":
            return wiener_spec(self.delta)
        raise ValueError(f"unknown target {self.kind!r}")


def ou_target(theta: float, sigma: float) -> FiniteMeanTarget:
    _check_positive(theta=theta, sigma=sigma)
    return FiniteMeanTarget("ou", theta=float(theta), sigma=float(sigma))


def drifted_wiener_target(delta: float) -> FiniteMeanTarget:
    _check_positive(delta=delta)
    return FiniteMeanTarget("drifted_wiener", delta=float(delta))


@dataclass(frozen=True)
class FiniteMeanVerdict:
    certified: bool
    rho_deriv_inf: float | None
    k: float
    threshold_bound: float | None
    notes: tuple = field(default_factory=tuple)

    @property
    def verdict(self) -> str:
        return "finite-mean-certified" if self.certified else "inconclusive"


def check_finite_mean(g: GaussMarkovSpec, s: Threshold, target: FiniteMeanTarget,
                      k: float = 1.0, t_max: float = 1e6,
                      rho_deriv_limit: float | None = None,
                      threshold_bound: float | None = None) -> FiniteMeanVerdict:
    """Sufficient test for ``E[T] < inf``; never concludes that the mean is infinite.

    Certifies when the time map to ``target`` has a positive infimum of
    ``rho'`` on ``[k, t_max]`` that does not decay at the end of the scan
    (or a positive limit is known), and the transformed threshold is bounded
    above (by scan or by ``threshold_bound``).
    """
    notes = []
    g2 = target.spec()
    if target.kind == "drifted_wiener" and float(np.asarray(s(0.0))) - float(np.asarray(g.mean(0.0))) <= 0:
        notes.append("threshold does not start above the mean")
        return FiniteMeanVerdict(False, None, k, None, tuple(notes))
    try:
        pair = gm_transform(g, g2)
    except RatioNotInvertible as exc:
        return FiniteMeanVerdict(False, None, k, None, (str(exc),))

    grid = np.geomspace(k, t_max, 400)
    with np.errstate(all="ignore"):
        try:
            rd = np.asarray(pair.rho_deriv(grid), dtype=float) * np.ones_like(grid)
        except RatioNotInvertible as exc:
            return FiniteMeanVerdict(False, None, k, None, (str(exc),))
    rd = np.where(np.isposinf(rd), np.finfo(float).max, rd)
    limit = rho_deriv_limit if rho_deriv_limit is not None else pair.rho_deriv_limit
    inf_rd = None
    rho_ok = False
    if np.all(np.isfinite(rd)):
        inf_rd = float(np.min(rd))
        if limit is not None:
            inf_rd = min(inf_rd, float(limit))
            rho_ok = inf_rd > 0
        else:
            # without a known limit, demand the scan is not still decaying at its end
            rho_ok = inf_rd > 0 and rd[-1] >= rd[-2] * (1 - 1e-12)
            if not rho_ok and inf_rd > 0:
                notes.append("rho' still decreasing at end of scan; supply rho_deriv_limit")
    else:
        notes.append("rho' not finite on scan grid")
    if not rho_ok:
        notes.append("no positive infimum of rho' certified")

    bound = threshold_bound
    if bound is None:
        try:
            bound = _scan_upper_bound(
                lambda tau: (s(tau) - g.mean(tau)) / pair.phi(tau) + g2.mean(pair.rho(tau)), t_max)
        except RatioNotInvertible:
            bound = None
    if bound is None:
        notes.append("transformed threshold not shown to be bounded above")
    return FiniteMeanVerdict(bool(rho_ok and bound is not None), inf_rd, k, bound, tuple(notes))


# small-time machinery -------------------------------------------------------

@dataclass(frozen=True)
class SmallTimeApproximant:
    C: float
    l1: float
    l2: float
    K1: float
    K2: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.K1 * np.sqrt(t) * np.exp(-self.K2 / t)


def time_map_limits(pair: TransformPair, h: float = 1e-4) -> tuple[float, float]:
    """``(l1, l2) = (rho'(0), rho''(0)/2)``; finite differences when no second derivative is given."""
    l1 = float(pair.rho_deriv(0.0))
    if pair.rho_second_deriv is not None:
        return l1, float(pair.rho_second_deriv(0.0)) / 2.0
    d = (float(pair.rho_deriv(2 * h)) - float(pair.rho_deriv(h))) / h
    return l1, d / 2.0


def small_time_approximant(C: float, l1: float, l2: float = 0.0) -> SmallTimeApproximant:
    """``H(t) = K1 sqrt(t) exp(-K2/t)`` matching ``int_0^{rho(t)} s^{-3/2} e^{-C/s} ds`` as t -> 0+.

    ``l1 = lim rho(t)/t`` and ``l2 = lim (rho(t) - l1 t)/t^2``.
    """
    C, l1, l2 = float(C), float(l1), float(l2)
    _check_positive(C=C)
    if not l1 > 0:
        raise ValueError(f"l1 must be positive, got {l1}")
    K2 = C / l1
    c_tilde = l1 ** -0.5 * math.exp(C * l2 / l1 ** 2)
    return SmallTimeApproximant(C, l1, l2, c_tilde / K2, K2)


def small_time_integral(C: float, rho: Callable, t):
    """``int_0^{rho(t)} s^{-3/2} e^{-C/s} ds = sqrt(pi/C) erfc(sqrt(C/rho(t)))``."""
    r = np.asarray(rho(t), dtype=float)
    return math.sqrt(math.pi / C) * special.erfc(np.sqrt(C / r))


@dataclass(frozen=True)
class SmallTimeEnvelopes:
    """Bounds ``C_i int_0^{r(t)} s^{-3/2} e^{-D_i/s} ds`` on ``F_G(t)`` for ``t`` in ``[0, delta]``.

    ``C = S/sqrt(2 pi)`` and ``D = S^2/2`` with ``S`` the largest (lower
    bound) or smallest (upper bound) Wiener-coordinate threshold on the window,
    so each envelope is the Levy passage CDF ``erfc(S/sqrt(2 r(t)))``.
    """

    delta: float
    s_min: float
    s_max: float
    ratio: Callable

    @property
    def C1(self) -> float:
        return self.s_max / math.sqrt(2.0 * math.pi)

    @property
    def D1(self) -> float:
        return self.s_max ** 2 / 2.0

    @property
    def C2(self) -> float:
        return self.s_min / math.sqrt(2.0 * math.pi)

    @property
    def D2(self) -> float:
        return self.s_min ** 2 / 2.0

    def lower(self, t):
        return special.erfc(self.s_max / np.sqrt(2.0 * np.asarray(self.ratio(t), dtype=float)))

    def upper(self, t):
        return special.erfc(self.s_min / np.sqrt(2.0 * np.asarray(self.ratio(t), dtype=float)))


def small_time_envelopes(g: GaussMarkovSpec, s: Threshold, delta: float,
                         n_scan: int = 2001) -> SmallTimeEnvelopes:
    """Envelope constants for the passage CDF of ``g`` over ``s`` on ``[0, delta]``."""
    t = np.linspace(0.0, float(delta), n_scan)
    sw = (np.asarray(s(t), dtype=float) - g.mean(t)) / g.cov_v(t)
    if not np.all(sw > 0):
        raise ValueError("threshold must stay above the mean on the window; shrink delta")
    return SmallTimeEnvelopes(float(delta), float(sw.min()), float(sw.max()), g.ratio)


# path simulation ------------------------------------------------------------

def simulate_doob_paths(g: GaussMarkovSpec, times, n_paths: int, stream: RandomStream) -> np.ndarray:
    """Exact samples of ``G`` at ``times`` via ``G = m + v W(r)``; shape ``(n_paths, len(times))``."""
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("times must be nonnegative and nondecreasing")
    r = g.ratio(times)
    dr = np.diff(np.concatenate(([0.0], r)))
    w = np.cumsum(stream.normal((n_paths, len(times))) * np.sqrt(dr), axis=1)
    return g.mean(times) + g.cov_v(times) * w
