"""Closed-form tail and small-time predictors, and finite-sample diagnostics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exit_mc import SurvivalEstimate
from .special_fn import gamma_fn, mittag_leffler
from .subordination import BernsteinFunction, stable_bernstein

TAIL_KINDS = ("general", "finite-mean", "exponential-T", "bm-no-drift", "mittag-leffler")
RELIABLE_FRACTION = 0.01


class IndexHypothesisError(ValueError):
    pass


class ZeroSurvival(ValueError):
    """The empirical survival vanishes where a ratio was requested."""


@dataclass(frozen=True)
class TailPredictor:
    """Large-time survival model for the exit time of the time-changed process.

    ``params`` holds ``g`` and ``beta`` (general), ``C`` (finite-mean),
    ``h`` (exponential-T, mittag-leffler) or ``c`` (bm-no-drift).
    """

    kind: str
    bernstein: BernsteinFunction
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in TAIL_KINDS:
            raise ValueError(f"unknown predictor kind {self.kind!r}")
        a = self.bernstein.index_at_zero
        if not 0.0 <= a < 1.0:
            raise IndexHypothesisError(f"index of f at 0 must lie in [0, 1), got {a}")
        beta = self.params.get("beta", 1.0)
        if not 0.0 <= beta <= 1.0:
            raise IndexHypothesisError(f"index of g must lie in [0, 1], got {beta}")
        if self.kind == "mittag-leffler" and self.bernstein.kind != "stable":
            raise IndexHypothesisError("the Mittag-Leffler law needs a stable subordinator")

    @property
    def alpha(self) -> float:
        return self.bernstein.index_at_zero

    @property
    def power_law(self) -> bool:
        return self.kind in ("finite-mean", "exponential-T")


def general_predictor(g: Callable, beta: float, f: BernsteinFunction) -> TailPredictor:
    return TailPredictor("general", f, {"g": g, "beta": float(beta)})


def finite_mean_predictor(C: float, f: BernsteinFunction) -> TailPredictor:
    if not C > 0:
        raise ValueError("C must be positive")
    return TailPredictor("finite-mean", f, {"C": float(C)})


def exponential_predictor(h: float, f: BernsteinFunction) -> TailPredictor:
    if not h > 0:
        raise ValueError("h must be positive")
    return TailPredictor("exponential-T", f, {"h": float(h)})


def bm_no_drift_predictor(c: float, f: BernsteinFunction) -> TailPredictor:
    if not c > 0:
        raise ValueError("c must be positive")
    return TailPredictor("bm-no-drift", f, {"c": float(c)})


def mittag_leffler_predictor(h: float, alpha: float) -> TailPredictor:
    if not h > 0:
        raise ValueError("h must be positive")
    return TailPredictor("mittag-leffler", stable_bernstein(alpha), {"h": float(h)})


def predict_tail(p: TailPredictor, t):
    """Predicted ``P(exit > t)``; accepts scalars or arrays of ``t > 0``."""
    scalar = np.ndim(t) == 0
    t = np.asarray(t, dtype=float)
    a = p.alpha
    if p.kind == "mittag-leffler":
        if np.any(t < 0):
            raise ValueError("t must be nonnegative")
        out = mittag_leffler(a, -p.params["h"] * t ** a)
        return float(out) if scalar else out
    if np.any(t <= 0):
        raise ValueError("t must be positive")
    fl = np.asarray(p.bernstein(1.0 / t), dtype=float)
    if p.kind == "general":
        out = np.asarray(p.params["g"](fl), dtype=float) / gamma_fn(1.0 - a * p.params["beta"])
    elif p.kind == "finite-mean":
        out = p.params["C"] * fl / gamma_fn(1.0 - a)
    elif p.kind == "exponential-T":
        out = fl / (p.params["h"] * gamma_fn(1.0 - a))
    else:  # bm-no-drift
        out = -np.expm1(-p.params["c"] * np.sqrt(2.0 * fl)) / gamma_fn(1.0 - a / 2.0)
    return float(out) if scalar else out


@dataclass(frozen=True)
class ZeroPredictor:
    """Small-time model ``F0`` of the operational exit CDF, regularly varying at 0 with index ``rho``."""

    F0: Callable
    rho: float
    bernstein: BernsteinFunction

    def __post_init__(self):
        if not self.rho > 0:
            raise IndexHypothesisError("rho must be positive")
        if not self.bernstein.index_at_infinity > 0:
            raise IndexHypothesisError("index of f at infinity must be positive")


def predict_zero(p: ZeroPredictor, t):
    """``Gamma(1+rho)/Gamma(1+alpha rho) * F0(1/f(1/t))`` with alpha the index of f at infinity."""
    scalar = np.ndim(t) == 0
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("t must be positive")
    a = p.bernstein.index_at_infinity
    if p.bernstein.kind == "drift":
        inner = t  # f(l) = l, so 1/f(1/t) = t without rounding
    else:
        inner = 1.0 / np.asarray(p.bernstein(1.0 / t), dtype=float)
    out = gamma_fn(1.0 + p.rho) / gamma_fn(1.0 + a * p.rho) * np.asarray(p.F0(inner), dtype=float)
    return float(out) if scalar else out


@dataclass(frozen=True)
class DiagnosticRow:
    t: float
    RL: float
    R: float
    n_alive: int
    reliable: bool


def diagnostic_ratios(est: SurvivalEstimate, p: TailPredictor, times) -> list[DiagnosticRow]:
    """Log-ratio ``RL(t) = (log S(t) + log Gamma(1-alpha)) / log t`` and ``R(t) = S(t) / prediction``.

    ``RL`` is NaN for predictors that are not power laws.  Rows with fewer than
    1% of the paths still alive are flagged unreliable.
    """
    rows = []
    a = p.alpha
    for t in times:
        i = est.index_of(float(t))
        s = float(est.survival[i])
        if s <= 0.0:
            raise ZeroSurvival(f"empirical survival is zero at t = {t}")
        rl = (math.log(s) + math.lgamma(1.0 - a)) / math.log(t) if p.power_law else math.nan
        r = s / predict_tail(p, float(t))
        alive = int(est.n_alive[i])
        rows.append(DiagnosticRow(float(t), rl, r, alive, alive >= RELIABLE_FRACTION * est.n_paths))
    return rows


def write_diagnostics_csv(path, rows: list[DiagnosticRow], seed: int | None = None) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={seed}\n")
        w = csv.writer(fh)
        w.writerow(["t", "RL", "R", "n_alive", "reliable"])
        for r in rows:
            w.writerow([f"{r.t:.10g}", repr(r.RL), repr(r.R), r.n_alive, int(r.reliable)])


@dataclass(frozen=True)
class RapidDecayReport:
    times: tuple  # decreasing
    ratios: dict  # power n -> tuple of F(t_i)/t_i**n along ``times``
    strictly_decreasing: dict
    nonincreasing: dict

    @property
    def consistent_with_rapid_decay(self) -> bool:
        """Every ratio sequence shrinks (weakly) as t decreases."""
        return all(self.nonincreasing.values())

    @property
    def strictly_rapid(self) -> bool:
        return all(self.strictly_decreasing.values())


def rapid_decay_diagnostic(cdf, powers=(1, 2, 4), times=(0.4, 0.2, 0.1)) -> RapidDecayReport:
    """Ratios ``F(t)/t**n`` along a decreasing grid; a finite-sample proxy, not a limit claim.

    ``cdf`` is a :class:`SurvivalEstimate` or a callable CDF.
    """
    times = tuple(sorted((float(t) for t in times), reverse=True))
    if len(times) < 2:
        raise ValueError("need at least two times")
    if isinstance(cdf, SurvivalEstimate):
        step = cdf.grid[1] - cdf.grid[0]
        if times[-1] < step:
            raise ValueError("estimate grid is too coarse for the requested small times")
        values = np.array([1.0 - cdf.at(t) for t in times])
    else:
        values = np.array([float(cdf(t)) for t in times])
    ratios, strict, weak = {}, {}, {}
    for n in powers:
        r = values / np.array(times) ** n
        ratios[n] = tuple(float(v) for v in r)
        strict[n] = bool(np.all(np.diff(r) < 0))
        weak[n] = bool(np.all(np.diff(r) <= 0))
    return RapidDecayReport(times, ratios, strict, weak)
