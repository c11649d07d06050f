"""Bernstein functions, discretized subordinators and their inverses.

A subordinator path is built on the operational grid ``y_m = m*dy`` by
summing i.i.d. increments distributed as ``sigma(dy)``; the inverse
subordinator is read off that path on the calendar grid ``t_n = n*dt`` as
``L(t_n) = min{y_m : sigma(y_m) >= t_n}``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .rng_stable import RandomStream, sample_positive_stable
from .special_fn import gamma_fn


@dataclass(frozen=True)
class BernsteinFunction:
    """Laplace exponent ``f`` of a driftless subordinator plus its
    regular-variation indices at 0+ and at infinity.

    ``kind`` is ``"stable"`` (``f = lambda**alpha``), ``"custom"``, or
    ``"drift"``.  The last one is the degenerate ``f = lambda`` whose
    subordinator is ``sigma(y) = y``; it stands in for "no time change".
    """

    func: Callable
    index_at_zero: float
    index_at_infinity: float
    kind: str = "custom"
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in ("stable", "custom", "drift"):
            raise ValueError(f"unknown Bernstein kind {self.kind!r}")
        if not 0.0 <= self.index_at_zero <= 1.0:
            raise ValueError("index at zero must lie in [0, 1]")
        if not self.index_at_infinity > 0.0:
            raise ValueError("index at infinity must be positive")

    def __call__(self, lam):
        return self.func(lam)


def stable_bernstein(alpha: float) -> BernsteinFunction:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"stability index must lie in (0, 1), got {alpha}")
    return BernsteinFunction(lambda lam: np.power(lam, alpha), alpha, alpha,
                             kind="stable", alpha=alpha)


def drift_bernstein() -> BernsteinFunction:
    """Identity time change ``sigma(y) = y`` (test double for the Markov case)."""
    return BernsteinFunction(lambda lam: np.asarray(lam, dtype=float) * 1.0,
                             1.0, 1.0, kind="drift", alpha=1.0)


def check_bernstein_shape(f: BernsteinFunction, grid=None, tol: float = 1e-12) -> bool:
    """Spot-check ``f(0) = 0``, monotonicity and concavity on a grid."""
    if grid is None:
        grid = np.linspace(0.1, 10.0, 100)
    grid = np.asarray(grid, dtype=float)
    vals = np.asarray(f(grid), dtype=float)
    if abs(float(f(0.0))) > tol:
        return False
    if np.any(np.diff(vals) < -tol):
        return False
    # second differences on a possibly uneven grid
    h0 = np.diff(grid)[:-1]
    h1 = np.diff(grid)[1:]
    second = (vals[2:] - vals[1:-1]) / h1 - (vals[1:-1] - vals[:-2]) / h0
    return bool(np.all(second <= tol * (1.0 + np.abs(vals[1:-1]))))


def sample_increments(f: BernsteinFunction, dy: float, size: int,
                      stream: RandomStream) -> np.ndarray:
    """``size`` i.i.d. copies of ``sigma(dy)``.

    Stable increments use self-similarity, ``sigma(dy) = dy**(1/alpha) * sigma(1)``.
    """
    if f.kind == "stable":
        return dy ** (1.0 / f.alpha) * sample_positive_stable(f.alpha, stream, size)
    if f.kind == "drift":
        return np.full(size, float(dy))
    raise NotImplementedError("no exact sampler for a custom Bernstein function")


def levy_tail(f: BernsteinFunction, s: float) -> float:
    """Levy tail ``nu(s, inf)``; for ``f = lambda**alpha`` it is ``s**(-alpha)/Gamma(1-alpha)``."""
    if f.kind != "stable":
        raise NotImplementedError("Levy tail is only available for the stable kind")
    if not s > 0:
        raise ValueError("s must be positive")
    return s ** (-f.alpha) / gamma_fn(1.0 - f.alpha)


def _n_steps(horizon: float, step: float) -> int:
    # guard against 1/0.01 = 100.00000000000001 style rounding
    return max(int(math.ceil(horizon / step - 1e-9)), 0)


@dataclass(frozen=True)
class SubordinatorPath:
    step: float
    values: np.ndarray

    @property
    def grid(self) -> np.ndarray:
        return np.arange(len(self.values)) * self.step

    def to_csv(self, path) -> None:
        _write_path_csv(path, self.grid, self.values)


@dataclass(frozen=True)
class InverseSubordinatorPath:
    step: float
    values: np.ndarray
    indices: np.ndarray  # operational grid index m with values == m * dy

    @property
    def grid(self) -> np.ndarray:
        return np.arange(len(self.values)) * self.step

    def to_csv(self, path) -> None:
        _write_path_csv(path, self.grid, self.values)


def _write_path_csv(path, grid, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "value"])
        for t, v in zip(grid, values):
            w.writerow([repr(float(t)), repr(float(v))])


def simulate_subordinator(f: BernsteinFunction, dy: float, horizon_y: float,
                          stream: RandomStream) -> SubordinatorPath:
    if not dy > 0:
        raise ValueError("dy must be positive")
    if horizon_y < 0:
        raise ValueError("horizon must be nonnegative")
    if f.kind == "custom":
        raise NotImplementedError("no exact sampler for a custom Bernstein function")
    n = _n_steps(horizon_y, dy)
    inc = sample_increments(f, dy, n, stream)
    return SubordinatorPath(dy, np.concatenate(([0.0], np.cumsum(inc))))


class PathExhausted(RuntimeError):
    """The driving subordinator path never reaches a requested calendar time."""


def invert_path(path: SubordinatorPath, dt: float, horizon_t: float) -> InverseSubordinatorPath:
    """Inverse subordinator on ``t_n = n*dt``, ``n = 0..ceil(horizon_t/dt)``.

    Since the path is nondecreasing, the monotone scan from the previous
    answer is exactly a left-sided ``searchsorted``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = _n_steps(horizon_t, dt)
    t = np.arange(n + 1) * dt
    idx = np.searchsorted(path.values, t, side="left")
    if idx[-1] >= len(path.values):
        first = int(np.argmax(idx >= len(path.values)))
        raise PathExhausted(f"subordinator path ends before t = {t[first]}")
    return InverseSubordinatorPath(dt, idx * path.step, idx)


def simulate_inverse_subordinator(f: BernsteinFunction, dy: float, dt: float,
                                  horizon_t: float, stream: RandomStream,
                                  block_y: float = 1.0):
    """Grow a subordinator path in blocks of ``block_y`` operational time until it
    passes ``horizon_t``, then invert it.  Returns ``(sigma_path, L_path)``."""
    block = max(_n_steps(block_y, dy), 1)
    t_end = _n_steps(horizon_t, dt) * dt
    chunks = [np.zeros(1)]
    last = 0.0
    while last < t_end:
        inc = sample_increments(f, dy, block, stream)
        c = last + np.cumsum(inc)
        chunks.append(c)
        last = float(c[-1])
    path = SubordinatorPath(dy, np.concatenate(chunks))
    return path, invert_path(path, dt, horizon_t)
