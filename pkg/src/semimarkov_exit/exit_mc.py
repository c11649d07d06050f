"""Monte Carlo exit times of time-changed processes ``X(t) = M(L(t))``.

``M`` is simulated on the operational grid ``y_m = m*dy`` together with the
subordinator ``sigma~(y_m)``.  If ``m*`` is the first operational index with
``M(y_m) >= S(y_m)``, the calendar exit is the first grid time
``t_n = n*dt`` with ``t_n > sigma~(y_{m*-1})``: the grid form of
``exit = sigma(T-)``.  Equivalently it is the first ``t_n`` whose inverse
subordinator ``L~(t_n)`` has reached ``y_{m*}``.

Each trajectory owns the random stream ``(seed, path_index)`` and consumes it
block by block: model noise first, then subordinator increments.
"""

from __future__ import annotations

import csv
import math
import multiprocessing
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np
from scipy import signal

from .gauss_markov import GaussMarkovSpec, Threshold
from .rng_stable import RandomStream
from .subordination import BernsteinFunction, _n_steps, sample_increments

FIRST_BLOCK = 256
MAX_BLOCK = 65536


# path models on the operational clock ---------------------------------------

class PathModel(Protocol):
    x0: float

    def start(self, stream: RandomStream): ...

    def advance(self, state, m0: int, n: int, dy: float, stream: RandomStream): ...


@dataclass(frozen=True)
class LinearSDE:
    """Euler scheme for ``dX = (-X/theta + forcing(y)) dy + sigma dW``.

    ``theta = inf`` removes the leak, which makes the scheme exact for a
    Wiener process with constant drift.  ``forcing`` is a constant or a
    vectorized callable of operational time.
    """

    theta: float
    forcing: float | Callable
    sigma: float
    x0: float = 0.0

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive (use inf for no leak)")
        if not self.sigma >= 0:
            raise ValueError("sigma must be nonnegative")

    def start(self, stream):
        return float(self.x0)

    def advance(self, state, m0, n, dy, stream):
        z = stream.normal(n)
        if callable(self.forcing):
            drive = np.asarray(self.forcing((m0 + np.arange(n)) * dy), dtype=float) * dy
        else:
            drive = float(self.forcing) * dy
        b = drive + self.sigma * math.sqrt(dy) * z
        a = 1.0 - dy / self.theta
        x, _ = signal.lfilter([1.0], [1.0, -a], b, zi=[a * state])
        return x, float(x[-1])


@dataclass(frozen=True)
class GaussMarkovPathModel:
    """Exact grid samples of ``G = m + v W(r)`` for a started-at-mean spec."""

    spec: GaussMarkovSpec

    @property
    def x0(self) -> float:
        return float(self.spec.mean(0.0))

    def start(self, stream):
        return (0.0, 0.0)  # (r at last grid point, W at that r)

    def advance(self, state, m0, n, dy, stream):
        z = stream.normal(n)
        y = (m0 + 1 + np.arange(n)) * dy
        r = np.asarray(self.spec.ratio(y), dtype=float)
        dr = np.diff(np.concatenate(([state[0]], r)))
        w = state[1] + np.cumsum(np.sqrt(np.maximum(dr, 0.0)) * z)
        return self.spec.mean(y) + self.spec.cov_v(y) * w, (float(r[-1]), float(w[-1]))


@dataclass(frozen=True)
class ExponentialExit:
    """Test double with operational exit time ``T ~ Exp(h)``.

    The path is the ramp ``y / T``, which first reaches level 1 at ``y = T``;
    pair it with ``constant_threshold(1.0)``.
    """

    h: float = 1.0
    x0: float = 0.0

    def start(self, stream):
        return float(stream.exponential()) / self.h

    def advance(self, state, m0, n, dy, stream):
        return (m0 + 1 + np.arange(n)) * dy / state, state


# configuration and results --------------------------------------------------

@dataclass(frozen=True)
class ExitExperimentConfig:
    model: PathModel
    bernstein: BernsteinFunction
    threshold: Threshold
    dt: float = 0.01
    dy: float = 0.01
    horizon: float = 100.0
    n_paths: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if not (self.dt > 0 and self.dy > 0):
            raise ValueError("dt and dy must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if int(self.n_paths) < 1:
            raise ValueError("n_paths must be at least 1")
        if not float(np.asarray(self.threshold(0.0))) > self.model.x0:
            raise ValueError("threshold must lie strictly above the starting point")
        if self.bernstein.kind == "custom":
            raise NotImplementedError("no exact sampler for a custom Bernstein function")

    @property
    def n_grid(self) -> int:
        """Index of the last calendar grid point."""
        return _n_steps(self.horizon, self.dt)


@dataclass(frozen=True)
class ExitTrace:
    """Operational exit index, subordinator left limit there, calendar exit index.

    ``n_exit`` is ``None`` for paths censored at the horizon.
    """

    m_star: int | None
    sigma_left: float | None
    n_exit: int | None

    @property
    def censored(self) -> bool:
        return self.n_exit is None


def _first_index_above(s: float, dt: float) -> int:
    """Smallest n with ``n*dt > s``, with the same float comparisons as the grid."""
    n = int(math.floor(s / dt)) + 1
    while n > 0 and (n - 1) * dt > s:
        n -= 1
    while n * dt <= s:
        n += 1
    return n


def _first_indices_above(s: np.ndarray, dt: float) -> np.ndarray:
    n = np.floor(s / dt).astype(np.int64) + 1
    n = np.where((n - 1) * dt > s, n - 1, n)
    n = np.where(n * dt <= s, n + 1, n)
    return n


class _RangeMin:
    """Sparse table for range-minimum queries on a fixed array."""

    def __init__(self, values: np.ndarray):
        levels = [np.asarray(values, dtype=float)]
        width = 1
        while 2 * width <= len(values):
            prev = levels[-1]
            levels.append(np.minimum(prev[:-width], prev[width:]))
            width *= 2
        self.levels = levels

    def query(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        span = hi - lo + 1
        k = np.floor(np.log2(span)).astype(np.int64)
        out = np.empty(len(lo))
        for level in np.unique(k):
            sel = k == level
            tab = self.levels[level]
            out[sel] = np.minimum(tab[lo[sel]], tab[hi[sel] - (1 << level) + 1])
        return out


def _subordinator_block(f: BernsteinFunction, m0: int, n: int, dy: float,
                        start: float, stream: RandomStream) -> np.ndarray:
    if f.kind == "drift":
        # identity clock: keep sigma~(y_m) = m*dy exactly so that t_n and y_m coincide
        return (m0 + 1 + np.arange(n)) * dy
    return start + np.cumsum(sample_increments(f, dy, n, stream))


def trace_exit(config: ExitExperimentConfig, stream: RandomStream,
               family: np.ndarray | None = None, _rmq: _RangeMin | None = None) -> ExitTrace:
    """Run one trajectory from ``stream``.

    Without ``family`` the boundary is ``config.threshold`` on the operational
    clock.  With ``family`` (boundary values on the calendar grid
    ``t_0..t_N``) the process ``X(t_n) = M(L~(t_n))`` is compared with
    ``family[n]``; operational step m is seen at calendar indices
    ``n0(m)..n1(m)``, or at ``n0(m)`` alone when its jump spans no grid point.
    """
    dt, dy = config.dt, config.dy
    n_max = config.n_grid
    t_end = n_max * dt
    f = config.bernstein
    model = config.model
    if family is not None and _rmq is None:
        _rmq = _RangeMin(family)

    state = model.start(stream)
    m0 = 0
    sig0 = 0.0
    block = FIRST_BLOCK
    while True:
        x, state = model.advance(state, m0, block, dy, stream)
        sig = _subordinator_block(f, m0, block, dy, sig0, stream)
        left = np.concatenate(([sig0], sig[:-1]))  # sigma~(y_{m-1}) for each new step m

        if family is None:
            y = (m0 + 1 + np.arange(block)) * dy
            hits = np.flatnonzero(x >= config.threshold(y))
            if hits.size:
                j = int(hits[0])
                n = _first_index_above(float(left[j]), dt)
                return ExitTrace(m0 + 1 + j, float(left[j]), n if n <= n_max else None)
        else:
            n0 = _first_indices_above(left, dt)
            n1 = _first_indices_above(sig, dt) - 1
            live = n0 <= n_max
            hi = np.minimum(np.maximum(n0, n1), n_max)
            hit = np.zeros(block, dtype=bool)
            if live.any():
                lo_l, hi_l = n0[live], hi[live]
                hit[live] = x[live] >= _rmq.query(lo_l, hi_l)
            hits = np.flatnonzero(hit)
            if hits.size:
                j = int(hits[0])
                seg = family[n0[j]:hi[j] + 1]
                n = int(n0[j] + np.argmax(x[j] >= seg))
                return ExitTrace(m0 + 1 + j, float(left[j]), n)

        m0 += block
        sig0 = float(sig[-1])
        if sig0 >= t_end:
            # every later step has sigma~ left limit >= t_N, so its exit index exceeds N
            return ExitTrace(None, None, None)
        block = min(2 * block, MAX_BLOCK)


def path_stream(config: ExitExperimentConfig, index: int) -> RandomStream:
    return RandomStream(config.seed, index)


def simulate_exit_time(config: ExitExperimentConfig, stream: RandomStream) -> float:
    """Calendar exit time, or ``inf`` when censored at the horizon."""
    tr = trace_exit(config, stream)
    return math.inf if tr.censored else tr.n_exit * config.dt


def family_on_grid(config: ExitExperimentConfig, family: Callable) -> np.ndarray:
    t = np.arange(config.n_grid + 1) * config.dt
    vals = np.asarray(family(t), dtype=float) * np.ones_like(t)
    return vals


def simulate_moving_set_exit(config: ExitExperimentConfig, family: Callable,
                             stream: RandomStream) -> float:
    """First grid time with ``X(t_n) >= S_{t_n}``; ``inf`` when censored."""
    tr = trace_exit(config, stream, family=family_on_grid(config, family))
    return math.inf if tr.censored else tr.n_exit * config.dt


def _exit_indices(config: ExitExperimentConfig, start: int, stop: int,
                  family: np.ndarray | None = None) -> np.ndarray:
    rmq = _RangeMin(family) if family is not None else None
    out = np.empty(stop - start, dtype=np.int64)
    censored = config.n_grid + 1
    for k, i in enumerate(range(start, stop)):
        tr = trace_exit(config, path_stream(config, i), family, rmq)
        out[k] = censored if tr.censored else tr.n_exit
    return out


_SHARED: dict = {}


def _shard_worker(bounds):
    cfg, fam = _SHARED["config"], _SHARED["family"]
    return bounds[0], _exit_indices(cfg, bounds[0], bounds[1], fam)


def exit_indices(config: ExitExperimentConfig, family: Callable | None = None,
                 workers: int = 1) -> np.ndarray:
    """Calendar exit index of every path; censored paths get ``n_grid + 1``.

    Paths are split into shards; with ``workers > 1`` the shards run in
    forked processes.  Results do not depend on the sharding.
    """
    fam = family_on_grid(config, family) if family is not None else None
    n = int(config.n_paths)
    if workers <= 1 or n < 2:
        return _exit_indices(config, 0, n, fam)
    n_shards = min(n, 4 * workers)
    edges = np.linspace(0, n, n_shards + 1).astype(int)
    bounds = [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    _SHARED.update(config=config, family=fam)
    try:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(workers) as pool:
            parts = dict(pool.map(_shard_worker, bounds))
    finally:
        _SHARED.clear()
    return np.concatenate([parts[a] for a, _ in bounds])


def exit_times(config: ExitExperimentConfig, family: Callable | None = None,
               workers: int = 1) -> np.ndarray:
    """Exit times with ``inf`` for censored paths."""
    idx = exit_indices(config, family, workers)
    out = idx * config.dt
    return np.where(idx > config.n_grid, np.inf, out)


@dataclass(frozen=True)
class SurvivalEstimate:
    """Empirical survival on the calendar grid ``t_i = i*dt``, ``i = 0..N``."""

    grid: np.ndarray
    n_alive: np.ndarray
    n_paths: int
    n_censored: int
    seed: int | None = None

    @property
    def survival(self) -> np.ndarray:
        return self.n_alive / self.n_paths

    @property
    def stderr(self) -> np.ndarray:
        s = self.survival
        return np.sqrt(s * (1.0 - s) / self.n_paths)

    @property
    def cdf(self) -> np.ndarray:
        return 1.0 - self.survival

    @property
    def n_exits(self) -> int:
        return self.n_paths - self.n_censored

    def index_of(self, t: float) -> int:
        step = self.grid[1] - self.grid[0] if len(self.grid) > 1 else 1.0
        i = int(round(t / step))
        if i < 0 or i >= len(self.grid) or abs(self.grid[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t = {t} is not on the estimate grid")
        return i

    def at(self, t: float) -> float:
        return float(self.survival[self.index_of(t)])

    def merge(self, other: "SurvivalEstimate") -> "SurvivalEstimate":
        if len(self.grid) != len(other.grid) or not np.array_equal(self.grid, other.grid):
            raise ValueError("cannot merge estimates on different grids")
        return SurvivalEstimate(self.grid, self.n_alive + other.n_alive,
                                self.n_paths + other.n_paths,
                                self.n_censored + other.n_censored, self.seed)

    def to_csv(self, path, seed: int | None = None) -> None:
        seed = self.seed if seed is None else seed
        with open(path, "w", newline="") as fh:
            fh.write(f"# seed={seed}\n")
            w = csv.writer(fh)
            w.writerow(["t", "survival", "stderr", "n_alive"])
            for t, s, e, a in zip(self.grid, self.survival, self.stderr, self.n_alive):
                w.writerow([f"{t:.10g}", repr(float(s)), repr(float(e)), int(a)])


def survival_from_indices(indices: np.ndarray, n_grid: int, dt: float,
                          seed: int | None = None) -> SurvivalEstimate:
    indices = np.asarray(indices, dtype=np.int64)
    counts = np.bincount(indices, minlength=n_grid + 2)
    exited_by = np.cumsum(counts)[: n_grid + 1]  # exits at index <= i
    n_alive = len(indices) - exited_by
    return SurvivalEstimate(np.arange(n_grid + 1) * dt, n_alive.astype(np.int64),
                            len(indices), int(counts[n_grid + 1]), seed)


def estimate_survival(config: ExitExperimentConfig, family: Callable | None = None,
                      workers: int = 1) -> SurvivalEstimate:
    idx = exit_indices(config, family, workers)
    return survival_from_indices(idx, config.n_grid, config.dt, config.seed)


# spike trains ---------------------------------------------------------------

@dataclass(frozen=True)
class SpikeTrainSample:
    """Spike times per path; ``censored[i]`` marks a train cut at the ISI horizon."""

    spike_times: tuple
    censored: tuple

    @property
    def isi(self) -> list:
        return [np.diff(np.concatenate(([0.0], s))) for s in self.spike_times]

    def all_isi(self) -> np.ndarray:
        parts = self.isi
        return np.concatenate(parts) if parts else np.empty(0)

    def to_csv(self, path, seed: int | None = None) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# seed={seed}\n")
            w = csv.writer(fh)
            w.writerow(["path_id", "spike_index", "spike_time"])
            for pid, times in enumerate(self.spike_times):
                for k, t in enumerate(times):
                    w.writerow([pid, k, f"{t:.10g}"])


def simulate_spike_train(config: ExitExperimentConfig, n_spikes: int,
                         stream: RandomStream) -> tuple[np.ndarray, bool]:
    """Spike times of one neuron with full renewal at each spike.

    After a spike both the membrane path (restarted from ``model.x0``) and the
    subordinator restart with fresh increments drawn from the same stream.
    Each inter-spike interval is capped by ``config.horizon``; a capped
    interval ends the train and sets the censoring flag.
    """
    if n_spikes < 1:
        raise ValueError("n_spikes must be at least 1")
    times = []
    now = 0.0
    for _ in range(n_spikes):
        tr = trace_exit(config, stream)
        if tr.censored:
            return np.array(times), True
        now += tr.n_exit * config.dt
        times.append(now)
    return np.array(times), False


def simulate_spike_trains(config: ExitExperimentConfig, n_spikes: int) -> SpikeTrainSample:
    trains, flags = [], []
    for i in range(int(config.n_paths)):
        t, c = simulate_spike_train(config, n_spikes, path_stream(config, i))
        trains.append(t)
        flags.append(c)
    return SpikeTrainSample(tuple(trains), tuple(flags))
