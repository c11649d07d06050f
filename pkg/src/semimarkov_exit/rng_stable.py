"""One-sided stable variates and the random streams that feed them.

All samplers draw from a :class:`RandomStream`, a thin wrapper around a
Philox counter-based generator keyed by ``(seed, stream_id)``.  Distinct keys
give independent sequences, so every Monte Carlo trajectory can own its
stream without any coordination between workers.

Stable laws use the ``S(alpha, beta, gamma, delta; 1)`` parametrization.
"""

from __future__ import annotations

import math

import numpy as np

_U64 = 1 << 64


class RandomStream:
    """Sequentially consumed random stream identified by ``(seed, stream_id)``.

    Two streams built from the same pair produce bit-identical sequences.
    """

    __slots__ = ("seed", "stream_id", "generator")

    def __init__(self, seed: int, stream_id: int = 0):
        seed = int(seed)
        stream_id = int(stream_id)
        if not (0 <= seed < _U64 and 0 <= stream_id < _U64):
            raise ValueError("seed and stream_id must be unsigned 64-bit integers")
        self.seed = seed
        self.stream_id = stream_id
        key = np.array([seed, stream_id], dtype=np.uint64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id})"

    def spawn(self, stream_id: int) -> "RandomStream":
        """Fresh stream with the same seed and another id."""
        return RandomStream(self.seed, stream_id)

    def open_uniform(self, size=None):
        """Uniform draws on the open interval (0, 1)."""
        u = self.generator.random(size)
        if size is None:
            while u == 0.0:
                u = self.generator.random()
            return u
        bad = u == 0.0
        while bad.any():
            u[bad] = self.generator.random(int(bad.sum()))
            bad = u == 0.0
        return u

    def exponential(self, size=None):
        return self.generator.exponential(1.0, size)

    def normal(self, size=None):
        return self.generator.standard_normal(size)


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"stability index must lie in (0, 1), got {alpha}")
    return alpha


def gamma_alpha(alpha: float) -> float:
    """Scale ``(cos(pi*alpha/2))**(1/alpha)`` turning S(alpha, 1, ., 0; 1) into a
    variate with Laplace transform ``exp(-lambda**alpha)``."""
    alpha = _check_alpha(alpha)
    return math.cos(math.pi * alpha / 2.0) ** (1.0 / alpha)


def _angle(stream: RandomStream, size):
    # Y2 ~ U(-pi/2, pi/2) with both endpoints excluded
    return math.pi * (stream.open_uniform(size) - 0.5)


def _exp_draw(stream: RandomStream, size):
    e = stream.exponential(size)
    if size is None:
        while e == 0.0:
            e = stream.exponential()
        return e
    bad = e == 0.0
    while bad.any():
        e[bad] = stream.exponential(int(bad.sum()))
        bad = e == 0.0
    return e


def sample_symmetric_stable(alpha: float, stream: RandomStream, size=None):
    """Draw S(alpha, 0, 1, 0; 1) variates by the Chambers-Mallows-Stuck formula.

    ``S = sin(alpha*Y2) / cos(Y2)**(1/alpha) * (cos((1-alpha)*Y2) / Y1)**((1-alpha)/alpha)``
    with ``Y1 ~ Exp(1)`` and ``Y2 ~ U(-pi/2, pi/2)``.
    """
    alpha = _check_alpha(alpha)
    y1 = _exp_draw(stream, size)
    y2 = _angle(stream, size)
    return (
        np.sin(alpha * y2)
        / np.cos(y2) ** (1.0 / alpha)
        * (np.cos((1.0 - alpha) * y2) / y1) ** ((1.0 - alpha) / alpha)
    )


def sample_skewed_stable(alpha: float, stream: RandomStream, size=None):
    """Draw totally skewed S(alpha, 1, 1, 0; 1) variates, 0 < alpha < 1.

    For alpha < 1 these are strictly positive; their Laplace transform is
    ``exp(-lambda**alpha / cos(pi*alpha/2))``.
    """
    alpha = _check_alpha(alpha)
    y1 = _exp_draw(stream, size)
    y2 = _angle(stream, size)
    shifted = alpha * (y2 + math.pi / 2.0)
    core = (
        np.sin(shifted)
        / np.cos(y2) ** (1.0 / alpha)
        * (np.cos(y2 - shifted) / y1) ** ((1.0 - alpha) / alpha)
    )
    return core / gamma_alpha(alpha)


def sample_stable(alpha: float, beta: float, gamma: float, delta: float,
                  stream: RandomStream, size=None):
    """General S(alpha, beta, gamma, delta; 1) variate for 0 < alpha < 1.

    Assembled as ``delta + gamma*((1+beta)/2)**(1/alpha)*S1
    - gamma*((1-beta)/2)**(1/alpha)*S2`` with S1, S2 independent totally
    skewed S(alpha, 1, 1, 0; 1) variates.  A vanishing weight skips its draw.
    """
    alpha = _check_alpha(alpha)
    if not -1.0 <= beta <= 1.0:
        raise ValueError(f"skewness must lie in [-1, 1], got {beta}")
    if not gamma > 0.0:
        raise ValueError(f"scale must be positive, got {gamma}")
    w1 = gamma * ((1.0 + beta) / 2.0) ** (1.0 / alpha)
    w2 = gamma * ((1.0 - beta) / 2.0) ** (1.0 / alpha)
    out = delta
    if w1 > 0.0:
        out = out + w1 * sample_skewed_stable(alpha, stream, size)
    if w2 > 0.0:
        out = out - w2 * sample_skewed_stable(alpha, stream, size)
    return out


def sample_positive_stable(alpha: float, stream: RandomStream, size=None):
    """Positive stable variate with ``E[exp(-lambda*S)] = exp(-lambda**alpha)``.

    This is S(alpha, 1, gamma_alpha(alpha), 0; 1); with beta = 1 only the first
    term of :func:`sample_stable` survives.
    """
    return sample_stable(alpha, 1.0, gamma_alpha(alpha), 0.0, stream, size)
