"""Piecewise-linear coefficient functions on a uniform time grid.

All deterministic model inputs (rates, volatility, jump size coefficients)
and all tabulated outputs (N1..M3, alpha) share this one representation:
samples on a uniform grid over [0, T], linear interpolation in between,
clamped at the endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

_EPS = 1e-12


@dataclass(frozen=True)
class CoefficientFn:
    """A sampled real function of time on [0, T].

    ``times`` must be uniform and strictly increasing with at least 2 nodes.
    Evaluation outside [0, T] (beyond a tiny tolerance) raises DomainError;
    evaluation at the endpoints clamps.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("need at least 2 time samples")
        if v.shape != t.shape:
            raise ValueError("times and values must have the same shape")
        dt = np.diff(t)
        if np.any(dt <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.allclose(dt, dt[0], rtol=1e-9, atol=1e-12):
            raise ValueError("time grid must be uniform")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        # immutable after construction; safe to share across threads
        t.setflags(write=False)
        v.setflags(write=False)

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @classmethod
    def constant(cls, value: float, horizon: float) -> "CoefficientFn":
        return cls(np.array([0.0, float(horizon)]), np.full(2, float(value)))

    @classmethod
    def from_samples(cls, values, horizon: float) -> "CoefficientFn":
        v = np.atleast_1d(np.asarray(values, dtype=float))
        if v.size == 1:
            return cls.constant(float(v[0]), horizon)
        return cls(np.linspace(0.0, float(horizon), v.size), v)

    @classmethod
    def from_callable(cls, fn, horizon: float, n: int = 257) -> "CoefficientFn":
        t = np.linspace(0.0, float(horizon), n)
        return cls(t, np.asarray([fn(s) for s in t], dtype=float))

    def __call__(self, s):
        s_arr = np.asarray(s, dtype=float)
        lo, hi = self.times[0], self.times[-1]
        if np.any(s_arr < lo - _EPS) or np.any(s_arr > hi + _EPS):
            raise DomainError(
                f"time {s!r} outside [{lo}, {hi}]"
            )
        out = np.interp(np.clip(s_arr, lo, hi), self.times, self.values)
        return float(out) if np.isscalar(s) or s_arr.ndim == 0 else out

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))
