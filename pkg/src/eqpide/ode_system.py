"""Backward integration of the coupled (N1, N2, M1, M2, M3) ODE system.

Integrates the unreduced system with classic RK4 from s = T down to s = 0,
recomputing the strategy coefficient alpha from the raw state at every RK
stage. The product identities M1 = N1^2 and M3 = N1 N2 are therefore a
discovered property of the flow, checked by :func:`check_identities`, not an
input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientFn
from .errors import SingularityError, ValidationError
from .market import MarketParams, excess_return, sigma_tot_sq, validate

_DEN_GUARD = 1e-12

TERMINAL = np.array([1.0, 0.0, 1.0, 0.0, 0.0])  # (N1, N2, M1, M2, M3) at T


@dataclass(frozen=True)
class OdeSolution:
    grid: np.ndarray  # ascending time nodes, grid[-1] = T
    N1: np.ndarray
    N2: np.ndarray
    M1: np.ndarray
    M2: np.ndarray
    M3: np.ndarray
    alpha: np.ndarray

    def state(self, k: int) -> np.ndarray:
        return np.array([self.N1[k], self.N2[k], self.M1[k],
                         self.M2[k], self.M3[k]])

    def alpha_fn(self) -> CoefficientFn:
        return CoefficientFn(self.grid, self.alpha)


def strategy_coefficient(params: MarketParams, s: float,
                         state: np.ndarray) -> float:
    """alpha(s) from the unreduced quotient of the raw state.

    alpha = -(M1 + M3 - N1 mu - N1^2 - N1 N2) rho
            / ((M1 + M3) (sigma^2 + sum phi^2 nu)).
    """
    n1, n2, m1, _, m3 = state
    den = (m1 + m3) * sigma_tot_sq(params, s)
    if abs(den) < _DEN_GUARD:
        raise SingularityError(
            f"strategy denominator {den:.3e} below guard at s={s:.6f}",
            where=s)
    num = m1 + m3 - n1 * params.mu - n1 ** 2 - n1 * n2
    return -num / den * excess_return(params, s)


def _rhs(params: MarketParams, s: float, state: np.ndarray) -> np.ndarray:
    n1, n2, m1, m2, m3 = state
    r0 = params.r0(s)
    rho = excess_return(params, s)
    st2 = sigma_tot_sq(params, s)
    alpha = strategy_coefficient(params, s, state)
    a_rho = alpha * rho
    return np.array([
        -r0 * n1,
        -r0 * n2 - (n1 + n2) * a_rho,
        -2.0 * r0 * m1,
        -2.0 * r0 * m2 - 2.0 * (m2 + m3) * a_rho
        - (m1 + m2 + 2.0 * m3) * alpha ** 2 * st2,
        -2.0 * r0 * m3 - (m3 + m1) * a_rho,
    ])


def _rk4_step(params: MarketParams, s: float, state: np.ndarray,
              h: float) -> np.ndarray:
    k1 = _rhs(params, s, state)
    k2 = _rhs(params, s + h / 2.0, state + h / 2.0 * k1)
    k3 = _rhs(params, s + h / 2.0, state + h / 2.0 * k2)
    k4 = _rhs(params, s + h, state + h * k3)
    return state + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _alpha_scalar(mu: float, state: np.ndarray, rho: float, st2: float,
                  s: float) -> float:
    n1, n2, m1, _, m3 = state
    den = (m1 + m3) * st2
    if abs(den) < _DEN_GUARD:
        raise SingularityError(
            f"strategy denominator {den:.3e} below guard at s={s:.6f}",
            where=s)
    return -(m1 + m3 - n1 * mu - n1 ** 2 - n1 * n2) / den * rho


def integrate_backward(params: MarketParams, n_steps: int) -> OdeSolution:
    """RK4 from the terminal block (1, 0, 1, 0, 0) at s = T down to s = 0.

    Coefficients are pre-evaluated on the half-step grid the RK4 stages
    visit, so the inner loop is free of interpolation overhead.
    """
    report = validate(params)
    if report:
        raise ValidationError("; ".join(report))
    if n_steps < 10:
        raise ValueError("n_steps must be >= 10")
    grid = np.linspace(0.0, params.T, n_steps + 1)
    h = -params.T / n_steps
    half = np.linspace(0.0, params.T, 2 * n_steps + 1)
    r0v = params.r0(half)
    rhov = excess_return(params, half)
    st2v = sigma_tot_sq(params, half)
    mu = params.mu

    def rhs(idx: int, state: np.ndarray) -> np.ndarray:
        r0, rho, st2 = r0v[idx], rhov[idx], st2v[idx]
        n1, n2, m1, m2, m3 = state
        alpha = _alpha_scalar(mu, state, rho, st2, half[idx])
        a_rho = alpha * rho
        return np.array([
            -r0 * n1,
            -r0 * n2 - (n1 + n2) * a_rho,
            -2.0 * r0 * m1,
            -2.0 * r0 * m2 - 2.0 * (m2 + m3) * a_rho
            - (m1 + m2 + 2.0 * m3) * alpha ** 2 * st2,
            -2.0 * r0 * m3 - (m3 + m1) * a_rho,
        ])

    states = np.empty((n_steps + 1, 5))
    states[n_steps] = TERMINAL
    for k in range(n_steps, 0, -1):
        i = 2 * k
        y = states[k]
        k1 = rhs(i, y)
        k2 = rhs(i - 1, y + h / 2.0 * k1)
        k3 = rhs(i - 1, y + h / 2.0 * k2)
        k4 = rhs(i - 2, y + h * k3)
        states[k - 1] = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    n1, n2, m1 = states[:, 0], states[:, 1], states[:, 2]
    m3 = states[:, 4]
    den = (m1 + m3) * st2v[::2]
    if np.any(np.abs(den) < _DEN_GUARD):
        k_bad = int(np.argmax(np.abs(den) < _DEN_GUARD))
        raise SingularityError(
            f"strategy denominator below guard at s={grid[k_bad]:.6f}",
            where=float(grid[k_bad]))
    alpha = -(m1 + m3 - n1 * mu - n1 ** 2 - n1 * n2) / den * rhov[::2]
    return OdeSolution(grid=grid, N1=states[:, 0], N2=states[:, 1],
                       M1=states[:, 2], M2=states[:, 3], M3=states[:, 4],
                       alpha=alpha)


def integrate_forward(params: MarketParams, initial: np.ndarray,
                      n_steps: int) -> np.ndarray:
    """Replay the system forward from given s=0 values; returns the s=T state.

    Time-reversal bookkeeping check: starting from a backward solve's s=0
    state this must reproduce the terminal block.
    """
    grid = np.linspace(0.0, params.T, n_steps + 1)
    h = params.T / n_steps
    state = np.array(initial, dtype=float)
    for k in range(n_steps):
        state = _rk4_step(params, grid[k], state, h)
    return state


def check_identities(sol: OdeSolution) -> dict:
    """Max over the grid of |M1 - N1^2| and |M3 - N1 N2|."""
    return {
        "max_abs_M1_minus_N1sq": float(np.max(np.abs(sol.M1 - sol.N1 ** 2))),
        "max_abs_M3_minus_N1N2": float(np.max(np.abs(sol.M3 - sol.N1 * sol.N2))),
    }


def tabulate(sol: OdeSolution) -> dict:
    """Column dict matching the closed-form CSV schema for diffing."""
    return {
        "s": sol.grid,
        "N1": sol.N1, "N2": sol.N2,
        "M1": sol.M1, "M2": sol.M2, "M3": sol.M3,
        "alpha_star": sol.alpha, "L": 1.0 / (sol.N1 + sol.N2),
    }
