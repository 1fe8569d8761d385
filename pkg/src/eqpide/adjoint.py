"""Bridge from the PDE fields to the maximum-principle adjoint processes.

The first-order adjoints (p, q, r) and second-order adjoints (P, Phi,
Upsilon) are assembled from derivatives of theta and g along simulated
equilibrium paths, then checked against the dynamics they are supposed to
satisfy (a martingale residual per checkpoint interval) and against the
Hbar-minimization condition at the start point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .closed_form import ClosedFormSolution
from .market import MarketParams, excess_return
from .montecarlo import McEstimate, PathBundle, SimConfig, estimate_g
from .pide import PideSolution, _axis_weights


@dataclass(frozen=True)
class AdjointProcesses:
    t: float                    # fixed evaluation time of the flow
    times: np.ndarray           # recorded times (ascending, ends at T)
    p: np.ndarray               # (n_paths, n_times)
    q: np.ndarray
    r: np.ndarray               # (n_paths, n_times, n_atoms)
    P: np.ndarray
    Phi: np.ndarray
    Upsilon: np.ndarray
    G_xbar: np.ndarray          # per-path G_xbar constant


class _ClosedFormDerivs:
    """Exact ansatz derivatives: theta_x = M1 x + M3 z, g_x = N1, etc."""

    def __init__(self, sol: ClosedFormSolution):
        self.sol = sol

    def strategy(self):
        return self.sol.strategy

    def theta_x(self, s, x, z):
        return self.sol.M1(s) * x + self.sol.M3(s) * z

    def theta_xx(self, s, x, z):
        return np.full_like(np.asarray(x, dtype=float), self.sol.M1(s))

    def theta_xz(self, s, x, z):
        return np.full_like(np.asarray(x, dtype=float), self.sol.M3(s))

    def g_x(self, s, x, z):
        return np.full_like(np.asarray(x, dtype=float), self.sol.N1(s))

    def g_xx(self, s, x, z):
        return np.zeros_like(np.asarray(x, dtype=float))

    def g_xz(self, s, x, z):
        return np.zeros_like(np.asarray(x, dtype=float))


class _GridDerivs:
    """Finite-difference derivatives interpolated from a PideSolution."""

    def __init__(self, sol: PideSolution):
        self.sol = sol
        h = sol.grid.h
        self._dx = {}
        self._cache = {}

    def strategy(self):
        return self.sol.strategy

    def _slice_derivs(self, k: int):
        if k not in self._cache:
            h = self.sol.grid.h
            th, gg = self.sol.theta[k], self.sol.g[k]
            th_x = np.gradient(th, h, axis=0, edge_order=2)
            g_x = np.gradient(gg, h, axis=0, edge_order=2)
            self._cache[k] = {
                "theta_x": th_x,
                "theta_xx": np.gradient(th_x, h, axis=0, edge_order=2),
                "theta_xz": np.gradient(th_x, h, axis=1, edge_order=2),
                "g_x": g_x,
                "g_xx": np.gradient(g_x, h, axis=0, edge_order=2),
                "g_xz": np.gradient(g_x, h, axis=1, edge_order=2),
            }
        return self._cache[k]

    def _eval(self, name, s, x, z):
        k = int(np.argmin(np.abs(self.sol.grid.t_nodes - s)))
        field = self._slice_derivs(k)[name]
        n = self.sol.grid.nx
        h = self.sol.grid.h
        fx = (np.asarray(x, dtype=float) - self.sol.grid.x_min) / h
        fz = (np.asarray(z, dtype=float) - self.sol.grid.x_min) / h
        out = np.empty_like(fx)
        for idx in np.ndindex(fx.shape):
            ix, wx = _axis_weights(n, float(fx[idx]), 1)
            iz, wz = _axis_weights(n, float(fz[idx]), 1)
            out[idx] = sum(wa * wb * field[a, b]
                           for a, wa in zip(ix, wx)
                           for b, wb in zip(iz, wz))
        return out

    def __getattr__(self, name):
        if name in ("theta_x", "theta_xx", "theta_xz", "g_x", "g_xx", "g_xz"):
            return lambda s, x, z, _n=name: self._eval(_n, s, x, z)
        raise AttributeError(name)


def build_adjoints(params: MarketParams, fields, bundle: PathBundle,
                   t: float, E_xT: float | None = None,
                   g_cfg: SimConfig | None = None) -> AdjointProcesses:
    """Assemble (p, q, r, P, Phi, Upsilon) along the twin paths.

    ``fields`` is a ClosedFormSolution (exact ansatz derivatives, default
    route) or a PideSolution (finite-difference route, wider tolerances).
    The scalar E_t[X(T)] may be passed in; otherwise it is estimated by
    ``estimate_g`` at the diagonal start.
    """
    if bundle.twin_wealth is None:
        raise ValueError("adjoint construction needs a paired bundle "
                         "(missing twin)")
    derivs = (_ClosedFormDerivs(fields)
              if isinstance(fields, ClosedFormSolution)
              else _GridDerivs(fields))
    strategy = derivs.strategy()
    xhat = bundle.twin_wealth
    times = bundle.times
    y0 = xhat[:, 0]
    if E_xT is None:
        cfg = g_cfg or SimConfig(100_000, 500, 20_177)
        E_xT = estimate_g(params, strategy, t, float(y0[0]), float(y0[0]),
                          cfg).mean
    g_xbar = -(params.mu * y0 + E_xT)

    n_paths, n_rec = xhat.shape
    atoms = params.jumps.atoms
    n_atoms = len(atoms)
    p = np.empty((n_paths, n_rec))
    q = np.empty((n_paths, n_rec))
    r = np.empty((n_paths, n_rec, n_atoms))
    P = np.empty((n_paths, n_rec))
    for k, s in enumerate(times):
        x = xhat[:, k]
        u = np.asarray(strategy.control(s, x), dtype=float)
        sig_eval = u * params.sigma(s)  # evaluated diffusion sigma(s,Xhat,u)
        th_x = derivs.theta_x(s, x, x)
        th_xx = derivs.theta_xx(s, x, x)
        th_xz = derivs.theta_xz(s, x, x)
        gx = derivs.g_x(s, x, x)
        gxx = derivs.g_xx(s, x, x)
        gxz = derivs.g_xz(s, x, x)
        p[:, k] = th_x + g_xbar * gx
        q[:, k] = sig_eval * (th_xx + g_xbar * gxx) \
            + sig_eval * (th_xz + g_xbar * gxz)
        P[:, k] = th_xx + g_xbar * gxx
        for i, atom in enumerate(atoms):
            c = u * atom.phi(s)
            d_th_x = derivs.theta_x(s, x + c, x + c) - th_x
            d_g_x = derivs.g_x(s, x + c, x + c) - gx
            r[:, k, i] = d_th_x + g_xbar * d_g_x
    return AdjointProcesses(t=t, times=times, p=p, q=q, r=r, P=P,
                            Phi=np.zeros_like(q), Upsilon=np.zeros_like(r),
                            G_xbar=g_xbar)


def _checkpoints(n_rec: int, n_intervals: int) -> np.ndarray:
    return np.unique(np.round(np.linspace(0, n_rec - 1,
                                          n_intervals + 1)).astype(int))


def bsde_residual(params: MarketParams, adj: AdjointProcesses,
                  bundle: PathBundle, n_intervals: int = 4) -> dict:
    """Martingale residuals of the first- and second-order adjoint dynamics.

    For the mean-variance model the drivers reduce to mu_x p = r0 p and
    (2 mu_x + sigma_x^2) P = 2 r0 P (the diffusion, jump and running-cost
    coefficients do not depend on the state). Per interval [s, s'] the
    per-path quantity p(s') - p(s) + int r0 p dtau (trapezoid over recorded
    times) must have mean zero up to Euler quadrature bias.
    """
    times = adj.times
    r0 = params.r0(times)
    cps = _checkpoints(times.size, n_intervals)
    out_p, out_P = [], []
    for a, b in zip(cps[:-1], cps[1:]):
        seg = slice(a, b + 1)
        res_p = (adj.p[:, b] - adj.p[:, a]
                 + np.trapezoid(r0[seg] * adj.p[:, seg], times[seg], axis=1))
        res_P = (adj.P[:, b] - adj.P[:, a]
                 + np.trapezoid(2.0 * r0[seg] * adj.P[:, seg], times[seg],
                                axis=1))
        n = res_p.size
        out_p.append(McEstimate(float(np.mean(res_p)),
                                float(np.std(res_p, ddof=1) / np.sqrt(n)),
                                n))
        out_P.append(McEstimate(float(np.mean(res_P)),
                                float(np.std(res_P, ddof=1) / np.sqrt(n)),
                                n))
    return {"p": out_p, "P": out_P,
            "intervals": [(float(times[a]), float(times[b]))
                          for a, b in zip(cps[:-1], cps[1:])]}


def bsde_pathwise_rms(params: MarketParams, adj: AdjointProcesses,
                      bundle: PathBundle, n_intervals: int = 4,
                      q_scale: float = 1.0) -> list:
    """RMS of the full pathwise residual, martingale parts subtracted.

    Needs a bundle recorded at every Euler time with noise stored. With the
    correct adjoints the RMS is Euler-small; scaling q (``q_scale`` != 1)
    leaves the mean residual unchanged in expectation but inflates the RMS,
    which is the sensitivity the negative control exercises.
    """
    if bundle.brownian is None or bundle.jump_counts is None:
        raise ValueError("pathwise residual needs record_noise=True and "
                         "full time recording")
    times = adj.times
    if times.size != bundle.step_times.size:
        raise ValueError("bundle must record every Euler time")
    dt = times[1] - times[0]
    r0 = params.r0(times)
    nus = params.jumps.intensities
    q = adj.q * q_scale
    cps = _checkpoints(times.size, n_intervals)
    out = []
    for a, b in zip(cps[:-1], cps[1:]):
        res = adj.p[:, b] - adj.p[:, a]
        for k in range(a, b):
            res += r0[k] * adj.p[:, k] * dt
            res -= q[:, k] * bundle.brownian[:, k]
            if nus.size:
                comp = bundle.jump_counts[:, k, :] - nus * dt
                res -= np.sum(adj.r[:, k, :] * comp, axis=1)
        out.append(float(np.sqrt(np.mean(res ** 2))))
    return out


def hbar_min_check(params: MarketParams, sol: ClosedFormSolution, t: float,
                   y: float, u_grid, E_xT: float | None = None) -> dict:
    """Evaluate Hbar(t, t, y, u) on a control grid and locate its argmin.

    At the deterministic start the adjoints are scalars; the report asserts
    the argmin lies within one grid cell of alpha*(t) * y.
    """
    u = np.asarray(list(u_grid), dtype=float)
    s = t
    M1, M3 = sol.M1(s), sol.M3(s)
    N1, N2 = sol.N1(s), sol.N2(s)
    sig = params.sigma(s)
    rho = excess_return(params, s)
    r0c = params.r0(s)
    uhat = sol.alpha_star(s) * y
    if E_xT is None:
        E_xT = (N1 + N2) * y
    g_xbar = -(params.mu * y + E_xT)

    p0 = (M1 + M3) * y + g_xbar * N1
    q0 = uhat * sig * (M1 + M3)
    P0 = M1
    hbar = (r0c * y + u * rho) * p0 + u * sig * q0 \
        + 0.5 * P0 * (u * sig - uhat * sig) ** 2
    for atom in params.jumps.atoms:
        phi = atom.phi(s)
        nu = atom.intensity
        r0i = (M1 + M3) * uhat * phi
        hbar += u * phi * r0i * nu
        hbar += 0.5 * P0 * (u * phi - uhat * phi) ** 2 * nu

    k = int(np.argmin(hbar))
    cell = float(np.max(np.diff(u))) if u.size > 1 else np.inf
    return {
        "argmin": float(u[k]),
        "target": float(uhat),
        "cell": cell,
        "within_one_cell": bool(abs(u[k] - uhat) <= cell + 1e-12),
        "values": hbar,
    }
