"""Jump-diffusion Monte Carlo: simulation and probabilistic verification.

Paths follow Euler-Maruyama with exact per-step Poisson counts per jump atom
and the compensator subtracted in the drift. Randomness is organized in
fixed-size path blocks, each drawn from a counter-based Philox stream keyed
by (seed, block index); a path's noise is a pure function of the seed and
its global index, so results are bitwise identical for any worker count.
Worker count is capped by the EQPIDE_THREADS environment variable.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import SimulationError
from .market import LinearStrategy, MarketParams, excess_return

BLOCK = 4096


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    n_steps: int
    seed: int
    antithetic: bool = False

    def __post_init__(self):
        if self.n_paths < 1 or self.n_steps < 1:
            raise ValueError("n_paths and n_steps must be >= 1")


@dataclass(frozen=True)
class SpikePerturbation:
    """Spike-variation rule: constant v on [t0, t0 + epsilon], the base
    strategy driven by the twin afterward."""

    strategy: LinearStrategy
    v: float
    epsilon: float


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_effective: int

    def __post_init__(self):
        if self.std_error < 0:
            raise ValueError("std_error must be >= 0")


@dataclass(frozen=True)
class PathBundle:
    times: np.ndarray                 # recorded times, times[0] = t0
    wealth: np.ndarray                # (n_paths, n_recorded)
    twin_wealth: np.ndarray | None    # present iff paired
    jump_log: tuple                   # (path_idx, step_idx, atom_idx, count)
    step_times: np.ndarray            # full Euler grid
    brownian: np.ndarray | None = None    # (n_paths, n_steps) if recorded
    jump_counts: np.ndarray | None = None  # (n_paths, n_steps, n_atoms)

    @property
    def n_paths(self) -> int:
        return self.wealth.shape[0]


def _worker_count() -> int:
    raw = os.environ.get("EQPIDE_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1),
                                                     block]))


def simulate(params: MarketParams, strategy, t0: float, x_init: float,
             z_init: float, cfg: SimConfig, paired: bool = False,
             record_times=None, record_noise: bool = False) -> PathBundle:
    """Euler-Maruyama paths of the wealth SDE under the given rule.

    ``strategy`` is a LinearStrategy / ConstantControl, or a
    SpikePerturbation (which forces paired simulation: the twin runs the
    base strategy, the primary takes the constant v during the window and
    the twin-driven control afterward).
    """
    if not t0 < params.T:
        raise ValueError("t0 must be before the horizon")
    spike = isinstance(strategy, SpikePerturbation)
    if spike:
        if strategy.epsilon > params.T - t0 + 1e-12:
            raise ValueError("spike window exceeds the remaining horizon")
        paired = True
    base = strategy.strategy if spike else strategy

    n_steps = cfg.n_steps
    times = np.linspace(t0, params.T, n_steps + 1)
    dt = (params.T - t0) / n_steps
    if record_times is None:
        rec_idx = np.arange(n_steps + 1)
    else:
        rec_idx = np.array(sorted({int(np.argmin(np.abs(times - rt)))
                                   for rt in record_times}))
    n_rec = rec_idx.size
    rec_pos = {int(k): i for i, k in enumerate(rec_idx)}

    atoms = params.jumps.atoms
    n_atoms = len(atoms)
    r0 = params.r0(times)
    rho = excess_return(params, times)
    sig = params.sigma(times)
    phis = np.array([[a.phi(s) for a in atoms] for s in times]) \
        if n_atoms else np.zeros((n_steps + 1, 0))
    nus = params.jumps.intensities if n_atoms else np.zeros(0)

    wealth = np.empty((cfg.n_paths, n_rec))
    twin = np.empty((cfg.n_paths, n_rec)) if paired else None
    brownian = np.empty((cfg.n_paths, n_steps)) if record_noise else None
    counts_rec = (np.empty((cfg.n_paths, n_steps, n_atoms), dtype=np.int64)
                  if record_noise else None)
    jl_path, jl_step, jl_atom, jl_count = [], [], [], []

    n_blocks = (cfg.n_paths + BLOCK - 1) // BLOCK

    def run_block(blk: int):
        lo = blk * BLOCK
        hi = min(lo + BLOCK, cfg.n_paths)
        rows = hi - lo
        rng = _block_rng(cfg.seed, blk)
        normals = rng.standard_normal((rows, n_steps))
        if cfg.antithetic:
            odd = (np.arange(lo, hi) % 2) == 1
            normals[odd] *= -1.0
        if n_atoms:
            counts = rng.poisson(nus * dt, (rows, n_steps, n_atoms))
        else:
            counts = np.zeros((rows, n_steps, 0), dtype=np.int64)

        X = np.full(rows, float(x_init))
        Z = np.full(rows, float(z_init)) if paired else None
        if 0 in rec_pos:
            wealth[lo:hi, rec_pos[0]] = X
            if paired:
                twin[lo:hi, rec_pos[0]] = Z
        for k in range(n_steps):
            s = times[k]
            drive = Z if paired else X
            u_t = np.asarray(base.control(s, drive), dtype=float)
            if spike and s < t0 + strategy.epsilon - 1e-12:
                u_p = np.full(rows, float(strategy.v))
            else:
                u_p = u_t
            dw = np.sqrt(dt) * normals[:, k]
            if n_atoms:
                comp = counts[:, k, :] - nus * dt
                jump_fac = comp @ phis[k]
            else:
                jump_fac = 0.0
            X = X + (r0[k] * X + u_p * rho[k]) * dt \
                + u_p * sig[k] * dw + u_p * jump_fac
            if paired:
                Z = Z + (r0[k] * Z + u_t * rho[k]) * dt \
                    + u_t * sig[k] * dw + u_t * jump_fac
            if (k + 1) in rec_pos:
                j = rec_pos[k + 1]
                wealth[lo:hi, j] = X
                if paired:
                    twin[lo:hi, j] = Z
        if record_noise:
            brownian[lo:hi] = np.sqrt(dt) * normals
            counts_rec[lo:hi] = counts
        if not np.all(np.isfinite(X)):
            bad = lo + int(np.argmax(~np.isfinite(X)))
            raise SimulationError(f"non-finite wealth on path {bad}",
                                  path_index=bad)
        if n_atoms:
            p, st, at = np.nonzero(counts)
            return (p + lo, st, at, counts[p, st, at])
        return (np.zeros(0, dtype=int),) * 4

    workers = _worker_count()
    if workers == 1:
        results = [run_block(b) for b in range(n_blocks)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_block, range(n_blocks)))
    for p, st, at, c in results:
        jl_path.append(p)
        jl_step.append(st)
        jl_atom.append(at)
        jl_count.append(c)

    def cat(parts):
        return np.concatenate(parts) if parts else np.zeros(0, dtype=int)

    return PathBundle(times=times[rec_idx], wealth=wealth, twin_wealth=twin,
                      jump_log=(cat(jl_path), cat(jl_step), cat(jl_atom),
                                cat(jl_count)),
                      step_times=times, brownian=brownian,
                      jump_counts=counts_rec)


def _mean_se(samples: np.ndarray) -> McEstimate:
    n = samples.size
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return McEstimate(mean, se, n)


def estimate_theta(params: MarketParams, strategy: LinearStrategy, s: float,
                   x: float, z: float, cfg: SimConfig,
                   t_label: float | None = None) -> McEstimate:
    """Feynman-Kac estimate of theta(s, x, z) = E[ X(T)^2 / 2 ]."""
    if s >= params.T - 1e-12:
        return McEstimate(0.5 * x ** 2, 0.0, cfg.n_paths)
    bundle = simulate(params, strategy, s, x, z, cfg, paired=True,
                      record_times=[s, params.T])
    return _mean_se(0.5 * bundle.wealth[:, -1] ** 2)


def estimate_g(params: MarketParams, strategy: LinearStrategy, s: float,
               x: float, z: float, cfg: SimConfig) -> McEstimate:
    """Feynman-Kac estimate of g(s, x, z) = E[ X(T) ]."""
    if s >= params.T - 1e-12:
        return McEstimate(float(x), 0.0, cfg.n_paths)
    bundle = simulate(params, strategy, s, x, z, cfg, paired=True,
                      record_times=[s, params.T])
    return _mean_se(bundle.wealth[:, -1])


def _cost_from_terminal(x_T: np.ndarray, mu: float, y: float) -> McEstimate:
    """J = Var/2 - mu y E[X(T)] with delta-method standard error."""
    n = x_T.size
    m1 = float(np.mean(x_T))
    m2 = float(np.mean(x_T ** 2))
    j = 0.5 * (m2 - m1 ** 2) - mu * y * m1
    if n < 2:
        return McEstimate(j, 0.0, n)
    cov = np.cov(np.vstack([x_T, x_T ** 2]), ddof=1)
    grad = np.array([-m1 - mu * y, 0.5])
    var = float(grad @ cov @ grad) / n
    return McEstimate(j, float(np.sqrt(max(var, 0.0))), n)


def evaluate_cost(params: MarketParams, rule, t: float, y: float,
                  cfg: SimConfig) -> McEstimate:
    """MC estimate of J(t, y; rule) = Var_t[X(T)]/2 - mu y E_t[X(T)]."""
    if not t < params.T:
        raise ValueError("t must be before the horizon")
    paired = isinstance(rule, SpikePerturbation)
    bundle = simulate(params, rule, t, y, y, cfg, paired=paired,
                      record_times=[t, params.T])
    return _cost_from_terminal(bundle.wealth[:, -1], params.mu, y)


@dataclass(frozen=True)
class SpikeTestResult:
    epsilons: np.ndarray
    quotients: np.ndarray          # Delta J^eps / eps
    std_errors: np.ndarray
    prediction: float | None       # H-gap from the closed-form side
    richardson_limit: float
    richardson_se: float
    slope: float


def _delta_cost(a: np.ndarray, b: np.ndarray, mu: float, y: float):
    """J(perturbed) - J(unperturbed) from paired terminal samples, with
    delta-method SE over the joint moments of (a, b, a^2, b^2)."""
    n = a.size
    m = np.array([np.mean(a), np.mean(b), np.mean(a ** 2), np.mean(b ** 2)])
    dj = 0.5 * (m[2] - m[3]) - 0.5 * (m[0] ** 2 - m[1] ** 2) \
        - mu * y * (m[0] - m[1])
    grad = np.array([-m[0] - mu * y, m[1] + mu * y, 0.5, -0.5])
    cov = np.cov(np.vstack([a, b, a ** 2, b ** 2]), ddof=1)
    var = float(grad @ cov @ grad) / n
    return float(dj), float(np.sqrt(max(var, 0.0)))


def spike_variation_test(params: MarketParams, strategy: LinearStrategy,
                         t: float, y: float, v: float, epsilons,
                         cfg: SimConfig, closed=None) -> SpikeTestResult:
    """Difference quotients Delta J^eps / eps with common random numbers.

    The twin path is the unperturbed equilibrium path, so perturbed and
    unperturbed costs come from one bundle per epsilon (the CRN coupling).
    Epsilons use independent derived seeds so the Richardson fit's error
    model is honest.
    """
    eps = np.asarray(list(epsilons), dtype=float)
    quot = np.empty(eps.size)
    ses = np.empty(eps.size)
    for i, e in enumerate(eps):
        cfg_i = SimConfig(cfg.n_paths, cfg.n_steps, cfg.seed + i,
                          cfg.antithetic)
        rule = SpikePerturbation(strategy, v, float(e))
        bundle = simulate(params, rule, t, y, y, cfg_i,
                          record_times=[t, params.T])
        dj, se = _delta_cost(bundle.wealth[:, -1], bundle.twin_wealth[:, -1],
                             params.mu, y)
        quot[i] = dj / e
        ses[i] = se / e

    if eps.size >= 2:
        # weighted least squares q(eps) = q0 + slope * eps
        w = 1.0 / np.maximum(ses, 1e-300) ** 2
        A = np.vstack([np.ones_like(eps), eps]).T
        ata = A.T @ (w[:, None] * A)
        coef = np.linalg.solve(ata, A.T @ (w * quot))
        cov0 = np.linalg.inv(ata)[0, 0]
    else:
        # a single epsilon gives no extrapolation: report it as-is
        coef = np.array([quot[0], 0.0])
        cov0 = ses[0] ** 2

    prediction = None
    if closed is not None:
        from .closed_form import h_gap_prediction
        prediction = h_gap_prediction(closed, params, t, y, v, strategy)
    return SpikeTestResult(epsilons=eps, quotients=quot, std_errors=ses,
                           prediction=prediction,
                           richardson_limit=float(coef[0]),
                           richardson_se=float(np.sqrt(cov0)),
                           slope=float(coef[1]))
