"""Acceptance gate: the nine end-to-end criteria at full stated scale.

Each test pins one numbered guarantee of the library at its published
tolerance and (loosely) its runtime budget. These run longer than the unit
tests; together they take a few minutes.
"""

import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from eqpide import (SimConfig, StateGrid2D, bsde_residual, build_adjoints,
                    equilibrium_coefficient, estimate_g, estimate_theta,
                    hbar_min_check, integrate_backward, policy_evaluation,
                    policy_iteration, sigma_tot_sq, simulate,
                    solve_closed_form, spike_variation_test)

REC = np.linspace(0.0, 1.0, 21)


# 1 -------------------------------------------------------------------------

def test_criterion_1_closed_form_identities(both):
    start = time.perf_counter()
    s = np.linspace(0.0, 1.0, 10_000)
    for _, sol in both:
        assert np.max(np.abs(sol.M1(s) - sol.N1(s) ** 2)) <= 1e-8
        assert np.max(np.abs(sol.M3(s) - sol.N1(s) * sol.N2(s))) <= 1e-8
    assert time.perf_counter() - start < 1.0


# 2 -------------------------------------------------------------------------

def test_criterion_2_ode_vs_closed_form(both):
    start = time.perf_counter()
    for params, sol in both:
        osol = integrate_backward(params, 10_000)  # h = 1e-4
        for name in ("N1", "N2", "M1", "M2", "M3"):
            a = getattr(osol, name)
            b = getattr(sol, name)(osol.grid)
            rel = np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-30))
            # N2/M2/M3 vanish at T; measure relative to the function's scale
            scale_rel = np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-30)
            assert min(rel, scale_rel) <= 1e-8, name
    assert time.perf_counter() - start < 5.0


# 3 -------------------------------------------------------------------------

def _pide_interior_error(params, sol, grid):
    psol = policy_evaluation(params, sol.strategy, grid)
    xs = grid.x_nodes
    X, Z = np.meshgrid(xs, xs, indexing="ij")
    lo, hi = grid.nx // 3, 2 * grid.nx // 3 + 1
    err = 0.0
    for k in range(0, grid.nt + 1, max(1, grid.nt // 20)):
        s = grid.t_nodes[k]
        for field, exact in ((psol.theta[k], sol.theta_ansatz(s, X, Z)),
                             (psol.g[k], sol.g_ansatz(s, X, Z))):
            err = max(err, np.abs(field - exact)[lo:hi, lo:hi].max()
                      / np.abs(exact[lo:hi, lo:hi]).max())
    return float(err)


def test_criterion_3_pide_ansatz(both):
    start = time.perf_counter()
    fine = StateGrid2D(-2.0, 2.0, 81, 200, 1.0)
    for params, sol in both:
        assert _pide_interior_error(params, sol, fine) <= 5e-3
    # space-halving factor on the jump economy (the diffusion economy is
    # polynomial-exact in space, so its spatial error is already ~0)
    params, sol = both[1]
    coarse = StateGrid2D(-2.0, 2.0, 41, 200, 1.0)
    ratio = (_pide_interior_error(params, sol, coarse)
             / _pide_interior_error(params, sol, fine))
    assert ratio >= 3.5
    assert time.perf_counter() - start < 120.0


# 4 -------------------------------------------------------------------------

def test_criterion_4_policy_iteration(both):
    start = time.perf_counter()
    grid = StateGrid2D(-2.0, 2.0, 41, 100, 1.0)
    for params, sol in both:
        strategy, psol, trace = policy_iteration(params, grid, max_iters=20,
                                                 tol=1e-3)
        assert len(trace) <= 20
        t = grid.t_nodes
        assert np.max(np.abs(strategy.alpha(t) - sol.alpha_star(t))) <= 5e-3
    assert time.perf_counter() - start < 600.0


# 5 -------------------------------------------------------------------------

def test_criterion_5_feynman_kac(both):
    start = time.perf_counter()
    cfg = SimConfig(n_paths=100_000, n_steps=500, seed=12_345)
    for params, sol in both:
        th = estimate_theta(params, sol.strategy, 0.0, 1.0, 1.0, cfg)
        ge = estimate_g(params, sol.strategy, 0.0, 1.0, 1.0, cfg)
        assert abs(th.mean - sol.theta_ansatz(0.0, 1.0, 1.0)) \
            <= 3.0 * th.std_error
        assert abs(ge.mean - sol.g_ansatz(0.0, 1.0, 1.0)) \
            <= 3.0 * ge.std_error
    assert time.perf_counter() - start < 60.0


# 6 -------------------------------------------------------------------------

def test_criterion_6_equilibrium_property(e0, sol_e0):
    start = time.perf_counter()
    params, sol = e0, sol_e0
    cfg = SimConfig(n_paths=100_000, n_steps=500, seed=12_345)
    eps = [0.04, 0.02, 0.01]
    for t in (0.0, 0.25, 0.5, 0.75):
        a_t = float(sol.alpha_star(t))
        for dv in (0.5, -0.5, 1.0, -1.0):
            v = a_t + dv
            res = spike_variation_test(params, sol.strategy, t, 1.0, v, eps,
                                       cfg, closed=sol)
            c = abs(res.slope)
            for q, se, e in zip(res.quotients, res.std_errors, res.epsilons):
                assert q >= -(3.0 * se + c * e), (t, dv, e)
            prediction = (0.5 * (sol.M1(t) + sol.M3(t))
                          * sigma_tot_sq(params, t) * dv ** 2)
            assert abs(res.richardson_limit - prediction) \
                <= 3.0 * res.richardson_se, (t, dv)

    # negative control: 1.5x the equilibrium coefficient must be caught
    scaled = sol.strategy.scaled(1.5)
    big = SimConfig(n_paths=500_000, n_steps=200, seed=12_345)
    base = float(scaled.control(0.0, 1.0))
    res = spike_variation_test(params, scaled, 0.0, 1.0, base - 0.5, [0.04],
                               big)
    assert res.quotients[0] < -5.0 * res.std_errors[0]
    assert time.perf_counter() - start < 600.0


# 7 -------------------------------------------------------------------------

def test_criterion_7_adjoint_bridge(both):
    start = time.perf_counter()
    for params, sol in both:
        bundle = simulate(params, sol.strategy, 0.0, 1.0, 1.0,
                          SimConfig(100_000, 500, 12_345), paired=True,
                          record_times=REC)
        adj = build_adjoints(params, sol, bundle, 0.0,
                             E_xT=sol.g_ansatz(0.0, 1.0, 1.0))
        res = bsde_residual(params, adj, bundle, n_intervals=4)
        euler_bias = 5e-4
        for est in res["p"] + res["P"]:
            assert abs(est.mean) <= 3.0 * est.std_error + euler_bias
        rep = hbar_min_check(params, sol, 0.0, 1.0,
                             np.arange(-2.0, 2.0 + 1e-12, 0.01))
        assert rep["cell"] == pytest.approx(0.01)
        assert rep["within_one_cell"]
    assert time.perf_counter() - start < 120.0


# 8 -------------------------------------------------------------------------

def test_criterion_8_no_jump_reduction(e0, sol_e0):
    start = time.perf_counter()
    r0, rho, sig2, mu, T = 0.02, 0.04, 0.04, 1.0, 1.0
    for s in np.linspace(0.0, 1.0, 20):
        # constant-coefficient evaluation of
        # mu e^{-int r0} (1 + mu int e^{-int r0} rho^2/sigma^2)^{-1} rho/sigma^2
        disc = math.exp(-r0 * (T - s))
        integral = (rho ** 2 / sig2) * (1.0 - disc) / r0
        expected = mu * disc / (1.0 + mu * integral) * rho / sig2
        direct = float(sol_e0.alpha_star(s))
        explicit = equilibrium_coefficient(sol_e0, e0, float(s))
        assert abs(direct - expected) / abs(expected) <= 1e-8
        assert abs(explicit - expected) / abs(expected) <= 1e-8
    assert time.perf_counter() - start < 1.0


# 9 -------------------------------------------------------------------------

E0_TOML = """\
[market]
r0 = 0.02
r = 0.06
sigma = 0.2
horizon = 1.0
mu = 1.0
x0 = 1.0
"""

LIGHT = ["--set", "grid.nx=21", "--set", "grid.nz=21", "--set", "grid.nt=40",
         "--set", "ode.n_steps=1000", "--set", "quad.steps=1000",
         "--set", "mc.n_paths=40000", "--set", "mc.n_steps=100"]


def _run_cli(args, workers, cwd):
    env = dict(os.environ, EQPIDE_THREADS=str(workers))
    proc = subprocess.run([sys.executable, "-m", "eqpide.cli"] + args,
                          env=env, cwd=cwd, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc


def test_criterion_9_reproducibility(tmp_path):
    cfg = tmp_path / "e0.toml"
    cfg.write_text(E0_TOML)
    verify_sets = ["--set", 'verify.checks=["feynman_kac","spike","bsde"]',
                   "--set", "verify.t_list=[0.25]",
                   "--set", "verify.v_offsets=[0.5]",
                   "--set", "verify.epsilons=[0.04,0.02]"]
    outputs = {}
    for workers in (1, 4, 8):
        sdir = tmp_path / f"solve{workers}"
        vdir = tmp_path / f"verify{workers}"
        _run_cli(["solve", "--config", str(cfg), "--out", str(sdir)] + LIGHT,
                 workers, str(tmp_path))
        _run_cli(["verify", "--config", str(cfg), "--out", str(vdir)]
                 + LIGHT + verify_sets, workers, str(tmp_path))
        blobs = {}
        for name in ("closed_form.csv", "ode.csv", "pide_theta.csv",
                     "pide_g.csv", "policy_trace.csv"):
            blobs[name] = (sdir / name).read_bytes()
        blobs["verify_report.csv"] = (vdir / "verify_report.csv").read_bytes()
        outputs[workers] = blobs
    for name in outputs[1]:
        assert outputs[1][name] == outputs[4][name] == outputs[8][name], name
