import numpy as np
import pytest

from eqpide import (LinearStrategy, SimConfig, StateGrid2D, bsde_pathwise_rms,
                    bsde_residual, build_adjoints, hbar_min_check,
                    policy_evaluation, simulate)

from conftest import make_params

REC = np.linspace(0.0, 1.0, 21)


def _bundle(params, sol, n_paths=20_000, n_steps=200, seed=101,
            record_times=REC, record_noise=False):
    return simulate(params, sol.strategy, 0.0, 1.0, 1.0,
                    SimConfig(n_paths, n_steps, seed), paired=True,
                    record_times=record_times, record_noise=record_noise)


def _adjoints(params, sol, bundle):
    return build_adjoints(params, sol, bundle, 0.0,
                          E_xT=sol.g_ansatz(0.0, 1.0, 1.0))


def test_requires_twin(e0, sol_e0):
    bundle = simulate(e0, sol_e0.strategy, 0.0, 1.0, 1.0,
                      SimConfig(100, 20, 1), record_times=REC)
    with pytest.raises(ValueError, match="twin"):
        build_adjoints(e0, sol_e0, bundle, 0.0, E_xT=1.0)


def test_terminal_p_identity(both):
    # at s = T: p = X(T) + G_xbar (M1 + M3 -> 1, N1 -> 1)
    for params, sol in both:
        bundle = _bundle(params, sol, n_paths=2_000, n_steps=50)
        adj = _adjoints(params, sol, bundle)
        expected = bundle.twin_wealth[:, -1] + adj.G_xbar
        np.testing.assert_allclose(adj.p[:, -1], expected, atol=1e-10)


def test_second_order_adjoints_deterministic(e1, sol_e1):
    bundle = _bundle(e1, sol_e1, n_paths=500, n_steps=50)
    adj = _adjoints(e1, sol_e1, bundle)
    for k, s in enumerate(adj.times):
        np.testing.assert_allclose(adj.P[:, k], sol_e1.M1(s), atol=1e-10)
    assert np.all(adj.Phi == 0.0)
    assert np.all(adj.Upsilon == 0.0)


def test_q_vanishes_with_zero_control():
    p = make_params(mu=0.0)
    from eqpide import solve_closed_form
    sol = solve_closed_form(p)
    bundle = simulate(p, LinearStrategy.zero(1.0), 0.0, 1.0, 1.0,
                      SimConfig(200, 20, 5), paired=True, record_times=REC)
    adj = build_adjoints(p, sol, bundle, 0.0, E_xT=float(sol.N1(0.0)))
    assert np.max(np.abs(adj.q)) <= 1e-12


def test_bsde_residuals_within_noise(both):
    for params, sol in both:
        bundle = _bundle(params, sol)
        adj = _adjoints(params, sol, bundle)
        res = bsde_residual(params, adj, bundle)
        assert len(res["p"]) == 4 and len(res["intervals"]) == 4
        dt_bias = 5e-4  # Euler quadrature budget at 200 steps
        for est in res["p"]:
            assert abs(est.mean) <= 3.0 * est.std_error + dt_bias
        for est in res["P"]:
            assert abs(est.mean) <= 3.0 * est.std_error + dt_bias


def test_pathwise_rms_negative_control(e0, sol_e0):
    # full recording: scaling q by 2 must blow up the pathwise residual
    bundle = simulate(e0, sol_e0.strategy, 0.0, 1.0, 1.0,
                      SimConfig(10_000, 100, 7), paired=True,
                      record_noise=True)
    adj = build_adjoints(e0, sol_e0, bundle, 0.0,
                         E_xT=sol_e0.g_ansatz(0.0, 1.0, 1.0))
    clean = bsde_pathwise_rms(e0, adj, bundle)
    corrupted = bsde_pathwise_rms(e0, adj, bundle, q_scale=2.0)
    assert max(clean) <= 1e-3
    assert min(corrupted) >= 20.0 * max(clean)


def test_pathwise_rms_requires_noise(e0, sol_e0):
    bundle = _bundle(e0, sol_e0, n_paths=100, n_steps=20)
    adj = _adjoints(e0, sol_e0, bundle)
    with pytest.raises(ValueError):
        bsde_pathwise_rms(e0, adj, bundle)


def test_hbar_argmin(both):
    grid = np.arange(-2.0, 2.0 + 1e-12, 0.01)
    for params, sol in both:
        rep = hbar_min_check(params, sol, 0.0, 1.0, grid)
        assert rep["within_one_cell"]
        assert rep["target"] == pytest.approx(float(sol.alpha_star(0.0)))


def test_hbar_argmin_mu_zero():
    p = make_params(mu=0.0)
    from eqpide import solve_closed_form
    sol = solve_closed_form(p)
    rep = hbar_min_check(p, sol, 0.0, 1.0,
                         np.arange(-1.0, 1.0 + 1e-12, 0.01))
    assert rep["target"] == pytest.approx(0.0, abs=1e-12)
    assert rep["within_one_cell"]


def test_grid_derivative_route_agrees(e0, sol_e0):
    # adjoints from finite-difference fields vs exact ansatz derivatives
    grid = StateGrid2D(x_min=-2.0, x_max=2.0, nx=41, nt=50, T=1.0)
    psol = policy_evaluation(e0, sol_e0.strategy, grid)
    bundle = _bundle(e0, sol_e0, n_paths=1_000, n_steps=50,
                     record_times=np.linspace(0.0, 1.0, 11))
    exact = build_adjoints(e0, sol_e0, bundle, 0.0,
                           E_xT=sol_e0.g_ansatz(0.0, 1.0, 1.0))
    approx = build_adjoints(e0, psol, bundle, 0.0,
                            E_xT=sol_e0.g_ansatz(0.0, 1.0, 1.0))
    scale = np.max(np.abs(exact.p))
    assert np.max(np.abs(exact.p - approx.p)) / scale <= 5e-2
    assert np.max(np.abs(exact.P - approx.P)) <= 5e-2
