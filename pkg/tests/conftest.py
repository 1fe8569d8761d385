"""Shared fixtures: the two reference economies and their closed forms.

E0 is a pure-diffusion economy with constant coefficients; E1 adds a single
downward Poisson atom. Both have kappa constant in time (1 and 2/3), which
makes the independent quadrature oracles in the tests easy to state.
"""

import numpy as np
import pytest

from eqpide import (CoefficientFn, LevyAtomMeasure, MarketParams,
                    solve_closed_form)

HORIZON = 1.0


def make_params(r0=0.02, r=0.06, sigma=0.2, jumps=(), T=HORIZON, mu=1.0,
                x0=1.0, **kw):
    return MarketParams(
        r0=CoefficientFn.from_samples(r0, T),
        r=CoefficientFn.from_samples(r, T),
        sigma=CoefficientFn.from_samples(sigma, T),
        jumps=LevyAtomMeasure.from_list(list(jumps), T),
        T=T, mu=mu, x0=x0, **kw)


E1_ATOM = (-0.1, 2.0, -0.1)  # mark, intensity, size coefficient


@pytest.fixture(scope="session")
def e0():
    return make_params()


@pytest.fixture(scope="session")
def e1():
    return make_params(jumps=[E1_ATOM])


@pytest.fixture(scope="session")
def sol_e0(e0):
    return solve_closed_form(e0)


@pytest.fixture(scope="session")
def sol_e1(e1):
    return solve_closed_form(e1)


@pytest.fixture(scope="session")
def both(e0, e1, sol_e0, sol_e1):
    return [(e0, sol_e0), (e1, sol_e1)]


def time_grid(T=HORIZON, n=101):
    return np.linspace(0.0, T, n)
