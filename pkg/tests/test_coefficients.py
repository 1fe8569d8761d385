import numpy as np
import pytest

from eqpide import CoefficientFn, DomainError


def test_constant_evaluates_everywhere():
    f = CoefficientFn.constant(0.3, 2.0)
    assert f(0.0) == 0.3
    assert f(2.0) == 0.3
    assert np.all(f(np.linspace(0, 2, 7)) == 0.3)


def test_linear_interpolation():
    f = CoefficientFn(np.array([0.0, 1.0, 2.0]), np.array([0.0, 2.0, 0.0]))
    assert f(0.5) == pytest.approx(1.0)
    assert f(1.5) == pytest.approx(1.0)


def test_domain_error_outside_horizon():
    f = CoefficientFn.constant(1.0, 1.0)
    with pytest.raises(DomainError):
        f(1.5)
    with pytest.raises(DomainError):
        f(-0.1)


def test_endpoint_clamp_within_tolerance():
    f = CoefficientFn(np.array([0.0, 1.0]), np.array([2.0, 4.0]))
    assert f(1.0 + 5e-13) == pytest.approx(4.0)


def test_from_samples_scalar_becomes_constant():
    f = CoefficientFn.from_samples(0.7, 3.0)
    assert f(1.234) == 0.7
    assert f.t_end == 3.0


def test_from_callable_matches_function():
    f = CoefficientFn.from_callable(lambda s: 1.0 + s, 1.0, n=101)
    assert f(0.25) == pytest.approx(1.25, abs=1e-12)


def test_rejects_nonuniform_grid():
    with pytest.raises(ValueError):
        CoefficientFn(np.array([0.0, 0.3, 1.0]), np.zeros(3))


def test_rejects_single_sample():
    with pytest.raises(ValueError):
        CoefficientFn(np.array([0.0]), np.array([1.0]))


def test_arrays_are_read_only():
    f = CoefficientFn.constant(1.0, 1.0)
    with pytest.raises(ValueError):
        f.values[0] = 2.0


def test_max_abs():
    f = CoefficientFn(np.array([0.0, 0.5, 1.0]), np.array([1.0, -3.0, 2.0]))
    assert f.max_abs() == 3.0
