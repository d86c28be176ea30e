import numpy as np
import pytest

from qaoa_control.config import PowellConfig
from qaoa_control.powell import line_bounds, powell_minimize
from qaoa_control.verify import check_powell_quadratic, check_powell_rosenbrock, shifted_rosenbrock

TIGHT = PowellConfig(x_tol=1e-10, f_tol=1e-14)


@pytest.mark.parametrize("dim", [1, 2, 5, 8])
def test_separable_quadratic(dim):
    target = np.linspace(0.2, 0.8, dim)
    result = powell_minimize(lambda x: float(np.sum((x - target) ** 2)), np.full(dim, 0.5))
    assert np.max(np.abs(result.x - target)) < 1e-5
    assert result.nit <= dim + 2
    assert result.converged and not result.max_iters_reached


@pytest.mark.parametrize("dim", [2, 4, 6])
def test_coupled_convex_quadratic(dim):
    rng = np.random.default_rng(dim)
    a = rng.standard_normal((dim, dim))
    hessian = a @ a.T + dim * np.eye(dim)
    target = rng.uniform(0.3, 0.7, dim)
    result = powell_minimize(lambda x: float((x - target) @ hessian @ (x - target)), np.full(dim, 0.5), TIGHT)
    assert np.max(np.abs(result.x - target)) < 1e-5


def test_property_checks():
    for check in (check_powell_quadratic, check_powell_rosenbrock):
        passed, detail = check(frozenset())
        assert passed, detail


def test_minimum_outside_box_lands_on_boundary():
    result = powell_minimize(lambda x: float(np.sum((x + 1.0) ** 2)), np.array([0.7, 0.2]))
    assert np.allclose(result.x, 0.0, atol=1e-5)
    assert np.all(result.x >= 0.0)


def test_start_is_clipped_into_box():
    result = powell_minimize(lambda x: float(np.sum((x - 0.5) ** 2)), np.array([3.0, -2.0]))
    assert np.all((result.x >= 0.0) & (result.x <= 1.0))
    assert np.allclose(result.x, 0.5, atol=1e-5)


def test_flat_objective_does_not_move():
    x0 = np.array([0.25, 0.75, 0.5])
    result = powell_minimize(lambda x: 1.0, x0)
    assert np.array_equal(result.x, x0)
    assert result.fun == 1.0


def test_iteration_budget():
    result = powell_minimize(shifted_rosenbrock, np.array([0.2, 0.6]), PowellConfig(max_iters=1))
    assert result.nit == 1
    assert result.max_iters_reached
    assert not result.converged


def test_default_budget_scales_with_dimension():
    assert PowellConfig().iteration_budget(3) == 600
    assert PowellConfig(max_iters=7).iteration_budget(3) == 7


def test_zero_dimensional_problem():
    result = powell_minimize(lambda x: 4.2, np.zeros(0))
    assert result.fun == 4.2
    assert result.converged


def test_counts_evaluations():
    calls = []

    def f(x):
        calls.append(1)
        return float(np.sum((x - 0.3) ** 2))

    result = powell_minimize(f, np.full(3, 0.5))
    assert result.nfev == len(calls)


def test_line_bounds():
    lower, upper = np.zeros(2), np.ones(2)
    assert line_bounds(np.array([0.5, 0.5]), np.array([1.0, 0.0]), lower, upper) == pytest.approx((-0.5, 0.5))
    assert line_bounds(np.array([0.2, 0.6]), np.array([1.0, -1.0]), lower, upper) == pytest.approx((-0.2, 0.6))
