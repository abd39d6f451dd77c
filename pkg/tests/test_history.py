from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdmix.checks import observed_orders, volterra_error
from hdmix.errors import UnsupportedKernelError, ValidationError
from hdmix.history import (
    EvolutionProblem,
    HistoryState,
    MemoryKernel,
    TimeGrid,
    advance_recursive,
    eval_history_direct,
    history_lipschitz_check,
    solve_evolution,
)
from hdmix.saddle import CouplingForm, MultiplierSet, PrimalOperator
from hdmix.convergence import random_evolution_problem


def test_kernel_validation():
    with pytest.raises(ValidationError):
        MemoryKernel(np.array([[1.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(ValidationError):
        MemoryKernel(-np.eye(2))
    with pytest.raises(ValidationError):
        MemoryKernel(np.eye(2), omega=-1.0)


def test_grid_index():
    grid = TimeGrid.from_horizon(1.0, 20)
    assert grid.index(0.5) == 10 and grid.index(1.0) == 20
    with pytest.raises(ValueError):
        grid.index(0.51)
    with pytest.raises(ValueError):
        grid.index(1.05)
    with pytest.raises(ValidationError):
        TimeGrid(0.0, 3)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 5), st.floats(1e-3, 0.5), st.integers(0, 2**32 - 1))
def test_recursion_equals_direct_sum(omega, dt, seed):
    rng = np.random.default_rng(seed)
    Q = rng.standard_normal((3, 3))
    kernel = MemoryKernel(Q @ Q.T, omega=omega)
    grid = TimeGrid(dt, 15)
    us = rng.standard_normal((16, 3))
    state = HistoryState(np.zeros(3))
    for k in range(1, 16):
        state = advance_recursive(state, us[k - 1], us[k], kernel, dt)
        direct = eval_history_direct(us[:k], us[k], kernel, grid, k)
        assert np.abs(state.H - direct).max() <= 1e-12 * max(1.0, np.abs(direct).max())
    assert state.k == 15


def test_recursion_rejects_general_kernel():
    kernel = MemoryKernel(np.eye(1), kernel=lambda t, s: 1.0 / (1.0 + t - s))
    with pytest.raises(UnsupportedKernelError):
        advance_recursive(HistoryState(np.zeros(1)), np.zeros(1), np.zeros(1), kernel, 0.1)


def test_direct_sum_of_constant_matches_integral():
    """Trapezoid of exp(-w (t - s)) for constant u converges to (1 - e^{-wt}) / w."""
    kernel = MemoryKernel(np.eye(1), omega=2.0)
    grid = TimeGrid.from_horizon(1.0, 400)
    us = np.ones((401, 1))
    val = eval_history_direct(us[:400], us[400], kernel, grid, 400)[0]
    assert val == pytest.approx((1 - math.exp(-2.0)) / 2.0, rel=1e-5)


def test_lipschitz_bound_holds():
    rep = history_lipschitz_check(MemoryKernel(np.diag([1.0, 2.0]), omega=0.5), TimeGrid(0.1, 10),
                                  trials=50, rng=0)
    assert rep.ok and rep.worst_ratio <= 1.0


def test_volterra_orders():
    assert min(observed_orders("implicit")) >= 1.9
    assert min(observed_orders("explicit")) >= 0.9
    assert volterra_error(40, "implicit") < 1e-4


def test_general_kernel_matches_exponential_path():
    base = random_evolution_problem(4, 2, rng=3, N=12)
    general = EvolutionProblem(
        base.A, MemoryKernel(base.kernel.gram, kernel=lambda t, s: math.exp(-base.kernel.omega * (t - s))),
        base.coupling, base.multipliers, base.load, base.grid)
    a, b = solve_evolution(base, tol=1e-12), solve_evolution(general, tol=1e-12)
    np.testing.assert_allclose(a.u, b.u, atol=1e-9)
    np.testing.assert_allclose(a.lam, b.lam, atol=1e-9)


def test_schemes_agree_as_step_shrinks():
    coarse = [random_evolution_problem(3, 1, rng=1, N=N) for N in (10, 80)]
    gaps = [np.abs(solve_evolution(p, scheme="implicit").u[-1] - solve_evolution(p, scheme="explicit").u[-1]).max()
            for p in coarse]
    assert gaps[1] < gaps[0] / 4


def test_unknown_scheme():
    with pytest.raises(ValueError):
        solve_evolution(random_evolution_problem(2, 1, rng=0), scheme="midpoint")


def test_node_zero_ignores_memory():
    problem = random_evolution_problem(3, 1, rng=2, omega=0.0)
    no_memory = EvolutionProblem(problem.A, MemoryKernel(np.zeros((3, 3))), problem.coupling,
                                 problem.multipliers, problem.load, problem.grid)
    a, b = solve_evolution(problem), solve_evolution(no_memory)
    np.testing.assert_allclose(a.u[0], b.u[0], atol=1e-10)
    assert np.abs(a.u[-1] - b.u[-1]).max() > 1e-3


def test_trajectory_is_readonly_and_addressable():
    traj = solve_evolution(random_evolution_problem(2, 1, rng=0, T=1.0, N=4))
    with pytest.raises(ValueError):
        traj.u[0, 0] = 1.0
    u, lam = traj.at(0.5)
    np.testing.assert_array_equal(u, traj.u[2])
    with pytest.raises(ValueError):
        traj.at(0.3)


def test_scalar_memory_problem_matches_closed_form():
    """u + int_0^t exp(-(t-s)) u ds = 1 has u = (1 + e^{-2t}) / 2."""
    one = np.eye(1)
    problem = EvolutionProblem(PrimalOperator(one, 1.0, 1.0), MemoryKernel(one, omega=1.0),
                               CouplingForm.empty(1), MultiplierSet(np.zeros(0)),
                               lambda t: np.ones(1), TimeGrid.from_horizon(1.0, 200))
    traj = solve_evolution(problem)
    np.testing.assert_allclose(traj.u[:, 0], 0.5 * (1 + np.exp(-2 * traj.times)), atol=1e-5)
