from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hdmix.errors import SolverError, ValidationError
from hdmix.saddle import (
    CouplingForm,
    MultiplierSet,
    PrimalOperator,
    StaticMixedInstance,
    coupling_constants,
    default_step,
    kkt_residuals,
    project_multiplier,
    random_instance,
    uzawa_solve,
    verify_constants,
)
from oracles import active_set_solve

finite = st.floats(-10, 10, allow_nan=False)


def scalar_instance(rhs: float, g: float, k: float = 0.0) -> StaticMixedInstance:
    """``2 u + lam = rhs`` with ``|lam| <= g`` and ``lam`` normal to ``u - k``."""
    return StaticMixedInstance(PrimalOperator(np.array([[2.0]]), 2.0, 2.0), np.zeros(1),
                               CouplingForm(np.array([[1.0]])), MultiplierSet(np.array([g])),
                               np.array([rhs]), np.array([k]))


def test_scalar_active_bound():
    sol = uzawa_solve(scalar_instance(3.0, 0.5))
    assert sol.lam[0] == pytest.approx(0.5, abs=1e-10)
    assert sol.u[0] == pytest.approx(1.25, abs=1e-10)


def test_scalar_inactive_bound_pins_constraint():
    sol = uzawa_solve(scalar_instance(0.6, 1.0, k=0.1))
    assert sol.u[0] == pytest.approx(0.1, abs=1e-9)
    assert sol.lam[0] == pytest.approx(0.4, abs=1e-9)


def test_zero_bound_decouples():
    sol = uzawa_solve(scalar_instance(3.0, 0.0))
    assert sol.lam[0] == 0.0
    assert sol.u[0] == pytest.approx(1.5)


@pytest.mark.parametrize("seed", range(5))
def test_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    for _ in range(20):
        inst = random_instance(rng)
        sol = uzawa_solve(inst)
        u, lam = active_set_solve(inst.A.matrix, inst.eta, inst.coupling.matrix, inst.coupling.weights,
                                  inst.multipliers.bounds, inst.rhs, inst.k)
        np.testing.assert_allclose(sol.u, u, atol=1e-8)
        np.testing.assert_allclose(sol.lam, lam, atol=1e-8)
        assert sol.eq_residual <= 1e-9 and sol.ineq_residual <= 1e-8


def test_random_instances_exercise_both_regimes():
    rng = np.random.default_rng(1)
    at_bound = interior = 0
    for _ in range(100):
        inst = random_instance(rng)
        lam = uzawa_solve(inst).lam
        hit = np.abs(lam) >= inst.multipliers.bounds - 1e-9
        at_bound += int(hit.any())
        interior += int((~hit).any())
    assert at_bound > 20 and interior > 20


def test_step_size_does_not_change_solution():
    inst = random_instance(3)
    a = uzawa_solve(inst, tol=1e-11)
    b = uzawa_solve(inst, rho=0.3 * a.rho, tol=1e-11)
    np.testing.assert_allclose(a.u, b.u, atol=1e-8)
    np.testing.assert_allclose(a.lam, b.lam, atol=1e-8)


def test_oversized_step_is_halved_with_warning():
    inst = random_instance(4)
    ref = uzawa_solve(inst)
    with pytest.warns(RuntimeWarning, match="halving"):
        sol = uzawa_solve(inst, rho=50 * default_step(inst))
    assert sol.rho < 50 * default_step(inst)
    np.testing.assert_allclose(sol.u, ref.u, atol=1e-7)


def test_iteration_cap_raises_solver_error():
    with pytest.raises(SolverError) as info:
        uzawa_solve(random_instance(5), max_iter=1, tol=1e-14)
    assert info.value.residual > 0


def test_rank_deficient_coupling_rejected():
    B = np.array([[1.0, 1.0], [2.0, 2.0]])
    inst = StaticMixedInstance(PrimalOperator(np.eye(2), 1.0, 1.0), np.zeros(2), CouplingForm(B),
                               MultiplierSet(np.ones(2)), np.ones(2), np.zeros(2))
    with pytest.raises(ValidationError, match="rank"):
        uzawa_solve(inst)


def test_input_validation():
    with pytest.raises(ValidationError):
        PrimalOperator(np.array([[1.0, 2.0], [0.0, 1.0]]), 1.0, 2.0)
    with pytest.raises(ValidationError):
        PrimalOperator(np.eye(2), 2.0, 1.0)
    with pytest.raises(ValidationError):
        MultiplierSet(np.array([-1.0]))
    with pytest.raises(ValidationError):
        CouplingForm(np.eye(2), np.array([1.0, 0.0]))
    with pytest.raises(ValidationError):
        StaticMixedInstance(PrimalOperator(np.eye(2), 1.0, 1.0), np.zeros(3), CouplingForm(np.eye(2)),
                            MultiplierSet(np.ones(2)), np.zeros(2), np.zeros(2))


def test_nonlinear_operator_satisfies_kkt():
    K = np.array([[2.0, 0.5], [0.5, 1.0]])
    m = float(np.linalg.eigvalsh(K)[0])
    A = PrimalOperator(K, m, 50.0, phi=lambda u: u**3, dphi=lambda u: 3 * u**2)
    inst = StaticMixedInstance(A, np.zeros(2), CouplingForm(np.array([[1.0, -1.0]])),
                               MultiplierSet(np.array([0.2])), np.array([1.0, -2.0]), np.zeros(2))
    sol = uzawa_solve(inst, rho=0.5)
    eq, ineq = kkt_residuals(inst, sol.u, sol.lam)
    assert eq <= 1e-9 and ineq <= 1e-8


def test_coupling_constants_are_singular_values():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((2, 4))
    w = np.array([0.5, 2.0])
    alpha, M = coupling_constants(CouplingForm(B, w))
    s = np.linalg.svd(np.sqrt(w)[:, None] * B, compute_uv=False)
    assert alpha == pytest.approx(s[-1]) and M == pytest.approx(s[0])


def test_verify_constants_flags_wrong_declaration():
    K = np.diag([1.0, 3.0])
    assert verify_constants(PrimalOperator(K, 1.0, 3.0)).ok
    rep = verify_constants(PrimalOperator(K, 1.5, 3.0))
    assert not rep.ok and "monotonicity" in rep.violations[0]
    rep = verify_constants(PrimalOperator(K, 1.0, 2.0))
    assert any("Lipschitz" in v for v in rep.violations)


def test_verify_constants_flags_overstated_inf_sup():
    B = CouplingForm(np.array([[1.0, 0.0]]), alpha_b=5.0)
    rep = verify_constants(PrimalOperator(np.eye(2), 1.0, 1.0), B)
    assert any("inf-sup" in v for v in rep.violations)


@given(arrays(float, 4, elements=finite), arrays(float, 4, elements=st.floats(0, 5)))
def test_projection_is_idempotent_and_in_set(mu, g):
    box = MultiplierSet(g)
    p = project_multiplier(mu, box)
    assert box.contains(p)
    np.testing.assert_array_equal(project_multiplier(p, box), p)


@given(arrays(float, 3, elements=finite), arrays(float, 3, elements=finite),
       arrays(float, 3, elements=st.floats(0, 5)))
def test_projection_is_nonexpansive(a, b, g):
    box = MultiplierSet(g)
    da = np.linalg.norm(project_multiplier(a, box) - project_multiplier(b, box))
    assert da <= np.linalg.norm(a - b) + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_solution_is_variational(seed):
    """``b(u - k, mu - lam) <= 0`` for every mu in the box (checked at its vertices)."""
    inst = random_instance(seed)
    sol = uzawa_solve(inst)
    d = inst.coupling.weights * (inst.coupling.matrix @ (sol.u - inst.k))
    g = inst.multipliers.bounds
    scale = 1e-8 * (1 + np.abs(d).sum())
    for signs in np.array(np.meshgrid(*[[-1, 1]] * len(g))).T.reshape(-1, len(g)):
        assert d @ (signs * g - sol.lam) <= scale
