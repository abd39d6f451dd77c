"""Self-checks run by ``hdmix verify``.

Each check returns a :class:`CheckResult`; none of them raise on a failed
comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .contact import ContactModel, Loads, Material, assemble, solve_dirichlet
from .history import (
    EvolutionProblem,
    HistoryState,
    MemoryKernel,
    TimeGrid,
    advance_recursive,
    eval_history_direct,
    history_lipschitz_check,
    solve_evolution,
)
from .mesh import generate_rect_mesh
from .saddle import CouplingForm, MultiplierSet, PrimalOperator, random_instance, uzawa_solve


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def eigen_bounds(meshes=(4, 8, 16), materials=((1.0, 0.0), (1.0, 0.5), (0.5, 2.0)),
                 tol: float = 1e-10) -> CheckResult:
    """Generalized eigenvalues of (stiffness, Gram) inside ``[2 beta, 2 beta + 2 eta]``."""
    worst = -math.inf
    for nx in meshes:
        mesh = generate_rect_mesh(nx, nx)
        loads = Loads.uniform(mesh)
        for beta, eta in materials:
            asm = assemble(ContactModel(mesh, Material(beta, eta, 0.0), loads, 0.0))
            ev = sla.eigh(asm.stiffness, asm.gram, eigvals_only=True)
            worst = max(worst, 2 * beta - ev[0], ev[-1] - (2 * beta + 2 * eta))
    return CheckResult("eigen bounds", worst <= tol, f"worst excursion {worst:.3e} (tol {tol:g})")


def recursion_equality(trials: int = 50, steps: int = 50, n: int = 5,
                       rng: np.random.Generator | int | None = None, tol: float = 1e-12) -> CheckResult:
    """O(1) exponential recursion against the direct trapezoid sum."""
    rng = np.random.default_rng(rng)
    worst = 0.0
    for _ in range(trials):
        Q = rng.standard_normal((n, n))
        kernel = MemoryKernel(Q @ Q.T / n, omega=float(rng.uniform(0, 3)))
        grid = TimeGrid(float(rng.uniform(0.01, 0.2)), steps)
        us = rng.standard_normal((steps + 1, n))
        state = HistoryState(np.zeros(n))
        for k in range(1, steps + 1):
            state = advance_recursive(state, us[k - 1], us[k], kernel, grid.dt)
            direct = eval_history_direct(us[:k], us[k], kernel, grid, k)
            scale = max(1.0, float(np.abs(us[: k + 1]).max()))
            worst = max(worst, float(np.abs(state.H - direct).max()) / scale)
    return CheckResult("history recursion", worst <= tol, f"max deviation {worst:.3e} (tol {tol:g})")


def history_bound(trials: int = 100, rng: np.random.Generator | int | None = None) -> CheckResult:
    mesh = generate_rect_mesh(4, 4)
    asm = assemble(ContactModel(mesh, Material(1.0, 0.5, 1.0), Loads.uniform(mesh), 0.1))
    rep = history_lipschitz_check(asm.kernel(), TimeGrid(0.1, 10), trials=trials, rng=rng)
    return CheckResult("history Lipschitz bound", rep.ok,
                       f"worst ratio {rep.worst_ratio:.12f} (s_m = {rep.s_m:g})")


def volterra_error(N: int, scheme: str, T: float = 1.0) -> float:
    """Max nodal error for ``u + int_0^t u = 1`` (exact ``u = exp(-t)``)."""
    one = np.eye(1)
    problem = EvolutionProblem(
        A=PrimalOperator(one, 1.0, 1.0), kernel=MemoryKernel(one, omega=0.0),
        coupling=CouplingForm.empty(1), multipliers=MultiplierSet(np.zeros(0)),
        load=lambda t: np.ones(1), grid=TimeGrid.from_horizon(T, N))
    traj = solve_evolution(problem, scheme=scheme)
    return float(np.abs(traj.u[:, 0] - np.exp(-traj.times)).max())


def observed_orders(scheme: str, Ns=(10, 20, 40)) -> list[float]:
    errs = [volterra_error(N, scheme) for N in Ns]
    return [math.log2(a / b) for a, b in zip(errs, errs[1:])]


def volterra_rate() -> CheckResult:
    imp = observed_orders("implicit")
    exp = observed_orders("explicit")
    ok = min(imp) >= 1.9 and min(exp) >= 0.9
    return CheckResult("Volterra time order", ok,
                       f"implicit {', '.join(f'{o:.3f}' for o in imp)} (need >= 1.9); "
                       f"explicit {', '.join(f'{o:.3f}' for o in exp)} (need >= 0.9)")


def patch_test(tol: float = 1e-12) -> CheckResult:
    """Linear boundary data must be reproduced exactly in the interior."""
    mesh = generate_rect_mesh(4, 4)
    nodes = mesh.nodes

    def field(p):
        return np.column_stack([0.1 + 0.2 * p[:, 0] - 0.3 * p[:, 1], -0.4 + 0.5 * p[:, 0] + 0.7 * p[:, 1]])

    boundary = np.unique(mesh.edges.ravel())
    U = solve_dirichlet(mesh, Material(1.0, 0.5, 0.0), boundary, field(nodes[boundary]))
    err = float(np.abs(U - field(nodes)).max())
    return CheckResult("P1 patch test", err <= tol, f"max nodal error {err:.3e} (tol {tol:g})")


def uzawa_step_independence(instances: int = 20, rng: np.random.Generator | int | None = None,
                            tol: float = 1e-7) -> CheckResult:
    """Two admissible steps must give the same saddle point."""
    rng = np.random.default_rng(rng)
    worst = 0.0
    for _ in range(instances):
        inst = random_instance(rng)
        a = uzawa_solve(inst, tol=1e-10)
        b = uzawa_solve(inst, rho=0.5 * a.rho, tol=1e-10)
        worst = max(worst, float(np.abs(a.u - b.u).max()), float(np.abs(a.lam - b.lam).max()))
    return CheckResult("Uzawa step independence", worst <= tol, f"max difference {worst:.3e} (tol {tol:g})")


def run_all(seed: int = 0, samples: int = 100, instances: int = 50) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    checks: list[Callable[[], CheckResult]] = [
        lambda: eigen_bounds(),
        lambda: recursion_equality(rng=rng),
        lambda: history_bound(trials=samples, rng=rng),
        volterra_rate,
        patch_test,
        lambda: uzawa_step_independence(instances=instances, rng=rng),
    ]
    return [c() for c in checks]
