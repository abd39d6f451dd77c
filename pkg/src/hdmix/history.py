"""Memory operators and time stepping for history-dependent mixed problems.

The history term at time ``t`` is ``G @ int_0^t k(t, s) u(s) ds``. On a uniform
grid it is approximated by the trapezoid rule; the weight belonging to the
current node is folded into the operator so each step is a static mixed
problem solved with :func:`hdmix.saddle.uzawa_solve`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .errors import SolverError, UnsupportedKernelError, ValidationError
from .saddle import (
    CouplingForm,
    MultiplierSet,
    PrimalOperator,
    StaticMixedInstance,
    default_step,
    uzawa_solve,
)


@dataclass(frozen=True, eq=False)
class MemoryKernel:
    """Scalar kernel times a spatial matrix.

    Exponential kind (``kernel is None``): ``k(t, s) = exp(-omega (t - s))``.
    A general kernel is any callable ``k(t, s)``. ``s_m`` is the declared
    history Lipschitz constant on the grid window.
    """

    gram: np.ndarray
    omega: float = 0.0
    kernel: Callable[[float, float], float] | None = None
    s_m: float = 1.0

    def __post_init__(self):
        G = np.array(self.gram, dtype=float)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise ValidationError("kernel spatial matrix must be square")
        if np.abs(G - G.T).max(initial=0.0) > 1e-12 * max(1.0, np.abs(G).max(initial=0.0)):
            raise ValidationError("kernel spatial matrix must be symmetric")
        if G.size and np.linalg.eigvalsh(G)[0] < -1e-10 * max(1.0, np.abs(G).max()):
            raise ValidationError("kernel spatial matrix must be positive semidefinite")
        G.setflags(write=False)
        object.__setattr__(self, "gram", G)
        if self.kernel is None and not self.omega >= 0:
            raise ValidationError(f"relaxation rate omega must be >= 0, got {self.omega}")

    @property
    def is_exponential(self) -> bool:
        return self.kernel is None

    def __call__(self, t: float, s: float) -> float:
        if self.kernel is None:
            return math.exp(-self.omega * (t - s))
        return float(self.kernel(t, s))


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError(f"time step must be positive, got {self.dt}")
        if self.n_steps < 0:
            raise ValidationError("n_steps must be >= 0")

    @classmethod
    def from_horizon(cls, T: float, N: int) -> TimeGrid:
        return cls(T / N, N)

    @property
    def nodes(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def T(self) -> float:
        return self.dt * self.n_steps

    def index(self, t: float) -> int:
        """Grid index of time ``t``; raises if ``t`` is not a node."""
        k = int(round(t / self.dt))
        if not 0 <= k <= self.n_steps or abs(k * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not a grid node")
        return k

    def truncated(self, K: int) -> TimeGrid:
        return TimeGrid(self.dt, K)


@dataclass(frozen=True, eq=False)
class EvolutionProblem:
    A: PrimalOperator
    kernel: MemoryKernel
    coupling: CouplingForm
    multipliers: MultiplierSet
    load: Callable[[float], np.ndarray]
    grid: TimeGrid
    constraint: Callable[[float], np.ndarray] | None = None

    def __post_init__(self):
        n = self.A.n
        if self.kernel.gram.shape != (n, n):
            raise ValidationError("kernel matrix does not match the operator dimension")
        if self.coupling.n != n or self.multipliers.m != self.coupling.m:
            raise ValidationError("coupling / multiplier dimensions are inconsistent")

    def h(self, t: float) -> np.ndarray:
        if self.constraint is None:
            return np.zeros(self.A.n)
        return np.asarray(self.constraint(t), dtype=float)


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    u: np.ndarray
    lam: np.ndarray
    stats: list = field(default_factory=list)

    def at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not a trajectory node")
        return self.u[k], self.lam[k]


@dataclass(frozen=True)
class HistoryState:
    H: np.ndarray
    k: int = 0


def _trapezoid_weights(k: int) -> np.ndarray:
    if k == 0:
        return np.zeros(1)
    c = np.ones(k + 1)
    c[0] = c[-1] = 0.5
    return c


def history_integral(us: np.ndarray, kernel: MemoryKernel, grid: TimeGrid, k: int) -> np.ndarray:
    """Trapezoid value of ``int_0^{t_k} k(t_k, s) u(s) ds`` (no spatial matrix)."""
    us = np.asarray(us, dtype=float)
    if k == 0:
        return np.zeros(us.shape[-1])
    t = grid.nodes
    c = _trapezoid_weights(k) * np.array([kernel(t[k], t[j]) for j in range(k + 1)])
    return grid.dt * (c @ us[: k + 1])


def eval_history_direct(prefix: np.ndarray, u_k: np.ndarray, kernel: MemoryKernel,
                        grid: TimeGrid, k: int) -> np.ndarray:
    """Direct trapezoid sum ``dt * sum'' k(t_k, t_j) G u_j`` over nodes ``0..k``."""
    if k < 0:
        raise ValueError("k must be >= 0")
    u_k = np.asarray(u_k, dtype=float)
    if k == 0:
        return np.zeros_like(u_k)
    us = np.vstack([np.asarray(prefix, dtype=float)[:k], u_k[None, :]])
    return kernel.gram @ history_integral(us, kernel, grid, k)


def advance_recursive(state: HistoryState, u_prev: np.ndarray, u_new: np.ndarray,
                      kernel: MemoryKernel, dt: float) -> HistoryState:
    """One O(1) update of the exponential-kernel trapezoid sum."""
    if not kernel.is_exponential:
        raise UnsupportedKernelError("recursive history update needs an exponential kernel")
    half = 0.5 * dt
    G = kernel.gram
    H = math.exp(-kernel.omega * dt) * (state.H + half * (G @ u_prev)) + half * (G @ u_new)
    return HistoryState(H, state.k + 1)


def _past_offset(us: list, kernel: MemoryKernel, grid: TimeGrid, k: int, explicit: bool,
                 carry: np.ndarray | None) -> tuple[np.ndarray, np.ndarray | None]:
    """History contribution of nodes ``0..k-1`` at node ``k`` (dual vector).

    Returns the offset and the updated recursion carry (exponential kernels
    only; ``None`` otherwise).
    """
    dt = grid.dt
    G = kernel.gram
    if kernel.is_exponential:
        decay = math.exp(-kernel.omega * dt)
        if explicit:
            # left-rectangle: E_k = decay * (E_{k-1} + dt G u_{k-1})
            carry = decay * (carry + dt * (G @ us[k - 1]))
            return carry, carry
        # carry is H_{k-1}, the full trapezoid sum at node k-1 (half weight on u_{k-1})
        return decay * (carry + 0.5 * dt * (G @ us[k - 1])), carry
    t = grid.nodes
    w = np.ones(k) if explicit else _trapezoid_weights(k)[:k]
    c = w * np.array([kernel(t[k], t[j]) for j in range(k)])
    return dt * (G @ (c @ np.asarray(us[:k]))), None


def solve_evolution(problem: EvolutionProblem, tol: float = 1e-10, scheme: str = "implicit",
                    rho: float | str = "auto", max_iter: int = 10_000,
                    inner_tol: float = 1e-12) -> Trajectory:
    """March the history-dependent mixed problem over the grid.

    ``scheme="implicit"`` uses the trapezoid rule with the current-node weight
    ``dt/2 G`` folded into the operator (second order). ``scheme="explicit"``
    uses left-rectangle history with the bare operator (first order), for
    cross-checking time accuracy. Node 0 carries no history in either scheme.
    """
    if scheme not in ("implicit", "explicit"):
        raise ValueError(f"unknown scheme {scheme!r}")
    explicit = scheme == "explicit"
    grid, A, ker = problem.grid, problem.A, problem.kernel
    dt = grid.dt
    G = ker.gram

    if explicit:
        A_step = A
    else:
        g_max = float(sla.eigh(G, A.gram_matrix, eigvals_only=True)[-1]) if G.size else 0.0
        A_step = A.shifted(0.5 * dt * G, dm=0.0, dL=0.5 * dt * max(g_max, 0.0))

    def make(op, eta, t):
        return StaticMixedInstance(op, eta, problem.coupling, problem.multipliers,
                                   np.asarray(problem.load(t), dtype=float), problem.h(t))

    t_nodes = grid.nodes
    zeros = np.zeros(A.n)
    rho0 = default_step(make(A, zeros, 0.0)) if rho == "auto" and problem.coupling.m else rho
    rho_k = default_step(make(A_step, zeros, 0.0)) if rho == "auto" and problem.coupling.m else rho

    us, lams, stats = [], [], []
    carry = zeros.copy()
    lam_prev = None
    for k, t in enumerate(t_nodes):
        if k == 0:
            inst = make(A, zeros, t)
            step_rho = rho0
        else:
            eta, carry = _past_offset(us, ker, grid, k, explicit, carry)
            inst = make(A_step, eta, t)
            step_rho = rho_k
        try:
            sol = uzawa_solve(inst, rho=step_rho, tol=tol, max_iter=max_iter,
                              inner_tol=inner_tol, lam0=lam_prev)
        except SolverError as exc:
            raise SolverError(f"time node {k} (t={t:g}): {exc}", residual=exc.residual,
                              node=k) from exc
        us.append(sol.u)
        lams.append(sol.lam)
        lam_prev = sol.lam
        stats.append({"iterations": sol.iterations, "residual": sol.residual,
                      "eq_residual": sol.eq_residual, "ineq_residual": sol.ineq_residual})
        if ker.is_exponential and not explicit and k >= 1:
            carry = inst.eta + 0.5 * dt * (G @ sol.u)
    u = np.array(us)
    lam = np.array(lams).reshape(len(us), problem.coupling.m)
    u.setflags(write=False)
    lam.setflags(write=False)
    return Trajectory(t_nodes, u, lam, stats)


@dataclass(frozen=True)
class LipschitzReport:
    worst_ratio: float
    s_m: float
    trials: int
    note: str = "single constant for the whole grid window [0, T]"

    @property
    def ok(self) -> bool:
        return self.worst_ratio <= self.s_m * (1 + 1e-12)


def history_lipschitz_check(kernel: MemoryKernel, grid: TimeGrid, trials: int = 100,
                            rng: np.random.Generator | int | None = None,
                            gram: np.ndarray | None = None) -> LipschitzReport:
    """Worst ratio ``|S u1(t_k) - S u2(t_k)|_G / (dt sum_j |u1_j - u2_j|_G)``.

    The history value is measured through its Riesz representative, i.e. the
    kernel-weighted integral in the primal norm. ``gram`` defaults to the
    kernel's own spatial matrix (which must then be positive definite).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(rng)
    G = kernel.gram if gram is None else np.asarray(gram, dtype=float)
    n = G.shape[0]

    def gnorm(v):
        return math.sqrt(max(float(v @ G @ v), 0.0))

    worst = 0.0
    for _ in range(trials):
        d = rng.standard_normal((grid.n_steps + 1, n))
        norms = np.array([gnorm(v) for v in d])
        for k in range(1, grid.n_steps + 1):
            lhs = gnorm(history_integral(d, kernel, grid, k))
            rhs = grid.dt * norms[: k + 1].sum()
            worst = max(worst, lhs / rhs)
    return LipschitzReport(worst, kernel.s_m, trials)
