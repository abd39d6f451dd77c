"""Static mixed problems with a box multiplier set.

The discrete problem reads

    A(u) + eta + B^T W lam = rhs,
    (W B (u - k)) . (mu - lam) <= 0    for all mu in Lambda,

where ``W = diag(w)`` carries the dual-pairing weights, ``Lambda`` is the box
``|mu_i| <= g_i`` and ``A`` is strongly monotone and Lipschitz with respect to
the Gram (energy) norm. It is solved by projection-Uzawa: exact primal solves
alternating with a projected ascent step on the multiplier.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .errors import SolverError, ValidationError

_SYM_TOL = 1e-12
_CONST_TOL = 1e-10


def _readonly(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PrimalOperator:
    """``A(u) = K u + phi(u)`` with ``phi`` an optional diagonal monotone map.

    ``m_A`` and ``L_A`` are the declared strong-monotonicity and Lipschitz
    constants measured in the ``gram`` norm (identity when ``gram`` is None).
    """

    matrix: np.ndarray
    m_A: float
    L_A: float
    gram: np.ndarray | None = None
    phi: Callable[[np.ndarray], np.ndarray] | None = None
    dphi: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        K = _readonly(self.matrix)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise ValidationError(f"operator matrix must be square, got shape {K.shape}")
        scale = max(1.0, float(np.abs(K).max(initial=0.0)))
        if np.abs(K - K.T).max(initial=0.0) > _SYM_TOL * scale:
            raise ValidationError("operator matrix is not symmetric")
        object.__setattr__(self, "matrix", K)
        if self.gram is not None:
            G = _readonly(self.gram)
            if G.shape != K.shape:
                raise ValidationError(f"gram shape {G.shape} does not match operator {K.shape}")
            object.__setattr__(self, "gram", G)
        if (self.phi is None) != (self.dphi is None):
            raise ValidationError("nonlinearity needs both phi and dphi")
        if not self.L_A >= self.m_A:
            raise ValidationError(f"L_A={self.L_A} must be >= m_A={self.m_A}")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_linear(self) -> bool:
        return self.phi is None

    def __call__(self, u: np.ndarray) -> np.ndarray:
        out = self.matrix @ u
        if self.phi is not None:
            out = out + self.phi(u)
        return out

    def jacobian(self, u: np.ndarray) -> np.ndarray:
        if self.dphi is None:
            return self.matrix
        return self.matrix + np.diag(self.dphi(u))

    @cached_property
    def gram_matrix(self) -> np.ndarray:
        return np.eye(self.n) if self.gram is None else self.gram

    @cached_property
    def _gram_cho(self):
        return sla.cho_factor(self.gram_matrix, lower=True)

    @cached_property
    def _cho(self):
        try:
            return sla.cho_factor(self.matrix, lower=True)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"Cholesky factorization failed: {exc}") from exc

    def norm(self, v: np.ndarray) -> float:
        """Primal (Gram) norm."""
        return math.sqrt(max(float(v @ self.gram_matrix @ v), 0.0))

    def dual_norm(self, r: np.ndarray) -> float:
        """Norm of the Riesz representative of the functional ``r``."""
        if self.gram is None:
            return float(np.linalg.norm(r))
        return math.sqrt(max(float(r @ sla.cho_solve(self._gram_cho, r)), 0.0))

    def shifted(self, extra: np.ndarray, dm: float = 0.0, dL: float = 0.0) -> PrimalOperator:
        """Operator ``A + extra`` with constants moved by ``dm`` and ``dL``."""
        return replace(self, matrix=self.matrix + extra, m_A=self.m_A + dm, L_A=self.L_A + dL)


@dataclass(frozen=True, eq=False)
class CouplingForm:
    """``b(v, mu) = sum_i w_i mu_i (B v)_i``.

    ``M_b`` and ``alpha_b`` are the continuity and inf-sup constants in the
    primal Gram norm and the w-weighted dual norm. Left as None they are
    computed on demand by :func:`coupling_constants`.
    """

    matrix: np.ndarray
    weights: np.ndarray | None = None
    M_b: float | None = None
    alpha_b: float | None = None

    def __post_init__(self):
        B = _readonly(np.atleast_2d(self.matrix) if np.size(self.matrix) else self.matrix)
        if B.ndim != 2:
            raise ValidationError("coupling matrix must be 2-D")
        object.__setattr__(self, "matrix", B)
        w = np.ones(B.shape[0]) if self.weights is None else np.asarray(self.weights, float)
        if w.shape != (B.shape[0],):
            raise ValidationError(f"weights must have length {B.shape[0]}")
        if np.any(w <= 0):
            raise ValidationError("pairing weights must be positive")
        object.__setattr__(self, "weights", _readonly(w))

    @classmethod
    def empty(cls, n: int) -> CouplingForm:
        """Coupling with no multipliers (the inf-sup condition is vacuous)."""
        return cls(np.zeros((0, n)), np.zeros(0))

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def n(self) -> int:
        return self.matrix.shape[1]

    def pair(self, v: np.ndarray, mu: np.ndarray) -> float:
        return float(mu @ (self.weights * (self.matrix @ v)))

    def transpose_apply(self, mu: np.ndarray) -> np.ndarray:
        """``B^T W mu``: the functional ``v -> b(v, mu)``."""
        return self.matrix.T @ (self.weights * mu)

    def dual_norm(self, mu: np.ndarray) -> float:
        return math.sqrt(float(np.sum(self.weights * mu * mu)))


def coupling_constants(B: CouplingForm, gram: np.ndarray | None = None) -> tuple[float, float]:
    """Return ``(alpha_b, M_b)``: extreme singular values of ``W^{1/2} B L^{-T}``.

    ``G = L L^T`` is the primal Gram matrix, so these are the inf-sup and
    continuity constants of ``b`` in the declared norms.
    """
    if B.m == 0:
        return float("inf"), 0.0
    C = np.sqrt(B.weights)[:, None] * B.matrix
    if gram is not None:
        L = np.linalg.cholesky(gram)
        C = sla.solve_triangular(L, C.T, lower=True).T
    s = np.linalg.svd(C, compute_uv=False)
    return float(s[-1]) if len(s) == B.m else 0.0, float(s[0])


@dataclass(frozen=True, eq=False)
class MultiplierSet:
    """Box ``{mu : |mu_i| <= g_i}``; contains 0 whenever all bounds are >= 0."""

    bounds: np.ndarray

    def __post_init__(self):
        g = _readonly(np.atleast_1d(self.bounds))
        if g.ndim != 1:
            raise ValidationError("bounds must be a vector")
        if np.any(g < 0) or not np.all(np.isfinite(g)):
            raise ValidationError("bounds must be finite and >= 0 so that 0 lies in the set")
        object.__setattr__(self, "bounds", g)

    @property
    def m(self) -> int:
        return self.bounds.shape[0]

    def contains(self, mu: np.ndarray, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(mu) <= self.bounds + tol))

    def scaled(self, factor: float) -> MultiplierSet:
        return MultiplierSet(factor * self.bounds)


def project_multiplier(mu: np.ndarray, lam_set: MultiplierSet) -> np.ndarray:
    """Euclidean projection onto the box (componentwise clamp)."""
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (lam_set.m,):
        raise ValueError(f"expected a vector of length {lam_set.m}, got shape {mu.shape}")
    return np.clip(mu, -lam_set.bounds, lam_set.bounds)


@dataclass(frozen=True, eq=False)
class StaticMixedInstance:
    A: PrimalOperator
    eta: np.ndarray
    coupling: CouplingForm
    multipliers: MultiplierSet
    rhs: np.ndarray
    k: np.ndarray

    def __post_init__(self):
        n = self.A.n
        for name in ("eta", "rhs", "k"):
            v = _readonly(getattr(self, name))
            if v.shape != (n,):
                raise ValidationError(f"{name} must have shape ({n},), got {v.shape}")
            if not np.all(np.isfinite(v)):
                raise ValidationError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.coupling.n != n:
            raise ValidationError(f"coupling has {self.coupling.n} columns, operator has {n}")
        if self.multipliers.m != self.coupling.m:
            raise ValidationError("multiplier set and coupling disagree on m")

    def with_data(self, eta=None, rhs=None, k=None) -> StaticMixedInstance:
        return replace(
            self,
            eta=self.eta if eta is None else eta,
            rhs=self.rhs if rhs is None else rhs,
            k=self.k if k is None else k,
        )


@dataclass(frozen=True)
class SaddleSolution:
    u: np.ndarray
    lam: np.ndarray
    iterations: int
    residual: float
    rho: float = float("nan")
    eq_residual: float = 0.0
    ineq_residual: float = 0.0


def inner_solve_primal(A: PrimalOperator, rhs: np.ndarray, tol: float = 1e-12,
                       max_newton: int = 100) -> np.ndarray:
    """Solve ``A(u) = rhs``.

    Linear operators use a cached Cholesky factorization (plus up to two
    refinement sweeps). The nonlinear case runs Newton from the linear-part
    solution, halving the step while the residual increases.
    """
    rhs = np.asarray(rhs, dtype=float)
    target = tol * (1.0 + np.linalg.norm(rhs))
    u = sla.cho_solve(A._cho, rhs)
    if A.is_linear:
        for _ in range(2):
            r = rhs - A.matrix @ u
            if np.linalg.norm(r) <= target:
                break
            u = u + sla.cho_solve(A._cho, r)
        return u

    r = A(u) - rhs
    rn = np.linalg.norm(r)
    for _ in range(max_newton):
        if rn <= target:
            return u
        try:
            du = np.linalg.solve(A.jacobian(u), -r)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular Newton Jacobian: {exc}", residual=rn) from exc
        t = 1.0
        for _ in range(40):
            cand = u + t * du
            r_c = A(cand) - rhs
            rn_c = np.linalg.norm(r_c)
            if rn_c < rn:
                break
            t *= 0.5
        u, r, rn = cand, r_c, rn_c
    if rn <= target:
        return u
    raise SolverError(f"Newton did not converge in {max_newton} iterations", residual=rn)


def kkt_residuals(inst: StaticMixedInstance, u: np.ndarray, lam: np.ndarray) -> tuple[float, float]:
    """Equality residual and the worst per-coordinate inequality violation.

    For coordinate i with ``d_i = (B(u - k))_i``: an interior multiplier needs
    ``d_i = 0``, one at ``+g_i`` needs ``d_i >= 0`` and one at ``-g_i`` needs
    ``d_i <= 0``.
    """
    B = inst.coupling
    eq = inst.A(u) + inst.eta + B.transpose_apply(lam) - inst.rhs
    if B.m == 0:
        return float(np.linalg.norm(eq)), 0.0
    g = inst.multipliers.bounds
    d = B.matrix @ (u - inst.k)
    upper = (g > 0) & (lam >= g)
    lower = (g > 0) & (lam <= -g)
    interior = (g > 0) & ~upper & ~lower
    viol = np.zeros_like(d)
    viol[interior] = np.abs(d[interior])
    viol[upper] = np.maximum(0.0, -d[upper])
    viol[lower] = np.maximum(0.0, d[lower])
    return float(np.linalg.norm(eq)), float(viol.max(initial=0.0))


def default_step(inst: StaticMixedInstance) -> float:
    """``rho = m_A / M_b^2``, with ``M_b`` computed when not declared."""
    M = inst.coupling.M_b
    if M is None:
        M = coupling_constants(inst.coupling, inst.A.gram)[1]
    return inst.A.m_A / (M * M)


def _validate(inst: StaticMixedInstance):
    if not inst.A.m_A > 0:
        raise ValidationError(f"A must be strongly monotone, got m_A={inst.A.m_A}")
    m = inst.coupling.m
    if m and np.linalg.matrix_rank(inst.coupling.matrix) < m:
        raise ValidationError("coupling matrix B is rank deficient (inf-sup fails)")


def uzawa_solve(inst: StaticMixedInstance, rho: float | str = "auto", tol: float = 1e-10,
                max_iter: int = 10_000, inner_tol: float = 1e-12,
                lam0: np.ndarray | None = None, max_halvings: int = 20) -> SaddleSolution:
    """Projection-Uzawa iteration for the static mixed problem.

    ``lam <- P(lam + rho * B(u - k))`` with ``u`` the exact primal solution for
    the current multiplier. The step is the gradient of the dual function in
    the w-weighted multiplier inner product, so ``rho < 2 m_A / M_b^2`` is
    admissible. Iteration stops once the increment is below
    ``tol * (1 + |lam|)`` and the contraction-based estimate of the remaining
    error is below the same bound. Ten consecutive non-decreasing increments
    trigger a restart with ``rho`` halved.
    """
    _validate(inst)
    A, B, box = inst.A, inst.coupling, inst.multipliers
    base = inst.rhs - inst.eta

    def primal(lam):
        return inner_solve_primal(A, base - B.transpose_apply(lam), tol=inner_tol)

    if B.m == 0:
        u = primal(np.zeros(0))
        eq, ineq = kkt_residuals(inst, u, np.zeros(0))
        return SaddleSolution(u, np.zeros(0), 0, 0.0, float("nan"), eq, ineq)

    rho = default_step(inst) if rho == "auto" else float(rho)
    if not rho > 0:
        raise ValueError(f"step must be positive, got {rho}")
    start = np.zeros(B.m) if lam0 is None else project_multiplier(lam0, box)
    floor = 100 * np.finfo(float).eps

    total = 0
    halvings = 0
    while True:
        lam = start.copy()
        u = primal(lam)
        prev = math.inf
        grow = 0
        diverged = False
        while total < max_iter:
            total += 1
            lam_new = project_multiplier(lam + rho * (B.matrix @ (u - inst.k)), box)
            step = float(np.linalg.norm(lam_new - lam))
            thresh = tol * (1.0 + float(np.linalg.norm(lam)))
            q = step / prev if prev > 0 and math.isfinite(prev) else 1.0
            lam = lam_new
            u = primal(lam)
            if step <= thresh:
                bound = step * q / (1.0 - q) if q < 1.0 else math.inf
                if step == 0.0 or bound <= thresh or step <= floor * (1.0 + np.linalg.norm(lam)):
                    eq, ineq = kkt_residuals(inst, u, lam)
                    return SaddleSolution(u, lam, total, step, rho, eq, ineq)
            grow = grow + 1 if step >= prev * (1.0 - 1e-9) else 0
            if grow >= 10 or not math.isfinite(step):
                diverged = True
                break
            prev = step
        if not diverged:
            raise SolverError(f"Uzawa did not converge in {max_iter} iterations (rho={rho:g})",
                              residual=step)
        halvings += 1
        if halvings > max_halvings:
            raise SolverError(f"Uzawa diverged after {max_halvings} step halvings", residual=step)
        rho *= 0.5
        warnings.warn(f"Uzawa increments growing; halving step to {rho:g}", RuntimeWarning,
                      stacklevel=2)


@dataclass(frozen=True)
class ConstantsReport:
    m_hat: float
    L_hat: float
    alpha_hat: float
    M_hat: float
    sampled_m: float
    sampled_L: float
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_constants(A: PrimalOperator, B: CouplingForm | None = None, samples: int = 100,
                     rng: np.random.Generator | int | None = None) -> ConstantsReport:
    """Estimate the structural constants of ``A`` and ``b`` and flag declared ones.

    Sampled ratios over random pairs give the empirical monotonicity and
    Lipschitz estimates. For a linear operator the exact extreme generalized
    eigenvalues of ``(K, G)`` are reported instead (the sampled values are
    still checked against the declared constants).
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(rng)
    ratios_m, ratios_L = [], []
    for _ in range(samples):
        u, v = rng.standard_normal((2, A.n))
        du = u - v
        nu = A.norm(du)
        if nu == 0:
            continue
        dA = A(u) - A(v)
        ratios_m.append(float(dA @ du) / nu**2)
        ratios_L.append(A.dual_norm(dA) / nu)
    sm, sL = min(ratios_m), max(ratios_L)

    if A.is_linear:
        ev = sla.eigh(A.matrix, A.gram_matrix, eigvals_only=True)
        m_hat, L_hat = float(ev[0]), float(max(abs(ev[0]), abs(ev[-1])))
    else:
        m_hat, L_hat = sm, sL

    violations = []
    if min(m_hat, sm) < A.m_A - _CONST_TOL * max(1.0, abs(A.m_A)):
        violations.append(f"monotonicity: observed {min(m_hat, sm):.6g} < declared m_A={A.m_A:.6g}")
    if max(L_hat, sL) > A.L_A + _CONST_TOL * max(1.0, abs(A.L_A)):
        violations.append(f"Lipschitz: observed {max(L_hat, sL):.6g} > declared L_A={A.L_A:.6g}")

    alpha_hat, M_hat = float("nan"), float("nan")
    if B is not None and B.m:
        alpha_hat, M_hat = coupling_constants(B, A.gram)
        if B.alpha_b is not None and B.alpha_b > alpha_hat * (1 + _CONST_TOL):
            violations.append(f"inf-sup: alpha_b={B.alpha_b:.6g} > computed {alpha_hat:.6g}")
        if B.M_b is not None and B.M_b < M_hat * (1 - _CONST_TOL):
            violations.append(f"continuity: M_b={B.M_b:.6g} < computed {M_hat:.6g}")
    return ConstantsReport(m_hat, L_hat, alpha_hat, M_hat, sm, sL, violations)


def random_instance(rng: np.random.Generator | int | None = None, n_max: int = 6,
                    m_max: int = 3, max_cond: float = 5.0) -> StaticMixedInstance:
    """Random well-posed instance: SPD linear ``A``, full-rank ``B``, box set.

    Dimensions are drawn with ``1 <= m <= min(n, m_max)``; bounds lie in
    ``[0, 2]`` so that both active and inactive coordinates occur. ``B`` is
    redrawn until its condition number is at most ``max_cond``: a nearly
    singular coupling has a tiny inf-sup constant and Uzawa then needs
    ~1e5 iterations.
    """
    rng = np.random.default_rng(rng)
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, min(n, m_max) + 1))
    Q = rng.standard_normal((n, n))
    K = Q @ Q.T / n + 0.5 * np.eye(n)
    ev = np.linalg.eigvalsh(K)
    while True:
        B = rng.standard_normal((m, n))
        if np.linalg.cond(B) <= max_cond:
            break
    return StaticMixedInstance(
        A=PrimalOperator(K, float(ev[0]), float(ev[-1])),
        eta=0.3 * rng.standard_normal(n),
        coupling=CouplingForm(B, rng.uniform(0.5, 2.0, m)),
        multipliers=MultiplierSet(rng.uniform(0.0, 2.0, m)),
        rhs=rng.standard_normal(n),
        k=0.3 * rng.standard_normal(n),
    )
