"""Data-perturbation studies: indexed problem families, error tables, set
convergence of scaled friction boxes and the Lipschitz stability ratio.

A family is a sequence of problems indexed by ``n`` whose data converge to a
base problem. The default perturbation law is ``x_n = x (1 + 1/n)`` applied to
every physical parameter and both load fields.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .contact import DIM, ContactModel, Material, assemble, to_evolution_problem
from .errors import SolverError, ValidationError
from .history import EvolutionProblem, MemoryKernel, TimeGrid, Trajectory, solve_evolution
from .saddle import (
    CouplingForm,
    MultiplierSet,
    PrimalOperator,
    StaticMixedInstance,
    coupling_constants,
    project_multiplier,
    uzawa_solve,
)

DEFAULT_SCHEDULE = (1, 2, 4, 8, 16, 32)
PARAMETERS = ("beta", "eta", "omega", "g", "body", "traction")

Override = Callable[[object, int], object]


def default_law(x, n: int):
    return x * (1.0 + 1.0 / n)


def fixed_law(x, n: int):
    return x


def _check_schedule(schedule: Sequence[int]) -> tuple[int, ...]:
    sched = tuple(int(n) for n in schedule)
    if not sched:
        raise ValueError("schedule must be nonempty")
    if any(n < 1 for n in sched) or any(b <= a for a, b in zip(sched, sched[1:])):
        raise ValueError(f"schedule must be strictly increasing with indices >= 1, got {sched}")
    return sched


def window(t: float) -> int:
    """Smallest integer window ``[0, m]`` (``m >= 1``) containing ``t``."""
    return max(1, math.ceil(t - 1e-12))


@dataclass(frozen=True, eq=False)
class FamilyMember:
    n: int
    model: ContactModel | None
    problem: EvolutionProblem | None
    F_n: float
    omega_gap: float
    g_n: float
    m_n: float
    L_n: float
    s_n: float
    alpha_n: float
    M_n: float

    def F_n_m(self, m: int) -> float:
        """History-operator defect on the window ``[0, m]``."""
        return m * self.omega_gap

    def evolution(self, grid: TimeGrid) -> EvolutionProblem:
        if self.model is not None:
            return to_evolution_problem(self.model, grid)
        return replace(self.problem, grid=grid)


@dataclass(frozen=True, eq=False)
class PerturbationFamily:
    """Base problem, schedule, members and the uniform-bound witnesses.

    ``witnesses`` holds ``m0 = min m_n``, ``L0 = max L_n``, ``s0 = max s_n``,
    ``alpha0 = min alpha_n`` and ``M0 = max M_n`` over the schedule.
    """

    base: FamilyMember
    schedule: tuple[int, ...]
    members: tuple[FamilyMember, ...]
    witnesses: dict = field(default_factory=dict)
    gram: np.ndarray | None = None
    weights: np.ndarray | None = None

    def witnesses_hold(self) -> bool:
        w = self.witnesses
        return (w["m0"] > 0 and all(
            m.m_n >= w["m0"] and m.L_n <= w["L0"] and m.s_n <= w["s0"]
            and m.alpha_n >= w["alpha0"] and m.M_n <= w["M0"] for m in self.members))


def _witnesses(members: Sequence[FamilyMember]) -> dict:
    return {
        "m0": min(m.m_n for m in members),
        "L0": max(m.L_n for m in members),
        "s0": max(m.s_n for m in members),
        "alpha0": min(m.alpha_n for m in members),
        "M0": max(m.M_n for m in members),
    }


def _contact_member(n: int, model: ContactModel, base: ContactModel, alpha: float, M: float) -> FamilyMember:
    mat, ref = model.material, base.material
    return FamilyMember(
        n=n, model=model, problem=None,
        F_n=2.0 * abs(mat.beta - ref.beta) + DIM * abs(mat.eta - ref.eta),
        omega_gap=abs(mat.omega - ref.omega), g_n=model.g,
        m_n=2.0 * mat.beta, L_n=2.0 * mat.beta + DIM * mat.eta, s_n=1.0,
        alpha_n=alpha, M_n=M,
    )


def build_family(base: ContactModel, schedule: Sequence[int] = DEFAULT_SCHEDULE,
                 overrides: Mapping[str, Override | str] | None = None) -> PerturbationFamily:
    """Materialize the indexed contact models.

    ``overrides`` maps a parameter name (``beta, eta, omega, g, body,
    traction``) to a law ``(base_value, n) -> value`` or to ``"fixed"``.
    Unlisted parameters follow ``x (1 + 1/n)``. The coupling form is shared by
    all members, so the inf-sup and continuity witnesses come from the base.
    """
    sched = _check_schedule(schedule)
    laws: dict[str, Override] = {p: default_law for p in PARAMETERS}
    for key, law in (overrides or {}).items():
        if key not in laws:
            raise ValueError(f"unknown family parameter {key!r}; expected one of {PARAMETERS}")
        if law == "fixed":
            law = fixed_law
        elif law == "default":
            law = default_law
        elif not callable(law):
            raise ValueError(f"override for {key!r} must be callable, 'fixed' or 'default'")
        laws[key] = law

    asm = assemble(base)
    alpha, M = asm.alpha_b, asm.M_b
    mat, loads = base.material, base.loads
    members = []
    for n in sched:
        beta_n = float(laws["beta"](mat.beta, n))
        if not beta_n > 0:
            raise ValidationError(f"beta_{n} = {beta_n} must be > 0 (uniform monotonicity)")
        g_n = float(laws["g"](base.g, n))
        if base.g > 0 and not g_n > 0:
            raise ValidationError(f"g_{n} = {g_n} must be > 0 for the scaled friction box")
        model = ContactModel(
            base.mesh,
            Material(beta_n, float(laws["eta"](mat.eta, n)), float(laws["omega"](mat.omega, n))),
            replace(loads, body=np.asarray(laws["body"](loads.body, n)),
                    traction=np.asarray(laws["traction"](loads.traction, n))),
            g_n,
        )
        members.append(_contact_member(n, model, base, alpha, M))
    base_member = _contact_member(0, base, base, alpha, M)
    return PerturbationFamily(base_member, sched, tuple(members), _witnesses(members),
                              gram=asm.gram, weights=asm.weights)


def build_abstract_family(base: EvolutionProblem, schedule: Sequence[int] = DEFAULT_SCHEDULE,
                          E: np.ndarray | None = None,
                          scale: Callable[[int], float] = lambda n: 1.0 + 1.0 / n) -> PerturbationFamily:
    """Family of abstract problems ``A_n = s_n A``, ``omega_n = s_n omega``,
    ``B_n = B + E / n``, ``Lambda_n = s_n Lambda``, ``f_n = s_n f`` with
    ``s_n = scale(n)``. Only exponential kernels are supported.
    """
    sched = _check_schedule(schedule)
    if not base.kernel.is_exponential:
        raise ValidationError("abstract families need an exponential kernel")
    B0 = base.coupling
    E = np.zeros_like(B0.matrix) if E is None else np.asarray(E, dtype=float)
    if E.shape != B0.matrix.shape:
        raise ValidationError(f"E must have shape {B0.matrix.shape}")
    gram = base.A.gram_matrix

    def constants(coupling):
        return coupling_constants(coupling, base.A.gram) if coupling.m else (math.inf, 0.0)

    alpha0, M0 = constants(B0)
    members = []
    for n in sched:
        s = float(scale(n))
        if not s > 0:
            raise ValidationError(f"scale({n}) = {s} must be > 0")
        coupling = CouplingForm(B0.matrix + E / n, B0.weights)
        alpha, M = constants(coupling)
        A_n = replace(base.A, matrix=s * base.A.matrix, m_A=s * base.A.m_A, L_A=s * base.A.L_A)
        load = base.load
        problem = replace(
            base, A=A_n, kernel=replace(base.kernel, omega=s * base.kernel.omega),
            coupling=coupling, multipliers=base.multipliers.scaled(s),
            load=lambda t, load=load, s=s: s * np.asarray(load(t), dtype=float),
        )
        g_n = s * float(base.multipliers.bounds.max(initial=0.0))
        members.append(FamilyMember(
            n=n, model=None, problem=problem, F_n=abs(s - 1.0) * base.A.L_A,
            omega_gap=abs(s - 1.0) * base.kernel.omega, g_n=g_n, m_n=A_n.m_A, L_n=A_n.L_A,
            s_n=base.kernel.s_m, alpha_n=alpha, M_n=M))
    base_member = FamilyMember(0, None, base, 0.0, 0.0, float(base.multipliers.bounds.max(initial=0.0)),
                               base.A.m_A, base.A.L_A, base.kernel.s_m, alpha0, M0)
    return PerturbationFamily(base_member, sched, tuple(members), _witnesses(members),
                              gram=gram, weights=B0.weights)


@dataclass(frozen=True)
class CouplingLimitReport:
    """Sampled upper-limit check for the perturbed coupling forms.

    ``gaps[k]`` is the worst ``b_n(w - z_n, mu_n) - b(w - z, mu)`` at the
    k-th schedule index. Sampled evidence only: the hypothesis quantifies over
    all weakly convergent sequences.
    """

    schedule: tuple[int, ...]
    gaps: np.ndarray

    @property
    def ok(self) -> bool:
        """Gaps nonincreasing and the last one at most twice the ``1/n`` decay
        from the first (or already nonpositive)."""
        g, n = self.gaps, np.asarray(self.schedule, dtype=float)
        if g[-1] <= 1e-12:
            return True
        decay = max(g[0], 0.0) * n[0] / n[-1]
        return bool(np.all(np.diff(g) <= 1e-12) and g[-1] <= 2.0 * decay)


def coupling_limit_check(family: PerturbationFamily, samples: int = 20,
                         rng: np.random.Generator | int | None = None) -> CouplingLimitReport:
    base = family.base.problem
    if base is None:
        base = to_evolution_problem(family.base.model, TimeGrid(1.0, 0))
    B = base.coupling
    rng = np.random.default_rng(rng)
    gaps = np.full(len(family.members), -math.inf)
    for _ in range(samples):
        z, w, dz = rng.standard_normal((3, B.n))
        mu, dmu = rng.standard_normal((2, B.m))
        ref = B.pair(w - z, mu)
        for k, member in enumerate(family.members):
            Bn = member.problem.coupling if member.problem is not None else B
            n = member.n
            gaps[k] = max(gaps[k], Bn.pair(w - (z + dz / n), mu + dmu / n) - ref)
    return CouplingLimitReport(family.schedule, gaps)


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    t: float
    e_u: float
    e_lambda: float
    F_n: float
    F_n_m: float
    g_n: float


CSV_COLUMNS = ("n", "t", "e_u", "e_lambda", "F_n", "F_n_m", "g_n")


@dataclass(frozen=True)
class ConvergenceTable:
    """Per-(n, t) errors: ``e_u`` in the Gram norm and ``e_lambda`` in the
    w-weighted norm. In finite dimensions weak and strong multiplier
    convergence coincide, so ``e_lambda`` is a strong-norm error."""

    rows: tuple[ConvergenceRow, ...]
    probe_times: tuple[float, ...]
    reference_tol: float
    family_tol: float

    def column(self, name: str, t: float) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows if abs(r.t - t) <= 1e-12 * max(1, abs(t))])

    def indices(self, t: float) -> np.ndarray:
        return self.column("n", t).astype(int)

    def slope(self, name: str, t: float) -> float:
        """Least-squares slope of ``log e`` against ``log n`` (positive errors only)."""
        n, e = self.indices(t), self.column(name, t)
        keep = e > 0
        if keep.sum() < 2:
            return math.nan
        return float(np.polyfit(np.log(n[keep]), np.log(e[keep]), 1)[0])

    def slopes(self) -> dict[float, tuple[float, float]]:
        return {t: (self.slope("e_u", t), self.slope("e_lambda", t)) for t in self.probe_times}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.n, repr(r.t), repr(r.e_u), repr(r.e_lambda), repr(r.F_n),
                        repr(r.F_n_m), repr(r.g_n)])
        return buf.getvalue()

    def write_csv(self, path: str | Path):
        Path(path).write_text(self.to_csv())


def run_convergence_study(family: PerturbationFamily, grid: TimeGrid, probe_times: Sequence[float],
                          tol: float = 1e-10, reference_tol: float = 1e-12,
                          max_iter: int = 10_000, workers: int = 1) -> ConvergenceTable:
    """Solve the base problem (tight tolerance) and every member on ``grid``.

    Members are independent; ``workers > 1`` solves them on a thread pool. Rows
    are ordered by ``(n, t)`` regardless of completion order.
    """
    probes = tuple(float(t) for t in probe_times)
    ks = [grid.index(t) for t in probes]
    K = max(ks)
    sub = grid.truncated(K)
    G = family.gram
    w = family.weights

    def gnorm(v):
        return math.sqrt(max(float(v @ G @ v), 0.0))

    def wnorm(mu):
        return math.sqrt(float(np.sum(w * mu * mu)))

    def solve(member: FamilyMember, solver_tol: float) -> Trajectory:
        try:
            return solve_evolution(member.evolution(sub), tol=solver_tol, max_iter=max_iter)
        except SolverError as exc:
            t = sub.nodes[exc.node] if exc.node is not None else math.nan
            raise SolverError(f"family index n={member.n}, t={t:g}: {exc}", residual=exc.residual,
                              node=exc.node) from exc

    ref = solve(family.base, reference_tol)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trajs = list(pool.map(lambda m: solve(m, tol), family.members))
    else:
        trajs = [solve(m, tol) for m in family.members]

    rows = []
    for member, traj in zip(family.members, trajs):
        for t, k in zip(probes, ks):
            rows.append(ConvergenceRow(
                member.n, t, gnorm(traj.u[k] - ref.u[k]), wnorm(traj.lam[k] - ref.lam[k]),
                member.F_n, member.F_n_m(window(t)), member.g_n))
    rows.sort(key=lambda r: (r.n, r.t))
    return ConvergenceTable(tuple(rows), probes, reference_tol, tol)


@dataclass(frozen=True)
class MoscoReport:
    """Discrete Mosco diagnostics for ``Lambda_n = (g_n / g) Lambda``.

    Arrays are indexed ``[n, sample]``: ``recovery`` holds
    ``|(g_n/g) mu - mu|`` for samples inside the limit box, ``recovery_expected``
    the closed form ``|g_n/g - 1| |mu|``, ``projection`` holds
    ``|P_n(mu) - P(mu)|`` for all samples and ``hausdorff`` the box distance
    ``|g_n - g| sqrt(m)``.
    """

    g_schedule: np.ndarray
    recovery: np.ndarray
    recovery_expected: np.ndarray
    recovery_feasible: bool
    projection: np.ndarray
    hausdorff: np.ndarray

    @property
    def recovery_gap(self) -> float:
        return float(np.abs(self.recovery - self.recovery_expected).max(initial=0.0))

    @property
    def projection_monotone(self) -> bool:
        worst = self.projection.max(axis=1) if self.projection.size else np.zeros(0)
        return bool(np.all(np.diff(worst) <= 1e-15))


def mosco_check(g_schedule: Sequence[float], g: float, samples: np.ndarray) -> MoscoReport:
    """Check recovery sequences and projection convergence of scaled boxes.

    ``samples`` is a ``(k, m)`` array of multipliers; recovery is checked on the
    ones lying in the limit box, projection convergence on all of them.
    """
    if not g > 0:
        raise ValueError("g must be > 0")
    gs = np.asarray(g_schedule, dtype=float)
    if np.any(gs <= 0):
        raise ValueError("every g_n must be > 0")
    mus = np.atleast_2d(np.asarray(samples, dtype=float))
    m = mus.shape[1]
    box = MultiplierSet(np.full(m, g))
    inside = np.array([box.contains(mu, tol=0.0) for mu in mus], dtype=bool)
    norms = np.linalg.norm(mus[inside], axis=1)
    rec, rec_exp, proj = [], [], []
    feasible = True
    P = np.array([project_multiplier(mu, box) for mu in mus]).reshape(mus.shape)
    for gn in gs:
        box_n = MultiplierSet(np.full(m, gn))
        scaled = (gn / g) * mus[inside]
        feasible &= all(box_n.contains(mu, tol=1e-15 * gn) for mu in scaled)
        rec.append(np.linalg.norm(scaled - mus[inside], axis=1))
        rec_exp.append(abs(gn / g - 1.0) * norms)
        Pn = np.array([project_multiplier(mu, box_n) for mu in mus]).reshape(mus.shape)
        proj.append(np.linalg.norm(Pn - P, axis=1))
    return MoscoReport(gs, np.array(rec), np.array(rec_exp), bool(feasible), np.array(proj),
                       np.abs(gs - g) * math.sqrt(m))


@dataclass(frozen=True)
class StabilityReport:
    lhs: float
    rhs: float
    ratio: float
    uniqueness_violation: bool = False


def _data_gap(a: StaticMixedInstance, b: StaticMixedInstance) -> float:
    A = a.A
    return A.dual_norm(a.eta - b.eta) + A.dual_norm(a.rhs - b.rhs) + A.norm(a.k - b.k)


def stability_ratio(inst1: StaticMixedInstance, inst2: StaticMixedInstance, tol: float = 1e-10,
                    sol1=None, sol2=None) -> StabilityReport:
    """Solution gap over data gap for two instances sharing ``A``, ``B`` and ``Lambda``.

    Solution gap: Gram norm for ``u`` plus w-norm for ``lam``. Data gap: dual
    norms of the history offsets and loads plus the primal norm of ``k``.
    """
    if inst1.A is not inst2.A or inst1.coupling is not inst2.coupling:
        if not (np.array_equal(inst1.A.matrix, inst2.A.matrix)
                and np.array_equal(inst1.coupling.matrix, inst2.coupling.matrix)
                and np.array_equal(inst1.multipliers.bounds, inst2.multipliers.bounds)):
            raise ValueError("instances must share A, B and the multiplier set")
    s1 = sol1 or uzawa_solve(inst1, tol=tol)
    s2 = sol2 or uzawa_solve(inst2, tol=tol)
    lhs = inst1.A.norm(s1.u - s2.u) + inst1.coupling.dual_norm(s1.lam - s2.lam)
    rhs = _data_gap(inst1, inst2)
    if rhs == 0.0:
        scale = 1.0 + inst1.A.norm(s1.u) + inst1.coupling.dual_norm(s1.lam)
        return StabilityReport(lhs, 0.0, 0.0, uniqueness_violation=lhs > 2 * tol * scale)
    return StabilityReport(lhs, rhs, lhs / rhs)


@dataclass(frozen=True)
class StabilitySweep:
    scales: np.ndarray
    ratios: np.ndarray
    zero_gap: float

    @property
    def max_ratio(self) -> float:
        return float(self.ratios.max())

    @property
    def median_ratio(self) -> float:
        return float(np.median(self.ratios))

    @property
    def coarse_ratio(self) -> float:
        return float(self.ratios[np.argmax(self.scales)])


def stability_sweep(inst: StaticMixedInstance, scales: Sequence[float] = tuple(10.0 ** -np.arange(1, 7)),
                    rng: np.random.Generator | int | None = None, tol: float = 1e-10) -> StabilitySweep:
    """Perturb ``(eta, rhs, k)`` along one random direction at each scale.

    The direction is normalized so that the data gap at scale ``eps`` is
    exactly ``eps``.
    """
    rng = np.random.default_rng(rng)
    n = inst.A.n
    d_eta, d_rhs, d_k = rng.standard_normal((3, n))
    unit = inst.A.dual_norm(d_eta) + inst.A.dual_norm(d_rhs) + inst.A.norm(d_k)
    d_eta, d_rhs, d_k = d_eta / unit, d_rhs / unit, d_k / unit
    base = uzawa_solve(inst, tol=tol)
    zero = stability_ratio(inst, inst.with_data(), tol=tol, sol1=base)
    ratios = []
    for eps in scales:
        pert = inst.with_data(eta=inst.eta + eps * d_eta, rhs=inst.rhs + eps * d_rhs, k=inst.k + eps * d_k)
        ratios.append(stability_ratio(inst, pert, tol=tol, sol1=base).ratio)
    return StabilitySweep(np.asarray(scales, dtype=float), np.array(ratios), zero.lhs)


def random_evolution_problem(n: int, m: int, rng: np.random.Generator | int | None = None,
                             T: float = 1.0, N: int = 10, omega: float = 1.0) -> EvolutionProblem:
    """Random well-posed abstract evolution problem (Euclidean norms)."""
    rng = np.random.default_rng(rng)
    Q = rng.standard_normal((n, n))
    K = Q @ Q.T + n * np.eye(n)
    ev = np.linalg.eigvalsh(K)
    A = PrimalOperator(K, float(ev[0]), float(ev[-1]))
    B = rng.standard_normal((m, n))
    f = rng.standard_normal(n)
    return EvolutionProblem(
        A=A, kernel=MemoryKernel(np.eye(n), omega=omega), coupling=CouplingForm(B),
        multipliers=MultiplierSet(np.full(m, 0.5)), load=lambda t: (1.0 + t) * f,
        grid=TimeGrid.from_horizon(T, N),
    )
