"""Parameter identification over a closed box by forward solves.

A parameter point holds the material constants, the friction bound and two
load amplitudes scaling fixed reference fields. Costs are evaluated on the
forward trajectory at one grid time; minimization is a full-factorial scan
followed by bounded Nelder-Mead in box-normalized coordinates.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize as sp_minimize

from .contact import AssembledInstance, ContactModel, Material, assemble, to_evolution_problem
from .errors import SolverError, ValidationError
from .history import TimeGrid, solve_evolution

NAMES = ("beta", "eta", "omega", "a0", "a2", "g")
PHYSICAL = ("beta", "eta", "omega", "g")
SCAN_CAP = 100_000
TRACE_COLUMNS = ("eval_id",) + NAMES + ("cost", "feasible")


@dataclass(frozen=True)
class ParameterPoint:
    beta: float
    eta: float
    omega: float
    a0: float
    a2: float
    g: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in NAMES], dtype=float)

    @classmethod
    def from_array(cls, x) -> ParameterPoint:
        x = np.asarray(x, dtype=float)
        if x.shape != (len(NAMES),):
            raise ValueError(f"expected {len(NAMES)} parameters, got shape {x.shape}")
        return cls(*(float(v) for v in x))


@dataclass(frozen=True)
class ParameterBox:
    """Closed box ``[lo, hi]``; ``beta, eta, omega, g`` must stay above ``floor``."""

    lo: ParameterPoint
    hi: ParameterPoint
    floor: float = 1e-3

    def __post_init__(self):
        if not self.floor > 0:
            raise ValidationError(f"floor must be > 0, got {self.floor}")
        problems = []
        for k in NAMES:
            lo, hi = getattr(self.lo, k), getattr(self.hi, k)
            if not (math.isfinite(lo) and math.isfinite(hi)):
                problems.append(f"{k}: bounds must be finite")
            elif lo > hi:
                problems.append(f"{k}: empty interval [{lo}, {hi}]")
            if k in PHYSICAL and lo < self.floor:
                problems.append(f"{k}: lower bound {lo} is below the floor {self.floor}")
        if problems:
            raise ValidationError("invalid parameter box: " + "; ".join(problems))

    @property
    def lower(self) -> np.ndarray:
        return self.lo.as_array()

    @property
    def upper(self) -> np.ndarray:
        return self.hi.as_array()

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, p: ParameterPoint, tol: float = 0.0) -> bool:
        x = p.as_array()
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def to_unit(self, x: np.ndarray) -> np.ndarray:
        w = self.width
        return np.divide(x - self.lower, w, out=np.zeros_like(x, dtype=float), where=w > 0)

    def from_unit(self, z: np.ndarray) -> np.ndarray:
        x = self.lower + np.clip(z, 0.0, 1.0) * self.width
        return np.minimum(np.maximum(x, self.lower), self.upper)


@dataclass(frozen=True, eq=False)
class Template:
    """Fixed mesh, time modulations, reference load fields and time grid.

    The reference fields are the template model's body and traction loads;
    a point's amplitudes scale them.
    """

    model: ContactModel
    grid: TimeGrid
    tol: float = 1e-10
    max_iter: int = 10_000

    def model_at(self, p: ParameterPoint) -> ContactModel:
        loads = self.model.loads
        return ContactModel(
            self.model.mesh, Material(p.beta, p.eta, p.omega),
            replace(loads, body=p.a0 * loads.body, traction=p.a2 * loads.traction), p.g)

    def solve_at(self, p: ParameterPoint, t: float) -> tuple[AssembledInstance, np.ndarray, np.ndarray]:
        asm = assemble(self.model_at(p))
        k = self.grid.index(t)
        traj = solve_evolution(to_evolution_problem(asm, self.grid.truncated(k)), tol=self.tol,
                               max_iter=self.max_iter)
        return asm, traj.u[k], traj.lam[k]


@dataclass(frozen=True, eq=False)
class CostSpec:
    """``tracking``: ``c1 |u - u0|_G^2 + c2 |lam - lam0|_w^2 + c3 |p|_W^2``.
    ``misfit``: ``int over the contact part of |u - u0|^2`` (lumped-free P1 mass).

    ``u0`` is a reduced displacement vector, ``lam0`` a multiplier vector;
    ``p_weights`` defines the weighted Euclidean norm on parameter points.
    """

    kind: str
    t: float
    u0: np.ndarray | None = None
    lam0: np.ndarray | None = None
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 0.0
    p_weights: np.ndarray = field(default_factory=lambda: np.ones(len(NAMES)))

    def __post_init__(self):
        if self.kind not in ("tracking", "misfit"):
            raise ValidationError(f"unknown cost kind {self.kind!r}")
        for k in ("c1", "c2", "c3"):
            if not getattr(self, k) >= 0:
                raise ValidationError(f"{k} must be >= 0")
        pw = np.asarray(self.p_weights, dtype=float)
        if pw.shape != (len(NAMES),) or np.any(pw < 0):
            raise ValidationError("p_weights must be 6 nonnegative numbers")
        object.__setattr__(self, "p_weights", pw)

    def check_dimensions(self, asm: AssembledInstance):
        if self.u0 is not None and np.shape(self.u0) != (asm.n,):
            raise ValidationError(f"u0 must have length {asm.n}")
        if self.lam0 is not None and np.shape(self.lam0) != (asm.m,):
            raise ValidationError(f"lam0 must have length {asm.m}")

    def value(self, asm: AssembledInstance, u: np.ndarray, lam: np.ndarray, p: ParameterPoint) -> float:
        self.check_dimensions(asm)
        du = u - (0.0 if self.u0 is None else self.u0)
        if self.kind == "misfit":
            return float(du @ asm.mass_contact @ du)
        dl = lam - (0.0 if self.lam0 is None else self.lam0)
        x = p.as_array()
        return float(self.c1 * (du @ asm.gram @ du) + self.c2 * np.sum(asm.weights * dl * dl)
                     + self.c3 * np.sum(self.p_weights * x * x))


@dataclass(frozen=True)
class Evaluation:
    eval_id: int
    point: ParameterPoint
    cost: float
    feasible: bool
    phase: str = ""
    incident: str = ""


def evaluate_cost(p: ParameterPoint, spec: CostSpec, template: Template) -> float:
    """Forward-solve at ``p`` and evaluate the cost at ``spec.t``.

    Raises :class:`SolverError` if the forward solve fails.
    """
    if spec.kind == "tracking" and spec.c1 == 0 and spec.c2 == 0:
        x = p.as_array()
        return float(spec.c3 * np.sum(spec.p_weights * x * x))
    asm, u, lam = template.solve_at(p, spec.t)
    return spec.value(asm, u, lam, p)


class _Evaluator:
    """Counts forward solves, caches repeated points and records the trace."""

    def __init__(self, spec: CostSpec, box: ParameterBox, template: Template, budget: int):
        self.spec, self.box, self.template, self.budget = spec, box, template, budget
        self.trace: list[Evaluation] = []
        self.cache: dict[bytes, float] = {}

    def _one(self, x: np.ndarray) -> tuple[float, str]:
        try:
            return evaluate_cost(ParameterPoint.from_array(x), self.spec, self.template), ""
        except (SolverError, ValidationError, FloatingPointError) as exc:
            return math.inf, f"{type(exc).__name__}: {exc}"

    def record(self, x: np.ndarray, cost: float, incident: str, phase: str):
        p = ParameterPoint.from_array(x)
        self.cache[x.tobytes()] = cost
        self.trace.append(Evaluation(len(self.trace), p, cost,
                                     self.box.contains(p) and math.isfinite(cost), phase, incident))

    def __call__(self, x: np.ndarray, phase: str) -> float:
        x = np.asarray(x, dtype=float)
        key = x.tobytes()
        if key in self.cache:
            return self.cache[key]
        if len(self.trace) >= self.budget:
            raise _BudgetExhausted
        cost, incident = self._one(x)
        self.record(x, cost, incident, phase)
        return cost

    def batch(self, xs: Sequence[np.ndarray], phase: str, workers: int = 1):
        if workers <= 1:
            for x in xs:
                self(x, phase)
            return
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(self._one, xs))
        for x, (cost, incident) in zip(xs, results):
            self.record(np.asarray(x, dtype=float), cost, incident, phase)


class _BudgetExhausted(Exception):
    pass


def _trace_csv(trace: Sequence[Evaluation]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for e in trace:
        w.writerow([e.eval_id, *(repr(float(v)) for v in e.point.as_array()), repr(e.cost),
                    int(e.feasible)])
    return buf.getvalue()


@dataclass(frozen=True)
class ScanTable:
    rows: tuple[Evaluation, ...]
    resolution: int

    def costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.rows])

    def best(self) -> Evaluation:
        return self.rows[int(np.argmin(self.costs()))]

    def to_csv(self) -> str:
        return _trace_csv(self.rows)


def _grid_points(box: ParameterBox, resolution: int) -> list[np.ndarray]:
    # cell centers: every box point is within width / (2 resolution) of a node
    centers = (np.arange(resolution) + 0.5) / resolution
    axes = [lo + centers * (hi - lo) for lo, hi in zip(box.lower, box.upper)]
    return [np.array(x) for x in itertools.product(*axes)]


def grid_scan(spec: CostSpec, box: ParameterBox, template: Template, resolution: int = 4,
              workers: int = 1) -> ScanTable:
    """Full-factorial scan with ``resolution`` cell-centered points per axis.

    Rows are ordered lexicographically with the last parameter varying fastest.
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    if resolution ** len(NAMES) > SCAN_CAP:
        raise ValueError(f"{resolution}^{len(NAMES)} evaluations exceed the cap of {SCAN_CAP}")
    ev = _Evaluator(spec, box, template, budget=SCAN_CAP)
    ev.batch(_grid_points(box, resolution), "scan", workers)
    return ScanTable(tuple(ev.trace), resolution)


@dataclass(frozen=True)
class OptimizationResult:
    point: ParameterPoint
    cost: float
    trace: tuple[Evaluation, ...]
    converged: bool
    scan_resolution: int

    @property
    def evaluations(self) -> int:
        return len(self.trace)

    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate(np.array([e.cost for e in self.trace]))

    def to_csv(self) -> str:
        return _trace_csv(self.trace)

    def write_csv(self, path: str | Path):
        Path(path).write_text(self.to_csv())


def scan_resolution_for(budget: int, resolution: int = 4, dims: int = len(NAMES)) -> int:
    """Largest resolution ``<= resolution`` whose scan uses at most half the budget.

    Returns 0 when even two points per axis would exceed that share.
    """
    r = resolution
    while r >= 2 and r ** dims > budget // 2:
        r -= 1
    return r if r >= 2 else 0


def minimize(spec: CostSpec, box: ParameterBox, template: Template, budget: int = 300,
             resolution: int = 4, xatol: float = 1e-9, fatol: float = 1e-14,
             workers: int = 1) -> OptimizationResult:
    """Scan then Nelder-Mead, within ``budget`` forward solves.

    The scan resolution is lowered until the scan uses at most half the
    budget (the box center is the start point if no scan fits). Nelder-Mead
    runs in unit-box coordinates with standard coefficients and an initial
    simplex of 5% box-width offsets around the best scanned point; simplex
    vertices are clipped to the box. Repeated points are served from a cache
    and do not count against the budget.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    ev = _Evaluator(spec, box, template, budget)
    r = scan_resolution_for(budget, resolution)
    converged = False
    try:
        if r:
            ev.batch(_grid_points(box, r), "scan", workers)
            z0 = box.to_unit(ev.trace[int(np.argmin([e.cost for e in ev.trace]))].point.as_array())
        else:
            z0 = np.full(len(NAMES), 0.5)
            ev(box.from_unit(z0), "start")
        d = len(NAMES)
        simplex = np.tile(z0, (d + 1, 1))
        for i in range(d):
            step = 0.05 if z0[i] + 0.05 <= 1.0 else -0.05
            simplex[i + 1, i] += step
        res = sp_minimize(
            lambda z: ev(box.from_unit(z), "simplex"), z0, method="Nelder-Mead",
            bounds=[(0.0, 1.0)] * d,
            options={"initial_simplex": simplex, "xatol": xatol, "fatol": fatol,
                     "maxfev": 10 * budget, "adaptive": False},
        )
        converged = bool(res.status == 0)
    except _BudgetExhausted:
        converged = False
    trace = tuple(ev.trace)
    costs = np.array([e.cost if e.feasible else math.inf for e in trace])
    best = trace[int(np.argmin(costs))]
    return OptimizationResult(best.point, best.cost, trace, converged, r)
