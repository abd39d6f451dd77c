"""P1 finite elements for a viscoelastic body in bilateral Tresca contact.

Plane-strain reduction with the 2-D trace. Displacements on clamped nodes are
removed; each contact node keeps only its tangential displacement (the normal
one is zero by construction) and carries one tangential multiplier. The
multiplier is a traction density bounded by ``g`` and is paired with the
tangential displacement through the lumped edge measure ``w_i``.

Corner rules: a node touching a clamped edge is clamped; a node shared by a
traction edge and a contact edge is a contact node. The tangent at a contact
node is the counterclockwise boundary direction ``(-n_y, n_x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ValidationError
from .history import EvolutionProblem, MemoryKernel, TimeGrid
from .mesh import CLAMPED, CONTACT, TRACTION, Mesh, generate_rect_mesh
from .saddle import CouplingForm, MultiplierSet, PrimalOperator, coupling_constants

DIM = 2


def _one(t: float) -> float:
    return 1.0


@dataclass(frozen=True)
class Material:
    beta: float
    eta: float
    omega: float

    def __post_init__(self):
        for name in ("beta", "eta", "omega"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValidationError(f"{name} must be >= 0, got {v}")


@dataclass(frozen=True, eq=False)
class Loads:
    """Nodal body force ``f0`` and traction ``f2`` (``(N, 2)`` arrays) and
    their time modulations ``theta``, ``zeta``."""

    body: np.ndarray
    traction: np.ndarray
    theta: Callable[[float], float] = _one
    zeta: Callable[[float], float] = _one

    def __post_init__(self):
        for name in ("body", "traction"):
            a = np.array(getattr(self, name), dtype=float)
            if a.ndim != 2 or a.shape[1] != DIM:
                raise ValidationError(f"{name} field must be an (N, 2) array")
            if not np.all(np.isfinite(a)):
                raise ValidationError(f"{name} field must be finite")
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def uniform(cls, mesh: Mesh, body=(0.0, 0.0), traction=(0.0, 0.0),
                theta: Callable[[float], float] = _one,
                zeta: Callable[[float], float] = _one) -> Loads:
        N = mesh.n_nodes
        return cls(np.tile(np.asarray(body, float), (N, 1)),
                   np.tile(np.asarray(traction, float), (N, 1)), theta, zeta)

    def scaled(self, body_factor: float, traction_factor: float) -> Loads:
        return Loads(body_factor * self.body, traction_factor * self.traction, self.theta, self.zeta)


@dataclass(frozen=True, eq=False)
class ContactModel:
    mesh: Mesh
    material: Material
    loads: Loads
    g: float

    def __post_init__(self):
        if not (math.isfinite(self.g) and self.g >= 0):
            raise ValidationError(f"friction bound g must be >= 0, got {self.g}")
        N = self.mesh.n_nodes
        if self.loads.body.shape[0] != N or self.loads.traction.shape[0] != N:
            raise ValidationError("load fields must have one row per mesh node")


def element_matrices(mesh: Mesh):
    """Per-triangle strain matrices ``Bmat`` (T, 3, 6) and areas (T,).

    Strain rows are ``(eps_xx, eps_yy, 2 eps_xy)``; local dofs are
    ``(u_x, u_y)`` per vertex.
    """
    p = mesh.nodes[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    area = 0.5 * ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / (2 * area[:, None])
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / (2 * area[:, None])
    Bm = np.zeros((len(area), 3, 6))
    Bm[:, 0, 0::2] = b
    Bm[:, 1, 1::2] = c
    Bm[:, 2, 0::2] = c
    Bm[:, 2, 1::2] = b
    return Bm, area


def _scatter(mesh: Mesh, ke: np.ndarray) -> sp.csr_matrix:
    dofs = np.empty((len(mesh.triangles), 6), dtype=np.int64)
    dofs[:, 0::2] = 2 * mesh.triangles
    dofs[:, 1::2] = 2 * mesh.triangles + 1
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    n = DIM * mesh.n_nodes
    M = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return (M + M.T) * 0.5


def assemble_full(mesh: Mesh):
    """Unconstrained ``(gram, div)`` matrices: ``int eps(u):eps(v)`` and
    ``int div u div v``. The elastic stiffness is ``2 beta gram + eta div``."""
    Bm, area = element_matrices(mesh)
    D = np.diag([1.0, 1.0, 0.5])
    ke_g = np.einsum("tki,kl,tlj->tij", Bm, D, Bm) * area[:, None, None]
    d = Bm[:, 0, :] + Bm[:, 1, :]
    ke_d = d[:, :, None] * d[:, None, :] * area[:, None, None]
    return _scatter(mesh, ke_g), _scatter(mesh, ke_d)


def mass_full(mesh: Mesh) -> sp.csr_matrix:
    """Vector P1 mass matrix on the domain."""
    area = mesh.areas()
    loc = (np.ones((3, 3)) + np.eye(3)) / 12.0
    ke = np.zeros((len(area), 6, 6))
    for c in range(DIM):
        ke[:, c::2, c::2] = loc * area[:, None, None]
    return _scatter(mesh, ke)


def edge_mass_full(mesh: Mesh, tag: int) -> sp.csr_matrix:
    """Vector P1 mass matrix on the edges carrying ``tag``."""
    edges = mesh.tagged(tag)
    n = DIM * mesh.n_nodes
    if len(edges) == 0:
        return sp.csr_matrix((n, n))
    L = np.linalg.norm(mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]], axis=1)
    loc = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    rows, cols, vals = [], [], []
    for c in range(DIM):
        for a in range(2):
            for b in range(2):
                rows.append(DIM * edges[:, a] + c)
                cols.append(DIM * edges[:, b] + c)
                vals.append(loc[a, b] * L)
    M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    return (M + M.T) * 0.5


@dataclass(frozen=True)
class DofMap:
    """Reduced dof bookkeeping.

    ``T`` maps reduced coordinates to full nodal displacements
    (``U_full = T @ u``). ``contact_nodes[i]`` owns multiplier ``i`` and its
    tangential dof is ``contact_dofs[i]``.
    """

    T: sp.csr_matrix
    clamped_nodes: np.ndarray
    contact_nodes: np.ndarray
    contact_dofs: np.ndarray
    normals: np.ndarray
    tangents: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return self.T.shape[1]


def build_dofmap(mesh: Mesh) -> DofMap:
    clamped = set(mesh.tagged(CLAMPED).ravel().tolist())
    normals_e = mesh.outward_normals()
    lengths = mesh.edge_lengths()
    normal_sum: dict[int, np.ndarray] = {}
    measure: dict[int, float] = {}
    for (a, b), tag, nrm, L in zip(mesh.edges, mesh.edge_tags, normals_e, lengths):
        if tag != CONTACT:
            continue
        for p in (int(a), int(b)):
            if p in clamped:
                continue
            normal_sum[p] = normal_sum.get(p, np.zeros(2)) + L * nrm
            measure[p] = measure.get(p, 0.0) + 0.5 * L

    rows, cols, vals = [], [], []
    contact_nodes, contact_dofs, normals, tangents, weights = [], [], [], [], []
    col = 0
    for p in range(mesh.n_nodes):
        if p in clamped:
            continue
        if p in normal_sum:
            nu = normal_sum[p] / np.linalg.norm(normal_sum[p])
            tau = np.array([-nu[1], nu[0]])
            rows += [DIM * p, DIM * p + 1]
            cols += [col, col]
            vals += [tau[0], tau[1]]
            contact_nodes.append(p)
            contact_dofs.append(col)
            normals.append(nu)
            tangents.append(tau)
            weights.append(measure[p])
            col += 1
        else:
            rows += [DIM * p, DIM * p + 1]
            cols += [col, col + 1]
            vals += [1.0, 1.0]
            col += 2
    T = sp.csr_matrix((vals, (rows, cols)), shape=(DIM * mesh.n_nodes, col))
    return DofMap(T, np.array(sorted(clamped), dtype=np.int64),
                  np.array(contact_nodes, dtype=np.int64), np.array(contact_dofs, dtype=np.int64),
                  np.array(normals).reshape(-1, 2), np.array(tangents).reshape(-1, 2),
                  np.array(weights))


@dataclass(frozen=True, eq=False)
class AssembledInstance:
    model: ContactModel
    dofs: DofMap
    stiffness: np.ndarray
    gram: np.ndarray
    div: np.ndarray
    coupling_matrix: np.ndarray
    weights: np.ndarray
    bounds: np.ndarray
    load_body: np.ndarray
    load_traction: np.ndarray
    mass_domain: np.ndarray = field(repr=False)
    mass_traction: np.ndarray = field(repr=False)
    mass_contact: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.stiffness.shape[0]

    @property
    def m(self) -> int:
        return self.coupling_matrix.shape[0]

    @property
    def m_A(self) -> float:
        return 2.0 * self.model.material.beta

    @property
    def L_A(self) -> float:
        mat = self.model.material
        return 2.0 * mat.beta + DIM * mat.eta

    def load(self, t: float) -> np.ndarray:
        loads = self.model.loads
        return loads.theta(t) * self.load_body + loads.zeta(t) * self.load_traction

    def primal_operator(self) -> PrimalOperator:
        return PrimalOperator(self.stiffness, self.m_A, self.L_A, gram=self.gram)

    @cached_property
    def _constants(self) -> tuple[float, float]:
        return coupling_constants(CouplingForm(self.coupling_matrix, self.weights), self.gram)

    @property
    def alpha_b(self) -> float:
        return self._constants[0]

    @property
    def M_b(self) -> float:
        return self._constants[1]

    def coupling(self) -> CouplingForm:
        if self.m == 0:
            return CouplingForm.empty(self.n)
        return CouplingForm(self.coupling_matrix, self.weights, M_b=self.M_b, alpha_b=self.alpha_b)

    def multiplier_set(self) -> MultiplierSet:
        return MultiplierSet(self.bounds)

    def kernel(self) -> MemoryKernel:
        return MemoryKernel(self.gram, omega=self.model.material.omega, s_m=1.0)

    @cached_property
    def trace_constant(self) -> float:
        """``c0``: norm of ``v -> (v, v on the traction part)`` from X to L2 x L2."""
        M = self.mass_domain + self.mass_traction
        return float(math.sqrt(sla.eigh(M, self.gram, eigvals_only=True)[-1]))

    def reconstruct(self, u: np.ndarray) -> np.ndarray:
        """Nodal displacement field ``(N, 2)`` from reduced coordinates."""
        return (self.dofs.T @ u).reshape(-1, DIM)

    def tangential(self, u: np.ndarray) -> np.ndarray:
        return self.coupling_matrix @ u

    def normal_on_contact(self, u: np.ndarray) -> np.ndarray:
        U = self.reconstruct(u)[self.dofs.contact_nodes]
        return np.einsum("ij,ij->i", U, self.dofs.normals)


def assemble(model: ContactModel) -> AssembledInstance:
    mesh = model.mesh
    if not np.any(mesh.edge_tags == CLAMPED):
        raise ValidationError("the clamped part is empty: coercivity is lost")
    dofs = build_dofmap(mesh)
    T = dofs.T
    G_full, D_full = assemble_full(mesh)
    mat = model.material

    def reduce(M):
        R = (T.T @ M @ T).toarray()
        return 0.5 * (R + R.T)

    G = reduce(G_full)
    Dv = reduce(D_full)
    K = 2.0 * mat.beta * G + mat.eta * Dv
    m = len(dofs.contact_nodes)
    Bc = np.zeros((m, dofs.n))
    Bc[np.arange(m), dofs.contact_dofs] = 1.0

    M_dom = mass_full(mesh)
    M_trac = edge_mass_full(mesh, TRACTION)
    f_body = T.T @ (M_dom @ model.loads.body.ravel())
    f_trac = T.T @ (M_trac @ model.loads.traction.ravel())
    for a in (G, Dv, K, f_body, f_trac):
        a.setflags(write=False)
    return AssembledInstance(
        model=model, dofs=dofs, stiffness=K, gram=G, div=Dv, coupling_matrix=Bc,
        weights=dofs.weights, bounds=np.full(m, model.g), load_body=np.asarray(f_body),
        load_traction=np.asarray(f_trac), mass_domain=reduce(M_dom), mass_traction=reduce(M_trac),
        mass_contact=reduce(edge_mass_full(mesh, CONTACT)),
    )


def to_evolution_problem(model: ContactModel | AssembledInstance, grid: TimeGrid) -> EvolutionProblem:
    """Package the contact model as a history-dependent mixed problem (h = 0)."""
    asm = model if isinstance(model, AssembledInstance) else assemble(model)
    zero = np.zeros(asm.n)
    zero.setflags(write=False)
    return EvolutionProblem(
        A=asm.primal_operator(), kernel=asm.kernel(), coupling=asm.coupling(),
        multipliers=asm.multiplier_set(), load=asm.load, grid=grid,
        constraint=lambda t: zero,
    )


@dataclass(frozen=True)
class FrictionReport:
    bound_residual: float
    slip_residual: float
    stick: np.ndarray
    slip: np.ndarray
    weighted_slip_residual: float = 0.0

    @property
    def max_residual(self) -> float:
        return max(self.bound_residual, self.slip_residual)


def check_friction_kkt(u_tau: np.ndarray, lam: np.ndarray, g: float | np.ndarray,
                       weights: np.ndarray | None = None, tol: float = 1e-8) -> FrictionReport:
    """Residuals of the discrete Tresca law ``|lam| <= g``, ``lam = g sign(u_tau)`` on slip.

    Nodes with ``|u_tau| <= tol`` are classified as sticking and only need the
    bound; the others are sliding.
    """
    u_tau = np.asarray(u_tau, dtype=float)
    lam = np.asarray(lam, dtype=float)
    g = np.broadcast_to(np.asarray(g, dtype=float), lam.shape)
    w = np.ones_like(lam) if weights is None else np.asarray(weights, dtype=float)
    bound = np.maximum(0.0, np.abs(lam) - g)
    slipping = np.abs(u_tau) > tol
    slip_res = np.where(slipping, np.abs(lam - g * np.sign(u_tau)), 0.0)
    return FrictionReport(
        bound_residual=float(bound.max(initial=0.0)),
        slip_residual=float(slip_res.max(initial=0.0)),
        stick=np.flatnonzero(~slipping),
        slip=np.flatnonzero(slipping),
        weighted_slip_residual=float(np.sum(w * slip_res)),
    )


def solve_dirichlet(mesh: Mesh, material: Material, fixed_nodes: np.ndarray,
                    values: np.ndarray, body: np.ndarray | None = None) -> np.ndarray:
    """Static elasticity with prescribed displacements on ``fixed_nodes``.

    Ignores boundary tags entirely (no contact); used for patch tests.
    """
    G_full, D_full = assemble_full(mesh)
    K = (2.0 * material.beta * G_full + material.eta * D_full).toarray()
    n = DIM * mesh.n_nodes
    F = np.zeros(n) if body is None else mass_full(mesh) @ np.asarray(body, float).ravel()
    fixed = np.zeros(n, dtype=bool)
    fixed_nodes = np.asarray(fixed_nodes)
    fixed[DIM * fixed_nodes] = fixed[DIM * fixed_nodes + 1] = True
    U = np.zeros(n)
    U[fixed] = np.asarray(values, dtype=float).ravel()
    free = ~fixed
    U[free] = np.linalg.solve(K[np.ix_(free, free)], F[free] - K[np.ix_(free, fixed)] @ U[fixed])
    return U.reshape(-1, DIM)


# degree-2 rule on the reference triangle (edge midpoints)
_QP = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])


def energy_error(mesh: Mesh, U: np.ndarray, strain: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> float:
    """``|u_h - u|_X`` for a nodal P1 field ``U`` against an exact strain.

    ``strain(x, y)`` returns ``(eps_xx, eps_yy, eps_xy)`` stacked on the last
    axis.
    """
    Bm, area = element_matrices(mesh)
    loc = np.empty((len(area), 6))
    loc[:, 0::2] = U[mesh.triangles, 0]
    loc[:, 1::2] = U[mesh.triangles, 1]
    eh = np.einsum("tkj,tj->tk", Bm, loc)
    eh[:, 2] *= 0.5
    p = mesh.nodes[mesh.triangles]
    total = 0.0
    for bary in _QP:
        xy = np.einsum("i,tij->tj", bary, p)
        diff = eh - np.asarray(strain(xy[:, 0], xy[:, 1]))
        sq = diff[:, 0] ** 2 + diff[:, 1] ** 2 + 2.0 * diff[:, 2] ** 2
        total += float(np.sum(sq * area)) / 3.0
    return math.sqrt(total)


def _ramp(t: float) -> float:
    return t


def demo_model(nx: int = 8, g: float = 0.1, material: Material = Material(1.0, 0.5, 1.0)) -> ContactModel:
    """Unit square, left side clamped, bottom in contact, uniform loads.

    Body force ``(0, -1)`` and a traction ``(0.5, 0)`` ramped linearly in time
    on the top and right sides. With ``g = 0.1`` the contact nodes near the
    clamp stick while the rest slip.
    """
    mesh = generate_rect_mesh(nx, nx)
    loads = Loads.uniform(mesh, body=(0.0, -1.0), traction=(0.5, 0.0), zeta=_ramp)
    return ContactModel(mesh, material, loads, g)
