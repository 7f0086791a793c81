"""Assembly and solution of the deterministic boundary value problems.

Poisson and plane linear elasticity with P1 elements on the fixed box mesh,
a weak-material (Ersatz) density per triangle, and a hand-rolled diagonally
preconditioned conjugate gradient solver so that runs are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .mesh import BoundaryTag, Mesh, boundary_mass_matrix, p1_gradients

__all__ = [
    "FieldKind",
    "Field",
    "HookeLaw",
    "OperatorSpec",
    "StateEnsemble",
    "SolverConvergenceError",
    "assemble_poisson",
    "assemble_elasticity",
    "assemble_mass",
    "vector_boundary_mass",
    "apply_dirichlet",
    "apply_dirichlet_dofs",
    "solve_spd",
    "solve_state_ensemble",
]


class FieldKind(Enum):
    SCALAR = 1
    VECTOR2 = 2


@dataclass
class Field:
    """Nodal values: one scalar per node, or two interleaved components."""

    values: np.ndarray
    kind: FieldKind = FieldKind.SCALAR

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    @property
    def components(self) -> int:
        return 1 if self.kind is FieldKind.SCALAR else 2


@dataclass(frozen=True)
class HookeLaw:
    """Isotropic material: stress = 2*mu*strain + lam*tr(strain)*I."""

    lam: float
    mu: float

    def __post_init__(self):
        if self.mu <= 0.0 or self.lam + 2.0 * self.mu / 2.0 <= 0.0:
            raise ValueError(f"invalid Lame pair lam={self.lam}, mu={self.mu}")

    def voigt(self) -> np.ndarray:
        """3x3 constitutive matrix acting on (e11, e22, 2*e12)."""
        lam, mu = self.lam, self.mu
        return np.array(
            [
                [lam + 2.0 * mu, lam, 0.0],
                [lam, lam + 2.0 * mu, 0.0],
                [0.0, 0.0, mu],
            ]
        )


@dataclass
class OperatorSpec:
    """Which boundary value problem to assemble, with its Ersatz density.

    ``absorption`` adds a symmetric PSD reaction term to the scalar
    operator: either a per-node diagonal array or a full sparse matrix
    (e.g. a strongly scaled mass matrix of the void region, which clamps
    the state to zero beyond the free boundary).
    """

    kind: str  # "poisson" | "elasticity"
    density: np.ndarray
    law: HookeLaw | None = None
    absorption: object | None = None

    def __post_init__(self):
        if self.kind not in ("poisson", "elasticity"):
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if self.kind == "elasticity" and self.law is None:
            raise ValueError("elasticity operator requires a HookeLaw")
        self.density = np.asarray(self.density, dtype=float)
        if self.absorption is not None and self.kind != "poisson":
            raise ValueError("absorption is only supported for the scalar operator")
        if isinstance(self.absorption, np.ndarray) and np.any(self.absorption < 0.0):
            raise ValueError("absorption coefficients must be non-negative")

    @property
    def field_kind(self) -> FieldKind:
        return FieldKind.SCALAR if self.kind == "poisson" else FieldKind.VECTOR2


class SolverConvergenceError(RuntimeError):
    """Conjugate gradient failed to reach the requested residual."""

    def __init__(self, residual: float, tol: float, iterations: int, context: str = ""):
        self.residual = residual
        self.tol = tol
        self.iterations = iterations
        suffix = f" ({context})" if context else ""
        super().__init__(
            f"CG did not converge: relative residual {residual:.3e} > {tol:.3e} "
            f"after {iterations} iterations{suffix}"
        )


def _check_density(mesh: Mesh, density: np.ndarray) -> np.ndarray:
    density = np.asarray(density, dtype=float)
    if density.shape != (mesh.n_triangles,):
        raise ValueError(
            f"density has shape {density.shape}, expected ({mesh.n_triangles},)"
        )
    if np.any(density <= 0.0):
        raise ValueError("density must be strictly positive")
    return density


def _scatter(rows, cols, vals, n) -> sp.csr_matrix:
    mat = sp.coo_matrix(
        (vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)
    ).tocsr()
    mat.eliminate_zeros()
    return mat


def assemble_poisson(mesh: Mesh, density: np.ndarray) -> sp.csr_matrix:
    """Stiffness matrix ``sum_T density(T) int_T grad(phi_i).grad(phi_j)``."""
    density = _check_density(mesh, density)
    g = p1_gradients(mesh)
    w = density * mesh.areas
    local = np.einsum("tid,tjd->tij", g, g) * w[:, None, None]
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).reshape(-1, 3, 3)
    cols = np.stack([tri] * 3, axis=1)
    return _scatter(rows, cols, local, mesh.n_nodes)


def assemble_elasticity(mesh: Mesh, law: HookeLaw, density: np.ndarray) -> sp.csr_matrix:
    """Stiffness of ``int density * (2 mu e(u):e(v) + lam div u div v)``.

    Degrees of freedom are interleaved: node ``i`` owns dofs ``2i`` (x) and
    ``2i+1`` (y).  Before Dirichlet elimination the kernel consists of the
    rigid body motions.
    """
    density = _check_density(mesh, density)
    g = p1_gradients(mesh)
    nt = mesh.n_triangles
    b = np.zeros((nt, 3, 6))
    b[:, 0, 0::2] = g[:, :, 0]
    b[:, 1, 1::2] = g[:, :, 1]
    b[:, 2, 0::2] = g[:, :, 1]
    b[:, 2, 1::2] = g[:, :, 0]
    d = law.voigt()
    w = density * mesh.areas
    local = np.einsum("tpi,pq,tqj->tij", b, d, b) * w[:, None, None]
    dofs = np.empty((nt, 6), dtype=np.int64)
    dofs[:, 0::2] = 2 * mesh.triangles
    dofs[:, 1::2] = 2 * mesh.triangles + 1
    rows = np.repeat(dofs, 6, axis=1).reshape(nt, 6, 6)
    cols = np.stack([dofs] * 6, axis=1)
    return _scatter(rows, cols, local, 2 * mesh.n_nodes)


def assemble_mass(mesh: Mesh, weights: np.ndarray | None = None) -> sp.csr_matrix:
    """Consistent P1 mass matrix, optionally weighted per triangle."""
    if weights is None:
        w = mesh.areas / 12.0
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (mesh.n_triangles,):
            raise ValueError("weights must have one entry per triangle")
        w = weights * mesh.areas / 12.0
    local = (np.ones((3, 3)) + np.eye(3))[None, :, :] * w[:, None, None]
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).reshape(-1, 3, 3)
    cols = np.stack([tri] * 3, axis=1)
    return _scatter(rows, cols, local, mesh.n_nodes)


def vector_boundary_mass(mesh: Mesh, tag: BoundaryTag) -> sp.csr_matrix:
    """Boundary mass acting component-wise on interleaved vector dofs."""
    g = boundary_mass_matrix(mesh, tag).tocoo()
    rows = np.concatenate([2 * g.row, 2 * g.row + 1])
    cols = np.concatenate([2 * g.col, 2 * g.col + 1])
    vals = np.concatenate([g.data, g.data])
    n = 2 * mesh.n_nodes
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def _dofs_for_nodes(nodes: np.ndarray, ncomp: int) -> np.ndarray:
    if ncomp == 1:
        return np.asarray(nodes, dtype=np.int64)
    nodes = np.asarray(nodes, dtype=np.int64)
    return np.sort(np.concatenate([2 * nodes, 2 * nodes + 1]))


def apply_dirichlet_dofs(
    matrix: sp.csr_matrix, rhs: np.ndarray, dofs: np.ndarray
) -> tuple[sp.csr_matrix, np.ndarray]:
    """Eliminate the given dofs symmetrically: unit diagonal, zero rhs entry."""
    n = matrix.shape[0]
    free = np.ones(n)
    free[dofs] = 0.0
    d_free = sp.diags(free)
    fixed = np.zeros(n)
    fixed[dofs] = 1.0
    out = (d_free @ matrix @ d_free + sp.diags(fixed)).tocsr()
    out.eliminate_zeros()
    new_rhs = np.asarray(rhs, dtype=float).copy()
    new_rhs[dofs] = 0.0
    return out, new_rhs


def apply_dirichlet(
    matrix: sp.csr_matrix, rhs, mesh: Mesh, tag: BoundaryTag = BoundaryTag.DIRICHLET
) -> tuple[sp.csr_matrix, Field]:
    """Impose homogeneous values on all nodes of the edges carrying ``tag``."""
    nodes = mesh.nodes_with_tag(tag)
    if nodes.size == 0:
        raise ValueError(f"no boundary edge carries tag {tag!r}")
    ncomp = matrix.shape[0] // mesh.n_nodes
    values = rhs.values if isinstance(rhs, Field) else rhs
    out, new_rhs = apply_dirichlet_dofs(matrix, values, _dofs_for_nodes(nodes, ncomp))
    kind = FieldKind.SCALAR if ncomp == 1 else FieldKind.VECTOR2
    return out, Field(new_rhs, kind)


def solve_spd(
    matrix: sp.csr_matrix,
    rhs: np.ndarray,
    tol: float = 1e-10,
    max_iter: int | None = None,
) -> np.ndarray:
    """Solve an SPD system with Jacobi-preconditioned conjugate gradients.

    The returned ``x`` satisfies ``||A x - b|| <= tol * ||b||`` in the
    Euclidean norm, verified against a freshly recomputed residual.  The
    iteration is deterministic for fixed inputs.

    Raises
    ------
    SolverConvergenceError
        If the bound is not met within ``max_iter`` iterations.
    """
    if not 0.0 < tol < 1.0:
        raise ValueError(f"tol must lie in (0, 1), got {tol}")
    b = np.asarray(rhs, dtype=float).ravel()
    n = b.size
    if matrix.shape != (n, n):
        raise ValueError(f"matrix shape {matrix.shape} does not match rhs size {n}")
    if max_iter is None:
        max_iter = 200 + 40 * n
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros(n)

    diag = matrix.diagonal()
    inv_diag = np.where(diag > 0.0, 1.0 / np.where(diag > 0.0, diag, 1.0), 1.0)

    x = np.zeros(n)
    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    target = tol * b_norm
    for it in range(1, max_iter + 1):
        ap = matrix @ p
        pap = p @ ap
        if pap <= 0.0:
            raise SolverConvergenceError(np.linalg.norm(r) / b_norm, tol, it)
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        if it % 64 == 0:
            r = b - matrix @ x  # guard against recurrence drift
        if np.linalg.norm(r) <= target:
            true_r = b - matrix @ x
            if np.linalg.norm(true_r) <= target:
                return x
            r = true_r
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverConvergenceError(
        float(np.linalg.norm(b - matrix @ x) / b_norm), tol, max_iter
    )


@dataclass
class StateEnsemble:
    """States (and optionally adjoints) of one deterministic solve per load.

    Carries the assembled operator so objective evaluations can reuse the
    exact quadratic forms that produced the states.
    """

    states: list[Field]
    operator: OperatorSpec
    mesh: Mesh
    stiffness: sp.csr_matrix
    constrained: sp.csr_matrix
    fixed_dofs: np.ndarray
    loads: list[Field]
    rhs: list[np.ndarray]
    load_kind: str = "surface"
    adjoints: list[Field] | None = None
    mean_state: Field | None = None
    mean_load: Field | None = None
    tol: float = 1e-10
    max_iter: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.adjoints is not None and len(self.adjoints) != len(self.states):
            raise ValueError("adjoints must match states one to one")

    @property
    def rank(self) -> int:
        return len(self.states)


def _assemble_operator(mesh: Mesh, operator: OperatorSpec) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Returns (energy stiffness, full system operator incl. absorption)."""
    if operator.kind == "poisson":
        stiffness = assemble_poisson(mesh, operator.density)
        if operator.absorption is None:
            return stiffness, stiffness
        term = operator.absorption
        if isinstance(term, np.ndarray):
            term = sp.diags(term)
        if term.shape != stiffness.shape:
            raise ValueError("absorption term does not match the operator size")
        return stiffness, (stiffness + term).tocsr()
    stiffness = assemble_elasticity(mesh, operator.law, operator.density)
    return stiffness, stiffness


def solve_state_ensemble(
    mesh: Mesh,
    operator: OperatorSpec,
    loads: list[Field],
    load_kind: str = "surface",
    surface_tag: BoundaryTag = BoundaryTag.NEUMANN,
    dirichlet_tag: BoundaryTag = BoundaryTag.DIRICHLET,
    pin_nodes: np.ndarray | None = None,
    mean_load: Field | None = None,
    tol: float = 1e-10,
    max_iter: int | None = None,
) -> StateEnsemble:
    """Assemble once and solve one boundary value problem per load.

    Parameters
    ----------
    loads : list of Field
        Nodal load data, all of the operator's field kind.  Body loads enter
        the right-hand side through the density-weighted mass matrix, surface
        loads through the boundary mass matrix of ``surface_tag``.
    load_kind : {"surface", "body"}
    pin_nodes : int array, optional
        Extra nodes constrained to zero (used to pin fully-void regions).
    mean_load : Field, optional
        If given, the mean state is solved alongside the ensemble.

    Raises
    ------
    SolverConvergenceError
        Tagged with the index of the offending load.
    """
    if not loads:
        raise ValueError("loads must be non-empty")
    if load_kind not in ("surface", "body"):
        raise ValueError(f"unknown load kind {load_kind!r}")
    kind = operator.field_kind
    ncomp = 1 if kind is FieldKind.SCALAR else 2
    ndof = ncomp * mesh.n_nodes
    for k, ld in enumerate(loads):
        if ld.kind is not kind or ld.values.size != ndof:
            raise ValueError(f"load {k} does not match the operator field kind")

    stiffness, system = _assemble_operator(mesh, operator)
    if load_kind == "surface":
        g = boundary_mass_matrix(mesh, surface_tag)
        rhs_op = vector_boundary_mass(mesh, surface_tag) if ncomp == 2 else g
    else:
        mass = assemble_mass(mesh, weights=operator.density)
        if ncomp == 2:
            m = mass.tocoo()
            rows = np.concatenate([2 * m.row, 2 * m.row + 1])
            cols = np.concatenate([2 * m.col, 2 * m.col + 1])
            vals = np.concatenate([m.data, m.data])
            rhs_op = sp.coo_matrix((vals, (rows, cols)), shape=(ndof, ndof)).tocsr()
        else:
            rhs_op = mass

    fixed_nodes = mesh.nodes_with_tag(dirichlet_tag)
    if pin_nodes is not None:
        fixed_nodes = np.unique(np.concatenate([fixed_nodes, np.asarray(pin_nodes)]))
    fixed_dofs = _dofs_for_nodes(fixed_nodes, ncomp)
    constrained, _ = apply_dirichlet_dofs(system, np.zeros(ndof), fixed_dofs)

    def solve_one(load: Field, index) -> tuple[Field, np.ndarray]:
        rhs = rhs_op @ load.values
        rhs[fixed_dofs] = 0.0
        try:
            x = solve_spd(constrained, rhs, tol=tol, max_iter=max_iter)
        except SolverConvergenceError as err:
            raise SolverConvergenceError(
                err.residual, err.tol, err.iterations, context=f"load index {index}"
            ) from None
        return Field(x, kind), rhs

    states: list[Field] = []
    rhs_list: list[np.ndarray] = []
    for k, ld in enumerate(loads):
        state, rhs = solve_one(ld, k)
        states.append(state)
        rhs_list.append(rhs)

    mean_state = None
    if mean_load is not None:
        mean_state, _ = solve_one(mean_load, "mean")

    return StateEnsemble(
        states=states,
        operator=operator,
        mesh=mesh,
        stiffness=stiffness,
        constrained=constrained,
        fixed_dofs=fixed_dofs,
        loads=list(loads),
        rhs=rhs_list,
        load_kind=load_kind,
        mean_state=mean_state,
        mean_load=mean_load,
        tol=tol,
        max_iter=max_iter,
    )
