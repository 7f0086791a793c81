"""Mean objectives and shape-gradient densities from a state ensemble.

Every functional here is the expectation of a quadratic cost whose state
depends linearly on the random data, so the mean value and the Hadamard
gradient density are exact sums over the ensemble of deterministic states
(one per low-rank factor of the data correlation).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .fem import (
    Field,
    FieldKind,
    SolverConvergenceError,
    StateEnsemble,
    assemble_mass,
    solve_spd,
)
from .levelset import (
    LevelSet,
    interface_lengths,
    interface_normals,
    interface_segments,
    interface_triangles,
    material_fraction,
)
from .mesh import Mesh, locate_triangles, p1_gradients

__all__ = [
    "GradientDensity",
    "TrackingData",
    "dirichlet_energy_mean",
    "dirichlet_energy_gradient",
    "tracking_mean",
    "tracking_adjoints",
    "tracking_gradient",
    "compliance_mean",
    "compliance_gradient",
    "compliance_boundary_work",
    "assemble_shape_derivative",
]


@dataclass
class GradientDensity:
    """Shape-gradient density sampled on the interface triangles.

    ``values[n]`` is the density on triangle ``triangles[n]``; the shape
    derivative in a direction with normal speed ``w`` is the interface
    integral of ``values * w``.
    """

    triangles: np.ndarray
    values: np.ndarray
    functional: str

    def __post_init__(self):
        self.triangles = np.asarray(self.triangles, dtype=int)
        self.values = np.asarray(self.values, dtype=float)
        if self.triangles.shape != self.values.shape:
            raise ValueError("triangles and values must align")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("gradient density contains non-finite values")


@dataclass
class TrackingData:
    """Target profile on a fixed element subset of the box."""

    u0: Field
    subset: np.ndarray  # triangle indices of the observation region

    def __post_init__(self):
        self.subset = np.asarray(self.subset, dtype=int)
        if self.subset.size == 0:
            raise ValueError("tracking subset must be non-empty")


def _require_kind(ens: StateEnsemble, kind: str, what: str) -> None:
    if not ens.states:
        raise ValueError(f"{what}: empty ensemble")
    if ens.operator.kind != kind:
        raise ValueError(f"{what} requires {kind} states, got {ens.operator.kind}")


def _fallback_triangles(mesh: Mesh, frac: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Nearest fully material triangle by breadth-first edge search.

    Falls back to the largest material fraction encountered within three
    hops when nothing fully material is nearby (thin members).
    """
    edge_owner: dict[tuple[int, int], list[int]] = {}
    for t, (a, b, c) in enumerate(mesh.triangles):
        for u, v in ((a, b), (b, c), (c, a)):
            edge_owner.setdefault((min(u, v), max(u, v)), []).append(t)

    def neighbors(t):
        a, b, c = mesh.triangles[t]
        out = []
        for u, v in ((a, b), (b, c), (c, a)):
            for other in edge_owner[(min(u, v), max(u, v))]:
                if other != t:
                    out.append(other)
        return out

    sample = np.array(tris, dtype=int)
    for n, t in enumerate(tris):
        best, best_frac = int(t), frac[t]
        frontier = [int(t)]
        seen = {int(t)}
        found = None
        for _ in range(3):
            nxt = []
            for cur in frontier:
                for other in neighbors(cur):
                    if other in seen:
                        continue
                    seen.add(other)
                    if frac[other] >= 1.0:
                        found = other if found is None or other < found else found
                    elif frac[other] > best_frac:
                        best, best_frac = other, frac[other]
                    nxt.append(other)
            if found is not None:
                break
            frontier = nxt
        sample[n] = found if found is not None else best
    return sample


@dataclass
class _InterfaceSampler:
    """Linear interior sampling stencil for boundary values of P1 derivatives.

    A per-triangle linear quantity ``q`` (state gradient, strain component)
    is evaluated at the interface as ``w1 * q[s1] + w2 * q[s2]``.  The states
    are only trustworthy inside the material (a P1 field cannot kink within
    a cut element), so the stencil extrapolates from one or two fully
    material triangles along the inward normal; where the material is too
    thin it degrades to the nearest-material-triangle value.
    """

    s1: np.ndarray
    s2: np.ndarray
    w1: np.ndarray
    w2: np.ndarray

    def combine(self, q: np.ndarray) -> np.ndarray:
        return self.w1 * q[self.s1] + self.w2 * q[self.s2]

    def combine_vec(self, q: np.ndarray) -> np.ndarray:
        return self.w1[:, None] * q[self.s1] + self.w2[:, None] * q[self.s2]


def _interface_sampler(ls: LevelSet, tris: np.ndarray, normals: np.ndarray) -> _InterfaceSampler:
    mesh = ls.mesh
    frac = material_fraction(ls)
    _, mids = interface_segments(ls, tris)
    h = mesh.h_min
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)

    def probe(depth):
        pts = mids - depth * h * normals
        found = locate_triangles(mesh, pts)
        ok = (found >= 0) & (frac[np.clip(found, 0, None)] >= 1.0)
        dist = np.full(len(tris), np.nan)
        idx = np.flatnonzero(ok)
        if idx.size:
            d = np.einsum(
                "kv,kv->k", mids[idx] - centroids[found[idx]], normals[idx]
            )
            dist[idx] = d
            ok[idx] &= d > 0.1 * h
        return found, ok, dist

    s1, ok1, d1 = probe(1.4)
    s2, ok2, d2 = probe(2.8)

    n = len(tris)
    out_s1 = np.empty(n, dtype=int)
    out_s2 = np.empty(n, dtype=int)
    w1 = np.ones(n)
    w2 = np.zeros(n)

    both = ok1 & ok2 & (np.abs(d2 - d1) > 0.5 * h)
    out_s1[both] = s1[both]
    out_s2[both] = s2[both]
    w1[both] = d2[both] / (d2[both] - d1[both])
    w2[both] = -d1[both] / (d2[both] - d1[both])

    single = ok1 & ~both
    out_s1[single] = s1[single]
    out_s2[single] = s1[single]

    rest = ~(both | single)
    if np.any(rest):
        fb = _fallback_triangles(mesh, frac, tris[rest])
        out_s1[rest] = fb
        out_s2[rest] = fb
    return _InterfaceSampler(out_s1, out_s2, w1, w2)


def _normal_derivatives(
    ens: StateEnsemble, sampler: _InterfaceSampler, normals: np.ndarray
) -> list[np.ndarray]:
    """Per-state array of grad(u).n at the interface (scalar states)."""
    mesh = ens.mesh
    g = p1_gradients(mesh)
    out = []
    for state in ens.states:
        grad = np.einsum("tiv,ti->tv", g, state.values[mesh.triangles])
        at_interface = sampler.combine_vec(grad)
        out.append(np.einsum("tv,tv->t", at_interface, normals))
    return out


def dirichlet_energy_mean(ens: StateEnsemble) -> float:
    """Mean Dirichlet energy ``-(1/2) sum_k u_k' K u_k``; always <= 0."""
    _require_kind(ens, "poisson", "dirichlet_energy_mean")
    k = ens.stiffness
    return -0.5 * float(sum(s.values @ (k @ s.values) for s in ens.states))


def dirichlet_energy_gradient(ens: StateEnsemble, ls: LevelSet) -> GradientDensity:
    """Density ``-(1/2) sum_k (grad u_k . n)^2`` on the interface triangles."""
    _require_kind(ens, "poisson", "dirichlet_energy_gradient")
    tris = interface_triangles(ls)
    if tris.size == 0:
        return GradientDensity(tris, np.zeros(0), "dirichlet_energy")
    normals = interface_normals(ls, tris)
    sampler = _interface_sampler(ls, tris, normals)
    acc = np.zeros(tris.size)
    for dn in _normal_derivatives(ens, sampler, normals):
        acc += dn * dn
    return GradientDensity(tris, -0.5 * acc, "dirichlet_energy")


def tracking_mean(ens: StateEnsemble, data: TrackingData) -> float:
    """Mean quadratic misfit on the observation subset.

    Uses the correlation form
    ``(1/2) int_B [sum_k u_k^2 - 2 u0 E(u) + u0^2]``,
    which requires the ensemble's mean state.
    """
    _require_kind(ens, "poisson", "tracking_mean")
    if ens.mean_state is None:
        raise ValueError("tracking_mean requires the ensemble mean state")
    weights = np.zeros(ens.mesh.n_triangles)
    weights[data.subset] = 1.0
    m_b = assemble_mass(ens.mesh, weights=weights)
    u0 = data.u0.values
    second = sum(s.values @ (m_b @ s.values) for s in ens.states)
    cross = u0 @ (m_b @ ens.mean_state.values)
    const = u0 @ (m_b @ u0)
    return 0.5 * float(second - 2.0 * cross + const)


def tracking_adjoints(ens: StateEnsemble, data: TrackingData) -> StateEnsemble:
    """Solve one adjoint per state: ``-lap p_k = -chi_B (u_k - c_k u0)``.

    The coefficients ``c_k`` decompose the mean load over the ensemble
    loads (least squares), so that ``sum_k p_k (x) u_k`` reproduces the
    correlation between adjoint and state.
    """
    _require_kind(ens, "poisson", "tracking_adjoints")
    weights = np.zeros(ens.mesh.n_triangles)
    weights[data.subset] = 1.0
    m_b = assemble_mass(ens.mesh, weights=weights)

    if ens.mean_load is None or not np.any(ens.mean_load.values):
        coeff = np.zeros(len(ens.states))
    else:
        load_mat = np.column_stack([ld.values for ld in ens.loads])
        coeff, *_ = np.linalg.lstsq(load_mat, ens.mean_load.values, rcond=None)

    adjoints = []
    for k, state in enumerate(ens.states):
        rhs = -(m_b @ (state.values - coeff[k] * data.u0.values))
        rhs[ens.fixed_dofs] = 0.0
        try:
            p = solve_spd(ens.constrained, rhs, tol=ens.tol, max_iter=ens.max_iter)
        except SolverConvergenceError as err:
            raise SolverConvergenceError(
                err.residual, err.tol, err.iterations, context=f"adjoint index {k}"
            ) from None
        adjoints.append(Field(p, FieldKind.SCALAR))
    return replace(ens, adjoints=adjoints)


def tracking_gradient(ens: StateEnsemble, ls: LevelSet) -> GradientDensity:
    """Density ``- sum_k (grad u_k . n)(grad p_k . n)`` on the interface."""
    _require_kind(ens, "poisson", "tracking_gradient")
    if ens.adjoints is None:
        raise ValueError("tracking_gradient requires adjoints; run tracking_adjoints")
    tris = interface_triangles(ls)
    if tris.size == 0:
        return GradientDensity(tris, np.zeros(0), "tracking")
    normals = interface_normals(ls, tris)
    sampler = _interface_sampler(ls, tris, normals)
    mesh = ens.mesh
    g = p1_gradients(mesh)
    acc = np.zeros(tris.size)
    for u, p in zip(ens.states, ens.adjoints):
        du = sampler.combine_vec(np.einsum("tiv,ti->tv", g, u.values[mesh.triangles]))
        dp = sampler.combine_vec(np.einsum("tiv,ti->tv", g, p.values[mesh.triangles]))
        acc += np.einsum("tv,tv->t", du, normals) * np.einsum("tv,tv->t", dp, normals)
    return GradientDensity(tris, -acc, "tracking")


def compliance_mean(ens: StateEnsemble) -> float:
    """Mean compliance ``sum_k u_k' K u_k`` with the Ersatz-weighted stiffness."""
    _require_kind(ens, "elasticity", "compliance_mean")
    k = ens.stiffness
    return float(sum(s.values @ (k @ s.values) for s in ens.states))


def compliance_boundary_work(ens: StateEnsemble) -> float:
    """Mean work of the surface loads, ``sum_k int g_k . u_k ds``.

    Discretely this is the assembled right-hand side paired with the state,
    so it matches :func:`compliance_mean` up to the solver tolerance.
    """
    _require_kind(ens, "elasticity", "compliance_boundary_work")
    return float(sum(r @ s.values for r, s in zip(ens.rhs, ens.states)))


def _strain_energy_density(ens: StateEnsemble, sample: np.ndarray) -> np.ndarray:
    """sum_k A e(u_k):e(u_k) per sampling triangle (P1 strains are constant)."""
    mesh = ens.mesh
    law = ens.operator.law
    g = p1_gradients(mesh)[sample]
    nodes = mesh.triangles[sample]
    acc = np.zeros(tris.size)
    for state in ens.states:
        ux = state.values[2 * nodes]
        uy = state.values[2 * nodes + 1]
        e11 = np.einsum("ti,ti->t", g[:, :, 0], ux)
        e22 = np.einsum("ti,ti->t", g[:, :, 1], uy)
        e12 = 0.5 * (
            np.einsum("ti,ti->t", g[:, :, 1], ux) + np.einsum("ti,ti->t", g[:, :, 0], uy)
        )
        acc += 2.0 * law.mu * (e11**2 + e22**2 + 2.0 * e12**2) + law.lam * (e11 + e22) ** 2
    return acc


def compliance_gradient(ens: StateEnsemble, ls: LevelSet) -> GradientDensity:
    """Density ``- sum_k A e(u_k):e(u_k)`` on the interface; never positive."""
    _require_kind(ens, "elasticity", "compliance_gradient")
    tris = interface_triangles(ls)
    if tris.size == 0:
        return GradientDensity(tris, np.zeros(0), "compliance")
    interface_normals(ls, tris)  # reject degenerate interfaces
    sample = _sampling_triangles(ens.mesh, ls, tris)
    return GradientDensity(tris, -_strain_energy_density(ens, sample), "compliance")


def assemble_shape_derivative(gd: GradientDensity, ls: LevelSet, normal_speed: np.ndarray) -> float:
    """Pair a gradient density with a nodal normal speed: ``int_G D w ds``.

    The interface integral uses the zero-level segment length inside each
    cut triangle and the vertex-averaged speed.
    """
    normal_speed = np.asarray(normal_speed, dtype=float)
    if normal_speed.shape != (ls.mesh.n_nodes,):
        raise ValueError("normal speed must hold one value per node")
    if gd.triangles.size == 0:
        return 0.0
    lengths = interface_lengths(ls, gd.triangles)
    w = normal_speed[ls.mesh.triangles[gd.triangles]].mean(axis=1)
    return float(np.sum(gd.values * w * lengths))
