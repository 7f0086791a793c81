"""Implicit shape representation on the fixed box mesh.

The shape is the region where a nodal function phi is negative.  Transport
under a normal velocity uses a first-order monotone upwind scheme on the
structured node lattice; redistancing uses fast marching from the
interface-adjacent nodes; the Ersatz density is the per-triangle material
fraction relaxed by a small floor.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .fem import assemble_poisson, solve_spd
from .mesh import Mesh, p1_gradients

__all__ = [
    "LevelSet",
    "CircleHole",
    "RectHole",
    "CflError",
    "initialize_levelset",
    "advect",
    "redistance",
    "material_fraction",
    "density_from_levelset",
    "extend_velocity",
    "interface_triangles",
    "interface_lengths",
    "interface_segments",
    "interface_normals",
    "void_nodes",
    "void_region_mass",
    "cfl_timestep",
]

CFL_LIMIT = 0.9


class CflError(ValueError):
    """Time step violates the CFL bound; the message proposes an admissible one."""

    def __init__(self, dt: float, admissible: float):
        self.admissible = admissible
        super().__init__(
            f"time step {dt:.3e} violates the CFL condition; "
            f"use dt <= {admissible:.3e}"
        )


@dataclass
class LevelSet:
    """Nodal level-set values on a structured mesh; phi < 0 marks material."""

    phi: np.ndarray
    mesh: Mesh
    time: float = 0.0

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        if self.phi.shape != (self.mesh.n_nodes,):
            raise ValueError("phi must hold one value per mesh node")
        if not np.all(np.isfinite(self.phi)):
            raise ValueError("phi contains non-finite values")

    def grid(self) -> np.ndarray:
        """View of phi as the (ny+1, nx+1) node lattice."""
        return self.phi.reshape(self.mesh.ny + 1, self.mesh.nx + 1)


@dataclass(frozen=True)
class CircleHole:
    cx: float
    cy: float
    r: float

    def signed_inside(self, pts: np.ndarray) -> np.ndarray:
        """Positive inside the hole, negative outside (exact distance)."""
        return self.r - np.hypot(pts[:, 0] - self.cx, pts[:, 1] - self.cy)


@dataclass(frozen=True)
class RectHole:
    x0: float
    x1: float
    y0: float
    y1: float

    def signed_inside(self, pts: np.ndarray) -> np.ndarray:
        inside = np.minimum.reduce(
            [pts[:, 0] - self.x0, self.x1 - pts[:, 0], pts[:, 1] - self.y0, self.y1 - pts[:, 1]]
        )
        ox = np.maximum(np.maximum(self.x0 - pts[:, 0], pts[:, 0] - self.x1), 0.0)
        oy = np.maximum(np.maximum(self.y0 - pts[:, 1], pts[:, 1] - self.y1), 0.0)
        outside = -np.hypot(ox, oy)
        return np.where(inside > 0.0, inside, outside)


def initialize_levelset(mesh: Mesh, holes: list) -> LevelSet:
    """Signed distance to the union of hole boundaries, negative in material.

    Without holes the field is minus the distance to the box boundary, so
    the whole box is material.
    """
    box = mesh.box
    for h in holes:
        if isinstance(h, CircleHole):
            if h.r <= 0.0:
                raise ValueError(f"degenerate hole radius {h.r}")
            if (
                h.cx - h.r < box.x0
                or h.cx + h.r > box.x1
                or h.cy - h.r < box.y0
                or h.cy + h.r > box.y1
            ):
                raise ValueError(f"hole {h} extends outside the box")
        elif isinstance(h, RectHole):
            if h.x1 <= h.x0 or h.y1 <= h.y0:
                raise ValueError(f"degenerate rectangular hole {h}")
            if h.x0 < box.x0 or h.x1 > box.x1 or h.y0 < box.y0 or h.y1 > box.y1:
                raise ValueError(f"hole {h} extends outside the box")
        else:
            raise TypeError(f"unsupported hole spec {type(h).__name__}")
    pts = mesh.vertices
    if not holes:
        phi = -np.minimum.reduce(
            [pts[:, 0] - box.x0, box.x1 - pts[:, 0], pts[:, 1] - box.y0, box.y1 - pts[:, 1]]
        )
        return LevelSet(phi, mesh)
    fields = [h.signed_inside(pts) for h in holes]
    return LevelSet(np.maximum.reduce(fields), mesh)


def cfl_timestep(ls: LevelSet, velocity: np.ndarray, cfl: float = 0.5) -> float:
    """Largest admissible explicit time step for the given normal velocity."""
    vmax = float(np.max(np.abs(velocity)))
    if vmax == 0.0:
        return np.inf
    return cfl * ls.mesh.h_min / vmax


def advect(ls: LevelSet, velocity: np.ndarray, dt: float, substeps: int = 1) -> LevelSet:
    """Transport phi by ``substeps`` explicit upwind steps of size ``dt``.

    Each step applies the monotone first-order upwind discretization of
    ``phi_t + V |grad phi| = 0`` on the node lattice (one-sided differences
    at the box boundary).  Zero velocity reproduces phi bitwise.

    Raises
    ------
    CflError
        If ``dt * max|V|`` exceeds ``0.9 * h_min``.
    """
    velocity = np.asarray(velocity, dtype=float)
    if velocity.shape != (ls.mesh.n_nodes,):
        raise ValueError("velocity must hold one value per node")
    vmax = float(np.max(np.abs(velocity)))
    if vmax > 0.0 and dt * vmax > CFL_LIMIT * ls.mesh.h_min * (1.0 + 1e-12):
        raise CflError(dt, CFL_LIMIT * ls.mesh.h_min / vmax)

    mesh = ls.mesh
    shape = (mesh.ny + 1, mesh.nx + 1)
    phi = ls.phi.reshape(shape).copy()
    v = velocity.reshape(shape)
    vp = np.maximum(v, 0.0)
    vm = np.minimum(v, 0.0)
    dx, dy = mesh.dx, mesh.dy
    for _ in range(substeps):
        dmx = np.zeros(shape)
        dpx = np.zeros(shape)
        dmy = np.zeros(shape)
        dpy = np.zeros(shape)
        dmx[:, 1:] = (phi[:, 1:] - phi[:, :-1]) / dx
        dpx[:, :-1] = (phi[:, 1:] - phi[:, :-1]) / dx
        dmy[1:, :] = (phi[1:, :] - phi[:-1, :]) / dy
        dpy[:-1, :] = (phi[1:, :] - phi[:-1, :]) / dy
        grad_p = np.sqrt(
            np.maximum(dmx, 0.0) ** 2
            + np.minimum(dpx, 0.0) ** 2
            + np.maximum(dmy, 0.0) ** 2
            + np.minimum(dpy, 0.0) ** 2
        )
        grad_m = np.sqrt(
            np.minimum(dmx, 0.0) ** 2
            + np.maximum(dpx, 0.0) ** 2
            + np.minimum(dmy, 0.0) ** 2
            + np.maximum(dpy, 0.0) ** 2
        )
        phi -= dt * (vp * grad_p + vm * grad_m)
    return LevelSet(phi.ravel(), mesh, time=ls.time + dt * substeps)


def redistance(ls: LevelSet, band: float | None = None) -> LevelSet:
    """Rebuild phi as a signed distance by fast marching from the interface.

    The sign of every node is preserved exactly; nodes adjacent to the zero
    level keep a linearly interpolated distance, so the interface moves by
    at most one cell.  With ``band`` given, nodes farther than that keep
    their previous values.
    """
    mesh = ls.mesh
    nxp, nyp = mesh.nx + 1, mesh.ny + 1
    phi = ls.phi
    if np.all(phi > 0.0) or np.all(phi < 0.0):
        raise ValueError("phi does not change sign: empty or full domain")

    dx, dy = mesh.dx, mesh.dy
    steps = []  # (index offset, axis spacing, admissible mask per node)
    idx = np.arange(mesh.n_nodes)
    col = idx % nxp
    row = idx // nxp
    steps.append((-1, dx, col > 0))
    steps.append((+1, dx, col < nxp - 1))
    steps.append((-nxp, dy, row > 0))
    steps.append((+nxp, dy, row < nyp - 1))

    INF = np.inf
    dist = np.full(mesh.n_nodes, INF)
    accepted = np.zeros(mesh.n_nodes, dtype=bool)

    # Seed the interface-adjacent nodes with interpolated distances.
    for off, h, ok in steps:
        i = idx[ok]
        j = i + off
        crossing = phi[i] * phi[j] < 0.0
        ii = i[crossing]
        jj = j[crossing]
        d = h * np.abs(phi[ii]) / (np.abs(phi[ii]) + np.abs(phi[jj]))
        np.minimum.at(dist, ii, d)
    exact = phi == 0.0
    dist[exact] = 0.0
    seeds = np.flatnonzero(np.isfinite(dist))
    accepted[seeds] = True

    heap: list[tuple[float, int]] = []

    def eikonal_update(i: int) -> float:
        ax = INF
        ay = INF
        c, r = i % nxp, i // nxp
        if c > 0 and accepted[i - 1]:
            ax = min(ax, dist[i - 1])
        if c < nxp - 1 and accepted[i + 1]:
            ax = min(ax, dist[i + 1])
        if r > 0 and accepted[i - nxp]:
            ay = min(ay, dist[i - nxp])
        if r < nyp - 1 and accepted[i + nxp]:
            ay = min(ay, dist[i + nxp])
        if ax == INF and ay == INF:
            return INF
        if ay == INF:
            return ax + dx
        if ax == INF:
            return ay + dy
        # Godunov two-sided update of |grad d| = 1 with anisotropic spacing.
        wx, wy = 1.0 / dx**2, 1.0 / dy**2
        a_ = wx + wy
        b_ = -2.0 * (ax * wx + ay * wy)
        c_ = ax * ax * wx + ay * ay * wy - 1.0
        disc = b_ * b_ - 4.0 * a_ * c_
        if disc >= 0.0:
            d = (-b_ + np.sqrt(disc)) / (2.0 * a_)
            if d >= max(ax, ay):
                return d
        return min(ax + dx, ay + dy)

    neighbors_cache = {}

    def neighbors(i: int):
        if i not in neighbors_cache:
            c, r = i % nxp, i // nxp
            out = []
            if c > 0:
                out.append(i - 1)
            if c < nxp - 1:
                out.append(i + 1)
            if r > 0:
                out.append(i - nxp)
            if r < nyp - 1:
                out.append(i + nxp)
            neighbors_cache[i] = out
        return neighbors_cache[i]

    for s in seeds:
        for n in neighbors(int(s)):
            if not accepted[n]:
                d = eikonal_update(n)
                if d < dist[n]:
                    dist[n] = d
                    heapq.heappush(heap, (d, n))

    while heap:
        d, i = heapq.heappop(heap)
        if accepted[i] or d > dist[i]:
            continue
        if band is not None and d > band:
            break
        accepted[i] = True
        for n in neighbors(i):
            if not accepted[n]:
                dn = eikonal_update(n)
                if dn < dist[n]:
                    dist[n] = dn
                    heapq.heappush(heap, (dn, n))

    sign = np.sign(phi)
    new_phi = np.where(accepted, sign * dist, phi)
    return LevelSet(new_phi, mesh, time=ls.time)


def material_fraction(ls: LevelSet) -> np.ndarray:
    """Per-triangle fraction of the area where the linear phi is negative."""
    mesh = ls.mesh
    tri_phi = ls.phi[mesh.triangles]
    pos = tri_phi > 0.0
    npos = pos.sum(axis=1)
    frac = np.ones(mesh.n_triangles)
    frac[npos == 3] = 0.0

    def corner_fraction(rows, corner):
        """Area fraction of the sub-triangle cut off at the given corner."""
        p = tri_phi[rows, corner]
        q = tri_phi[rows, (corner + 1) % 3]
        r = tri_phi[rows, (corner + 2) % 3]
        return (p / (p - q)) * (p / (p - r))

    one = np.flatnonzero(npos == 1)
    if one.size:
        corner = np.argmax(pos[one], axis=1)
        frac[one] = 1.0 - corner_fraction(one, corner)
    two = np.flatnonzero(npos == 2)
    if two.size:
        corner = np.argmin(pos[two], axis=1)
        frac[two] = corner_fraction(two, corner)
    return frac


def density_from_levelset(ls: LevelSet, eps_ersatz: float) -> np.ndarray:
    """Ersatz density: 1 in material, ``eps_ersatz`` in void, blended on cuts."""
    if not 0.0 < eps_ersatz < 1.0:
        raise ValueError("eps_ersatz must lie in (0, 1)")
    frac = material_fraction(ls)
    return frac + (1.0 - frac) * eps_ersatz


def void_nodes(mesh: Mesh, fraction: np.ndarray) -> np.ndarray:
    """Nodes all of whose incident triangles are fully void."""
    best = np.zeros(mesh.n_nodes)
    for c in range(3):
        np.maximum.at(best, mesh.triangles[:, c], fraction)
    return np.flatnonzero(best <= 0.0)


def void_region_mass(ls: LevelSet) -> "sp.csr_matrix":
    """P1 mass matrix integrated exactly over the void region {phi > 0}.

    Cut triangles contribute the mass of their positive sub-polygon, so the
    matrix varies continuously with phi.  Scaled by a large factor and added
    as a reaction term, it clamps the scalar state to zero on the free
    boundary in a way that is sharp at the interface yet smooth under shape
    perturbations.
    """
    import scipy.sparse as sp

    mesh = ls.mesh
    tri_phi = ls.phi[mesh.triangles]
    lo = tri_phi.min(axis=1)
    hi = tri_phi.max(axis=1)
    full = np.flatnonzero(lo >= 0.0)
    cut = np.flatnonzero((lo < 0.0) & (hi > 0.0))

    rows, cols, vals = [], [], []
    pattern = np.ones((3, 3)) + np.eye(3)

    if full.size:
        local = pattern[None, :, :] * (mesh.areas[full] / 12.0)[:, None, None]
        tri = mesh.triangles[full]
        rows.append(np.repeat(tri, 3, axis=1).reshape(-1, 3, 3).ravel())
        cols.append(np.stack([tri] * 3, axis=1).ravel())
        vals.append(local.ravel())

    for t in cut:
        nodes = mesh.triangles[t]
        pts = mesh.vertices[nodes]
        v = tri_phi[t]
        # positive sub-polygon, each vertex carrying its barycentric coords
        poly_xy = []
        poly_bary = []
        for a in range(3):
            b = (a + 1) % 3
            if v[a] > 0.0:
                bary = np.zeros(3)
                bary[a] = 1.0
                poly_xy.append(pts[a])
                poly_bary.append(bary)
            if v[a] * v[b] < 0.0:
                s = v[a] / (v[a] - v[b])
                bary = np.zeros(3)
                bary[a] = 1.0 - s
                bary[b] = s
                poly_xy.append(pts[a] + s * (pts[b] - pts[a]))
                poly_bary.append(bary)
        if len(poly_xy) < 3:
            continue
        local = np.zeros((3, 3))
        for k in range(1, len(poly_xy) - 1):
            p0, p1, p2 = poly_xy[0], poly_xy[k], poly_xy[k + 1]
            e1 = p1 - p0
            e2 = p2 - p0
            sub_area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
            bmat = np.array([poly_bary[0], poly_bary[k], poly_bary[k + 1]])
            local += (sub_area / 12.0) * (bmat.T @ pattern @ bmat)
        rows.append(np.repeat(nodes, 3))
        cols.append(np.tile(nodes, 3))
        vals.append(local.ravel())

    if not rows:
        return sp.csr_matrix((mesh.n_nodes, mesh.n_nodes))
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(mesh.n_nodes, mesh.n_nodes),
    ).tocsr()
    mat.eliminate_zeros()
    return mat


def interface_triangles(ls: LevelSet) -> np.ndarray:
    """Indices of triangles cut by (or touching) the zero level set."""
    tri_phi = ls.phi[ls.mesh.triangles]
    lo = tri_phi.min(axis=1)
    hi = tri_phi.max(axis=1)
    return np.flatnonzero((lo <= 0.0) & (hi >= 0.0) & (lo < hi))


def interface_segments(ls: LevelSet, tris: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Length and midpoint of the zero-level segment inside each triangle.

    Triangles only touching the zero level get length 0 and their centroid
    as midpoint.
    """
    mesh = ls.mesh
    lengths = np.zeros(len(tris))
    mids = mesh.vertices[mesh.triangles[tris]].mean(axis=1)
    for n, t in enumerate(tris):
        nodes = mesh.triangles[t]
        pts = mesh.vertices[nodes]
        vals = ls.phi[nodes]
        crossings = []
        for a, b in ((0, 1), (1, 2), (2, 0)):
            if vals[a] == 0.0 and not any(
                np.allclose(pts[a], c) for c in crossings
            ):
                crossings.append(pts[a])
            if vals[a] * vals[b] < 0.0:
                s = vals[a] / (vals[a] - vals[b])
                crossings.append(pts[a] + s * (pts[b] - pts[a]))
        if len(crossings) >= 2:
            lengths[n] = float(np.linalg.norm(crossings[1] - crossings[0]))
            mids[n] = 0.5 * (crossings[0] + crossings[1])
    return lengths, mids


def interface_lengths(ls: LevelSet, tris: np.ndarray) -> np.ndarray:
    """Length of the linear zero-level segment inside each given triangle."""
    return interface_segments(ls, tris)[0]


def interface_normals(ls: LevelSet, tris: np.ndarray) -> np.ndarray:
    """Outward unit normal (grad phi normalized) on each given triangle."""
    mesh = ls.mesh
    g = p1_gradients(mesh)[tris]
    grad_phi = np.einsum("tiv,ti->tv", g, ls.phi[mesh.triangles[tris]])
    norms = np.linalg.norm(grad_phi, axis=1)
    if np.any(norms < 1e-10):
        bad = tris[norms < 1e-10]
        raise ValueError(f"degenerate level-set gradient on triangles {bad[:5]}")
    return grad_phi / norms[:, None]


def extend_velocity(
    tri_indices: np.ndarray,
    tri_values: np.ndarray,
    ls: LevelSet,
    smoothing: float = 0.0,
    tol: float = 1e-10,
) -> np.ndarray:
    """Extend a per-triangle interface quantity to a nodal velocity field.

    The extension solves ``(smoothing * Laplacian + interface mass) V = W``
    over the whole box, with ``W`` the interface-supported nodal load of the
    given values.  With ``smoothing = 0`` this degenerates to a weighted
    nodal average over interface-adjacent nodes (zero elsewhere).
    """
    mesh = ls.mesh
    tri_indices = np.asarray(tri_indices, dtype=int)
    tri_values = np.asarray(tri_values, dtype=float)
    if tri_indices.size == 0:
        return np.zeros(mesh.n_nodes)
    if smoothing < 0.0:
        raise ValueError("smoothing must be non-negative")
    w = np.zeros(mesh.n_nodes)
    m = np.zeros(mesh.n_nodes)
    third = mesh.areas[tri_indices] / 3.0
    for c in range(3):
        nodes = mesh.triangles[tri_indices, c]
        np.add.at(w, nodes, tri_values * third)
        np.add.at(m, nodes, third)
    if smoothing == 0.0:
        return np.divide(w, m, out=np.zeros_like(w), where=m > 0.0)
    import scipy.sparse as sp

    stiff = assemble_poisson(mesh, np.ones(mesh.n_triangles))
    system = (smoothing * stiff + sp.diags(m)).tocsr()
    return solve_spd(system, w, tol=tol)
