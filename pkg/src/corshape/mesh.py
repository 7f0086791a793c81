"""Structured triangular meshes of the rectangular design box.

The whole toolbox works on a fixed triangulation of a computational box:
every cell of a regular ``nx x ny`` grid is split along its lower-left to
upper-right diagonal.  Boundary edges carry tags (clamped, loaded, free)
that assembly routines use to impose boundary conditions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np
import scipy.sparse as sp

__all__ = [
    "BoundaryTag",
    "Rect",
    "Mesh",
    "RegionMatchError",
    "generate_structured_mesh",
    "tag_boundary",
    "boundary_mass_matrix",
    "volume",
    "p1_gradients",
    "locate_triangles",
    "check_mesh",
]


class BoundaryTag(IntEnum):
    """Role of a boundary edge: free, clamped or carrying surface loads."""

    FREE = 0
    DIRICHLET = 1
    NEUMANN = 2


class RegionMatchError(ValueError):
    """A geometric region matched no boundary edge (likely misconfiguration)."""


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle; degenerate width or height describes a segment."""

    x0: float
    x1: float
    y0: float
    y1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        """Boolean mask of the (n, 2) points lying inside, up to ``tol``."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return (
            (p[:, 0] >= self.x0 - tol)
            & (p[:, 0] <= self.x1 + tol)
            & (p[:, 1] >= self.y0 - tol)
            & (p[:, 1] <= self.y1 + tol)
        )


def _as_rect(box) -> Rect:
    if isinstance(box, Rect):
        return box
    x0, x1, y0, y1 = box
    return Rect(float(x0), float(x1), float(y0), float(y1))


@dataclass(frozen=True)
class Mesh:
    """Immutable triangulation of a box with tagged boundary edges.

    Attributes
    ----------
    vertices : (n_nodes, 2) float array
        Node coordinates, ordered row by row (x varies fastest).
    triangles : (n_triangles, 3) int array
        Vertex index triples, counterclockwise.
    boundary_edges : (n_edges, 2) int array
        Node pairs, oriented counterclockwise around the box.
    edge_tags : (n_edges,) int array
        One :class:`BoundaryTag` value per boundary edge.
    box : Rect
        The meshed rectangle.
    nx, ny : int
        Grid subdivisions used to build the mesh.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: np.ndarray
    box: Rect
    nx: int
    ny: int

    def __post_init__(self):
        for a in (self.vertices, self.triangles, self.boundary_edges, self.edge_tags):
            a.setflags(write=False)
        v = self.vertices[self.triangles]
        e1 = v[:, 1] - v[:, 0]
        e2 = v[:, 2] - v[:, 0]
        areas = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        areas.setflags(write=False)
        object.__setattr__(self, "_areas", areas)

    @property
    def n_nodes(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_edges(self) -> int:
        return self.boundary_edges.shape[0]

    @property
    def dx(self) -> float:
        return self.box.width / self.nx

    @property
    def dy(self) -> float:
        return self.box.height / self.ny

    @property
    def h_min(self) -> float:
        return min(self.dx, self.dy)

    @property
    def areas(self) -> np.ndarray:
        return self._areas

    def edge_vectors(self) -> np.ndarray:
        e = self.boundary_edges
        return self.vertices[e[:, 1]] - self.vertices[e[:, 0]]

    def edge_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.edge_vectors(), axis=1)

    def edge_midpoints(self) -> np.ndarray:
        e = self.boundary_edges
        return 0.5 * (self.vertices[e[:, 0]] + self.vertices[e[:, 1]])

    def edge_normals(self) -> np.ndarray:
        """Unit outward normals, one per boundary edge."""
        t = self.edge_vectors()
        n = np.column_stack([t[:, 1], -t[:, 0]])
        return n / np.linalg.norm(n, axis=1)[:, None]

    def edges_with_tag(self, tag: BoundaryTag) -> np.ndarray:
        return np.flatnonzero(self.edge_tags == int(tag))

    def nodes_with_tag(self, tag: BoundaryTag) -> np.ndarray:
        """Sorted unique node indices lying on edges carrying ``tag``."""
        idx = self.edges_with_tag(tag)
        return np.unique(self.boundary_edges[idx])


def generate_structured_mesh(nx: int, ny: int, box) -> Mesh:
    """Triangulate ``box`` with a regular grid split along cell diagonals.

    Parameters
    ----------
    nx, ny : int
        Number of cells per direction, at least 1.
    box : Rect or (x0, x1, y0, y1)
        Rectangle with positive width and height.

    Returns
    -------
    Mesh
        ``(nx+1)(ny+1)`` vertices and ``2*nx*ny`` triangles; every boundary
        edge is tagged :attr:`BoundaryTag.FREE`.
    """
    if nx < 1 or ny < 1:
        raise ValueError(f"subdivision counts must be positive, got nx={nx}, ny={ny}")
    rect = _as_rect(box)
    if rect.width <= 0.0 or rect.height <= 0.0:
        raise ValueError(f"box must have positive width and height, got {rect}")

    xs = np.linspace(rect.x0, rect.x1, nx + 1)
    ys = np.linspace(rect.y0, rect.y1, ny + 1)
    gx, gy = np.meshgrid(xs, ys)
    vertices = np.column_stack([gx.ravel(), gy.ravel()])

    def node(i, j):
        return j * (nx + 1) + i

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i = i.ravel()
    j = j.ravel()
    v00 = node(i, j)
    v10 = node(i + 1, j)
    v01 = node(i, j + 1)
    v11 = node(i + 1, j + 1)
    # Lower-left to upper-right diagonal split, both triangles counterclockwise.
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    edges = []
    for k in range(nx):  # bottom, left to right
        edges.append((node(k, 0), node(k + 1, 0)))
    for k in range(ny):  # right, bottom to top
        edges.append((node(nx, k), node(nx, k + 1)))
    for k in range(nx):  # top, right to left
        edges.append((node(nx - k, ny), node(nx - k - 1, ny)))
    for k in range(ny):  # left, top to bottom
        edges.append((node(0, ny - k), node(0, ny - k - 1)))
    boundary_edges = np.asarray(edges, dtype=np.int64)
    edge_tags = np.full(len(edges), int(BoundaryTag.FREE), dtype=np.int64)

    return Mesh(vertices, triangles, boundary_edges, edge_tags, rect, nx, ny)


def tag_boundary(mesh: Mesh, region, tag: BoundaryTag, tol: float = 1e-9) -> Mesh:
    """Return a copy of ``mesh`` where edges with midpoint in ``region`` carry ``tag``.

    Raises
    ------
    RegionMatchError
        If no boundary edge midpoint falls inside the region.
    """
    rect = _as_rect(region)
    mask = rect.contains(mesh.edge_midpoints(), tol=tol)
    if not mask.any():
        raise RegionMatchError(
            f"region {rect} matched no boundary edge; check the geometry"
        )
    tags = mesh.edge_tags.copy()
    tags[mask] = int(tag)
    return replace(mesh, edge_tags=tags)


def boundary_mass_matrix(mesh: Mesh, tag: BoundaryTag) -> sp.csr_matrix:
    """Assemble the 1D P1 mass matrix of the edges carrying ``tag``.

    The result is an ``n_nodes x n_nodes`` symmetric positive semi-definite
    matrix; rows and columns of nodes away from the tagged edges are zero.
    Each edge of length ``h`` contributes the exact block
    ``[[h/3, h/6], [h/6, h/3]]``.
    """
    idx = mesh.edges_with_tag(tag)
    if idx.size == 0:
        raise ValueError(f"no boundary edge carries tag {tag!r}")
    e = mesh.boundary_edges[idx]
    h = mesh.edge_lengths()[idx]
    rows = np.concatenate([e[:, 0], e[:, 0], e[:, 1], e[:, 1]])
    cols = np.concatenate([e[:, 0], e[:, 1], e[:, 0], e[:, 1]])
    vals = np.concatenate([h / 3.0, h / 6.0, h / 6.0, h / 3.0])
    n = mesh.n_nodes
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    mat.eliminate_zeros()
    return mat


def volume(mesh: Mesh, density: np.ndarray) -> float:
    """Density-weighted area ``sum_T density(T) * area(T)``."""
    density = np.asarray(density, dtype=float)
    if density.shape != (mesh.n_triangles,):
        raise ValueError(
            f"density has shape {density.shape}, expected ({mesh.n_triangles},)"
        )
    return float(density @ mesh.areas)


def locate_triangles(mesh: Mesh, points: np.ndarray) -> np.ndarray:
    """Containing triangle index for each point; -1 for points outside the box.

    Constant-time lookup exploiting the structured cell layout and the fixed
    diagonal split.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    xi = (points[:, 0] - mesh.box.x0) / mesh.dx
    eta = (points[:, 1] - mesh.box.y0) / mesh.dy
    inside = (xi >= 0.0) & (xi <= mesh.nx) & (eta >= 0.0) & (eta <= mesh.ny)
    i = np.clip(np.floor(xi).astype(np.int64), 0, mesh.nx - 1)
    j = np.clip(np.floor(eta).astype(np.int64), 0, mesh.ny - 1)
    # local coordinates in the cell; the lower triangle covers eta <= xi
    upper = (eta - j) > (xi - i)
    out = 2 * (j * mesh.nx + i) + upper.astype(np.int64)
    out[~inside] = -1
    return out


def p1_gradients(mesh: Mesh) -> np.ndarray:
    """Constant gradients of the three P1 basis functions on each triangle.

    Returns an ``(n_triangles, 3, 2)`` array ``g`` with ``g[t, i]`` the
    gradient of the hat function of local vertex ``i`` on triangle ``t``.
    """
    v = mesh.vertices[mesh.triangles]
    x = v[..., 0]
    y = v[..., 1]
    g = np.empty((mesh.n_triangles, 3, 2))
    two_a = 2.0 * mesh.areas
    for i in range(3):
        jn, kn = (i + 1) % 3, (i + 2) % 3
        g[:, i, 0] = (y[:, jn] - y[:, kn]) / two_a
        g[:, i, 1] = (x[:, kn] - x[:, jn]) / two_a
    return g


def check_mesh(mesh: Mesh) -> None:
    """Validate structural invariants; raises ValueError on violation."""
    if np.any(mesh.areas <= 0.0):
        raise ValueError("found triangle with non-positive signed area")
    if mesh.triangles.min() < 0 or mesh.triangles.max() >= mesh.n_nodes:
        raise ValueError("triangle vertex index out of range")
    if mesh.boundary_edges.min() < 0 or mesh.boundary_edges.max() >= mesh.n_nodes:
        raise ValueError("boundary edge vertex index out of range")
    # Each boundary edge must belong to exactly one triangle.
    tri_edges = set()
    for t in mesh.triangles:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            tri_edges.add((min(a, b), max(a, b)))
    seen = set()
    for a, b in mesh.boundary_edges:
        key = (min(a, b), max(a, b))
        if key not in tri_edges:
            raise ValueError(f"boundary edge {key} is not a triangle edge")
        if key in seen:
            raise ValueError(f"boundary edge {key} listed twice")
        seen.add(key)
    if not np.isin(mesh.edge_tags, [int(t) for t in BoundaryTag]).all():
        raise ValueError("unknown boundary tag value")
