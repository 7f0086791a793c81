"""Two-point correlation kernels and their certified low-rank factorization.

The random data enters the pipeline only through its two-point correlation.
A kernel is either a finite sum of tensor products of nodal fields, or a
closed-form function evaluated on a boundary segment.  Either way it is
discretized into a symmetric positive semi-definite matrix that is only
accessed through its diagonal and individual columns, which is all the
pivoted Cholesky factorization needs: a rank-m factorization costs
O(m^2 n) and comes with a trace-norm residual certificate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import Field, FieldKind, solve_spd
from .mesh import BoundaryTag, Mesh

__all__ = [
    "profile_h",
    "profile_k",
    "FiniteRankKernel",
    "ClosedFormKernel",
    "CorrelationMatrix",
    "LowRankFactorization",
    "NotPositiveSemidefiniteError",
    "MaxRankReachedError",
    "assemble_correlation_matrix",
    "pivoted_cholesky",
    "factors_to_loads",
    "finite_rank_correlated_pair",
]


def profile_h(i: int, t: float) -> float:
    """Intensity profile for the horizontal load component, family ``i`` in 1..3."""
    if i == 1:
        return 1.0 - 4.0 * (t - 0.5) ** 2
    if i == 2:
        return 2.0 * t * (1.0 - t) + 0.5
    if i == 3:
        return 1.0
    raise ValueError(f"profile index must be 1, 2 or 3, got {i}")


def profile_k(i: int, t: float) -> float:
    """Intensity profile for the vertical load component, family ``i`` in 1..3."""
    if i == 1:
        return 16.0 * (t - 0.25) ** 2 if t <= 0.5 else 16.0 * (t - 0.75) ** 2
    if i == 2:
        if t <= 0.5:
            return 24.0 * (t - 0.25) * (t - 1.0 / 3.0)
        return 24.0 * (t - 0.75) * (t - 2.0 / 3.0)
    if i == 3:
        if t <= 0.5:
            return 24.0 * (t - 0.25) * (t - 1.0 / 6.0)
        return 24.0 * (t - 0.75) * (t - 5.0 / 6.0)
    raise ValueError(f"profile index must be 1, 2 or 3, got {i}")


def _profile_values(family: str, index: int, t: np.ndarray) -> np.ndarray:
    """Vectorized profile evaluation used by kernel assembly."""
    t = np.asarray(t, dtype=float)
    if family == "h":
        if index == 1:
            return 1.0 - 4.0 * (t - 0.5) ** 2
        if index == 2:
            return 2.0 * t * (1.0 - t) + 0.5
        return np.ones_like(t)
    if index == 1:
        return np.where(t <= 0.5, 16.0 * (t - 0.25) ** 2, 16.0 * (t - 0.75) ** 2)
    if index == 2:
        return np.where(
            t <= 0.5,
            24.0 * (t - 0.25) * (t - 1.0 / 3.0),
            24.0 * (t - 0.75) * (t - 2.0 / 3.0),
        )
    return np.where(
        t <= 0.5,
        24.0 * (t - 0.25) * (t - 1.0 / 6.0),
        24.0 * (t - 0.75) * (t - 5.0 / 6.0),
    )


@dataclass
class FiniteRankKernel:
    """Correlation given exactly as ``sum_j w_j * (a_j (x) b_j + b_j (x) a_j) / 2``.

    A pure term ``a (x) a`` is the triple ``(a, a, 1.0)``.  All fields must
    share one kind and length; as a bilinear form the kernel is symmetric by
    construction.
    """

    terms: list[tuple[Field, Field, float]]

    def __post_init__(self):
        if not self.terms:
            raise ValueError("finite-rank kernel needs at least one term")
        kinds = {a.kind for a, _, _ in self.terms} | {b.kind for _, b, _ in self.terms}
        sizes = {a.values.size for a, _, _ in self.terms} | {
            b.values.size for _, b, _ in self.terms
        }
        if len(kinds) != 1 or len(sizes) != 1:
            raise ValueError("all kernel term fields must share kind and length")

    @property
    def field_kind(self) -> FieldKind:
        return self.terms[0][0].kind


@dataclass
class ClosedFormKernel:
    """Correlation ``amplitude * profile_+((x2+y2)/2) * exp(-|x1-y1| / length)``.

    ``component`` marks which load component (1 = horizontal, 2 = vertical)
    the kernel describes; ``profile_family`` selects :func:`profile_h` or
    :func:`profile_k`, evaluated through its positive part.
    """

    component: int
    amplitude: float
    profile_family: str  # "h" | "k"
    profile_index: int
    correlation_length: float

    def __post_init__(self):
        if self.component not in (1, 2):
            raise ValueError("component must be 1 or 2")
        if self.profile_family not in ("h", "k"):
            raise ValueError("profile family must be 'h' or 'k'")
        if self.profile_index not in (1, 2, 3):
            raise ValueError("profile index must be 1, 2 or 3")
        if self.correlation_length <= 0.0:
            raise ValueError("correlation length must be positive")
        if self.amplitude < 0.0:
            raise ValueError("amplitude must be non-negative")

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Evaluate on broadcastable point arrays of shape (..., 2)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        t = 0.5 * (x[..., 1] + y[..., 1])
        p = np.maximum(_profile_values(self.profile_family, self.profile_index, t), 0.0)
        decay = np.exp(-np.abs(x[..., 0] - y[..., 0]) / self.correlation_length)
        return self.amplitude * p * decay


class CorrelationMatrix:
    """Symmetric PSD matrix exposed through dimension, diagonal and columns."""

    def __init__(self, dim: int):
        self.dim = dim

    def diagonal(self) -> np.ndarray:
        raise NotImplementedError

    def column(self, j: int) -> np.ndarray:
        raise NotImplementedError

    def dense(self) -> np.ndarray:
        """Materialize the full matrix; intended for oracles and small tests."""
        return np.column_stack([self.column(j) for j in range(self.dim)])


class _DenseMatrix(CorrelationMatrix):
    def __init__(self, mat: np.ndarray):
        mat = np.asarray(mat, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError("matrix must be square")
        super().__init__(mat.shape[0])
        self._mat = mat

    def diagonal(self):
        return self._mat.diagonal().copy()

    def column(self, j):
        return self._mat[:, j].copy()

    def dense(self):
        return self._mat.copy()


class _FiniteRankMatrix(CorrelationMatrix):
    """C = sum_j w_j (u_j v_j^T + v_j u_j^T) / 2 with u = G a, v = G b."""

    def __init__(self, pairs: list[tuple[np.ndarray, np.ndarray, float]], dim: int):
        super().__init__(dim)
        self._pairs = pairs

    def diagonal(self):
        d = np.zeros(self.dim)
        for u, v, w in self._pairs:
            d += 0.5 * w * (u * v + v * u)  # same rounding as column()
        return d

    def column(self, j):
        c = np.zeros(self.dim)
        for u, v, w in self._pairs:
            c += 0.5 * w * (u * v[j] + v * u[j])
        return c


class _ClosedFormMatrix(CorrelationMatrix):
    """Midpoint-quadrature discretization of a closed-form kernel.

    With one quadrature point per tagged edge,
    ``C_ij = sum_{e owns i} sum_{e' owns j} k(m_e, m_e') (|e|/2) (|e'|/2)``.
    """

    def __init__(self, kernel: ClosedFormKernel, mesh: Mesh, tag: BoundaryTag):
        super().__init__(mesh.n_nodes)
        idx = mesh.edges_with_tag(tag)
        if idx.size == 0:
            raise ValueError(f"no boundary edge carries tag {tag!r}")
        self._kernel = kernel
        self._mid = mesh.edge_midpoints()[idx]
        half = 0.5 * mesh.edge_lengths()[idx]
        edges = mesh.boundary_edges[idx]
        n_e = idx.size
        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([np.arange(n_e)] * 2)
        vals = np.concatenate([half, half])
        # node-by-edge incidence weighted by half edge lengths
        self._inc = sp.coo_matrix(
            (vals, (rows, cols)), shape=(self.dim, n_e)
        ).tocsr()

    def diagonal(self):
        # d_i = sum over the (at most 2x2) pairs of edges incident to node i;
        # only those kernel values are evaluated.
        d = np.zeros(self.dim)
        inc = self._inc.tocoo()
        per_node: dict[int, list[tuple[int, float]]] = {}
        for r, c, v in zip(inc.row, inc.col, inc.data):
            per_node.setdefault(int(r), []).append((int(c), v))
        for node, lst in per_node.items():
            s = 0.0
            for e, we in lst:
                for ep, wep in lst:
                    s += we * wep * float(
                        self._kernel(self._mid[e], self._mid[ep])
                    )
            d[node] = s
        return d

    def column(self, j):
        w_j = np.asarray(self._inc.getrow(j).todense()).ravel()
        active = np.flatnonzero(w_j)
        if active.size == 0:
            return np.zeros(self.dim)
        k_cols = self._kernel(self._mid[:, None, :], self._mid[None, active, :])
        return self._inc @ (k_cols @ w_j[active])


@dataclass
class LowRankFactorization:
    """Rank-m factor stack with its trace-norm residual certificate.

    ``factors`` has one factor per column; ``residuals[k]`` is the trace of
    the residual after the first ``k+1`` factors, so ``trace_error`` equals
    ``residuals[-1]`` (or the full trace for an empty factorization).
    """

    factors: np.ndarray
    trace_error: float
    tolerance: float
    trace: float
    pivots: list[int] = field(default_factory=list)
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def rank(self) -> int:
        return self.factors.shape[1]

    @property
    def dim(self) -> int:
        return self.factors.shape[0]


class NotPositiveSemidefiniteError(ValueError):
    """The matrix exposed a negative diagonal beyond the PSD tolerance."""


class MaxRankReachedError(RuntimeError):
    """Rank cap hit before meeting the trace tolerance; carries the partial result."""

    def __init__(self, factorization: LowRankFactorization):
        self.factorization = factorization
        super().__init__(
            f"rank cap {factorization.rank} reached with relative trace error "
            f"{factorization.trace_error / max(factorization.trace, 1e-300):.3e} "
            f"> requested {factorization.tolerance:.3e}"
        )


def assemble_correlation_matrix(
    kernel, mesh: Mesh, region=BoundaryTag.NEUMANN, mass: sp.spmatrix | None = None
) -> CorrelationMatrix:
    """Discretize a kernel into a lazily accessed correlation matrix.

    Finite-rank kernels become exact ``(G a)(G b)^T``-structured sums, where
    ``G`` is the mass matrix of the region (the boundary mass of a tag, or
    the domain mass for ``region="domain"``); ``mass`` overrides it.
    Closed-form kernels are integrated with one midpoint per tagged edge
    pair and live on the scalar node space.
    """
    if isinstance(kernel, ClosedFormKernel):
        if region == "domain":
            raise ValueError("closed-form kernels are defined on boundary segments")
        return _ClosedFormMatrix(kernel, mesh, region)
    if isinstance(kernel, FiniteRankKernel):
        ncomp = 1 if kernel.field_kind is FieldKind.SCALAR else 2
        dim = ncomp * mesh.n_nodes
        if mass is None:
            mass = _region_mass(mesh, region, ncomp)
        if mass.shape[0] != dim:
            raise ValueError("mass matrix does not match the kernel field size")
        pairs = [
            (mass @ a.values, mass @ b.values, w) for a, b, w in kernel.terms
        ]
        return _FiniteRankMatrix(pairs, dim)
    raise TypeError(f"unsupported kernel type {type(kernel).__name__}")


def _region_mass(mesh: Mesh, region, ncomp: int) -> sp.spmatrix:
    from .fem import assemble_mass, vector_boundary_mass
    from .mesh import boundary_mass_matrix

    if region == "domain":
        if ncomp != 1:
            raise ValueError("domain kernels support scalar fields only")
        return assemble_mass(mesh)
    if ncomp == 2:
        return vector_boundary_mass(mesh, region)
    return boundary_mass_matrix(mesh, region)


def pivoted_cholesky(
    matrix,
    epsilon: float,
    max_rank: int | None = None,
    strict: bool = True,
    psd_tol: float = 1e-12,
) -> LowRankFactorization:
    """Greedy rank-revealing factorization with a relative trace certificate.

    Factors are accumulated until ``trace(C - C_m) <= epsilon * trace(C)``,
    always pivoting on the largest remaining diagonal entry (smallest index
    wins ties).  Only the diagonal and ``m`` columns of the matrix are ever
    evaluated, so the cost is O(m^2 n).

    Parameters
    ----------
    matrix : CorrelationMatrix or square ndarray
    epsilon : float
        Relative trace tolerance, > 0.
    max_rank : int, optional
        Hard cap on the number of factors.
    strict : bool
        If True (default), hitting ``max_rank`` before the tolerance raises
        :class:`MaxRankReachedError`; if False the truncated factorization
        is returned with its achieved ``trace_error``.

    Raises
    ------
    NotPositiveSemidefiniteError
        If a diagonal entry drops below ``-psd_tol * trace(C)``.
    """
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    if isinstance(matrix, np.ndarray):
        matrix = _DenseMatrix(matrix)
    n = matrix.dim
    if max_rank is None:
        max_rank = n
    max_rank = min(max_rank, n)

    d = matrix.diagonal().astype(float).copy()
    trace = float(d.sum())
    if trace < 0.0 and trace < -psd_tol * abs(trace):
        raise NotPositiveSemidefiniteError(f"negative trace {trace:.3e}")
    if trace <= 0.0:
        return LowRankFactorization(
            np.zeros((n, 0)), 0.0, epsilon, trace, [], np.zeros(0)
        )

    factors = np.zeros((n, max_rank))
    pivots: list[int] = []
    residuals: list[float] = []
    err = trace
    m = 0
    while m < max_rank and err > epsilon * trace:
        j = int(np.argmax(d))  # argmax returns the smallest index on ties
        pivot = d[j]
        if pivot < -psd_tol * trace:
            raise NotPositiveSemidefiniteError(
                f"negative pivot {pivot:.3e} at index {j} (trace {trace:.3e})"
            )
        if pivot <= 0.0:
            break  # numerically exhausted; err is fp noise around zero
        col = matrix.column(j)
        if m > 0:
            col = col - factors[:, :m] @ factors[j, :m]
        ell = col / np.sqrt(pivot)
        ell[j] = np.sqrt(pivot)
        factors[:, m] = ell
        d -= ell * ell
        d[j] = 0.0
        if float(d.min()) < -psd_tol * trace:
            raise NotPositiveSemidefiniteError(
                f"residual diagonal dropped to {d.min():.3e} after pivot {j} "
                f"(trace {trace:.3e})"
            )
        pivots.append(j)
        err = float(d.sum())
        residuals.append(err)
        m += 1

    fac = LowRankFactorization(
        factors=factors[:, :m].copy(),
        trace_error=max(err, 0.0) if m > 0 else err,
        tolerance=epsilon,
        trace=trace,
        pivots=pivots,
        residuals=np.asarray(residuals),
    )
    if err > epsilon * trace and strict:
        raise MaxRankReachedError(fac)
    return fac


def factors_to_loads(
    fac: LowRankFactorization,
    mass: sp.spmatrix,
    kind: FieldKind = FieldKind.SCALAR,
    tol: float = 1e-12,
) -> list[Field]:
    """Recover nodal load functions ``l_k`` with ``G l_k = factor_k``.

    ``mass`` is the same (possibly boundary-restricted) mass matrix used to
    assemble the correlation matrix; it only needs to be SPD on the dofs the
    factors touch.  Entries away from that set stay zero.
    """
    if mass.shape[0] != fac.dim:
        raise ValueError("mass matrix does not match factor dimension")
    active = np.flatnonzero(mass.diagonal() > 0.0)
    if active.size == 0:
        raise ValueError("mass matrix is singular: no active dofs")
    sub = mass.tocsr()[active][:, active]
    loads = []
    for k in range(fac.rank):
        f = fac.factors[:, k]
        off = np.delete(f, active)
        if off.size and np.max(np.abs(off)) > 0.0:
            raise ValueError("factor has support outside the mass matrix region")
        x = np.zeros(fac.dim)
        x[active] = solve_spd(sub, f[active], tol=tol)
        loads.append(Field(x, kind))
    return loads


def finite_rank_correlated_pair(g_a: Field, g_b: Field, alpha: float) -> FiniteRankKernel:
    """Correlation of two load patterns with correlation coefficient ``alpha``.

    Returns ``g_a (x) g_a + g_b (x) g_b + alpha (g_a (x) g_b + g_b (x) g_a)``.
    For ``alpha = +/-1`` this collapses to the rank-one kernel
    ``(g_a +/- g_b) (x) (g_a +/- g_b)``.
    """
    if abs(alpha) > 1.0:
        raise ValueError(f"|alpha| <= 1 required for a PSD kernel, got {alpha}")
    if alpha == 1.0 or alpha == -1.0:
        s = Field(g_a.values + alpha * g_b.values, g_a.kind)
        return FiniteRankKernel([(s, s, 1.0)])
    terms = [(g_a, g_a, 1.0), (g_b, g_b, 1.0)]
    if alpha != 0.0:
        terms.append((g_a, g_b, 2.0 * alpha))
    return FiniteRankKernel(terms)
