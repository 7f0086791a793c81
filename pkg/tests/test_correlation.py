import numpy as np
import pytest

from corshape.correlation import (
    ClosedFormKernel,
    FiniteRankKernel,
    MaxRankReachedError,
    NotPositiveSemidefiniteError,
    assemble_correlation_matrix,
    factors_to_loads,
    finite_rank_correlated_pair,
    pivoted_cholesky,
    profile_h,
    profile_k,
)
from corshape.fem import Field, FieldKind
from corshape.mesh import BoundaryTag, Rect, boundary_mass_matrix, generate_structured_mesh, tag_boundary

import scipy.sparse as sp


def test_profile_values():
    assert profile_h(1, 0.5) == 1.0
    assert profile_k(1, 0.25) == 0.0
    assert profile_k(1, 0.0) == 1.0
    for t in (0.0, 0.3, 0.77, 1.0):
        assert profile_h(3, t) == 1.0
    assert profile_h(2, 0.0) == 0.5


def test_profile_index_validation():
    with pytest.raises(ValueError):
        profile_h(4, 0.5)
    with pytest.raises(ValueError):
        profile_k(0, 0.5)


def tagged_segment_mesh(nx=8, ny=2, box=(0.0, 2.0, 0.0, 0.5)):
    mesh = generate_structured_mesh(nx, ny, box)
    top = Rect(box[0], box[1], box[3], box[3])
    return tag_boundary(mesh, top, BoundaryTag.NEUMANN)


def test_finite_rank_single_term_is_gaga_t():
    mesh = tagged_segment_mesh()
    g = boundary_mass_matrix(mesh, BoundaryTag.NEUMANN)
    rng = np.random.default_rng(0)
    a = rng.standard_normal(mesh.n_nodes)
    kernel = FiniteRankKernel([(Field(a), Field(a), 1.0)])
    c = assemble_correlation_matrix(kernel, mesh, BoundaryTag.NEUMANN)
    ga = g @ a
    assert np.allclose(c.dense(), np.outer(ga, ga), atol=1e-14)
    eigs = np.linalg.eigvalsh(c.dense())
    assert (eigs > 1e-12 * eigs.max()).sum() == 1


def test_accessor_symmetry_exact():
    mesh = tagged_segment_mesh()
    rng = np.random.default_rng(1)
    a = Field(rng.standard_normal(mesh.n_nodes))
    b = Field(rng.standard_normal(mesh.n_nodes))
    kernel = FiniteRankKernel([(a, a, 1.0), (a, b, 0.6)])
    c = assemble_correlation_matrix(kernel, mesh, BoundaryTag.NEUMANN)
    dense = c.dense()
    assert np.array_equal(dense, dense.T)
    assert np.array_equal(np.diag(dense), c.diagonal())


def test_closed_form_constant_kernel_is_rank_one():
    # infinite correlation length and flat profile: C = amp * (G 1)(G 1)'
    mesh = tagged_segment_mesh(nx=12)
    amp = 4.0
    kernel = ClosedFormKernel(1, amp, "h", 3, correlation_length=1e12)
    c = assemble_correlation_matrix(kernel, mesh, BoundaryTag.NEUMANN)
    dense = c.dense()
    g = boundary_mass_matrix(mesh, BoundaryTag.NEUMANN)
    lumped = np.asarray(g.sum(axis=1)).ravel()
    expected = np.outer(np.sqrt(amp) * lumped, np.sqrt(amp) * lumped)
    assert np.allclose(dense, expected, atol=1e-10)
    eigs = np.sort(np.linalg.eigvalsh(dense))[::-1]
    assert eigs[1] <= 1e-10 * eigs[0]


def test_pivoted_cholesky_identity():
    fac = pivoted_cholesky(np.eye(3), epsilon=1e-14)
    assert fac.rank == 3
    assert fac.trace_error <= 1e-14 * 3


def test_pivoted_cholesky_rank_one_sign():
    rng = np.random.default_rng(5)
    v = rng.standard_normal(6)
    fac = pivoted_cholesky(np.outer(v, v), epsilon=1e-12)
    assert fac.rank == 1
    ell = fac.factors[:, 0]
    expected = v if v[np.argmax(np.abs(v))] > 0 else -v
    assert np.allclose(ell, expected, atol=1e-12)
    assert ell[fac.pivots[0]] > 0.0


def exp_kernel_matrix(n=100, length=0.1):
    x = np.linspace(0.0, 1.0, n)
    return np.exp(-np.abs(x[:, None] - x[None, :]) / length)


def spectral_rank(eigs, trace, eps):
    """Smallest m with sum of trailing eigenvalues <= eps * trace."""
    tail = trace - np.cumsum(eigs)
    hits = np.flatnonzero(tail <= eps * trace)
    return int(hits[0]) + 1 if hits.size else len(eigs)


def test_pivoted_cholesky_matches_spectral_rank():
    c = exp_kernel_matrix()
    eigs = np.sort(np.linalg.eigvalsh(c))[::-1]
    fac = pivoted_cholesky(c, epsilon=1e-6)
    assert fac.trace_error <= 1e-6 * fac.trace
    m_star = spectral_rank(eigs, fac.trace, 1e-6)
    assert fac.rank <= m_star + 2


def test_pivoted_cholesky_error_identity_and_monotonicity():
    c = exp_kernel_matrix(60, 0.2)
    fac = pivoted_cholesky(c, epsilon=1e-10)
    trace = np.trace(c)
    cum = np.cumsum(np.sum(fac.factors**2, axis=0))
    recomputed = trace - cum
    assert np.all(np.abs(fac.residuals - recomputed) <= 1e-12 * trace)
    assert np.all(np.diff(fac.residuals) <= 1e-14 * trace)
    # PSD preservation: the final residual has a non-negative diagonal
    resid = c - fac.factors @ fac.factors.T
    assert np.min(np.diag(resid)) >= -1e-12 * trace


def test_pivoted_cholesky_pivots_decreasing():
    c = exp_kernel_matrix(40, 0.15)
    fac = pivoted_cholesky(c, epsilon=1e-8)
    pivot_values = fac.factors[fac.pivots, range(fac.rank)] ** 2
    assert np.all(np.diff(pivot_values) <= 1e-12)


def test_eigen_oracle_domination():
    c = exp_kernel_matrix(80, 0.1)
    eigs = np.sort(np.linalg.eigvalsh(c))[::-1]
    trace = np.trace(c)
    fac = pivoted_cholesky(c, epsilon=1e-8)
    spectral_tail = trace - np.cumsum(eigs)
    for m in range(1, fac.rank + 1):
        best = max(spectral_tail[m - 1], 0.0)
        assert fac.residuals[m - 1] >= best - 1e-10 * trace
        if best > 1e-6 * trace:
            assert fac.residuals[m - 1] <= 4.0 * best


def test_exact_rank_recovery():
    mesh = tagged_segment_mesh()
    rng = np.random.default_rng(9)
    fields = [Field(rng.standard_normal(mesh.n_nodes)) for _ in range(3)]
    kernel = FiniteRankKernel([(f, f, 1.0) for f in fields])
    c = assemble_correlation_matrix(kernel, mesh, BoundaryTag.NEUMANN)
    fac = pivoted_cholesky(c, epsilon=1e-10)
    assert fac.rank == 3


def test_not_psd_detected():
    c = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues 3 and -1
    with pytest.raises(NotPositiveSemidefiniteError):
        pivoted_cholesky(c, epsilon=1e-10)


def test_max_rank_error_carries_partial_result():
    c = exp_kernel_matrix(50, 0.05)
    with pytest.raises(MaxRankReachedError) as err:
        pivoted_cholesky(c, epsilon=1e-10, max_rank=3)
    partial = err.value.factorization
    assert partial.rank == 3
    assert partial.trace_error > 1e-10 * partial.trace
    truncated = pivoted_cholesky(c, epsilon=1e-10, max_rank=3, strict=False)
    assert truncated.rank == 3
    assert np.array_equal(truncated.factors, partial.factors)


def test_factors_to_loads_identity_mass():
    rng = np.random.default_rng(13)
    v = rng.standard_normal(5)
    fac = pivoted_cholesky(np.outer(v, v), epsilon=1e-12)
    loads = factors_to_loads(fac, sp.identity(5, format="csr"))
    assert np.allclose(loads[0].values, fac.factors[:, 0], atol=1e-12)


def test_factors_to_loads_round_trip():
    mesh = tagged_segment_mesh(nx=10)
    g = boundary_mass_matrix(mesh, BoundaryTag.NEUMANN)
    rng = np.random.default_rng(17)
    load = np.zeros(mesh.n_nodes)
    nodes = mesh.nodes_with_tag(BoundaryTag.NEUMANN)
    load[nodes] = rng.standard_normal(nodes.size)
    kernel = FiniteRankKernel([(Field(load), Field(load), 1.0)])
    c = assemble_correlation_matrix(kernel, mesh, BoundaryTag.NEUMANN)
    fac = pivoted_cholesky(c, epsilon=1e-12)
    recovered = factors_to_loads(fac, g, tol=1e-12)[0].values
    sign = np.sign(recovered @ load)
    assert np.linalg.norm(sign * recovered - load) <= 1e-8 * np.linalg.norm(load)


def test_factor_load_trace_identity():
    mesh = tagged_segment_mesh(nx=10)
    g = boundary_mass_matrix(mesh, BoundaryTag.NEUMANN)
    rng = np.random.default_rng(19)
    nodes = mesh.nodes_with_tag(BoundaryTag.NEUMANN)
    fields = []
    for _ in range(2):
        vals = np.zeros(mesh.n_nodes)
        vals[nodes] = rng.standard_normal(nodes.size)
        fields.append(Field(vals))
    kernel = FiniteRankKernel([(f, f, 1.0) for f in fields])
    c = assemble_correlation_matrix(kernel, mesh, BoundaryTag.NEUMANN)
    fac = pivoted_cholesky(c, epsilon=1e-12)
    loads = factors_to_loads(fac, g, tol=1e-12)
    # trace(C_m) = sum_k ||G l_k||^2 since the factors are G l_k
    lhs = sum(np.sum((g @ ld.values) ** 2) for ld in loads)
    trace_cm = fac.trace - fac.trace_error
    assert abs(lhs - trace_cm) <= 1e-8 * trace_cm


def test_correlated_pair_term_structure():
    rng = np.random.default_rng(23)
    a = Field(rng.standard_normal(8))
    b = Field(rng.standard_normal(8))
    assert len(finite_rank_correlated_pair(a, b, 0.0).terms) == 2
    one = finite_rank_correlated_pair(a, b, 1.0)
    assert len(one.terms) == 1
    assert np.allclose(one.terms[0][0].values, a.values + b.values)
    minus = finite_rank_correlated_pair(a, b, -1.0)
    assert len(minus.terms) == 1
    assert np.allclose(minus.terms[0][0].values, a.values - b.values)
    with pytest.raises(ValueError):
        finite_rank_correlated_pair(a, b, 1.5)


def test_correlated_pair_dense_matches_formula():
    mesh = tagged_segment_mesh(nx=6)
    g = boundary_mass_matrix(mesh, BoundaryTag.NEUMANN)
    rng = np.random.default_rng(29)
    a = rng.standard_normal(mesh.n_nodes)
    b = rng.standard_normal(mesh.n_nodes)
    alpha = 0.4
    kernel = finite_rank_correlated_pair(Field(a), Field(b), alpha)
    c = assemble_correlation_matrix(kernel, mesh, BoundaryTag.NEUMANN).dense()
    ga, gb = g @ a, g @ b
    expected = (
        np.outer(ga, ga)
        + np.outer(gb, gb)
        + alpha * (np.outer(ga, gb) + np.outer(gb, ga))
    )
    assert np.allclose(c, expected, atol=1e-13)
