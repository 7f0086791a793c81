import numpy as np
import pytest

from corshape.oracle import (
    DesignSystem,
    RandomLoadModel,
    discrete_commutation_check,
    gradient_dense,
    mc_estimate,
    objective_dense,
    random_correlation_factors,
    random_design_system,
    solve_correlation_dense,
    solve_cross_correlation_dense,
)


def test_correlation_identity_system():
    n = 6
    sys_ = DesignSystem(np.eye(n), np.zeros((n, n)), np.eye(n))
    rng = np.random.default_rng(0)
    _, cor_f = random_correlation_factors(rng, n, 2)
    assert np.allclose(solve_correlation_dense(sys_, 0.0, cor_f), cor_f, atol=1e-13)


def test_correlation_rank_one():
    rng = np.random.default_rng(1)
    sys_ = random_design_system(rng, 8)
    f = rng.standard_normal(8)
    h = 0.2
    cor_u = solve_correlation_dense(sys_, h, np.outer(f, f))
    u = np.linalg.solve(sys_.matrix(h), f)
    assert np.allclose(cor_u, np.outer(u, u), atol=1e-12)


def test_correlation_matches_per_factor_solves():
    rng = np.random.default_rng(2)
    n = 12
    a = rng.standard_normal((n, n))
    spd = a @ a.T + n * np.eye(n)
    sys_ = DesignSystem(spd, np.zeros((n, n)), np.eye(n))
    factors, cor_f = random_correlation_factors(rng, n, 3)
    cor_u = solve_correlation_dense(sys_, 0.0, cor_f)
    states = np.linalg.solve(spd, factors)
    expected = states @ states.T
    assert np.max(np.abs(cor_u - expected)) <= 1e-12 * np.abs(expected).max()


def test_correlation_output_psd():
    rng = np.random.default_rng(3)
    for _ in range(20):
        sys_ = random_design_system(rng, 10)
        _, cor_f = random_correlation_factors(rng, 10, 4)
        cor_u = solve_correlation_dense(sys_, float(rng.uniform(-0.5, 0.5)), cor_f)
        eigs = np.linalg.eigvalsh(cor_u)
        assert eigs.min() >= -1e-10 * np.trace(cor_u)


def test_cross_correlation_zero_cost():
    rng = np.random.default_rng(4)
    sys_ = DesignSystem(np.eye(5), np.zeros((5, 5)), np.zeros((5, 5)))
    _, cor_u = random_correlation_factors(rng, 5, 2)
    assert np.all(solve_cross_correlation_dense(sys_, 0.0, cor_u) == 0.0)


def test_cross_correlation_identity_case():
    rng = np.random.default_rng(5)
    _, cor_u = random_correlation_factors(rng, 7, 3)
    sys_ = DesignSystem(np.eye(7), np.zeros((7, 7)), np.eye(7))
    out = solve_cross_correlation_dense(sys_, 0.0, cor_u)
    assert np.allclose(out, -2.0 * cor_u, atol=1e-13)


def test_cross_correlation_matches_per_factor_adjoints():
    rng = np.random.default_rng(6)
    n = 9
    sys_ = random_design_system(rng, n)
    h = 0.1
    f = rng.standard_normal(n)
    a = sys_.matrix(h)
    u = np.linalg.solve(a, f)
    p = np.linalg.solve(a.T, -2.0 * sys_.cost.T @ u)
    cor_u = solve_correlation_dense(sys_, h, np.outer(f, f))
    cor_up = solve_cross_correlation_dense(sys_, h, cor_u)
    assert np.max(np.abs(cor_up - np.outer(u, p))) <= 1e-12 * np.abs(np.outer(u, p)).max()


def test_objective_identity_case():
    n = 11
    sys_ = DesignSystem(np.eye(n), np.zeros((n, n)), np.eye(n))
    assert abs(objective_dense(sys_, 0.0, np.eye(n)) - n) <= 1e-12


def test_objective_trace_identity():
    rng = np.random.default_rng(7)
    sys_ = random_design_system(rng, 10)
    factors, cor_f = random_correlation_factors(rng, 10, 4)
    h = -0.2
    dense = objective_dense(sys_, h, cor_f)
    states = np.linalg.solve(sys_.matrix(h), factors)
    per_factor = float(np.einsum("ik,ij,jk->", states, sys_.cost, states))
    assert abs(dense - per_factor) <= 1e-12 * max(abs(dense), 1.0)


def test_objective_invariant_under_refactorization():
    rng = np.random.default_rng(8)
    sys_ = random_design_system(rng, 8)
    factors, cor_f = random_correlation_factors(rng, 8, 3)
    # rotate the factors by a random orthogonal matrix: same product
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    rotated = factors @ q
    assert np.allclose(rotated @ rotated.T, cor_f, atol=1e-12)
    a = objective_dense(sys_, 0.3, cor_f)
    b = objective_dense(sys_, 0.3, rotated @ rotated.T)
    assert abs(a - b) <= 1e-12 * max(abs(a), 1.0)


def test_gradient_zero_when_design_independent():
    rng = np.random.default_rng(9)
    n = 6
    sys_ = DesignSystem(np.eye(n) + 0.1 * rng.standard_normal((n, n)), np.zeros((n, n)),
                        np.eye(n))
    _, cor_f = random_correlation_factors(rng, n, 2)
    assert gradient_dense(sys_, 0.0, cor_f) == 0.0


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(4, 21))
        sys_ = random_design_system(rng, n)
        _, cor_f = random_correlation_factors(rng, n, int(rng.integers(1, 6)))
        h = float(rng.uniform(-0.4, 0.4))
        grad = gradient_dense(sys_, h, cor_f)
        step = 1e-5
        fd = (
            objective_dense(sys_, h + step, cor_f)
            - objective_dense(sys_, h - step, cor_f)
        ) / (2 * step)
        worst = max(worst, abs(grad - fd) / max(abs(grad), abs(fd), 1e-300))
    assert worst <= 1e-6


def test_adjoint_factor_convention_frozen():
    # The -2 B'u adjoint matches finite differences; the symmetric-half
    # convention produces exactly half the value.
    rng = np.random.default_rng(11)
    sys_ = random_design_system(rng, 12)
    _, cor_f = random_correlation_factors(rng, 12, 3)
    h = 0.15
    step = 1e-5
    fd = (
        objective_dense(sys_, h + step, cor_f) - objective_dense(sys_, h - step, cor_f)
    ) / (2 * step)
    full = gradient_dense(sys_, h, cor_f, adjoint_factor=2.0)
    half = gradient_dense(sys_, h, cor_f, adjoint_factor=1.0)
    assert abs(full - fd) <= 1e-6 * max(abs(fd), 1.0)
    assert abs(half - 0.5 * full) <= 1e-12 * max(abs(full), 1.0)


def test_objective_affine_in_cross_weight():
    rng = np.random.default_rng(12)
    n = 10
    sys_ = random_design_system(rng, n)
    ga = rng.standard_normal(n)
    gb = rng.standard_normal(n)

    def cor(alpha):
        return (
            np.outer(ga, ga)
            + np.outer(gb, gb)
            + alpha * (np.outer(ga, gb) + np.outer(gb, ga))
        )

    h = 0.1
    m = {a: objective_dense(sys_, h, cor(a)) for a in (-1.0, 0.0, 1.0)}
    assert abs(m[1.0] + m[-1.0] - 2.0 * m[0.0]) <= 1e-12 * max(abs(m[0.0]), 1.0)


def test_mc_deterministic_model():
    rng = np.random.default_rng(13)
    sys_ = random_design_system(rng, 6)
    mean = rng.standard_normal(6)
    model = RandomLoadModel(mean, np.zeros((6, 0)))
    value, stderr = mc_estimate(sys_, 0.1, model, samples=500, seed=42)
    u = np.linalg.solve(sys_.matrix(0.1), mean)
    assert stderr == 0.0
    assert abs(value - u @ (sys_.cost @ u)) <= 1e-12 * max(abs(value), 1.0)


def test_mc_reproducible_and_clt_scaling():
    rng = np.random.default_rng(14)
    sys_ = random_design_system(rng, 8)
    factors = rng.standard_normal((8, 3))
    model = RandomLoadModel(np.zeros(8), factors)
    a1 = mc_estimate(sys_, 0.0, model, samples=20000, seed=7)
    a2 = mc_estimate(sys_, 0.0, model, samples=20000, seed=7)
    assert a1 == a2
    _, se_small = mc_estimate(sys_, 0.0, model, samples=20000, seed=7)
    _, se_large = mc_estimate(sys_, 0.0, model, samples=80000, seed=7)
    # quadrupling the sample count halves the standard error (CLT)
    assert abs(se_large / se_small - 0.5) <= 0.2 * 0.5


def test_mc_agrees_with_dense_objective():
    rng = np.random.default_rng(15)
    for k in range(5):
        n = int(rng.integers(4, 15))
        sys_ = random_design_system(rng, n)
        factors = rng.standard_normal((n, int(rng.integers(1, 5))))
        model = RandomLoadModel(np.zeros(n), factors)
        dense = objective_dense(sys_, 0.05, model.correlation())
        mean, stderr = mc_estimate(sys_, 0.05, model, samples=100000, seed=100 + k)
        assert abs(dense - mean) <= 3.0 * stderr


def test_mc_correlated_coefficients():
    rng = np.random.default_rng(16)
    n = 8
    sys_ = random_design_system(rng, n)
    factors = rng.standard_normal((n, 2))
    corr = np.array([[1.0, 0.6], [0.6, 1.0]])
    model = RandomLoadModel(np.zeros(n), factors, coeff_correlation=corr)
    s = model.sampling_transform()
    assert np.max(np.abs(s @ s.T - corr)) <= 1e-12
    dense = objective_dense(sys_, 0.0, model.correlation())
    mean, stderr = mc_estimate(sys_, 0.0, model, samples=100000, seed=3)
    assert abs(dense - mean) <= 3.0 * stderr


def test_non_psd_coefficient_correlation_rejected():
    with pytest.raises(ValueError):
        RandomLoadModel(
            np.zeros(3),
            np.eye(3),
            coeff_correlation=np.array(
                [[1.0, 0.0, 0.0], [0.0, 1.0, 2.0], [0.0, 2.0, 1.0]]
            ),
        )


def test_commutation_deterministic_square():
    u = np.tile(np.linspace(0.0, 1.0, 7), (5, 1))
    dev = discrete_commutation_check(u, u)
    assert dev <= 1e-15


def test_commutation_independent_fields_small():
    rng = np.random.default_rng(17)
    u = rng.standard_normal((2000, 4))
    v = rng.standard_normal((2000, 4))
    dev = discrete_commutation_check(u, v)
    assert dev <= 1e-12
    cor = (u.T @ v) / 2000.0
    assert np.abs(np.diag(cor)).max() <= 0.1  # zero-mean independent fields


def test_commutation_random_pairs():
    rng = np.random.default_rng(18)
    worst = 0.0
    for _ in range(50):
        u = rng.standard_normal((30, 20))
        v = rng.standard_normal((30, 20))
        worst = max(worst, discrete_commutation_check(u, v))
    assert worst <= 1e-12


def test_dimension_cap_enforced():
    with pytest.raises(ValueError):
        DesignSystem(np.eye(300), np.eye(300), np.eye(300))
