"""Dense finite-dimensional verification engine.

Everything the low-rank pipeline computes has a small dense counterpart
here: the mean of a quadratic cost through the full correlation matrix of
the state, the cross-correlation with the adjoint, the exact design
gradient, and a seeded Monte-Carlo estimator.  These routines favour
clarity over speed and are restricted to small dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DesignSystem",
    "RandomLoadModel",
    "solve_correlation_dense",
    "solve_cross_correlation_dense",
    "objective_dense",
    "gradient_dense",
    "mc_estimate",
    "discrete_commutation_check",
    "random_design_system",
    "random_correlation_factors",
]

MAX_DENSE_DIM = 200

# Adjoint convention, frozen after validation against central finite
# differences: with cost u'Bu the per-sample adjoint solves
#     A' p = -2 B' u,
# the cross-correlation is Cor(u,p) = E[u p'] and the design derivative is
#     dM/dh = trace(A1 . Cor(u,p)).
# The symmetric-half adjoint (A' q = -B' u) yields exactly half the trace;
# `adjoint_factor` exposes both so the test suite can assert which one
# matches finite differences.


@dataclass
class DesignSystem:
    """Affine design-dependent system ``(a0 + h a1) u = f`` with cost ``u'Bu``."""

    a0: np.ndarray
    a1: np.ndarray
    cost: np.ndarray

    def __post_init__(self):
        self.a0 = np.asarray(self.a0, dtype=float)
        self.a1 = np.asarray(self.a1, dtype=float)
        self.cost = np.asarray(self.cost, dtype=float)
        n = self.a0.shape[0]
        for name, m in (("a0", self.a0), ("a1", self.a1), ("cost", self.cost)):
            if m.shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}, got {m.shape}")
        if n > MAX_DENSE_DIM:
            raise ValueError(f"dense oracle limited to N <= {MAX_DENSE_DIM}")
        if not np.allclose(self.cost, self.cost.T, rtol=0.0, atol=1e-12):
            raise ValueError("cost matrix must be symmetric")

    @property
    def dim(self) -> int:
        return self.a0.shape[0]

    def matrix(self, h: float) -> np.ndarray:
        return self.a0 + h * self.a1


def solve_correlation_dense(sys: DesignSystem, h: float, cor_f: np.ndarray) -> np.ndarray:
    """Correlation of the state: ``Cor(u) = A^-1 Cor(f) A^-T``."""
    a = sys.matrix(h)
    x = np.linalg.solve(a, np.asarray(cor_f, dtype=float))
    cor_u = np.linalg.solve(a, x.T).T
    return 0.5 * (cor_u + cor_u.T)


def solve_cross_correlation_dense(
    sys: DesignSystem, h: float, cor_u: np.ndarray, adjoint_factor: float = 2.0
) -> np.ndarray:
    """Cross-correlation ``Cor(u, p) = E[u p'] = -factor * Cor(u) B A^-1``."""
    a = sys.matrix(h)
    z = np.asarray(cor_u, dtype=float) @ sys.cost
    return -adjoint_factor * np.linalg.solve(a.T, z.T).T


def objective_dense(sys: DesignSystem, h: float, cor_f: np.ndarray) -> float:
    """Mean cost ``B : Cor(u)(h)`` (Frobenius pairing)."""
    cor_u = solve_correlation_dense(sys, h, cor_f)
    return float(np.sum(sys.cost * cor_u))


def gradient_dense(
    sys: DesignSystem, h: float, cor_f: np.ndarray, adjoint_factor: float = 2.0
) -> float:
    """Design derivative ``dM/dh = trace(a1 . Cor(u,p))``."""
    cor_u = solve_correlation_dense(sys, h, cor_f)
    cor_up = solve_cross_correlation_dense(sys, h, cor_u, adjoint_factor)
    return float(np.einsum("ij,ji->", sys.a1, cor_up))


@dataclass
class RandomLoadModel:
    """Random load ``f = mean + factors @ xi`` with jointly Gaussian ``xi``.

    ``coeff_correlation`` is the (uncentered) correlation of the zero-mean
    coefficients; identity by default.  The implied two-point correlation of
    the load is ``mean mean' + F R F'``.
    """

    mean: np.ndarray
    factors: np.ndarray
    coeff_correlation: np.ndarray | None = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.factors = np.asarray(self.factors, dtype=float)
        if self.factors.ndim != 2 or self.factors.shape[0] != self.mean.size:
            raise ValueError("factors must be (n, m) with n matching the mean")
        m = self.factors.shape[1]
        if self.coeff_correlation is None:
            self.coeff_correlation = np.eye(m)
        self.coeff_correlation = np.asarray(self.coeff_correlation, dtype=float)
        if self.coeff_correlation.shape != (m, m):
            raise ValueError("coefficient correlation must be (m, m)")
        if not np.allclose(self.coeff_correlation, self.coeff_correlation.T, atol=1e-12):
            raise ValueError("coefficient correlation must be symmetric")
        self._transform = _psd_sqrt(self.coeff_correlation)

    @property
    def n_factors(self) -> int:
        return self.factors.shape[1]

    def correlation(self) -> np.ndarray:
        return np.outer(self.mean, self.mean) + self.factors @ self.coeff_correlation @ self.factors.T

    def sampling_transform(self) -> np.ndarray:
        """Matrix ``S`` with ``S S' = coeff_correlation`` to within 1e-12."""
        return self._transform


def _psd_sqrt(r: np.ndarray) -> np.ndarray:
    if r.size == 0:
        return r.copy()
    vals, vecs = np.linalg.eigh(r)
    scale = max(float(vals.max()), 1.0)
    if vals.min() < -1e-10 * scale:
        raise ValueError(f"coefficient correlation is not PSD (min eig {vals.min():.3e})")
    s = vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))
    if np.max(np.abs(s @ s.T - r)) > 1e-12 * scale:
        raise ValueError("sampling transform does not reproduce the correlation")
    return s


def mc_estimate(
    sys: DesignSystem,
    h: float,
    model: RandomLoadModel,
    samples: int,
    seed: int,
    chunk: int = 20000,
) -> tuple[float, float]:
    """Seeded Monte-Carlo mean and standard error of the cost ``u'Bu``.

    Sampling runs in fixed-size chunks whose generators are spawned
    deterministically from the master seed, with reductions in a fixed
    order, so the estimate is reproducible bit for bit.
    """
    if samples < 100:
        raise ValueError("use at least 100 samples")
    a = sys.matrix(h)
    u_mean = np.linalg.solve(a, model.mean)
    transform = model.sampling_transform()
    u_factors = np.linalg.solve(a, model.factors @ transform)
    m = u_factors.shape[1]
    if m == 0:  # no randomness at all: zero variance by construction
        return float(u_mean @ (sys.cost @ u_mean)), 0.0

    n_chunks = (samples + chunk - 1) // chunk
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    total = 0.0
    total_sq = 0.0
    remaining = samples
    for child in children:
        size = min(chunk, remaining)
        remaining -= size
        rng = np.random.Generator(np.random.PCG64(child))
        z = rng.standard_normal((m, size))
        u = u_mean[:, None] + u_factors @ z
        cost = np.einsum("is,is->s", u, sys.cost @ u)
        total += float(cost.sum())
        total_sq += float((cost * cost).sum())
    mean = total / samples
    var = max(total_sq - samples * mean * mean, 0.0) / max(samples - 1, 1)
    stderr = float(np.sqrt(var / samples))
    return mean, stderr


def random_design_system(rng: np.random.Generator, n: int) -> DesignSystem:
    """Well-conditioned random instance for verification batteries."""
    a0 = np.eye(n) + 0.3 * rng.standard_normal((n, n)) / np.sqrt(n)
    a1 = 0.5 * rng.standard_normal((n, n)) / np.sqrt(n)
    s = rng.standard_normal((n, n))
    cost = 0.5 * (s + s.T)
    return DesignSystem(a0, a1, cost)


def random_correlation_factors(
    rng: np.random.Generator, n: int, rank: int
) -> tuple[np.ndarray, np.ndarray]:
    """Random factors and the PSD correlation matrix they span."""
    factors = rng.standard_normal((n, rank))
    return factors, factors @ factors.T


def discrete_commutation_check(
    u: np.ndarray, v: np.ndarray, weights: np.ndarray | None = None
) -> float:
    """Max deviation between the two routes to the diagonal second moment.

    Route one builds the full correlation matrix of the sampled fields and
    reads its diagonal; route two averages the pointwise product.  At finite
    dimension both are the same sum, so the deviation is pure floating-point
    noise.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.ndim != 2:
        raise ValueError("u and v must be (n_samples, n_points) arrays of equal shape")
    n = u.shape[0]
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    correlation = (u * w[:, None]).T @ v
    via_matrix = np.diag(correlation)
    via_product = np.einsum("s,sx,sx->x", w, u, v)
    return float(np.max(np.abs(via_matrix - via_product)))
