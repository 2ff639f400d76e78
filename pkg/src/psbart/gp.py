"""Squared-exponential covariance algebra over the target mesh.

Every leaf function lives on the T-point mesh, so all linear algebra here
is T x T regardless of sample size; the marginal likelihood of a leaf's
observations is evaluated through the mesh-level system, never the n x n
covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .data import TargetMesh
from .errors import IllConditionedError

JITTER_START = 1e-8
JITTER_CEIL = 1e-4


def default_theta(mesh: TargetMesh, adjacent_corr: float = 0.95) -> float:
    """Length scale giving the requested correlation between the closest
    pair of adjacent mesh points."""
    dt = float(np.min(np.diff(mesh.values)))
    return dt / math.sqrt(2.0 * math.log(1.0 / adjacent_corr))


def default_tau2(n_trees: int, k: float = 2.0) -> float:
    """Leaf-scale variance so the n_trees-tree sum has prior SD 0.5/k on
    the standardized response scale."""
    return (0.5 / (k * math.sqrt(n_trees))) ** 2


@dataclass(frozen=True)
class GPConfig:
    theta: float
    tau2: float
    mesh: TargetMesh

    def __post_init__(self):
        if self.theta <= 0 or self.tau2 <= 0:
            raise ValueError("theta and tau2 must be positive")


def kernel_matrix(cfg: GPConfig) -> np.ndarray:
    """tau2 * exp(-dt^2 / (2 theta^2)) plus the smallest diagonal jitter
    (escalated from 1e-8*tau2 to 1e-4*tau2) that makes Cholesky succeed."""
    t = cfg.mesh.values
    d2 = (t[:, None] - t[None, :]) ** 2
    base = cfg.tau2 * np.exp(-d2 / (2.0 * cfg.theta**2))
    jitter = JITTER_START * cfg.tau2
    while jitter <= JITTER_CEIL * cfg.tau2 * (1 + 1e-12):
        K = base + jitter * np.eye(len(t))
        try:
            cholesky(K, lower=True)
            return K
        except np.linalg.LinAlgError:
            jitter *= 10.0
        except Exception:
            jitter *= 10.0
    raise IllConditionedError(
        f"kernel not positive definite after jitter escalation (theta={cfg.theta})"
    )


class KernelCache:
    """Precomputed factorizations of one kernel matrix, shared read-only."""

    def __init__(self, cfg: GPConfig):
        self.cfg = cfg
        self.K = kernel_matrix(cfg)
        self.chol = cholesky(self.K, lower=True)
        inv_chol = solve_triangular(self.chol, np.eye(len(self.K)), lower=True)
        self.inv = inv_chol.T @ inv_chol
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(self.chol))))
        self.T = len(self.K)


def _as_cache(gp) -> KernelCache:
    return gp if isinstance(gp, KernelCache) else KernelCache(gp)


def sample_prior_leaf(gp, rng: np.random.Generator) -> np.ndarray:
    """One draw of a leaf function from GP(0, K)."""
    cache = _as_cache(gp)
    return cache.chol @ rng.standard_normal(cache.T)


def conjugate_leaf_posterior(gp, counts, sums, sigma2: float):
    """Posterior of a leaf function given per-mesh-point residual sufficient
    statistics. Returns (mean, lower Cholesky factor of the covariance)."""
    cache = _as_cache(gp)
    counts = np.asarray(counts, dtype=float)
    sums = np.asarray(sums, dtype=float)
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    M = cache.inv + np.diag(counts / sigma2)
    try:
        L = cholesky(M, lower=True)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedError("singular leaf-posterior system") from exc
    mean = cho_solve((L, True), sums / sigma2)
    inv_l = solve_triangular(L, np.eye(cache.T), lower=True)
    cov = inv_l.T @ inv_l
    try:
        chol_cov = cholesky(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedError("singular leaf-posterior covariance") from exc
    return mean, chol_cov


def leaf_marginal_loglik(gp, counts, sums, sum_sq: float, sigma2: float) -> float:
    """log integral of N(r | B mu, sigma2 I) N(mu | 0, K) d mu, through the
    T x T mesh system (Woodbury identity)."""
    cache = _as_cache(gp)
    counts = np.asarray(counts, dtype=float)
    n = float(counts.sum())
    if n == 0:
        return 0.0
    sums = np.asarray(sums, dtype=float)
    M = cache.inv + np.diag(counts / sigma2)
    try:
        L = cholesky(M, lower=True)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedError("singular leaf-marginal system") from exc
    logdet_m = 2.0 * float(np.sum(np.log(np.diag(L))))
    z = solve_triangular(L, sums, lower=True)
    quad = float(z @ z)
    return (
        -0.5 * n * math.log(2.0 * math.pi * sigma2)
        - 0.5 * (cache.logdet + logdet_m)
        - 0.5 * sum_sq / sigma2
        + 0.5 * quad / sigma2**2
    )
