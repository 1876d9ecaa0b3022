"""Compound-symmetry multivariate-normal density kernels and mean curves.

A compound-symmetry (CS) covariance has constant diagonal and constant
off-diagonal; it arises here from additive site, subject, and residual
effects.  Its eigenstructure has exactly two eigenvalues, so the density of
an n-vector reduces to n univariate normal densities after rotating by any
orthonormal basis whose first column is proportional to the all-ones vector.
The basis depends only on n, never on the correlation, so it is precomputed
and cached.

All densities are returned on the log scale; downstream mixture arithmetic
is done with log-sum-exp.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

from ._kernels import cs_logpdf_many

__all__ = [
    "CsParams",
    "cs_params",
    "helmert_basis",
    "cs_mvn_logdensity",
    "class_mean",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class CsParams:
    """Total variance, intra-subject correlation, and dimension of a CS law."""

    sigma2_tilde: float
    rho: float
    n: int

    def __post_init__(self) -> None:
        if self.sigma2_tilde <= 0:
            raise ValueError("sigma2_tilde must be > 0")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must be in [0, 1)")
        if self.n < 1:
            raise ValueError("n must be >= 1")


def cs_params(tau_s: float, tau_w: float, tau_e: float, n: int) -> CsParams:
    """CS parameters implied by site/subject/residual precisions.

    Total variance is the sum of the three component variances; the shared
    off-diagonal covariance is the site + subject part.
    """
    if tau_s <= 0 or tau_w <= 0 or tau_e <= 0:
        raise ValueError("precisions must be > 0")
    sigma2 = 1.0 / tau_s + 1.0 / tau_w + 1.0 / tau_e
    # floor 1 - rho away from zero so a near-zero tau_s cannot collapse the
    # within-subject eigenvalue to exactly zero in floating point
    rho = min((1.0 / tau_s + 1.0 / tau_w) / sigma2, 1.0 - 1e-12)
    return CsParams(sigma2_tilde=sigma2, rho=rho, n=n)


_basis_cache: dict[int, np.ndarray] = {}
_basis_lock = threading.Lock()


def helmert_basis(n: int) -> np.ndarray:
    """Orthonormal n x n basis with first column 1/sqrt(n) * ones.

    Column k (k >= 2) is the normalized Helmert contrast
    (1, ..., 1, -(k-1), 0, ..., 0) / sqrt(k (k-1)).  Cached per n; the
    returned array is read-only.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    basis = _basis_cache.get(n)
    if basis is not None:
        return basis
    with _basis_lock:
        basis = _basis_cache.get(n)
        if basis is not None:
            return basis
        P = np.zeros((n, n))
        P[:, 0] = 1.0 / math.sqrt(n)
        for k in range(1, n):
            norm = math.sqrt(k * (k + 1))
            P[:k, k] = 1.0 / norm
            P[k, k] = -k / norm
        P.setflags(write=False)
        _basis_cache[n] = P
        return P


def cs_mvn_logdensity(obs: np.ndarray, mean: np.ndarray, cs: CsParams) -> float:
    """Log density of MVN(mean, sigma2 * [(1 - rho) I + rho 11^T]) at obs.

    Rotates the residual into the precomputed basis and sums univariate
    normal log densities: the first coordinate has variance
    ``sigma2 * (1 + (n-1) rho)``, the rest ``sigma2 * (1 - rho)``.
    """
    obs = np.asarray(obs, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    if obs.shape != (cs.n,) or mean.shape != (cs.n,):
        raise ValueError(f"obs/mean must have shape ({cs.n},)")
    n = cs.n
    u = helmert_basis(n).T @ (obs - mean)
    var1 = cs.sigma2_tilde * (1.0 + (n - 1) * cs.rho)
    var2 = cs.sigma2_tilde * (1.0 - cs.rho)
    out = -0.5 * (_LOG_2PI + math.log(var1) + u[0] ** 2 / var1)
    if n > 1:
        out -= 0.5 * ((n - 1) * (_LOG_2PI + math.log(var2))
                      + float(u[1:] @ u[1:]) / var2)
    return out


def cs_mvn_logdensity_many(diffs: np.ndarray,
                           sigma2: np.ndarray,
                           rho: np.ndarray) -> np.ndarray:
    """Batched CS log density for residual rows ``diffs`` (m, n).

    Thin wrapper over the selected kernel backend; equivalent to calling
    :func:`cs_mvn_logdensity` row by row.
    """
    return cs_logpdf_many(diffs, sigma2, rho)


def class_mean(times: np.ndarray, baseline: float,
               beta0: float, beta1: float, beta2: float,
               beta0_base: float) -> np.ndarray:
    """Quadratic class mean curve evaluated at the given times."""
    t = np.asarray(times, dtype=np.float64)
    return beta0 + beta0_base * baseline + beta1 * t + beta2 * t * t
