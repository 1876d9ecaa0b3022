"""Pure-NumPy implementations of the hot kernels.

Selected automatically when the compiled extension is unavailable (or when
``LCSCREEN_PURE_PYTHON=1``).  Must stay numerically interchangeable with
``_core.pyx``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

_LOG_2PI = float(np.log(2.0 * np.pi))


def cs_logpdf_many(diffs: np.ndarray, sigma2: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Log density of m compound-symmetry MVN residual vectors.

    ``diffs`` is (m, n); ``sigma2``/``rho`` are length-m (or broadcastable).
    Uses the two-eigenvalue structure of the CS matrix: the projection onto
    the all-ones direction has variance ``sigma2 * (1 + (n-1) rho)`` and the
    orthogonal complement ``sigma2 * (1 - rho)``.
    """
    diffs = np.asarray(diffs, dtype=np.float64)
    m, n = diffs.shape
    sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=np.float64), (m,))
    rho = np.broadcast_to(np.asarray(rho, dtype=np.float64), (m,))
    s = diffs.sum(axis=1)
    qq = np.einsum("ij,ij->i", diffs, diffs)
    var1 = sigma2 * (1.0 + (n - 1) * rho)
    var2 = sigma2 * (1.0 - rho)
    s2_over_n = s * s / n
    quad = s2_over_n / var1
    if n > 1:
        quad = quad + (qq - s2_over_n) / var2
    logdet = np.log(var1) + (n - 1) * np.log(var2)
    return -0.5 * (n * _LOG_2PI + logdet + quad)


def cell_masses(weights: np.ndarray,
                mean_x: np.ndarray, sd_x: np.ndarray,
                mean_y: np.ndarray, sd_y: np.ndarray,
                x_edges: np.ndarray, y_edges: np.ndarray) -> np.ndarray:
    """Weighted sum of per-component product-normal rectangle masses.

    Component k contributes ``weights[k] * dPhi_x[i] * dPhi_y[j]`` to cell
    (i, j), where ``dPhi`` are CDF increments across the cell edges.
    Returns an (n_x_cells, n_y_cells) array; the reduction runs in component
    order so results are reproducible bit-for-bit.
    """
    weights = np.asarray(weights, dtype=np.float64)
    zx = (x_edges[None, :] - np.asarray(mean_x)[:, None]) / np.asarray(sd_x)[:, None]
    zy = (y_edges[None, :] - np.asarray(mean_y)[:, None]) / np.asarray(sd_y)[:, None]
    dx = np.diff(ndtr(zx), axis=1)
    dy = np.diff(ndtr(zy), axis=1)
    return np.einsum("k,ki,kj->ij", weights, dx, dy)
