"""Individualized posterior predictive densities over a 2-D grid.

Two prediction modes share one machinery:

* marginal ("new subject"): condition on baselines only, mix classes by
  the posterior weights pi of each draw;
* conditional ("observed history"): form the joint compound-symmetry law
  of (history, future) per class and divide by the history's marginal.

For region construction only one future visit is supported: conditional on
(draw, class), the pair (x*, y*) then factors into two independent
univariate normals, so cell probabilities are exact CDF differences rather
than density-times-area approximations.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, ndtr

from ._kernels import cell_masses
from .likelihood import cs_mvn_logdensity_many
from .sampler import DrawStore

__all__ = [
    "PredictionRequest",
    "GridSpec",
    "CellField",
    "case1_log_joint",
    "case2_log_conditional",
    "cell_field",
    "region_probability",
    "write_cellfield_csv",
    "read_cellfield_csv",
]


@dataclass(frozen=True)
class PredictionRequest:
    baseline_x: float
    baseline_y: float
    history_x: tuple[tuple[float, float], ...]
    history_y: tuple[tuple[float, float], ...]
    future_times: tuple[float, ...]
    site: int | None = None   # accepted but unused: predictions marginalize sites

    def __post_init__(self) -> None:
        if not self.future_times:
            raise ValueError("future_times must be nonempty")
        ft = self.future_times
        if any(b <= a for a, b in zip(ft, ft[1:])):
            raise ValueError("future_times must be strictly increasing")
        last_hist = max((t for t, _ in self.history_x + self.history_y),
                        default=-np.inf)
        if ft[0] <= last_hist:
            raise ValueError("future_times must all lie after the history")

    @property
    def has_history(self) -> bool:
        return bool(self.history_x or self.history_y)


@dataclass(frozen=True)
class GridSpec:
    """Cell boundaries per axis; cells are left-open, right-closed."""

    x_edges: tuple[float, ...]
    y_edges: tuple[float, ...]

    def __post_init__(self) -> None:
        for name, edges in (("x_edges", self.x_edges), ("y_edges", self.y_edges)):
            if len(edges) < 2:
                raise ValueError(f"{name} needs at least 2 edges")
            if any(b <= a for a, b in zip(edges, edges[1:])):
                raise ValueError(f"{name} must be strictly increasing")

    @classmethod
    def from_widths(cls, x_lo: float, x_hi: float, x_width: float,
                    y_lo: float, y_hi: float, y_width: float) -> "GridSpec":
        def edges(lo, hi, width):
            n = int(round((hi - lo) / width))
            if n < 1 or abs(lo + n * width - hi) > 1e-9:
                raise ValueError("width must evenly divide the axis range")
            return tuple(lo + i * width for i in range(n + 1))
        return cls(x_edges=edges(x_lo, x_hi, x_width),
                   y_edges=edges(y_lo, y_hi, y_width))

    @property
    def n_x_cells(self) -> int:
        return len(self.x_edges) - 1

    @property
    def n_y_cells(self) -> int:
        return len(self.y_edges) - 1

    def locate(self, x: float, y: float) -> tuple[int, int] | None:
        """Cell index of (x, y) under the (lo, hi] convention, or None."""
        xe = np.asarray(self.x_edges)
        ye = np.asarray(self.y_edges)
        if not (xe[0] < x <= xe[-1]) or not (ye[0] < y <= ye[-1]):
            return None
        i = int(np.searchsorted(xe, x, side="left")) - 1
        j = int(np.searchsorted(ye, y, side="left")) - 1
        return i, j


@dataclass(frozen=True)
class CellField:
    """Posterior predictive mass per grid cell plus the off-grid tail."""

    grid: GridSpec
    mass: np.ndarray
    outside_mass: float

    def __post_init__(self) -> None:
        if self.mass.shape != (self.grid.n_x_cells, self.grid.n_y_cells):
            raise ValueError("mass shape does not match the grid")
        if not (np.all(np.isfinite(self.mass)) and np.isfinite(self.outside_mass)):
            raise ValueError("non-finite cell mass")
        if np.any(self.mass < 0) or self.outside_mass < -1e-12:
            raise ValueError("negative cell mass")
        total = float(self.mass.sum()) + self.outside_mass
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"total mass {total} deviates from 1 by > 1e-6")


def _endpoint_logf(stacked: dict, name: str, baseline: float,
                   times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """(Q, C) CS-MVN log density of one endpoint's value vector per (draw, class)."""
    t = np.asarray(times, dtype=np.float64)
    vals = np.asarray(values, dtype=np.float64)
    beta0 = stacked[f"beta0_{name}"]
    beta1 = stacked[f"beta1_{name}"]
    beta2 = stacked[f"beta2_{name}"]
    b0b = stacked[f"beta0_base_{name}"][:, None]
    Q, C = beta0.shape
    mean = (beta0[:, :, None] + (b0b * baseline)[:, :, None]
            + beta1[:, :, None] * t + beta2[:, :, None] * (t * t))
    diffs = (vals - mean).reshape(Q * C, t.size)
    sigma2, rho = _cs_arrays(stacked, name)
    return cs_mvn_logdensity_many(diffs, sigma2.ravel(), rho.ravel()).reshape(Q, C)


def _cs_arrays(stacked: dict, name: str) -> tuple[np.ndarray, np.ndarray]:
    """(Q, C) total variance and intra-subject correlation per (draw, class)."""
    var_s = 1.0 / stacked[f"tau_s_{name}"]
    var_w = 1.0 / stacked[f"tau_w_{name}"][:, None]
    var_e = 1.0 / stacked[f"tau_e_{name}"][:, None]
    sigma2 = var_s + var_w + var_e
    # floor 1 - rho away from zero: a draw can put a near-zero precision on
    # an (empty) class, and rho rounding to exactly 1 would zero the
    # conditional variance and poison the whole draw with NaNs
    rho = np.minimum((var_s + var_w) / sigma2, 1.0 - 1e-12)
    return sigma2, rho


def _split(series: tuple[tuple[float, float], ...]) -> tuple[np.ndarray, np.ndarray]:
    if not series:
        return np.empty(0), np.empty(0)
    t, v = zip(*series)
    return np.asarray(t, dtype=np.float64), np.asarray(v, dtype=np.float64)


def case1_log_joint(req: PredictionRequest, candidate_x: np.ndarray,
                    candidate_y: np.ndarray, store: DrawStore) -> float:
    """Log marginal predictive density of future values given baseline only.

    Averages the class mixture f(x* | c) f(y* | c) pi_c over the draws.
    """
    if req.has_history:
        raise ValueError("case1 requires an empty history (use case2)")
    if store.n_draws == 0:
        raise ValueError("empty draw store")
    t = np.asarray(req.future_times)
    cx = np.asarray(candidate_x, dtype=np.float64)
    cy = np.asarray(candidate_y, dtype=np.float64)
    if cx.shape != t.shape or cy.shape != t.shape:
        raise ValueError("candidate vectors must match future_times")
    S = store.stacked()
    terms = (np.log(S["pi"])
             + _endpoint_logf(S, "x", req.baseline_x, t, cx)
             + _endpoint_logf(S, "y", req.baseline_y, t, cy))
    return float(logsumexp(terms) - np.log(store.n_draws))


def case2_log_conditional(req: PredictionRequest, candidate_x: np.ndarray,
                          candidate_y: np.ndarray, store: DrawStore) -> float:
    """Log predictive density of future values given the observed history.

    Per draw, the joint (history, future) class mixture is divided by the
    history's mixture; the ratios are then averaged over draws.  All
    accumulation is done with log-sum-exp.
    """
    if not req.has_history:
        raise ValueError("case2 requires a nonempty history (use case1)")
    if store.n_draws == 0:
        raise ValueError("empty draw store")
    t = np.asarray(req.future_times)
    cx = np.asarray(candidate_x, dtype=np.float64)
    cy = np.asarray(candidate_y, dtype=np.float64)
    if cx.shape != t.shape or cy.shape != t.shape:
        raise ValueError("candidate vectors must match future_times")
    S = store.stacked()
    log_pi = np.log(S["pi"])

    hx_t, hx_v = _split(req.history_x)
    hy_t, hy_v = _split(req.history_y)
    num = log_pi.copy()
    den = log_pi.copy()
    for name, ht, hv, cand, baseline in (("x", hx_t, hx_v, cx, req.baseline_x),
                                         ("y", hy_t, hy_v, cy, req.baseline_y)):
        joint_t = np.concatenate([ht, t])
        joint_v = np.concatenate([hv, cand])
        num += _endpoint_logf(S, name, baseline, joint_t, joint_v)
        if ht.size:
            den += _endpoint_logf(S, name, baseline, ht, hv)
    num_q = logsumexp(num, axis=1)
    den_q = logsumexp(den, axis=1)
    return float(logsumexp(num_q - den_q) - np.log(store.n_draws))


def _responsibilities(req: PredictionRequest, S: dict) -> np.ndarray:
    """(Q, C) per-draw posterior class weights, each row summing to 1."""
    logw = np.log(S["pi"]).copy()
    for name, series, baseline in (("x", req.history_x, req.baseline_x),
                                   ("y", req.history_y, req.baseline_y)):
        ht, hv = _split(series)
        if ht.size:
            logw += _endpoint_logf(S, name, baseline, ht, hv)
    logw -= logsumexp(logw, axis=1, keepdims=True)
    return np.exp(logw)


def _conditional_normal(req: PredictionRequest, S: dict, name: str,
                        t_star: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-(draw, class) mean and sd of the future value given the history.

    Conditioning a compound-symmetry MVN on m observed coordinates shifts
    the mean by rho * sum(residuals) / (1 - rho + m rho) and scales the
    variance by (1 - m rho^2 / (1 - rho + m rho)).
    """
    series = req.history_x if name == "x" else req.history_y
    baseline = req.baseline_x if name == "x" else req.baseline_y
    beta0 = S[f"beta0_{name}"]
    beta1 = S[f"beta1_{name}"]
    beta2 = S[f"beta2_{name}"]
    b0b = S[f"beta0_base_{name}"][:, None]
    sigma2, rho = _cs_arrays(S, name)
    mu_fut = beta0 + b0b * baseline + beta1 * t_star + beta2 * t_star ** 2
    ht, hv = _split(series)
    m = ht.size
    if m == 0:
        return mu_fut, np.sqrt(sigma2)
    mu_hist = (beta0[:, :, None] + (b0b * baseline)[:, :, None]
               + beta1[:, :, None] * ht + beta2[:, :, None] * (ht * ht))
    resid_sum = (hv - mu_hist).sum(axis=2)
    denom = 1.0 - rho + m * rho
    mean = mu_fut + rho * resid_sum / denom
    var = sigma2 * (1.0 - m * rho * rho / denom)
    return mean, np.sqrt(var)


def cell_field(req: PredictionRequest, grid: GridSpec,
               store: DrawStore) -> CellField:
    """Exact posterior predictive mass of every grid cell for one future visit."""
    if len(req.future_times) != 1:
        raise ValueError("cell fields support exactly one future time")
    if store.n_draws == 0:
        raise ValueError("empty draw store")
    S = store.stacked()
    t_star = req.future_times[0]
    weights = _responsibilities(req, S) / store.n_draws
    mx, sx = _conditional_normal(req, S, "x", t_star)
    my, sy = _conditional_normal(req, S, "y", t_star)
    mass = cell_masses(weights.ravel(), mx.ravel(), sx.ravel(),
                       my.ravel(), sy.ravel(),
                       np.asarray(grid.x_edges), np.asarray(grid.y_edges))
    mass = np.maximum(mass, 0.0)
    outside = max(0.0, 1.0 - float(mass.sum()))
    return CellField(grid=grid, mass=mass, outside_mass=outside)


def region_probability(req: PredictionRequest,
                       rectangle: tuple[float, float, float, float],
                       store: DrawStore) -> float:
    """Posterior predictive probability of the future pair falling in a box."""
    if len(req.future_times) != 1:
        raise ValueError("region probabilities support exactly one future time")
    x_lo, x_hi, y_lo, y_hi = rectangle
    if not (x_lo < x_hi and y_lo < y_hi):
        raise ValueError("degenerate rectangle")
    S = store.stacked()
    t_star = req.future_times[0]
    weights = _responsibilities(req, S) / store.n_draws
    mx, sx = _conditional_normal(req, S, "x", t_star)
    my, sy = _conditional_normal(req, S, "y", t_star)
    px = ndtr((x_hi - mx) / sx) - ndtr((x_lo - mx) / sx)
    py = ndtr((y_hi - my) / sy) - ndtr((y_lo - my) / sy)
    return float(np.sum(weights * px * py))


def write_cellfield_csv(field: CellField, sink: io.TextIOBase) -> None:
    """Rows ``x_lo,x_hi,y_lo,y_hi,mass`` plus a trailing outside-mass row."""
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["x_lo", "x_hi", "y_lo", "y_hi", "mass"])
    xe, ye = field.grid.x_edges, field.grid.y_edges
    for i in range(field.grid.n_x_cells):
        for j in range(field.grid.n_y_cells):
            writer.writerow([repr(xe[i]), repr(xe[i + 1]),
                             repr(ye[j]), repr(ye[j + 1]),
                             repr(float(field.mass[i, j]))])
    writer.writerow(["outside", "", "", "", repr(field.outside_mass)])


def read_cellfield_csv(source: io.TextIOBase | str) -> CellField:
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.reader(source)
    header = next(reader)
    if header != ["x_lo", "x_hi", "y_lo", "y_hi", "mass"]:
        raise ValueError(f"bad cell-field header {header!r}")
    cells: dict[tuple[float, float], float] = {}
    x_edges: set[float] = set()
    y_edges: set[float] = set()
    outside = None
    for row in reader:
        if row[0] == "outside":
            outside = float(row[4])
            continue
        x_lo, x_hi, y_lo, y_hi, mass = (float(f) for f in row)
        x_edges.update((x_lo, x_hi))
        y_edges.update((y_lo, y_hi))
        cells[(x_lo, y_lo)] = mass
    if outside is None:
        raise ValueError("missing outside-mass row")
    grid = GridSpec(x_edges=tuple(sorted(x_edges)),
                    y_edges=tuple(sorted(y_edges)))
    mass = np.zeros((grid.n_x_cells, grid.n_y_cells))
    for i in range(grid.n_x_cells):
        for j in range(grid.n_y_cells):
            mass[i, j] = cells[(grid.x_edges[i], grid.y_edges[j])]
    return CellField(grid=grid, mass=mass, outside_mass=outside)
