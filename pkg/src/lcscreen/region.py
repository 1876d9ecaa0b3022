"""Credible-region construction on a cell field, plus membership tests.

Two constructions are provided:

* highest-density: take cells in descending mass order until the target is
  exceeded (regions may be disconnected);
* branching out: grow a 4-connected region from the modal cell — a quick
  phase that absorbs whole neighbor rings (with swaps against high-mass
  outer cells), a slow phase that adds one cell at a time, and a final
  boundary-trimming pass.

Tie-breaking is lexicographic (row, col) after mass everywhere, so results
are deterministic.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .predictive import CellField, GridSpec

__all__ = [
    "CredibleRegion",
    "GridTooSmallError",
    "hdr_region",
    "branch_region",
    "hdr_cells",
    "branch_cells",
    "contains",
    "write_region_csv",
]

Cell = tuple[int, int]


@dataclass(frozen=True)
class CredibleRegion:
    cells: frozenset[Cell]
    p_sum: float
    target: float
    algorithm: str            # "hdr" or "branch"
    grid: GridSpec


class GridTooSmallError(ValueError):
    """On-grid mass cannot reach the target; the grid needs widening."""


def _check_target(mass: np.ndarray, target: float) -> None:
    if not 0.0 < target < 1.0:
        raise ValueError("target must be in (0, 1)")
    if float(mass.sum()) <= target:
        raise GridTooSmallError(
            f"grid too small: on-grid mass {float(mass.sum()):.6f} <= target {target}")


def hdr_cells(mass: np.ndarray, target: float) -> tuple[set[Cell], float]:
    """Descending-mass prefix with the first cumulative sum above target."""
    _check_target(mass, target)
    nx, ny = mass.shape
    order = sorted(((i, j) for i in range(nx) for j in range(ny)),
                   key=lambda c: (-mass[c], c))
    selected: set[Cell] = set()
    p_sum = 0.0
    for cell in order:
        selected.add(cell)
        p_sum += float(mass[cell])
        if p_sum > target:
            return selected, p_sum
    # the upfront total passed only by a rounding hair; same condition
    raise GridTooSmallError(
        f"grid too small: on-grid mass {p_sum:.6f} <= target {target}")


def hdr_region(field: CellField, target: float) -> CredibleRegion:
    cells, p_sum = hdr_cells(field.mass, target)
    return CredibleRegion(cells=frozenset(cells), p_sum=p_sum, target=target,
                          algorithm="hdr", grid=field.grid)


def _neighbors(cell: Cell, nx: int, ny: int) -> list[Cell]:
    i, j = cell
    out = []
    if i > 0:
        out.append((i - 1, j))
    if i < nx - 1:
        out.append((i + 1, j))
    if j > 0:
        out.append((i, j - 1))
    if j < ny - 1:
        out.append((i, j + 1))
    return out


def _ring(cells: set[Cell], exclude: set[Cell], nx: int, ny: int) -> set[Cell]:
    out: set[Cell] = set()
    for cell in cells:
        out.update(_neighbors(cell, nx, ny))
    return out - exclude


def _boundary(selected: set[Cell], nx: int, ny: int) -> set[Cell]:
    """Members with at least one in-grid 4-neighbor outside the region."""
    return {c for c in selected
            if any(nb not in selected for nb in _neighbors(c, nx, ny))}


def _asc(cells: set[Cell], mass: np.ndarray) -> list[Cell]:
    return sorted(cells, key=lambda c: (mass[c], c))


def _desc(cells: set[Cell], mass: np.ndarray) -> list[Cell]:
    return sorted(cells, key=lambda c: (-mass[c], c))


def _swap_count(asc_cells: list[Cell], mass: np.ndarray, best_mass: float) -> int:
    """Largest r such that the r smallest cells together weigh less than best_mass."""
    cum = 0.0
    r = 0
    for cell in asc_cells:
        cum += float(mass[cell])
        if best_mass > cum:
            r += 1
        else:
            break
    return r


def branch_cells(mass: np.ndarray, target: float,
                 c_quick: float) -> tuple[set[Cell], float]:
    """Connected growth from the modal cell with swap and trim steps."""
    _check_target(mass, target)
    if not 0.0 < c_quick < target:
        raise ValueError("require 0 < c_quick < target")
    nx, ny = mass.shape
    n_cells = nx * ny

    start = min(((i, j) for i in range(nx) for j in range(ny)),
                key=lambda c: (-mass[c], c))
    selected: set[Cell] = {start}
    removed: set[Cell] = set()
    p_sum = float(mass[start])

    def add(cells) -> None:
        nonlocal p_sum
        for cell in cells:
            if cell not in selected:
                selected.add(cell)
                removed.discard(cell)
                p_sum += float(mass[cell])

    def drop(cells) -> None:
        nonlocal p_sum
        for cell in cells:
            if cell in selected:
                selected.discard(cell)
                p_sum -= float(mass[cell])
            removed.add(cell)

    # quick phase: absorb whole rings, two steps of lookahead
    for _ in range(n_cells):
        if p_sum > c_quick:
            break
        ring1 = _ring(selected, selected, nx, ny)
        if not ring1:
            break
        ring2 = _ring(ring1, selected | ring1, nx, ny)
        asc1 = _asc(ring1, mass)
        outer = _desc((ring2 | removed) - ring1, mass)
        r = _swap_count(asc1, mass, float(mass[outer[0]])) if outer else 0
        if r > 0:
            add(asc1[r:])
            add([outer[0]])
            drop(asc1[:r])
        else:
            add(asc1)
    else:
        raise RuntimeError("branch_region failed to reach c_quick (bug)")

    # slow phase: one-cell lookahead until the target is crossed
    for _ in range(2 * n_cells):
        if p_sum > target:
            break
        outer = _desc(_ring(selected, selected, nx, ny) | removed, mass)
        if not outer:
            raise GridTooSmallError(
                f"grid too small: on-grid mass {p_sum:.6f} <= target {target}")
        best = outer[0]
        asc1 = _asc(_boundary(selected, nx, ny) - {best}, mass)
        r = _swap_count(asc1, mass, float(mass[best]))
        r = min(r, len(selected) - 1)
        if r > 0:
            drop(asc1[:r])
        add([best])
    else:
        raise RuntimeError("branch_region failed to reach target (bug)")

    # tune: alternate mass-increasing boundary swaps with boundary trims
    # until neither applies.  A swap replaces the lightest boundary cell
    # with a heavier adjacent outside cell (same size, more mass); a trim
    # sheds a boundary cell whose mass fits inside the overshoot.  Each
    # step lowers (cell count, -mass) lexicographically, so this ends.
    for _ in range(2 * n_cells * n_cells):
        boundary = _asc(_boundary(selected, nx, ny), mass)
        if boundary and float(mass[boundary[0]]) <= p_sum - target \
                and len(selected) > 1:
            drop([boundary[0]])
            continue
        if boundary and len(selected) > 1:
            worst = boundary[0]
            rest = selected - {worst}
            ring = _ring(rest, selected, nx, ny)
            if ring:
                best = _desc(ring, mass)[0]
                if float(mass[best]) > float(mass[worst]):
                    drop([worst])
                    add([best])
                    continue
        break
    removed.clear()

    # recompute for exact bookkeeping
    p_sum = float(sum(mass[c] for c in sorted(selected)))
    return selected, p_sum


def branch_region(field: CellField, target: float,
                  c_quick: float | None = None) -> CredibleRegion:
    """Branching-out region; ``c_quick`` defaults to 0.9 * target."""
    if c_quick is None:
        c_quick = 0.9 * target
    cells, p_sum = branch_cells(field.mass, target, c_quick)
    return CredibleRegion(cells=frozenset(cells), p_sum=p_sum, target=target,
                          algorithm="branch", grid=field.grid)


def contains(region: CredibleRegion, x: float, y: float) -> str:
    """Membership verdict for a point: 'inside', 'outside', or 'off_grid'.

    Cells are left-open, right-closed on both axes, so a point on a shared
    edge belongs to the lower cell.
    """
    cell = region.grid.locate(x, y)
    if cell is None:
        return "off_grid"
    return "inside" if cell in region.cells else "outside"


def write_region_csv(region: CredibleRegion, field: CellField,
                     sink: io.TextIOBase) -> None:
    """All grid cells with a 0/1 selection flag, directly plottable."""
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["row", "col", "x_lo", "x_hi", "y_lo", "y_hi",
                     "mass", "selected"])
    xe, ye = region.grid.x_edges, region.grid.y_edges
    for i in range(region.grid.n_x_cells):
        for j in range(region.grid.n_y_cells):
            writer.writerow([i, j, repr(xe[i]), repr(xe[i + 1]),
                             repr(ye[j]), repr(ye[j + 1]),
                             repr(float(field.mass[i, j])),
                             1 if (i, j) in region.cells else 0])
