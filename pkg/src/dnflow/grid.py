"""Uniform box grids with cell values and face-based differences.

Cells cover the box ``(0, extent_1) x ... x (0, extent_d)`` uniformly; a
field holds one value per cell center.  Differences are taken across faces
with a zero ghost value one spacing outside each boundary face, so the
homogeneous Dirichlet condition is built into the operators.  Divergence is
the exact negative adjoint of the gradient under the cell inner product,
which the tests check to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "GridError",
    "Grid",
    "GridField",
    "FaceField",
    "discrete_gradient",
    "discrete_divergence",
    "norm",
    "inner",
    "integral",
    "positive_part_integral",
    "restrict_to",
    "first_eigenmode",
    "eigenmode_eigenvalue",
]


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered grid on a box, dimension 1 or 2."""

    cells: tuple
    extents: tuple

    def __post_init__(self):
        cells = tuple(int(c) for c in self.cells)
        extents = tuple(float(e) for e in self.extents)
        if len(cells) not in (1, 2) or len(extents) != len(cells):
            raise GridError("grid needs matching 1d or 2d cell and extent tuples")
        if any(c < 1 for c in cells):
            raise GridError("every axis needs at least one cell")
        if any(not e > 0.0 for e in extents):
            raise GridError("extents must be positive")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "extents", extents)

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def spacing(self) -> tuple:
        return tuple(e / c for e, c in zip(self.extents, self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    def centers(self, axis: int) -> np.ndarray:
        h = self.spacing[axis]
        return (np.arange(self.cells[axis]) + 0.5) * h

    def center_mesh(self) -> tuple:
        axes = [self.centers(a) for a in range(self.dim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def face_shape(self, axis: int) -> tuple:
        shape = list(self.cells)
        shape[axis] += 1
        return tuple(shape)

    def face_mesh(self, axis: int) -> tuple:
        """Coordinates of the face centers orthogonal to ``axis``."""
        coords = []
        for a in range(self.dim):
            h = self.spacing[a]
            if a == axis:
                coords.append(np.arange(self.cells[a] + 1) * h)
            else:
                coords.append((np.arange(self.cells[a]) + 0.5) * h)
        return tuple(np.meshgrid(*coords, indexing="ij"))

    def refined(self) -> "Grid":
        return Grid(tuple(2 * c for c in self.cells), self.extents)


@dataclass(frozen=True)
class GridField:
    """One value per cell; boundary values are implicitly zero."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.cells:
            raise GridError(
                f"field shape {vals.shape} does not match grid cells {self.grid.cells}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, grid: Grid) -> "GridField":
        return cls(grid, np.zeros(grid.cells))

    @classmethod
    def full(cls, grid: Grid, value: float) -> "GridField":
        return cls(grid, np.full(grid.cells, float(value)))

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable) -> "GridField":
        return cls(grid, np.asarray(fn(*grid.center_mesh()), dtype=float))

    def copy(self) -> "GridField":
        return GridField(self.grid, self.values.copy())

    def map(self, fn: Callable) -> "GridField":
        return GridField(self.grid, np.asarray(fn(self.values), dtype=float))

    def __add__(self, other):
        return GridField(self.grid, self.values + _values_of(other, self.grid))

    def __sub__(self, other):
        return GridField(self.grid, self.values - _values_of(other, self.grid))

    def __mul__(self, scalar):
        return GridField(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def linf(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


def _values_of(other, grid):
    if isinstance(other, GridField):
        # broadcasting across grids would silently mix resolutions
        if other.grid != grid:
            raise GridError("fields live on different grids")
        return other.values
    return other


@dataclass(frozen=True)
class FaceField:
    """One scalar per face (the normal component), grouped by axis."""

    grid: Grid
    normal: tuple

    def __post_init__(self):
        arrays = tuple(np.asarray(q, dtype=float) for q in self.normal)
        if len(arrays) != self.grid.dim:
            raise GridError("face field needs one array per axis")
        for a, q in enumerate(arrays):
            if q.shape != self.grid.face_shape(a):
                raise GridError(
                    f"axis {a} face array has shape {q.shape}, "
                    f"expected {self.grid.face_shape(a)}")
        object.__setattr__(self, "normal", arrays)


def _padded(u: GridField, axis: int) -> np.ndarray:
    pad = [(0, 0)] * u.grid.dim
    pad[axis] = (1, 1)
    return np.pad(u.values, pad)


def discrete_gradient(u: GridField) -> FaceField:
    """Forward difference across every face, zero ghost outside the boundary."""
    parts = []
    for a in range(u.grid.dim):
        h = u.grid.spacing[a]
        parts.append(np.diff(_padded(u, a), axis=a) / h)
    return FaceField(u.grid, tuple(parts))


def discrete_divergence(q: FaceField) -> GridField:
    """Face differences back to cells; exact negative adjoint of the gradient."""
    g = q.grid
    out = np.zeros(g.cells)
    for a in range(g.dim):
        out += np.diff(q.normal[a], axis=a) / g.spacing[a]
    return GridField(g, out)


def norm(u: GridField, which: str, order: float = None) -> float:
    """Discrete norms: ``lr`` (needs order), ``l1``, ``l2``, ``linf``, ``w1p`` seminorm."""
    vol = u.grid.cell_volume
    if which == "linf":
        return u.linf()
    if which == "l1":
        return float(np.sum(np.abs(u.values)) * vol)
    if which == "l2":
        return float(np.sqrt(np.sum(u.values ** 2) * vol))
    if which == "lr":
        if order is None or not order >= 1.0:
            raise GridError("lr norm needs an order >= 1")
        return float((np.sum(np.abs(u.values) ** order) * vol) ** (1.0 / order))
    if which == "w1p":
        if order is None or not order > 1.0:
            raise GridError("w1p seminorm needs an order > 1")
        grad = discrete_gradient(u)
        total = sum(float(np.sum(np.abs(qa) ** order)) for qa in grad.normal)
        return float((total * vol) ** (1.0 / order))
    raise GridError(f"unknown norm kind {which!r}")


def inner(u: GridField, v: GridField) -> float:
    return float(np.sum(u.values * v.values) * u.grid.cell_volume)


def integral(u: GridField) -> float:
    return float(np.sum(u.values) * u.grid.cell_volume)


def positive_part_integral(u: GridField) -> float:
    """Midpoint-rule integral of the positive part."""
    return float(np.sum(np.maximum(u.values, 0.0)) * u.grid.cell_volume)


def restrict_to(fine: GridField, coarse: Grid) -> GridField:
    """Cell averages onto a grid with half the resolution per axis."""
    fg = fine.grid
    if fg.extents != coarse.extents:
        raise GridError("restriction needs matching extents")
    if any(fc != 2 * cc for fc, cc in zip(fg.cells, coarse.cells)):
        raise GridError("restriction needs exactly one halving per axis")
    v = fine.values
    if fg.dim == 1:
        out = 0.5 * (v[0::2] + v[1::2])
    else:
        out = 0.25 * (v[0::2, 0::2] + v[1::2, 0::2] + v[0::2, 1::2] + v[1::2, 1::2])
    return GridField(coarse, out)


def first_eigenmode(grid: Grid) -> GridField:
    """First eigenvector of the ghost-zero difference Laplacian, sup norm 1.

    The ghost convention puts the zero value one spacing outside each
    boundary face, so the mode is the sine sampled at the interior virtual
    nodes, not at the physical cell centers.
    """
    axes = []
    for a in range(grid.dim):
        n = grid.cells[a]
        axes.append(np.sin(np.pi * (np.arange(n) + 1.0) / (n + 1.0)))
    if grid.dim == 1:
        vals = axes[0]
    else:
        vals = np.outer(axes[0], axes[1])
    return GridField(grid, vals / np.max(np.abs(vals)))


def eigenmode_eigenvalue(grid: Grid) -> float:
    """Eigenvalue of the first mode under the ghost-zero difference Laplacian."""
    lam = 0.0
    for a in range(grid.dim):
        n, h = grid.cells[a], grid.spacing[a]
        lam += (2.0 - 2.0 * np.cos(np.pi / (n + 1.0))) / h ** 2
    return float(lam)
