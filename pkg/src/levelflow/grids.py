"""Uniform Cartesian grids (1D/2D) and the fields living on them.

Cells are identified with their centers x_i = origin + i*dx per axis; a cell
represents the axis-aligned cube of side dx around its center, so cell volume
is dx**dim. Spacing is equal on all axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch

MAX_CELLS = 2**31  # addressable-memory guard, validated at construction


@dataclass(frozen=True)
class Grid:
    dim: int
    origin: tuple[float, ...]
    dx: float
    shape: tuple[int, ...]

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if len(self.origin) != self.dim or len(self.shape) != self.dim:
            raise ValueError("origin/shape length must match dim")
        if not self.dx > 0:
            raise ValueError("dx must be positive")
        if any(n < 2 for n in self.shape):
            raise ValueError("need at least 2 cells per axis")
        if int(np.prod(self.shape)) > MAX_CELLS:
            raise ValueError("grid exceeds the addressable cell budget")

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return self.dx**self.dim

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.dx * np.arange(self.shape[axis])

    def meshgrid(self) -> tuple[np.ndarray, ...]:
        axes = [self.axis_coords(a) for a in range(self.dim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def radius(self) -> np.ndarray:
        """Distance of every cell center from the coordinate origin."""
        mesh = self.meshgrid()
        return np.sqrt(sum(c * c for c in mesh))

    def boundary_ring(self) -> np.ndarray:
        """Boolean mask of the outermost cell layer."""
        return _boundary_ring(self.shape)


def _boundary_ring(shape: tuple[int, ...]) -> np.ndarray:
    ring = np.zeros(shape, dtype=bool)
    for a in range(len(shape)):
        sl = [slice(None)] * len(shape)
        sl[a] = 0
        ring[tuple(sl)] = True
        sl[a] = -1
        ring[tuple(sl)] = True
    return ring


@dataclass
class ScalarField:
    """A real-valued function sampled at cell centers."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.shape:
            raise GridMismatch("field shape does not match grid")


@dataclass
class BinarySet:
    """A grid set: one membership bit per cell center."""

    grid: Grid
    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.grid.shape:
            raise GridMismatch("mask shape does not match grid")

    @property
    def n_members(self) -> int:
        return int(self.mask.sum())

    def is_empty(self) -> bool:
        return not self.mask.any()

    def is_full(self) -> bool:
        return bool(self.mask.all())


@dataclass
class SignedDistanceField:
    """Exact center-to-center signed distance to a BinarySet.

    Negative strictly inside, positive strictly outside. |values| >= dx away
    from sentinel cases because distinct cell centers are at least dx apart.
    """

    grid: Grid
    values: np.ndarray
    source: str = ""
    empty: bool = False
    full: bool = False

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise GridMismatch("sdf shape does not match grid")

    @property
    def sentinel(self) -> bool:
        return self.empty or self.full


def same_grid(a: Grid, b: Grid) -> None:
    if a != b:
        raise GridMismatch("operands live on different grids")
