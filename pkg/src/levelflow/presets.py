"""Builtin initial data, the pinned reproduction setups, and the canned
cross-solver comparison configurations.

Grid conventions matter here: the 1D reference example needs the points
-1, 1, 3 to be exact cell centers (its closed level-1 sublevel is an interval
plus an isolated point, and a center-miss would erase the point entirely),
which integer domains with dyadic spacing guarantee.
"""

from __future__ import annotations

import numpy as np

from .analysis import paper1d_u0
from .dynamics import VelocitySpec, affine_clamped, shifted
from .grids import Grid, ScalarField
from .measure import DensityField, cauchy2d, lebesgue


def grid_1d(lo: float, hi: float, dx: float) -> Grid:
    n = int(round((hi - lo) / dx)) + 1
    return Grid(dim=1, origin=(lo,), dx=dx, shape=(n,))


def grid_2d(lo: float, hi: float, dx: float) -> Grid:
    n = int(round((hi - lo) / dx)) + 1
    return Grid(dim=2, origin=(lo, lo), dx=dx, shape=(n, n))


def level_grid(lo: float, hi: float, count: int) -> np.ndarray:
    """Half-open level lattice lo + k (hi-lo)/count, k = 0..count-1."""
    return lo + (hi - lo) / count * np.arange(count)


def make_paper1d(dx: float = 1.0 / 512) -> dict:
    """The partial-fattening example: u0 = min(|x+1|+1, |x-2|) with Lebesgue
    measure and F(q) = q - 1; h_bar = 1/2, fattening at level 1."""
    grid = grid_1d(-6.0, 6.0, dx)
    u0 = ScalarField(grid, paper1d_u0(grid.axis_coords(0)))
    return {
        "u0": u0,
        "density": lebesgue(grid),
        "velocity": affine_clamped(1.0, -1.0, 0.0, 10.0),
        "levels": level_grid(0.0, 2.0, 64),
        "threshold_tol": max(2 * dx, 1e-4),
    }


def make_radial(dx: float = 1.0 / 128, extent: float = 3.0) -> dict:
    """The radial decay example: u0 = |x| on [-extent, extent]^2 with the
    cauchy2d density and F(q) = q - 1 on [0, 2]; h_bar = 1 and the decay
    exponent is 1/2."""
    grid = grid_2d(-extent, extent, dx)
    u0 = ScalarField(grid, grid.radius())
    return {
        "u0": u0,
        "density": cauchy2d(grid),
        "velocity": affine_clamped(1.0, -1.0, 0.0, 2.0),
        "levels": level_grid(0.05, 2.65, 112),
        "threshold_tol": max(2 * dx, 1e-4),
    }


def make_cone1d(dx: float = 1.0 / 256, c: float = 1.0) -> dict:
    """1D cone with the q-independent law f = r - c: delta(t, h) = (h-c) t
    exactly, and u(x, t) = (|x| + c t)/(1 + t) in closed form."""
    grid = grid_1d(-4.0, 4.0, dx)
    u0 = ScalarField(grid, np.abs(grid.axis_coords(0)))
    return {
        "u0": u0,
        "density": lebesgue(grid),
        "velocity": shifted(c, (0.0, 4.0)),
        "levels": level_grid(0.1, 2.4, 64),
        "threshold_tol": max(2 * dx, 1e-4),
    }


def cone1d_exact(x, t: float, c: float = 1.0):
    """Closed-form solution of the cone configuration: the h-sublevel set is
    {|x| < h + (h-c)t}, so u(x,t) solves |x| = h + (h-c)t."""
    return (np.abs(np.asarray(x, dtype=float)) + c * t) / (1.0 + t)


def make_quasiconvex_random(seed: int, dim: int = 2, dx: float = 1.0 / 64,
                            n_planes: int = 8, q_target: float = 0.5) -> dict:
    """Random coercive quasiconvex u0 as a max of affine functions with
    outward slopes, paired with f = q - c placing the threshold mid-range."""
    rng = np.random.default_rng(seed)
    if dim == 1:
        grid = grid_1d(-3.0, 3.0, dx)
        mesh = grid.meshgrid()
    else:
        grid = grid_2d(-3.0, 3.0, dx)
        mesh = grid.meshgrid()
    angles = np.linspace(0, 2 * np.pi, n_planes, endpoint=False)
    angles = angles + rng.uniform(0, 2 * np.pi / n_planes, n_planes)
    slopes = rng.uniform(0.7, 1.3, n_planes)
    offsets = rng.uniform(-0.4, 0.2, n_planes)
    planes = []
    for ang, m, b in zip(angles, slopes, offsets):
        if dim == 1:
            d = np.sign(np.cos(ang)) or 1.0
            planes.append(m * d * mesh[0] + b)
        else:
            planes.append(m * (np.cos(ang) * mesh[0] + np.sin(ang) * mesh[1]) + b)
    u0 = ScalarField(grid, np.maximum.reduce(planes))
    density = lebesgue(grid)
    values = np.sort(u0.values.ravel())
    h_mid = values[int(0.35 * len(values))]
    mass_mid = float((u0.values < h_mid).sum()) * grid.cell_volume
    vel = affine_clamped(1.0, -mass_mid, 0.0, density.total_mass * 2)
    return {
        "u0": u0,
        "density": density,
        "velocity": vel,
        "levels": None,
        "threshold_tol": max(2 * dx, 1e-4),
    }


PRESETS = {
    "paper1d": make_paper1d,
    "radial": make_radial,
    "cone": make_cone1d,
}


# canned cross-solver comparison configurations (criterion: representation vs
# FD sup-norm gap, with a refinement study)
COMPARISON_CONFIGS = {
    "cmp-paper1d": {"preset": "paper1d", "dim": 1, "horizon": 0.1,
                    "base_dx": 1.0 / 256, "fine_dx": 1.0 / 512},
    "cmp-cone1d": {"preset": "cone", "dim": 1, "horizon": 0.4,
                   "base_dx": 1.0 / 256, "fine_dx": 1.0 / 512},
    "cmp-radial": {"preset": "radial", "dim": 2, "horizon": 0.5,
                   "base_dx": 1.0 / 256, "coarse_dx": 1.0 / 128},
}
