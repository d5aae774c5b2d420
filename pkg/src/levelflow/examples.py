"""Pinned reproduction runs with their pass/fail assertions.

These back both the `levelflow example ...` subcommand and the acceptance
test suite; every tolerance is fixed here, nothing is calibrated later.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .analysis import (asymptotics, build_kruskal_set, oracle_partial_fattening,
                       oracle_radial_decay)
from .delta import LevelSetSystem, build_delta_table
from .dynamics import find_threshold
from .fdsolver import fd_run
from .geometry import isocontour_length, signed_distance, sublevel_sets
from .grids import Grid, ScalarField
from .presets import (COMPARISON_CONFIGS, cone1d_exact, level_grid, make_cone1d,
                      make_paper1d, make_radial)
from .reconstruct import reconstruct_u


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


@dataclass
class ExampleResult:
    name: str
    checks: list
    elapsed: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self):
        out = []
        for c in self.checks:
            out.append(f"[{'PASS' if c.passed else 'FAIL'}] {self.name}: "
                       f"{c.name} ({c.detail})")
        out.append(f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: "
                   f"total, {self.elapsed:.1f}s")
        return out


def _band_check(snapshot, system, k1, d1, e1, erode):
    """Cells deeper than `erode` inside the predicted fattening band at level
    levels[k1] must carry exactly that level."""
    sd_d = system.sd_values("D", k1)
    sd_e = system.sd_values("E", k1)
    band = (sd_e <= e1 - erode) & (sd_d >= d1 + erode)
    if not band.any():
        return 0, 0.0
    h1 = float(system.levels[k1])
    err_d = float(np.abs(snapshot.u_d.values[band] - h1).max())
    err_e = float(np.abs(snapshot.u_e.values[band] - h1).max())
    return int(band.sum()), max(err_d, err_e)


def example_paper1d(dx: float = 1.0 / 512, tol: float = 1e-3) -> ExampleResult:
    """Partial-fattening reproduction: delta branches at level 1 against the
    closed forms (e^{2t}-1)/2 and (e^{4t}-1)/4, and exact level-1 plateau on
    the fattening band."""
    t0 = time.perf_counter()
    setup = make_paper1d(dx)
    u0, density, vel = setup["u0"], setup["density"], setup["velocity"]
    snapshot_times = [0.05, 0.1, 0.15]
    horizon = 0.15
    thr = find_threshold(u0, density, vel, setup["threshold_tol"])
    system = LevelSetSystem(u0, density, setup["levels"], thr.h_bar)
    tgrid = np.unique(np.concatenate([np.linspace(0, horizon, 97),
                                      snapshot_times]))
    table = build_delta_table(system, vel, tgrid)
    checks = [Check("h_bar = 1/2", abs(thr.h_bar - 0.5) <= 2 * dx,
                    f"h_bar={thr.h_bar:.6f}")]
    k1 = system.level_index(1.0)
    worst_d = worst_e = 0.0
    band_errs = []
    for t in snapshot_times:
        ref = oracle_partial_fattening(t, 1.0)
        d_num = table.delta_at("D", 1.0, t)
        e_num = table.delta_at("E", 1.0, t)
        worst_d = max(worst_d, abs(d_num - ref.delta_d))
        worst_e = max(worst_e, abs(e_num - ref.delta_e))
        snap = reconstruct_u(t, table, system)
        n_cells, err = _band_check(snap, system, k1, d_num, e_num, 3 * dx)
        band_errs.append((t, n_cells, err))
    checks.append(Check("delta_D(t,1) vs (e^{2t}-1)/2", worst_d <= tol,
                        f"max err {worst_d:.2e}"))
    checks.append(Check("delta_E(t,1) vs (e^{4t}-1)/4", worst_e <= tol,
                        f"max err {worst_e:.2e}"))
    band_ok = all(err <= 1e-9 for _, _, err in band_errs)
    detail = "; ".join(f"t={t}: {n} cells, err {e:.1e}" for t, n, e in band_errs)
    checks.append(Check("u = 1 on the eroded fattening band", band_ok, detail))
    elapsed = time.perf_counter() - t0
    checks.append(Check("runtime <= 10 s", elapsed <= 10.0, f"{elapsed:.1f}s"))
    return ExampleResult("paper1d", checks, elapsed)


def radial_reference(radii: np.ndarray, t: float) -> np.ndarray:
    """Vectorized rho(t; rho0) on an array of radii via bisection on the
    monotone side (the per-point oracle is oracle_radial_decay)."""
    radii = np.asarray(radii, dtype=float)
    target = (radii - 1.0) ** 2 * np.exp(radii - t)
    lo = np.where(radii > 1.0, 1.0, radii)
    hi = np.where(radii > 1.0, radii, 1.0)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        val = np.exp(mid) * (mid - 1.0) ** 2
        # increasing in rho above 1, decreasing below
        above = radii > 1.0
        go_up = np.where(above, val < target, val > target)
        lo = np.where(go_up, mid, lo)
        hi = np.where(go_up, hi, mid)
    return 0.5 * (lo + hi)


def example_radial(dx: float = 1.0 / 128) -> ExampleResult:
    """Radial decay reproduction: the implicit closed form on the annulus and
    the fitted decay exponent 1/2."""
    t0 = time.perf_counter()
    setup = make_radial(dx)
    u0, density, vel = setup["u0"], setup["density"], setup["velocity"]
    levels = setup["levels"]
    horizon = 6.0
    snapshot_times = [0.5 * k for k in range(1, 13)]
    thr = find_threshold(u0, density, vel, setup["threshold_tol"])
    system = LevelSetSystem(u0, density, levels, thr.h_bar)
    tgrid = np.unique(np.concatenate([np.linspace(0, horizon, 121),
                                      snapshot_times]))
    table = build_delta_table(system, vel, tgrid)
    spacing = float(levels[1] - levels[0])
    tol_u = 3 * dx + spacing

    checks = [Check("h_bar = 1", abs(thr.h_bar - 1.0) <= 0.02,
                    f"h_bar={thr.h_bar:.6f}")]
    grid = u0.grid
    r = grid.radius()
    annulus = (r >= 0.3) & (r <= 2.0)
    snaps = []
    worst = 0.0
    for t in snapshot_times:
        snap = reconstruct_u(t, table, system)
        snaps.append((t, ScalarField(grid, snap.u)))
        if t in (0.5, 1.0, 2.0):
            ref = radial_reference(r[annulus], t)
            err = float(np.abs(snap.u[annulus] - ref).max())
            worst = max(worst, err)
    checks.append(Check(f"u vs implicit closed form (tol {tol_u:.3f})",
                        worst <= tol_u, f"max err {worst:.4f}"))

    window = (r >= 0.5) & (r <= 1.5)
    rep = asymptotics(snaps, thr.h_bar, window, floor=spacing)
    checks.append(Check("decay rate 0.5 +/- 0.05",
                        abs(rep.lambda_hat - 0.5) <= 0.05,
                        f"lambda_hat={rep.lambda_hat:.4f}"))
    elapsed = time.perf_counter() - t0
    checks.append(Check("runtime <= 180 s", elapsed <= 180.0, f"{elapsed:.1f}s"))
    return ExampleResult("radial", checks, elapsed)


def kruskal_grid(depth: int, margin_cells: int = 192) -> Grid:
    """Dyadic grid over the strip rectangle: cell centers land exactly on the
    square-center lattice of every strip, so even single-cell balls of the
    finest strip are represented."""
    dx = 4.0 ** (-depth) / 4.0
    m = margin_cells
    nx = int(round(2.0 / dx)) + 2 * m + 1
    ny = int(round(1.0 / dx)) + 2 * m + 1
    return Grid(dim=2, origin=(-m * dx, -m * dx), dx=dx, shape=(nx, ny))


def example_kruskal(depth: int = 5) -> ExampleResult:
    """Perimeter blow-up of the fractal construction: Per(E(s)) >= pi/(28
    sqrt(s)) with 20% slack on s in [4 dx, 1e-2]."""
    t0 = time.perf_counter()
    grid = kruskal_grid(depth)
    dx = grid.dx
    bset = build_kruskal_set(depth, grid)
    sdf = signed_distance(bset)
    s_values = np.geomspace(4 * dx, 1e-2, 10)
    worst_ratio = np.inf
    rows = []
    for s in s_values:
        per = isocontour_length(sdf, s)
        bound = np.pi / (28.0 * np.sqrt(s))
        worst_ratio = min(worst_ratio, per / bound)
        rows.append((s, per, bound))
    detail = f"min Per/bound = {worst_ratio:.2f} over s in [{s_values[0]:.2e}, 1e-2]"
    checks = [Check("Per(E(s)) >= pi/(28 sqrt(s)) with 20% slack",
                    worst_ratio >= 0.8, detail)]
    elapsed = time.perf_counter() - t0
    return ExampleResult(f"kruskal(depth={depth})", checks, elapsed)


EXAMPLES = {
    "paper1d": example_paper1d,
    "radial": example_radial,
    "kruskal": example_kruskal,
}


# ---------------------------------------------------------------------------
# cross-solver comparison study


@dataclass
class ComparisonResult:
    name: str
    dx: float
    gap: float
    cells: int


def rep_fd_gap(setup, horizon: float, levels=None,
               exclude_spacing_factor: float = 2.0) -> ComparisonResult:
    """Sup-norm gap between the representation and FD solutions at the
    horizon, on the inner half of the domain, excluding the near-critical
    band |u - h_bar| < 2 level spacings and the level-grid edge cells."""
    u0, density, vel = setup["u0"], setup["density"], setup["velocity"]
    grid = u0.grid
    if levels is None:
        levels = setup["levels"]
    thr = find_threshold(u0, density, vel, setup["threshold_tol"])
    system = LevelSetSystem(u0, density, levels, thr.h_bar)
    tgrid = np.unique(np.concatenate([np.linspace(0, horizon, 97), [horizon]]))
    table = build_delta_table(system, vel, tgrid)
    snap = reconstruct_u(horizon, table, system)
    fd = fd_run(u0, density, vel, horizon, [horizon], h_bar=thr.h_bar)
    fd_final = fd.snapshots[-1][1].values

    mesh = grid.meshgrid()
    centers = [0.5 * (grid.axis_coords(a)[0] + grid.axis_coords(a)[-1])
               for a in range(grid.dim)]
    extent = min(grid.axis_coords(a)[-1] - grid.axis_coords(a)[0]
                 for a in range(grid.dim))
    inner = np.all([np.abs(m - c) <= extent / 4 for m, c in zip(mesh, centers)],
                   axis=0)
    spacing = float(levels[1] - levels[0])
    u_rep = snap.u
    mask = inner & (np.abs(fd_final - thr.h_bar) >= exclude_spacing_factor * spacing)
    mask &= (u_rep > levels[0] + 1e-12) & (u_rep < levels[-1] - 1e-12)
    gap = float(np.abs(u_rep - fd_final)[mask].max()) if mask.any() else 0.0
    return ComparisonResult(name="", dx=grid.dx, gap=gap, cells=int(mask.sum()))


def comparison_setup(name: str, dx: float):
    cfg = COMPARISON_CONFIGS[name]
    if cfg["preset"] == "paper1d":
        return make_paper1d(dx), cfg["horizon"]
    if cfg["preset"] == "cone":
        return make_cone1d(dx), cfg["horizon"]
    setup = make_radial(dx, extent=2.0)
    setup["levels"] = level_grid(0.1, 1.4, 64)
    return setup, cfg["horizon"]


def comparison_study(name: str) -> dict:
    """Gap at the pinned base resolution plus the refinement ratio."""
    cfg = COMPARISON_CONFIGS[name]
    base_dx = cfg["base_dx"]
    other_dx = cfg.get("fine_dx") or cfg.get("coarse_dx")
    setup, horizon = comparison_setup(name, base_dx)
    base = rep_fd_gap(setup, horizon)
    setup2, _ = comparison_setup(name, other_dx)
    other = rep_fd_gap(setup2, horizon)
    if "fine_dx" in cfg:
        coarse_gap, fine_gap = base.gap, other.gap
    else:
        coarse_gap, fine_gap = other.gap, base.gap
    ratio = coarse_gap / fine_gap if fine_gap > 0 else np.inf
    return {"name": name, "base_dx": base_dx, "gap_at_base": base.gap,
            "other_dx": other_dx, "gap_at_other": other.gap,
            "refinement_ratio": ratio, "cells": base.cells}
