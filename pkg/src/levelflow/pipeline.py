"""Experiment orchestration: threshold, delta table, reconstruction and/or
finite differences, analyses, deterministic exports.

Identical configs produce byte-identical output trees: no timestamps, sorted
JSON keys, repr-format floats, and no randomness outside seeded generators
named in the config.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .analysis import asymptotics, fattening_report
from .config import ExperimentConfig
from .delta import (DIVERGENCE_TIME_FACTOR, G0_SLACK, G0_ZERO_TOL,
                    ISOTONIC_ABORT_CELLS, ISOTONIC_QUALITY_CELLS,
                    RATIO_TEST_THRESHOLD, TAIL_WINDOW_FACTOR, DeltaTable,
                    LevelSetSystem, build_delta_table)
from .dynamics import (REARRANGE_TOL, S_GRID_RATIO, S_MIN_FACTOR, VelocitySpec,
                       affine_clamped, find_threshold, shifted, tabulated)
from .errors import ConfigError, DomainOverflow, TailTooShort
from .fdsolver import CFL_LIMIT, fd_run
from .geometry import TAU_CLS_FACTOR, TAU_LVL_SNAP
from .gridio import read_grid, write_grid
from .grids import Grid, ScalarField
from .measure import DENSITY_PRESETS, DensityField
from .presets import level_grid
from .reconstruct import PLATEAU_SNAP_CELLS, reconstruct_u
from .analysis import (ALPHA_FIT_MARGIN, KRUSKAL_RADIUS_FRACTION,
                       REGULAR_SD_GAP_CELLS, STRICT_SPEED_TOL)

TOLERANCES = {
    "tau_cls_factor": TAU_CLS_FACTOR,
    "tau_lvl_snap": TAU_LVL_SNAP,
    "s_min_factor": S_MIN_FACTOR,
    "s_grid_ratio": S_GRID_RATIO,
    "rearrange_tol": REARRANGE_TOL,
    "divergence_time_factor": DIVERGENCE_TIME_FACTOR,
    "ratio_test_threshold": RATIO_TEST_THRESHOLD,
    "g0_zero_tol": G0_ZERO_TOL,
    "g0_slack": G0_SLACK,
    "tail_window_factor": TAIL_WINDOW_FACTOR,
    "isotonic_quality_cells": ISOTONIC_QUALITY_CELLS,
    "isotonic_abort_cells": ISOTONIC_ABORT_CELLS,
    "plateau_snap_cells": PLATEAU_SNAP_CELLS,
    "cfl_limit": CFL_LIMIT,
    "kruskal_radius_fraction": KRUSKAL_RADIUS_FRACTION,
    "regular_sd_gap_cells": REGULAR_SD_GAP_CELLS,
    "alpha_fit_margin": ALPHA_FIT_MARGIN,
    "strict_speed_tol": STRICT_SPEED_TOL,
    "delta_measure_convention": "tie-aligned/midpoint",
    "geometry_measure_convention": "midpoint",
    "fd_nonlocal_mass": "strict-uncorrected",
}


@dataclass
class Bundle:
    """Materialized experiment inputs."""

    grid: Grid
    u0: ScalarField
    density: DensityField
    velocity: VelocitySpec
    config: ExperimentConfig


def _build_grid(section: dict) -> Grid:
    return Grid(dim=int(section["dim"]),
                origin=tuple(float(x) for x in section["origin"]),
                dx=float(section["dx"]),
                shape=tuple(int(n) for n in section["n"]))


def _build_initial(config: ExperimentConfig) -> tuple[Grid, ScalarField]:
    init = config.initial
    name = init["name"]
    if name == "table":
        fld = read_grid(init["path"])
        if config.grid is not None and _build_grid(config.grid) != fld.grid:
            raise ConfigError("config grid does not match the initial table grid")
        return fld.grid, fld
    if config.grid is None:
        raise ConfigError(f"initial {name!r} requires an explicit grid")
    grid = _build_grid(config.grid)
    if name == "paper1d":
        if grid.dim != 1:
            raise ConfigError("paper1d is one-dimensional")
        from .analysis import paper1d_u0

        return grid, ScalarField(grid, paper1d_u0(grid.axis_coords(0)))
    if name == "radial":
        if init.get("v0", "identity") != "identity":
            raise ConfigError("only v0=identity is built in")
        return grid, ScalarField(grid, grid.radius())
    if name == "cone":
        return grid, ScalarField(grid, grid.radius())
    if name == "quasiconvex-random":
        from .presets import make_quasiconvex_random

        setup = make_quasiconvex_random(int(init.get("seed", 0)),
                                        dim=int(init.get("dim", grid.dim)),
                                        dx=grid.dx)
        if setup["u0"].grid != grid:
            raise ConfigError("quasiconvex-random grid mismatch; "
                              "use the generator's natural [-3,3] domain")
        return grid, setup["u0"]
    raise ConfigError(f"unhandled initial {name!r}")  # pragma: no cover


def _build_density(grid: Grid, section: dict) -> DensityField:
    name = section["name"]
    if name == "table":
        fld = read_grid(section["path"])
        if fld.grid != grid:
            raise ConfigError("density table grid mismatch")
        return DensityField(grid, fld.values, name="table")
    if name == "gaussian":
        return DENSITY_PRESETS["gaussian"](grid, float(section["sigma"]))
    return DENSITY_PRESETS[name](grid)


def _build_velocity(section: dict, u0: ScalarField) -> VelocitySpec:
    name = section["name"]
    if name == "affine_clamped":
        return affine_clamped(float(section["a"]), float(section["b"]),
                              float(section["qlo"]), float(section["qhi"]))
    if name == "shifted":
        lo, hi = float(u0.values.min()), float(u0.values.max())
        return shifted(float(section["c"]), (lo, hi))
    if name == "table":
        raw = np.loadtxt(section["path"], delimiter=",")
        return tabulated(raw[1:, 0], raw[0, 1:], raw[1:, 1:])
    raise ConfigError(f"unhandled velocity {name!r}")  # pragma: no cover


def materialize(config: ExperimentConfig) -> Bundle:
    grid, u0 = _build_initial(config)
    density = _build_density(grid, config.density)
    velocity = _build_velocity(config.velocity, u0)
    r_lo, r_hi = float(u0.values.min()), float(u0.values.max())
    velocity.validate((r_lo, r_hi), density.total_mass)
    return Bundle(grid=grid, u0=u0, density=density, velocity=velocity,
                  config=config)


def resolve_levels(bundle: Bundle, horizon: float) -> np.ndarray:
    """Level lattice for the run.

    The guard between the top level and the frame minimum of u0 must cover
    the displacement bound M*horizon for the FD solver (its boundary stencil
    assumes a quiet frame) and whenever the top level is defaulted. An
    explicit levels.hi with the representation solver may leave less: levels
    whose parallel sets outgrow the grid truncate, which the reconstruction
    extends soundly (the set has swallowed the domain).
    """
    cfg = bundle.config.levels
    u0 = bundle.u0
    dx = u0.grid.dx
    ring = u0.grid.boundary_ring()
    frame_min = float(u0.values[ring].min())
    reach = bundle.velocity.bound * horizon
    margin_req = cfg.get("margin")
    if margin_req is None:
        margin_req = reach
    must_hold = bundle.config.solver in ("fd", "both") or cfg.get("hi") is None
    if must_hold and margin_req < reach:
        raise DomainOverflow(
            f"levels.margin {margin_req:g} is below the displacement bound "
            f"M*horizon = {reach:g}")
    lo = cfg.get("lo")
    hi = cfg.get("hi")
    if lo is None:
        lo = float(u0.values.min())
    if hi is None:
        hi = frame_min - margin_req - 4 * dx
    if must_hold and hi > frame_min - margin_req - 2 * dx:
        raise DomainOverflow(
            f"levels.hi = {hi:g} leaves less than the required margin "
            f"{margin_req:g} to the frame minimum {frame_min:g}")
    if hi > frame_min - 4 * dx:
        raise DomainOverflow(
            f"levels.hi = {hi:g} is not representable inside the frame "
            f"minimum {frame_min:g}")
    if hi <= lo:
        raise ConfigError(f"empty level range [{lo:g}, {hi:g}]")
    return level_grid(float(lo), float(hi), int(cfg["count"]))


def window_mask(grid: Grid, window: dict | None) -> np.ndarray:
    if window is None:
        half = [0.5 * (grid.axis_coords(a)[0] + grid.axis_coords(a)[-1])
                for a in range(grid.dim)]
        extent = min(grid.axis_coords(a)[-1] - grid.axis_coords(a)[0]
                     for a in range(grid.dim))
        mesh = grid.meshgrid()
        return np.all([np.abs(m - c) <= extent / 4 for m, c in zip(mesh, half)],
                      axis=0)
    if window["type"] == "annulus":
        r = grid.radius()
        return (r >= float(window["lo"])) & (r <= float(window["hi"]))
    lo, hi = (float(x) for x in window["box"])
    mesh = grid.meshgrid()
    return np.all([(m >= lo) & (m <= hi) for m in mesh], axis=0)


def nested_windows(grid: Grid, window: dict | None):
    """Shrunken copies of the analysis window for the per-window rate table."""
    if window is None or window["type"] != "annulus":
        return []
    lo, hi = float(window["lo"]), float(window["hi"])
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    out = []
    for f in (1.0, 0.85, 0.7):
        r = grid.radius()
        m = (r >= mid - half * f) & (r <= mid + half * f)
        out.append((f"annulus x{f:g}", m))
    return out


@dataclass
class RunResult:
    out_dir: str
    exit_code: int
    diagnostics: dict


def _dump_field(out_dir, name, fld):
    write_grid(os.path.join(out_dir, name + ".grid"), fld)


def run(config: ExperimentConfig, out_dir: str, workers: int = 1) -> RunResult:
    """Execute the configured pipeline and write the artifact directory."""
    os.makedirs(out_dir, exist_ok=True)
    bundle = materialize(config)
    grid = bundle.grid
    horizon = float(config.time["horizon"])
    snapshot_times = sorted(set(float(t) for t in config.time.get("snapshots", []))
                            | {horizon})

    thr = find_threshold(bundle.u0, bundle.density, bundle.velocity,
                         config.threshold_tol)
    levels = resolve_levels(bundle, horizon)

    n_t = int(config.time.get("points", 129))
    if horizon > 0:
        time_grid = np.unique(np.concatenate(
            [np.linspace(0.0, horizon, n_t), np.asarray(snapshot_times)]))
    else:
        time_grid = np.array([0.0])

    system = LevelSetSystem(bundle.u0, bundle.density, levels, thr.h_bar)
    table = build_delta_table(system, bundle.velocity, time_grid, workers=workers)
    table.to_csv(os.path.join(out_dir, "delta.csv"))

    diagnostics: dict = {
        "h_bar": thr.h_bar,
        "f_at_strict": thr.f_at_strict,
        "f_at_closed": thr.f_at_closed,
        "threshold_bracket": thr.bracket,
        "levels": {"lo": float(levels[0]), "hi": float(levels[-1]),
                   "count": len(levels), "spacing": float(levels[1] - levels[0])},
        "max_repair": float(table.repair.max()),
        "repair_quality_ok": bool(table.repair.max()
                                  <= ISOTONIC_QUALITY_CELLS * grid.dx),
        "truncated_levels": int(np.sum(table.valid_until < horizon)),
        "selection_counts": {
            tag: sum(row.count(tag) for row in table.selection)
            for tag in ("regular", "minimal-at-critical", "maximal-at-critical")},
        "case_counts": {
            tag: sum(row.count(tag) for row in table.case)
            for tag in ("regular", "pinned", "instant", "strict")},
    }

    rep_snapshots = []
    if config.solver in ("representation", "both"):
        rows = []
        for i, t in enumerate(snapshot_times):
            snap = reconstruct_u(t, table, system)
            rep_snapshots.append(snap)
            _dump_field(out_dir, f"rep_uD_{i:03d}", snap.u_d)
            _dump_field(out_dir, f"rep_uE_{i:03d}", snap.u_e)
            rows.append((t, snap.discrepancy, snap.bounds_violation,
                         snap.clamped_low, snap.clamped_high))
        with open(os.path.join(out_dir, "snapshots.csv"), "w") as fh:
            fh.write("t,sup_uD_minus_uE,bounds_violation,clamped_low,clamped_high\n")
            for row in rows:
                fh.write(",".join(repr(v) for v in row) + "\n")
        diagnostics["rep_max_discrepancy"] = max((s.discrepancy
                                                  for s in rep_snapshots), default=0.0)
        diagnostics["rep_max_bounds_violation"] = max(
            (s.bounds_violation for s in rep_snapshots), default=0.0)

    fd_result = None
    if config.solver in ("fd", "both"):
        fd_result = fd_run(bundle.u0, bundle.density, bundle.velocity, horizon,
                           snapshot_times, h_bar=thr.h_bar)
        for i, (t, fld) in enumerate(fd_result.snapshots):
            _dump_field(out_dir, f"fd_{i:03d}", fld)
        diagnostics["fd_steps"] = fd_result.steps
        diagnostics["fd_sandwich_excess"] = fd_result.sandwich_excess

    if config.solver == "both" and rep_snapshots:
        spacing = float(levels[1] - levels[0])
        inner = window_mask(grid, None)
        rows = []
        fd_by_t = {t: f for t, f in fd_result.snapshots}
        for snap in rep_snapshots:
            if snap.t not in fd_by_t:
                continue
            fd_vals = fd_by_t[snap.t].values
            u_rep = snap.u
            mask = inner & (np.abs(fd_vals - thr.h_bar) >= 2 * spacing)
            mask &= (u_rep > levels[0]) & (u_rep < levels[-1])
            gap = float(np.abs(u_rep - fd_vals)[mask].max()) if mask.any() else 0.0
            rows.append((snap.t, gap, int(mask.sum())))
        with open(os.path.join(out_dir, "compare.csv"), "w") as fh:
            fh.write("t,sup_gap,cells\n")
            for row in rows:
                fh.write(",".join(repr(v) for v in row) + "\n")
        diagnostics["compare_final_gap"] = rows[-1][1] if rows else 0.0

    verdicts = {}
    if config.analysis.get("fattening"):
        rep = fattening_report(table, system)
        with open(os.path.join(out_dir, "fattening.csv"), "w") as fh:
            fh.write("h,classification,regular_initial,sd_gap,symdiff_mass,"
                     "max_gap,max_thickness,consistent\n")
            for rec in rep.levels:
                finite = np.isfinite(rec.gap)
                max_gap = float(np.abs(rec.gap[finite]).max()) if finite.any() else 0.0
                tfin = np.isfinite(rec.thickness)
                max_th = float(rec.thickness[tfin].max()) if tfin.any() else 0.0
                fh.write(f"{rec.h!r},{rec.classification},{rec.regular_initial},"
                         f"{rec.sd_gap!r},{rec.symdiff_mass!r},{max_gap!r},"
                         f"{max_th!r},{rec.consistent}\n")
        verdicts["fattening_violations"] = rep.violations
        verdicts["fattening_max_regular_gap"] = rep.max_regular_gap
        diagnostics["fattening_violations"] = rep.violations

    if config.analysis.get("asymptotics") and rep_snapshots:
        mask = window_mask(grid, config.analysis.get("window"))
        spacing = float(levels[1] - levels[0])
        snaps = [(s.t, ScalarField(grid, s.u)) for s in rep_snapshots]
        try:
            rep_a = asymptotics(snaps, thr.h_bar, mask, floor=spacing,
                                nested_masks=nested_windows(
                                    grid, config.analysis.get("window")))
            with open(os.path.join(out_dir, "asymptotics.csv"), "w") as fh:
                fh.write("t,e\n")
                for t, e in zip(rep_a.times, rep_a.e):
                    fh.write(f"{t!r},{e!r}\n")
            verdicts["lambda_hat"] = rep_a.lambda_hat
            verdicts["tail_start"] = rep_a.tail_start
            verdicts["stabilization_time"] = rep_a.stabilization_time
            for name, lam in rep_a.window_table:
                verdicts[f"lambda[{name}]"] = lam
            diagnostics["lambda_hat"] = rep_a.lambda_hat
        except TailTooShort as exc:
            verdicts["asymptotics_error"] = str(exc)

    if config.analysis.get("reg_initial_b"):
        from .analysis import check_reg_initial

        b = float(config.analysis["reg_initial_b"])
        reg = check_reg_initial(bundle.u0, bundle.density, bundle.velocity,
                                thr.h_bar, b)
        verdicts["reg_initial_a"] = reg.a
        diagnostics["reg_initial_a"] = reg.a

    with open(os.path.join(out_dir, "verdicts.txt"), "w") as fh:
        for key in sorted(verdicts):
            fh.write(f"{key}={verdicts[key]!r}\n")

    manifest = {
        "tool": {"name": "levelflow", "version": __version__},
        "config": config.echo(),
        "tolerances": TOLERANCES,
        "workers": workers,
        "diagnostics": diagnostics,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")

    return RunResult(out_dir=out_dir, exit_code=0, diagnostics=diagnostics)
