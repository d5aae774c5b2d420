"""Value functions and solution fields of the representation formula.

The fast reconstruction uses the consistency of level and parallel sets:
{u_D(.,t) < h} = D_h(delta_D(t,h)) and {u_E(.,t) <= h} = E_h(delta_E(t,h)),
so per cell

    u_D(x,t) = sup{h : sd_D_h(x) >= delta_D(t,h)},
    u_E(x,t) = inf{h : sd_E_h(x) <= delta_E(t,h)},

with both predicates monotone in h. The slower four-case min/max form of the
height functions U_D, U_E is kept as the oracle the fast form is tested
against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .delta import DeltaTable, LevelSetSystem
from .errors import LevelRangeExhausted, OutOfTable
from .grids import ScalarField
from .measure import DensityField, mu

PLATEAU_SNAP_CELLS = 3.0   # snap to a grid level when its fattening gap > 3 dx
JUMP_SNAP_SPACINGS = 8.0   # ... or when the attained predicate margin is this
                           # many level spacings (a delta jump in h, not a
                           # transversal crossing: the sup/inf is attained)


def _interp_delta_rows(delta_b: np.ndarray, times: np.ndarray, t: float) -> np.ndarray:
    """delta(t) per level; rows may end in +/-inf past their valid time."""
    if t <= times[0]:
        return delta_b[:, 0].copy()
    m = int(np.searchsorted(times, t, side="right") - 1)
    if m >= len(times) - 1:
        return delta_b[:, -1].copy()
    w = (t - times[m]) / (times[m + 1] - times[m])
    left = delta_b[:, m]
    right = delta_b[:, m + 1]
    if w == 0:
        return left.copy()
    with np.errstate(invalid="ignore"):
        out = np.where(np.isfinite(right), (1 - w) * left + w * right, right)
    return out


@dataclass
class SolutionSnapshot:
    """u_D and u_E at one time, with the diagnostics the invariants need."""

    t: float
    u_d: ScalarField
    u_e: ScalarField
    discrepancy: float                 # sup |u_D - u_E|
    clamped_low: int = 0               # cells that hit the bottom of the level grid
    clamped_high: int = 0
    bounds_violation: float = 0.0      # worst breach of the min/max sandwich

    @property
    def u(self) -> np.ndarray:
        return 0.5 * (self.u_d.values + self.u_e.values)


def height_U(x, t: float, h: float, branch: str, table: DeltaTable,
             system: LevelSetSystem) -> float:
    """Direct four-case form of the height function: min (resp. max) of
    u0(y) - h over the discrete ball |y - x| <= |delta|.

    The h vs h_bar and D/E asymmetries live here and only here; the fast
    reconstruction is tested against this.
    """
    d = table.delta_at(branch, h, t)
    if not np.isfinite(d):
        raise OutOfTable(f"delta({branch}, h={h}, t={t}) is beyond the grid margin")
    if branch == "D":
        take_min = h > table.h_bar
    else:
        take_min = h >= table.h_bar
    radius = d if take_min else -d
    if radius < 0:
        # sign structure violated only by interpolation noise near h_bar
        radius = 0.0
    grid = system.grid
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mesh = grid.meshgrid()
    dist2 = sum((m - xi) ** 2 for m, xi in zip(mesh, x))
    ball = dist2 <= radius**2 * (1 + 1e-12) + 1e-300
    vals = system.u0.values[ball]
    return float(vals.min() - h) if take_min else float(vals.max() - h)


def reconstruct_u(t: float, table: DeltaTable, system: LevelSetSystem,
                  edge_policy: str = "clamp") -> SolutionSnapshot:
    """Assemble u_D, u_E at time t from the delta table and per-level
    signed distance fields.

    Per cell, a monotone scan over the level grid finds the predicate
    boundary; the value interpolates linearly between the bracketing levels.
    When the bracketing level carries a fattening gap wider than the snap
    tolerance, the value snaps to that level exactly: the sup/inf is attained
    on the plateau (the level set has interior there).

    Levels whose displacement passed the grid margin enter with delta = +inf,
    which the predicates resolve correctly (the parallel set has swallowed
    the domain). Cells whose scan hits the table edge are clamped and counted;
    edge_policy="raise" turns any clamping into LevelRangeExhausted.
    """
    grid = system.grid
    levels = table.levels
    K = len(levels)
    n = grid.shape
    snap_tol = PLATEAU_SNAP_CELLS * grid.dx

    d_vec = _interp_delta_rows(table.delta[0], table.times, t)
    e_vec = _interp_delta_rows(table.delta[1], table.times, t)
    with np.errstate(invalid="ignore"):
        gap_vec = np.where(np.isfinite(e_vec) & np.isfinite(d_vec),
                           e_vec - d_vec, 0.0)

    # u_D: last level with sd >= delta_D
    last_true = np.full(n, -1, dtype=np.int32)
    phi_true = np.zeros(n, dtype=np.float64)
    phi_after = np.zeros(n, dtype=np.float64)
    for k in range(K):
        sd = system.sd_values("D", k)
        phi = sd - d_vec[k]
        pred = phi >= 0.0
        np.copyto(phi_true, phi, where=pred)
        last_true = np.where(pred, k, last_true)
        after = (~pred) & (last_true == k - 1)
        np.copyto(phi_after, phi, where=after)

    u_d = np.empty(n)
    below = last_true < 0
    top = last_true >= K - 1
    interior = ~below & ~top
    u_d[below] = levels[0]
    u_d[top] = levels[-1]
    if interior.any():
        lt = last_true[interior]
        h_lo = levels[lt]
        h_hi = levels[lt + 1]
        p0 = phi_true[interior]
        p1 = phi_after[interior]
        denom = p0 - p1
        frac = np.where(denom > 0, p0 / np.where(denom > 0, denom, 1.0), 0.0)
        val = h_lo + (h_hi - h_lo) * np.clip(frac, 0.0, 1.0)
        snap = gap_vec[lt] > snap_tol
        u_d[interior] = np.where(snap, h_lo, val)
    clamp_low_d = int(below.sum())
    clamp_high_d = int(top.sum())

    # u_E: first level with sd <= delta_E
    first_true = np.full(n, K, dtype=np.int32)
    psi_before = np.zeros(n, dtype=np.float64)
    psi_at = np.zeros(n, dtype=np.float64)
    for k in range(K):
        sd = system.sd_values("E", k)
        psi = sd - e_vec[k]
        pred = psi <= 0.0
        fresh = pred & (first_true == K)
        np.copyto(psi_at, psi, where=fresh)
        first_true = np.where(fresh, k, first_true)
        before = (~pred) & (first_true == K)
        np.copyto(psi_before, psi, where=before)

    u_e = np.empty(n)
    above = first_true >= K
    bottom = first_true == 0
    interior_e = ~above & ~bottom
    u_e[above] = levels[-1]
    u_e[bottom] = levels[0]
    if interior_e.any():
        ft = first_true[interior_e]
        h_lo = levels[ft - 1]
        h_hi = levels[ft]
        q0 = psi_before[interior_e]
        q1 = psi_at[interior_e]
        denom = q0 - q1
        frac = np.where(denom > 0, q0 / np.where(denom > 0, denom, 1.0), 1.0)
        val = h_lo + (h_hi - h_lo) * np.clip(frac, 0.0, 1.0)
        snap = gap_vec[ft] > snap_tol
        u_e[interior_e] = np.where(snap, h_hi, val)
    clamp_low_e = int(bottom.sum())
    clamp_high_e = int(above.sum())

    clamped_low = clamp_low_d + clamp_low_e
    clamped_high = clamp_high_d + clamp_high_e
    if edge_policy == "raise" and (clamped_low or clamped_high):
        raise LevelRangeExhausted(
            f"{clamped_low + clamped_high} cells hit the level-grid edge at t={t}")

    u0v = system.u0.values
    lower = np.minimum(u0v, table.h_bar)
    upper = np.maximum(u0v, table.h_bar)
    # clamped cells sit inside the sandwich by construction; exclude them
    # from the discrepancy, their true value is outside the table range
    ok = ~(below | top | above | bottom)
    discrepancy = float(np.abs(u_d - u_e)[ok].max()) if ok.any() else 0.0
    viol = max(float((lower - u_e)[ok].max()) if ok.any() else 0.0,
               float((u_d - upper)[ok].max()) if ok.any() else 0.0,
               float((u_e - u_d)[ok].max()) if ok.any() else 0.0, 0.0)

    return SolutionSnapshot(
        t=t,
        u_d=ScalarField(grid, u_d),
        u_e=ScalarField(grid, u_e),
        discrepancy=discrepancy,
        clamped_low=clamped_low,
        clamped_high=clamped_high,
        bounds_violation=viol,
    )


@dataclass
class ConsistencyReport:
    h: float
    t: float
    cells_d: int
    mass_d: float
    cells_e: int
    mass_e: float


def level_set_consistency(t: float, h: float, snapshot: SolutionSnapshot,
                          table: DeltaTable, system: LevelSetSystem,
                          density: DensityField) -> ConsistencyReport:
    """Symmetric difference between the reconstructed sublevel sets and the
    parallel sets the formula says they equal, in cells and in mu-mass."""
    k = system.level_index(h)
    d_t = _interp_delta_rows(table.delta[0], table.times, t)[k]
    e_t = _interp_delta_rows(table.delta[1], table.times, t)[k]

    set_ud = snapshot.u_d.values < h
    sd_d = system.sd_values("D", k)
    par_d = sd_d < d_t if np.isfinite(d_t) else np.ones_like(set_ud)
    diff_d = set_ud != par_d

    set_ue = snapshot.u_e.values <= h
    sd_e = system.sd_values("E", k)
    par_e = sd_e <= e_t if np.isfinite(e_t) else np.ones_like(set_ue)
    diff_e = set_ue != par_e

    vol = system.grid.cell_volume
    return ConsistencyReport(
        h=h, t=t,
        cells_d=int(diff_d.sum()),
        mass_d=float(density.theta[diff_d].sum()) * vol,
        cells_e=int(diff_e.sum()),
        mass_e=float(density.theta[diff_e].sum()) * vol,
    )


@dataclass
class OrderingReport:
    t: float
    violation_d: float
    violation_e: float

    @property
    def violation(self) -> float:
        return max(self.violation_d, self.violation_e)


def comparison_check(u0_low: ScalarField, u0_high: ScalarField,
                     density: DensityField, vel, t: float,
                     levels_count: int = 48, threshold_tol: float = 1e-3,
                     time_points: int = 65) -> OrderingReport:
    """Black-box ordering test: run both representation pipelines and report
    the worst cell-wise violation of u_low <= u_high at time t."""
    from .delta import build_delta_table
    from .dynamics import find_threshold
    from .geometry import parallel_margin, signed_distance, sublevel_sets

    if np.any(u0_low.values > u0_high.values):
        raise ValueError("u0_low must be <= u0_high cell-wise")
    snaps = []
    for u0 in (u0_low, u0_high):
        thr = find_threshold(u0, density, vel, threshold_tol)
        lo = float(u0.values.min())
        ring = u0.grid.boundary_ring()
        hi = float(u0.values[ring].min()) - vel.bound * t - 4 * u0.grid.dx
        levels = lo + (hi - lo) / levels_count * np.arange(levels_count)
        system = LevelSetSystem(u0, density, levels, thr.h_bar)
        tgrid = np.linspace(0.0, t, time_points) if t > 0 else np.array([0.0])
        table = build_delta_table(system, vel, tgrid)
        snaps.append(reconstruct_u(t, table, system))
    lo_s, hi_s = snaps
    return OrderingReport(
        t=t,
        violation_d=float((lo_s.u_d.values - hi_s.u_d.values).max()),
        violation_e=float((lo_s.u_e.values - hi_s.u_e.values).max()),
    )
