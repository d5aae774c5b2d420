"""Fattening detection, critical-level regime classification, large-time
decay measurement, the fractal fattening construction, and the closed-form
oracles for the two reference examples.

Power-law fits are log-log least squares over the resolved window with
explicit sample-count gates; verdicts are tri-state (a finite grid can only
certify asymptotics with stated confidence, and borderline integrability
alpha ~ 1 is numerically undecidable by design).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .delta import DeltaTable, LevelSetSystem, travel_time
from .dynamics import VelocitySpec, geometric_s_grid, speed_curve_from_measure
from .errors import (FitUnstable, OutOfValidityWindow, ResolutionTooCoarse,
                     TailTooShort)
from .geometry import isocontour_length, parallel_margin, signed_distance, sublevel_sets
from .grids import BinarySet, Grid, ScalarField
from .measure import DensityField, ParallelMeasure

KRUSKAL_RADIUS_FRACTION = 1.0 / 8.0   # r_k = l_k / 8: our documented convention
REGULAR_SD_GAP_CELLS = 2.0            # cl D = E when the sd gap is <= 2 dx
ALPHA_FIT_MARGIN = 0.1                # instant departure needs alpha < 1 - margin
STRICT_SPEED_TOL = 1e-9               # |g(0)| above this * M counts as signed


# ---------------------------------------------------------------------------
# fattening reports


@dataclass
class LevelFattening:
    h: float
    regular_initial: bool
    sd_gap: float                # Hausdorff-type gap between E and cl D at t=0
    symdiff_mass: float
    gap: np.ndarray              # delta_E - delta_D over the time grid
    thickness: np.ndarray        # mu(E(delta_E) \ D(delta_D))
    classification: str          # non-fattening | strict-inclusion
    consistent: bool             # observed gap behaviour matches the class


@dataclass
class FatteningReport:
    times: np.ndarray
    levels: list
    max_regular_gap: float
    violations: int


def fattening_report(table: DeltaTable, system: LevelSetSystem,
                     gap_tol: float | None = None) -> FatteningReport:
    """Classify every level by its initial-set regularity and check the gap
    behaviour the theory prescribes: regular levels keep delta_D = delta_E
    (within quadrature tolerance), strict-inclusion levels fatten for all
    t > 0 with nondecreasing early gap."""
    grid = system.grid
    dx = grid.dx
    if gap_tol is None:
        gap_tol = 2 * dx  # quadrature + frontier-convention slack
    theta_max = float(system.density.theta.max())
    times = table.times
    all_gaps = table.gap()
    records = []
    max_regular_gap = 0.0
    violations = 0
    for k, h in enumerate(system.levels):
        strict, closed = sublevel_sets(system.u0, float(h))
        sd_d = system.sd_values("D", k)
        only_e = closed.mask & ~strict.mask
        sd_gap = float(sd_d[only_e].max()) if only_e.any() else 0.0
        symdiff = float(system.density.theta[only_e].sum()) * grid.cell_volume
        mass_tau = 4.0 * theta_max * dx * max(
            isocontour_length_estimate(closed), 1.0)
        regular = sd_gap <= REGULAR_SD_GAP_CELLS * dx and symdiff <= mass_tau

        gap_row = all_gaps[k].copy()
        finite = np.isfinite(gap_row)
        pm_d = system.parallel_measure("D", k)
        pm_e = system.parallel_measure("E", k)
        thick = np.full_like(gap_row, np.nan)
        dmask = np.isfinite(table.delta[0, k]) & np.isfinite(table.delta[1, k])
        if dmask.any():
            thick[dmask] = (pm_e.mass(table.delta[1, k][dmask])
                            - pm_d.mass(table.delta[0, k][dmask]))
        if regular:
            classification = "non-fattening"
            worst = float(np.abs(gap_row[finite]).max()) if finite.any() else 0.0
            max_regular_gap = max(max_regular_gap, worst)
            consistent = worst <= gap_tol
        else:
            classification = "strict-inclusion"
            positive = gap_row[finite][1:] > 0 if finite.sum() > 1 else np.array([True])
            growing = np.all(np.diff(gap_row[finite]) >= -1e-9) if finite.sum() > 1 else True
            consistent = bool(np.all(positive)) and growing
        if not consistent:
            violations += 1
        records.append(LevelFattening(h=float(h), regular_initial=regular,
                                      sd_gap=sd_gap, symdiff_mass=symdiff,
                                      gap=gap_row, thickness=thick,
                                      classification=classification,
                                      consistent=consistent))
    return FatteningReport(times=times, levels=records,
                           max_regular_gap=max_regular_gap, violations=violations)


def isocontour_length_estimate(bset: BinarySet) -> float:
    """Cheap boundary-cell-count perimeter estimate (the oracle-side route)."""
    mask = bset.mask
    if not mask.any() or mask.all():
        return 0.0
    grid = bset.grid
    count = 0
    for axis in range(grid.dim):
        sl_a = [slice(None)] * grid.dim
        sl_b = [slice(None)] * grid.dim
        sl_a[axis] = slice(1, None)
        sl_b[axis] = slice(None, -1)
        count += int((mask[tuple(sl_a)] != mask[tuple(sl_b)]).sum())
    if grid.dim == 1:
        return float(count)
    return count * grid.dx


# ---------------------------------------------------------------------------
# critical-level classification


@dataclass
class CriticalClassification:
    h_bar: float
    alpha_d: float
    c_d: float
    alpha_e: float
    c_e: float
    travel_d_finite: bool
    travel_e_finite: bool
    regime: str                   # instant-departure | pinned-at-zero | strictly-signed
    sigma_hat: float              # perimeter growth fit on the E side
    n_samples: int


def _powerlaw_fit(s: np.ndarray, y: np.ndarray) -> tuple[float, float, int]:
    """Fit y ~ C s^alpha by least squares in log-log; returns (alpha, C, n)."""
    good = (s > 0) & (y > 0)
    n = int(good.sum())
    if n < 6:
        raise FitUnstable(f"only {n} usable samples for the power-law fit")
    ls, ly = np.log(s[good]), np.log(y[good])
    slope, intercept = np.polyfit(ls, ly, 1)
    return float(slope), float(np.exp(intercept)), n


def classify_critical(u0: ScalarField, density: DensityField, vel: VelocitySpec,
                      h_bar: float, perimeter_fit: bool = True) -> CriticalClassification:
    """Fit the speed exponents near s = 0 on both sides of the critical level
    and combine them with the travel-time verdicts.

    alpha < 1 - margin with a convergent travel time reads instant-departure;
    alpha >= 1 with a divergent travel time reads pinned; a strictly signed
    speed at zero short-circuits both.
    """
    grid = u0.grid
    dx = grid.dx
    strict, closed = sublevel_sets(u0, h_bar)
    results = {}
    fit_lo, fit_hi = 0.5 * dx, 32 * dx
    from .measure import level_is_aligned

    aligned = level_is_aligned(strict.mask, closed.mask)
    for branch, bset, direction in (("D", strict, -1.0), ("E", closed, +1.0)):
        sdf = signed_distance(bset)
        pm = ParallelMeasure(sdf, density, branch=branch, corrected=True,
                             member_mask=bset.mask, aligned=aligned)
        if direction > 0:
            cap = min(parallel_margin(sdf), 64 * dx)
            s_grid = geometric_s_grid(dx, 0.0, cap)
        else:
            s_grid = geometric_s_grid(dx, -64 * dx, 0.0)
        curve = speed_curve_from_measure(pm, vel, h_bar, branch, s_grid, dx)
        g0 = curve.g_at_zero()
        sel = (curve.s * direction >= fit_lo) & (curve.s * direction <= fit_hi)
        s_abs = np.abs(curve.s[sel])
        g_mag = direction * curve.g[sel]   # -g(-s) on the D side, g(s) on E
        alpha, c_hat, n = _powerlaw_fit(s_abs, np.maximum(g_mag, 0.0))
        tt = travel_time(curve, direction)
        results[branch] = (g0, alpha, c_hat, n, not tt.infinite, sdf)

    g0_d, alpha_d, c_d, n_d, fin_d, sdf_d = results["D"]
    g0_e, alpha_e, c_e, n_e, fin_e, sdf_e = results["E"]
    tol = STRICT_SPEED_TOL * vel.bound
    if g0_d < -tol or g0_e > tol:
        regime = "strictly-signed"
    elif (fin_d and alpha_d < 1 - ALPHA_FIT_MARGIN) or (fin_e and alpha_e < 1 - ALPHA_FIT_MARGIN):
        regime = "instant-departure"
    elif not fin_d and not fin_e:
        regime = "pinned-at-zero"
    else:
        regime = "withheld"

    sigma_hat = np.nan
    if perimeter_fit and grid.dim == 2:
        s_vals = np.geomspace(2 * dx, max(min(1e-2, parallel_margin(sdf_e)), 4 * dx), 10)
        pers = np.array([isocontour_length(sdf_e, s) for s in s_vals])
        slope, _, _ = _powerlaw_fit(s_vals, pers)
        sigma_hat = -slope

    return CriticalClassification(h_bar=h_bar, alpha_d=alpha_d, c_d=c_d,
                                  alpha_e=alpha_e, c_e=c_e,
                                  travel_d_finite=fin_d, travel_e_finite=fin_e,
                                  regime=regime, sigma_hat=float(sigma_hat),
                                  n_samples=min(n_d, n_e))


# ---------------------------------------------------------------------------
# the fractal fattening construction


def kruskal_strip_origin(k: int) -> float:
    """Left edge of strip k: strips of width 2^-k tile [0, 2)."""
    return 2.0 - 2.0 ** (1 - k) if k > 0 else 0.0


def build_kruskal_set(depth: int, grid: Grid) -> BinarySet:
    """Union of balls at the centers of the strip-k squares (N_k = 8^k squares
    of side l_k = 4^-k per strip, k <= depth) plus the anchor ball of radius
    1/28 at (-1, 0), restricted to the given grid.

    Ball radii are r_k = l_k/8, a documented convention (the source
    construction leaves them unstated); any r_k <= l_k/2 keeps the character,
    and well-separated balls simplify the perimeter accounting.
    """
    if grid.dim != 2:
        raise ValueError("the construction is 2D")
    if depth > 6:
        raise ValueError("depth <= 6 (cell budget)")
    l_depth = 4.0 ** (-depth)
    if grid.dx > l_depth / 4 + 1e-15:
        raise ResolutionTooCoarse(
            f"dx={grid.dx:g} too coarse for depth {depth}: need <= {l_depth / 4:g}")
    xs = grid.axis_coords(0)
    ys = grid.axis_coords(1)
    mask = np.zeros(grid.shape, dtype=bool)

    # anchor ball
    r_anchor = 1.0 / 28.0
    ix = np.where(np.abs(xs + 1.0) <= r_anchor + grid.dx)[0]
    iy = np.where(np.abs(ys) <= r_anchor + grid.dx)[0]
    if len(ix) and len(iy):
        sub = ((xs[ix][:, None] + 1.0) ** 2 + ys[iy][None, :] ** 2) <= r_anchor**2
        mask[np.ix_(ix, iy)] |= sub

    for k in range(depth + 1):
        lk = 4.0 ** (-k)
        rk = KRUSKAL_RADIUS_FRACTION * lk
        x0 = kruskal_strip_origin(k)
        x1 = x0 + 2.0 ** (-k)
        n_col = 2**k
        n_row = 4**k
        ix = np.where((xs >= x0 - rk - grid.dx) & (xs <= x1 + rk + grid.dx))[0]
        iy = np.where((ys >= -rk - grid.dx) & (ys <= 1.0 + rk + grid.dx))[0]
        if not len(ix) or not len(iy):
            continue
        sx = xs[ix][:, None]
        sy = ys[iy][None, :]
        col = np.clip(np.floor((sx - x0) / lk), 0, n_col - 1)
        row = np.clip(np.floor(sy / lk), 0, n_row - 1)
        cx = x0 + (col + 0.5) * lk
        cy = (row + 0.5) * lk
        sub = (sx - cx) ** 2 + (sy - cy) ** 2 <= rk**2
        mask[np.ix_(ix, iy)] |= sub
    return BinarySet(grid, mask)


# ---------------------------------------------------------------------------
# large-time asymptotics


@dataclass
class AsymptoticsReport:
    times: np.ndarray
    e: np.ndarray                     # sup over the window of |u - h_bar|
    tail_start: float
    lambda_hat: float
    c_hat: float
    floor: float
    stabilization_time: float | None  # first time e drops to the floor
    window_table: list                # (name, lambda_hat) over nested windows


def _fit_tail(times, e, tail_mask, floor):
    usable = tail_mask & (e > floor)
    if usable.sum() < 3:
        raise TailTooShort(f"only {int(usable.sum())} usable tail samples")
    slope, intercept = np.polyfit(times[usable], np.log(e[usable]), 1)
    return -float(slope), float(np.exp(intercept))


def asymptotics(snapshots, h_bar: float, window_mask: np.ndarray,
                floor: float, nested_masks=()) -> AsymptoticsReport:
    """Log-linear decay fit of e(t) = sup_K |u(.,t) - h_bar| on the tail.

    The transient ends when e first drops below half its initial value;
    samples at or below the floor (one level spacing: below it "equals
    h_bar" is not resolvable) are excluded from the fit and define the
    finite-time stabilization moment when present.
    """
    times = np.array([t for t, _ in snapshots], dtype=float)
    if len(times) < 6:
        raise TailTooShort("need at least 6 snapshot times")
    e = np.array([float(np.abs(f.values[window_mask] - h_bar).max())
                  for _, f in snapshots])
    half = 0.5 * e[0]
    below = np.where(e <= half)[0]
    if len(below) == 0:
        raise TailTooShort("e(t) never leaves the transient (no decay observed)")
    tail_start = times[below[0]]
    tail_mask = times >= tail_start
    lam, c_hat = _fit_tail(times, e, tail_mask, floor)
    hit = np.where(e <= floor)[0]
    stabilization = float(times[hit[0]]) if len(hit) else None
    table = []
    for name, mask in nested_masks:
        e_w = np.array([float(np.abs(f.values[mask] - h_bar).max())
                        for _, f in snapshots])
        try:
            lam_w, _ = _fit_tail(times, e_w, times >= tail_start, floor)
        except TailTooShort:
            lam_w = np.nan
        table.append((name, lam_w))
    return AsymptoticsReport(times=times, e=e, tail_start=float(tail_start),
                             lambda_hat=lam, c_hat=c_hat, floor=floor,
                             stabilization_time=stabilization, window_table=table)


# ---------------------------------------------------------------------------
# initial-regularity condition for the decay theorem


@dataclass
class RegInitialResult:
    a: float
    b: float
    s_max: float
    n_samples: int


def check_reg_initial(u0: ScalarField, density: DensityField, vel: VelocitySpec,
                      h_bar: float, b: float, n_h: int = 9,
                      n_s: int = 16) -> RegInitialResult:
    """Largest a with f(h, mu(E_h(s))) - f(h, mu(E_h(0))) >= a s on the
    sampled lattice (h, s) in [h_bar, h_bar + b] x (0, 1/b]; 0 if none.

    The s range is clipped to the grid margin when 1/b would push parallel
    sets onto the frame.
    """
    from .measure import level_is_aligned

    a_best = np.inf
    s_hi = 1.0 / b
    count = 0
    for h in np.linspace(h_bar, h_bar + b, n_h):
        strict, closed = sublevel_sets(u0, float(h))
        sdf = signed_distance(closed)
        pm = ParallelMeasure(sdf, density, branch="E", corrected=True,
                             member_mask=closed.mask,
                             aligned=level_is_aligned(strict.mask, closed.mask))
        s_max = min(s_hi, parallel_margin(sdf))
        s_vals = np.linspace(s_max / n_s, s_max, n_s)
        f0 = float(vel(float(h), pm.mass(0.0)))
        fs = np.asarray(vel(float(h), pm.mass(s_vals)), dtype=float)
        ratios = (fs - f0) / s_vals
        a_best = min(a_best, float(ratios.min()))
        count += len(s_vals)
        s_hi = min(s_hi, s_max)
    return RegInitialResult(a=max(a_best, 0.0), b=b, s_max=s_hi, n_samples=count)


# ---------------------------------------------------------------------------
# closed-form oracles for the two reference examples


@dataclass
class PartialFatteningRef:
    t: float
    h: float
    delta_d: float
    delta_e: float


def paper1d_u0(x):
    """min(|x+1| + 1, |x-2|): the 1D initial datum whose h=1 sublevel is a
    closed interval plus an isolated point."""
    x = np.asarray(x, dtype=float)
    return np.minimum(np.abs(x + 1.0) + 1.0, np.abs(x - 2.0))


def oracle_partial_fattening(t: float, h: float) -> PartialFatteningRef:
    """Exact displacement branches of the 1D example near level 1:
    delta = (e^{4t}-1)(h - 3/4) on the two-component side, (e^{2t}-1)(h - 1/2)
    on the one-component side; the branches disagree exactly at h = 1."""
    if not (0.5 < h < 2.0) or t < 0:
        raise OutOfValidityWindow(f"(t={t}, h={h}) outside the formula window")
    fast = (np.expm1(4 * t)) * (h - 0.75)
    slow = (np.expm1(2 * t)) * (h - 0.5)
    delta_d = fast if h > 1.0 else slow
    delta_e = fast if h >= 1.0 else slow
    if max(abs(delta_d), abs(delta_e)) >= 2.0 - h:
        raise OutOfValidityWindow("components merge: formulas no longer valid")
    return PartialFatteningRef(t=t, h=h, delta_d=float(delta_d), delta_e=float(delta_e))


def oracle_partial_fattening_U(x: float, t: float, h: float, branch: str) -> float:
    """Height functions of the same example: u0(x) - e^{2t}(h-1/2) - 1/2 on
    the slow side, u0(x) - e^{4t}(h-3/4) - 3/4 on the fast side."""
    ref = oracle_partial_fattening(t, h)  # window validation
    fast_side = h > 1.0 if branch == "D" else h >= 1.0
    u0x = float(paper1d_u0(x))
    if fast_side:
        return u0x - np.exp(4 * t) * (h - 0.75) - 0.75
    return u0x - np.exp(2 * t) * (h - 0.5) - 0.5


def oracle_radial_decay(rho0: float, t: float) -> float:
    """Radial trajectory of the 2D decay example with v0 = identity: solves
    e^rho (rho-1)^2 = (rho0-1)^2 e^{rho0-t} on the monotone side containing
    rho0; the solution value is u(x, t) = rho(t) at |x| = rho0.

    Residual of the returned root is verified to 1e-10."""
    if rho0 < 0 or t < 0:
        raise OutOfValidityWindow("need rho0 >= 0 and t >= 0")
    if rho0 == 1.0:
        return 1.0
    target = (rho0 - 1.0) ** 2 * np.exp(rho0 - t)

    def eq(rho):
        return np.exp(rho) * (rho - 1.0) ** 2 - target

    if rho0 > 1.0:
        lo, hi = 1.0, rho0
    else:
        lo, hi = rho0, 1.0
    if eq(lo) == 0.0 or eq(hi) == 0.0:
        rho = lo if eq(lo) == 0.0 else hi
    else:
        rho = brentq(eq, lo, hi, xtol=1e-14, rtol=8.9e-16)
    if abs(eq(rho)) > 1e-10 * max(1.0, target):
        raise OutOfValidityWindow("implicit solve residual exceeds 1e-10")
    return float(rho)
