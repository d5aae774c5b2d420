"""Per-level displacement ODE delta' = g_h(delta), delta(0) = 0.

The integrator is travel-time quadrature: for an autonomous monotone
right-hand side, T(s) = integral of 1/g from 0 to s, and delta(t) = T^{-1}(t).
Convergence or divergence of the improper integral at a degenerate
equilibrium (g(0) = 0) is exactly the minimal/maximal solution selection at
the critical level: a divergent travel time pins the solution at zero, a
convergent one leaves immediately. Time stepping cannot make this selection
reliably, which is why RK4 is demoted to a test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MonotonicityRepairExceeded, SignChange
from .dynamics import (SpeedCurve, VelocitySpec, geometric_s_grid,
                       speed_curve_from_measure)
from .geometry import parallel_margin, signed_distance, sublevel_sets
from .grids import ScalarField, SignedDistanceField
from .measure import DensityField, ParallelMeasure

DIVERGENCE_TIME_FACTOR = 1e6   # travel times beyond this / M count as infinite
RATIO_TEST_THRESHOLD = 0.999   # tail contributions decaying slower are divergent
G0_ZERO_TOL = 1e-9             # |g(0)| <= tol * M is a degenerate equilibrium
G0_SLACK = 1e-6                # wrong-signed g(0) up to slack * M clamps to 0
TAIL_WINDOW_FACTOR = 32        # ratio test window: s in [dx/4, 32 dx]
ISOTONIC_QUALITY_CELLS = 2.0   # repairs beyond this * dx degrade the quality metric
ISOTONIC_ABORT_CELLS = 5.0     # repairs beyond this * dx signal under-resolution


def _chord_integral(a: float, b: float, va: float, vb: float) -> float:
    """Integral of 1/v over [a, b] with v interpolated affinely; exact for
    affine v, third-order accurate on the geometric grid otherwise."""
    if va <= 0 or vb <= 0:
        return np.inf
    if abs(vb - va) <= 1e-14 * va:
        return (b - a) / (0.5 * (va + vb))
    return (b - a) * np.log(vb / va) / (vb - va)


@dataclass
class TravelTime:
    """T(|s|) along one traversal direction; +inf entries mark divergence."""

    a: np.ndarray          # |s| samples, ascending, a[0] = 0
    T: np.ndarray          # travel times, T[0] = 0
    direction: float       # +1 expanding, -1 shrinking
    infinite: bool         # True when the equilibrium is non-integrable
    tail_ratio: float      # measured geometric contribution ratio (degenerate case)
    degenerate: bool

    def displacement(self, t) -> np.ndarray:
        """Invert T (piecewise linear); saturates at the last finite sample."""
        t = np.asarray(t, dtype=float)
        finite = np.isfinite(self.T)
        return self.direction * np.interp(t, self.T[finite], self.a[finite])

    def time_of(self, s_abs: float) -> float:
        finite = np.isfinite(self.T)
        return float(np.interp(s_abs, self.a[finite], self.T[finite]))

    @property
    def t_max(self) -> float:
        finite = np.isfinite(self.T)
        return float(self.T[finite][-1])


def travel_time(curve: SpeedCurve, direction: float) -> TravelTime:
    """Quadrature travel time along one side of a speed curve.

    direction +1 traverses s >= 0 (speed g), -1 traverses s <= 0 (speed -g).
    Preconditions: g has a single sign on the traversed side; violations
    beyond a small slack raise SignChange (the critical level is mislocated
    and the caller must re-bracket).

    Where g vanishes at s = 0 the improper integral is evaluated by the
    geometric-grid tail sum: contributions of successive geometric intervals
    are extrapolated below the first sample as a geometric series with the
    measured ratio. A ratio >= 0.999 on the resolved window, an interior
    zero of the speed, or a tail sum beyond 1e6/M all flag +infinity.
    """
    if direction not in (+1.0, -1.0, 1, -1):
        raise ValueError("direction must be +1 or -1")
    direction = float(direction)
    M = curve.bound
    if direction > 0:
        sel = curve.s >= 0.0
        a = curve.s[sel]
        m = curve.g[sel].copy()
    else:
        sel = curve.s <= 0.0
        a = -curve.s[sel][::-1]
        m = -curve.g[sel][::-1].copy()
    if len(a) < 2:
        raise ValueError("speed curve has no samples on the traversed side")

    if m[0] < -G0_SLACK * M:
        raise SignChange(
            f"speed at s=0 is {direction * m[0]:g} against direction {direction:+.0f} "
            f"at h={curve.h} ({curve.branch})")
    m[0] = max(m[0], 0.0)
    interior = m[1:-1]
    if interior.size and interior.min() < -G0_SLACK * M:
        raise SignChange(f"speed changes sign inside the traversed range at h={curve.h}")
    m = np.maximum(m, 0.0)

    T = np.zeros_like(a)
    degenerate = m[0] <= G0_ZERO_TOL * M
    infinite = False
    tail_ratio = np.nan

    if not degenerate:
        T[1] = _chord_integral(a[0], a[1], m[0], m[1])
        start = 1
    else:
        # contributions of the geometric intervals above the first sample
        contrib = np.array([_chord_integral(a[j], a[j + 1], m[j], m[j + 1])
                            for j in range(1, len(a) - 1)])
        window = a[2:] <= TAIL_WINDOW_FACTOR * 4 * a[1] if len(a) > 2 else np.array([], bool)
        usable = contrib[: max(int(window.sum()), 1)] if contrib.size else contrib
        if contrib.size == 0 or np.any(~np.isfinite(usable)) or np.any(usable <= 0):
            infinite = True
        else:
            if len(usable) >= 2:
                ratios = usable[:-1] / usable[1:]
                tail_ratio = float(np.exp(np.mean(np.log(np.maximum(ratios, 1e-300)))))
            else:
                tail_ratio = 1.0
            if tail_ratio >= RATIO_TEST_THRESHOLD:
                infinite = True
            else:
                tail = usable[0] * tail_ratio / (1.0 - tail_ratio)
                if tail > DIVERGENCE_TIME_FACTOR / M:
                    infinite = True
                else:
                    T[1] = tail
        if infinite:
            T[1:] = np.inf
            return TravelTime(a=a, T=T, direction=direction, infinite=True,
                              tail_ratio=tail_ratio, degenerate=True)
        start = 1

    cap = DIVERGENCE_TIME_FACTOR / M
    for j in range(start, len(a) - 1):
        T[j + 1] = T[j] + _chord_integral(a[j], a[j + 1], m[j], m[j + 1])
        if T[j + 1] > cap:
            T[j + 1:] = np.inf
            break
    return TravelTime(a=a, T=T, direction=direction, infinite=False,
                      tail_ratio=tail_ratio, degenerate=degenerate)


@dataclass
class DeltaSolution:
    times: np.ndarray
    delta: np.ndarray          # +/-inf marks displacement beyond the grid margin
    selection: str             # regular | minimal-at-critical | maximal-at-critical
    case: str                  # regular | pinned | instant | strict
    valid_until: float
    truncated: bool


def solve_delta(curve: SpeedCurve, branch: str, is_critical: bool,
                horizon: float, time_grid: np.ndarray,
                direction: float | None = None, s0: float = 0.0,
                margin: float = np.inf) -> DeltaSolution:
    """Displacement history on time_grid by travel-time inversion.

    At the critical level the branch decides the side: D traverses the
    negative side and realizes the minimal solution, E the positive side and
    the maximal one. A divergent travel time pins delta at zero (the
    Lipschitz right-hand-side regime); a convergent one departs immediately;
    a strictly signed speed at zero integrates as a regular level.

    margin bounds the traversable positive displacement; reaching it
    truncates the solution (delta = +inf past valid_until, the parallel set
    has swallowed the represented domain).
    """
    time_grid = np.asarray(time_grid, dtype=float)
    if direction is None:
        if not is_critical:
            raise ValueError("direction is required for regular levels")
        direction = -1.0 if branch == "D" else +1.0
    tt = travel_time(curve, direction)

    if is_critical:
        selection = "minimal-at-critical" if branch == "D" else "maximal-at-critical"
    else:
        selection = "regular"

    if tt.infinite:
        return DeltaSolution(times=time_grid, delta=np.zeros_like(time_grid),
                             selection=selection, case="pinned" if is_critical else "regular",
                             valid_until=horizon, truncated=False)

    if is_critical:
        case = "instant" if tt.degenerate else "strict"
    else:
        case = "regular"

    t_offset = tt.time_of(abs(s0)) if s0 else 0.0
    reach = tt.a[np.isfinite(tt.T)][-1]
    # only a growing front can leave the grid; an interior equilibrium just
    # saturates the displacement and is not a truncation
    margin_hit = direction > 0 and reach >= margin * (1 - 1e-12)
    if margin_hit:
        valid_until = min(tt.time_of(min(margin, reach)) - t_offset, horizon)
    else:
        valid_until = horizon
    delta = tt.displacement(time_grid + t_offset)
    truncated = valid_until < horizon
    if truncated:
        delta = np.where(time_grid > valid_until, direction * np.inf, delta)
    return DeltaSolution(times=time_grid, delta=delta, selection=selection,
                         case=case, valid_until=valid_until, truncated=truncated)


def isotonic_nondecreasing(v: np.ndarray) -> np.ndarray:
    """L2 pool-adjacent-violators projection onto nondecreasing sequences."""
    n = len(v)
    result = v.astype(float).copy()
    weight = np.ones(n)
    # block-merge scan
    values = []
    weights = []
    for i in range(n):
        values.append(result[i])
        weights.append(1.0)
        while len(values) > 1 and values[-2] > values[-1]:
            w = weights[-1] + weights[-2]
            val = (values[-1] * weights[-1] + values[-2] * weights[-2]) / w
            values = values[:-2] + [val]
            weights = weights[:-2] + [w]
    out = np.empty(n)
    pos = 0
    for val, w in zip(values, weights):
        out[pos:pos + int(w)] = val
        pos += int(w)
    return out


class LevelSetSystem:
    """Per-level sublevel sets, signed distances, and measure structures.

    This is the shared cache between the delta table builder and the
    reconstruction: one D-field and one E-field per level, O(L*N) memory
    (float32) when it fits the budget, recomputed on demand otherwise.
    """

    def __init__(self, u0: ScalarField, density: DensityField,
                 levels: np.ndarray, h_bar: float,
                 cache_budget: int = 2_000_000_000):
        self.u0 = u0
        self.density = density
        self.levels = np.asarray(levels, dtype=float)
        if not np.all(np.diff(self.levels) > 0):
            raise ValueError("levels must be strictly increasing")
        self.h_bar = float(h_bar)
        n_bytes = 2 * len(self.levels) * u0.grid.n_cells * 4
        self._cache_enabled = n_bytes <= cache_budget
        self._sd_cache: dict[tuple[str, int], np.ndarray] = {}
        self._margin_cache: dict[tuple[str, int], float] = {}

    @property
    def grid(self):
        return self.u0.grid

    def level_index(self, h: float) -> int:
        k = int(np.searchsorted(self.levels, h))
        if k >= len(self.levels) or self.levels[k] != h:
            raise KeyError(f"h={h} is not a table level")
        return k

    def _build_sd(self, branch: str, k: int) -> SignedDistanceField:
        strict, closed = sublevel_sets(self.u0, float(self.levels[k]))
        return signed_distance(strict if branch == "D" else closed)

    def sd_values(self, branch: str, k: int) -> np.ndarray:
        key = (branch, k)
        if key in self._sd_cache:
            return self._sd_cache[key]
        sdf = self._build_sd(branch, k)
        vals = sdf.values
        self._margin_cache[key] = parallel_margin(sdf) if not sdf.sentinel else np.inf
        if self._cache_enabled:
            vals32 = vals.astype(np.float32)
            self._sd_cache[key] = vals32
            return vals32
        return vals

    def sdf(self, branch: str, k: int) -> SignedDistanceField:
        strict, closed = sublevel_sets(self.u0, float(self.levels[k]))
        return signed_distance(strict if branch == "D" else closed)

    def margin(self, branch: str, k: int) -> float:
        key = (branch, k)
        if key not in self._margin_cache:
            self.sd_values(branch, k)
        return self._margin_cache[key]

    def parallel_measure(self, branch: str, k: int) -> ParallelMeasure:
        from .measure import level_is_aligned

        strict, closed = sublevel_sets(self.u0, float(self.levels[k]))
        bset = strict if branch == "D" else closed
        sdf = signed_distance(bset)
        key = (branch, k)
        self._margin_cache[key] = parallel_margin(sdf) if not sdf.sentinel else np.inf
        return ParallelMeasure(sdf, self.density, branch=branch, corrected=True,
                               member_mask=bset.mask,
                               aligned=level_is_aligned(strict.mask, closed.mask))


@dataclass
class DeltaTable:
    """delta_W(t, h) on a (branch, level, time) lattice with selection tags."""

    levels: np.ndarray
    times: np.ndarray
    delta: np.ndarray           # shape (2, K, M); 0 = D, 1 = E
    selection: list
    case: list
    valid_until: np.ndarray     # shape (2, K)
    repair: np.ndarray          # shape (2, K), isotonic projection magnitude
    h_bar: float
    bound: float

    BRANCHES = ("D", "E")

    def branch_index(self, branch: str) -> int:
        return self.BRANCHES.index(branch)

    def delta_at(self, branch: str, h: float, t) -> float:
        """Linear interpolation in t and h. OutOfTable outside the lattice."""
        from .errors import OutOfTable

        b = self.branch_index(branch)
        t = float(t)
        if not (self.times[0] - 1e-12 <= t <= self.times[-1] + 1e-12):
            raise OutOfTable(f"t={t} outside table times")
        if not (self.levels[0] - 1e-12 <= h <= self.levels[-1] + 1e-12):
            raise OutOfTable(f"h={h} outside table levels")
        k = int(np.clip(np.searchsorted(self.levels, h) - 1, 0, len(self.levels) - 2))
        w = (h - self.levels[k]) / (self.levels[k + 1] - self.levels[k])
        w = float(np.clip(w, 0.0, 1.0))
        row = (1 - w) * self.delta[b, k] + w * self.delta[b, k + 1]
        return float(np.interp(t, self.times, row))

    def gap(self) -> np.ndarray:
        """delta_E - delta_D per (level, time); the fattening indicator."""
        with np.errstate(invalid="ignore"):
            return self.delta[1] - self.delta[0]

    def max_lipschitz_excess(self) -> float:
        """max |d delta| - M dt over finite table entries (should be <= 0)."""
        dt = np.diff(self.times)
        dlt = np.diff(self.delta, axis=2)
        finite = np.isfinite(dlt)
        excess = np.abs(np.where(finite, dlt, 0.0)) - self.bound * dt
        return float(excess.max())

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("branch,h,t,delta,selection,repair\n")
            for b, name in enumerate(self.BRANCHES):
                for k, h in enumerate(self.levels):
                    for m, t in enumerate(self.times):
                        fh.write(f"{name},{h!r},{t!r},{self.delta[b, k, m]!r},"
                                 f"{self.selection[b][k]},{self.repair[b, k]!r}\n")


def _solve_level(system: LevelSetSystem, vel: VelocitySpec, k: int,
                 time_grid: np.ndarray, horizon: float, crit_level_tol: float):
    h = float(system.levels[k])
    dx = system.grid.dx
    scale = max(abs(system.levels[0]), abs(system.levels[-1]), 1.0)
    is_crit = abs(h - system.h_bar) <= crit_level_tol * scale
    out = []
    for branch in DeltaTable.BRANCHES:
        pm = system.parallel_measure(branch, k)
        margin = system.margin(branch, k)
        # the traversal side follows the measured speed at zero: the sign of
        # h - h_bar is equivalent in the continuum but h_bar carries the
        # uncorrected-profile convention, which can disagree within one cell
        # of the critical level
        g0 = float(vel(h, pm.mass(0.0)))
        tol0 = G0_ZERO_TOL * vel.bound
        if is_crit:
            if branch == "D":
                direction = +1.0 if g0 > tol0 else -1.0
            else:
                direction = -1.0 if g0 < -tol0 else +1.0
        elif abs(g0) > tol0:
            direction = 1.0 if g0 > 0 else -1.0
        else:
            direction = 1.0 if h > system.h_bar else -1.0
        reach = vel.bound * horizon + 4 * dx
        if direction > 0:
            s_grid = geometric_s_grid(dx, 0.0, min(reach, max(margin, dx)))
        else:
            s_grid = geometric_s_grid(dx, -reach, 0.0)
        curve = speed_curve_from_measure(pm, vel, h, branch, s_grid, dx)
        out.append(solve_delta(curve, branch, is_crit, horizon, time_grid,
                               direction=direction, margin=margin))
    return out


def build_delta_table(system: LevelSetSystem, vel: VelocitySpec,
                      time_grid: np.ndarray, crit_level_tol: float = 1e-12,
                      workers: int = 1) -> DeltaTable:
    """Solve the displacement ODE for every level and branch and assemble the
    table, enforcing the cross-level monotonicity and branch ordering by
    isotonic projection (logged, never silent).

    Levels are independent; workers > 1 maps them over a thread pool with
    read-only shared inputs (assembly stays by index, so results do not
    depend on scheduling).
    """
    time_grid = np.asarray(time_grid, dtype=float)
    if time_grid[0] != 0.0 or np.any(np.diff(time_grid) <= 0):
        raise ValueError("time grid must start at 0 and increase")
    horizon = float(time_grid[-1])
    levels = system.levels
    K, M2 = len(levels), len(time_grid)
    dx = system.grid.dx
    delta = np.zeros((2, K, M2))
    selection = [["regular"] * K for _ in range(2)]
    case = [["regular"] * K for _ in range(2)]
    valid_until = np.full((2, K), horizon)
    repair = np.zeros((2, K))

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            solved = list(pool.map(
                lambda k: _solve_level(system, vel, k, time_grid, horizon,
                                       crit_level_tol), range(K)))
    else:
        solved = [_solve_level(system, vel, k, time_grid, horizon,
                               crit_level_tol) for k in range(K)]

    for k in range(K):
        for b in range(2):
            sol = solved[k][b]
            delta[b, k] = sol.delta
            selection[b][k] = sol.selection
            case[b][k] = sol.case
            valid_until[b, k] = sol.valid_until

    # cross-level monotonicity (delta nondecreasing in h on each branch)
    for b in range(2):
        for m in range(M2):
            col = delta[b, :, m]
            finite = np.isfinite(col)
            if finite.sum() >= 2:
                proj = isotonic_nondecreasing(col[finite])
                moved = np.abs(proj - col[finite])
                if moved.max() > 0:
                    repair[b, finite] = np.maximum(repair[b, finite], moved)
                    col[finite] = proj
    # branch ordering delta_D <= delta_E
    with np.errstate(invalid="ignore"):
        viol = delta[0] - delta[1]
    viol_mask = np.isfinite(viol) & (viol > 0)
    if viol_mask.any():
        repair[0] = np.maximum(repair[0], np.where(viol_mask, viol, 0.0).max(axis=1))
        delta[0] = np.where(viol_mask, delta[1], delta[0])

    if repair.max() > ISOTONIC_ABORT_CELLS * dx:
        raise MonotonicityRepairExceeded(
            f"isotonic repair moved a delta value by {repair.max():g} "
            f"> {ISOTONIC_ABORT_CELLS} dx; the level evolution is under-resolved")

    return DeltaTable(levels=levels, times=time_grid, delta=delta,
                      selection=selection, case=case, valid_until=valid_until,
                      repair=repair, h_bar=system.h_bar, bound=vel.bound)
