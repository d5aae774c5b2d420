"""Normal-velocity laws f(r, q), the critical level, and autonomous speed
curves g_h(s) = f(h, mu(W_h(s))) of the displacement ODE.

The critical level h_bar is the unique level where the sublevel-set speed
changes sign, certified by f(h, mu{u0 < h}) <= 0 <= f(h, mu{u0 <= h}).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainOverflow, MonotonicityViolation, NoThreshold, SpeedCurveDescent
from .geometry import parallel_margin, signed_distance, sublevel_sets
from .grids import ScalarField
from .measure import DensityField, LevelMeasureProfile, ParallelMeasure

S_MIN_FACTOR = 0.25      # first geometric sample at dx/4
S_GRID_RATIO = 1.15      # geometric spacing ratio of the s-grid
REARRANGE_TOL = 1e-12    # descents below this * M are floating noise


@dataclass
class VelocitySpec:
    """A velocity law with its monotonicity metadata.

    f must be vectorized in q. bound is the declared M = sup|f| over the
    relevant (r, q) ranges; lipschitz_q is optional declared metadata (a
    modulus of continuity cannot be verified from finitely many samples and
    this artifact does not pretend to).
    """

    f: Callable[[float, np.ndarray], np.ndarray]
    bound: float
    family: str = "custom"
    lipschitz_q: float | None = None
    strict_in_q: bool = True
    strict_q_window: tuple[float, float] | None = None
    f_pairs: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    def __call__(self, r: float, q):
        return self.f(r, q)

    def pairs(self, r: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Elementwise f over matching (r, q) arrays (the FD solver's path)."""
        if self.f_pairs is not None:
            return self.f_pairs(r, q)
        return np.asarray(self.f(r, q), dtype=float)

    def validate(self, r_range: tuple[float, float], q_max: float,
                 n: int = 33) -> None:
        """Sampled monotonicity check: nondecreasing in r, strictly increasing
        in q (where the family claims strictness). Hard error on violation."""
        rs = np.linspace(r_range[0], r_range[1], n)
        qs = np.linspace(0.0, q_max, n)
        eps = 1e-6 * max(q_max, 1e-300)
        vals = np.array([np.asarray(self.f(r, qs), dtype=float) for r in rs])
        if np.any(np.abs(vals) > self.bound * (1 + 1e-9)):
            raise MonotonicityViolation("velocity exceeds its declared bound")
        if np.any(np.diff(vals, axis=0) < -1e-12 * self.bound):
            raise MonotonicityViolation("velocity is decreasing in r")
        bumped = np.array([np.asarray(self.f(r, qs + eps), dtype=float) for r in rs])
        if self.strict_in_q:
            lo, hi = self.strict_q_window or (0.0, q_max)
            window = (qs >= lo) & (qs + eps <= hi)
            if window.any() and not np.all(bumped[:, window] > vals[:, window]):
                raise MonotonicityViolation("velocity is not strictly increasing in q")
        if np.any(bumped < vals - 1e-12 * self.bound):
            raise MonotonicityViolation("velocity is decreasing in q")


def affine_clamped(a: float, b: float, qlo: float, qhi: float) -> VelocitySpec:
    """f(r, q) = clamp(a*q + b, f(qlo), f(qhi)); no r dependence.

    Strict monotonicity in q holds only inside (qlo, qhi); configurations
    must keep the reachable mass range inside the window.
    """
    if a <= 0 or qhi <= qlo:
        raise ValueError("need a > 0 and qhi > qlo")
    flo, fhi = a * qlo + b, a * qhi + b

    def f(r, q):
        return np.clip(a * np.asarray(q, dtype=float) + b, flo, fhi)

    return VelocitySpec(f=f, bound=max(abs(flo), abs(fhi)), family="affine_clamped",
                        lipschitz_q=a, strict_q_window=(qlo, qhi))


def shifted(c: float, r_range: tuple[float, float]) -> VelocitySpec:
    """f(r, q) = r - c: the q-independent degenerate family (h_bar = c)."""
    bound = max(abs(r_range[0] - c), abs(r_range[1] - c))

    def f(r, q):
        r = np.asarray(r, dtype=float)
        q = np.asarray(q, dtype=float)
        return np.broadcast_arrays(r - c, np.zeros_like(q))[0] + np.zeros_like(q)

    return VelocitySpec(f=f, bound=bound, family="shifted",
                        lipschitz_q=0.0, strict_in_q=False)


def tabulated(r_knots, q_knots, table) -> VelocitySpec:
    """Bilinear interpolation on an (r, q) lattice; clamped outside."""
    r_knots = np.asarray(r_knots, dtype=float)
    q_knots = np.asarray(q_knots, dtype=float)
    table = np.asarray(table, dtype=float)
    if table.shape != (len(r_knots), len(q_knots)):
        raise ValueError("table shape must be (len(r_knots), len(q_knots))")
    if len(r_knots) < 2 or len(q_knots) < 2:
        raise ValueError("tabulated laws need at least a 2x2 lattice")

    def f_pairs(r, q):
        r = np.clip(np.asarray(r, dtype=float), r_knots[0], r_knots[-1])
        q = np.clip(np.asarray(q, dtype=float), q_knots[0], q_knots[-1])
        r, q = np.broadcast_arrays(r, q)
        i = np.clip(np.searchsorted(r_knots, r, side="right"), 1, len(r_knots) - 1)
        j = np.clip(np.searchsorted(q_knots, q, side="right"), 1, len(q_knots) - 1)
        wr = (r - r_knots[i - 1]) / (r_knots[i] - r_knots[i - 1])
        wq = (q - q_knots[j - 1]) / (q_knots[j] - q_knots[j - 1])
        v00 = table[i - 1, j - 1]
        v01 = table[i - 1, j]
        v10 = table[i, j - 1]
        v11 = table[i, j]
        return ((1 - wr) * ((1 - wq) * v00 + wq * v01)
                + wr * ((1 - wq) * v10 + wq * v11))

    def f(r, q):
        return f_pairs(r, q)

    return VelocitySpec(f=f, bound=float(np.abs(table).max()), family="tabulated",
                        f_pairs=f_pairs)


def from_callable(f, bound, family="custom", lipschitz_q=None,
                  strict_in_q=True) -> VelocitySpec:
    def fv(r, q):
        return np.asarray(f(r, np.asarray(q, dtype=float)), dtype=float)

    return VelocitySpec(f=fv, bound=bound, family=family,
                        lipschitz_q=lipschitz_q, strict_in_q=strict_in_q)


@dataclass
class ThresholdResult:
    h_bar: float
    f_at_strict: float
    f_at_closed: float
    bracket: float


def find_threshold(u0: ScalarField, density: DensityField, vel: VelocitySpec,
                   tol: float) -> ThresholdResult:
    """Bisection for the critical level on the strictly increasing maps
    phi_D(h) = f(h, mu{u0 < h}) and phi_E(h) = f(h, mu{u0 <= h}).

    Returns an h_bar certified by phi_D(h_bar) <= 0 <= phi_E(h_bar) with
    bracket width <= tol. Raises NoThreshold when the sign-changing regime
    is absent on [min u0, max u0].
    """
    profile = LevelMeasureProfile.build(u0, density)

    def phi_d(h):
        return float(vel(h, profile.strict_mass(h)))

    def phi_e(h):
        return float(vel(h, profile.closed_mass(h)))

    lo = float(u0.values.min())
    hi = float(u0.values.max())
    slack = 1e-12 * vel.bound
    if phi_e(lo) > slack:
        raise NoThreshold(f"phi_E(min u0) = {phi_e(lo):g} > 0: speed never negative")
    if phi_d(hi) < -slack:
        raise NoThreshold(f"phi_D(max u0) = {phi_d(hi):g} < 0: speed never positive")

    def certified(h):
        return phi_d(h) <= slack and phi_e(h) >= -slack

    # bisect on phi_D <= 0 (a down-set in h). On a grid the masses are step
    # functions of h, so the certified set typically collapses to a single
    # jump value of the profile; once the bracket is narrow, the candidates
    # to test are exactly the profile values inside it.
    a, b = lo, hi
    for _ in range(200):
        if b - a <= tol:
            i0 = int(np.searchsorted(profile.values, a - tol))
            i1 = int(np.searchsorted(profile.values, b + tol, side="right"))
            cands = np.concatenate((profile.values[i0:i1],
                                    [a, 0.5 * (a + b), b]))
            good = [c for c in cands if certified(float(c))]
            if good:
                h_bar = float(sorted(good)[len(good) // 2])
                return ThresholdResult(h_bar=h_bar, f_at_strict=phi_d(h_bar),
                                       f_at_closed=phi_e(h_bar), bracket=b - a)
        if b - a < 1e-14 * max(abs(lo), abs(hi), 1.0):
            break
        mid = 0.5 * (a + b)
        if phi_d(mid) <= 0:
            a = mid
        else:
            b = mid
    raise NoThreshold("bisection failed to certify a threshold")


@dataclass
class SpeedCurve:
    """g_h(s) = f(h, mu(W_h(s))) on an s-grid geometrically refined near 0."""

    h: float
    branch: str
    s: np.ndarray
    g: np.ndarray
    bound: float
    dx: float
    raw_descent: float = 0.0

    def g_at_zero(self) -> float:
        i = int(np.searchsorted(self.s, 0.0))
        return float(self.g[i])


def geometric_s_grid(dx: float, s_lo: float, s_hi: float,
                     ratio: float = S_GRID_RATIO) -> np.ndarray:
    """Samples +/- s_min * ratio^j capped at the requested range, plus 0."""
    s_min = S_MIN_FACTOR * dx
    sides = [np.array([0.0])]
    for cap, sign in ((abs(s_lo), -1.0), (abs(s_hi), 1.0)):
        if cap <= 0:
            continue
        vals = [min(s_min, cap)]
        while vals[-1] * ratio < cap:
            vals.append(vals[-1] * ratio)
        if vals[-1] < cap:
            vals.append(cap)
        sides.append(sign * np.asarray(vals))
    s = np.unique(np.concatenate(sides))
    return s


def speed_curve_from_measure(pm: ParallelMeasure, vel: VelocitySpec, h: float,
                             branch: str, s_grid: np.ndarray, dx: float,
                             per_dx_budget: float | None = None) -> SpeedCurve:
    """Evaluate and monotone-rearrange g on a prepared measure structure."""
    masses = pm.mass(s_grid)
    g = np.asarray(vel(h, masses), dtype=float)
    descents = np.maximum(0.0, g[:-1] - g[1:])
    raw_descent = float(descents.max()) if len(descents) else 0.0
    if raw_descent > REARRANGE_TOL * vel.bound:
        # beyond-noise descent: tolerated only inside the geometry/measure
        # error budget 4 * Lip_f * Theta_max * Per * dx when that is known
        if per_dx_budget is not None and raw_descent > per_dx_budget:
            raise SpeedCurveDescent(
                f"speed curve descends by {raw_descent:g} at h={h} ({branch}); "
                f"budget {per_dx_budget:g}; geometry/measure inconsistency")
    g = np.maximum.accumulate(g)
    return SpeedCurve(h=h, branch=branch, s=s_grid, g=g, bound=vel.bound,
                      dx=dx, raw_descent=raw_descent)


def speed_curve(u0: ScalarField, density: DensityField, vel: VelocitySpec,
                h: float, branch: str, s_range: tuple[float, float]) -> SpeedCurve:
    """Build W_h(0) from u0, then sample g_h over s_range.

    Raises DomainOverflow when the requested positive range would push the
    parallel set onto the grid boundary frame.
    """
    from .measure import level_is_aligned

    strict, closed = sublevel_sets(u0, h)
    bset = strict if branch == "D" else closed
    sdf = signed_distance(bset)
    if not sdf.sentinel:
        margin = parallel_margin(sdf)
        if s_range[1] > margin:
            raise DomainOverflow(
                f"s range {s_range[1]:g} exceeds grid margin {margin:g} at h={h}")
    pm = ParallelMeasure(sdf, density, branch=branch, corrected=True,
                         member_mask=bset.mask,
                         aligned=level_is_aligned(strict.mask, closed.mask))
    s_grid = geometric_s_grid(u0.grid.dx, s_range[0], s_range[1])
    budget = None
    if vel.lipschitz_q is not None:
        from .geometry import perimeter

        theta_max = float(density.theta.max())
        per = perimeter(bset) if not (bset.is_empty() or bset.is_full()) else 0.0
        budget = 4.0 * vel.lipschitz_q * theta_max * per * u0.grid.dx
    return speed_curve_from_measure(pm, vel, h, branch, s_grid, u0.grid.dx,
                                    per_dx_budget=budget)
