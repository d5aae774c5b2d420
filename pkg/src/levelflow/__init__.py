"""levelflow: control-based representation of nonlocal level-set evolutions.

The normal velocity of each sublevel set depends on the weighted measure of
the region it encloses; the solution is rebuilt from per-level parallel-set
displacements (an autonomous ODE per level, integrated by travel-time
quadrature) and cross-checked by an independent monotone upwind scheme.
"""

__version__ = "0.1.0"

from .analysis import (AsymptoticsReport, CriticalClassification,
                       FatteningReport, asymptotics, build_kruskal_set,
                       check_reg_initial, classify_critical, fattening_report,
                       oracle_partial_fattening, oracle_radial_decay)
from .delta import (DeltaTable, LevelSetSystem, build_delta_table, solve_delta,
                    travel_time)
from .dynamics import (SpeedCurve, ThresholdResult, VelocitySpec,
                       affine_clamped, find_threshold, from_callable, shifted,
                       speed_curve, tabulated)
from .fdsolver import FdState, fd_run, fd_step
from .geometry import (SteinerFit, parallel_set, perimeter, signed_distance,
                       steiner_check, sublevel_sets)
from .grids import BinarySet, Grid, ScalarField, SignedDistanceField
from .measure import (DensityField, LevelMeasureProfile, ParallelMeasure,
                      cauchy2d, gaussian, lebesgue, mu)
from .reconstruct import (SolutionSnapshot, comparison_check, height_U,
                          level_set_consistency, reconstruct_u)
