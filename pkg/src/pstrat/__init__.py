"""pstrat: a numerical laboratory for the quantitative stratification of
singular sets of p-energy minimizing sphere-valued maps."""

from .grid import (DiscretizedMap, GradientField, GridDomain, GridError,
                   Initializer, blow_up, build_map, directional_energy,
                   gradient, load_snapshot, save_snapshot, total_energy)
from .jones import (BallFamily, BetaResult, DisjointnessError, MeasureError,
                    MomentData, ReifenbergReport, WeightedPointMeasure,
                    beta_bruteforce, beta_from_moments, jacobi_eigh,
                    measure_from_balls, moments, packing_bound,
                    rectifiability_diagnostic, reifenberg_check)
from .minimize import (DescentError, DescentSchedule, MinimizeResult,
                       ResidualReport, VectorField, el_residual, minimize,
                       stationarity_defect)
from .monitor import (CutoffError, CutoffProfile, EnergyProfile, MonitorError,
                      StratumQuery, detect_singular, energy_profile,
                      homogeneity_radius_search, invariance_defect,
                      make_cutoff, make_ladder, normalized_energy,
                      normalized_energy_field, normalized_energy_rate,
                      pinched_indices, pinched_sets, pinching,
                      radial_energy_density, stratum_membership)
from .covering import (Ball, CoveringError, CoveringParams, CoveringState,
                       MapThetaOracle, SyntheticOracle, detect_stratum_sample,
                       first_covering, minkowski_estimate, second_covering,
                       stratum_covering)
from .spans import (AffinePlane, SpanError, effective_span, fattening_test,
                    general_position, greedy_span)

__version__ = "0.1.0"
