"""Numerical laboratory for the sharp-interface limit of a delayed
monostable reaction-diffusion equation."""

from .dde import HistorySegment, decay_rate, generation_time, semiflow_bounds, solve_dde
from .harness import ExperimentConfig, RunManifest, __version__, run_experiment, sweep
from .interface import (BarrierParams, CutoffDistance, FreeBoundaryRef, build_subsolution,
                        build_supersolution, extract_front, front_tracking_error,
                        generation_lower_bound, theorem1_metrics, verify_bracketing)
from .nonlinearity import (Nonlinearity, build_bistable_extension, check_family_order,
                           ricker_normalized, validate_bistable, validate_monostable)
from .rdsolver import SpatialGrid, build_initial_data, comparison_check, solve_scaled
from .waves import (DispersionSolution, WaveSpeedResult, bistable_speed, extract_profile,
                    measure_front_speed, minimal_speed_dispersion, speed_convergence_study)
