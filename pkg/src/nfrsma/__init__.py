"""Max-min rate-splitting beamfocusing for near-field arrays.

Spherical-wave channel generation with norm-bounded CSI error, worst-case
rate bounds under imperfect interference cancellation, a penalty-based
block-descent solver for the sub-connected hybrid architecture, a
low-complexity two-stage design, and a seeded Monte-Carlo benchmark harness.
"""

__version__ = "0.1.0"

from .model import (SystemConfig, UserGeometry, ChannelSet, near_field_response,
                    far_field_response, channel_gain, sample_channels,
                    sample_error_ball, channel_rng, dbm_to_watt, watt_to_dbm,
                    SPEED_OF_LIGHT)
from .rates import (HybridBeamfocuser, RateAllocation, MaxminReport,
                    effective_noise, stream_rate, common_rate_lb, private_rate_lb,
                    maxmin_objective, hybrid_rates, common_weights, private_weights)
from .surrogate import (SurrogateCoeffs, build_surrogate, build_surrogate_raw,
                        eval_surrogate, surrogate_gradient,
                        check_gradient_consistency, quad_weights, COMMON, PRIVATE)
from .subproblem import (ConvexInstance, SubproblemSolution, KktReport,
                         build_instance, solve_inner, verify_kkt, NumericError)
from .pbcd import (SolverReport, update_analog, update_digital, materialize,
                   default_init, run_sca, run_pbcd)
from .twostage import (RfAllocation, balanced_allocation, matched_analog_block,
                       min_array_gain, swap_optimize, run_twostage)
from .bench import (ExperimentSpec, ResultRow, run_sdma, run_full_digital,
                    run_far_field, run_single, run_experiment, parse_config,
                    verify_suite, main, SCHEMES)
