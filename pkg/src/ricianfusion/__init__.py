"""Channel-aware decision fusion for sensor networks over Rician MIMO links.

Simulates K one-bit sensors transmitting simultaneously to an N-antenna
fusion center, with optional subspace jamming, and evaluates a family of
fusion statistics by Monte Carlo: exact likelihood ratios, moment-matched
quadratic rules, widely-linear rules and jammer-projecting GLRTs.
"""

from .scenario import (DeploymentConfig, JammerScenario, SensorParams,
                       WsnScenario, JAMMER_PRESETS, PRESETS, db_to_lin,
                       generate_jammer, generate_wsn, lin_to_db,
                       load_scenario, preset_config, save_scenario,
                       steering_vector)
from .signal_model import (H0, H1, SecondOrderChar, augment, augment_batch,
                           crandn, draw_decisions, draw_jammed, draw_psi,
                           draw_received, dump_samples, enumerate_decisions,
                           pmf_moments, second_order_char)
from .fusion_rules import (FREE_RULES, DegenerateWeightsError, FusionStatistic,
                           RuleContext, UnsupportedSizeError, evaluate,
                           igmm_rule, is_rule, llr, make_context, nlos_rule,
                           wl_rule, wl_weights)
from .jamming_rules import (JAM_RULES, JammerWorkspace, SigmaPolySolver,
                            build_workspace, clairvoyant_lrt, evaluate_jam,
                            gamma_matrix, igmm_glrt, is_glrt, jammer_permutation,
                            nlos_glrt, nlos_piecewise_reference,
                            solve_sigma_poly)
from .montecarlo import (CSV_COLUMNS, DEFAULT_LEVELS, CalibratedTest, Engine,
                         EquivalenceResult, McEstimate, calibrate_threshold,
                         equivalence_check, estimate_pd0, roc_points, sweep,
                         upper_quantile, write_csv)

__version__ = "0.1.0"
