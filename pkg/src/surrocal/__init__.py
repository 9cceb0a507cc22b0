"""Smooth convex surrogates for structured prediction.

Discrete losses with affine decompositions, calibrated surrogate losses
built from (potential, link) pairs, calibration functions with a brute-force
oracle, and surrogate-risk minimization via averaged SGD and kernel ridge
regression.
"""

from .tasks import (OutputSpace, TaskLoss, AffineDecomposition, build_task,
                    moment, bayes_risk, excess_bayes_risk, oracle_prediction,
                    loss_matrix, task_to_dict, task_from_dict)
from .geometry import (MarginalPolytope, polytope_of, in_calibration_set,
                       calibration_set_distance, cells_adjacent)
from .potentials import Potential, Link, Domain, bregman
from .surrogates import (SurrogateSpec, make_quadratic, make_crf, make_rowcrf,
                         make_margin, make_one_vs_all,
                         make_independent_classifiers, make_at, make_cl,
                         make_by_name, catalog_names, excess_surrogate_risk,
                         recover_potential, check_phi_calibration, crf_map)
from .decoding import (decode_generic, decode_fast, decode_fast_scores,
                       linear_assignment, assignment_by_enumeration)
from .calibration import (CalibrationCurve, NoiseModel, GridSpec,
                          calib_brute_force, brute_force_curve,
                          calib_exact_binary, calib_exact_ova,
                          calib_exact_hamming, calib_exact_quadratic,
                          calib_lower_bound, calib_lower_at, binary_zeta,
                          convex_envelope, low_noise_transform,
                          risk_bound_invert, quadratic_upper_check,
                          hard_margin_certificate, estimate_eps0)
from .learning import (KernelSpec, FunctionEstimate, SyntheticTask,
                       make_synthetic, asgd_train, krr_train, krr_predict,
                       krr_predict_paths, evaluate_risks, median_heuristic,
                       default_radius, eq15_bound)
from .verify import run_suite

__version__ = "0.1.0"
