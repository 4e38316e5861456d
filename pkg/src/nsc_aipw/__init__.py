"""AIPW estimation for non-monotone data missing not at random under no self-censoring."""

from .errors import (BootstrapError, ConvergenceError, DataError, NSCError, NumericalError,
                     PositivityError, SeparationError, SupportError)
from .patterns import (Dataset, PatternId, Record, SupportTable, decode_pattern, encode_pattern,
                       ingest_csv, pattern_support, write_csv)
from .oddsratio import (BasisSpec, OddsRatioSpec, SelectionModel, Term, delta_h_eval, make_basis,
                        odds_ratio_eval, pattern_prob, pattern_prob_all)
from .solve import FitResult, logistic_irls, newton_solve
from .nuisance import (NuisanceDesign, PatternMixtureModel, build_design, fit_feature_means,
                       fit_interactions, fit_or_doubly_robust, fit_pattern_mixture, fit_theta_ipw,
                       fit_univariate_selection)
from .aipw import (EstimateReport, EstimatorConfig, Pipeline, TargetFunctional, bootstrap_ci,
                   cell_odds_ratio, estimate_aipw, estimate_complete_case, estimate_ipw,
                   joint_distribution_binary, sandwich_variance)
from .oracle import (DiscreteLaw, build_discrete_law, mcar_law, random_nsc_law, run_oracle_suite,
                     self_censoring_law, true_functional, verify_double_robustness, verify_identification,
                     verify_if_mean_zero, verify_nsc, verify_u_theta)
from .simgen import (PRESET_CC_LIMITS, PRESET_TRUTHS, BinaryORParams, GaussianCGParams, get_setting,
                     misspecify_covariates, replicate_rng, run_experiment, sample_binary_or,
                     sample_gaussian_cg, setting1, setting2)

__version__ = "0.1.0"
