"""Rejective two- and three-phase sampling: designs, balance tests, estimators and variances."""

from .balance import (BalanceCriterion, PhaseChain, derive_phase2_covariate, draw_sequential_tprs, draw_three_phase,
                      draw_tprs, mahalanobis_q, phase2_diff_covariance_general, phase2_diff_covariance_srs,
                      truncate_chain)
from .designs import (DrawnSample, Pairwise, PoissonDesign, SRSDesign, StratifiedDesign, StratumPlan, draw_poisson,
                      draw_srswor, draw_stratified, inclusion_product, make_design, pps_probabilities)
from .errors import RejectiveError
from .estequ import EEFit, EstimatingFunction, ee_variance, solve_ee
from .estimators import (EstimateReport, RegressionFit, fit_regression, hajek_mean, pi_star_mean, ree,
                         regression_estimate_three_phase, regression_estimate_two_phase, regression_weights)
from .ldist import (L_cdf_p1, MixtureSpec, chisq_cdf, chisq_quantile, mixture_draws, mixture_quantile, sample_L,
                    v_pgamma)
from .population import (FinitePopulation, generate_api_like, generate_synthetic, load_population, moments,
                         population_moments)
from .variance import (VarianceComponents, VarianceTerm, confidence_interval, vhat_general, vhat_srs_mean,
                       vhat_srs_reg, vhat_three_phase)

__version__ = "0.1.0"

__all__ = [
    "BalanceCriterion", "PhaseChain", "derive_phase2_covariate", "draw_sequential_tprs", "draw_three_phase",
    "draw_tprs", "mahalanobis_q", "phase2_diff_covariance_general", "phase2_diff_covariance_srs", "truncate_chain",
    "DrawnSample", "Pairwise", "PoissonDesign", "SRSDesign", "StratifiedDesign", "StratumPlan", "draw_poisson",
    "draw_srswor", "draw_stratified", "inclusion_product", "make_design", "pps_probabilities",
    "RejectiveError",
    "EEFit", "EstimatingFunction", "ee_variance", "solve_ee",
    "EstimateReport", "RegressionFit", "fit_regression", "hajek_mean", "pi_star_mean", "ree",
    "regression_estimate_three_phase", "regression_estimate_two_phase", "regression_weights",
    "L_cdf_p1", "MixtureSpec", "chisq_cdf", "chisq_quantile", "mixture_draws", "mixture_quantile", "sample_L",
    "v_pgamma",
    "FinitePopulation", "generate_api_like", "generate_synthetic", "load_population", "moments",
    "population_moments",
    "VarianceComponents", "VarianceTerm", "confidence_interval", "vhat_general", "vhat_srs_mean", "vhat_srs_reg",
    "vhat_three_phase",
]
