"""Self-exciting spatio-temporal point process with a covariate-driven background."""

__version__ = "0.1.0"

from .errors import (ConvergenceError, DomainError, InputError, NumericError, SeppError, SingularCovarianceError,
                     SingularDesignError, SupercriticalError)
from .geometry import CovariateMap, Domain, GridSpec
from .model import EventCatalog, InteriorSpec, ModelParams, compensator, conditional_intensity, log_likelihood
from .em import FitConfig, FitResult, fit
from .inference import CovarianceResult, hessian_covariance, rathbun_covariance
from .simulate import OffspringSpec, SimConfig, SimulationResult, simulate
from .evaluate import aic, delta_aic, fit_poisson_baseline, hit_rate, information_gain, pai
from .residuals import (FITTED_REFERENCE, HOMOGENEOUS_REFERENCE, GammaReference, ResidualMap, fit_gamma_reference,
                        voronoi_residuals)

__all__ = [
    "__version__", "ConvergenceError", "DomainError", "InputError", "NumericError", "SeppError",
    "SingularCovarianceError", "SingularDesignError", "SupercriticalError", "CovariateMap", "Domain", "GridSpec",
    "EventCatalog", "InteriorSpec", "ModelParams", "compensator", "conditional_intensity", "log_likelihood",
    "FitConfig", "FitResult", "fit", "CovarianceResult", "hessian_covariance", "rathbun_covariance",
    "OffspringSpec", "SimConfig", "SimulationResult", "simulate", "aic", "delta_aic", "fit_poisson_baseline",
    "hit_rate", "information_gain", "pai", "FITTED_REFERENCE", "HOMOGENEOUS_REFERENCE", "GammaReference",
    "ResidualMap", "fit_gamma_reference", "voronoi_residuals",
]
