"""Takacs-Fiksel estimation for exponential-family Gibbs point processes."""
from .core import Configuration, EmptyWindow, MarkedPoint, NeighborIndex, Window, erode, read_pattern, write_pattern
from .models import (AreaModel, Box, GibbsModel, ModelMismatch, MultiStraussModel, PoissonModel, StraussModel,
                     beta_gamma, model_from_json, theta_from_beta_gamma)
from .sim import SamplerConfig, sample_gibbs, sample_poisson, sample_replicates
from .estimate import (CollarMissing, ContrastReport, DegenerateCounts, NotConverged, QuadratureScheme, contrast,
                       count_Nk, fit_mple, fit_strauss_explicit, fit_tf, residual, volume_Vk)
from .asymptotics import (CovarianceReport, SingularE, TooFewBlocks, estimate_E, estimate_Sigma,
                          sandwich_covariance)
from .diagnostics import DetCheckReport, InsufficientSupport, contrast_profile, det_check, gnz_balance

__version__ = "0.1.0"
