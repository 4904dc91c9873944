"""Partially linear hazard regression with a neural nuisance component.

The log-hazard is ``theta'Z + g(t, X)``: ``theta`` is estimated with
root-n inference while ``g`` is a ReLU network trained on a discretized
full likelihood.
"""

__version__ = "0.1.0"

from .data import (ExpandedRows, SurvivalData, SurvivalRecord, TimeGrid, build_grid, expand,
                   load_csv, write_csv)
from .errors import (ConfigurationError, EstimationError, FlexiHazError, InferenceError,
                     IngestionError, NumericalError, ShapeError, TrainingError)
from .fit import FitConfig, FitResult, cox_fit, refine_theta, train
from .inference import (InformationEstimate, ProjectionModel, cross_fit_residuals,
                        estimate_information, fit_projection, information, wald_ci)
from .likelihood import LossReport, ModelState, loss_gradients, neg_loglik, theta_hessian
from .nn import AdamState, MlpParams, adam_step, backward, forward, init_params
from .simstudy import ReplicationReport, replicate
from .simulate import SimConfig, f_nuisance, sample_event_time, simulate

__all__ = [name for name in dir() if not name.startswith("_")]
