from .base import FunctionModel, PredictionSurface, SurvivalModel, convert
from .cox import (ConvergenceError, CoxConfig, CoxModel, MonotoneLikelihoodError,
                  breslow_baseline, fit_cox, partial_loglik)
from .io import load_model, model_from_dict, model_to_dict, save_model
from .rsf import RSFConfig, RSFModel, SurvivalTree, fit_rsf

__all__ = [
    "FunctionModel", "PredictionSurface", "SurvivalModel", "convert",
    "ConvergenceError", "CoxConfig", "CoxModel", "MonotoneLikelihoodError",
    "breslow_baseline", "fit_cox", "partial_loglik",
    "load_model", "model_from_dict", "model_to_dict", "save_model",
    "RSFConfig", "RSFModel", "SurvivalTree", "fit_rsf",
]
