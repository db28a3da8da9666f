"""Model-agnostic explanations for survival models."""

__version__ = "0.1.0"

from .core import (SurvivalDataset, StepCurve, TimeGrid, kaplan_meier, nelson_aalen,  # noqa: E402
                   default_eval_grid, unique_event_times)

__all__ = ["SurvivalDataset", "StepCurve", "TimeGrid", "kaplan_meier", "nelson_aalen",
           "default_eval_grid", "unique_event_times", "__version__"]
