from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..core import SURVIVAL_FLOOR, StepCurve, TimeGrid, as_grid


@dataclass(frozen=True)
class PredictionSurface:
    """Model outputs for n instances over m grid times."""

    grid: TimeGrid
    values: np.ndarray
    kind: str

    def __post_init__(self):
        grid = as_grid(self.grid)
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[1] != len(grid):
            raise ValueError("values must be n x len(grid)")
        tol = 1e-12
        if self.kind == "survival":
            if np.any(vals < -tol) or np.any(vals > 1 + tol) or np.any(np.diff(vals, axis=1) > tol):
                raise ValueError("survival rows must lie in [0,1] and be nonincreasing")
        elif self.kind == "chf":
            if np.any(vals < -tol) or np.any(np.diff(vals, axis=1) < -tol):
                raise ValueError("chf rows must be nonnegative and nondecreasing")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", vals)

    def row(self, i: int) -> StepCurve:
        kind = self.kind if self.kind in ("survival", "chf") else "generic"
        return StepCurve(self.grid, self.values[i], kind)


def convert(values: np.ndarray, src: str, dst: str) -> np.ndarray:
    """Convert a prediction matrix between survival / chf / log_chf scales."""
    if src == dst or src == "generic":
        return values
    if src == "chf":
        chf = values
    elif src == "survival":
        chf = -np.log(np.maximum(values, SURVIVAL_FLOOR))
    else:
        raise ValueError(f"cannot convert from {src!r}")
    if dst == "chf":
        return chf
    if dst == "survival":
        return np.exp(-chf)
    if dst == "log_chf":
        return np.log(np.maximum(chf, SURVIVAL_FLOOR))
    raise ValueError(f"unknown output scale {dst!r}")


class SurvivalModel:
    """Black-box interface every explainer consumes.

    Subclasses implement ``_predict_matrix(features, times)`` returning an
    n x m matrix on their ``native_kind`` scale; everything else derives from it.
    """

    native_kind = "chf"

    def _predict_matrix(self, features: pd.DataFrame, times: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict(self, features: pd.DataFrame, times, kind: str = "survival") -> np.ndarray:
        times = as_grid(times).points
        raw = np.asarray(self._predict_matrix(features, times), dtype=float)
        return convert(raw, self.native_kind, kind)

    def predict_surface(self, features: pd.DataFrame, times, kind: str = "survival") -> PredictionSurface:
        grid = as_grid(times)
        out_kind = kind if self.native_kind != "generic" else "generic"
        return PredictionSurface(grid, self.predict(features, grid, kind), out_kind)

    def predict_survival(self, row: pd.DataFrame, times) -> StepCurve:
        return self.predict_surface(_one_row(row), times, "survival").row(0)

    def predict_chf(self, row: pd.DataFrame, times) -> StepCurve:
        return self.predict_surface(_one_row(row), times, "chf").row(0)


def _one_row(row) -> pd.DataFrame:
    if isinstance(row, pd.Series):
        return row.to_frame().T.infer_objects()
    if len(row) != 1:
        raise ValueError("expected a single row")
    return row


class FunctionModel(SurvivalModel):
    """Adapts ``fn(features, times) -> n x m array`` to the model interface.

    With ``kind='generic'`` the raw output is returned whatever scale is
    requested (handy for mock models with known effect shapes).
    """

    def __init__(self, fn, kind: str = "generic"):
        self.fn = fn
        self.native_kind = kind

    def _predict_matrix(self, features, times):
        out = np.asarray(self.fn(features, times), dtype=float)
        if out.ndim == 1:
            out = np.repeat(out[:, None], len(times), axis=1)
        return out
