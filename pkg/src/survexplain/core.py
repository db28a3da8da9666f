"""Basic survival quantities: datasets, time grids, step curves and the
nonparametric Kaplan-Meier / Nelson-Aalen estimators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

SURVIVAL_FLOOR = 1e-12

CURVE_KINDS = ("survival", "chf", "generic")


class NoEventsError(ValueError):
    pass


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SurvivalDataset:
    """Feature table plus observed time and event indicator per row.

    Categorical columns are stored with pandas ``CategoricalDtype`` whose
    categories are the column's level list; every other column is numeric.
    """

    features: pd.DataFrame
    time: np.ndarray
    event: np.ndarray

    def __post_init__(self):
        feats = self.features.reset_index(drop=True)
        time = np.asarray(self.time, dtype=float).copy()
        event = np.asarray(self.event)
        n = len(feats)
        if n < 1 or feats.shape[1] < 1:
            raise ValueError("dataset needs at least one row and one feature")
        if time.shape != (n,) or event.shape != (n,):
            raise ValueError("time and event must have one entry per row")
        if not np.all(np.isfinite(time)) or np.any(time < 0):
            raise ValueError("times must be finite and nonnegative")
        if not np.all(np.isin(event, (0, 1))):
            raise ValueError("event indicator must be 0 or 1")
        event = event.astype(int)
        if event.sum() == 0:
            raise NoEventsError("no observed events")
        for name in feats.columns:
            col = feats[name]
            if isinstance(col.dtype, pd.CategoricalDtype):
                if col.isna().any():
                    raise ValueError(f"column {name!r} has values outside its level list")
            else:
                vals = pd.to_numeric(col, errors="raise").astype(float)
                if not np.all(np.isfinite(vals.to_numpy())):
                    raise ValueError(f"column {name!r} has non-finite values")
                feats[name] = vals
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "time", _freeze(time))
        object.__setattr__(self, "event", _freeze(event))

    @property
    def n(self) -> int:
        return len(self.features)

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def feature_names(self) -> list[str]:
        return [str(c) for c in self.features.columns]

    def is_categorical(self, name: str) -> bool:
        return isinstance(self.features[name].dtype, pd.CategoricalDtype)

    def levels(self, name: str) -> list:
        return list(self.features[name].cat.categories)

    def subset(self, rows) -> "SurvivalDataset":
        rows = np.asarray(rows)
        return SurvivalDataset(self.features.iloc[rows].reset_index(drop=True),
                               self.time[rows], self.event[rows])

    def with_features(self, features: pd.DataFrame) -> "SurvivalDataset":
        return SurvivalDataset(features, self.time, self.event)

    def drop_feature(self, name: str) -> "SurvivalDataset":
        return self.with_features(self.features.drop(columns=[name]))


@dataclass(frozen=True)
class TimeGrid:
    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_1d(np.asarray(self.points, dtype=float)).copy()
        if pts.ndim != 1 or len(pts) == 0:
            raise ValueError("time grid must be a nonempty 1-d sequence")
        if not np.all(np.isfinite(pts)) or np.any(pts < 0):
            raise ValueError("time grid points must be finite and nonnegative")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("time grid must be strictly increasing")
        object.__setattr__(self, "points", _freeze(pts))

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)


def as_grid(times) -> TimeGrid:
    return times if isinstance(times, TimeGrid) else TimeGrid(times)


@dataclass(frozen=True)
class StepCurve:
    """Right-continuous step function on a time grid.

    Before the first grid point a survival curve evaluates to 1 and a
    cumulative hazard to 0; generic curves are undefined there (NaN).
    """

    grid: TimeGrid
    values: np.ndarray
    kind: str = "generic"

    def __post_init__(self):
        grid = as_grid(self.grid)
        vals = np.asarray(self.values, dtype=float).copy()
        if vals.shape != (len(grid),):
            raise ValueError("one value per grid point required")
        if self.kind not in CURVE_KINDS:
            raise ValueError(f"unknown curve kind {self.kind!r}")
        tol = 1e-12
        if self.kind == "survival":
            if np.any(vals < -tol) or np.any(vals > 1 + tol) or np.any(np.diff(vals) > tol):
                raise ValueError("survival curve must lie in [0,1] and be nonincreasing")
        elif self.kind == "chf":
            if np.any(vals < -tol) or np.any(np.diff(vals) < -tol):
                raise ValueError("cumulative hazard must be nonnegative and nondecreasing")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", _freeze(vals))

    @property
    def start_value(self) -> float:
        return {"survival": 1.0, "chf": 0.0}.get(self.kind, np.nan)

    def __call__(self, t):
        return step_eval(self.grid.points, self.values, t, self.start_value)

    def left_limit(self, t):
        """Value just before ``t``."""
        t_arr = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.grid.points, t_arr, side="left") - 1
        out = np.where(idx >= 0, self.values[np.clip(idx, 0, None)], self.start_value)
        return out if t_arr.ndim else float(out)


def step_eval(grid: np.ndarray, values: np.ndarray, t, before=np.nan):
    """Right-continuous step interpolation; ``values`` may carry extra leading
    axes, the last axis runs along ``grid``."""
    t_arr = np.asarray(t, dtype=float)
    idx = np.searchsorted(grid, t_arr, side="right") - 1
    vals = np.asarray(values)
    picked = vals[..., np.clip(idx, 0, None)]
    out = np.where(idx >= 0, picked, before)
    if t_arr.ndim == 0 and vals.ndim == 1:
        return float(out)
    return out


def unique_event_times(data: SurvivalDataset, include_censoring_times: bool = False) -> TimeGrid:
    mask = np.ones(data.n, bool) if include_censoring_times else data.event == 1
    if not np.any(data.event == 1):
        raise NoEventsError("no observed events")
    return TimeGrid(np.unique(data.time[mask]))


def risk_table(time, event):
    """Unique times with the number at risk, events and censorings at each."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    uniq, inverse = np.unique(time, return_inverse=True)
    d = np.bincount(inverse, weights=event, minlength=len(uniq))
    total = np.bincount(inverse, minlength=len(uniq)).astype(float)
    at_risk = total[::-1].cumsum()[::-1]
    return uniq, at_risk, d, total - d


def _event_table(data: SurvivalDataset):
    if not np.any(data.event == 1):
        raise NoEventsError("no observed events")
    uniq, at_risk, d, _ = risk_table(data.time, data.event)
    keep = d > 0
    return uniq[keep], at_risk[keep], d[keep]


def kaplan_meier(data: SurvivalDataset) -> StepCurve:
    times, r, d = _event_table(data)
    surv = np.cumprod(1.0 - d / r)
    return StepCurve(TimeGrid(times), np.clip(surv, 0.0, 1.0), "survival")


def nelson_aalen(data: SurvivalDataset) -> StepCurve:
    times, r, d = _event_table(data)
    return StepCurve(TimeGrid(times), np.cumsum(d / r), "chf")


def nelson_aalen_arrays(time, event, weights=None):
    """Nelson-Aalen on raw arrays (optionally frequency weighted); returns
    (event times, chf). Used for tree terminal nodes."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=float)
    w = np.ones_like(time) if weights is None else np.asarray(weights, dtype=float)
    uniq, inverse = np.unique(time, return_inverse=True)
    d = np.bincount(inverse, weights=w * event, minlength=len(uniq))
    tot = np.bincount(inverse, weights=w, minlength=len(uniq))
    r = tot[::-1].cumsum()[::-1]
    keep = d > 0
    return uniq[keep], np.cumsum(d[keep] / r[keep])


def chf_to_survival(curve: StepCurve) -> StepCurve:
    if curve.kind != "chf":
        raise ValueError("expected a cumulative hazard curve")
    return StepCurve(curve.grid, np.exp(-curve.values), "survival")


def survival_to_chf(curve: StepCurve) -> StepCurve:
    if curve.kind != "survival":
        raise ValueError("expected a survival curve")
    return StepCurve(curve.grid, -np.log(np.maximum(curve.values, SURVIVAL_FLOOR)), "chf")


def default_eval_grid(data: SurvivalDataset, upper_quantile: float = 0.95) -> TimeGrid:
    """Unique event times clipped to [first event, upper quantile of observed times]."""
    times = unique_event_times(data).points
    upper = np.quantile(data.time, upper_quantile)
    kept = times[times <= upper]
    return TimeGrid(kept if len(kept) else times[:1])


def thin_grid(grid: TimeGrid, size: int) -> TimeGrid:
    """At most ``size`` points of ``grid``, evenly spaced by index."""
    pts = grid.points
    if size >= len(pts):
        return grid
    idx = np.unique(np.round(np.linspace(0, len(pts) - 1, size)).astype(int))
    return TimeGrid(pts[idx])


def observed_time_weights(data: SurvivalDataset, grid: TimeGrid) -> np.ndarray:
    """Multiplicity of each grid point among the observed event times."""
    ev = data.time[data.event == 1]
    return np.array([np.sum(ev == t) for t in grid.points], dtype=float)
