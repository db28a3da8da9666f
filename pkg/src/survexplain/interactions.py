"""Friedman H-statistics over time (two-way and total interaction strength)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .core import SurvivalDataset, TimeGrid, as_grid

DEFAULT_EVAL_ROWS = 200
ZERO_VARIANCE = 1e-12


@dataclass
class HStatResult:
    kind: str
    features: tuple
    times: TimeGrid
    values: np.ndarray
    marginal: float
    flag_gt1: np.ndarray = field(default=None)
    rows: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.flag_gt1 is None:
            self.flag_gt1 = np.nan_to_num(self.values) > 1.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "kind": self.kind,
            "features": ":".join(self.features),
            "t": list(self.times.points) + ["marginal"],
            "H2": list(self.values) + [self.marginal],
            "flag_gt1": list(self.flag_gt1) + [bool(self.marginal > 1)],
        })

    def to_dict(self) -> dict:
        return {"kind": self.kind, "features": list(self.features), "t": self.times.points.tolist(),
                "H2": [None if np.isnan(v) else float(v) for v in self.values],
                "marginal": None if np.isnan(self.marginal) else float(self.marginal),
                "flag_gt1": [bool(f) for f in self.flag_gt1]}


def eval_rows(data: SurvivalDataset, size: int = DEFAULT_EVAL_ROWS, seed: int = 0) -> np.ndarray:
    if size >= data.n:
        return np.arange(data.n)
    return np.sort(np.random.default_rng(seed).choice(data.n, size=size, replace=False))


def partial_dependence_at_rows(model, features: pd.DataFrame, cols, times, output="survival") -> np.ndarray:
    """PD_S(x_S^i) for every row i, averaging over the other rows' remaining
    features: returns (rows, times)."""
    n = len(features)
    base = features.iloc[np.tile(np.arange(n), n)].reset_index(drop=True)
    src = features.iloc[np.repeat(np.arange(n), n)].reset_index(drop=True)
    for c in cols:
        base[c] = src[c]
    pred = model.predict(base, times, output)
    return pred.reshape(n, n, -1).mean(axis=1)


def _centered(a):
    return a - a.mean(axis=0, keepdims=True)


def _ratio(num, den, raw):
    # a denominator at rounding level relative to the uncentred values counts as zero
    floor = ZERO_VARIANCE ** 2 * (raw ** 2).sum(axis=0)
    ok = den > floor
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(ok, num / np.where(ok, den, 1.0), np.nan)


def _marginal(values):
    return float(np.nanmean(values)) if np.any(~np.isnan(values)) else np.nan


def h_two_way(model, data: SurvivalDataset, a: str, b: str, times, rows=None, seed: int = 0,
              output: str = "survival") -> HStatResult:
    """Share of the joint (a, b) partial-dependence variance not explained by
    the two one-feature partial dependences."""
    if a == b:
        raise ValueError("features must differ")
    for f in (a, b):
        if f not in data.feature_names:
            raise KeyError(f"unknown feature {f!r}")
    times = as_grid(times)
    rows = eval_rows(data, seed=seed) if rows is None else np.asarray(rows)
    feats = data.features.iloc[rows].reset_index(drop=True)
    raw = partial_dependence_at_rows(model, feats, [a, b], times, output)
    pd_ab = _centered(raw)
    pd_a = _centered(partial_dependence_at_rows(model, feats, [a], times, output))
    pd_b = _centered(partial_dependence_at_rows(model, feats, [b], times, output))
    num = ((pd_ab - pd_a - pd_b) ** 2).sum(axis=0)
    values = _ratio(num, (pd_ab ** 2).sum(axis=0), raw)
    return HStatResult("two-way", (a, b), times, values, _marginal(values), rows=rows)


def h_total(model, data: SurvivalDataset, a: str, times, rows=None, seed: int = 0,
            output: str = "survival") -> HStatResult:
    """Share of prediction variance due to interactions of ``a`` with any other feature."""
    if a not in data.feature_names:
        raise KeyError(f"unknown feature {a!r}")
    times = as_grid(times)
    rows = eval_rows(data, seed=seed) if rows is None else np.asarray(rows)
    feats = data.features.iloc[rows].reset_index(drop=True)
    others = [f for f in data.feature_names if f != a]
    raw = model.predict(feats, times, output)
    f_hat = _centered(raw)
    pd_a = _centered(partial_dependence_at_rows(model, feats, [a], times, output))
    if others:
        pd_rest = _centered(partial_dependence_at_rows(model, feats, others, times, output))
    else:
        pd_rest = np.zeros_like(pd_a)
    num = ((f_hat - pd_a - pd_rest) ** 2).sum(axis=0)
    values = _ratio(num, (f_hat ** 2).sum(axis=0), raw)
    return HStatResult("total", (a,), times, values, _marginal(values), rows=rows)
