"""Grid-based feature effects over time: ICE, PDP (plain and centred),
time-marginalised curves, M-plots and accumulated local effects."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .core import SurvivalDataset, TimeGrid, as_grid
from .dataio import set_feature

GRID_KINDS = ("equidistant", "quantile", "sample", "levels", "ale-bounds")
ALE_LOWER_OFFSET = 1e-9


@dataclass(frozen=True)
class EffectGrid:
    feature: str
    kind: str
    points: tuple

    def __post_init__(self):
        if self.kind not in GRID_KINDS:
            raise ValueError(f"unknown grid kind {self.kind!r}")
        pts = tuple(self.points)
        if self.kind not in ("levels",) and np.any(np.diff(np.asarray(pts, float)) <= 0):
            raise ValueError("numeric grid points must be strictly ascending")
        object.__setattr__(self, "points", pts)

    @property
    def categorical(self) -> bool:
        return self.kind == "levels"

    def __len__(self):
        return len(self.points)


def build_grid(data: SurvivalDataset, feature: str, kind: str = "quantile", g: int = 20,
               seed: int = 0) -> EffectGrid:
    if feature not in data.feature_names:
        raise KeyError(f"unknown feature {feature!r}")
    if data.is_categorical(feature) or kind == "levels":
        if not data.is_categorical(feature):
            raise ValueError("level grids need a categorical feature")
        present = set(data.features[feature].astype(object))
        return EffectGrid(feature, "levels", tuple(lv for lv in data.levels(feature) if lv in present))
    if g < 2:
        raise ValueError("numeric grids need g >= 2")
    x = data.features[feature].to_numpy(float)
    if np.ptp(x) == 0:
        warnings.warn(f"feature {feature!r} is constant; single-point grid", stacklevel=2)
        return EffectGrid(feature, kind, (float(x[0]),))
    if kind == "equidistant":
        pts = np.linspace(x.min(), x.max(), g)
    elif kind == "quantile":
        pts = np.unique(np.quantile(x, np.linspace(0, 1, g)))
    elif kind == "sample":
        uniq = np.unique(x)
        rng = np.random.default_rng(seed)
        pts = np.sort(rng.choice(uniq, size=min(g, len(uniq)), replace=False))
    else:
        raise ValueError(f"unknown grid kind {kind!r}")
    return EffectGrid(feature, kind, tuple(float(v) for v in pts))


@dataclass(frozen=True)
class EffectSurface:
    """Effect values indexed ([instance,] grid point[, time]).

    ``values`` has shape (instances, grid, times) for ICE-type surfaces and
    (grid, times) for aggregated ones; marginalising drops the time axis.
    """

    feature: str
    grid: EffectGrid
    times: TimeGrid
    values: np.ndarray
    method: str
    reference: object = None
    marginalized: str = "none"
    instances: tuple | None = None
    extra: dict = field(default_factory=dict)

    @property
    def per_instance(self) -> bool:
        return self.instances is not None

    def to_long(self) -> pd.DataFrame:
        vals = self.values
        if not self.per_instance:
            vals = vals[None]
        if self.marginalized != "none":
            vals = vals[..., None]
            time_labels = [self.marginalized]
        else:
            time_labels = list(self.times.points)
        inst = list(self.instances) if self.per_instance else [""]
        n_i, n_g, n_t = vals.shape
        return pd.DataFrame({
            "feature": self.feature,
            "instance": np.repeat(np.array(inst, dtype=object), n_g * n_t),
            "grid_value": np.tile(np.repeat(np.array(self.grid.points, dtype=object), n_t), n_i),
            "time": np.tile(np.array(time_labels, dtype=object), n_i * n_g),
            "value": vals.reshape(-1),
            "method": self.method,
        })

    def to_dict(self) -> dict:
        return {
            "feature": self.feature, "method": self.method,
            "grid": {"kind": self.grid.kind, "points": list(self.grid.points)},
            "times": self.times.points.tolist(), "marginalized": self.marginalized,
            "reference": self.reference,
            "instances": None if self.instances is None else list(self.instances),
            "values": np.asarray(self.values).tolist(),
        }


def sample_rows(data: SurvivalDataset, size: int = 100, seed: int = 0) -> np.ndarray:
    """Seeded row subsample (all rows when ``size >= n``), in ascending order."""
    if size >= data.n:
        return np.arange(data.n)
    return np.sort(np.random.default_rng(seed).choice(data.n, size=size, replace=False))


def _grid_tensor(model, features: pd.DataFrame, feature: str, values, times, output) -> np.ndarray:
    """Predictions with ``feature`` set to each value in turn: (rows, values, times)."""
    n = len(features)
    batch = pd.concat([set_feature(features, feature, v) for v in values], ignore_index=True)
    pred = model.predict(batch, times, output)
    return pred.reshape(len(values), n, -1).transpose(1, 0, 2)


def _check_reference(grid: EffectGrid, center_at):
    if grid.categorical:
        if center_at not in grid.points:
            raise ValueError("reference level not in grid")
    else:
        lo, hi = min(grid.points), max(grid.points)
        if not lo <= center_at <= hi:
            raise ValueError("reference value outside the grid range")


def ice_curves(model, data: SurvivalDataset, grid: EffectGrid, times, center_at=None, sample=None,
               output: str = "survival") -> EffectSurface:
    times = as_grid(times)
    if grid.feature not in data.feature_names:
        raise KeyError(f"unknown feature {grid.feature!r}")
    rows = np.arange(data.n) if sample is None else np.asarray(sample)
    feats = data.features.iloc[rows].reset_index(drop=True)
    values = list(grid.points)
    if center_at is not None:
        _check_reference(grid, center_at)
        if center_at not in values:
            values.append(center_at)
    try:
        tensor = _grid_tensor(model, feats, grid.feature, values, times, output)
    except Exception as err:
        raise RuntimeError(f"model prediction failed for instances {rows.tolist()[:10]}...: {err}") from err
    method = "ice"
    if center_at is not None:
        ref = tensor[:, values.index(center_at)]
        tensor = tensor[:, :len(grid)] - ref[:, None, :]
        method = "c-ice"
    return EffectSurface(grid.feature, grid, times, tensor, method, center_at,
                         instances=tuple(int(r) for r in rows))


def pdp_curves(model, data: SurvivalDataset, grid: EffectGrid, times, center_at=None, sample=None,
               output: str = "survival") -> EffectSurface:
    ice = ice_curves(model, data, grid, times, center_at, sample, output)
    return pdp_from_ice(ice)


def pdp_from_ice(ice: EffectSurface) -> EffectSurface:
    method = "c-pdp" if ice.method == "c-ice" else "pdp"
    return replace(ice, values=ice.values.mean(axis=0), method=method, instances=None)


def marginalize_time(surface: EffectSurface, mode: str = "mean", weights=None) -> EffectSurface:
    """Collapse the time axis by averaging or summing.

    ``weights`` are per-time multiplicities (e.g. how often each time occurs
    among the observed event times); ``None`` weights every grid time once.
    """
    if surface.marginalized != "none":
        raise ValueError("surface is already marginalised over time")
    w = np.ones(len(surface.times)) if weights is None else np.asarray(weights, float)
    if w.shape != (len(surface.times),):
        raise ValueError("one weight per time point required")
    if mode == "mean":
        vals = surface.values @ w / w.sum()
    elif mode == "sum":
        vals = surface.values @ w
    else:
        raise ValueError("mode must be 'mean' or 'sum'")
    return replace(surface, values=vals, marginalized=f"{mode}-time", method=surface.method + "-t")


def m_plot(model, data: SurvivalDataset, grid: EffectGrid, times, neighborhood: float = 0.1,
           output: str = "survival") -> EffectSurface:
    """Conditional (marginal-plot) effect: average prediction at each grid value
    over the rows whose own feature value lies near it."""
    if not 0 < neighborhood <= 1:
        raise ValueError("neighborhood fraction must be in (0, 1]")
    times = as_grid(times)
    tensor = _grid_tensor(model, data.features, grid.feature, list(grid.points), times, output)
    x = data.features[grid.feature]
    out = np.full(tensor.shape[1:], np.nan)
    sizes = []
    if grid.categorical:
        for k, level in enumerate(grid.points):
            rows = np.flatnonzero(x.astype(object).to_numpy() == level)
            sizes.append(len(rows))
            if len(rows):
                out[k] = tensor[rows, k].mean(axis=0)
    else:
        xv = x.to_numpy(float)
        order = np.argsort(xv, kind="stable")
        width = min(data.n, int(np.ceil(neighborhood * data.n)))
        for k, v in enumerate(grid.points):
            pos = np.searchsorted(xv[order], v)
            start = int(np.clip(pos - width // 2, 0, data.n - width))
            rows = np.sort(order[start:start + width])
            sizes.append(len(rows))
            if len(rows):
                out[k] = tensor[rows, k].mean(axis=0)
    return EffectSurface(grid.feature, grid, times, out, "mplot", extra={"neighborhood_sizes": sizes})


def ale_bounds(x: np.ndarray, g_intervals: int) -> np.ndarray:
    """Quantile interval bounds with the lower bound just below the minimum;
    empty intervals are merged into their left neighbour."""
    x = np.asarray(x, float)
    lo, hi = x.min(), x.max()
    q = np.unique(np.quantile(x, np.linspace(0, 1, g_intervals + 1)))
    q[0] = lo - ALE_LOWER_OFFSET * (hi - lo)
    q[-1] = hi
    while True:
        idx = np.searchsorted(q, x, side="left")
        counts = np.bincount(idx, minlength=len(q))[1:]
        empty = np.flatnonzero(counts == 0)
        if not len(empty):
            return q
        k = empty[0] + 1
        q = np.delete(q, k - 1 if k > 1 else k)


def _ale_from_diffs(diffs, interval, n_intervals):
    """Accumulate per-interval mean differences; returns values at the bounds
    (first is 0) and the interval counts."""
    counts = np.bincount(interval, minlength=n_intervals + 1)[1:]
    sums = np.zeros((n_intervals,) + diffs.shape[1:])
    np.add.at(sums, interval - 1, diffs)
    local = sums / counts.reshape((-1,) + (1,) * (diffs.ndim - 1))
    acc = np.concatenate([np.zeros((1,) + diffs.shape[1:]), np.cumsum(local, axis=0)])
    return acc, counts


def _center_ale(acc, counts):
    # each observation sits at the accumulated value of its interval's upper bound
    mean = np.tensordot(counts, acc[1:], axes=(0, 0)) / counts.sum()
    return acc - mean


def _ale_setup(model, data, feature, g_intervals, order):
    x = data.features[feature]
    if data.is_categorical(feature):
        levels = list(order) if order is not None else order_categories(data, feature)
        present = [lv for lv in levels if (x.astype(object) == lv).any()]
        if len(present) < 2:
            raise ValueError("ALE needs at least two distinct values")
        pos = {lv: k for k, lv in enumerate(present)}
        interval = np.array([pos[v] for v in x.astype(object)])
        keep = interval > 0
        grid = EffectGrid(feature, "levels", tuple(present))
        upper = [present[k] for k in interval[keep]]
        lower = [present[k - 1] for k in interval[keep]]
        return grid, interval, keep, upper, lower, len(present) - 1
    xv = x.to_numpy(float)
    if len(np.unique(xv)) < 2:
        raise ValueError("ALE needs at least two distinct values")
    q = ale_bounds(xv, g_intervals)
    interval = np.searchsorted(q, xv, side="left")
    keep = np.ones(len(xv), bool)
    grid = EffectGrid(feature, "ale-bounds", tuple(float(v) for v in q))
    return grid, interval, keep, q[interval], q[interval - 1], len(q) - 1


def _ale_diffs(model, data, feature, keep, upper, lower, times, output):
    feats = data.features[keep].reset_index(drop=True)
    n = len(feats)
    batch = pd.concat([set_feature(feats, feature, upper), set_feature(feats, feature, lower)],
                      ignore_index=True)
    pred = model.predict(batch, times, output)
    return pred[:n] - pred[n:]


def ale_curves(model, data: SurvivalDataset, feature: str, times, g_intervals: int = 10,
               centered: bool = True, output: str = "survival", order=None) -> EffectSurface:
    """First-order ALE at each time. Numeric features use quantile intervals;
    categorical features use the level order from ``order_categories`` (or ``order``)."""
    times = as_grid(times)
    grid, interval, keep, upper, lower, n_int = _ale_setup(model, data, feature, g_intervals, order)
    diffs = _ale_diffs(model, data, feature, keep, upper, lower, times, output)
    if grid.categorical:
        acc, counts = _ale_from_diffs(diffs, interval[keep], n_int)
        counts = np.bincount(interval, minlength=n_int + 1)
        vals = acc - (np.tensordot(counts, acc, axes=(0, 0)) / counts.sum() if centered else 0.0)
        counts_out = counts
    else:
        acc, counts = _ale_from_diffs(diffs, interval, n_int)
        vals = _center_ale(acc, counts) if centered else acc
        counts_out = np.concatenate([[0], counts])
    method = "ale-centered" if centered else "ale-uncentered"
    return EffectSurface(feature, grid, times, vals, method, extra={"counts": counts_out.tolist()})


def ale_t(model, data: SurvivalDataset, feature: str, times, mode: str = "mean", weights=None,
          g_intervals: int = 10, centered: bool = False, output: str = "survival", order=None) -> EffectSurface:
    """Time-marginalised ALE: the finite differences are averaged (or summed)
    over time before accumulation."""
    times = as_grid(times)
    w = np.ones(len(times)) if weights is None else np.asarray(weights, float)
    grid, interval, keep, upper, lower, n_int = _ale_setup(model, data, feature, g_intervals, order)
    diffs = _ale_diffs(model, data, feature, keep, upper, lower, times, output)
    if mode == "mean":
        d = diffs @ w / w.sum()
    elif mode == "sum":
        d = diffs @ w
    else:
        raise ValueError("mode must be 'mean' or 'sum'")
    if grid.categorical:
        acc, _ = _ale_from_diffs(d, interval[keep], n_int)
        counts = np.bincount(interval, minlength=n_int + 1)
        vals = acc - (counts @ acc / counts.sum() if centered else 0.0)
    else:
        acc, counts = _ale_from_diffs(d, interval, n_int)
        vals = _center_ale(acc, counts) if centered else acc
    method = ("ale-centered" if centered else "ale-uncentered") + "-t"
    return EffectSurface(feature, grid, times, vals, method, marginalized=f"{mode}-time")


def _ks_distance(a, b) -> float:
    a, b = np.sort(a), np.sort(b)
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / len(a)
    fb = np.searchsorted(b, pts, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


def category_distances(data: SurvivalDataset, feature: str, levels=None) -> np.ndarray:
    """Pairwise level distances summed over the other features: Kolmogorov-
    Smirnov for numeric features, total variation for categorical ones."""
    x = data.features[feature].astype(object).to_numpy()
    levels = levels if levels is not None else [lv for lv in data.levels(feature) if np.any(x == lv)]
    L = len(levels)
    D = np.zeros((L, L))
    for other in data.feature_names:
        if other == feature:
            continue
        col = data.features[other]
        groups = [col[x == lv] for lv in levels]
        if data.is_categorical(other):
            cats = data.levels(other)
            freqs = [g.value_counts(normalize=True).reindex(cats, fill_value=0).to_numpy() for g in groups]
            dist = lambda i, j: 0.5 * np.abs(freqs[i] - freqs[j]).sum()  # noqa: E731
        else:
            vals = [g.to_numpy(float) for g in groups]
            dist = lambda i, j: _ks_distance(vals[i], vals[j])  # noqa: E731
        for i in range(L):
            for j in range(i + 1, L):
                d = dist(i, j)
                D[i, j] += d
                D[j, i] += d
    return D


def mds_1d(D: np.ndarray) -> np.ndarray:
    """Classical multidimensional scaling onto one coordinate."""
    L = len(D)
    J = np.eye(L) - 1.0 / L
    B = -0.5 * J @ (D ** 2) @ J
    vals, vecs = np.linalg.eigh(B)
    coord = vecs[:, -1] * np.sqrt(max(vals[-1], 0.0))
    if coord[0] > 0:
        coord = -coord
    return coord


def order_categories(data: SurvivalDataset, feature: str) -> list:
    if not data.is_categorical(feature):
        raise ValueError("ordering applies to categorical features")
    x = data.features[feature].astype(object).to_numpy()
    levels = [lv for lv in data.levels(feature) if np.any(x == lv)]
    if len(levels) < 2:
        raise ValueError("need at least two observed levels")
    coord = mds_1d(category_distances(data, feature, levels))
    order = np.argsort(coord, kind="stable")
    return [levels[k] for k in order]
