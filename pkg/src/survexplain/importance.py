"""Loss-based global importance: permutation (PFI), knockoff-based conditional
predictive impact (CPI), leave-one-covariate-out (LOCO) and one-sided tests."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from .core import SurvivalDataset, TimeGrid, as_grid
from .dataio import Encoding
from .metrics import brier_terms, censoring_weights, integrate_curve

MIN_TTEST_N = 30
KNOCKOFF_EIG_FLOOR = 1e-6


class BrierLoss:
    """IPCW Brier loss; per-row contributions (rows x times).

    Censoring weights come from the labels of the dataset passed in, which
    every method leaves untouched."""

    def __call__(self, data: SurvivalDataset, surv: np.ndarray, times) -> np.ndarray:
        G = censoring_weights(data)
        return brier_terms(data.time, data.event, surv, np.asarray(times, float), G).contributions


def _row_aggregate(contrib: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Per-row scalar loss: normalised time integral (or the value itself)."""
    if contrib.ndim == 1:
        return contrib
    if contrib.shape[1] == 1:
        return contrib[:, 0]
    return np.trapezoid(contrib, times, axis=1) / (times[-1] - times[0])


def _curve_aggregate(curve: np.ndarray, times: np.ndarray) -> float:
    if curve.ndim == 0:
        return float(curve)
    return float(curve[0]) if len(curve) == 1 else integrate_curve(times, curve)


def feature_seed(seed: int, name: str, r: int) -> np.random.Generator:
    """Per-(feature, repeat) stream keyed by feature name, so results do not
    depend on feature order."""
    return np.random.default_rng([seed, zlib.crc32(name.encode()), r])


@dataclass
class ImportanceResult:
    method: str
    mode: str
    features: list
    times: TimeGrid
    curves: np.ndarray
    aggregate: np.ndarray
    repeats: int
    samples: dict = field(default_factory=dict)
    p_values: np.ndarray | None = None
    failed: list = field(default_factory=list)

    def value(self, feature: str) -> float:
        return float(self.aggregate[self.features.index(feature)])

    def to_frame(self) -> pd.DataFrame:
        recs = []
        for k, f in enumerate(self.features):
            p = None if self.p_values is None else self.p_values[k]
            for s, t in enumerate(self.times.points):
                recs.append((self.method, f, t, self.curves[k, s], self.mode, p))
            recs.append((self.method, f, "aggregate", self.aggregate[k], self.mode, p))
        return pd.DataFrame(recs, columns=["method", "feature", "t", "value", "mode", "p_value"])

    def to_dict(self) -> dict:
        def clean(v):
            return None if v is None or not np.isfinite(v) else float(v)
        return {
            "method": self.method, "mode": self.mode, "repeats": self.repeats,
            "t": self.times.points.tolist(),
            "features": {f: {"curve": [clean(v) for v in self.curves[k]],
                             "aggregate": clean(self.aggregate[k]),
                             "p_value": None if self.p_values is None else clean(self.p_values[k])}
                         for k, f in enumerate(self.features)},
            "failed": list(self.failed),
        }


def _combine(perm, orig, mode):
    if mode == "difference":
        return perm - orig
    if mode == "quotient":
        with np.errstate(divide="ignore", invalid="ignore"):
            return perm / orig
    raise ValueError("mode must be 'difference' or 'quotient'")


def _loss_rows(loss, data, features, model, times):
    surv = model.predict(features, times, "survival")
    return np.asarray(loss(data, surv, times.points), float)


def _replacement_importance(method, model, data, loss, times, repeats, mode, seed, replace_fn):
    times = as_grid(times)
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    loss = loss or BrierLoss()
    base = _loss_rows(loss, data, data.features, model, times)
    base_curve = base.mean(axis=0)
    base_rows = _row_aggregate(base, times.points)
    base_agg = _curve_aggregate(base_curve, times.points)
    m = len(times) if base.ndim == 2 else 1
    p = data.p
    curves = np.full((p, m), np.nan)
    agg = np.full(p, np.nan)
    samples = {}
    for k, name in enumerate(data.feature_names):
        perm_curves, perm_aggs, row_diffs = [], [], []
        for r in range(repeats):
            feats = replace_fn(name, r)
            try:
                contrib = _loss_rows(loss, data, feats, model, times)
            except Exception:  # loss failure marks the repeat missing
                perm_curves.append(np.full(m, np.nan))
                perm_aggs.append(np.nan)
                continue
            curve = contrib.mean(axis=0)
            perm_curves.append(np.atleast_1d(curve))
            perm_aggs.append(_curve_aggregate(curve, times.points))
            row_diffs.append(_row_aggregate(contrib, times.points) - base_rows)
        perm_curves = np.array(perm_curves)
        perm_aggs = np.array(perm_aggs)
        curves[k] = np.nanmean(_combine(perm_curves, np.atleast_1d(base_curve), mode), axis=0) \
            if np.any(np.isfinite(perm_aggs)) else np.nan
        agg[k] = np.nanmean(_combine(perm_aggs, base_agg, mode)) if np.any(np.isfinite(perm_aggs)) else np.nan
        samples[name] = {"repeat_diffs": perm_aggs - base_agg,
                         "row_diffs": np.mean(row_diffs, axis=0) if row_diffs else np.array([])}
    grid = times if m == len(times) else TimeGrid([times.points[-1]])
    return ImportanceResult(method, mode, list(data.feature_names), grid, curves, agg, repeats, samples)


def pfi(model, data: SurvivalDataset, loss=None, repeats: int = 10, times=None, mode: str = "difference",
        seed: int = 0) -> ImportanceResult:
    """Permutation importance: mean over repeats of L(permuted) - L(original)
    (or the ratio in quotient mode)."""
    def permuted(name, r):
        rng = feature_seed(seed, name, r)
        feats = data.features.copy()
        feats[name] = feats[name].iloc[rng.permutation(data.n)].to_numpy()
        if isinstance(data.features[name].dtype, pd.CategoricalDtype):
            feats[name] = pd.Categorical(feats[name], categories=data.features[name].cat.categories)
        return feats
    return _replacement_importance("pfi", model, data, loss, times, repeats, mode, seed, permuted)


@dataclass
class KnockoffMatrix:
    """Knockoff copy of the feature table plus its encoded design."""

    features: pd.DataFrame
    design: np.ndarray
    original: np.ndarray
    s: float
    ridge: float


def sample_knockoffs(data: SurvivalDataset, seed=0) -> KnockoffMatrix:
    """Second-order Gaussian (equicorrelated) knockoffs.

    Built on the standardised reference-coded design; categorical blocks are
    re-discretised by argmax over (implied reference, indicators)."""
    enc = Encoding.from_dataset(data)
    X = enc.transform(data.features)
    n, q = X.shape
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    live = sd > 0
    Z = np.zeros_like(X)
    Z[:, live] = (X[:, live] - mu[live]) / sd[live]
    Xl = Z[:, live]
    k = Xl.shape[1]
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((n, q))
    ridge, s = 0.0, 0.0
    Kl = np.empty((n, 0))
    if k:
        sigma = np.corrcoef(Xl, rowvar=False) if k > 1 else np.ones((1, 1))
        sigma = np.atleast_2d(sigma)
        lam_min = float(np.linalg.eigvalsh(sigma)[0])
        ridge = max(0.0, KNOCKOFF_EIG_FLOOR - lam_min)
        sigma = sigma + ridge * np.eye(k)
        lam_min = float(np.linalg.eigvalsh(sigma)[0])
        if not np.isfinite(lam_min) or lam_min <= 0:
            raise np.linalg.LinAlgError("covariance cannot be made positive definite")
        s = min(1.0, 2.0 * lam_min)
        D = s * np.eye(k)
        sinv_d = np.linalg.solve(sigma, D)
        cov = 2.0 * D - D @ sinv_d
        vals, vecs = np.linalg.eigh((cov + cov.T) / 2)
        C = vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
        Kl = Xl @ (np.eye(k) - sinv_d) + noise[:, live] @ C
    K = np.tile(mu, (n, 1))
    K[:, live] = Kl * sd[live] + mu[live]
    feats = {}
    blocks = enc.blocks()
    for name, t, lv in zip(enc.names, enc.types, enc.levels):
        block = K[:, blocks[name]]
        if t == "categorical":
            full = np.column_stack([1.0 - block.sum(axis=1), block])
            codes = np.argmax(full, axis=1)
            feats[name] = pd.Categorical([lv[c] for c in codes], categories=list(lv))
        else:
            feats[name] = block[:, 0]
    return KnockoffMatrix(pd.DataFrame(feats), K, X, s, ridge)


def cpi(model, data: SurvivalDataset, loss=None, repeats: int = 10, times=None, mode: str = "difference",
        seed: int = 0) -> ImportanceResult:
    """Conditional predictive impact: replace one feature by its knockoff."""
    knockoffs = {}

    def replaced(name, r):
        if r not in knockoffs:
            knockoffs[r] = sample_knockoffs(data, seed=[seed, r])
        feats = data.features.copy()
        feats[name] = knockoffs[r].features[name].to_numpy()
        if isinstance(data.features[name].dtype, pd.CategoricalDtype):
            feats[name] = pd.Categorical(feats[name], categories=data.features[name].cat.categories)
        return feats
    return _replacement_importance("cpi", model, data, loss, times, repeats, mode, seed, replaced)


@dataclass(frozen=True)
class ModelSpec:
    """Refit recipe: model family plus its config."""

    family: str
    config: object = None

    def fit(self, data: SurvivalDataset):
        from .models import fit_cox, fit_rsf
        if self.family == "cox":
            return fit_cox(data, self.config) if self.config is not None else fit_cox(data)
        if self.family == "rsf":
            return fit_rsf(data, self.config) if self.config is not None else fit_rsf(data)
        raise ValueError(f"unknown model family {self.family!r}")


def loco(model_spec: ModelSpec, data: SurvivalDataset, loss=None, times=None, mode: str = "difference",
         test_data: SurvivalDataset | None = None) -> ImportanceResult:
    """Refit without each feature in turn: L(reduced) - L(full)."""
    if data.p < 2:
        raise ValueError("LOCO needs at least two features")
    times = as_grid(times)
    loss = loss or BrierLoss()
    test = test_data if test_data is not None else data
    full = model_spec.fit(data)
    base = _loss_rows(loss, test, test.features, full, times)
    base_curve = base.mean(axis=0)
    base_rows = _row_aggregate(base, times.points)
    base_agg = _curve_aggregate(base_curve, times.points)
    m = len(times) if base.ndim == 2 else 1
    curves = np.full((data.p, m), np.nan)
    agg = np.full(data.p, np.nan)
    samples, failed = {}, []
    for k, name in enumerate(data.feature_names):
        try:
            reduced = model_spec.fit(data.drop_feature(name))
            contrib = _loss_rows(loss, test, test.features.drop(columns=[name]), reduced, times)
        except Exception:  # a failed refit only affects this feature
            failed.append(name)
            samples[name] = {"row_diffs": np.array([])}
            continue
        curve = contrib.mean(axis=0)
        curves[k] = np.atleast_1d(_combine(curve, base_curve, mode))
        agg[k] = _combine(_curve_aggregate(curve, times.points), base_agg, mode)
        samples[name] = {"row_diffs": _row_aggregate(contrib, times.points) - base_rows}
    grid = times if m == len(times) else TimeGrid([times.points[-1]])
    return ImportanceResult("loco", mode, list(data.feature_names), grid, curves, agg, 1, samples, failed=failed)


def one_sided_ttest(diffs) -> float:
    """p-value of H0: mean <= 0 against H1: mean > 0 (Student t)."""
    d = np.asarray(diffs, float)
    n = len(d)
    if n < 2:
        raise ValueError("need at least two values")
    sd = d.std(ddof=1)
    mean = d.mean()
    if sd == 0:
        return 1.0 if mean <= 0 else sign_test(d)
    t = mean / (sd / np.sqrt(n))
    return float(stats.t.sf(t, n - 1))


def sign_test(diffs) -> float:
    """Exact one-sided sign test on the nonzero differences."""
    d = np.asarray(diffs, float)
    d = d[d != 0]
    if len(d) == 0:
        return 1.0
    k = int((d > 0).sum())
    return float(stats.binom.sf(k - 1, len(d), 0.5))


def fi_significance(result: ImportanceResult) -> np.ndarray:
    """One-sided p-values per feature: per-row differences for CPI/LOCO,
    per-repeat differences for PFI; t-test for n >= 30, sign test below."""
    key = "repeat_diffs" if result.method == "pfi" else "row_diffs"
    out = np.full(len(result.features), np.nan)
    for k, name in enumerate(result.features):
        d = np.asarray(result.samples.get(name, {}).get(key, []), float)
        d = d[np.isfinite(d)]
        if len(d) == 0:
            continue
        if np.all(d == 0):
            out[k] = 1.0
        elif len(d) >= MIN_TTEST_N:
            out[k] = one_sided_ttest(d)
        else:
            out[k] = sign_test(d)
    result.p_values = out
    return out
