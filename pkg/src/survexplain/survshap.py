"""Time-dependent Shapley values of survival curves: exact enumeration,
permutation sampling and constrained kernel regression, plus global summaries."""

from __future__ import annotations

from dataclasses import dataclass
from math import comb, factorial

import numpy as np
import pandas as pd

from .core import StepCurve, SurvivalDataset, TimeGrid, as_grid

EXACT_MAX_P = 6
DEFAULT_PERMS = 200
DEFAULT_BACKGROUND = 100
KERNEL_RIDGE = 1e-10
CHUNK_ROWS = 50_000


@dataclass
class SurvShapResult:
    instance: object
    times: TimeGrid
    phi: np.ndarray
    baseline: StepCurve
    prediction: np.ndarray
    estimator: str
    n_samples: int
    names: list
    sigma: np.ndarray | None = None
    ridge_applied: bool = False

    def to_dict(self) -> dict:
        return {"instance": self.instance, "times": self.times.points.tolist(), "features": list(self.names),
                "phi": self.phi.tolist(), "baseline": self.baseline.values.tolist(),
                "prediction": self.prediction.tolist(), "estimator": self.estimator,
                "n_samples": self.n_samples,
                "sigma": None if self.sigma is None else self.sigma.tolist(),
                "ridge_applied": self.ridge_applied}


def background_rows(data: SurvivalDataset, size: int = DEFAULT_BACKGROUND, seed: int = 0) -> SurvivalDataset:
    if size >= data.n:
        return data
    return data.subset(np.sort(np.random.default_rng(seed).choice(data.n, size=size, replace=False)))


class CoalitionValues:
    """Interventional value function v(S)(t): mean prediction over the
    background with the features in S fixed at x*. Results are cached by
    coalition bitmask."""

    def __init__(self, model, background: pd.DataFrame, x: pd.DataFrame, times: TimeGrid, output: str):
        if len(background) == 0:
            raise ValueError("background must be nonempty")
        self.model = model
        self.bg = background.reset_index(drop=True)
        self.x = x.reset_index(drop=True)
        self.names = list(background.columns)
        self.p = len(self.names)
        self.times = times
        self.output = output
        self.cache: dict[int, np.ndarray] = {}

    def _batch(self, masks) -> pd.DataFrame:
        nb = len(self.bg)
        reps = len(masks)
        inside = np.repeat(np.array([[(m >> j) & 1 for j in range(self.p)] for m in masks], bool), nb, axis=0)
        cols = {}
        for j, name in enumerate(self.names):
            col = self.bg[name]
            tiled = np.tile(col.to_numpy(dtype=object if isinstance(col.dtype, pd.CategoricalDtype) else float), reps)
            xv = self.x[name].iloc[0]
            vals = np.where(inside[:, j], xv, tiled)
            if isinstance(col.dtype, pd.CategoricalDtype):
                cols[name] = pd.Categorical(vals, categories=col.cat.categories)
            else:
                cols[name] = vals.astype(float)
        return pd.DataFrame(cols)

    def evaluate(self, masks):
        todo = sorted({int(m) for m in masks if int(m) not in self.cache})
        per = max(1, CHUNK_ROWS // len(self.bg))
        for i in range(0, len(todo), per):
            chunk = todo[i:i + per]
            pred = self.model.predict(self._batch(chunk), self.times, self.output)
            means = pred.reshape(len(chunk), len(self.bg), -1).mean(axis=1)
            for m, v in zip(chunk, means):
                self.cache[m] = v
        return np.array([self.cache[int(m)] for m in masks])

    @property
    def full(self) -> int:
        return (1 << self.p) - 1


def _setup(model, background, x, times, output):
    bg = background.features if isinstance(background, SurvivalDataset) else background
    if isinstance(x, pd.Series):
        x = x.to_frame().T
    x = x[list(bg.columns)]
    if len(x) != 1:
        raise ValueError("expected a single instance")
    return CoalitionValues(model, bg, x, as_grid(times), output)


def _result(vf, phi, instance, estimator, n_samples, sigma=None, ridge=False):
    v0, v1 = vf.evaluate([0, vf.full])
    kind = "survival" if vf.output == "survival" else "generic"
    return SurvShapResult(instance, vf.times, phi, StepCurve(vf.times, v0, kind), v1, estimator,
                          n_samples, vf.names, sigma, ridge)


def exact_shapley(vf: CoalitionValues) -> np.ndarray:
    """Shapley values from all 2^p coalitions with the usual weights."""
    p = vf.p
    masks = list(range(1 << p))
    vals = vf.evaluate(masks)
    phi = np.zeros((p, len(vf.times)))
    weights = [factorial(s) * factorial(p - s - 1) / factorial(p) for s in range(p)]
    for m in masks:
        s = bin(m).count("1")
        for j in range(p):
            if not (m >> j) & 1:
                phi[j] += weights[s] * (vals[m | (1 << j)] - vals[m])
    return phi


def survshap_sampling(model, background, x, n_perms="auto", times=None, seed: int = 0,
                      output: str = "survival", instance=None) -> SurvShapResult:
    """Permutation-sampling estimator; ``n_perms='exact'`` (or 'auto' with
    p <= 6) enumerates exactly."""
    vf = _setup(model, background, x, times, output)
    p = vf.p
    if n_perms == "auto":
        n_perms = "exact" if p <= EXACT_MAX_P else DEFAULT_PERMS
    if n_perms == "exact":
        return _result(vf, exact_shapley(vf), instance, "exact", factorial(p))
    n_perms = int(n_perms)
    if n_perms < 1:
        raise ValueError("n_perms must be >= 1")
    rng = np.random.default_rng(seed)
    perms = [rng.permutation(p) for _ in range(n_perms)]
    chains = []
    for perm in perms:
        m, chain = 0, [0]
        for j in perm:
            m |= 1 << int(j)
            chain.append(m)
        chains.append(chain)
    vf.evaluate([m for chain in chains for m in chain])
    contrib = np.zeros((n_perms, p, len(vf.times)))
    for r, (perm, chain) in enumerate(zip(perms, chains)):
        vals = vf.evaluate(chain)
        contrib[r, perm] = np.diff(vals, axis=0)
    phi = contrib.mean(axis=0)
    sigma = contrib.std(axis=0, ddof=1) / np.sqrt(n_perms) if n_perms > 1 else np.full_like(phi, np.nan)
    return _result(vf, phi, instance, "sampling", n_perms, sigma)


def kernel_weight(p: int, s: int) -> float:
    return (p - 1) / (comb(p, s) * s * (p - s))


def survshap_kernel(model, background, x, n_coalitions="all", times=None, seed: int = 0,
                    output: str = "survival", instance=None) -> SurvShapResult:
    """Kernel regression estimator. The empty and full coalitions are
    enforced through the efficiency constraint rather than huge weights."""
    vf = _setup(model, background, x, times, output)
    p = vf.p
    v0, v1 = vf.evaluate([0, vf.full])
    total = v1 - v0
    if p == 1:
        return _result(vf, total[None, :], instance, "kernel", 0)
    if n_coalitions == "all":
        masks = list(range(1, vf.full))
        w = np.array([kernel_weight(p, bin(m).count("1")) for m in masks])
    else:
        n_coalitions = int(n_coalitions)
        if n_coalitions < 1:
            raise ValueError("n_coalitions must be >= 1")
        rng = np.random.default_rng(seed)
        sizes = np.arange(1, p)
        size_prob = np.array([(p - 1) / (s * (p - s)) for s in sizes])
        size_prob /= size_prob.sum()
        masks = []
        for s in rng.choice(sizes, size=n_coalitions, p=size_prob):
            members = rng.choice(p, size=s, replace=False)
            masks.append(int(sum(1 << int(j) for j in members)))
        w = np.ones(len(masks))
    Z = np.array([[(m >> j) & 1 for j in range(p)] for m in masks], float)
    Y = vf.evaluate(masks) - v0
    # eliminate the last coefficient through sum(phi) = v(full) - v(empty)
    A = Z[:, :-1] - Z[:, -1:]
    rhs = Y - Z[:, -1:] * total[None, :]
    M = A.T @ (w[:, None] * A)
    ridge = np.linalg.matrix_rank(M) < M.shape[0]
    if ridge:
        M = M + KERNEL_RIDGE * np.eye(M.shape[0])
    head = np.linalg.solve(M, A.T @ (w[:, None] * rhs))
    phi = np.vstack([head, total - head.sum(axis=0)])
    return _result(vf, phi, instance, "kernel", len(masks), ridge=ridge)


def explain_instances(model, data: SurvivalDataset, rows, times, background=None, estimator: str = "sampling",
                      n_samples="auto", seed: int = 0, output: str = "survival") -> list[SurvShapResult]:
    bg = background if background is not None else background_rows(data, seed=seed)
    out = []
    for i in rows:
        x = data.features.iloc[[int(i)]]
        if estimator == "sampling":
            out.append(survshap_sampling(model, bg, x, n_samples, times, seed=seed, output=output, instance=int(i)))
        elif estimator == "kernel":
            n = "all" if n_samples == "auto" else n_samples
            out.append(survshap_kernel(model, bg, x, n, times, seed=seed, output=output, instance=int(i)))
        else:
            raise ValueError(f"unknown estimator {estimator!r}")
    return out


@dataclass
class GlobalShap:
    names: list
    times: TimeGrid
    importance: np.ndarray
    beeswarm: pd.DataFrame

    def ranking(self) -> list:
        agg = self.importance.mean(axis=1)
        return [self.names[k] for k in np.argsort(-agg, kind="stable")]

    def curves_frame(self) -> pd.DataFrame:
        p, m = self.importance.shape
        return pd.DataFrame({"feature": np.repeat(self.names, m), "t": np.tile(self.times.points, p),
                             "mean_abs_phi": self.importance.reshape(-1)})


def aggregate_global(results, features: pd.DataFrame | None = None) -> GlobalShap:
    """Mean |phi| over instances per time, and a beeswarm table of each
    instance's time-averaged phi next to its feature value."""
    results = list(results)
    if not results:
        raise ValueError("no results to aggregate")
    ref = results[0]
    for r in results[1:]:
        if len(r.times) != len(ref.times) or not np.array_equal(r.times.points, ref.times.points):
            raise ValueError("results use different time grids")
        if list(r.names) != list(ref.names):
            raise ValueError("results use different features")
    phis = np.stack([r.phi for r in results])
    recs = []
    for r in results:
        for j, name in enumerate(r.names):
            value = None
            if features is not None and r.instance is not None:
                value = features[name].iloc[r.instance]
            recs.append((r.instance, name, float(r.phi[j].mean()), value))
    bees = pd.DataFrame(recs, columns=["instance", "feature", "phi_mean", "feature_value"])
    return GlobalShap(list(ref.names), ref.times, np.abs(phis).mean(axis=0), bees)

