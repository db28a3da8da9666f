"""Local explanations: SurvLIME (Cox surrogate fitted to black-box CHFs around
one instance) and hinge-loss counterfactuals found by particle swarm search."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .core import SurvivalDataset, StepCurve, TimeGrid, nelson_aalen, step_eval, unique_event_times
from .dataio import Encoding
from .models.cox import breslow_baseline

RANK_RIDGE = 1e-8


def _as_row(x, data: SurvivalDataset) -> pd.DataFrame:
    if isinstance(x, (int, np.integer)):
        return data.features.iloc[[int(x)]].reset_index(drop=True)
    if isinstance(x, pd.Series):
        x = x.to_frame().T
    row = x[data.feature_names].reset_index(drop=True)
    for name in data.feature_names:
        if data.is_categorical(name):
            row[name] = pd.Categorical(row[name].astype(str), categories=data.levels(name))
        else:
            row[name] = row[name].astype(float)
    if len(row) != 1:
        raise ValueError("expected a single row")
    return row


def epanechnikov_weights(dist, radius: float = 0.5) -> np.ndarray:
    """w = max(0, 1 - sqrt(d / r)); zero at and beyond the radius."""
    if radius <= 0:
        raise ValueError("kernel radius must be positive")
    return np.maximum(0.0, 1.0 - np.sqrt(np.asarray(dist, float) / radius))


def perturb(data: SurvivalDataset, x: pd.DataFrame, g: int, rng: np.random.Generator,
            scale: float = 0.2, resample_prob: float = 0.2) -> pd.DataFrame:
    """g-1 neighbours of x followed by x itself: Gaussian noise with sd
    ``scale`` * feature sd on numeric columns; categorical columns are redrawn
    from their empirical distribution with probability ``resample_prob``."""
    k = g - 1
    out = {}
    for name in data.feature_names:
        col = data.features[name]
        if data.is_categorical(name):
            vals = np.array([x[name].iloc[0]] * k, dtype=object)
            flip = rng.random(k) < resample_prob
            draws = col.astype(object).to_numpy()[rng.integers(0, data.n, size=k)]
            vals[flip] = draws[flip]
            out[name] = pd.Categorical(list(vals) + [x[name].iloc[0]], categories=data.levels(name))
        else:
            sd = col.to_numpy(float).std()
            x0 = float(x[name].iloc[0])
            out[name] = np.concatenate([x0 + rng.normal(0.0, scale * sd, size=k), [x0]])
    return pd.DataFrame(out)


@dataclass
class SurvLimeResult:
    coefficients: np.ndarray
    coefficients_std: np.ndarray
    names: list
    local_importance: np.ndarray
    surrogate_curve: StepCurve
    blackbox_curve: StepCurve
    fidelity: float
    neighborhood: pd.DataFrame
    weights: np.ndarray
    objective: float
    dropped_rows: int = 0
    ridge_applied: bool = False
    baseline: str = "nelson-aalen"
    iterations: int = 1
    system: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "coefficients": self.coefficients.tolist(),
            "coefficients_standardized": self.coefficients_std.tolist(),
            "local_importance": self.local_importance.tolist(),
            "times": self.blackbox_curve.grid.points.tolist(),
            "surrogate_chf": self.surrogate_curve.values.tolist(),
            "blackbox_chf": self.blackbox_curve.values.tolist(),
            "fidelity": self.fidelity, "objective": self.objective,
            "dropped_rows": self.dropped_rows, "ridge_applied": self.ridge_applied,
            "baseline": self.baseline, "iterations": self.iterations,
            "neighborhood": {c: [v if isinstance(v, str) else float(v) for v in self.neighborhood[c]]
                             for c in self.neighborhood.columns},
            "weights": self.weights.tolist(),
        }


def _lime_system(log_h, log_h0, v2, w, delta, Z):
    """Per-(k, s) row weights and targets of the weighted least-squares problem."""
    omega = w[:, None] * v2 * delta[None, :]
    y = log_h - log_h0[None, :]
    omega = np.where(np.isfinite(y) & np.isfinite(omega), omega, 0.0)
    y = np.where(omega > 0, y, 0.0)
    return omega, y


def solve_lime(omega, y, Z):
    """Closed-form solution of min_b sum_ks omega_ks (y_ks - b'z_k)^2."""
    Wk = omega.sum(axis=1)
    A = Z.T @ (Wk[:, None] * Z)
    rhs = Z.T @ (omega * y).sum(axis=1)
    ridge = np.linalg.matrix_rank(A) < A.shape[0]
    if ridge:
        A = A + RANK_RIDGE * np.eye(A.shape[0])
    return np.linalg.solve(A, rhs), ridge


def lime_objective(b, omega, y, Z) -> float:
    return float(np.sum(omega * (y - (Z @ b)[:, None]) ** 2))


def survlime_explain(model, data: SurvivalDataset, x, g: int = 100, kernel_radius: float = 0.5,
                     seed: int = 0, baseline: str = "nelson-aalen", max_iter: int = 100,
                     tol: float = 1e-10) -> SurvLimeResult:
    """Fit a local Cox surrogate to the black-box CHFs around ``x``.

    ``baseline='nelson-aalen'`` uses the plain Nelson-Aalen estimate on the
    data as the surrogate baseline. ``baseline='breslow'`` instead looks for
    the b whose own Breslow baseline on the data reproduces b when plugged
    into the least-squares step, starting from the plain solution.
    """
    if g < 2:
        raise ValueError("need g >= 2")
    if baseline not in ("nelson-aalen", "breslow"):
        raise ValueError("baseline must be 'nelson-aalen' or 'breslow'")
    x = _as_row(x, data)
    rng = np.random.default_rng(seed)
    enc = Encoding.from_dataset(data)
    pts = perturb(data, x, g, rng)
    E = enc.transform(pts)
    D = enc.transform(data.features)
    sd = D.std(axis=0)
    scale = np.where(sd > 0, sd, 1.0)
    Z = E / scale
    dist = np.sqrt(np.sum(((E - E[-1]) / scale) ** 2, axis=1))
    w = epanechnikov_weights(dist, kernel_radius)

    times = unique_event_times(data).points
    delta = np.diff(np.append(times, data.time.max()))
    chf = model.predict(pts, times, "chf")
    with np.errstate(divide="ignore", invalid="ignore"):
        log_h = np.log(chf)
        v2 = (chf / log_h) ** 2
    bad = (chf <= 0) | ~np.isfinite(v2)
    dropped = int(bad.sum())
    log_h = np.where(bad, np.nan, log_h)
    v2 = np.where(bad, 0.0, v2)

    def solve_with(h0_vals):
        with np.errstate(divide="ignore"):
            log_h0 = np.log(h0_vals)
        omega, y = _lime_system(log_h, log_h0, v2, w, delta, Z)
        b, ridge = solve_lime(omega, y, Z)
        return b, ridge, omega, y

    def breslow_at(b):
        with np.errstate(over="ignore"):
            h0 = breslow_baseline(D / scale, data.time, data.event, b)
        return step_eval(h0.grid.points, h0.values, times, before=0.0)

    h0 = nelson_aalen(data)
    h0_vals = step_eval(h0.grid.points, h0.values, times, before=0.0)
    b_std, ridge, omega, y = solve_with(h0_vals)
    iterations = 1
    if baseline == "breslow":
        b_fix, iterations = _breslow_fixed_point(lambda b: solve_with(breslow_at(b))[0], b_std, max_iter, tol)
        h0_vals = breslow_at(b_fix)
        b_std, ridge, omega, y = solve_with(h0_vals)

    b_raw = b_std / scale
    ex = E[-1]
    grid = TimeGrid(times)
    sur = h0_vals * np.exp(ex @ b_raw)
    bb = chf[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        gap = np.log(bb) - np.log(sur)
    ok = np.isfinite(gap)
    fidelity = float(np.sqrt(np.sum(delta[ok] * gap[ok] ** 2)))
    return SurvLimeResult(
        coefficients=b_raw, coefficients_std=b_std, names=enc.column_names(),
        local_importance=np.abs(b_raw * ex),
        surrogate_curve=StepCurve(grid, sur, "chf"), blackbox_curve=StepCurve(grid, bb, "chf"),
        fidelity=fidelity, neighborhood=pts, weights=w, objective=lime_objective(b_std, omega, y, Z),
        dropped_rows=dropped, ridge_applied=bool(ridge), baseline=baseline, iterations=iterations,
        system={"omega": omega, "y": y, "Z": Z},
    )


def _breslow_fixed_point(step, b, max_iter, tol):
    """Newton iteration on F(b) = step(b) - b with a forward-difference
    Jacobian and step halving. Plain repeated substitution can stall or
    diverge because the map is close to rank one with unit gain when the
    instance sits near the data centroid."""
    def resid(v):
        out = step(v)
        return out - v

    F = resid(b)
    iterations = 1
    p = len(b)
    while np.max(np.abs(F)) >= tol and iterations < max_iter:
        iterations += 1
        J = np.empty((p, p))
        for j in range(p):
            h = 1e-7 * max(1.0, abs(b[j]))
            e = np.zeros(p)
            e[j] = h
            J[:, j] = (resid(b + e) - F) / h
        try:
            direction = -np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            direction = F
        size = 1.0
        while True:
            cand = b + size * direction
            F_cand = resid(cand)
            if np.max(np.abs(F_cand)) < np.max(np.abs(F)) or size < 1e-6:
                break
            size /= 2
        b, F = cand, F_cand
    return b, iterations


@dataclass(frozen=True)
class PSOConfig:
    particles: int = 50
    inertia: float = 0.72
    cognitive: float = 1.49
    social: float = 1.49
    iterations: int = 200
    velocity_clamp: float = 0.5


@dataclass
class CounterfactualResult:
    counterfactual: pd.DataFrame
    expected_time_original: float
    expected_time_counterfactual: float
    distance: float
    loss: float
    loss_trace: np.ndarray
    converged: bool
    searched: list

    def to_dict(self) -> dict:
        row = self.counterfactual.iloc[0]
        return {
            "counterfactual": {k: (v if isinstance(v, str) else float(v)) for k, v in row.items()},
            "expected_time_original": self.expected_time_original,
            "expected_time_counterfactual": self.expected_time_counterfactual,
            "distance": self.distance, "loss": self.loss,
            "loss_trace": self.loss_trace.tolist(), "converged": self.converged,
            "searched_features": list(self.searched),
        }


def expected_time(surv: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Restricted mean survival up to the last grid time for step curves
    (survival is 1 before the first grid time)."""
    surv = np.atleast_2d(surv)
    widths = np.diff(times)
    return times[0] + surv[:, :-1] @ widths


def counterfactual_explain(model, data: SurvivalDataset, x, r_gap: float, C: float,
                           pso_config: PSOConfig | None = None, seed: int = 0) -> CounterfactualResult:
    """Minimise max(0, r_gap - (E(c) - E(x))) + C * ||c - x||_2 over the
    numeric coordinates of c within the observed feature ranges."""
    if r_gap < 0:
        raise ValueError("r_gap must be >= 0")
    if C < 0:
        raise ValueError("C must be >= 0")
    cfg = pso_config or PSOConfig()
    x = _as_row(x, data)
    names = [f for f in data.feature_names if not data.is_categorical(f)]
    if not names:
        raise ValueError("no numeric features to search over")
    times = unique_event_times(data).points
    x0 = x[names].to_numpy(float)[0]
    lo = np.minimum(data.features[names].to_numpy(float).min(axis=0), x0)
    hi = np.maximum(data.features[names].to_numpy(float).max(axis=0), x0)
    width = hi - lo
    e_x = float(expected_time(model.predict(x, times, "survival"), times)[0])

    def candidates(P):
        batch = x.iloc[np.zeros(len(P), int)].reset_index(drop=True)
        for j, n in enumerate(names):
            batch[n] = P[:, j]
        return batch

    def objective(P):
        e_c = expected_time(model.predict(candidates(P), times, "survival"), times)
        return np.maximum(0.0, r_gap - (e_c - e_x)) + C * np.linalg.norm(P - x0, axis=1), e_c

    rng = np.random.default_rng(seed)
    P = lo + rng.random((cfg.particles, len(names))) * width
    P[0] = x0
    vmax = cfg.velocity_clamp * width
    V = rng.uniform(-1.0, 1.0, P.shape) * vmax
    f, _ = objective(P)
    loss_x = float(f[0])
    pbest, pbest_f = P.copy(), f.copy()
    g = int(np.argmin(f))
    gbest, gbest_f = P[g].copy(), float(f[g])
    trace = []
    for _ in range(cfg.iterations):
        r1 = rng.random(P.shape)
        r2 = rng.random(P.shape)
        V = cfg.inertia * V + cfg.cognitive * r1 * (pbest - P) + cfg.social * r2 * (gbest - P)
        V = np.clip(V, -vmax, vmax)
        P = np.clip(P + V, lo, hi)
        f, _ = objective(P)
        better = f < pbest_f
        pbest[better], pbest_f[better] = P[better], f[better]
        g = int(np.argmin(pbest_f))
        if pbest_f[g] < gbest_f:
            gbest, gbest_f = pbest[g].copy(), float(pbest_f[g])
        trace.append(gbest_f)
    best = candidates(gbest[None])
    e_c = float(expected_time(model.predict(best, times, "survival"), times)[0])
    converged = bool(gbest_f < loss_x or loss_x == 0.0)
    return CounterfactualResult(best, e_x, e_c, float(np.linalg.norm(gbest - x0)), gbest_f,
                                np.array(trace), converged, names)
