"""Cox proportional hazards with Breslow ties, fitted by Newton-Raphson."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import StepCurve, SurvivalDataset, TimeGrid, step_eval
from ..dataio import Encoding
from .base import SurvivalModel


class ConvergenceError(RuntimeError):
    def __init__(self, message, coefficients=None):
        super().__init__(message)
        self.coefficients = coefficients


class MonotoneLikelihoodError(ConvergenceError):
    pass


@dataclass
class CoxConfig:
    tolerance: float = 1e-9
    max_iter: int = 100
    max_halvings: int = 20
    divergence_bound: float = 50.0
    flat_curvature: float = 1e-8


@dataclass
class CoxModel(SurvivalModel):
    coefficients: np.ndarray
    baseline_chf: StepCurve
    encoding: Encoding
    fit_report: dict = field(default_factory=dict)

    native_kind = "chf"

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.baseline_chf.kind != "chf":
            raise ValueError("baseline must be a cumulative hazard")
        if len(self.coefficients) != self.encoding.width:
            raise ValueError("coefficient count must equal the encoded width")

    def linear_predictor(self, features) -> np.ndarray:
        return self.encoding.transform(features) @ self.coefficients

    def _predict_matrix(self, features, times):
        h0 = step_eval(self.baseline_chf.grid.points, self.baseline_chf.values, times, 0.0)
        return np.exp(self.linear_predictor(features))[:, None] * np.asarray(h0)[None, :]


def _sorted_design(X, time, event):
    order = np.argsort(time, kind="stable")
    X, time, event = X[order], time[order], event[order]
    # first row of each tied block opens its risk set
    first = np.searchsorted(time, time, side="left")
    return X, time, event, first


def partial_loglik(beta, X, time, event, with_derivatives=True):
    """Breslow log partial likelihood with gradient and Hessian."""
    X, time, event, first = _sorted_design(np.asarray(X, float), np.asarray(time, float),
                                           np.asarray(event, int))
    return _loglik_sorted(beta, X, event, first, with_derivatives)


def _loglik_sorted(beta, X, event, first, with_derivatives=True):
    eta = X @ beta
    shift = eta.max()
    w = np.exp(eta - shift)
    s0 = np.cumsum(w[::-1])[::-1][first]
    ev = event == 1
    ll = float(np.sum(eta[ev]) - np.sum(np.log(s0[ev]) + shift))
    if not with_derivatives:
        return ll
    wx = w[:, None] * X
    s1 = np.cumsum(wx[::-1], axis=0)[::-1][first]
    xbar = s1[ev] / s0[ev, None]
    grad = X[ev].sum(axis=0) - xbar.sum(axis=0)
    s2 = np.cumsum((wx[:, :, None] * X[:, None, :])[::-1], axis=0)[::-1][first]
    hess = -(s2[ev] / s0[ev, None, None]).sum(axis=0) + xbar.T @ xbar
    return ll, grad, hess


def breslow_baseline(X, time, event, beta) -> StepCurve:
    risk = np.exp(np.asarray(X, float) @ beta)
    uniq, inverse = np.unique(time, return_inverse=True)
    d = np.bincount(inverse, weights=event, minlength=len(uniq))
    r = np.bincount(inverse, weights=risk, minlength=len(uniq))[::-1].cumsum()[::-1]
    keep = d > 0
    return StepCurve(TimeGrid(uniq[keep]), np.cumsum(d[keep] / r[keep]), "chf")


def fit_cox(data: SurvivalDataset, config: CoxConfig | None = None, encoding: Encoding | None = None) -> CoxModel:
    cfg = config or CoxConfig()
    enc = encoding or Encoding.from_dataset(data)
    X = enc.transform(data.features)
    p = X.shape[1]
    if p == 0:
        raise ValueError("no features to fit")
    if np.linalg.matrix_rank(X - X.mean(axis=0)) < p:
        raise ValueError("design matrix is rank deficient")
    Xs, time, event, first = _sorted_design(X, data.time, data.event)

    beta = np.zeros(p)
    ll, grad, hess = _loglik_sorted(beta, Xs, event, first)
    n_iter = 0
    while np.max(np.abs(grad)) > cfg.tolerance:
        if n_iter >= cfg.max_iter:
            raise ConvergenceError(f"no convergence after {cfg.max_iter} iterations", beta)
        n_iter += 1
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-hess, grad, rcond=None)[0]
        for _ in range(cfg.max_halvings + 1):
            cand = beta + step
            cand_ll = _loglik_sorted(cand, Xs, event, first, with_derivatives=False)
            if np.isfinite(cand_ll) and cand_ll >= ll - 1e-12 * abs(ll):
                break
            step = step / 2
        else:
            raise ConvergenceError("step halving failed to improve the likelihood", beta)
        if np.max(np.abs(cand)) > cfg.divergence_bound:
            raise MonotoneLikelihoodError("monotone likelihood: coefficient diverging", cand)
        converged_step = np.max(np.abs(cand - beta)) < 1e-14
        beta = cand
        ll, grad, hess = _loglik_sorted(beta, Xs, event, first)
        if converged_step:
            # numerical floor reached; accept only if the Newton decrement is negligible
            if np.max(np.abs(grad)) > max(cfg.tolerance, 1e-9 * len(time)):
                raise ConvergenceError("stalled before reaching gradient tolerance", beta)
            break

    # a flat likelihood at the solution means the optimum lies at infinity
    curvature = np.linalg.eigvalsh(-hess)[0]
    if curvature < cfg.flat_curvature * max(1.0, event.sum()):
        raise MonotoneLikelihoodError("monotone likelihood: partial likelihood is flat at the solution", beta)
    baseline = breslow_baseline(X, data.time, data.event, beta)
    report = {"iterations": n_iter, "gradient_norm": float(np.max(np.abs(grad))),
              "log_partial_likelihood": ll}
    return CoxModel(beta, baseline, enc, report)
