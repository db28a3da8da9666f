"""Time-dependent performance measures: IPCW Brier score, integrated Brier,
Harrell's concordance and D-calibration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import StepCurve, SurvivalDataset, TimeGrid, as_grid, default_eval_grid, risk_table


def censoring_weights(data: SurvivalDataset) -> StepCurve:
    """Kaplan-Meier estimate of the censoring survival function G.

    Events at a tied time are treated as happening before censorings, so the
    censoring risk set at ``s`` excludes deaths at ``s``.
    """
    uniq, at_risk, d, c = risk_table(data.time, data.event)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(c > 0, 1.0 - c / (at_risk - d), 1.0)
    return StepCurve(TimeGrid(uniq), np.clip(np.cumprod(factor), 0.0, 1.0), "survival")


@dataclass
class BrierTerms:
    """Per-row IPCW Brier contributions (rows x times); the Brier curve is the
    row mean. ``dropped`` counts terms removed because G was 0."""

    contributions: np.ndarray
    times: np.ndarray
    dropped: int = 0

    @property
    def curve(self) -> np.ndarray:
        return self.contributions.mean(axis=0)


def brier_terms(time, event, surv: np.ndarray, times, G: StepCurve) -> BrierTerms:
    """IPCW (Graf) Brier contributions for a survival prediction matrix.

    Rows with an event by ``t`` are weighted 1/G(t_i-), rows still at risk
    past ``t`` by 1/G(t); rows censored by ``t`` contribute 0.
    """
    time = np.asarray(time, float)
    event = np.asarray(event, int)
    times = np.asarray(times, float)
    surv = np.asarray(surv, float)
    g_event = np.asarray(G.left_limit(time))
    g_t = np.asarray(G(times))
    died = (time[:, None] <= times[None, :]) & (event[:, None] == 1)
    alive = time[:, None] > times[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        w_died = np.where(died, 1.0 / g_event[:, None], 0.0)
        w_alive = np.where(alive, 1.0 / g_t[None, :], 0.0)
    bad = ~np.isfinite(w_died) | ~np.isfinite(w_alive)
    dropped = int(bad.sum())
    terms = np.where(died, surv ** 2 * w_died, 0.0) + np.where(alive, (1.0 - surv) ** 2 * w_alive, 0.0)
    terms[bad] = 0.0
    return BrierTerms(terms, times, dropped)


def brier_at_t(model, data: SurvivalDataset, t: float, G: StepCurve | None = None) -> float:
    if t < 0:
        raise ValueError("t must be nonnegative")
    usable = (data.time > t) | (data.event == 1)
    if not usable.any():
        raise ValueError("no usable rows at this time")
    G = G or censoring_weights(data)
    surv = model.predict(data.features, [t], "survival")
    return float(brier_terms(data.time, data.event, surv, [t], G).curve[0])


def brier_curve(model, data: SurvivalDataset, times, G: StepCurve | None = None) -> StepCurve:
    grid = as_grid(times)
    G = G or censoring_weights(data)
    surv = model.predict(data.features, grid, "survival")
    return StepCurve(grid, brier_terms(data.time, data.event, surv, grid.points, G).curve, "generic")


def integrate_curve(times, values) -> float:
    """Trapezoid integral normalised by the span of ``times``."""
    times = np.asarray(times, float)
    values = np.asarray(values, float)
    if len(times) < 2 or times[-1] <= times[0]:
        raise ValueError("integration grid needs a positive span")
    return float(np.trapezoid(values, times) / (times[-1] - times[0]))


def integrated_brier(model, data: SurvivalDataset, grid=None, G: StepCurve | None = None) -> float:
    grid = as_grid(grid) if grid is not None else default_eval_grid(data)
    curve = brier_curve(model, data, grid, G)
    return integrate_curve(grid.points, curve.values)


def concordance_from_scores(time, event, risk) -> float:
    """Harrell's C: pairs (i, k) with t_i < t_k and event_i = 1; ties in risk count 1/2."""
    time = np.asarray(time, float)
    event = np.asarray(event, int)
    risk = np.asarray(risk, float)
    order = np.argsort(time, kind="stable")
    time, event, risk = time[order], event[order], risk[order]
    conc = 0.0
    pairs = 0
    for i in np.flatnonzero(event == 1):
        later = time > time[i]
        k = int(later.sum())
        if k == 0:
            continue
        r = risk[later]
        conc += np.sum(risk[i] > r) + 0.5 * np.sum(risk[i] == r)
        pairs += k
    if pairs == 0:
        raise ValueError("no comparable pairs")
    return float(conc / pairs)


def risk_scores(model, data: SurvivalDataset, grid=None) -> np.ndarray:
    """Negative summed predicted survival over the event-time grid."""
    grid = as_grid(grid) if grid is not None else default_eval_grid(data)
    return -model.predict(data.features, grid, "survival").sum(axis=1)


def concordance_index(model, data: SurvivalDataset, grid=None) -> float:
    return concordance_from_scores(data.time, data.event, risk_scores(model, data, grid))


@dataclass
class DCalibration:
    statistic: float
    counts: np.ndarray
    p_value: float = field(default=np.nan)


def d_calibration_from_probs(surv_at_time, event, bins: int = 10) -> DCalibration:
    """Chi-square D-calibration from each row's predicted S(t_i | x_i).

    Event rows fall into the bin holding their probability; a censored row
    with probability u spreads its unit mass uniformly over [0, u].
    """
    if bins < 2:
        raise ValueError("need at least 2 bins")
    u = np.clip(np.asarray(surv_at_time, float), 0.0, 1.0)
    event = np.asarray(event, int)
    if len(u) == 0:
        raise ValueError("empty dataset")
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts = np.zeros(bins)
    idx = np.minimum((u * bins).astype(int), bins - 1)
    np.add.at(counts, idx[event == 1], 1.0)
    for ui, k in zip(u[event == 0], idx[event == 0]):
        if ui <= 0:
            counts[0] += 1.0
            continue
        counts[:k] += (edges[1:k + 1] - edges[:k]) / ui
        counts[k] += (ui - edges[k]) / ui
    expected = len(u) / bins
    stat = float(np.sum((counts - expected) ** 2 / expected))
    from scipy.stats import chi2
    return DCalibration(stat, counts, float(chi2.sf(stat, bins - 1)))


def d_calibration(model, data: SurvivalDataset, bins: int = 10) -> DCalibration:
    if bins < 2:
        raise ValueError("need at least 2 bins")
    uniq, inverse = np.unique(data.time, return_inverse=True)
    surv = model.predict(data.features, uniq, "survival")
    return d_calibration_from_probs(surv[np.arange(data.n), inverse], data.event, bins)


@dataclass
class EvalReport:
    brier_curve: StepCurve
    integrated_brier: float
    c_index: float
    d_calibration: DCalibration
    dropped_terms: int = 0

    def to_dict(self) -> dict:
        return {
            "brier": {"t": self.brier_curve.grid.points.tolist(), "value": self.brier_curve.values.tolist()},
            "ibs": self.integrated_brier,
            "cindex": self.c_index,
            "dcal": {"stat": self.d_calibration.statistic, "bins": self.d_calibration.counts.tolist(),
                     "p_value": self.d_calibration.p_value},
            "dropped_terms": self.dropped_terms,
        }


def evaluate(model, data: SurvivalDataset, grid=None, bins: int = 10) -> EvalReport:
    grid = as_grid(grid) if grid is not None else default_eval_grid(data)
    G = censoring_weights(data)
    surv = model.predict(data.features, grid, "survival")
    terms = brier_terms(data.time, data.event, surv, grid.points, G)
    curve = StepCurve(grid, terms.curve, "generic")
    ibs = integrate_curve(grid.points, terms.curve) if len(grid) > 1 else float(terms.curve[0])
    cidx = concordance_from_scores(data.time, data.event, -surv.sum(axis=1))
    return EvalReport(curve, ibs, cidx, d_calibration(model, data, bins), terms.dropped)
