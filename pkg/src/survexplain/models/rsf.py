"""Random survival forest: bootstrap trees grown by maximising the two-sample
log-rank statistic, Nelson-Aalen curves in the leaves."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..core import SurvivalDataset, nelson_aalen_arrays, step_eval
from ..dataio import Encoding
from .base import SurvivalModel

MAX_EXHAUSTIVE_LEVELS = 10


@dataclass
class RSFConfig:
    n_trees: int = 100
    mtry: int | None = None
    min_node_size: int = 15
    seed: int = 0
    bootstrap: bool = True
    threads: int = 1

    def resolved_mtry(self, p: int) -> int:
        return min(p, self.mtry or math.ceil(math.sqrt(p)))

    def to_dict(self) -> dict:
        return {"n_trees": self.n_trees, "mtry": self.mtry, "min_node_size": self.min_node_size,
                "seed": self.seed, "bootstrap": self.bootstrap}


@dataclass
class SurvivalTree:
    """Flat node arrays. ``feature[k] < 0`` marks a leaf; numeric splits send
    ``x <= threshold`` left, categorical splits send codes in ``left_levels`` left."""

    feature: list
    threshold: list
    left_levels: list
    left: list
    right: list
    leaf_times: list
    leaf_chf: list
    leaf_size: list

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Node index of the leaf each row lands in."""
        node = np.zeros(len(X), dtype=int)
        active = np.arange(len(X))
        while len(active):
            k = node[active]
            feat = np.asarray(self.feature)[k]
            internal = feat >= 0
            active, k, feat = active[internal], k[internal], feat[internal]
            if not len(active):
                break
            x = X[active, feat]
            go_left = np.empty(len(active), bool)
            for node_id in np.unique(k):
                sel = k == node_id
                lv = self.left_levels[node_id]
                if lv is None:
                    go_left[sel] = x[sel] <= self.threshold[node_id]
                else:
                    go_left[sel] = np.isin(x[sel], lv)
            node[active] = np.where(go_left, np.asarray(self.left)[k], np.asarray(self.right)[k])
        return node


@dataclass
class RSFModel(SurvivalModel):
    trees: list
    encoding: Encoding
    config: RSFConfig
    baseline_times: np.ndarray = field(default=None)
    baseline_chf: np.ndarray = field(default=None)

    native_kind = "chf"

    def __post_init__(self):
        self._inbag = None
        self._train_order = None

    def _predict_matrix(self, features, times):
        X = self.encoding.raw_matrix(features)
        out = np.zeros((len(X), len(times)))
        for tree in self.trees:
            out += self._tree_chf(tree, X, times)
        return out / len(self.trees)

    @staticmethod
    def _tree_chf(tree, X, times):
        leaves = tree.apply(X)
        uniq, inv = np.unique(leaves, return_inverse=True)
        table = np.stack([step_eval(np.asarray(tree.leaf_times[k]), np.asarray(tree.leaf_chf[k]), times, 0.0)
                          for k in uniq])
        return table[inv]

    def oob_predict(self, data: SurvivalDataset, times, kind: str = "survival") -> np.ndarray:
        """Out-of-bag predictions for the training rows (same data used in ``fit_rsf``)."""
        if self._inbag is None:
            raise ValueError("out-of-bag information is only kept on freshly fitted models")
        from .base import convert
        X = self.encoding.raw_matrix(data.features)[self._train_order]
        times = np.asarray(times, dtype=float)
        total = np.zeros((len(X), len(times)))
        count = np.zeros(len(X))
        for tree, inbag in zip(self.trees, self._inbag):
            oob = ~inbag
            if oob.any():
                total[oob] += self._tree_chf(tree, X[oob], times)
                count[oob] += 1
        chf = np.full_like(total, np.nan)
        ok = count > 0
        chf[ok] = total[ok] / count[ok, None]
        result = np.empty_like(chf)
        result[self._train_order] = chf
        return convert(result, "chf", kind)


def logrank_statistics(left_at_risk, left_events, at_risk, events):
    """Standardised log-rank statistic for many candidate splits at once.

    ``left_*`` are (candidates x event-times); ``at_risk``/``events`` are the
    node totals per event time.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = left_at_risk / at_risk
        expected = left_events - frac * events
        var_term = np.where(at_risk > 1, frac * (1 - frac) * (at_risk - events) / (at_risk - 1) * events, 0.0)
        num = expected.sum(axis=1)
        var = var_term.sum(axis=1)
        stat = np.where(var > 1e-12, np.abs(num) / np.sqrt(var), 0.0)
    return stat


class _TreeGrower:
    def __init__(self, X, time, event, types, config, rng):
        self.X, self.time, self.event = X, time, event
        self.types = types
        self.cfg = config
        self.rng = rng
        self.mtry = config.resolved_mtry(X.shape[1])
        self.tree = SurvivalTree([], [], [], [], [], [], [], [])

    def _new_node(self):
        t = self.tree
        for lst in (t.feature, t.threshold, t.left_levels, t.left, t.right,
                    t.leaf_times, t.leaf_chf, t.leaf_size):
            lst.append(None)
        k = len(t.feature) - 1
        t.feature[k], t.left[k], t.right[k] = -1, -1, -1
        return k

    def _make_leaf(self, k, rows):
        times, chf = nelson_aalen_arrays(self.time[rows], self.event[rows])
        if len(times) == 0:
            times, chf = np.array([0.0]), np.array([0.0])
        t = self.tree
        t.feature[k] = -1
        t.leaf_times[k] = times.tolist()
        t.leaf_chf[k] = chf.tolist()
        t.leaf_size[k] = int(len(rows))

    def grow(self, rows):
        root = self._new_node()
        stack = [(root, rows)]
        while stack:
            k, rows = stack.pop()
            split = self._best_split(rows) if len(rows) >= 2 * self.cfg.min_node_size else None
            if split is None:
                self._make_leaf(k, rows)
                continue
            feat, thr, levels, go_left = split
            lk, rk = self._new_node(), self._new_node()
            t = self.tree
            t.feature[k], t.threshold[k], t.left_levels[k] = int(feat), thr, levels
            t.left[k], t.right[k] = lk, rk
            stack.append((rk, rows[~go_left]))
            stack.append((lk, rows[go_left]))
        return self.tree

    def _best_split(self, rows):
        time, event = self.time[rows], self.event[rows]
        if event.sum() == 0:
            return None
        ev_times = np.unique(time[event == 1])
        # at-risk and event indicator matrices (rows x event times)
        risk_mat = (time[:, None] >= ev_times[None, :]).astype(float)
        event_mat = ((time[:, None] == ev_times[None, :]) & (event[:, None] == 1)).astype(float)
        at_risk, events = risk_mat.sum(axis=0), event_mat.sum(axis=0)
        candidates = self.rng.choice(self.X.shape[1], size=self.mtry, replace=False)
        best = (0.0, None)
        min_size = self.cfg.min_node_size
        n = len(rows)
        for feat in sorted(candidates):
            x = self.X[rows, feat]
            if self.types[feat] == "categorical":
                found = self._categorical_split(x, risk_mat, event_mat, at_risk, events, min_size)
            else:
                found = self._numeric_split(x, risk_mat, event_mat, at_risk, events, min_size, n)
            if found is not None and found[0] > best[0] + 1e-12:
                best = (found[0], (feat,) + found[1:])
        if best[1] is None:
            return None
        feat, thr, levels = best[1]
        x = self.X[rows, feat]
        go_left = np.isin(x, levels) if levels is not None else x <= thr
        return feat, thr, levels, go_left

    @staticmethod
    def _numeric_split(x, risk_mat, event_mat, at_risk, events, min_size, n):
        order = np.argsort(x, kind="stable")
        xs = x[order]
        cum_risk = np.cumsum(risk_mat[order], axis=0)
        cum_event = np.cumsum(event_mat[order], axis=0)
        # split after position i (left = first i+1 sorted rows)
        pos = np.arange(min_size - 1, n - min_size)
        pos = pos[xs[pos] < xs[pos + 1]]
        if not len(pos):
            return None
        stats = logrank_statistics(cum_risk[pos], cum_event[pos], at_risk, events)
        i = int(np.argmax(stats))
        if stats[i] <= 0:
            return None
        thr = 0.5 * (xs[pos[i]] + xs[pos[i] + 1])
        if not xs[pos[i]] < thr:
            thr = xs[pos[i]]
        return float(stats[i]), float(thr), None

    @staticmethod
    def _categorical_split(x, risk_mat, event_mat, at_risk, events, min_size):
        codes = np.unique(x).astype(int)
        if len(codes) < 2:
            return None
        lvl_risk = np.stack([risk_mat[x == c].sum(axis=0) for c in codes])
        lvl_event = np.stack([event_mat[x == c].sum(axis=0) for c in codes])
        lvl_n = np.array([np.sum(x == c) for c in codes])
        L = len(codes)
        if L <= MAX_EXHAUSTIVE_LEVELS:
            # subsets containing the first observed level, excluding the full set
            parts = []
            for mask in range(2 ** (L - 1) - 1):
                member = np.array([True] + [(mask >> b) & 1 == 1 for b in range(L - 1)])
                parts.append(member)
            member = np.array(parts)
        else:
            member = np.eye(L, dtype=bool)
        sizes = member.astype(float) @ lvl_n
        n = lvl_n.sum()
        ok = (sizes >= min_size) & (n - sizes >= min_size)
        if not ok.any():
            return None
        member = member[ok]
        stats = logrank_statistics(member.astype(float) @ lvl_risk, member.astype(float) @ lvl_event,
                                   at_risk, events)
        i = int(np.argmax(stats))
        if stats[i] <= 0:
            return None
        return float(stats[i]), None, sorted(int(c) for c in codes[member[i]])


def _canonical_order(X, time, event):
    keys = [event, time] + [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    return np.lexsort(keys[::-1])


def fit_rsf(data: SurvivalDataset, config: RSFConfig | None = None, encoding: Encoding | None = None) -> RSFModel:
    cfg = config or RSFConfig()
    if cfg.min_node_size < 1 or cfg.n_trees < 1:
        raise ValueError("min_node_size and n_trees must be positive")
    enc = encoding or Encoding.from_dataset(data)
    X_raw = enc.raw_matrix(data.features)
    order = _canonical_order(X_raw, data.time, data.event)
    X, time, event = X_raw[order], data.time[order], data.event[order]
    n = len(X)

    def grow(tree_index):
        rng = np.random.default_rng([cfg.seed, tree_index])
        boot = np.sort(rng.integers(0, n, size=n)) if cfg.bootstrap else np.arange(n)
        grower = _TreeGrower(X, time, event, enc.types, cfg, rng)
        tree = grower.grow(boot)
        inbag = np.zeros(n, bool)
        inbag[boot] = True
        return tree, inbag

    threads = max(1, int(cfg.threads))
    if threads == 1:
        results = [grow(b) for b in range(cfg.n_trees)]
    else:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(grow, range(cfg.n_trees)))
    base_t, base_h = nelson_aalen_arrays(data.time, data.event)
    model = RSFModel([r[0] for r in results], enc, cfg, base_t, base_h)
    model._inbag = [r[1] for r in results]
    model._train_order = order
    return model
