"""Dataset ingestion, schemas, one-hot encoding, splitting and the synthetic
Cox-model data generator."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .core import SurvivalDataset

ROLES = ("feature", "time", "event", "ignore")
TYPES = ("numeric", "categorical")


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    role: str = "feature"
    type: str = "numeric"
    levels: tuple = ()

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"column {self.name!r}: unknown role {self.role!r}")
        if self.type not in TYPES:
            raise ValueError(f"column {self.name!r}: unknown type {self.type!r}")
        if self.role == "feature" and self.type == "categorical" and len(self.levels) == 0:
            raise ValueError(f"categorical column {self.name!r} needs a level list")
        object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))


@dataclass(frozen=True)
class DatasetSchema:
    columns: tuple

    def __post_init__(self):
        cols = tuple(c if isinstance(c, ColumnSpec) else ColumnSpec(**c) for c in self.columns)
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            raise ValueError("column names must be unique")
        for role in ("time", "event"):
            if sum(c.role == role for c in cols) != 1:
                raise ValueError(f"schema needs exactly one {role} column")
        object.__setattr__(self, "columns", cols)

    @property
    def time_column(self) -> str:
        return next(c.name for c in self.columns if c.role == "time")

    @property
    def event_column(self) -> str:
        return next(c.name for c in self.columns if c.role == "event")

    @property
    def feature_columns(self) -> list[ColumnSpec]:
        return [c for c in self.columns if c.role == "feature"]

    def to_dict(self) -> dict:
        out = []
        for c in self.columns:
            d = {"name": c.name, "role": c.role, "type": c.type}
            if c.type == "categorical":
                d["levels"] = list(c.levels)
            out.append(d)
        return {"columns": out}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSchema":
        return cls(tuple(ColumnSpec(**c) for c in d["columns"]))

    @classmethod
    def load(cls, path) -> "DatasetSchema":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def schema_from_dataset(data: SurvivalDataset, time_name="time", event_name="event") -> DatasetSchema:
    cols = []
    for name in data.feature_names:
        if data.is_categorical(name):
            cols.append(ColumnSpec(name, "feature", "categorical", tuple(data.levels(name))))
        else:
            cols.append(ColumnSpec(name, "feature", "numeric"))
    cols += [ColumnSpec(time_name, "time"), ColumnSpec(event_name, "event")]
    return DatasetSchema(tuple(cols))


def load_csv(path, schema: DatasetSchema, impute: bool = False):
    """Read a CSV under ``schema``. Returns ``(dataset, imputed)`` where
    ``imputed`` maps column name to the number of filled cells."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("empty CSV file") from None
        rows = [r for r in reader if r]
    missing_cols = [c.name for c in schema.columns if c.role != "ignore" and c.name not in header]
    if missing_cols:
        raise ValueError(f"columns missing from CSV header: {missing_cols}")
    pos = {name: i for i, name in enumerate(header)}
    for lineno, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise ValueError(f"row {lineno}: expected {len(header)} fields, got {len(r)}")

    def cells(name):
        return [r[pos[name]].strip() for r in rows]

    def parse_float(name, raw, lineno):
        try:
            return float(raw)
        except ValueError:
            raise ValueError(f"row {lineno}, column {name!r}: cannot parse {raw!r}") from None

    time = []
    for lineno, raw in enumerate(cells(schema.time_column), start=2):
        if raw == "":
            raise ValueError(f"row {lineno}, column {schema.time_column!r}: missing time")
        t = parse_float(schema.time_column, raw, lineno)
        if not math.isfinite(t) or t < 0:
            raise ValueError(f"row {lineno}: negative or non-finite time {raw!r}")
        time.append(t)
    event = []
    for lineno, raw in enumerate(cells(schema.event_column), start=2):
        v = parse_float(schema.event_column, raw, lineno) if raw != "" else None
        if v not in (0.0, 1.0):
            raise ValueError(f"row {lineno}: event must be 0 or 1, got {raw!r}")
        event.append(int(v))

    imputed = {}
    feats = {}
    for col in schema.feature_columns:
        raw = cells(col.name)
        miss = [i for i, v in enumerate(raw) if v == ""]
        if miss and not impute:
            raise ValueError(f"row {miss[0] + 2}, column {col.name!r}: missing value")
        if col.type == "numeric":
            vals = [np.nan if v == "" else parse_float(col.name, v, i + 2) for i, v in enumerate(raw)]
            arr = np.array(vals, dtype=float)
            if miss:
                arr[np.isnan(arr)] = np.nanmedian(arr)
            feats[col.name] = arr
        else:
            for i, v in enumerate(raw):
                if v != "" and v not in col.levels:
                    raise ValueError(f"row {i + 2}, column {col.name!r}: unknown level {v!r}")
            if miss:
                present = pd.Series([v for v in raw if v != ""])
                counts = present.value_counts()
                # ties broken by schema level order
                mode = max(col.levels, key=lambda lv: (counts.get(lv, 0), -col.levels.index(lv)))
                raw = [mode if v == "" else v for v in raw]
            feats[col.name] = pd.Categorical(raw, categories=list(col.levels))
        if miss:
            imputed[col.name] = len(miss)
    data = SurvivalDataset(pd.DataFrame(feats), np.array(time), np.array(event))
    return data, imputed


def save_csv(data: SurvivalDataset, path, schema: DatasetSchema | None = None):
    schema = schema or schema_from_dataset(data)
    header = [c.name for c in schema.feature_columns] + [schema.time_column, schema.event_column]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        cols = [data.features[c.name].tolist() for c in schema.feature_columns]
        for i in range(data.n):
            row = [v if isinstance(v, str) else repr(float(v)) for v in (c[i] for c in cols)]
            w.writerow(row + [repr(float(data.time[i])), str(int(data.event[i]))])


@dataclass(frozen=True)
class Encoding:
    """Numeric encoding of a feature table.

    ``reference`` encoding drops the first level of each categorical column
    (used for model fitting); ``full`` keeps every level (used for knockoffs).
    """

    names: tuple
    types: tuple
    levels: tuple

    @classmethod
    def from_dataset(cls, data: SurvivalDataset) -> "Encoding":
        names = tuple(data.feature_names)
        types = tuple("categorical" if data.is_categorical(n) else "numeric" for n in names)
        levels = tuple(tuple(data.levels(n)) if t == "categorical" else () for n, t in zip(names, types))
        return cls(names, types, levels)

    def to_dict(self) -> dict:
        return {"columns": [{"name": n, "type": t, "levels": list(lv)}
                            for n, t, lv in zip(self.names, self.types, self.levels)]}

    @classmethod
    def from_dict(cls, d: dict) -> "Encoding":
        cols = d["columns"]
        return cls(tuple(c["name"] for c in cols), tuple(c["type"] for c in cols),
                   tuple(tuple(c.get("levels", ())) for c in cols))

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown feature {name!r}") from None

    def drop(self, name: str) -> "Encoding":
        j = self.index(name)
        keep = [i for i in range(len(self.names)) if i != j]
        return Encoding(tuple(self.names[i] for i in keep), tuple(self.types[i] for i in keep),
                        tuple(self.levels[i] for i in keep))

    def codes(self, features: pd.DataFrame, name: str) -> np.ndarray:
        """Integer level codes of a categorical column; unknown levels raise."""
        levels = self.levels[self.index(name)]
        col = features[name]
        if isinstance(col.dtype, pd.CategoricalDtype) and tuple(col.cat.categories) == levels:
            codes = col.cat.codes.to_numpy().astype(int)
            if np.any(codes < 0):
                raise ValueError(f"unknown categorical level in column {name!r}")
            return codes
        lookup = {lv: k for k, lv in enumerate(levels)}
        try:
            return np.array([lookup[str(v)] for v in col.tolist()], dtype=int)
        except KeyError as err:
            raise ValueError(f"unknown categorical level {err.args[0]!r} in column {name!r}") from None

    def raw_matrix(self, features: pd.DataFrame) -> np.ndarray:
        """Numeric values and categorical codes side by side (one column per feature)."""
        missing = [n for n in self.names if n not in features.columns]
        if missing:
            raise ValueError(f"features missing: {missing}")
        cols = []
        for n, t in zip(self.names, self.types):
            if t == "categorical":
                cols.append(self.codes(features, n).astype(float))
            else:
                cols.append(features[n].to_numpy(dtype=float))
        return np.column_stack(cols) if cols else np.empty((len(features), 0))

    def column_names(self, full: bool = False) -> list[str]:
        out = []
        for n, t, lv in zip(self.names, self.types, self.levels):
            if t == "categorical":
                out += [f"{n}={v}" for v in (lv if full else lv[1:])]
            else:
                out.append(n)
        return out

    def blocks(self, full: bool = False) -> dict[str, list[int]]:
        out, k = {}, 0
        for n, t, lv in zip(self.names, self.types, self.levels):
            width = (len(lv) if full else len(lv) - 1) if t == "categorical" else 1
            out[n] = list(range(k, k + width))
            k += width
        return out

    @property
    def width(self) -> int:
        return len(self.column_names())

    def transform(self, features: pd.DataFrame, full: bool = False) -> np.ndarray:
        n = len(features)
        cols = []
        for name, t, lv in zip(self.names, self.types, self.levels):
            if t == "categorical":
                codes = self.codes(features, name)
                onehot = np.zeros((n, len(lv)))
                onehot[np.arange(n), codes] = 1.0
                cols.append(onehot if full else onehot[:, 1:])
            else:
                cols.append(features[name].to_numpy(dtype=float)[:, None])
        return np.hstack(cols) if cols else np.empty((n, 0))

    def decode(self, matrix: np.ndarray, full: bool = False) -> pd.DataFrame:
        """Inverse of ``transform``; categorical blocks decode by argmax, with
        the dropped reference level winning when every indicator is <= 0.5."""
        matrix = np.asarray(matrix, dtype=float)
        blocks = self.blocks(full)
        out = {}
        for name, t, lv in zip(self.names, self.types, self.levels):
            block = matrix[:, blocks[name]]
            if t == "categorical":
                if full:
                    codes = np.argmax(block, axis=1)
                else:
                    codes = np.where(block.max(axis=1, initial=-np.inf) > 0.5,
                                     np.argmax(block, axis=1) + 1, 0) if block.shape[1] else np.zeros(len(block), int)
                out[name] = pd.Categorical([lv[c] for c in codes], categories=list(lv))
            else:
                out[name] = block[:, 0]
        return pd.DataFrame(out)


def set_feature(features: pd.DataFrame, name: str, value) -> pd.DataFrame:
    """Copy of ``features`` with column ``name`` set to ``value`` (scalar or
    per-row), preserving categorical dtype."""
    out = features.copy()
    col = features[name]
    if isinstance(col.dtype, pd.CategoricalDtype):
        vals = [value] * len(out) if np.isscalar(value) else list(value)
        out[name] = pd.Categorical(vals, categories=col.cat.categories)
        if out[name].isna().any():
            raise ValueError(f"unknown categorical level for column {name!r}")
    else:
        out[name] = np.broadcast_to(np.asarray(value, dtype=float), (len(out),)).copy()
    return out


def split(data: SurvivalDataset, fractions=(0.6, 0.2, 0.2), seed: int = 0, stratify: bool = True):
    """Seeded train/valid/test partition, stratified on the event indicator."""
    fractions = np.asarray(fractions, dtype=float)
    if len(fractions) != 3 or np.any(fractions < 0) or abs(fractions.sum() - 1) > 1e-9:
        raise ValueError("fractions must be three nonnegative numbers summing to 1")
    rng = np.random.default_rng(seed)
    groups = [np.flatnonzero(data.event == e) for e in (1, 0)] if stratify else [np.arange(data.n)]
    parts = [[], [], []]
    for g in groups:
        g = rng.permutation(g)
        cuts = np.round(np.cumsum(fractions)[:2] * len(g)).astype(int)
        for k, chunk in enumerate(np.split(g, cuts)):
            parts[k].append(chunk)
    out = []
    for k in range(3):
        rows = np.sort(np.concatenate(parts[k]))
        if len(rows) == 0 or data.event[rows].sum() == 0:
            raise ValueError("every split must contain at least one event")
        out.append(data.subset(rows))
    return tuple(out)


@dataclass(frozen=True)
class SyntheticSpec:
    """Cox-model data generator settings.

    Baseline cumulative hazard is ``rate * t`` (exponential) or
    ``(t / scale) ** shape`` (weibull). ``interactions`` holds
    ``(i, j, coef)`` product terms added to the linear predictor. The last
    ``n_categorical`` features are discretised into three levels and enter
    the linear predictor through their level code.
    """

    n: int = 500
    p: int = 5
    coefficients: tuple = ()
    baseline: str = "exponential"
    rate: float = 0.1
    shape: float = 1.5
    scale: float = 10.0
    censoring_rate: float = 0.3
    interactions: tuple = ()
    correlation: np.ndarray | None = field(default=None, compare=False)
    n_categorical: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.censoring_rate < 1:
            raise ValueError("censoring rate must be in [0, 1)")
        if self.n < 1 or self.p < 1:
            raise ValueError("n and p must be positive")
        if self.coefficients and len(self.coefficients) != self.p:
            raise ValueError("need one coefficient per feature")
        if self.baseline not in ("exponential", "weibull"):
            raise ValueError("baseline must be 'exponential' or 'weibull'")
        if not 0 <= self.n_categorical <= self.p:
            raise ValueError("n_categorical must be between 0 and p")

    def to_dict(self) -> dict:
        return {"n": self.n, "p": self.p, "coefficients": list(self.coefficients),
                "baseline": self.baseline, "rate": self.rate, "shape": self.shape,
                "scale": self.scale, "censoring_rate": self.censoring_rate,
                "interactions": [list(t) for t in self.interactions],
                "correlation": None if self.correlation is None else np.asarray(self.correlation).tolist(),
                "n_categorical": self.n_categorical, "seed": self.seed}


CATEGORY_LEVELS = ("a", "b", "c")


def generate_synthetic(spec: SyntheticSpec) -> SurvivalDataset:
    rng = np.random.default_rng(spec.seed)
    z = rng.standard_normal((spec.n, spec.p))
    if spec.correlation is not None:
        corr = np.asarray(spec.correlation, dtype=float)
        z = z @ np.linalg.cholesky(corr).T
    names = [f"x{j + 1}" for j in range(spec.p)]
    design = z.copy()
    cat_cols = list(range(spec.p - spec.n_categorical, spec.p))
    for j in cat_cols:
        design[:, j] = np.digitize(z[:, j], [-0.4307, 0.4307]).astype(float)
    b = np.asarray(spec.coefficients if spec.coefficients else np.zeros(spec.p), dtype=float)
    eta = design @ b
    for i, j, coef in spec.interactions:
        eta = eta + coef * design[:, i] * design[:, j]
    e = rng.exponential(size=spec.n) / np.exp(eta)
    if spec.baseline == "exponential":
        t_event = e / spec.rate
    else:
        t_event = spec.scale * e ** (1.0 / spec.shape)
    u = rng.exponential(size=spec.n)
    if spec.censoring_rate == 0:
        time, event = t_event, np.ones(spec.n, int)
    else:
        rate = _calibrate_censoring(t_event, u, spec.censoring_rate)
        t_cens = u / rate
        event = (t_event <= t_cens).astype(int)
        time = np.minimum(t_event, t_cens)
        achieved = 1 - event.mean()
        if abs(achieved - spec.censoring_rate) > 0.02:
            raise ValueError(f"censoring target {spec.censoring_rate} unattainable (got {achieved:.3f})")
    feats = {}
    for j, name in enumerate(names):
        if j in cat_cols:
            feats[name] = pd.Categorical([CATEGORY_LEVELS[int(v)] for v in design[:, j]],
                                         categories=list(CATEGORY_LEVELS))
        else:
            feats[name] = design[:, j]
    return SurvivalDataset(pd.DataFrame(feats), time, event)


def _calibrate_censoring(t_event, u, target):
    """Exponential censoring rate whose censored fraction is closest to target."""
    def frac(log_rate):
        return np.mean(u / np.exp(log_rate) < t_event)

    lo, hi = -30.0, 30.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if frac(mid) < target:
            lo = mid
        else:
            hi = mid
    best = min((lo, hi), key=lambda lr: abs(frac(lr) - target))
    return float(np.exp(best))
