"""Self-describing JSON documents for fitted models."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..core import StepCurve, TimeGrid
from ..dataio import Encoding
from .cox import CoxModel
from .rsf import RSFConfig, RSFModel, SurvivalTree


def model_to_dict(model) -> dict:
    if isinstance(model, CoxModel):
        return {
            "type": "cox",
            "encoding": model.encoding.to_dict(),
            "coefficients": model.coefficients.tolist(),
            "coefficient_names": model.encoding.column_names(),
            "baseline_grid": model.baseline_chf.grid.points.tolist(),
            "baseline_chf": model.baseline_chf.values.tolist(),
            "fit_report": model.fit_report,
        }
    if isinstance(model, RSFModel):
        return {
            "type": "rsf",
            "encoding": model.encoding.to_dict(),
            "config": model.config.to_dict(),
            "trees": [t.to_dict() for t in model.trees],
            "baseline_grid": np.asarray(model.baseline_times).tolist(),
            "baseline_chf": np.asarray(model.baseline_chf).tolist(),
        }
    raise TypeError(f"cannot serialise {type(model).__name__}")


def model_from_dict(d: dict):
    enc = Encoding.from_dict(d["encoding"])
    if d["type"] == "cox":
        base = StepCurve(TimeGrid(d["baseline_grid"]), d["baseline_chf"], "chf")
        return CoxModel(np.array(d["coefficients"]), base, enc, d.get("fit_report", {}))
    if d["type"] == "rsf":
        cfg = RSFConfig(**d["config"])
        trees = [SurvivalTree.from_dict(t) for t in d["trees"]]
        return RSFModel(trees, enc, cfg, np.array(d["baseline_grid"]), np.array(d["baseline_chf"]))
    raise ValueError(f"unknown model type {d['type']!r}")


def save_model(model, path, extra: dict | None = None):
    doc = model_to_dict(model)
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc))


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))
