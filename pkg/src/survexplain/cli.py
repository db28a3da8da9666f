"""Command-line driver: synth, fit, evaluate and explain.

Every command writes into ``--out`` (a directory). JSON results carry the
resolved configuration and library versions; long tables go to CSV with a
``.meta.json`` sidecar. Nothing time-dependent is written, so reruns with the
same seed produce identical files.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .core import as_grid, default_eval_grid, observed_time_weights, thin_grid
from .dataio import DatasetSchema, SyntheticSpec, generate_synthetic, load_csv, save_csv, schema_from_dataset

STOCHASTIC = {"synth", "rsf", "ice", "hstat", "pfi", "cpi", "loco", "survlime", "survshap", "counterfactual"}
METHODS = ("ice", "pdp", "ale", "mplot", "hstat", "pfi", "cpi", "loco", "survlime", "survshap", "counterfactual")


class UsageError(Exception):
    pass


def versions() -> dict:
    return {"survexplain": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "pandas": pd.__version__, "python": platform.python_version()}


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    return obj


def write_json(path: Path, doc: dict):
    path.write_text(json.dumps(_clean(doc), indent=1, sort_keys=True) + "\n")


def write_table(path: Path, frame: pd.DataFrame, meta: dict):
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    write_json(path.with_suffix(".meta.json"), meta)


def resolve_threads(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get("SURVEXPLAIN_THREADS")
    return int(env) if env else 1


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="survexplain", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, model=False):
        if data:
            p.add_argument("--data", required=True)
            p.add_argument("--schema", required=True)
            p.add_argument("--impute", action="store_true", help="fill missing cells (median / mode)")
        if model:
            p.add_argument("--model", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)

    def timing(p):
        p.add_argument("--times", default="auto", help="'auto' (clipped event times) or comma list")
        p.add_argument("--n-times", type=int, help="thin the auto grid to this many points")

    s = sub.add_parser("synth", help="generate a synthetic Cox dataset")
    common(s, data=False)
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--p", type=int, default=5)
    s.add_argument("--coef", type=_floats, help="comma-separated coefficients (default alternating 1, -0.5, ...)")
    s.add_argument("--baseline", choices=("exponential", "weibull"), default="exponential")
    s.add_argument("--censoring", type=float, default=0.3)
    s.add_argument("--n-categorical", type=int, default=0)

    f = sub.add_parser("fit", help="fit a model")
    f.add_argument("family", choices=("cox", "rsf"))
    common(f)
    f.add_argument("--n-trees", type=int, default=100)
    f.add_argument("--mtry", type=int)
    f.add_argument("--min-node-size", type=int, default=15)
    f.add_argument("--no-bootstrap", action="store_true")

    e = sub.add_parser("evaluate", help="Brier curve, integrated Brier, C-index, D-calibration")
    common(e, model=True)
    timing(e)
    e.add_argument("--bins", type=int, default=10)

    x = sub.add_parser("explain", help="run an explainer")
    x.add_argument("method", choices=METHODS)
    common(x, model=True)
    timing(x)
    x.add_argument("--feature")
    x.add_argument("--feature2", help="second feature for two-way H")
    x.add_argument("--grid-kind", choices=("equidistant", "quantile", "sample"), default="quantile")
    x.add_argument("--grid-size", type=int, default=20)
    x.add_argument("--center-at", help="reference value for centred ICE/PDP")
    x.add_argument("--ice-sample", type=int, default=100)
    x.add_argument("--neighborhood", type=float, default=0.1)
    x.add_argument("--intervals", type=int, default=10)
    x.add_argument("--marginalize", choices=("none", "mean", "sum"), default="none")
    x.add_argument("--output-scale", choices=("survival", "chf", "log_chf"), default="survival")
    x.add_argument("--eval-rows", type=int, default=200)
    x.add_argument("--repeats", type=int, default=10)
    x.add_argument("--mode", choices=("difference", "quotient"), default="difference")
    x.add_argument("--family", choices=("cox", "rsf"), help="refit family for LOCO (default: model's)")
    x.add_argument("--instance", type=int, action="append", help="row index (repeatable)")
    x.add_argument("--g", type=int, default=100)
    x.add_argument("--radius", type=float, default=0.5)
    x.add_argument("--lime-baseline", choices=("nelson-aalen", "breslow"), default="nelson-aalen")
    x.add_argument("--r-gap", type=float)
    x.add_argument("--C", type=float, default=0.1)
    x.add_argument("--particles", type=int, default=50)
    x.add_argument("--iterations", type=int, default=200)
    x.add_argument("--estimator", choices=("sampling", "kernel"), default="sampling")
    x.add_argument("--n-samples", default="auto", help="permutations / coalitions, 'auto', 'exact' or 'all'")
    x.add_argument("--background", type=int, default=100)
    return parser


def _load(args):
    schema = DatasetSchema.load(args.schema)
    data, imputed = load_csv(args.data, schema, impute=args.impute)
    return data, schema, imputed


def _times(args, data):
    if args.times == "auto":
        grid = default_eval_grid(data)
        return thin_grid(grid, args.n_times) if args.n_times else grid
    return as_grid(_floats(args.times))


def _config(args, threads) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("threads", "out")}
    return {"config": cfg, "runtime": {"threads": threads}, "versions": versions()}


def cmd_synth(args, out, meta):
    coefs = tuple(args.coef) if args.coef else tuple((1.0 if k % 2 == 0 else -0.5) / (1 + k // 2)
                                                     for k in range(args.p))
    spec = SyntheticSpec(n=args.n, p=args.p, coefficients=coefs, baseline=args.baseline,
                         censoring_rate=args.censoring, n_categorical=args.n_categorical, seed=args.seed)
    data = generate_synthetic(spec)
    schema = schema_from_dataset(data)
    save_csv(data, out / "data.csv", schema)
    schema.save(out / "schema.json")
    write_json(out / "synth.json", {**meta, "spec": spec.to_dict(),
                                    "censoring_fraction": float(1 - data.event.mean())})


def cmd_fit(args, out, meta, threads):
    from .models import RSFConfig, fit_cox, fit_rsf, save_model
    data, _, imputed = _load(args)
    if args.family == "cox":
        model = fit_cox(data)
    else:
        cfg = RSFConfig(n_trees=args.n_trees, mtry=args.mtry, min_node_size=args.min_node_size,
                        seed=args.seed, bootstrap=not args.no_bootstrap, threads=threads)
        model = fit_rsf(data, cfg)
    save_model(model, out / "model.json", extra=_clean({"meta": {**meta, "imputed": imputed}}))


def cmd_evaluate(args, out, meta):
    from .metrics import evaluate
    from .models import load_model
    data, _, _ = _load(args)
    model = load_model(args.model)
    report = evaluate(model, data, _times(args, data), bins=args.bins)
    write_json(out / "evaluation.json", {**meta, "result": report.to_dict()})


def _need(args, *names):
    for n in names:
        if getattr(args, n.replace("-", "_")) is None:
            raise UsageError(f"--{n} is required for explain {args.method}")


def cmd_explain(args, out, meta, threads):
    from . import effects, importance, interactions, local, survshap
    from .models import load_model, CoxModel
    data, _, _ = _load(args)
    model = load_model(args.model)
    times = _times(args, data)
    method = args.method
    scale = args.output_scale
    if method in ("ice", "pdp", "ale", "mplot", "hstat"):
        _need(args, "feature")
    if args.feature is not None and args.feature not in data.feature_names:
        raise ValueError(f"unknown feature {args.feature!r}")
    weights = observed_time_weights(data, times)
    weights = weights if weights.sum() > 0 else None

    def marginal(surface):
        if args.marginalize == "none":
            return surface
        return effects.marginalize_time(surface, args.marginalize, weights)

    if method in ("ice", "pdp", "mplot"):
        grid = effects.build_grid(data, args.feature, args.grid_kind, args.grid_size, seed=args.seed or 0)
        center = None
        if args.center_at is not None:
            center = args.center_at if grid.categorical else float(args.center_at)
        if method == "ice":
            rows = effects.sample_rows(data, args.ice_sample, args.seed)
            surface = effects.ice_curves(model, data, grid, times, center, rows, scale)
        elif method == "pdp":
            surface = effects.pdp_curves(model, data, grid, times, center, None, scale)
        else:
            surface = effects.m_plot(model, data, grid, times, args.neighborhood, scale)
        surface = marginal(surface)
        write_table(out / f"{method}.csv", surface.to_long(), meta)
        return
    if method == "ale":
        if args.marginalize == "none":
            surface = effects.ale_curves(model, data, args.feature, times, args.intervals, True, scale)
        else:
            surface = effects.ale_t(model, data, args.feature, times, args.marginalize, weights,
                                    args.intervals, True, scale)
        write_table(out / "ale.csv", surface.to_long(), meta)
        return
    if method == "hstat":
        rows = interactions.eval_rows(data, args.eval_rows, args.seed)
        if args.feature2:
            res = interactions.h_two_way(model, data, args.feature, args.feature2, times, rows, output=scale)
        else:
            res = interactions.h_total(model, data, args.feature, times, rows, output=scale)
        write_table(out / "hstat.csv", res.to_frame(), meta)
        write_json(out / "hstat.json", {**meta, "result": res.to_dict()})
        return
    if method in ("pfi", "cpi", "loco"):
        if method == "pfi":
            res = importance.pfi(model, data, None, args.repeats, times, args.mode, args.seed)
        elif method == "cpi":
            res = importance.cpi(model, data, None, args.repeats, times, args.mode, args.seed)
        else:
            from .models import RSFConfig
            family = args.family or ("cox" if isinstance(model, CoxModel) else "rsf")
            cfg = None
            if family == "rsf":
                base = model.config if hasattr(model, "config") else RSFConfig()
                cfg = RSFConfig(n_trees=base.n_trees, mtry=base.mtry, min_node_size=base.min_node_size,
                                seed=args.seed, bootstrap=base.bootstrap, threads=threads)
            res = importance.loco(importance.ModelSpec(family, cfg), data, None, times, args.mode)
        importance.fi_significance(res)
        write_table(out / f"{method}.csv", res.to_frame(), meta)
        write_json(out / f"{method}.json", {**meta, "result": res.to_dict()})
        return
    instances = args.instance or [0]
    if method == "survlime":
        docs = [local.survlime_explain(model, data, i, args.g, args.radius, args.seed,
                                       baseline=args.lime_baseline).to_dict() for i in instances]
        write_json(out / "survlime.json", {**meta, "result": dict(zip(map(str, instances), docs))})
        return
    if method == "counterfactual":
        _need(args, "r-gap")
        cfg = local.PSOConfig(particles=args.particles, iterations=args.iterations)
        docs = [local.counterfactual_explain(model, data, i, args.r_gap, args.C, cfg, args.seed).to_dict()
                for i in instances]
        write_json(out / "counterfactual.json", {**meta, "result": dict(zip(map(str, instances), docs))})
        return
    if method == "survshap":
        bg = survshap.background_rows(data, args.background, args.seed)
        n = args.n_samples
        n = n if n in ("auto", "exact", "all") else int(n)
        results = survshap.explain_instances(model, data, instances, times, bg, args.estimator, n,
                                             args.seed, scale)
        glob = survshap.aggregate_global(results, data.features)
        write_json(out / "survshap.json", {**meta, "result": {str(r.instance): r.to_dict() for r in results},
                                           "ranking": glob.ranking()})
        write_table(out / "survshap_global.csv", glob.curves_frame(), meta)
        write_table(out / "survshap_beeswarm.csv", glob.beeswarm, meta)
        return
    raise UsageError(f"unknown method {method!r}")


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    key = args.family if args.command == "fit" else (args.method if args.command == "explain" else args.command)
    if key in STOCHASTIC and args.seed is None:
        parser.error(f"--seed is required for {key}")
    threads = resolve_threads(args.threads)
    if threads < 1:
        parser.error("--threads must be >= 1")
    out = Path(args.out)
    meta = _config(args, threads)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "synth":
            cmd_synth(args, out, meta)
        elif args.command == "fit":
            cmd_fit(args, out, meta, threads)
        elif args.command == "evaluate":
            cmd_evaluate(args, out, meta)
        else:
            cmd_explain(args, out, meta, threads)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(json.dumps({"error": "usage", "message": str(err)}), file=sys.stderr)
        return 2
    except Exception as err:  # computation errors surface as exit 1 with a JSON record
        print(json.dumps({"error": type(err).__name__, "message": str(err)}), file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
