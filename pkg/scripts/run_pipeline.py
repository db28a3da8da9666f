"""Timed end-to-end run through the command line: synth -> fit -> evaluate ->
every explainer. Prints per-step wall times as JSON.

    python3 scripts/run_pipeline.py --out /tmp/pipe --n 500 --p 10 --n-times 50
"""

import argparse
import json
import sys
import time
from pathlib import Path

from survexplain.cli import run


def steps(out: Path, n: int, p: int, n_times: int, seed: int, threads: int, family: str, n_trees: int):
    syn, fit = out / "synth", out / "fit"
    io = ["--data", str(syn / "data.csv"), "--schema", str(syn / "schema.json")]
    model = ["--model", str(fit / "model.json")]
    common = ["--seed", str(seed), "--threads", str(threads)]
    grid = ["--n-times", str(n_times)]
    fit_args = ["fit", family, *io, "--out", str(fit), *common]
    if family == "rsf":
        fit_args += ["--n-trees", str(n_trees)]
    yield "synth", ["synth", "--out", str(syn), "--n", str(n), "--p", str(p), "--n-categorical", "1", *common]
    yield "fit", fit_args
    yield "evaluate", ["evaluate", *io, *model, "--out", str(out / "evaluate"), *grid]
    explain = [
        ("ice", ["--feature", "x1"]),
        ("pdp", ["--feature", "x1"]),
        ("ale", ["--feature", "x1"]),
        ("mplot", ["--feature", "x1"]),
        ("hstat", ["--feature", "x1", "--feature2", "x2"]),
        ("hstat_total", ["--feature", "x1"]),
        ("pfi", ["--repeats", "5"]),
        ("cpi", ["--repeats", "5"]),
        ("loco", []),
        ("survlime", ["--instance", "0"]),
        ("survshap", ["--instance", "0", "--instance", "1"]),
        ("counterfactual", ["--instance", "0", "--r-gap", "1.0"]),
    ]
    for name, extra in explain:
        method = "hstat" if name.startswith("hstat") else name
        yield name, ["explain", method, *io, *model, "--out", str(out / name), *common, *grid, *extra]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--p", type=int, default=10)
    ap.add_argument("--n-times", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--family", choices=("cox", "rsf"), default="rsf")
    ap.add_argument("--n-trees", type=int, default=100)
    args = ap.parse_args(argv)
    out = Path(args.out)
    timings = {}
    start = time.perf_counter()
    for name, cmd in steps(out, args.n, args.p, args.n_times, args.seed, args.threads, args.family, args.n_trees):
        t0 = time.perf_counter()
        code = run(cmd)
        timings[name] = round(time.perf_counter() - t0, 3)
        if code != 0:
            print(json.dumps({"failed": name, "code": code, "timings": timings}))
            return code
    timings["total"] = round(time.perf_counter() - start, 3)
    print(json.dumps(timings, indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())
