"""Batch experiment runner.

    dsvie run --config experiment.json [--out DIR] [--seed-override N]
              [--threads K] [--json]
    dsvie list-corpus [--json]

A run executes the configured corpus problem and writes summary.json,
series.csv and rendered figures (series.png, convergence.png when a
residual history exists) into the output directory, plus binary field
dumps when the config asks for them. Exit codes: 0 success, 2 a check
missed its tolerance, 3 configuration error, 4 solver non-convergence.
Errors are also emitted as structured JSON on stderr. Reruns with an
identical config are byte-identical in summary.json except for the
wallclock entry, at any --threads value.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__
from .config import ExperimentConfig, load_config
from .corpus import get_problem, listing
from .errors import ConfigError, DsvieError, NonConvergenceError
from .grid import generate_scenarios, make_grid
from .report import render_convergence_figure, render_series_figure, write_series_csv
from .serialize import save_field


def _limit_blas_threads() -> None:
    """Pin BLAS pools so results do not depend on the ambient thread env."""
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(1)
    except Exception:
        pass


def _json_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def _round_trip(obj):
    """Make numpy scalars/arrays JSON-serializable.

    Nested wallclock entries are dropped so a rerun's summary differs
    from the original only in the single top-level wallclock field.
    """
    import numpy as np

    if isinstance(obj, dict):
        return {k: _round_trip(v) for k, v in obj.items() if k != "wallclock"}
    if isinstance(obj, (list, tuple)):
        return [_round_trip(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _round_trip(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and obj != obj:  # NaN has no JSON literal
        return None
    return obj


def run_experiment(config: ExperimentConfig, out_dir: Path, threads: int = 1) -> dict:
    """Execute one configured experiment and write its artifacts."""
    t_start = time.perf_counter()
    grid = make_grid(config.T, config.N)
    batch = generate_scenarios(
        grid, config.paths, d=config.d, l=config.l, seed=config.seed, threads=max(1, threads)
    )
    problem = get_problem(config.problem)
    output = problem.run(batch, config.basis(), config.solver, config.tolerances, config.overrides)

    out_dir.mkdir(parents=True, exist_ok=True)
    write_series_csv(output.series, out_dir / "series.csv")
    figures = ["series.png"]
    render_series_figure(
        output.series, out_dir / "series.png", f"{config.problem} ({config.kind})"
    )
    if output.convergence:
        render_convergence_figure(
            output.convergence, out_dir / "convergence.png", f"{config.problem} residuals"
        )
        figures.append("convergence.png")
    dumped = []
    if config.dump_fields:
        for name, values in output.fields.items():
            fname = f"{name}.bin"
            save_field(values, out_dir / fname)
            dumped.append(fname)

    checks = [c.as_dict() for c in output.checks]
    summary = {
        "experiment": _round_trip(config.raw),
        "provenance": {
            "package": "dsvie",
            "version": __version__,
            "problem": config.problem,
            "kind": config.kind,
            "seed": config.seed,
            "paths": config.paths,
            "grid": {"T": config.T, "N": config.N},
            "threads": threads,
        },
        "results": _round_trip(output.summary),
        "checks": checks,
        "all_checks_passed": all(c["passed"] for c in checks),
        "outputs": {"series_csv": "series.csv", "figures": figures, "field_dumps": dumped},
        "wallclock_seconds": time.perf_counter() - t_start,
    }
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def run(config_path, out=None, seed_override=None, threads=1, json_mode=False) -> int:
    """CLI run verb; returns the documented exit code."""
    _limit_blas_threads()
    try:
        config = load_config(config_path)
        if seed_override is not None:
            config.seed = int(seed_override)
            config.raw = dict(config.raw)
            config.raw.setdefault("batch", {})
            config.raw["batch"] = dict(config.raw["batch"])
            config.raw["batch"]["seed"] = config.seed
        out_dir = Path(out) if out else Path(config.output_dir or f"out-{config.problem}")
        summary = run_experiment(config, out_dir, threads=threads)
    except ConfigError as exc:
        _json_error("config", str(exc))
        return 3
    except NonConvergenceError as exc:
        _json_error("non-convergence", str(exc))
        return 4
    except DsvieError as exc:
        _json_error(type(exc).__name__, str(exc))
        return 3
    if json_mode:
        sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    else:
        for c in summary["checks"]:
            status = "pass" if c["passed"] else "FAIL"
            sys.stdout.write(
                f"[{status}] {c['name']}: {c['value']:.6g} {c['op']} {c['bound']:.6g}\n"
            )
        sys.stdout.write(f"wrote {out_dir}/summary.json\n")
    return 0 if summary["all_checks_passed"] else 2


def list_corpus(json_mode: bool = False) -> int:
    rows = listing()
    if json_mode:
        sys.stdout.write(json.dumps(rows, indent=2, sort_keys=True) + "\n")
        return 0
    width = max((len(r["name"]) for r in rows), default=4)
    kw = max((len(r["kind"]) for r in rows), default=4)
    for r in rows:
        sys.stdout.write(f"{r['name']:<{width}}  {r['kind']:<{kw}}  {r['oracle']}\n")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="dsvie", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a configured experiment")
    p_run.add_argument("--config", required=True, help="path to the JSON experiment config")
    p_run.add_argument("--out", default=None, help="output directory (default from config)")
    p_run.add_argument("--seed-override", type=int, default=None, help="replace the config seed")
    p_run.add_argument("--threads", type=int, default=1, help="path-parallel worker cap")
    p_run.add_argument("--json", action="store_true", help="print summary.json to stdout")

    p_list = sub.add_parser("list-corpus", help="show the registered problems")
    p_list.add_argument("--json", action="store_true", help="emit as a JSON array")

    args = parser.parse_args(argv)
    if args.command == "run":
        return run(
            args.config,
            out=args.out,
            seed_override=args.seed_override,
            threads=args.threads,
            json_mode=args.json,
        )
    return list_corpus(json_mode=args.json)


if __name__ == "__main__":
    sys.exit(main())
