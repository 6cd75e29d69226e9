"""Command-line front end: generate benchmark suites, run filters, aggregate traces, inspect processes.

Exit codes: 0 success, 1 validation failure, 2 infeasible configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from .clustering import check_assumptions, make_clustering, parse_clustering_name
from .errors import InfeasibleError, ModelError
from .factored import FactoredModel
from .fixtures import robot_arm, robot_arm_clusterings, swap_process
from .harness import (PRECOMPUTE_HEADER, TRACE_HEADER, ProcessRun, parse_filters, parse_seeds, read_csv,
                      run_experiment, summarize, write_csv)
from .serialization import ProcessValidationError, load_process, load_trajectory, save_process, save_trajectory
from .synthgen import SIZES, GenSpec, generate_process, simulate_trajectory, streams

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE = 0, 1, 2
FIXTURES = {"robot-arm": (robot_arm, robot_arm_clusterings), "swap": (swap_process, dict)}


def _specs(args) -> list[GenSpec]:
    return [GenSpec.of_size(args.size, args.passivity, seed) for seed in parse_seeds(args.seeds)]


def _generate_runs(args) -> list[ProcessRun]:
    runs = []
    for spec in _specs(args):
        process = generate_process(spec)
        traj = simulate_trajectory(process, args.steps, streams(spec.seed)["trajectory"])
        runs.append(ProcessRun(spec.label, process, traj, spec.seed))
    return runs


def _load_runs(directory: Path) -> list[ProcessRun]:
    runs = []
    for path in sorted(directory.glob("*.json")):
        traj_path = path.with_suffix(".traj.csv")
        if not traj_path.exists():
            raise ModelError(f"{path}: missing trajectory file {traj_path.name}")
        process, named = load_process(path)
        seed = int((process.meta.get("generator") or {}).get("seed", 0))
        runs.append(ProcessRun(path.stem, process, load_trajectory(traj_path), seed, named))
    return runs


def cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for run in _generate_runs(args):
        save_process(out / f"{run.label}.json", run.process)
        save_trajectory(out / f"{run.label}.traj.csv", run.trajectory, run.process.n, run.process.m)
    return EXIT_OK


def cmd_fixture(args) -> int:
    build, named = FIXTURES[args.name]
    save_process(args.out, build(), named())
    return EXIT_OK


def _run_into(args, out: Path) -> tuple[Path, bool]:
    """Write ``trace.csv`` and ``precompute.csv``; the flag says whether any filter was feasible."""
    filters = parse_filters(args.filters)
    runs = _load_runs(Path(args.input)) if args.input else _generate_runs(args)
    trace, pre = run_experiment(runs, filters, args.sparsity)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "trace.csv", TRACE_HEADER, trace)
    write_csv(out / "precompute.csv", PRECOMPUTE_HEADER, pre)
    return out / "trace.csv", any(row[-1] == "ok" for row in pre)


def cmd_run(args) -> int:
    _, feasible = _run_into(args, Path(args.out))
    return EXIT_OK if feasible else EXIT_INFEASIBLE


def cmd_bench(args) -> int:
    """Aggregate existing traces, or run the configured experiment first when ``--size`` is given."""
    traces = [Path(p) for p in args.traces]
    if args.size:
        trace, _ = _run_into(args, Path(args.out).parent if args.out else Path("."))
        traces.append(trace)
    trace_rows, pre_rows = [], []
    for path in traces:
        files = sorted(path.rglob("trace.csv")) if path.is_dir() else [path]
        for f in files:
            if not f.exists():
                raise ModelError(f"missing trace file {f}")
            trace_rows.extend(read_csv(f))
            pre_file = f.with_name("precompute.csv")
            if pre_file.exists():
                pre_rows.extend(read_csv(pre_file))
    text = json.dumps(summarize(trace_rows, pre_rows), indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def inspect_report(path: str | Path, clusterings: Sequence[str]) -> tuple[dict, bool]:
    """The inspection report and whether the process passed validation."""
    try:
        process, named = load_process(path)
    except ProcessValidationError as exc:
        findings = {a: [{"kind": f.kind, "message": f.message} for f in fs] for a, fs in exc.findings.items()}
        return {"file": str(path), "valid": False, "findings": findings}, False
    report = {"file": str(path), "valid": True, "findings": {}, "actions": {}, "clusterings": {}}
    names = list(named) + [c for c in clusterings if c not in named]
    models = {}
    for name in names:
        clustering = named[name] if name in named else make_clustering(process, *parse_clustering_name(name))
        models[name] = FactoredModel(process, clustering)
    first = next(iter(models.values()), None) or FactoredModel(process, make_clustering(process, "pc"))
    for a in process.action_ids:
        verdicts = first.analysis(a).verdicts
        report["actions"][a] = {
            "passive": [v.to_json() for i, v in sorted(verdicts.items()) if v.passive],
            "verdicts": [v.to_json() for _, v in sorted(verdicts.items())],
        }
    for name, model in models.items():
        status = check_assumptions(model.clustering, process)
        report["clusterings"][name] = {
            "clusters": model.clustering.to_json(),
            "assumptions": status.to_json(),
            "actions": {a: model.analysis(a).to_json(model.clustering) for a in process.action_ids},
        }
    return report, True


def cmd_inspect(args) -> int:
    report, valid = inspect_report(args.process, parse_clustering_list(args.clusterings))
    text = json.dumps(report, indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if valid else EXIT_INVALID


def parse_clustering_list(text: str) -> list[str]:
    names = [c.strip() for c in text.split(",") if c.strip()]
    for name in names:
        parse_clustering_name(name)
    return names


def _add_experiment_flags(p: argparse.ArgumentParser, size_required: bool) -> None:
    p.add_argument("--size", choices=sorted(SIZES), required=size_required)
    p.add_argument("--passivity", type=float, default=0.5)
    p.add_argument("--seeds", default="0")
    p.add_argument("--steps", type=int, default=1000)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psbf", description="Selective belief filtering for factored processes.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write seeded process and trajectory files")
    _add_experiment_flags(g, True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fixture", help="write a built-in example process")
    f.add_argument("name", choices=sorted(FIXTURES))
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fixture)

    for name, func, help_text in (("run", cmd_run, "replay trajectories through filters"),
                                  ("bench", cmd_bench, "aggregate traces into a summary")):
        r = sub.add_parser(name, help=help_text)
        _add_experiment_flags(r, False)
        r.add_argument("--input", help="directory of process JSON and trajectory CSV files")
        r.add_argument("--filters", default="psbf:moral,exact")
        r.add_argument("--sparsity", type=float, default=0.0)
        r.add_argument("--out", required=(name == "run"))
        if name == "bench":
            r.add_argument("traces", nargs="*", default=[], help="trace CSV files or directories")
        r.set_defaults(func=func)

    i = sub.add_parser("inspect", help="validate a process file and report passivity and skip sets")
    i.add_argument("process")
    i.add_argument("--clusterings", default="pc,moral,modis")
    i.add_argument("--out")
    i.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "run" and not (args.input or args.size):
        parser.error("run needs --input or --size")
    try:
        return args.func(args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ModelError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
