"""Command-line front end.

Subcommands: ``validate``, ``solve``, ``check``, ``oracle``, ``generate``,
and ``bench``.  Exit codes are stable: 0 success, 1 validation failure,
2 I/O or parse-level problems, 3 no feasible schedule.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .facts import FactsError, parse_facts, serialize_facts
from .instance import Instance, generate_instance, validate_instance
from .oracle import LimitExceeded, OracleLimits, enumerate_schedules
from .prealloc import AllocConfig
from .render import gantt_svg, gantt_text
from .schedule import (
    Infeasible,
    NoFeasibleSchedule,
    Objectives,
    dump_json,
    evaluate,
    load_json,
    to_json_doc,
)
from .solver import SearchMode, SolverConfig, solve

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2
EXIT_INFEASIBLE = 3

# Strategy matrix mirroring the benchmark grid: fixed assignment, flexible
# subgroups of size 2 and 3, and setup-driven allocation at the same sizes.
BENCH_MATRIX: list[tuple[str, int, int]] = [
    ("Fixed", 1, 0),
    ("Fixed", 1, 1),
    ("Flexible", 2, 0),
    ("Flexible", 2, 1),
    ("Flexible", 3, 0),
    ("Setup", 2, 0),
    ("Setup", 2, 1),
    ("Setup", 3, 0),
]

BENCH_COLUMNS = ["instance", "strategy", "size", "lot_step", "makespan", "setup_viol",
                 "batch_viol", "stage1_time", "stage2_time", "stage1_optimal",
                 "stage2_optimal", "error"]


def _read_instance(path: str) -> Instance:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        raise SystemExit(EXIT_IO) from None
    try:
        return parse_facts(text)
    except FactsError as err:
        print(f"{path}: {err}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID) from None


def _alloc_config(args) -> AllocConfig:
    return AllocConfig(sub_size=args.sub_size, lot_step=args.lot_step,
                       by_setup=args.by_setup)


def _strategy_config(strategy: str, size: int, lot_step: int) -> AllocConfig:
    return AllocConfig(sub_size=size, lot_step=lot_step, by_setup=strategy == "Setup")


def cmd_validate(args) -> int:
    inst = _read_instance(args.instance)
    diags = validate_instance(inst)
    for diag in diags:
        print(diag, file=sys.stderr)
    return EXIT_INVALID if diags else EXIT_OK


def _yesno(flag: bool) -> str:
    return "yes" if flag else "no"


def cmd_solve(args) -> int:
    inst = _read_instance(args.instance)
    cfg = SolverConfig(
        stage1_limit=args.stage1_limit,
        stage2_limit=args.stage2_limit,
        prealloc=_alloc_config(args),
        search=SearchMode.EXACT_BNB if args.exact else SearchMode.GREEDY_SEED_THEN_BNB,
        rng_seed=args.seed,
    )
    progress = (lambda line: print(line, file=sys.stderr)) if args.progress else None
    try:
        result = solve(inst, cfg, progress=progress)
    except NoFeasibleSchedule as err:
        print(f"infeasible: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    if result.best is None or result.objectives is None:
        print("no schedule found within the time budget", file=sys.stderr)
        return EXIT_INFEASIBLE
    obj = result.objectives
    print(f"makespan={obj.makespan} setup={obj.setup_violations} batch={obj.batch_violations} "
          f"optimal={_yesno(result.stage1_optimal)}/{_yesno(result.stage2_optimal)}")
    if args.out == "json":
        rendered = dump_json(result.best)
    elif args.out == "gantt-svg":
        rendered = gantt_svg(result.best, scale=args.scale)
    else:
        rendered = gantt_text(result.best)
    if args.out_file:
        with open(args.out_file, "w", encoding="utf-8") as handle:
            handle.write(rendered)
    else:
        sys.stdout.write(rendered)
    return EXIT_OK


def cmd_check(args) -> int:
    inst = _read_instance(args.instance)
    try:
        with open(args.schedule, "r", encoding="utf-8") as handle:
            gs = load_json(handle.read())
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except (json.JSONDecodeError, KeyError) as err:
        print(f"{args.schedule}: malformed schedule document: {err}", file=sys.stderr)
        return EXIT_INVALID
    verdict = evaluate(gs, inst)
    if isinstance(verdict, Infeasible):
        for violation in verdict.violations:
            print(str(violation), file=sys.stderr)
        return EXIT_INFEASIBLE
    print(f"makespan={verdict.makespan} setup={verdict.setup_violations} "
          f"batch={verdict.batch_violations}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    inst = _read_instance(args.instance)
    limits = OracleLimits(max_lots=args.max_lots, max_ops_per_lot=args.max_ops,
                          max_machines_per_group=args.max_machines,
                          max_enumerated_states=args.max_states)
    best: tuple[Objectives, object] | None = None
    count = 0
    try:
        for gs, objectives in enumerate_schedules(inst, limits):
            count += 1
            if best is None or objectives.as_tuple() < best[0].as_tuple():
                best = (objectives, gs)
    except (ValueError, LimitExceeded) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    if best is None:
        print("infeasible: no feasible schedule exists", file=sys.stderr)
        return EXIT_INFEASIBLE
    objectives, gs = best
    from .schedule import compute_start_times  # local import to keep startup light

    doc = {
        "makespan": objectives.makespan,
        "setup_violations": objectives.setup_violations,
        "batch_violations": objectives.batch_violations,
        "enumerated": count,
        "schedule": to_json_doc(compute_start_times(gs, inst)),
    }
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def cmd_generate(args) -> int:
    try:
        inst = generate_instance(
            n_lots=args.lots, n_products=args.products, route_len=args.route_len,
            n_groups=args.groups, machines_per_group=args.machines_per_group,
            batch_fraction=args.batch_fraction, seed=args.seed)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    text = serialize_facts(inst)
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(text)
    return EXIT_OK


def _bench_one(task: tuple) -> dict:
    """Solve one (instance, strategy) cell; returns a CSV row dict."""
    path, name, strategy, size, lot_step, stage1_limit, stage2_limit, seed = task
    row = {"instance": name, "strategy": strategy, "size": size, "lot_step": lot_step,
           "makespan": "", "setup_viol": "", "batch_viol": "", "stage1_time": "",
           "stage2_time": "", "stage1_optimal": "", "stage2_optimal": "", "error": ""}
    try:
        with open(path, "r", encoding="utf-8") as handle:
            inst = parse_facts(handle.read())
        cfg = SolverConfig(stage1_limit=stage1_limit, stage2_limit=stage2_limit,
                           prealloc=_strategy_config(strategy, size, lot_step),
                           rng_seed=seed)
        result = solve(inst, cfg)
        if result.objectives is None:
            row["error"] = "no schedule within budget"
            return row
        obj = result.objectives
        row.update(makespan=obj.makespan, setup_viol=obj.setup_violations,
                   batch_viol=obj.batch_violations,
                   stage1_optimal=result.stage1_optimal,
                   stage2_optimal=result.stage2_optimal)
        # A timed-out stage reports the configured limit as its time.
        row["stage1_time"] = round(result.stage1_time, 3) if result.stage1_optimal else stage1_limit
        row["stage2_time"] = round(result.stage2_time, 3) if result.stage2_optimal else stage2_limit
    except (FactsError, NoFeasibleSchedule, OSError, ValueError) as err:
        row["error"] = str(err)
    return row


def bench_rows(paths: list[str], stage1_limit: float, stage2_limit: float,
               seed: int = 0, matrix: list[tuple[str, int, int]] | None = None,
               workers: int | None = None) -> list[dict]:
    """Run the strategy matrix over instance files; rows ordered by instance
    then matrix position regardless of completion order."""
    matrix = matrix if matrix is not None else BENCH_MATRIX
    tasks = []
    for path in paths:
        name = os.path.splitext(os.path.basename(path))[0]
        for strategy, size, lot_step in matrix:
            tasks.append((path, name, strategy, size, lot_step,
                          stage1_limit, stage2_limit, seed))
    if workers is None:
        workers = int(os.environ.get("SMSP_THREADS", "1"))
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_bench_one, tasks))
    else:
        rows = [_bench_one(task) for task in tasks]
    return rows


def write_bench_csv(rows: list[dict], stream) -> None:
    writer = csv.DictWriter(stream, fieldnames=BENCH_COLUMNS)
    writer.writeheader()
    for row in rows:
        writer.writerow(row)


def cmd_bench(args) -> int:
    if not os.path.isdir(args.directory):
        print(f"error: {args.directory} is not a directory", file=sys.stderr)
        return EXIT_IO
    paths = sorted(
        os.path.join(args.directory, name)
        for name in os.listdir(args.directory)
        if name.endswith(".lp")
    )
    rows = bench_rows(paths, args.stage1_limit, args.stage2_limit, seed=args.seed)
    buffer = io.StringIO()
    write_bench_csv(rows, buffer)
    if args.out == "-":
        sys.stdout.write(buffer.getvalue())
    else:
        with open(args.out, "w", encoding="utf-8", newline="") as handle:
            handle.write(buffer.getvalue())
    return EXIT_OK


def _add_alloc_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--sub-size", dest="sub_size", type=int, default=0,
                        help="subgroup size: 0 full group, 1 fixed machine, >1 subgroups")
    parser.add_argument("--lot-step", dest="lot_step", type=int, choices=(0, 1), default=0,
                        help="0: common subgroup index per lot, 1: successive indexes")
    parser.add_argument("--by-setup", dest="by_setup", action="store_true",
                        help="pin operations to machines by setup inside subgroups")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smsp",
                                     description="Semiconductor manufacturing scheduling toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and validate an instance file")
    p.add_argument("instance")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="two-stage optimization of an instance")
    p.add_argument("instance")
    _add_alloc_flags(p)
    p.add_argument("--stage1-limit", type=float, default=450.0)
    p.add_argument("--stage2-limit", type=float, default=150.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exact", action="store_true", help="skip greedy seeding")
    p.add_argument("--out", choices=("json", "gantt-svg", "gantt-text"), default="json")
    p.add_argument("--out-file", default=None)
    p.add_argument("--scale", type=float, default=6.0, help="SVG pixels per time unit")
    p.add_argument("--progress", action="store_true",
                   help="emit incumbent lines '<elapsed_ms> <makespan> <setup> <batch>' on stderr")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("check", help="re-evaluate a schedule document against an instance")
    p.add_argument("instance")
    p.add_argument("schedule")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("oracle", help="exhaustive optimum of a micro instance")
    p.add_argument("instance")
    p.add_argument("--max-lots", type=int, default=3)
    p.add_argument("--max-ops", type=int, default=4)
    p.add_argument("--max-machines", type=int, default=2)
    p.add_argument("--max-states", type=int, default=10_000_000)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("generate", help="write a scalable benchmark instance")
    p.add_argument("out", help="output path, '-' for stdout")
    p.add_argument("--lots", type=int, default=7)
    p.add_argument("--products", type=int, default=2)
    p.add_argument("--route-len", type=int, default=10)
    p.add_argument("--groups", type=int, default=3)
    p.add_argument("--machines-per-group", type=int, default=3)
    p.add_argument("--batch-fraction", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("bench", help="strategy-matrix benchmark over a directory of instances")
    p.add_argument("directory")
    p.add_argument("--out", default="-", help="CSV output path, '-' for stdout")
    p.add_argument("--stage1-limit", type=float, default=450.0)
    p.add_argument("--stage2-limit", type=float, default=150.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as err:
        return err.code if isinstance(err.code, int) else EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
