"""Command-line interface.

Machine-readable JSON goes to standard out (or the --out file); human
summaries and diagnostics go to standard error. Exit codes: 0 success,
1 usage or input errors, 2 infeasible model, 3 instance too large for the
oracle, 4 verified containment violation (conditions all hold but the
optimal cut fell outside the interval).
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from pathlib import Path
from typing import List, Optional

from . import balance, oracle, partition, synth
from .balance import SCHEDULE_ASYNC, SCHEDULE_SYNC, InfeasibleCutError
from .simulate import SimConfig, report_json, trace_to_csv
from .simulate import simulate as run_simulation
from .conditions import check_theorem_conditions
from .graph import (MIB, ComputationGraph, ProfileParseError,
                    ProfileValidationError, canonical_hash, load_profile,
                    memory_cdf, profile_doc)
from .partition import InfeasibleModelError, PlanConfig
from .oracle import InstanceTooLargeError

_SCHEDULES = {"sync": SCHEDULE_SYNC, "async": SCHEDULE_ASYNC}
_SIZE_RE = re.compile(r"^(\d+)([KMGT]?)$", re.IGNORECASE)
_SUFFIX = {"": 1, "K": 1024, "M": 1024 ** 2, "G": 1024 ** 3, "T": 1024 ** 4}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(message)


def parse_size(text: str) -> int:
    """Bytes with optional K/M/G/T suffix (powers of 1024)."""
    m = _SIZE_RE.match(text.strip())
    if not m:
        raise argparse.ArgumentTypeError(f"not a size: {text!r}")
    return int(m.group(1)) * _SUFFIX[m.group(2).upper()]


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _default_jobs() -> int:
    return max(1, os.cpu_count() or 1)


def _build_parser() -> _Parser:
    p = _Parser(prog="dawnplan", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic profile")
    g.add_argument("--kind", choices=("uniform", "transformer", "cnn"), required=True)
    g.add_argument("--layers", type=int, default=8)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--scale", type=float, default=1.0)
    g.add_argument("--out")

    s = sub.add_parser("stats", help="profile summary, memory CDF, condition flags")
    s.add_argument("profile")
    s.add_argument("--stages", type=int, default=2)
    s.add_argument("--bandwidth", type=parse_size, default=16 * 1024 ** 3)

    def planner_args(q, capacity_required=True):
        q.add_argument("profile")
        q.add_argument("--stages", type=int, required=True)
        q.add_argument("--schedule", choices=sorted(_SCHEDULES), default="async")
        q.add_argument("--capacity", type=parse_size, required=capacity_required)
        q.add_argument("--bandwidth", type=parse_size, default=16 * 1024 ** 3)
        q.add_argument("--comm-cap", type=float, default=0.5)
        q.add_argument("--out")

    q = sub.add_parser("plan", help="search for the min-bottleneck partition")
    planner_args(q)
    q.add_argument("--jobs", type=int, default=_default_jobs())

    o = sub.add_parser("oracle", help="brute-force reference plan (small graphs)")
    planner_args(o)
    o.add_argument("--exhaustive-memopt", action="store_true")
    o.add_argument("--guard", type=int, default=oracle.DEFAULT_GUARD)

    m = sub.add_parser("simulate", help="simulate a plan over its profile")
    m.add_argument("plan")
    m.add_argument("profile")
    m.add_argument("--micro-batches", type=int, default=0,
                   help="0 picks the schedule default (l for sync, 4l for async)")
    m.add_argument("--trace", help="write the event trace as CSV to this file")
    m.add_argument("--out")

    v = sub.add_parser("verify-theorem",
                       help="check the two-stage containment interval empirically")
    v.add_argument("profile")
    v.add_argument("--schedule", choices=sorted(_SCHEDULES), default="async")
    v.add_argument("--capacity", type=parse_size, default=0,
                   help="0 means ample (4x the graph peak)")
    v.add_argument("--bandwidth", type=parse_size, default=16 * 1024 ** 3)
    v.add_argument("--out")

    c = sub.add_parser("compare",
                       help="compute-balanced vs memory-balanced vs full planner")
    planner_args(c)
    c.add_argument("--micro-batches", type=int, default=0)
    c.add_argument("--jobs", type=int, default=_default_jobs())
    return p


def _load(path: str) -> ComputationGraph:
    return load_profile(path)


def _cmd_gen(args) -> int:
    seed = args.seed
    env = os.environ.get("DAWNPLAN_SEED")
    if env is not None:
        seed = int(env)
    if args.kind == "uniform":
        g = synth.gen_uniform(args.layers)
    elif args.kind == "transformer":
        g = synth.gen_transformer_like(args.layers, seed, args.scale)
    else:
        g = synth.gen_cnn_like(args.layers, seed, args.scale)
    text = json.dumps(profile_doc(g), indent=2, sort_keys=True) + "\n"
    _emit(text, args.out)
    _say(f"{g.name}: {len(g)} nodes, total {g.segment_time(0, len(g) - 1) / 1000:.3f} ms, "
         f"peak {g.peak_memory / MIB:.1f} MiB")
    return 0


def _cmd_stats(args) -> int:
    g = _load(args.profile)
    report = check_theorem_conditions(g, args.stages, args.bandwidth)
    cdf = memory_cdf(g)
    ratio = report.details["memopt_evenly_distributed"]["max_min_ratio"]
    doc = {
        "name": g.name,
        "hash": canonical_hash(g),
        "nodes": len(g),
        "total_time_us": g.segment_time(0, len(g) - 1),
        "peak_bytes": g.peak_memory,
        "param_bytes": g.total_param_bytes,
        "memory_cdf": cdf,
        "conditions": {
            "flags": report.flags(),
            "all_met": report.all_met,
            "decile_bytes": report.details["memopt_evenly_distributed"]["decile_bytes"],
            "decile_ratio": None if ratio == float("inf") else ratio,
            "min_stage_time_us": report.details["comm_dominated"]["min_stage_time_us"],
            "worst_comm_us": report.details["comm_dominated"]["worst_comm_us"],
        },
    }
    _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", None)
    _say(f"{g.name}: {len(g)} nodes, peak {g.peak_memory / MIB:.1f} MiB, "
         f"activation p90 {cdf['activation']['p90'] / MIB:.1f} MiB")
    for name, ok in report.flags().items():
        _say(f"  {name}: {'yes' if ok else 'NO'}")
    return 0


def _plan_config(args, jobs: int = 1) -> PlanConfig:
    return PlanConfig(
        stages=args.stages,
        schedule=_SCHEDULES[args.schedule],
        capacity=args.capacity,
        bandwidth=args.bandwidth,
        comm_cap=args.comm_cap,
        jobs=jobs,
    )


def _say_plan(p: partition.PartitionPlan) -> None:
    cuts = ",".join(str(c) for c in p.cuts.positions)
    _say(f"{p.graph_name}: cuts [{cuts}], bottleneck {p.bottleneck_time / 1000:.3f} ms, "
         f"schedule {p.schedule}")
    for s, mo in zip(p.stages, p.memopt):
        acts = f", memopt {len(mo.actions)} actions +{mo.added_time} us" if mo.actions else ""
        _say(f"  stage {s.stage}: T {s.time / 1000:.3f} ms, "
             f"sched peak {s.sched_peak / MIB:.1f} MiB{acts}")


def _cmd_plan(args) -> int:
    g = _load(args.profile)
    cfg = _plan_config(args, jobs=args.jobs)
    p = partition.plan(g, cfg)
    _emit(partition.plan_json(p), args.out)
    _say_plan(p)
    return 0


def _cmd_oracle(args) -> int:
    g = _load(args.profile)
    cfg = _plan_config(args)
    p = oracle.exhaustive_plan(g, cfg, exhaustive_memopt=args.exhaustive_memopt,
                               guard=args.guard)
    _emit(partition.plan_json(p), args.out)
    _say_plan(p)
    return 0


def _cmd_simulate(args) -> int:
    g = _load(args.profile)
    doc = partition.load_plan_doc(args.plan)
    p = partition.plan_from_doc(g, doc)
    stages = p.config.stages
    m = args.micro_batches
    if m <= 0:
        m = stages if p.schedule == SCHEDULE_SYNC else 4 * stages
    cfg = SimConfig(
        micro_batches=m,
        schedule=p.schedule,
        bandwidth=p.config.bandwidth,
        capacity=p.config.capacity,
    )
    report = run_simulation(p, g, cfg)
    _emit(report_json(report), args.out)
    if args.trace:
        Path(args.trace).write_text(trace_to_csv(report))
    _say(f"{g.name}: m={m}, iteration {report.iteration_time / 1000:.3f} ms, "
         f"bubble {report.bubble_ratio:.4f}, waste {report.waste_ratio:.4f}")
    if report.capacity_exceeded:
        _say(f"  capacity exceeded on stages: "
             f"{', '.join(str(s) for s in report.capacity_exceeded)}")
    return 0


def _cmd_verify(args) -> int:
    g = _load(args.profile)
    capacity = args.capacity or 4 * g.peak_memory
    v = oracle.verify_theorem(
        g,
        bandwidth=args.bandwidth,
        capacity=capacity,
        schedule=_SCHEDULES[args.schedule],
    )
    _emit(json.dumps(v.to_doc(), indent=2, sort_keys=True) + "\n", args.out)
    _say(f"{g.name}: interval [{v.interval[0]}, {v.interval[1]}], "
         f"optimal cut {v.optimal_cut}, inside={v.inside}, "
         f"conditions met={v.asserted}")
    if v.asserted and not v.inside:
        _say("containment violated with all conditions met")
        return 4
    return 0


def _cmd_compare(args) -> int:
    g = _load(args.profile)
    n = len(g)
    cfg = _plan_config(args, jobs=args.jobs)
    m = args.micro_batches
    if m <= 0:
        m = cfg.stages if cfg.schedule == SCHEDULE_SYNC else 4 * cfg.stages
    sim_cfg = SimConfig(micro_batches=m, schedule=cfg.schedule,
                        bandwidth=cfg.bandwidth, capacity=cfg.capacity)

    cb = balance.compute_balanced(g, 0, n - 1, [1] * cfg.stages)
    if cfg.schedule == SCHEDULE_SYNC:
        mb = balance.memory_balanced_sync(g, cfg.stages)
    else:
        mb = balance.memory_balanced_1f1b(g, cfg.stages)

    rows = []
    for label, p in (
        ("compute_balanced", partition.plan_from_cuts(g, cfg, cb.positions,
                                                      require_feasible=False)),
        ("memory_balanced", partition.plan_from_cuts(g, cfg, mb.positions,
                                                     require_feasible=False)),
        ("planner", partition.plan(g, cfg)),
    ):
        r = run_simulation(p, g, sim_cfg)
        rows.append({
            "strategy": label,
            "cuts": list(p.cuts.positions),
            "bottleneck_us": p.bottleneck_time,
            "iteration_time_us": r.iteration_time,
            "bubble_ratio": r.bubble_ratio,
            "waste_ratio": r.waste_ratio,
            "per_stage_peak_bytes": list(r.per_stage_peak),
            "capacity_exceeded_stages": list(r.capacity_exceeded),
        })
    _emit(json.dumps({"micro_batches": m, "rows": rows}, indent=2, sort_keys=True) + "\n",
          args.out)
    _say(f"{g.name}: schedule {cfg.schedule}, m={m}")
    _say(f"  {'strategy':<18} {'bottleneck ms':>13} {'iteration ms':>12} "
         f"{'waste':>6} {'over-cap':>8}")
    for r in rows:
        over = ",".join(str(s) for s in r["capacity_exceeded_stages"]) or "-"
        _say(f"  {r['strategy']:<18} {r['bottleneck_us'] / 1000:>13.3f} "
             f"{r['iteration_time_us'] / 1000:>12.3f} {r['waste_ratio']:>6.3f} {over:>8}")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "stats": _cmd_stats,
    "plan": _cmd_plan,
    "oracle": _cmd_oracle,
    "simulate": _cmd_simulate,
    "verify-theorem": _cmd_verify,
    "compare": _cmd_compare,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (InfeasibleModelError, InfeasibleCutError) as e:
        _say(f"infeasible: {e}")
        return 2
    except InstanceTooLargeError as e:
        _say(f"instance too large: {e}")
        return 3
    except (ProfileParseError, ProfileValidationError) as e:
        _say(f"invalid profile: {e}")
        return 1
    except (ValueError, OSError) as e:
        _say(f"error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
