"""Discrete-event simulation of pipeline schedules over a partition plan.

Two schedules are modeled. The synchronous schedule pushes all micro-batch
forwards through the pipeline, waits on a global barrier, then drains the
backwards in reverse stage order. The asynchronous schedule is 1F1B: stage
x (1-based of l stages) runs l-x warm-up forwards, then alternates one
forward with one backward, then drains its remaining backwards.

Boundary activations and gradients travel over one full-duplex channel per
adjacent stage pair; each direction serializes its transfers but overlaps
freely with compute. Memory-optimization overhead from the plan is charged
to each micro-batch's backward pass; savings lower the per-micro-batch
resident footprint.

Times are integer microseconds throughout; peaks are integer bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

from .balance import SCHEDULE_ASYNC, SCHEDULE_SYNC
from .graph import ComputationGraph, transfer_time_us
from .partition import PartitionPlan, stage_bounds

PHASE_WARMUP = "warmup"
PHASE_STEADY = "steady"
PHASE_DRAIN = "drain"


@dataclass(frozen=True)
class SimConfig:
    micro_batches: int
    schedule: str
    bandwidth: int
    capacity: int

    def __post_init__(self):
        if self.micro_batches < 1:
            raise ValueError("need at least one micro-batch")
        if self.schedule not in (SCHEDULE_SYNC, SCHEDULE_ASYNC):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.bandwidth <= 0 or self.capacity <= 0:
            raise ValueError("bandwidth and capacity must be positive")


@dataclass(frozen=True)
class SimEvent:
    stage: int  # 1-based; comm events carry the sending stage
    mb: int  # 1-based micro-batch
    kind: str  # "fwd" | "bwd" | "comm"
    start: int
    end: int
    phase: str = ""  # warmup/steady/drain on async compute events


@dataclass(frozen=True)
class SimReport:
    per_stage_peak: Tuple[int, ...]
    iteration_time: float
    bubble_ratio: float
    waste_ratio: float
    trace: Tuple[SimEvent, ...]
    makespan: int
    capacity_exceeded: Tuple[int, ...]

    def to_doc(self) -> dict:
        return {
            "per_stage_peak_bytes": list(self.per_stage_peak),
            "iteration_time_us": self.iteration_time,
            "bubble_ratio": self.bubble_ratio,
            "waste_ratio": self.waste_ratio,
            "makespan_us": self.makespan,
            "capacity_exceeded_stages": list(self.capacity_exceeded),
            "events": len(self.trace),
        }


def report_json(r: SimReport) -> str:
    return json.dumps(r.to_doc(), indent=2, sort_keys=True) + "\n"


def trace_to_csv(r: SimReport) -> str:
    lines = ["stage,mb,kind,start_us,end_us"]
    for e in sorted(r.trace, key=lambda e: (e.start, e.end, e.stage, e.mb, e.kind)):
        lines.append(f"{e.stage},{e.mb},{e.kind},{e.start},{e.end}")
    return "\n".join(lines) + "\n"


def _boundary_bytes(g: ComputationGraph, pos: int) -> int:
    """Activation bytes that must cross the cut after node index pos."""
    total = 0
    for u in range(pos + 1):
        cons = [g.index_of(c) for c in g.nodes[u].consumers]
        if cons and max(cons) > pos:
            total += g.nodes[u].m_a
    return total


class _Channel:
    """One direction of a boundary link; transfers serialize."""

    def __init__(self, time_us: int):
        self.time = time_us
        self.free = 0

    def send(self, ready: int) -> Tuple[int, int]:
        start = max(self.free, ready)
        end = start + self.time
        self.free = end
        return start, end


def _validate(plan: PartitionPlan, g: ComputationGraph) -> List[Tuple[int, int]]:
    bounds = stage_bounds(plan.cuts, len(g))
    if len(bounds) != len(plan.stages):
        raise ValueError("plan stage count disagrees with its cuts")
    for s, (lo, hi) in zip(plan.stages, bounds):
        if s.time != g.segment_time(lo, hi):
            raise ValueError(
                f"stage {s.stage}: plan time {s.time} != graph segment time "
                f"{g.segment_time(lo, hi)}; plan does not match this graph"
            )
    return bounds


def simulate(plan: PartitionPlan, g: ComputationGraph, cfg: SimConfig) -> SimReport:
    bounds = _validate(plan, g)
    stages = len(bounds)
    m = cfg.micro_batches

    fwd = [g.segment_fwd_time(lo, hi) for lo, hi in bounds]
    # Memopt overhead (swap stalls, recomputation) lands in the backward pass.
    bwd = [g.segment_bwd_time(lo, hi) + mo.added_time
           for (lo, hi), mo in zip(bounds, plan.memopt)]
    comm = [transfer_time_us(_boundary_bytes(g, p), cfg.bandwidth)
            for p in plan.cuts.positions]

    if cfg.schedule == SCHEDULE_SYNC:
        events, completions, makespan = _run_sync(stages, m, fwd, bwd, comm)
        peaks = _sync_peaks(plan, g, bounds, m)
        iteration: float = float(makespan)
    else:
        events, completions, makespan = _run_async(stages, m, fwd, bwd, comm)
        peaks = _async_peaks(plan, events, stages)
        iteration = _async_iteration(completions, stages, m, makespan)

    busy = [m * (fwd[x] + bwd[x]) for x in range(stages)]
    bubble = 1.0 - sum(busy) / (stages * makespan) if makespan > 0 else 0.0
    max_peak = max(peaks) if peaks else 0
    waste = (sum(max_peak - p for p in peaks) / (stages * max_peak)
             if max_peak > 0 else 0.0)
    exceeded = tuple(x + 1 for x, p in enumerate(peaks) if p > cfg.capacity)

    return SimReport(
        per_stage_peak=tuple(peaks),
        iteration_time=iteration,
        bubble_ratio=bubble,
        waste_ratio=waste,
        trace=tuple(sorted(events, key=lambda e: (e.start, e.end, e.stage, e.mb, e.kind))),
        makespan=makespan,
        capacity_exceeded=exceeded,
    )


def _run_sync(stages: int, m: int, fwd: List[int], bwd: List[int],
              comm: List[int]) -> Tuple[List[SimEvent], List[int], int]:
    events: List[SimEvent] = []
    free = [0] * stages
    fwd_chan = [_Channel(c) for c in comm]
    bwd_chan = [_Channel(c) for c in comm]

    arrive = [[0] * (m + 1) for _ in range(stages)]
    for j in range(1, m + 1):
        for x in range(stages):
            start = max(free[x], arrive[x][j])
            end = start + fwd[x]
            events.append(SimEvent(x + 1, j, "fwd", start, end))
            free[x] = end
            if x + 1 < stages:
                cs, ce = fwd_chan[x].send(end)
                if fwd_chan[x].time > 0:
                    events.append(SimEvent(x + 1, j, "comm", cs, ce))
                arrive[x + 1][j] = ce

    barrier = max(e.end for e in events)

    grad = [[barrier] * (m + 1) for _ in range(stages)]
    free = [barrier] * stages
    completions = [0] * (m + 1)
    for j in range(m, 0, -1):
        for x in range(stages - 1, -1, -1):
            start = max(free[x], grad[x][j])
            end = start + bwd[x]
            events.append(SimEvent(x + 1, j, "bwd", start, end))
            free[x] = end
            if x > 0:
                cs, ce = bwd_chan[x - 1].send(end)
                if bwd_chan[x - 1].time > 0:
                    events.append(SimEvent(x + 1, j, "comm", cs, ce))
                grad[x - 1][j] = ce
            else:
                completions[j] = end
    makespan = max(e.end for e in events)
    return events, completions, makespan


def _async_ops(stages: int, m: int, x: int) -> List[Tuple[str, int, str]]:
    """Ordered (kind, micro-batch, phase) list for 1-based stage x."""
    warm = min(stages - x, m)
    ops = [("fwd", j, PHASE_WARMUP) for j in range(1, warm + 1)]
    k = 0
    while warm + k < m:
        k += 1
        ops.append(("fwd", warm + k, PHASE_STEADY))
        ops.append(("bwd", k, PHASE_STEADY))
    for j in range(k + 1, m + 1):
        ops.append(("bwd", j, PHASE_DRAIN))
    return ops


def _run_async(stages: int, m: int, fwd: List[int], bwd: List[int],
               comm: List[int]) -> Tuple[List[SimEvent], List[int], int]:
    events: List[SimEvent] = []
    free = [0] * stages
    fwd_chan = [_Channel(c) for c in comm]
    bwd_chan = [_Channel(c) for c in comm]
    ops = [_async_ops(stages, m, x + 1) for x in range(stages)]
    ptr = [0] * stages

    # ready[(kind, stage, j)] = earliest start; forward inputs of stage 1
    # are always available, other entries appear as upstream work finishes.
    ready: Dict[Tuple[str, int, int], int] = {}
    for j in range(1, m + 1):
        ready[("fwd", 0, j)] = 0

    fwd_end = [[0] * (m + 1) for _ in range(stages)]
    completions = [0] * (m + 1)

    remaining = sum(len(o) for o in ops)
    while remaining:
        progressed = False
        for x in range(stages):
            while ptr[x] < len(ops[x]):
                kind, j, phase = ops[x][ptr[x]]
                if kind == "fwd":
                    key = ("fwd", x, j)
                elif x == stages - 1:
                    key = ("own", x, j)  # last stage turns around immediately
                    ready[key] = fwd_end[x][j]
                else:
                    key = ("bwd", x, j)
                if key not in ready:
                    break
                start = max(free[x], ready[key])
                dur = fwd[x] if kind == "fwd" else bwd[x]
                end = start + dur
                events.append(SimEvent(x + 1, j, kind, start, end, phase))
                free[x] = end
                ptr[x] += 1
                remaining -= 1
                progressed = True
                if kind == "fwd":
                    fwd_end[x][j] = end
                    if x + 1 < stages:
                        cs, ce = fwd_chan[x].send(end)
                        if fwd_chan[x].time > 0:
                            events.append(SimEvent(x + 1, j, "comm", cs, ce))
                        ready[("fwd", x + 1, j)] = ce
                else:
                    if x > 0:
                        cs, ce = bwd_chan[x - 1].send(end)
                        if bwd_chan[x - 1].time > 0:
                            events.append(SimEvent(x + 1, j, "comm", cs, ce))
                        ready[("bwd", x - 1, j)] = ce
                    else:
                        completions[j] = end
        if not progressed:
            raise RuntimeError("schedule deadlock; op lists are inconsistent")
    makespan = max(e.end for e in events)
    return events, completions, makespan


def _sync_peaks(plan: PartitionPlan, g: ComputationGraph,
                bounds: List[Tuple[int, int]], m: int) -> List[int]:
    # GPipe holds every micro-batch's (optimized) activations until the
    # barrier; parameters are resident once per stage.
    peaks = []
    for (lo, hi), mo in zip(bounds, plan.memopt):
        act = max(0, g.segment_act_peak(lo, hi) - mo.bytes_saved)
        peaks.append(m * act + g.segment_params(lo, hi))
    return peaks


def _async_peaks(plan: PartitionPlan, events: List[SimEvent], stages: int) -> List[int]:
    # A micro-batch occupies a stage from its forward start to its backward
    # end; the peak is the deepest such overlap times the per-micro-batch
    # footprint after memopt. Retirements at a timestamp land before
    # admissions so back-to-back handoffs do not double-count.
    peaks = []
    for x in range(1, stages + 1):
        deltas: List[Tuple[int, int]] = []
        for e in events:
            if e.stage != x or e.kind == "comm":
                continue
            if e.kind == "fwd":
                deltas.append((e.start, 1))
            else:
                deltas.append((e.end, -1))
        deltas.sort(key=lambda d: (d[0], d[1]))
        depth = 0
        max_depth = 0
        for _, d in deltas:
            depth += d
            max_depth = max(max_depth, depth)
        s = plan.stages[x - 1]
        mo = plan.memopt[x - 1]
        footprint = max(0, s.micro_peak - mo.bytes_saved)
        peaks.append(max_depth * footprint)
    return peaks


def _async_iteration(completions: List[int], stages: int, m: int,
                     makespan: int) -> float:
    # Steady-state per-micro-batch rate: mean gap between consecutive
    # completions once the warm-up micro-batches (the first l) are done.
    done = [completions[j] for j in range(1, m + 1)]
    if m >= stages + 2:
        steady = done[stages:]  # completions of micro-batches l+1 .. m
        return float(Fraction(steady[-1] - steady[0], len(steady) - 1))
    if m >= 2:
        return float(Fraction(done[-1] - done[0], m - 1))
    return float(makespan)


def compare_plans(plan_a: PartitionPlan, plan_b: PartitionPlan,
                  g: ComputationGraph, cfg: SimConfig
                  ) -> Tuple[SimReport, SimReport, float]:
    """Simulate two plans over the same graph and report their speed ratio.

    The ratio is iteration_time_a / iteration_time_b: how many times more
    micro-batches per second the second plan sustains than the first.
    """
    ra = simulate(plan_a, g, cfg)
    rb = simulate(plan_b, g, cfg)
    if rb.iteration_time == 0:
        raise ValueError("second plan has zero iteration time")
    return ra, rb, ra.iteration_time / rb.iteration_time
