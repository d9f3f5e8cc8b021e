"""Compute-balanced and memory-balanced cut positions.

A cut position is a canonical node index; all nodes at indices <= the
position fall on the left side. Positions therefore run from 0 to n-2 and
a k-way partition is k-1 strictly increasing positions.

Two balance notions are used throughout:

* compute balance: exact min-max of (segment time / part weight), with
  ties broken toward the smallest positions.
* memory balance: a single first-crossing traversal that cuts as soon as
  the running segment peak reaches the stage target. Async (one forward,
  one backward) targets shrink for early stages, which hold more in-flight
  micro-batches; synchronous targets are equal shares of the graph peak.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, List, Optional, Sequence, Tuple

from .graph import ComputationGraph

SCHEDULE_SYNC = "sync"
SCHEDULE_ASYNC = "async_1f1b"
SCHEDULES = (SCHEDULE_SYNC, SCHEDULE_ASYNC)


class InfeasibleCutError(ValueError):
    """Raised when a balance pass cannot produce the requested stage count."""


@dataclass(frozen=True)
class Cut:
    """Strictly increasing cut positions (canonical node indices)."""

    positions: Tuple[int, ...]

    def __post_init__(self):
        ps = self.positions
        if any(b <= a for a, b in zip(ps, ps[1:])):
            raise ValueError(f"cut positions must be strictly increasing: {ps}")

    def __len__(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class StageMemProfile:
    """Per-stage planning summary.

    micro_peak is the peak bytes of one micro-batch through the stage
    subgraph; sched_peak multiplies it by the schedule's residency weight
    (in-flight micro-batch and parameter copies). time is the stage's
    per-micro-batch compute time in microseconds.
    """

    stage: int
    micro_peak: int
    sched_peak: int
    time: int


def schedule_weight(schedule: str, stage: int, stages: int,
                    micro_batches: Optional[int] = None) -> int:
    """Residency multiplier applied to a stage's micro-batch peak.

    Async stage x keeps stages - x + 1 micro-batches in flight; a
    synchronous stage accumulates all micro-batches (defaulting to one per
    stage) before the backward phase starts.
    """
    if schedule == SCHEDULE_ASYNC:
        return stages - stage + 1
    if schedule == SCHEDULE_SYNC:
        return micro_batches if micro_batches is not None else stages
    raise ValueError(f"unknown schedule {schedule!r}")


def compute_balanced(g: ComputationGraph, lo: int, hi: int,
                     weights: Sequence) -> Cut:
    """Exact min-max split of [lo, hi] into len(weights) weighted parts.

    Minimizes max(part time / weight) over all cut tuples; among optima the
    lexicographically smallest positions win.
    """
    parts = len(weights)
    n = hi - lo + 1
    if n <= 0:
        raise ValueError("empty node range")
    if parts < 1:
        raise ValueError("need at least one part")
    if parts > n:
        raise ValueError(f"{parts} parts exceed {n} nodes in range")
    w = [Fraction(x) for x in weights]
    if any(x <= 0 for x in w):
        raise ValueError("weights must be positive")

    def load(s: int, e: int, p: int) -> Fraction:
        return Fraction(g.segment_time(lo + s, lo + e)) / w[p]

    # Suffix DP over (part index, first uncovered offset).
    INF = Fraction(1 << 200)
    best = [[INF] * (n + 1) for _ in range(parts)]
    for s in range(n - 1, -1, -1):
        best[parts - 1][s] = load(s, n - 1, parts - 1)
    for p in range(parts - 2, -1, -1):
        tail_parts = parts - p - 1
        for s in range(n - tail_parts - 1, -1, -1):
            acc = INF
            for e in range(s, n - tail_parts):
                v = max(load(s, e, p), best[p + 1][e + 1])
                if v < acc:
                    acc = v
            best[p][s] = acc

    target = best[0][0]
    cuts: List[int] = []
    s = 0
    for p in range(parts - 1):
        tail_parts = parts - p - 1
        for e in range(s, n - tail_parts):
            if load(s, e, p) <= target and best[p + 1][e + 1] <= target:
                cuts.append(lo + e)
                s = e + 1
                break
    return Cut(tuple(cuts))


def _first_crossing(g: ComputationGraph, stages: int,
                    target_for: Callable[[int], Fraction]) -> Cut:
    """Cut whenever the running segment peak reaches the current stage target."""
    n = len(g.nodes)
    if stages < 2:
        raise ValueError("need at least two stages")
    if stages > n:
        raise InfeasibleCutError(f"{stages} stages exceed {n} nodes")
    cuts: List[int] = []
    stage = 1
    target = target_for(1)
    cur = 0
    peak = 0
    for k, node in enumerate(g.nodes):
        cur += node.m_a + node.m_p
        peak = max(peak, cur)
        cur -= node.m_d
        if peak >= target:
            cuts.append(k)
            stage += 1
            if stage == stages:
                break
            target = target_for(stage)
            cur = 0
            peak = 0
    if len(cuts) < stages - 1:
        raise InfeasibleCutError(
            f"only {len(cuts) + 1} nonempty segments fit {stages} stage targets"
        )
    if cuts[-1] >= n - 1:
        raise InfeasibleCutError("last stage would be empty")
    return Cut(tuple(cuts))


def memory_balanced_1f1b(g: ComputationGraph, stages: int) -> Cut:
    """First-crossing partition against residency-weighted async targets.

    Stage x holds stages - x + 1 resident copies, so per-stage targets are
    chosen to equalize sched peaks: the total peak splits in proportion to
    1 / (stages - x + 1), which yields targets
    M_1 = peak / sum(stages / (stages - i)), M_x = stages/(stages-x+1) * M_1.
    """
    peak = g.peak_memory
    if peak <= 0:
        raise InfeasibleCutError("graph has no peak memory to balance")
    divisor = sum(Fraction(stages, stages - i) for i in range(stages))
    m1 = Fraction(peak) / divisor
    return _first_crossing(g, stages, lambda x: Fraction(stages, stages - x + 1) * m1)


def memory_balanced_sync(g: ComputationGraph, stages: int) -> Cut:
    """First-crossing partition against equal shares of the graph peak."""
    peak = g.peak_memory
    if peak <= 0:
        raise InfeasibleCutError("graph has no peak memory to balance")
    target = Fraction(peak, stages)
    return _first_crossing(g, stages, lambda x: target)


def split_pair(g: ComputationGraph, lo: int, hi: int, stages: int, schedule: str,
               left_stages: Sequence[int], right_stages: Sequence[int]) -> Tuple[int, int]:
    """Compute-balanced and memory-balanced single positions for a super-split.

    left_stages / right_stages are the 1-based stage ids each side will
    eventually contain. Both positions come from full multi-way balanced
    partitions of the range restricted to those stages: the compute
    position is the boundary cut of the exact min-max time partition into
    one part per eventual stage, and the memory position is the same
    boundary in a first-crossing walk against per-stage residency targets.
    A single-position relaxation weighted by span sizes can sit one node
    off the boundary the whole-range optimum uses, which is enough to push
    a 4-stage search past the 1% optimality band.
    """
    seq = list(left_stages) + list(right_stages)
    parts = len(seq)
    nl = len(left_stages)
    cb = compute_balanced(g, lo, hi, [1] * parts).positions[nl - 1]

    if schedule == SCHEDULE_ASYNC:
        weights = [Fraction(1, stages - x + 1) for x in seq]
    elif schedule == SCHEDULE_SYNC:
        weights = [Fraction(1)] * parts
    else:
        raise ValueError(f"unknown schedule {schedule!r}")

    total = sum(weights)
    range_peak = Fraction(g.segment_peak(lo, hi))
    cuts: List[int] = []
    j = 0
    target = range_peak * weights[0] / total
    cur = 0
    peak = 0
    for k in range(lo, hi + 1):
        node = g.nodes[k]
        cur += node.m_a + node.m_p
        peak = max(peak, cur)
        cur -= node.m_d
        if peak >= target:
            cuts.append(k)
            j += 1
            if j == parts - 1:
                break
            target = range_peak * weights[j] / total
            cur = 0
            peak = 0
    while len(cuts) < parts - 1:
        # targets never crossed (tiny or heavily released memory): pack the
        # missing boundaries against the tail, keeping positions increasing
        nxt = hi - (parts - 1 - len(cuts))
        cuts.append(max(nxt, cuts[-1] + 1 if cuts else lo))
    mb = min(max(cuts[nl - 1], lo), hi - 1)
    return cb, mb


def stage_profiles(g: ComputationGraph, cut: Cut, stages: int, schedule: str,
                   micro_batches: Optional[int] = None) -> List[StageMemProfile]:
    """Per-stage planning summaries for a full partition."""
    if len(cut.positions) != stages - 1:
        raise ValueError("cut arity does not match stage count")
    bounds = [0, *[p + 1 for p in cut.positions], len(g.nodes)]
    out = []
    for x in range(1, stages + 1):
        lo, hi = bounds[x - 1], bounds[x] - 1
        micro = g.segment_peak(lo, hi)
        w = schedule_weight(schedule, x, stages, micro_batches)
        out.append(StageMemProfile(
            stage=x,
            micro_peak=micro,
            sched_peak=w * micro,
            time=g.segment_time(lo, hi),
        ))
    return out
