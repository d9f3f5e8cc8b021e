"""Per-stage memory relief through tensor swapping and recomputation.

Costing runs on a stage-local timeline for a single micro-batch: node
forwards execute left to right, then backwards right to left. A swapped
tensor must travel out and back inside its idle window (production to
backward access); whatever does not fit that window stalls the backward
pass and is charged as overhead. A recomputed tensor re-executes its
producer chain at backward time and is charged the chain's forward time.

Only tensors live at the instant the stage peak is reached can actually
lower the peak, so everything else is ignored.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, FrozenSet, List, Optional, Set, Tuple

from .graph import ComputationGraph, TensorRef, transfer_time_us


@dataclass(frozen=True)
class StageTimeline:
    """Single micro-batch execution times for a contiguous stage [lo, hi]."""

    lo: int
    hi: int
    fwd_end: Tuple[int, ...]
    bwd_start: Tuple[int, ...]
    total_compute: int

    def fwd_end_of(self, idx: int) -> int:
        return self.fwd_end[idx - self.lo]

    def bwd_start_of(self, idx: int) -> int:
        return self.bwd_start[idx - self.lo]


def build_stage_timeline(g: ComputationGraph, lo: int, hi: int) -> StageTimeline:
    fwd_end = []
    t = 0
    for k in range(lo, hi + 1):
        t += g.nodes[k].t_f
        fwd_end.append(t)
    total_fwd = t
    bwd_start = [0] * (hi - lo + 1)
    t = total_fwd
    for k in range(hi, lo - 1, -1):
        bwd_start[k - lo] = t
        t += g.nodes[k].t_b
    return StageTimeline(lo=lo, hi=hi, fwd_end=tuple(fwd_end),
                         bwd_start=tuple(bwd_start), total_compute=t)


@dataclass(frozen=True)
class SwapCandidate:
    tensor: TensorRef
    out_time: int
    in_time: int
    free_time: int

    @property
    def overhead_if_chosen(self) -> int:
        return max(0, -self.free_time)


@dataclass(frozen=True)
class RecomputeCandidate:
    tensor: TensorRef
    recompute_time: int
    msps: float  # bytes regained per second of recompute
    depends_on: FrozenSet[str]  # resident tensors the producer chain reads


@dataclass(frozen=True)
class MemOptAction:
    kind: str  # "swap" | "recompute"
    tensor_id: str
    size: int
    overhead_us: int


@dataclass(frozen=True)
class MemOptPlan:
    actions: Tuple[MemOptAction, ...] = ()
    bytes_saved: int = 0
    added_time: int = 0


def _producer_chain(g: ComputationGraph, producer_idx: int, lo: int, hi: int):
    """Nodes that must re-execute to rebuild producer_idx's output.

    The walk goes backward through in-stage predecessors and stops at nodes
    whose own output is resident (a saved tensor they produced) or at stage
    inputs. Returns (forward time, resident tensor ids relied on).
    """
    seen = {producer_idx}
    stack = [producer_idx]
    total = 0
    deps: Set[str] = set()
    while stack:
        k = stack.pop()
        total += g.nodes[k].t_f
        for u in g.predecessors[k]:
            if u < lo or u > hi:
                continue  # stage input, present for the whole micro-batch
            own = g.self_saved_ids[u]
            if own:
                deps.update(own)
                continue
            if u not in seen:
                seen.add(u)
                stack.append(u)
    return total, frozenset(deps)


def collect_candidates(g: ComputationGraph, lo: int, hi: int,
                       timeline: StageTimeline, bandwidth: int
                       ) -> Tuple[List[SwapCandidate], List[RecomputeCandidate]]:
    """Swap and recompute candidates for the stage [lo, hi].

    A tensor is a swap candidate when its backward access lands in the
    stage. It is additionally a recompute candidate when its producer (and
    hence the producer chain) lies inside the stage; tensors arriving from
    other stages can be swapped but not rebuilt locally.
    """
    swaps: List[SwapCandidate] = []
    recs: List[RecomputeCandidate] = []
    for k in range(lo, hi + 1):
        for t in g.nodes[k].saved:
            access = t.last_backward_access
            if not (lo <= access <= hi):
                continue
            p_idx = g.index_of(t.producer)
            in_stage = lo <= p_idx <= hi
            move = transfer_time_us(t.size, bandwidth)
            produced_at = timeline.fwd_end_of(p_idx) if in_stage else 0
            window = timeline.bwd_start_of(access) - produced_at
            swaps.append(SwapCandidate(
                tensor=t, out_time=move, in_time=move,
                free_time=window - 2 * move,
            ))
            if in_stage:
                chain_time, deps = _producer_chain(g, p_idx, lo, hi)
                if chain_time > 0:
                    recs.append(RecomputeCandidate(
                        tensor=t,
                        recompute_time=chain_time,
                        msps=t.size * 1e6 / chain_time,
                        depends_on=deps,
                    ))
    return swaps, recs


def _needed_bytes(micro_peak: int, replica_weight: int, capacity: int) -> int:
    # replica_weight * (micro_peak - saved) <= capacity, solved for saved.
    return micro_peak - capacity // replica_weight


def _live_at_peak(g: ComputationGraph, tensor: TensorRef, lo: int, hi: int,
                  peak_idx: int) -> bool:
    p = g.index_of(tensor.producer)
    if p < lo or p > hi:
        return True  # arrived with the stage input, resident from the start
    return p <= peak_idx


def optimize(g: ComputationGraph, lo: int, hi: int, *, micro_peak: int,
             replica_weight: int, capacity: int, bandwidth: int
             ) -> Optional[MemOptPlan]:
    """Cheapest-first eviction plan bringing the stage under capacity.

    Swaps whose transfers hide inside both their own window and the
    per-direction overlap budget (one stage compute time each way) go
    first at zero cost. Once overlap is exhausted the search picks whichever
    of the best remaining swap and the best recompute is cheaper per byte,
    preferring the swap on ties. Returns None when no selection reaches the
    required savings.
    """
    if capacity <= 0:
        raise ValueError("capacity must be positive")
    if replica_weight < 1:
        raise ValueError("replica weight must be at least 1")
    if replica_weight * micro_peak <= capacity:
        return MemOptPlan()
    needed = _needed_bytes(micro_peak, replica_weight, capacity)

    timeline = build_stage_timeline(g, lo, hi)
    swaps, recs = collect_candidates(g, lo, hi, timeline, bandwidth)
    peak_idx = g.segment_peak_index(lo, hi)
    swaps = [s for s in swaps if _live_at_peak(g, s.tensor, lo, hi, peak_idx)]
    recs = [r for r in recs if _live_at_peak(g, r.tensor, lo, hi, peak_idx)]

    actions: List[MemOptAction] = []
    saved = 0
    evicted: Set[str] = set()
    out_budget = timeline.total_compute
    in_budget = timeline.total_compute

    for s in sorted(swaps, key=lambda s: (-s.free_time, s.tensor.id)):
        if saved >= needed:
            break
        if s.free_time < 0:
            break
        if s.out_time > out_budget or s.in_time > in_budget:
            break
        actions.append(MemOptAction("swap", s.tensor.id, s.tensor.size, 0))
        saved += s.tensor.size
        out_budget -= s.out_time
        in_budget -= s.in_time
        evicted.add(s.tensor.id)

    if saved >= needed:
        return MemOptPlan(tuple(actions), saved, 0)

    # Overlap exhausted: pay for the rest, cheapest per byte first. The
    # density greedy can overshoot on its last pick, so a single-action
    # finish is also considered at every step and the cheaper course wins.
    swap_pool: Dict[str, SwapCandidate] = {
        s.tensor.id: s for s in swaps if s.tensor.id not in evicted
    }
    rec_pool: Dict[str, RecomputeCandidate] = {
        r.tensor.id: r for r in recs if r.tensor.id not in evicted
    }
    all_swaps = list(swap_pool.values())

    def swap_key(s: SwapCandidate):
        return (Fraction(s.overhead_if_chosen, s.tensor.size), -s.tensor.size, s.tensor.id)

    def rec_key(r: RecomputeCandidate):
        return (Fraction(r.recompute_time, r.tensor.size), -r.tensor.size, r.tensor.id)

    tail: List[MemOptAction] = []
    tail_cost = 0
    tail_saved = saved
    best_finish: Optional[Tuple[int, List[MemOptAction]]] = None

    def prune_recs():
        for tid in [t for t, r in rec_pool.items() if r.depends_on & evicted]:
            del rec_pool[tid]

    def pin(dep_ids):
        # A chosen rebuild reads these tensors at backward time, so they
        # must stay resident: drop them from both eviction pools.
        for tid in dep_ids:
            swap_pool.pop(tid, None)
            rec_pool.pop(tid, None)

    prune_recs()
    while True:
        remaining = needed - tail_saved
        if remaining <= 0:
            break
        # Cheapest single action that covers everything still missing.
        finishers: List[Tuple[int, int, str, MemOptAction]] = []
        for s in swap_pool.values():
            if s.tensor.size >= remaining:
                finishers.append((s.overhead_if_chosen, 0, s.tensor.id,
                                  MemOptAction("swap", s.tensor.id, s.tensor.size,
                                               s.overhead_if_chosen)))
        for r in rec_pool.values():
            if r.tensor.size >= remaining:
                finishers.append((r.recompute_time, 1, r.tensor.id,
                                  MemOptAction("recompute", r.tensor.id, r.tensor.size,
                                               r.recompute_time)))
        if finishers:
            ov, _, _, act = min(finishers)
            total = tail_cost + ov
            if best_finish is None or total < best_finish[0]:
                best_finish = (total, tail + [act])

        best_s = min(swap_pool.values(), key=swap_key) if swap_pool else None
        best_r = min(rec_pool.values(), key=rec_key) if rec_pool else None
        if best_s is None and best_r is None:
            break
        take_swap = best_r is None or (
            best_s is not None and swap_key(best_s)[0] <= rec_key(best_r)[0]
        )
        if take_swap:
            c = best_s
            act = MemOptAction("swap", c.tensor.id, c.tensor.size, c.overhead_if_chosen)
            tail_cost += c.overhead_if_chosen
        else:
            c = best_r
            act = MemOptAction("recompute", c.tensor.id, c.tensor.size, c.recompute_time)
            tail_cost += c.recompute_time
            pin(c.depends_on)
        tail.append(act)
        tail_saved += c.tensor.size
        evicted.add(c.tensor.id)
        swap_pool.pop(c.tensor.id, None)
        rec_pool.pop(c.tensor.id, None)
        prune_recs()

    candidates: List[Tuple[int, List[MemOptAction]]] = []
    if tail_saved >= needed:
        candidates.append((tail_cost, tail))
    if best_finish is not None:
        candidates.append(best_finish)
    # Pinning rebuild inputs can strand coverage or force dear picks that
    # swaps alone avoid; swaps never conflict, so this pass is complete.
    sel: List[MemOptAction] = []
    got = saved
    cost = 0
    for s in sorted(all_swaps, key=swap_key):
        if got >= needed:
            break
        sel.append(MemOptAction("swap", s.tensor.id, s.tensor.size,
                                s.overhead_if_chosen))
        got += s.tensor.size
        cost += s.overhead_if_chosen
    if got >= needed:
        candidates.append((cost, sel))
    if not candidates:
        return None
    cost, chosen = min(candidates, key=lambda c: (c[0], len(c[1])))
    all_actions = actions + chosen
    total_saved = sum(a.size for a in all_actions)
    plan = MemOptPlan(tuple(all_actions), total_saved, cost)
    assert replica_weight * (micro_peak - plan.bytes_saved) <= capacity
    return plan


def exhaustive_optimize(g: ComputationGraph, lo: int, hi: int, *, micro_peak: int,
                        replica_weight: int, capacity: int, bandwidth: int,
                        max_candidates: int = 12) -> Optional[MemOptPlan]:
    """Reference subset search over at most max_candidates actions.

    Minimizes total overhead over every valid action subset; a subset is
    valid when each tensor appears once and no chosen recompute depends on
    a tensor the subset also evicts.
    """
    if replica_weight * micro_peak <= capacity:
        return MemOptPlan()
    needed = _needed_bytes(micro_peak, replica_weight, capacity)

    timeline = build_stage_timeline(g, lo, hi)
    swaps, recs = collect_candidates(g, lo, hi, timeline, bandwidth)
    peak_idx = g.segment_peak_index(lo, hi)
    entries: List[MemOptAction] = []
    deps: List[FrozenSet[str]] = []
    for s in swaps:
        if _live_at_peak(g, s.tensor, lo, hi, peak_idx):
            entries.append(MemOptAction("swap", s.tensor.id, s.tensor.size,
                                        s.overhead_if_chosen))
            deps.append(frozenset())
    for r in recs:
        if _live_at_peak(g, r.tensor, lo, hi, peak_idx):
            entries.append(MemOptAction("recompute", r.tensor.id, r.tensor.size,
                                        r.recompute_time))
            deps.append(r.depends_on)
    if len(entries) > max_candidates:
        raise ValueError(f"{len(entries)} candidates exceed limit {max_candidates}")

    best: Optional[Tuple[int, int, Tuple[MemOptAction, ...]]] = None
    for mask in range(1 << len(entries)):
        chosen = [entries[i] for i in range(len(entries)) if mask >> i & 1]
        ids = [a.tensor_id for a in chosen]
        if len(set(ids)) != len(ids):
            continue
        idset = set(ids)
        if any(deps[i] & idset for i in range(len(entries)) if mask >> i & 1):
            continue
        if sum(a.size for a in chosen) < needed:
            continue
        cost = sum(a.overhead_us for a in chosen)
        key = (cost, mask, tuple(chosen))
        if best is None or key < best:
            best = key
    if best is None:
        return None
    cost, _, chosen = best
    return MemOptPlan(chosen, sum(a.size for a in chosen), cost)
