"""Pipeline partition search.

The planner builds an l-stage partition by recursive bisection. Each level
computes the compute-balanced and memory-balanced positions for the current
super-split, enumerates candidate cuts only inside the closed interval
between them, prunes candidates whose boundary traffic is expensive, and
evaluates candidates starting from the memory-balanced end so the scan can
stop at the first infeasible one (memory pressure grows monotonically
toward compute balance on well-behaved profiles). Every stage of a
candidate partition is pushed under the device capacity by the memopt
module; a stage that cannot fit makes the whole candidate infeasible.

Results are deterministic: ties break toward the smallest bottleneck, then
the lexicographically smallest cut positions, regardless of --jobs.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from . import balance, memopt
from .balance import Cut, SCHEDULES, StageMemProfile, schedule_weight, split_pair
from .graph import ComputationGraph, canonical_hash, transfer_time_us

PLAN_SCHEMA = 1


class InfeasibleModelError(ValueError):
    """No partition fits the device capacity; the message names the worst stage."""


@dataclass(frozen=True)
class PlanConfig:
    stages: int
    schedule: str
    capacity: int
    bandwidth: int
    comm_cap: float = 0.5
    jobs: int = 1

    def __post_init__(self):
        if self.stages < 1:
            raise ValueError("stages must be at least 1")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.capacity <= 0:
            raise ValueError("capacity must be positive")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.comm_cap <= 0:
            raise ValueError("comm_cap must be positive")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")


@dataclass(frozen=True)
class CandidateCut:
    position: int
    comm_bytes: int
    est_comm_time: int


@dataclass(frozen=True)
class SearchStep:
    """One search level: the interval examined and the position chosen."""

    lo: int
    hi: int
    first_stage: int
    last_stage: int
    cb: int
    mb: int
    chosen: Optional[int]


@dataclass(frozen=True)
class PartitionPlan:
    cuts: Cut
    stages: Tuple[StageMemProfile, ...]
    memopt: Tuple[memopt.MemOptPlan, ...]
    bottleneck_time: int
    schedule: str
    graph_name: str
    graph_hash: str
    config: PlanConfig

    def effective_times(self) -> Tuple[int, ...]:
        return tuple(s.time + m.added_time for s, m in zip(self.stages, self.memopt))

    def oversubscribed_stages(self) -> Tuple[int, ...]:
        return tuple(s.stage for s in self.stages if s.sched_peak > self.config.capacity)


def stage_bounds(cut: Cut, n: int) -> List[Tuple[int, int]]:
    """Inclusive node ranges of each stage of an n-node graph under cut."""
    starts = [0, *[p + 1 for p in cut.positions]]
    ends = [*cut.positions, n - 1]
    return list(zip(starts, ends))


def inevitable_comm(g: ComputationGraph, wlo: int, whi: int) -> frozenset:
    """Edges crossing every cut position in the closed interval [wlo, whi].

    These cost the same no matter which candidate is picked, so candidate
    comparison excludes them.
    """
    return frozenset((u, v) for u, v in g.edges if u <= wlo and v > whi)


def _crossing_bytes(g: ComputationGraph, wlo: int, whi: int) -> List[int]:
    """Non-inevitable boundary bytes for each position in [wlo, whi].

    A producer's activation is charged once per cut it crosses with at
    least one non-inevitable edge; inevitable edges (producer at or before
    wlo, consumer past whi) are excluded.
    """
    width = whi - wlo + 1
    diff = [0] * (width + 1)
    for u, node in enumerate(g.nodes):
        if u > whi:
            break
        cons = [g.index_of(c) for c in node.consumers]
        if u <= wlo:
            cons = [v for v in cons if v <= whi]
        if not cons:
            continue
        last = max(cons)
        a = max(u, wlo)
        b = min(last - 1, whi)
        if a > b:
            continue
        diff[a - wlo] += node.m_a
        diff[b - wlo + 1] -= node.m_a
    out = []
    run = 0
    for d in diff[:width]:
        run += d
        out.append(run)
    return out


def _common_leaf_shift(g: ComputationGraph, pos: int, hi: int, whi: int) -> int:
    """Lowest-common-leaf adjustment for a candidate position.

    When a cut severs several same-depth activations that all feed one
    consumer inside the interval, moving the cut just past that consumer
    leaves a single crossing activation. Returns the (possibly unchanged)
    position.
    """
    crossing = [(u, v) for u, v in g.edges if u <= pos < v <= hi]
    producers = {u for u, _ in crossing}
    if len(producers) < 2:
        return pos
    depths = [g.nodes[u].depth for u in producers]
    if len(set(depths)) == len(depths):
        return pos  # no two severed producers share a depth
    consumers = {v for _, v in crossing}
    if len(consumers) != 1:
        return pos
    w = next(iter(consumers))
    if pos < w <= min(whi, hi - 1):
        return w
    return pos


def candidate_cuts(g: ComputationGraph, lo: int, hi: int, cb: int, mb: int,
                   left_span: int, right_span: int, bandwidth: int,
                   comm_cap: float) -> List[CandidateCut]:
    """Ordered candidate positions for a super-split of [lo, hi].

    Enumerates the closed interval between the balanced positions, applies
    the lowest-common-leaf adjustment, drops candidates whose estimated
    boundary transfer exceeds comm_cap times the smaller per-stage average
    compute time of the two sides, and orders the rest from the
    memory-balanced end toward the compute-balanced end. When the filter
    removes everything, the unfiltered memory-balanced endpoint survives as
    the sole candidate.
    """
    wlo, whi = min(cb, mb), max(cb, mb)
    bytes_at = _crossing_bytes(g, wlo, whi)

    def make(pos: int) -> CandidateCut:
        nbytes = bytes_at[pos - wlo]
        return CandidateCut(pos, nbytes, transfer_time_us(nbytes, bandwidth))

    seen = set()
    ordered: List[int] = []
    for pos in sorted(range(wlo, whi + 1), key=lambda p: (abs(p - mb), p)):
        adj = _common_leaf_shift(g, pos, hi, whi)
        if adj not in seen:
            seen.add(adj)
            ordered.append(adj)

    cap = Fraction(str(comm_cap))
    kept: List[CandidateCut] = []
    for pos in ordered:
        cand = make(pos)
        left_avg = Fraction(g.segment_time(lo, pos), left_span)
        right_avg = Fraction(g.segment_time(pos + 1, hi), right_span)
        if Fraction(cand.est_comm_time) > cap * min(left_avg, right_avg):
            continue
        kept.append(cand)
    if not kept:
        kept = [make(mb)]
    return kept


# Search result for a stage span: (bottleneck µs, cut positions, per-stage memopt).
_Result = Tuple[int, Tuple[int, ...], Tuple[memopt.MemOptPlan, ...]]


class _Searcher:
    def __init__(self, g: ComputationGraph, cfg: PlanConfig):
        self.g = g
        self.cfg = cfg
        self.memo: Dict[Tuple[int, int, int, int], Optional[_Result]] = {}
        self.opt_memo: Dict[Tuple[int, int, int], Optional[memopt.MemOptPlan]] = {}
        self.trace: List[SearchStep] = []

    # -- per-stage feasibility --------------------------------------------------

    def optimize_stage(self, lo: int, hi: int, sid: int) -> Optional[memopt.MemOptPlan]:
        w = schedule_weight(self.cfg.schedule, sid, self.cfg.stages)
        key = (lo, hi, w)
        if key not in self.opt_memo:
            self.opt_memo[key] = memopt.optimize(
                self.g, lo, hi,
                micro_peak=self.g.segment_peak(lo, hi),
                replica_weight=w,
                capacity=self.cfg.capacity,
                bandwidth=self.cfg.bandwidth,
            )
        return self.opt_memo[key]

    def _single(self, lo: int, hi: int, sid: int) -> Optional[_Result]:
        mo = self.optimize_stage(lo, hi, sid)
        if mo is None:
            return None
        return (self.g.segment_time(lo, hi) + mo.added_time, (), (mo,))

    # -- candidate scanning -----------------------------------------------------

    def _scan(self, cands: Sequence[CandidateCut],
              eval_one: Callable[[CandidateCut], Optional[_Result]],
              parallel: bool) -> List[Tuple[CandidateCut, _Result]]:
        """Evaluate candidates in order, stopping at the first infeasible one.

        With parallel=True every candidate is evaluated concurrently and the
        list truncated afterwards, which returns exactly what the sequential
        scan would have.
        """
        if parallel and self.cfg.jobs > 1 and len(cands) > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.jobs) as ex:
                results = list(ex.map(eval_one, cands))
        else:
            results = []
            for c in cands:
                r = eval_one(c)
                results.append(r)
                if r is None:
                    break
        out = []
        for c, r in zip(cands, results):
            if r is None:
                break
            out.append((c, r))
        return out

    # -- two adjacent stages ----------------------------------------------------

    def _adjacent(self, lo: int, hi: int, sid: int, parallel: bool) -> Optional[_Result]:
        g, cfg = self.g, self.cfg
        cb, mb = split_pair(g, lo, hi, cfg.stages, cfg.schedule, [sid], [sid + 1])

        w1 = schedule_weight(cfg.schedule, sid, cfg.stages)
        w2 = schedule_weight(cfg.schedule, sid + 1, cfg.stages)
        m1 = g.segment_peak(lo, cb)
        m2 = g.segment_peak(cb + 1, hi)
        if max(w1 * m1, w2 * m2) < cfg.capacity:
            # Compute balance already fits; no better bottleneck exists.
            self.trace.append(SearchStep(lo, hi, sid, sid + 1, cb, mb, cb))
            t = max(g.segment_time(lo, cb), g.segment_time(cb + 1, hi))
            return (t, (cb,), (memopt.MemOptPlan(), memopt.MemOptPlan()))

        cands = candidate_cuts(g, lo, hi, cb, mb, 1, 1, cfg.bandwidth, cfg.comm_cap)

        def eval_one(c: CandidateCut) -> Optional[_Result]:
            a = self.optimize_stage(lo, c.position, sid)
            if a is None:
                return None
            b = self.optimize_stage(c.position + 1, hi, sid + 1)
            if b is None:
                return None
            t = max(g.segment_time(lo, c.position) + a.added_time,
                    g.segment_time(c.position + 1, hi) + b.added_time)
            return (t, (c.position,), (a, b))

        feasible = self._scan(cands, eval_one, parallel)
        if not feasible:
            self.trace.append(SearchStep(lo, hi, sid, sid + 1, cb, mb, None))
            return None
        best = min(feasible, key=lambda cr: (cr[1][0], cr[0].position))
        self.trace.append(SearchStep(lo, hi, sid, sid + 1, cb, mb, best[0].position))
        return best[1]

    # -- general bisection ------------------------------------------------------

    def solve(self, lo: int, hi: int, L: int, R: int,
              parallel: bool = False) -> Optional[_Result]:
        key = (lo, hi, L, R)
        if key in self.memo:
            return self.memo[key]
        if L == R:
            res = self._single(lo, hi, L)
        elif R - L == 1:
            res = self._adjacent(lo, hi, L, parallel)
        else:
            res = self._bipar(lo, hi, L, R, parallel)
        self.memo[key] = res
        return res

    def _bipar(self, lo: int, hi: int, L: int, R: int, parallel: bool) -> Optional[_Result]:
        g, cfg = self.g, self.cfg
        # Three remaining stages peel the first stage off; larger spans halve.
        mid = L if R - L == 2 else (L + R) // 2
        left_ids = list(range(L, mid + 1))
        right_ids = list(range(mid + 1, R + 1))
        nl, nr = len(left_ids), len(right_ids)

        cb, mb = split_pair(g, lo, hi, cfg.stages, cfg.schedule, left_ids, right_ids)
        # Both sides must keep at least one node per stage.
        p_min, p_max = lo + nl - 1, hi - nr
        cb = min(max(cb, p_min), p_max)
        mb = min(max(mb, p_min), p_max)

        cands = candidate_cuts(g, lo, hi, cb, mb, nl, nr, cfg.bandwidth, cfg.comm_cap)

        def eval_one(c: CandidateCut) -> Optional[_Result]:
            left = self.solve(lo, c.position, L, mid)
            if left is None:
                return None
            right = self.solve(c.position + 1, hi, mid + 1, R)
            if right is None:
                return None
            bott = max(left[0], right[0])
            cuts = left[1] + (c.position,) + right[1]
            return (bott, cuts, left[2] + right[2])

        feasible = self._scan(cands, eval_one, parallel)
        if not feasible:
            self.trace.append(SearchStep(lo, hi, L, R, cb, mb, None))
            return None
        best = min(feasible, key=lambda cr: (cr[1][0], cr[1][1]))
        chosen_pos = best[1][1][nl - 1]  # the cut this level contributed
        self.trace.append(SearchStep(lo, hi, L, R, cb, mb, chosen_pos))
        return best[1]


def _assemble(g: ComputationGraph, cfg: PlanConfig, positions: Tuple[int, ...],
              memopts: Tuple[memopt.MemOptPlan, ...]) -> PartitionPlan:
    cut = Cut(positions)
    profiles = []
    bottleneck = 0
    for x, (lo, hi) in enumerate(stage_bounds(cut, len(g)), start=1):
        mo = memopts[x - 1]
        micro = g.segment_peak(lo, hi)
        w = schedule_weight(cfg.schedule, x, cfg.stages)
        t = g.segment_time(lo, hi)
        profiles.append(StageMemProfile(
            stage=x,
            micro_peak=micro,
            sched_peak=w * max(0, micro - mo.bytes_saved),
            time=t,
        ))
        bottleneck = max(bottleneck, t + mo.added_time)
    return PartitionPlan(
        cuts=cut,
        stages=tuple(profiles),
        memopt=memopts,
        bottleneck_time=bottleneck,
        schedule=cfg.schedule,
        graph_name=g.name,
        graph_hash=canonical_hash(g),
        config=cfg,
    )


def _infeasible_error(g: ComputationGraph, cfg: PlanConfig) -> InfeasibleModelError:
    """Diagnose which stage of the compute-balanced baseline is most oversubscribed."""
    cb = balance.compute_balanced(g, 0, len(g) - 1, [1] * cfg.stages)
    profiles = balance.stage_profiles(g, cb, cfg.stages, cfg.schedule)
    worst = max(profiles, key=lambda s: s.sched_peak)
    return InfeasibleModelError(
        f"no partition fits capacity {cfg.capacity} bytes; stage {worst.stage} "
        f"of the compute-balanced baseline needs {worst.sched_peak} bytes"
    )


def plan_with_trace(g: ComputationGraph, cfg: PlanConfig) -> Tuple[PartitionPlan, Tuple[SearchStep, ...]]:
    n = len(g)
    if cfg.stages > n:
        raise InfeasibleModelError(f"{cfg.stages} stages exceed {n} nodes")
    s = _Searcher(g, cfg)
    res = s.solve(0, n - 1, 1, cfg.stages, parallel=cfg.jobs > 1)
    if res is None:
        raise _infeasible_error(g, cfg)
    _, positions, memopts = res
    return _assemble(g, cfg, positions, memopts), tuple(s.trace)


def plan(g: ComputationGraph, cfg: PlanConfig) -> PartitionPlan:
    return plan_with_trace(g, cfg)[0]


def plan_from_cuts(g: ComputationGraph, cfg: PlanConfig, positions: Sequence[int],
                   require_feasible: bool = True) -> PartitionPlan:
    """Evaluate a fixed cut tuple under the same per-stage memopt policy.

    With require_feasible=False, stages that cannot fit keep an empty
    memopt plan and their oversubscribed sched_peak, so comparison and
    simulation of deliberately unbalanced strategies stay possible.
    """
    cut = Cut(tuple(positions))
    if len(cut.positions) != cfg.stages - 1:
        raise ValueError("cut arity does not match stage count")
    memopts = []
    for x, (lo, hi) in enumerate(stage_bounds(cut, len(g)), start=1):
        w = schedule_weight(cfg.schedule, x, cfg.stages)
        mo = memopt.optimize(
            g, lo, hi,
            micro_peak=g.segment_peak(lo, hi),
            replica_weight=w,
            capacity=cfg.capacity,
            bandwidth=cfg.bandwidth,
        )
        if mo is None:
            if require_feasible:
                raise InfeasibleModelError(
                    f"stage {x} over nodes [{lo}, {hi}] cannot fit capacity "
                    f"{cfg.capacity} bytes"
                )
            mo = memopt.MemOptPlan()
        memopts.append(mo)
    return _assemble(g, cfg, tuple(positions), tuple(memopts))


# -- plan files ------------------------------------------------------------------


def plan_doc(p: PartitionPlan) -> dict:
    return {
        "schema": PLAN_SCHEMA,
        "graph": {"name": p.graph_name, "hash": p.graph_hash},
        "config": {
            "stages": p.config.stages,
            "schedule": p.config.schedule,
            "capacity_bytes": p.config.capacity,
            "bandwidth_bps": p.config.bandwidth,
            "comm_cap": p.config.comm_cap,
        },
        "cuts": list(p.cuts.positions),
        "stages": [
            {
                "T_us": s.time,
                "micro_peak_bytes": s.micro_peak,
                "sched_peak_bytes": s.sched_peak,
                "memopt": [
                    {
                        "kind": a.kind,
                        "tensor_id": a.tensor_id,
                        "size_bytes": a.size,
                        "overhead_us": a.overhead_us,
                    }
                    for a in m.actions
                ],
                "t_moo_us": m.added_time,
            }
            for s, m in zip(p.stages, p.memopt)
        ],
        "bottleneck_us": p.bottleneck_time,
    }


def plan_json(p: PartitionPlan) -> str:
    return json.dumps(plan_doc(p), indent=2, sort_keys=True) + "\n"


def save_plan(p: PartitionPlan, path) -> None:
    Path(path).write_text(plan_json(p))


def load_plan_doc(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict) or doc.get("schema") != PLAN_SCHEMA:
        raise ValueError(f"{path}: not a schema-{PLAN_SCHEMA} plan file")
    for key in ("graph", "config", "cuts", "stages", "bottleneck_us"):
        if key not in doc:
            raise ValueError(f"{path}: plan file missing '{key}'")
    return doc


def plan_from_doc(g: ComputationGraph, doc: dict) -> PartitionPlan:
    """Rebuild a PartitionPlan from a plan file against its graph.

    Stage times and peaks are recomputed from the graph and cross-checked
    against the stored values so a stale or mismatched plan fails loudly.
    """
    if doc["graph"]["hash"] != canonical_hash(g):
        raise ValueError("plan was built for a different graph (hash mismatch)")
    c = doc["config"]
    cfg = PlanConfig(
        stages=c["stages"],
        schedule=c["schedule"],
        capacity=c["capacity_bytes"],
        bandwidth=c["bandwidth_bps"],
        comm_cap=c.get("comm_cap", 0.5),
    )
    memopts = []
    for s in doc["stages"]:
        actions = tuple(
            memopt.MemOptAction(a["kind"], a["tensor_id"], a["size_bytes"], a["overhead_us"])
            for a in s["memopt"]
        )
        memopts.append(memopt.MemOptPlan(
            actions=actions,
            bytes_saved=sum(a.size for a in actions),
            added_time=s["t_moo_us"],
        ))
    plan_ = _assemble(g, cfg, tuple(doc["cuts"]), tuple(memopts))
    for s, stored in zip(plan_.stages, doc["stages"]):
        if s.time != stored["T_us"] or s.micro_peak != stored["micro_peak_bytes"]:
            raise ValueError(
                f"stage {s.stage}: stored times/peaks disagree with the graph"
            )
    return plan_
