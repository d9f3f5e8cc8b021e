"""Brute-force reference planner and interval-confinement verifier.

The oracle enumerates every cut tuple, applying the same per-stage memory
optimization policy as the planner, so planner-versus-oracle deltas expose
the search rather than the cost model. It is guarded to desk-scale
instances and exists for tests and spot checks, not production planning.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from . import memopt
from .balance import SCHEDULE_ASYNC, schedule_weight, split_pair
from .conditions import TheoremConditionReport, check_theorem_conditions
from .graph import ComputationGraph
from .partition import (InfeasibleModelError, PartitionPlan, PlanConfig,
                        _assemble, _infeasible_error, stage_bounds)
from .balance import Cut

DEFAULT_GUARD = 10_000_000


class InstanceTooLargeError(ValueError):
    """The cut-tuple space exceeds the enumeration guard."""


def exhaustive_plan(g: ComputationGraph, cfg: PlanConfig, *,
                    exhaustive_memopt: bool = False,
                    guard: int = DEFAULT_GUARD) -> PartitionPlan:
    """Optimal plan by full enumeration of increasing cut tuples.

    Ties on bottleneck time resolve to the lexicographically smallest
    tuple (combinations are generated in that order). With
    exhaustive_memopt=True each stage's action subset is also brute-forced,
    bounding the greedy memopt gap; stages must then offer at most 12
    candidate actions.
    """
    n = len(g)
    k = cfg.stages - 1
    if cfg.stages > n:
        raise InfeasibleModelError(f"{cfg.stages} stages exceed {n} nodes")
    space = math.comb(n - 1, k)
    if space > guard:
        raise InstanceTooLargeError(
            f"{space} cut tuples exceed the enumeration guard ({guard})"
        )

    opt_memo: Dict[Tuple[int, int, int], Optional[memopt.MemOptPlan]] = {}

    def stage_plan(lo: int, hi: int, sid: int) -> Optional[memopt.MemOptPlan]:
        w = schedule_weight(cfg.schedule, sid, cfg.stages)
        key = (lo, hi, w)
        if key not in opt_memo:
            kwargs = dict(
                micro_peak=g.segment_peak(lo, hi),
                replica_weight=w,
                capacity=cfg.capacity,
                bandwidth=cfg.bandwidth,
            )
            if exhaustive_memopt:
                try:
                    opt_memo[key] = memopt.exhaustive_optimize(g, lo, hi, **kwargs)
                except ValueError as e:
                    raise InstanceTooLargeError(str(e)) from e
            else:
                opt_memo[key] = memopt.optimize(g, lo, hi, **kwargs)
        return opt_memo[key]

    best: Optional[Tuple[int, Tuple[int, ...], Tuple[memopt.MemOptPlan, ...]]] = None
    for positions in itertools.combinations(range(n - 1), k):
        plans = []
        bottleneck = 0
        feasible = True
        for sid, (lo, hi) in enumerate(stage_bounds(Cut(positions), n), start=1):
            mo = stage_plan(lo, hi, sid)
            if mo is None:
                feasible = False
                break
            plans.append(mo)
            bottleneck = max(bottleneck, g.segment_time(lo, hi) + mo.added_time)
        if not feasible:
            continue
        if best is None or bottleneck < best[0]:
            best = (bottleneck, positions, tuple(plans))
    if best is None:
        raise _infeasible_error(g, cfg)
    return _assemble(g, cfg, best[1], best[2])


@dataclass(frozen=True)
class TheoremVerification:
    """Empirical containment check for a two-stage split of a graph."""

    interval: Tuple[int, int]
    optimal_cut: int
    inside: bool
    conditions: TheoremConditionReport

    @property
    def asserted(self) -> bool:
        """Whether the containment guarantee actually applies to this graph."""
        return self.conditions.all_met

    def to_doc(self) -> dict:
        return {
            "interval": list(self.interval),
            "optimal_cut": self.optimal_cut,
            "inside": self.inside,
            "flags": self.conditions.flags(),
        }


def verify_theorem(g: ComputationGraph, *, bandwidth: int, capacity: int,
                   schedule: str = SCHEDULE_ASYNC,
                   comm_cap: float = 0.5) -> TheoremVerification:
    """Compare the oracle-optimal two-way cut against the balanced interval.

    Containment is only guaranteed (and only asserted by callers) when all
    four condition flags hold; the report always carries the inside flag
    for inspection.
    """
    n = len(g)
    cb, mb = split_pair(g, 0, n - 1, 2, schedule, [1], [2])
    interval = (min(cb, mb), max(cb, mb))
    cfg = PlanConfig(stages=2, schedule=schedule, capacity=capacity,
                     bandwidth=bandwidth, comm_cap=comm_cap)
    optimal = exhaustive_plan(g, cfg).cuts.positions[0]
    conditions = check_theorem_conditions(g, 2, bandwidth)
    return TheoremVerification(
        interval=interval,
        optimal_cut=optimal,
        inside=interval[0] <= optimal <= interval[1],
        conditions=conditions,
    )
