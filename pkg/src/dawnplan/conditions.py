"""Premise checks for the planner's interval-confinement guarantee.

The planner restricts its search to the closed interval between the
compute-balanced and memory-balanced positions. That restriction is only
guaranteed lossless when the profile is well behaved: cumulative compute
and memory grow monotonically, communication is cheap next to stage
compute, and swap opportunities are spread evenly through the graph. This
module evaluates operational stand-ins for those premises.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict

import numpy as np

from .graph import ComputationGraph, ceil_div, transfer_time_us
from . import balance


@dataclass(frozen=True)
class TheoremConditionReport:
    """Flags for the four premises plus per-flag diagnostics."""

    compute_monotone: bool
    memory_monotone: bool
    comm_dominated: bool
    memopt_evenly_distributed: bool
    details: Dict[str, dict] = field(default_factory=dict)

    @property
    def all_met(self) -> bool:
        return (self.compute_monotone and self.memory_monotone
                and self.comm_dominated and self.memopt_evenly_distributed)

    def flags(self) -> Dict[str, bool]:
        return {
            "compute_monotone": self.compute_monotone,
            "memory_monotone": self.memory_monotone,
            "comm_dominated": self.comm_dominated,
            "memopt_evenly_distributed": self.memopt_evenly_distributed,
        }


def check_theorem_conditions(g: ComputationGraph, stages: int, bandwidth: int,
                             dip_tolerance: float = 0.9,
                             spread_factor: float = 3.0) -> TheoremConditionReport:
    """Evaluate the containment premises for an intended stage count.

    dip_tolerance bounds how far resident memory may fall below its running
    peak before the memory series stops counting as monotone.
    spread_factor bounds the ratio between per-decile swap-candidate byte
    totals; the decile metric is a heuristic operationalization.
    """
    n = len(g.nodes)
    details: Dict[str, dict] = {}

    # Compute monotonicity: cumulative time never decreases. Trivially true
    # for validated graphs (times are nonnegative) but checked literally.
    prev = 0
    compute_ok = True
    for k in range(n):
        t = g.segment_time(0, k)
        if t < prev:
            compute_ok = False
            break
        prev = t
    details["compute_monotone"] = {"nonnegative_times": compute_ok}

    # Memory monotonicity: the running peak is nondecreasing by
    # construction, so the bite is resident memory staying within
    # dip_tolerance of the running peak.
    tol = Fraction(str(dip_tolerance))
    cur = 0
    peak = 0
    memory_ok = True
    worst_ratio = None
    for node in g.nodes:
        cur += node.m_a + node.m_p
        peak = max(peak, cur)
        cur -= node.m_d
        if peak > 0:
            ratio = Fraction(cur, peak)
            if worst_ratio is None or ratio < worst_ratio:
                worst_ratio = ratio
            if ratio < tol:
                memory_ok = False
    details["memory_monotone"] = {
        "dip_tolerance": dip_tolerance,
        "min_resident_to_peak": float(worst_ratio) if worst_ratio is not None else 1.0,
    }

    # Communication domination: every single-cut boundary must transfer in
    # less time than the smallest stage of the compute-balanced partition.
    cb = balance.compute_balanced(g, 0, n - 1, [1] * stages)
    bounds = [0, *[p + 1 for p in cb.positions], n]
    min_stage_time = min(g.segment_time(bounds[i], bounds[i + 1] - 1)
                         for i in range(stages))
    crossing = [0] * n  # bytes crossing the cut after index p
    for i, node in enumerate(g.nodes):
        cons = [g.index_of(c) for c in node.consumers]
        if not cons:
            continue
        last = max(cons)
        if last > i:
            crossing[i] += node.m_a
            if last < n:
                crossing[last] -= node.m_a
    run = 0
    comm_ok = True
    worst_cut = None
    worst_time = -1
    for p in range(n - 1):
        run += crossing[p]
        t = transfer_time_us(run, bandwidth)
        if t > worst_time:
            worst_time = t
            worst_cut = p
        if t >= min_stage_time:
            comm_ok = False
    details["comm_dominated"] = {
        "min_stage_time_us": min_stage_time,
        "worst_cut": worst_cut,
        "worst_comm_us": worst_time,
    }

    # Even spread of swap opportunities: per-decile saved-tensor byte
    # totals must stay within spread_factor of each other.
    buckets = np.array_split(np.arange(n), min(10, n))
    sums = []
    for b in buckets:
        sums.append(sum(t.size for k in b for t in g.nodes[int(k)].saved))
    if max(sums) == 0:
        spread_ok = True  # no opportunities anywhere; vacuously even
        ratio = 0.0
    elif min(sums) == 0:
        spread_ok = False
        ratio = float("inf")
    else:
        factor = Fraction(str(spread_factor))
        spread_ok = Fraction(max(sums), min(sums)) < factor
        ratio = max(sums) / min(sums)
    details["memopt_evenly_distributed"] = {
        "decile_bytes": sums,
        "max_min_ratio": ratio,
        "spread_factor": spread_factor,
        "heuristic": True,
    }

    return TheoremConditionReport(
        compute_monotone=compute_ok,
        memory_monotone=memory_ok,
        comm_dominated=comm_ok,
        memopt_evenly_distributed=spread_ok,
        details=details,
    )
