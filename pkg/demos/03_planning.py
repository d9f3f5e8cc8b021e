"""
Planning under a memory capacity
================================

The planner picks one cut per pipeline boundary, confining candidates to
the interval between the compute-balanced and memory-balanced positions,
filtering out cuts whose boundary traffic would swamp the stages, and
attaching a per-stage eviction plan whenever the schedule's resident set
exceeds device capacity. The brute-force oracle replays the same model
over every cut tuple, which keeps the search honest on small graphs.
"""

from dawnplan import exhaustive_plan, gen_transformer_like, plan
from dawnplan.balance import SCHEDULE_ASYNC
from dawnplan.graph import MIB

GIB = 1024 ** 3
from dawnplan.partition import PlanConfig, plan_json

g = gen_transformer_like(4, 42)
print(f"graph: {g.name}, {len(g)} nodes, peak {g.peak_memory / MIB:.1f} MiB")

# With ample capacity the planner needs no evictions and lands on the
# compute-balanced cut.
ample = PlanConfig(stages=4, schedule=SCHEDULE_ASYNC, capacity=4 * GIB,
                   bandwidth=16 * GIB)
p = plan(g, ample)
print(f"\nample capacity: cuts {p.cuts.positions}, "
      f"bottleneck {p.bottleneck_time / 1000:.2f} ms")

# Shrinking capacity forces it to trade: move cuts toward the memory-
# balanced positions and, when that is not enough, pay for swaps or
# recomputation on the stages that still do not fit.
for frac in (1.0, 0.6, 0.45, 0.4):
    cap = int(frac * max(s.sched_peak for s in p.stages))
    cfg = PlanConfig(stages=4, schedule=SCHEDULE_ASYNC, capacity=cap,
                     bandwidth=16 * GIB)
    q = plan(g, cfg)
    extra = sum(m.added_time for m in q.memopt)
    acts = sum(len(m.actions) for m in q.memopt)
    print(f"capacity {cap / MIB:7.1f} MiB: cuts {q.cuts.positions}, "
          f"bottleneck {q.bottleneck_time / 1000:7.2f} ms, "
          f"{acts} eviction action(s) adding {extra / 1000:.2f} ms")

# The oracle confirms the search found the true optimum here.
cfg = PlanConfig(stages=4, schedule=SCHEDULE_ASYNC,
                 capacity=int(0.6 * max(s.sched_peak for s in p.stages)),
                 bandwidth=16 * GIB)
best = plan(g, cfg)
ref = exhaustive_plan(g, cfg)
print(f"\nplanner bottleneck {max(best.effective_times())} us vs "
      f"oracle {max(ref.effective_times())} us")

# Plans serialize to JSON with the graph's content hash embedded, so a
# stale plan cannot be replayed against the wrong profile.
doc = plan_json(best)
print(f"\nplan document: {len(doc)} bytes, first line {doc.splitlines()[0]!r}")
