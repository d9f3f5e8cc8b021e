"""
Compute-balanced and memory-balanced partitions
===============================================

Two closed-form baselines bracket the planner's search. The compute-
balanced cut minimizes the largest stage time; the memory-balanced cut
equalizes scheduled memory across stages, weighting each stage by how
many micro-batches the asynchronous schedule keeps in flight there.
"""

from dawnplan import gen_cnn_like, gen_uniform
from dawnplan.balance import (
    SCHEDULE_ASYNC,
    SCHEDULE_SYNC,
    compute_balanced,
    memory_balanced_1f1b,
    memory_balanced_sync,
    stage_profiles,
)
from dawnplan.graph import MIB


def show(g, cut, stages, schedule, label):
    profs = stage_profiles(g, cut, stages, schedule)
    print(f"  {label}: cuts {cut.positions}")
    for p in profs:
        print(f"    stage {p.stage}: T={p.time / 1000:7.2f} ms  "
              f"micro peak {p.micro_peak / MIB:6.1f} MiB  "
              f"scheduled peak {p.sched_peak / MIB:6.1f} MiB")


# On a uniform chain the two baselines disagree: compute balance splits
# the nodes in half, while the asynchronous schedule holds 2 micro-batches
# resident on stage 1 and only 1 on stage 2, so memory balance shifts the
# cut left.
g = gen_uniform(8)
print(f"{g.name}, 2 stages, async schedule")
show(g, compute_balanced(g, 0, 7, [1, 1]), 2, SCHEDULE_ASYNC, "compute-balanced")
show(g, memory_balanced_1f1b(g, 2), 2, SCHEDULE_ASYNC, "memory-balanced")

# Under the synchronous schedule every stage holds all micro-batches, the
# in-flight weights are equal, and the memory-balanced cut is simply the
# equal-peak split.
print(f"\n{g.name}, 2 stages, sync schedule")
show(g, memory_balanced_sync(g, 2), 2, SCHEDULE_SYNC, "memory-balanced")

# The cnn-like shape stores most of its activations early while most of
# its compute sits elsewhere, so the two cuts land far apart; the gap is
# exactly the interval the planner searches.
g = gen_cnn_like(16, 7)
n = len(g.nodes)
cb = compute_balanced(g, 0, n - 1, [1] * 4)
mb = memory_balanced_1f1b(g, 4)
print(f"\n{g.name}, 4 stages")
show(g, cb, 4, SCHEDULE_ASYNC, "compute-balanced")
show(g, mb, 4, SCHEDULE_ASYNC, "memory-balanced")
print(f"  search interval per boundary: between {cb.positions} and {mb.positions}")
