"""
Profiled computation graphs: generate, save, inspect
====================================================

A profile is a chain (or near-chain) of nodes with measured forward and
backward times, activation sizes, parameter sizes, and the tensors each
node saves for its backward pass. Everything downstream of this package
(cuts, plans, simulations) consumes these graphs.
"""

import json
import tempfile
from pathlib import Path

from dawnplan import gen_cnn_like, gen_transformer_like
from dawnplan.conditions import check_theorem_conditions
from dawnplan.graph import MIB, canonical_hash, load_profile, memory_cdf, save_profile

# Synthetic generators are seeded, so a (kind, layers, seed) triple names
# one exact graph forever.
g = gen_transformer_like(4, 42)
print(f"{g.name}: {len(g)} nodes, "
      f"total {g.segment_time(0, len(g) - 1) / 1000:.2f} ms, "
      f"peak {g.peak_memory / MIB:.1f} MiB")

# Each node carries its own measurements.
for node in g.nodes[:4]:
    print(f"  {node.id:10s} t_f={node.t_f:4d} us  t_b={node.t_b:4d} us  "
          f"m_a={node.m_a / MIB:5.1f} MiB  saves={len(node.saved)} tensor(s)")

# Profiles round-trip through a small JSON schema; the canonical hash is
# computed over the sorted document, so it identifies content, not files.
with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "transformer4.json"
    save_profile(g, path)
    reloaded = load_profile(path)
    print(f"\nsaved and reloaded: hash {canonical_hash(g)}"
          f" == {canonical_hash(reloaded)}")

# The memory CDF summarizes how activation bytes distribute over nodes.
cdf = memory_cdf(g)
print("\nactivation size percentiles:")
for q in ("p50", "p90", "p99"):
    print(f"  {q}: {cdf['activation'][q] / MIB:.2f} MiB")

# Condition flags describe which planner guarantees apply to this graph:
# monotone cumulative compute/memory, cheap boundaries, and evenly spread
# eviction opportunities.
report = check_theorem_conditions(g, 2, 16 * 1024 ** 3)
print("\ncondition flags:")
for name, ok in report.flags().items():
    print(f"  {name}: {ok}")

# The cnn-like shape trips the memory flags on purpose: pooling nodes
# release memory mid-chain, so cumulative usage is not monotone.
noisy = gen_cnn_like(8, 0)
noisy_report = check_theorem_conditions(noisy, 2, 16 * 1024 ** 3)
print(f"\n{noisy.name} all flags met: {noisy_report.all_met} "
      f"(memory_monotone={noisy_report.flags()['memory_monotone']})")

print("\nfull stats document:")
print(json.dumps({"name": g.name, "nodes": len(g),
                  "peak_bytes": g.peak_memory}, indent=2))
