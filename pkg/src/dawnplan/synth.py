"""Seeded synthetic profiles covering the planner's qualitative regimes.

Three shapes: a uniform chain (fixtures and analytic checks), a
transformer-like graph where node time tracks activation size, and a
cnn-like graph where they anti-correlate (large activations early, heavy
compute late). Absolute scales target ~100 us nodes and ~10 MiB
activations so whole searches finish instantly; a scale knob multiplies
memory for stress tests.
"""

from __future__ import annotations

from typing import List

import numpy as np

from .graph import MIB, ComputationGraph, ProfiledNode, TensorRef

# Per-block sub-ops of the transformer generator, with activation MiB.
# One op per block ("score") sits above the 8 MiB activation cap so that
# roughly 1/12 of nodes are heavy and the p90 stays under the cap.
_BLOCK_OPS = [
    ("ln1", 2), ("q", 4), ("k", 4), ("v", 4), ("score", 12), ("attn", 6),
    ("proj", 4), ("ln2", 2), ("fc1", 6), ("gelu", 6), ("fc2", 4), ("add", 2),
]
_PARAM_OPS = {"q", "k", "v", "proj", "fc1", "fc2"}


def _chain_saved(node_id: str, size: int, index: int) -> tuple:
    return (TensorRef(id=f"{node_id}.a", size=size, producer=node_id,
                      last_backward_access=index),)


def gen_uniform(n: int, t_each_us: int = 1000, m_each_bytes: int = MIB) -> ComputationGraph:
    """Chain of n identical nodes; the 8-node default is the uni8 shape."""
    if n < 2:
        raise ValueError("need at least 2 nodes")
    t_f = t_each_us // 2
    t_b = t_each_us - t_f
    nodes: List[ProfiledNode] = []
    start = 0
    for i in range(n):
        nid = f"n{i}"
        nodes.append(ProfiledNode(
            id=nid,
            depth=i,
            fwd_start=start,
            t_f=t_f,
            t_b=t_b,
            m_a=m_each_bytes,
            m_p=0,
            m_d=0,
            saved=_chain_saved(nid, m_each_bytes, i) if m_each_bytes > 0 else (),
            consumers=(f"n{i + 1}",) if i + 1 < n else (),
        ))
        start += t_f
    return ComputationGraph.build(f"uniform{n}", nodes)


def gen_transformer_like(layers: int, seed: int, scale: float = 1.0) -> ComputationGraph:
    """Blocks of 12 sub-ops with time proportional to memory (+-15% jitter).

    The embedding output is consumed both by the first block and by the
    trailing head node, so its activation crosses every interior cut; that
    is the inevitable-communication pattern the partitioner must discount.
    """
    if layers < 2:
        raise ValueError("need at least 2 layers")
    rng = np.random.default_rng(seed)
    nodes: List[ProfiledNode] = []
    start = 0
    index = 0

    def add(nid: str, m_a: int, m_p: int, consumers: tuple) -> None:
        nonlocal start, index
        t = max(2, int(round(m_a / MIB * 100 * rng.uniform(0.85, 1.15))))
        t_f = t // 2
        nodes.append(ProfiledNode(
            id=nid,
            depth=index,
            fwd_start=start,
            t_f=t_f,
            t_b=t - t_f,
            m_a=m_a,
            m_p=m_p,
            m_d=0,
            saved=_chain_saved(nid, m_a, index),
            consumers=consumers,
        ))
        start += t_f
        index += 1

    first_op = f"b0.{_BLOCK_OPS[0][0]}"
    add("embed", int(4 * MIB * scale), 16 * MIB, (first_op, "head"))
    for b in range(layers):
        for k, (op, mib) in enumerate(_BLOCK_OPS):
            nid = f"b{b}.{op}"
            if k + 1 < len(_BLOCK_OPS):
                nxt = f"b{b}.{_BLOCK_OPS[k + 1][0]}"
            elif b + 1 < layers:
                nxt = f"b{b + 1}.{_BLOCK_OPS[0][0]}"
            else:
                nxt = "head"
            m_a = int(mib * MIB * scale)
            m_p = m_a // 2 if op in _PARAM_OPS else 0
            add(nid, m_a, m_p, (nxt,))
    add("head", int(2 * MIB * scale), 4 * MIB, ())
    return ComputationGraph.build(f"transformer{layers}_s{seed}", nodes)


def gen_cnn_like(layers: int, seed: int, scale: float = 1.0) -> ComputationGraph:
    """Chain alternating heavy-compute/low-memory and light/high nodes.

    Each layer is a conv node (long time, small activation) followed by an
    activation node (short time, large feature map), so node time and
    activation size anti-correlate. Every fourth layer ends in a
    pooling-like node that releases half of the feature map and steps the
    sizes of later layers down, leaving the memory front-heavy.
    """
    if layers < 2:
        raise ValueError("need at least 2 layers")
    rng = np.random.default_rng(seed)
    specs: List[tuple] = []  # (id, t_us, m_a, m_d, evictable)
    for i in range(layers):
        shrink = 0.88 ** (i // 4)
        conv_t = max(20, int(round(150 * (1 + 0.03 * i) * rng.uniform(0.9, 1.1))))
        conv_m = max(64 * 1024, int(MIB * scale * shrink))
        specs.append((f"conv{i}", conv_t, conv_m, 0, True))
        act_t = max(4, int(round(14 * rng.uniform(0.9, 1.1))))
        act_m = max(256 * 1024,
                    int(11 * MIB * scale * shrink * rng.uniform(0.95, 1.05)))
        specs.append((f"act{i}", act_t, act_m, 0, True))
        if i % 4 == 3:
            specs.append((f"pool{i}", max(4, act_t // 2), act_m // 4,
                          act_m // 2, False))

    nodes: List[ProfiledNode] = []
    start = 0
    for idx, (nid, t, m_a, m_d, evictable) in enumerate(specs):
        t_f = t // 2
        nxt = (specs[idx + 1][0],) if idx + 1 < len(specs) else ()
        nodes.append(ProfiledNode(
            id=nid,
            depth=idx,
            fwd_start=start,
            t_f=t_f,
            t_b=t - t_f,
            m_a=m_a,
            m_p=0,
            m_d=m_d,
            saved=_chain_saved(nid, m_a, idx) if evictable else (),
            consumers=nxt,
        ))
        start += t_f
    return ComputationGraph.build(f"cnn{layers}_s{seed}", nodes)
