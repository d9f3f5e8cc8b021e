"""Graph builders shared across the test modules."""

from typing import List, Optional, Sequence

from dawnplan import ComputationGraph, ProfiledNode, TensorRef

MIB = 1024 * 1024
GIB = 1024 * MIB


def chain(name: str, times: Sequence[int], mems: Sequence[int],
          fwd_times: Optional[Sequence[int]] = None,
          params: Optional[Sequence[int]] = None,
          releases: Optional[Sequence[int]] = None,
          saved_sizes: Optional[Sequence[int]] = None,
          saved_access: Optional[Sequence[int]] = None) -> ComputationGraph:
    """Linear chain with one optional saved tensor per node.

    saved_sizes[i] == 0 skips the tensor; saved_access defaults to the
    producing node's own index (its backward reads it last).
    """
    n = len(times)
    assert len(mems) == n
    nodes: List[ProfiledNode] = []
    for i in range(n):
        nid = f"n{i}"
        t_f = fwd_times[i] if fwd_times is not None else times[i] // 2
        saved = ()
        if saved_sizes is not None and saved_sizes[i] > 0:
            access = saved_access[i] if saved_access is not None else i
            saved = (TensorRef(id=f"{nid}.a", size=saved_sizes[i],
                               producer=nid, last_backward_access=access),)
        nodes.append(ProfiledNode(
            id=nid, depth=i, fwd_start=i,
            t_f=t_f, t_b=times[i] - t_f,
            m_a=mems[i],
            m_p=params[i] if params is not None else 0,
            m_d=releases[i] if releases is not None else 0,
            saved=saved,
            consumers=(f"n{i + 1}",) if i + 1 < n else (),
        ))
    return ComputationGraph.build(name, nodes)


def bare_uniform(n: int, t_us: int = 1000, m_bytes: int = MIB) -> ComputationGraph:
    """Uniform chain with no saved tensors (nothing for memopt to evict)."""
    return chain(f"bare{n}", [t_us] * n, [m_bytes] * n)


def saved_chain(times: Sequence[int], mems: Sequence[int],
                name: str = "sc") -> ComputationGraph:
    """Chain where every node saves its activation until its own backward."""
    return chain(name, times, mems, saved_sizes=list(mems))


def random_chain(rng) -> ComputationGraph:
    """Seeded random chain in the regime where all four premise flags hold."""
    n = int(rng.integers(12, 25))
    times = [int(rng.integers(500, 1501)) for _ in range(n)]
    mems = [int(rng.integers(int(0.9 * MIB), int(1.1 * MIB) + 1)) for _ in range(n)]
    return chain(f"chain{n}", times, mems, saved_sizes=mems)


def skew9() -> ComputationGraph:
    """Nine-node chain with a steep tail and two fat early tensors.

    Saved tensors stay live until the next node's backward, so the two
    multi-megabyte activations can be swapped or rebuilt while the tiny
    boundary tensors keep transfer times negligible at low bandwidth.
    """
    times = [29104, 47786, 30000, 29914, 53850, 53851, 2385, 138000, 145890]
    mems = [6 * MIB, 16 * MIB, 64 * 1024, 2 * MIB, 4 * MIB, 4 * MIB,
            64 * 1024, 64 * 1024, 8 * MIB]
    fwd = [t // 2 for t in times]
    fwd[1] = 30000
    saved = list(mems[:8]) + [0]
    access = [i + 1 for i in range(9)]
    return chain("skew9", times, mems, fwd_times=fwd,
                 saved_sizes=saved, saved_access=access)


def diamond5() -> ComputationGraph:
    """a fans out to b and c, both feed d, then e; used for cut adjustment."""
    mk = ProfiledNode
    a = mk(id="a", depth=0, fwd_start=0, t_f=50, t_b=50, m_a=MIB, m_p=0, m_d=0,
           consumers=("b", "c"))
    b = mk(id="b", depth=1, fwd_start=1, t_f=50, t_b=50, m_a=MIB, m_p=0, m_d=0,
           consumers=("d",))
    c = mk(id="c", depth=1, fwd_start=2, t_f=50, t_b=50, m_a=MIB, m_p=0, m_d=0,
           consumers=("d",))
    d = mk(id="d", depth=2, fwd_start=3, t_f=50, t_b=50, m_a=MIB, m_p=0, m_d=0,
           consumers=("e",))
    e = mk(id="e", depth=3, fwd_start=4, t_f=50, t_b=50, m_a=MIB, m_p=0, m_d=0)
    return ComputationGraph.build("diamond5", [a, b, c, d, e])
