"""Profiled computation graphs: the data model every other module consumes.

A profile is a collection of fine-grained nodes, each carrying forward and
backward compute times (integer microseconds), memory deltas (integer
bytes), the tensors it keeps alive for the backward pass, and data-flow
edges. Nodes are held in a canonical order (depth ascending, then forward
start time, then id) which is guaranteed to be a topological order of the
data-flow edges.

All times are integer microseconds and all sizes integer bytes, so series
arithmetic is exact and plans serialize reproducibly.
"""

from __future__ import annotations

import hashlib
import json
from collections import namedtuple
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

PROFILE_SCHEMA = 1
MIB = 1024 * 1024

_NODE_KEYS = {
    "id", "depth", "fwd_start_us", "t_f_us", "t_b_us",
    "m_a_bytes", "m_p_bytes", "m_d_bytes", "consumers", "saved",
}
_SAVED_KEYS = {"tensor_id", "size_bytes", "last_backward_access"}


class ProfileParseError(ValueError):
    """File-level problem: bad JSON, wrong schema version, unknown fields."""


class ProfileValidationError(ValueError):
    """Graph-level problem; the message names the offending node."""


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def transfer_time_us(size_bytes: int, bandwidth_bps: int) -> int:
    """Time to move size_bytes over a bandwidth_bps link, rounded up to a microsecond."""
    if bandwidth_bps <= 0:
        raise ValueError("bandwidth must be positive")
    return ceil_div(size_bytes * 1_000_000, bandwidth_bps)


@dataclass(frozen=True)
class TensorRef:
    """A tensor kept alive for the backward pass.

    producer is the id of the node that materialized the tensor;
    last_backward_access is the canonical index of the node whose backward
    pass last reads it. The access index is never smaller than the
    producer's index.
    """

    id: str
    size: int
    producer: str
    last_backward_access: int


@dataclass(frozen=True)
class ProfiledNode:
    """One profiled operation.

    t_f / t_b are forward / backward times in microseconds. m_a is the
    activation memory the node materializes, m_p its parameter bytes and
    m_d the bytes it releases once its forward pass retires.
    """

    id: str
    depth: int
    fwd_start: int
    t_f: int
    t_b: int
    m_a: int
    m_p: int
    m_d: int
    saved: Tuple[TensorRef, ...] = ()
    consumers: Tuple[str, ...] = ()


PrefixPoint = namedtuple("PrefixPoint", ["cum_time", "cur_mem", "peak_mem"])


class _RangeMax:
    """Sparse table answering max-with-first-index queries over a fixed array."""

    def __init__(self, values: Sequence[int]):
        # Store (value, -index) so ties resolve to the earliest position.
        row = [(v, -i) for i, v in enumerate(values)]
        self.table = [row]
        k = 1
        while (1 << k) <= len(row):
            prev = self.table[-1]
            step = 1 << (k - 1)
            self.table.append([max(prev[i], prev[i + step]) for i in range(len(row) - (1 << k) + 1)])
            k += 1

    def query(self, i: int, j: int) -> Tuple[int, int]:
        """Max value and its first index on the inclusive range [i, j]."""
        k = (j - i + 1).bit_length() - 1
        a = self.table[k][i]
        b = self.table[k][j - (1 << k) + 1]
        v, neg = max(a, b)
        return v, -neg


@dataclass(frozen=True)
class ComputationGraph:
    """An immutable, canonically ordered profile.

    Instances are built through build() or load_profile(), both of which
    sort and validate. Derived series are cached on first use; the object
    is safe to share across concurrent readers.
    """

    name: str
    nodes: Tuple[ProfiledNode, ...]
    total_param_bytes: int

    @staticmethod
    def build(name: str, nodes: Iterable[ProfiledNode]) -> "ComputationGraph":
        ordered = tuple(sorted(nodes, key=lambda n: (n.depth, n.fwd_start, n.id)))
        _validate(ordered)
        total = sum(n.m_p for n in ordered)
        return ComputationGraph(name=name, nodes=ordered, total_param_bytes=total)

    def __len__(self) -> int:
        return len(self.nodes)

    # -- id/index bookkeeping -------------------------------------------------

    @cached_property
    def index_by_id(self) -> dict:
        return {n.id: i for i, n in enumerate(self.nodes)}

    def index_of(self, node_id: str) -> int:
        return self.index_by_id[node_id]

    @cached_property
    def edges(self) -> Tuple[Tuple[int, int], ...]:
        """Data-flow edges as (producer index, consumer index) pairs."""
        idx = self.index_by_id
        out = []
        for i, n in enumerate(self.nodes):
            for c in n.consumers:
                out.append((i, idx[c]))
        out.sort()
        return tuple(out)

    @cached_property
    def predecessors(self) -> Tuple[Tuple[int, ...], ...]:
        preds: List[List[int]] = [[] for _ in self.nodes]
        for u, v in self.edges:
            preds[v].append(u)
        return tuple(tuple(p) for p in preds)

    @cached_property
    def self_saved_ids(self) -> Tuple[Tuple[str, ...], ...]:
        """Per node: ids of saved tensors the node itself produced."""
        return tuple(
            tuple(t.id for t in n.saved if t.producer == n.id) for n in self.nodes
        )

    @cached_property
    def tensors_by_id(self) -> dict:
        out = {}
        for n in self.nodes:
            for t in n.saved:
                out[t.id] = t
        return out

    # -- prefix series ---------------------------------------------------------

    @cached_property
    def _prefix_time(self) -> Tuple[int, ...]:
        acc = [0]
        for n in self.nodes:
            acc.append(acc[-1] + n.t_f + n.t_b)
        return tuple(acc)

    @cached_property
    def _prefix_fwd(self) -> Tuple[int, ...]:
        acc = [0]
        for n in self.nodes:
            acc.append(acc[-1] + n.t_f)
        return tuple(acc)

    @cached_property
    def _prefix_params(self) -> Tuple[int, ...]:
        acc = [0]
        for n in self.nodes:
            acc.append(acc[-1] + n.m_p)
        return tuple(acc)

    @cached_property
    def _prefix_mem(self) -> Tuple[int, ...]:
        # Net resident bytes after each node retires (activations + params - releases).
        acc = [0]
        for n in self.nodes:
            acc.append(acc[-1] + n.m_a + n.m_p - n.m_d)
        return tuple(acc)

    @cached_property
    def _level(self) -> Tuple[int, ...]:
        # Resident bytes right after node k allocates, before it releases m_d.
        return tuple(
            self._prefix_mem[k] + self.nodes[k].m_a + self.nodes[k].m_p
            for k in range(len(self.nodes))
        )

    @cached_property
    def _level_max(self) -> _RangeMax:
        return _RangeMax(self._level)

    @cached_property
    def _prefix_act(self) -> Tuple[int, ...]:
        acc = [0]
        for n in self.nodes:
            acc.append(acc[-1] + n.m_a - n.m_d)
        return tuple(acc)

    @cached_property
    def _act_level(self) -> Tuple[int, ...]:
        return tuple(
            self._prefix_act[k] + self.nodes[k].m_a for k in range(len(self.nodes))
        )

    @cached_property
    def _act_level_max(self) -> _RangeMax:
        return _RangeMax(self._act_level)

    @cached_property
    def peak_memory(self) -> int:
        return self.segment_peak(0, len(self.nodes) - 1)

    # -- segment queries (inclusive index ranges) ------------------------------

    def segment_time(self, lo: int, hi: int) -> int:
        return self._prefix_time[hi + 1] - self._prefix_time[lo]

    def segment_fwd_time(self, lo: int, hi: int) -> int:
        return self._prefix_fwd[hi + 1] - self._prefix_fwd[lo]

    def segment_bwd_time(self, lo: int, hi: int) -> int:
        return self.segment_time(lo, hi) - self.segment_fwd_time(lo, hi)

    def segment_params(self, lo: int, hi: int) -> int:
        return self._prefix_params[hi + 1] - self._prefix_params[lo]

    def segment_peak(self, lo: int, hi: int) -> int:
        """Peak resident bytes of the segment run in isolation from zero."""
        v, _ = self._level_max.query(lo, hi)
        return v - self._prefix_mem[lo]

    def segment_peak_index(self, lo: int, hi: int) -> int:
        """First node index at which the segment peak is attained."""
        _, idx = self._level_max.query(lo, hi)
        return idx

    def segment_act_peak(self, lo: int, hi: int) -> int:
        """Like segment_peak but counting activation bytes only."""
        v, _ = self._act_level_max.query(lo, hi)
        return v - self._prefix_act[lo]


def _type_int(value) -> bool:
    return type(value) is int


def _validate(nodes: Tuple[ProfiledNode, ...]) -> None:
    seen = set()
    for n in nodes:
        if not isinstance(n.id, str) or not n.id:
            raise ProfileValidationError(f"node {n.id!r}: id must be a nonempty string")
        if n.id in seen:
            raise ProfileValidationError(f"node '{n.id}': duplicate id")
        seen.add(n.id)

    index = {n.id: i for i, n in enumerate(nodes)}

    for n in nodes:
        for label, v in (
            ("depth", n.depth), ("fwd_start", n.fwd_start), ("t_f", n.t_f),
            ("t_b", n.t_b), ("m_a", n.m_a), ("m_p", n.m_p), ("m_d", n.m_d),
        ):
            if v < 0:
                raise ProfileValidationError(
                    f"node '{n.id}': negative quantity {label}={v}"
                )
        for c in n.consumers:
            if c not in index:
                raise ProfileValidationError(
                    f"node '{n.id}': dangling consumer '{c}'"
                )

    # Recompute longest-path depth over the consumer relation. This both
    # detects cycles and pins the declared depths, which is what makes the
    # canonical order a topological order.
    preds: List[List[int]] = [[] for _ in nodes]
    succs: List[List[int]] = [[] for _ in nodes]
    indeg = [0] * len(nodes)
    for i, n in enumerate(nodes):
        for c in n.consumers:
            j = index[c]
            succs[i].append(j)
            preds[j].append(i)
            indeg[j] += 1
    depth = [0] * len(nodes)
    ready = [i for i, d in enumerate(indeg) if d == 0]
    done = 0
    while ready:
        i = ready.pop()
        done += 1
        for j in succs[i]:
            depth[j] = max(depth[j], depth[i] + 1)
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(j)
    if done != len(nodes):
        stuck = min(n.id for i, n in enumerate(nodes) if indeg[i] > 0)
        raise ProfileValidationError(f"node '{stuck}': cycle in consumer relation")
    for i, n in enumerate(nodes):
        if n.depth != depth[i]:
            raise ProfileValidationError(
                f"node '{n.id}': depth {n.depth} does not match longest path {depth[i]}"
            )

    tensor_ids = set()
    for i, n in enumerate(nodes):
        for t in n.saved:
            if t.id in tensor_ids:
                raise ProfileValidationError(
                    f"node '{n.id}': duplicate tensor id '{t.id}'"
                )
            tensor_ids.add(t.id)
            if t.size <= 0:
                raise ProfileValidationError(
                    f"node '{n.id}': tensor '{t.id}' size must be positive"
                )
            if t.producer not in index:
                raise ProfileValidationError(
                    f"node '{n.id}': tensor '{t.id}' producer '{t.producer}' not in graph"
                )
            if not (0 <= t.last_backward_access < len(nodes)):
                raise ProfileValidationError(
                    f"node '{n.id}': tensor '{t.id}' backward access index out of range"
                )
            if t.last_backward_access < index[t.producer]:
                raise ProfileValidationError(
                    f"node '{n.id}': tensor '{t.id}' accessed before its producer"
                )


# -- profile files -------------------------------------------------------------


def _parse_node(raw: dict) -> dict:
    if not isinstance(raw, dict):
        raise ProfileParseError("node entries must be objects")
    unknown = set(raw) - _NODE_KEYS
    if unknown:
        raise ProfileParseError(f"unknown node field(s): {sorted(unknown)}")
    missing = _NODE_KEYS - set(raw)
    if missing:
        raise ProfileParseError(f"missing node field(s): {sorted(missing)}")
    if not isinstance(raw["id"], str):
        raise ProfileParseError("node id must be a string")
    for key in ("depth", "fwd_start_us", "t_f_us", "t_b_us",
                "m_a_bytes", "m_p_bytes", "m_d_bytes"):
        if not _type_int(raw[key]):
            raise ProfileParseError(f"node '{raw['id']}': field {key} must be an integer")
    if not isinstance(raw["consumers"], list) or not all(isinstance(c, str) for c in raw["consumers"]):
        raise ProfileParseError(f"node '{raw['id']}': consumers must be a list of node ids")
    if not isinstance(raw["saved"], list):
        raise ProfileParseError(f"node '{raw['id']}': saved must be a list")
    for s in raw["saved"]:
        if not isinstance(s, dict):
            raise ProfileParseError(f"node '{raw['id']}': saved entries must be objects")
        unknown = set(s) - _SAVED_KEYS
        if unknown:
            raise ProfileParseError(
                f"node '{raw['id']}': unknown saved field(s): {sorted(unknown)}"
            )
        missing = _SAVED_KEYS - set(s)
        if missing:
            raise ProfileParseError(
                f"node '{raw['id']}': missing saved field(s): {sorted(missing)}"
            )
        if not isinstance(s["tensor_id"], str) or not _type_int(s["size_bytes"]) \
                or not isinstance(s["last_backward_access"], str):
            raise ProfileParseError(f"node '{raw['id']}': malformed saved entry")
    return raw


def load_profile(path) -> ComputationGraph:
    """Read and validate a profile file, returning the canonical graph.

    The on-disk node order does not matter; nodes are re-sorted into
    canonical order and all cross-references resolved afterwards.
    """
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ProfileParseError(f"cannot read {path}: {e}") from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ProfileParseError(f"{path}: not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ProfileParseError("profile must be a JSON object")
    unknown = set(doc) - {"schema", "name", "nodes"}
    if unknown:
        raise ProfileParseError(f"unknown top-level field(s): {sorted(unknown)}")
    if doc.get("schema") != PROFILE_SCHEMA:
        raise ProfileParseError(f"schema must be {PROFILE_SCHEMA}")
    if not isinstance(doc.get("name"), str):
        raise ProfileParseError("name must be a string")
    if not isinstance(doc.get("nodes"), list) or not doc["nodes"]:
        raise ProfileParseError("nodes must be a nonempty list")

    raws = [_parse_node(r) for r in doc["nodes"]]
    order = sorted(range(len(raws)),
                   key=lambda i: (raws[i]["depth"], raws[i]["fwd_start_us"], raws[i]["id"]))
    index = {raws[i]["id"]: pos for pos, i in enumerate(order)}
    if len(index) != len(raws):
        dupes = sorted({r["id"] for r in raws if sum(x["id"] == r["id"] for x in raws) > 1})
        raise ProfileValidationError(f"node '{dupes[0]}': duplicate id")

    nodes = []
    for i in order:
        raw = raws[i]
        saved = []
        for s in raw["saved"]:
            access = s["last_backward_access"]
            if access not in index:
                raise ProfileValidationError(
                    f"node '{raw['id']}': tensor '{s['tensor_id']}' backward access "
                    f"'{access}' not in graph"
                )
            saved.append(TensorRef(
                id=s["tensor_id"],
                size=s["size_bytes"],
                producer=raw["id"],
                last_backward_access=index[access],
            ))
        nodes.append(ProfiledNode(
            id=raw["id"],
            depth=raw["depth"],
            fwd_start=raw["fwd_start_us"],
            t_f=raw["t_f_us"],
            t_b=raw["t_b_us"],
            m_a=raw["m_a_bytes"],
            m_p=raw["m_p_bytes"],
            m_d=raw["m_d_bytes"],
            saved=tuple(saved),
            consumers=tuple(raw["consumers"]),
        ))
    return ComputationGraph.build(doc["name"], nodes)


def profile_doc(g: ComputationGraph) -> dict:
    """Serializable form of a graph. Inverse of load_profile for graphs
    whose saved tensors are produced by the node that saves them."""
    nodes = []
    for n in g.nodes:
        saved = []
        for t in n.saved:
            if t.producer != n.id:
                raise ValueError(
                    f"tensor '{t.id}' saved by '{n.id}' but produced by "
                    f"'{t.producer}'; profile files cannot express this"
                )
            saved.append({
                "tensor_id": t.id,
                "size_bytes": t.size,
                "last_backward_access": g.nodes[t.last_backward_access].id,
            })
        nodes.append({
            "id": n.id,
            "depth": n.depth,
            "fwd_start_us": n.fwd_start,
            "t_f_us": n.t_f,
            "t_b_us": n.t_b,
            "m_a_bytes": n.m_a,
            "m_p_bytes": n.m_p,
            "m_d_bytes": n.m_d,
            "consumers": list(n.consumers),
            "saved": saved,
        })
    return {"schema": PROFILE_SCHEMA, "name": g.name, "nodes": nodes}


def save_profile(g: ComputationGraph, path) -> None:
    Path(path).write_text(json.dumps(profile_doc(g), indent=2, sort_keys=True) + "\n")


def canonical_hash(g: ComputationGraph) -> str:
    blob = json.dumps(profile_doc(g), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- series and distribution summaries ------------------------------------------


def cumulative_series(g: ComputationGraph) -> List[PrefixPoint]:
    """Per-prefix cumulative compute time, resident memory and running peak.

    Memory follows allocate-then-release accounting: each node first adds
    m_a + m_p, the running peak is taken, then m_d is released.
    """
    out = []
    cum_t = 0
    cur = 0
    peak = 0
    for n in g.nodes:
        cum_t += n.t_f + n.t_b
        cur += n.m_a + n.m_p
        peak = max(peak, cur)
        cur -= n.m_d
        out.append(PrefixPoint(cum_t, cur, peak))
    return out


def memory_cdf(g: ComputationGraph) -> dict:
    """Quantile table of per-node activation bytes and net consumed bytes."""
    acts = np.array([n.m_a for n in g.nodes], dtype=np.int64)
    consumed = np.array([n.m_a + n.m_p - n.m_d for n in g.nodes], dtype=np.int64)

    def table(arr):
        qs = {f"p{q}": int(np.percentile(arr, q, method="lower")) for q in (50, 80, 90, 99)}
        qs["max"] = int(arr.max())
        return qs

    return {"activation": table(acts), "consumed": table(consumed)}
