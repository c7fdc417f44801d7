"""Routing traces, the load imbalance score and expert gap reporting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyTraceError

INSTANCE = "instance"
ORIGIN = "origin"


@dataclass
class LayerTrace:
    """Token counts for one MoE layer.

    ``instance_counts[i]`` counts dispatches to instance ``i``; ``origins`` and
    ``is_replica`` describe the instance topology the counts refer to.
    """

    origins: list[int]
    is_replica: list[bool]
    m: int
    k: int
    n: int = 0
    instance_counts: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.instance_counts is None:
            self.instance_counts = np.zeros(len(self.origins), dtype=np.int64)
        else:
            self.instance_counts = np.asarray(self.instance_counts, dtype=np.int64)
        if len(self.instance_counts) != len(self.origins) or len(self.is_replica) != len(self.origins):
            raise ValueError("instance counts and topology lengths differ")

    @property
    def origin_counts(self) -> np.ndarray:
        out = np.zeros(self.m, dtype=np.int64)
        np.add.at(out, np.asarray(self.origins, dtype=np.intp), self.instance_counts)
        return out

    @property
    def instance_total(self) -> int:
        return len(self.origins)

    def topology(self):
        return (tuple(self.origins), tuple(self.is_replica), self.m, self.k)

    def __eq__(self, other):
        if not isinstance(other, LayerTrace):
            return NotImplemented
        return (self.topology() == other.topology() and self.n == other.n
                and np.array_equal(self.instance_counts, other.instance_counts))

    def copy(self) -> "LayerTrace":
        return LayerTrace(list(self.origins), list(self.is_replica), self.m, self.k,
                          self.n, self.instance_counts.copy())


@dataclass
class RoutingTrace:
    layers: list[LayerTrace]

    @classmethod
    def for_model(cls, model) -> "RoutingTrace":
        return cls([LayerTrace([inst.origin_id for inst in layer.instances],
                               [inst.is_replica for inst in layer.instances],
                               layer.m, layer.top_k)
                    for layer in model.layers])

    @property
    def n(self) -> int:
        return self.layers[0].n if self.layers else 0

    def copy(self) -> "RoutingTrace":
        return RoutingTrace([lt.copy() for lt in self.layers])

    def __eq__(self, other):
        if not isinstance(other, RoutingTrace) or len(self.layers) != len(other.layers):
            return NotImplemented if not isinstance(other, RoutingTrace) else False
        return all(a == b for a, b in zip(self.layers, other.layers))


def lis_from_counts(counts, n: int, k: int, m: int | None = None) -> float:
    """m * max(counts) / (n * k); m defaults to the number of counts."""
    counts = np.asarray(counts)
    if n <= 0:
        raise EmptyTraceError("load imbalance is undefined for zero tokens")
    if m is None:
        m = len(counts)
    return m * int(counts.max()) / (n * k)


def lis(trace: RoutingTrace, layer: int, granularity: str = INSTANCE) -> float:
    lt = trace.layers[layer]
    if lt.n == 0:
        raise EmptyTraceError(f"layer {layer} has observed no tokens")
    if granularity == ORIGIN:
        return lis_from_counts(lt.origin_counts, lt.n, lt.k, lt.m)
    if granularity == INSTANCE:
        return lis_from_counts(lt.instance_counts, lt.n, lt.k, lt.instance_total)
    raise ValueError(f"unknown granularity {granularity!r}")


def lis_all(trace: RoutingTrace, granularity: str = INSTANCE) -> list[float]:
    return [lis(trace, i, granularity) for i in range(len(trace.layers))]


def merge_traces(a: RoutingTrace, b: RoutingTrace) -> RoutingTrace:
    if len(a.layers) != len(b.layers):
        raise ValueError(f"layer count mismatch: {len(a.layers)} vs {len(b.layers)}")
    out = []
    for i, (x, y) in enumerate(zip(a.layers, b.layers)):
        if x.topology() != y.topology():
            raise ValueError(f"layer {i}: instance topology differs between traces")
        out.append(LayerTrace(list(x.origins), list(x.is_replica), x.m, x.k,
                              x.n + y.n, x.instance_counts + y.instance_counts))
    return RoutingTrace(out)


@dataclass
class LayerGaps:
    sorted_counts: np.ndarray
    order: np.ndarray
    gaps: np.ndarray
    normalized: np.ndarray
    ideal_load: float


def gap_matrix(trace: RoutingTrace) -> list[LayerGaps]:
    """Per layer: descending instance counts, adjacent gaps, gaps / ideal load."""
    out = []
    for i, lt in enumerate(trace.layers):
        if lt.n == 0:
            raise EmptyTraceError(f"layer {i} has observed no tokens")
        order = np.argsort(-lt.instance_counts, kind="stable")
        c = lt.instance_counts[order]
        gaps = c[:-1] - c[1:]
        ideal = lt.n * lt.k / lt.instance_total
        out.append(LayerGaps(c, order, gaps, gaps / ideal, ideal))
    return out
