"""Toy sparse MoE forward engine with replica-aware dispatch.

Experts are single dense matrices. A router scores base experts only; replicas
never appear in routing decisions and are reached through round-robin
dispatch (original first) whenever their origin is selected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .metrics import LayerTrace, RoutingTrace
from .numerics import Matrix, as_array, matmul_array, softmax_rows, topk_rows
from .quantization import PrecisionScheme, QuantizedMatrix, dequantize_array


@dataclass(eq=False)
class ExpertInstance:
    origin_id: int
    weights: QuantizedMatrix
    is_replica: bool = False
    _dense: np.ndarray | None = field(default=None, init=False, repr=False)

    def dense(self) -> np.ndarray:
        if self._dense is None:
            d = dequantize_array(self.weights)
            d.flags.writeable = False
            self._dense = d
        return self._dense

    def __eq__(self, other):
        if not isinstance(other, ExpertInstance):
            return NotImplemented
        return (self.origin_id, self.is_replica) == (other.origin_id, other.is_replica) and self.weights == other.weights


@dataclass(eq=False)
class Router:
    weights: Matrix
    bias: np.ndarray | None = None

    def __post_init__(self):
        m = self.weights.rows
        b = np.zeros(m) if self.bias is None else np.array(self.bias, dtype=np.float64)
        if b.shape != (m,) or not np.all(np.isfinite(b)):
            raise ShapeError(f"router bias must hold {m} finite values")
        b.flags.writeable = False
        self.bias = b

    def logits(self, x: np.ndarray) -> np.ndarray:
        return matmul_array(x, self.weights.array.T) + self.bias

    def __eq__(self, other):
        if not isinstance(other, Router):
            return NotImplemented
        return self.weights == other.weights and bool(np.array_equal(self.bias, other.bias))


@dataclass(eq=False)
class MoeLayer:
    router: Router
    top_k: int
    instances: list[ExpertInstance]
    dispatch_counter: list[int] = field(default_factory=list)

    def __post_init__(self):
        m = self.m
        if not 1 <= self.top_k < m:
            raise ValueError(f"top_k must satisfy 1 <= k < m, got k={self.top_k}, m={m}")
        base = sorted(inst.origin_id for inst in self.instances if not inst.is_replica)
        if base != list(range(m)):
            raise ValueError("every base expert must have exactly one non-replica instance")
        seen = set()
        for inst in self.instances:
            if not 0 <= inst.origin_id < m:
                raise ValueError(f"instance origin {inst.origin_id} outside [0, {m})")
            if inst.is_replica:
                if inst.origin_id in seen:
                    raise ValueError(f"expert {inst.origin_id} has more than one replica")
                seen.add(inst.origin_id)
            if inst.weights.shape != self.instances[0].weights.shape:
                raise ShapeError("all experts in a layer must share one weight shape")
        if self.instances[0].weights.cols != self.router.weights.cols:
            raise ShapeError(f"router expects C_in={self.router.weights.cols}, experts have {self.instances[0].weights.cols}")
        if not self.dispatch_counter:
            self.dispatch_counter = [0] * m
        self._refresh_index()

    def _refresh_index(self):
        self._primary = [0] * self.m
        self._replica = [None] * self.m
        for i, inst in enumerate(self.instances):
            if inst.is_replica:
                self._replica[inst.origin_id] = i
            else:
                self._primary[inst.origin_id] = i

    @property
    def m(self) -> int:
        return self.router.weights.rows

    @property
    def c_in(self) -> int:
        return self.instances[0].weights.cols

    @property
    def c_out(self) -> int:
        return self.instances[0].weights.rows

    @property
    def has_replicas(self) -> bool:
        return any(inst.is_replica for inst in self.instances)

    @property
    def base_scheme(self) -> PrecisionScheme:
        return max((inst.weights.scheme for inst in self.instances if not inst.is_replica),
                   key=lambda s: s.bits)

    def primary_index(self, origin: int) -> int:
        return self._primary[origin]

    def replica_index(self, origin: int) -> int | None:
        return self._replica[origin]

    def reset_dispatch(self):
        self.dispatch_counter = [0] * self.m

    def __eq__(self, other):
        if not isinstance(other, MoeLayer):
            return NotImplemented
        return (self.router == other.router and self.top_k == other.top_k
                and len(self.instances) == len(other.instances)
                and all(a == b for a, b in zip(self.instances, other.instances)))


@dataclass(eq=False)
class MoeModel:
    layers: list[MoeLayer]
    name: str = "moe"
    seed: int = 0

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a model needs at least one layer")
        for i in range(1, len(self.layers)):
            if self.layers[i - 1].c_out != self.layers[i].c_in:
                raise ShapeError(f"layer {i - 1} outputs {self.layers[i - 1].c_out} features "
                                 f"but layer {i} expects {self.layers[i].c_in}")

    @property
    def p(self) -> int:
        return len(self.layers)

    @property
    def d_in(self) -> int:
        return self.layers[0].c_in

    @property
    def d_out(self) -> int:
        return self.layers[-1].c_out

    def clone(self) -> "MoeModel":
        """Structural copy; weight payloads are immutable and shared."""
        layers = [MoeLayer(Router(l.router.weights, l.router.bias), l.top_k,
                           [ExpertInstance(i.origin_id, i.weights, i.is_replica) for i in l.instances])
                  for l in self.layers]
        return MoeModel(layers, self.name, self.seed)

    def __eq__(self, other):
        if not isinstance(other, MoeModel):
            return NotImplemented
        return (self.name, self.seed, len(self.layers)) == (other.name, other.seed, len(other.layers)) and \
            all(a == b for a, b in zip(self.layers, other.layers))


def _route_batch(layer: MoeLayer, x: np.ndarray):
    probs = softmax_rows(layer.router.logits(x))
    selected = topk_rows(probs, layer.top_k)
    picked = np.take_along_axis(probs, selected, axis=1)
    total = picked[:, 0].copy()
    for s in range(1, picked.shape[1]):
        total += picked[:, s]
    return selected, picked / total[:, None]


def route_token(layer: MoeLayer, x) -> tuple[list[int], list[float]]:
    v = as_array(x).reshape(-1)
    if v.size != layer.c_in:
        raise ShapeError(f"token has {v.size} features, layer expects {layer.c_in}")
    selected, gates = _route_batch(layer, v[None, :])
    return selected[0].tolist(), gates[0].tolist()


def dispatch_instance(layer: MoeLayer, origin: int) -> int:
    if not 0 <= origin < layer.m:
        raise ValueError(f"unknown expert {origin}; layer has {layer.m}")
    rep = layer.replica_index(origin)
    count = layer.dispatch_counter[origin]
    layer.dispatch_counter[origin] = count + 1
    if rep is None or count % 2 == 0:
        return layer.primary_index(origin)
    return rep


def _dispatch_batch(layer: MoeLayer, selected: np.ndarray) -> np.ndarray:
    """Instance index per (token, slot), equal to calling dispatch_instance in row order."""
    inst = np.empty_like(selected)
    for origin in range(layer.m):
        hit = selected == origin
        inst[hit] = layer.primary_index(origin)
        rep = layer.replica_index(origin)
        n_hits = int(hit.sum())
        start = layer.dispatch_counter[origin]
        if rep is not None and n_hits:
            # one hit per token at most, so row-major order is arrival order
            seq = start + np.arange(n_hits)
            rows, cols = np.nonzero(hit)
            odd = seq % 2 == 1
            inst[rows[odd], cols[odd]] = rep
        layer.dispatch_counter[origin] = start + n_hits
    return inst


def _record(trace: LayerTrace | None, inst: np.ndarray, n_tokens: int):
    if trace is None:
        return
    trace.n += n_tokens
    np.add.at(trace.instance_counts, inst.ravel(), 1)


def _layer_batch(layer: MoeLayer, x: np.ndarray, trace: LayerTrace | None = None):
    if x.shape[1] != layer.c_in:
        raise ShapeError(f"input has {x.shape[1]} features, layer expects {layer.c_in}")
    selected, gates = _route_batch(layer, x)
    inst = _dispatch_batch(layer, selected)
    out = np.zeros((x.shape[0], layer.c_out))
    for slot in range(layer.top_k):
        for i in np.unique(inst[:, slot]):
            rows = np.nonzero(inst[:, slot] == i)[0]
            y = matmul_array(x[rows], layer.instances[i].dense().T)
            out[rows] += gates[rows, slot, None] * y
    _record(trace, inst, x.shape[0])
    return out, selected, inst


def forward_layer(layer: MoeLayer, x, trace: LayerTrace | None = None) -> np.ndarray:
    """One token through one layer; counts land in ``trace`` when given."""
    v = as_array(x).reshape(-1)
    if v.size != layer.c_in:
        raise ShapeError(f"token has {v.size} features, layer expects {layer.c_in}")
    selected, gates = route_token(layer, v)
    out = np.zeros(layer.c_out)
    picked = []
    for e, g in zip(selected, gates):
        i = dispatch_instance(layer, e)
        picked.append(i)
        out += g * matmul_array(v[None, :], layer.instances[i].dense().T)[0]
    _record(trace, np.asarray(picked), 1)
    return out


def run_layers(model: MoeModel, tokens, trace: RoutingTrace | None = None, capture: list | None = None) -> np.ndarray:
    """Batched forward pass. ``capture`` receives (inputs, selected, instances) per layer."""
    x = as_array(tokens)
    if x.ndim != 2 or x.shape[1] != model.d_in:
        raise ShapeError(f"tokens are {x.shape[0]}x{x.shape[1] if x.ndim == 2 else '?'}, "
                         f"model expects {model.d_in} columns")
    for layer in model.layers:
        layer.reset_dispatch()
    for li, layer in enumerate(model.layers):
        lt = trace.layers[li] if trace is not None else None
        out, selected, inst = _layer_batch(layer, x, lt)
        if capture is not None:
            capture.append((x, selected, inst))
        x = out
    return x


def forward_model(model: MoeModel, tokens, trace: RoutingTrace | None = None) -> Matrix:
    return Matrix(run_layers(model, tokens, trace).reshape(-1, model.d_out))
