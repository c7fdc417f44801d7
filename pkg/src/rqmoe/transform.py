"""Replicate-and-Quantize plans, their application and memory accounting."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .analysis import DISPATCHED, ImportanceReport, find_heavy_hitters, wanda_expert_scores
from .errors import StateError
from .model import ExpertInstance, MoeLayer, MoeModel, Router
from .quantization import (PrecisionScheme, dequantize_array, quantize,
                           scale_overhead_bytes, storage_bytes)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LayerPlan:
    replicate_id: int
    quantize_id: int
    replica_scheme: PrecisionScheme
    quant_scheme: PrecisionScheme


@dataclass
class RQPlan:
    layers: list[LayerPlan]
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "layers": [{"layer": i, "replicate_id": lp.replicate_id, "quantize_id": lp.quantize_id,
                        "replica_scheme": lp.replica_scheme.value, "quant_scheme": lp.quant_scheme.value}
                       for i, lp in enumerate(self.layers)],
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RQPlan":
        rows = sorted(d["layers"], key=lambda r: r["layer"])
        return cls([LayerPlan(int(r["replicate_id"]), int(r["quantize_id"]),
                              PrecisionScheme.parse(r["replica_scheme"]),
                              PrecisionScheme.parse(r["quant_scheme"])) for r in rows],
                   dict(d.get("provenance", {})))


def build_plan(model: MoeModel, calib, sparsity: float = 0.5,
               schemes=(PrecisionScheme.HALF16, PrecisionScheme.HALF16),
               importance: ImportanceReport | None = None, activations: str = DISPATCHED) -> RQPlan:
    """Heavy-hitters and less-important experts from one calibration set."""
    replica_scheme, quant_scheme = (PrecisionScheme.parse(s) for s in schemes)
    heavy = find_heavy_hitters(model, calib)
    if importance is None:
        importance = wanda_expert_scores(model, calib, sparsity, activations)
    layers = [LayerPlan(re, qe, replica_scheme, quant_scheme)
              for re, qe in zip(heavy, importance.chosen)]
    return RQPlan(layers, {"sparsity": sparsity})


def _rebuild_layer(layer: MoeLayer, replicate_id, quantize_id, replica_scheme, quant_scheme) -> MoeLayer:
    base = [inst for inst in layer.instances if not inst.is_replica]
    instances = [ExpertInstance(inst.origin_id, inst.weights) for inst in base]
    slot = {inst.origin_id: i for i, inst in enumerate(instances)}
    if replicate_id is not None:
        src = instances[slot[replicate_id]]
        # replica comes from the weights before any in-place quantization
        instances.append(ExpertInstance(replicate_id, quantize(dequantize_array(src.weights), replica_scheme), True))
    if quantize_id is not None:
        i = slot[quantize_id]
        instances[i] = ExpertInstance(quantize_id, quantize(instances[i].dense(), quant_scheme))
    return MoeLayer(Router(layer.router.weights, layer.router.bias), layer.top_k, instances)


def _check_ids(model: MoeModel, ids, what: str):
    if len(ids) != model.p:
        raise ValueError(f"{what}: expected {model.p} layer entries, got {len(ids)}")
    for li, (layer, e) in enumerate(zip(model.layers, ids)):
        if e is not None and not 0 <= e < layer.m:
            raise ValueError(f"{what}: layer {li} id {e} outside [0, {layer.m})")


def transform(model: MoeModel, replicate_ids, quantize_ids,
              replica_scheme=PrecisionScheme.HALF16, quant_scheme=PrecisionScheme.HALF16) -> MoeModel:
    """Rebuild ``model`` from its base experts with optional per-layer replica and quantization.

    Existing replicas are dropped. ``None`` entries skip that action for a layer.
    """
    replica_scheme = PrecisionScheme.parse(replica_scheme)
    quant_scheme = PrecisionScheme.parse(quant_scheme)
    _check_ids(model, replicate_ids, "replicate ids")
    _check_ids(model, quantize_ids, "quantize ids")
    layers = [_rebuild_layer(l, r, q, replica_scheme, quant_scheme)
              for l, r, q in zip(model.layers, replicate_ids, quantize_ids)]
    return MoeModel(layers, model.name, model.seed)


def apply_plan(model: MoeModel, plan: RQPlan) -> MoeModel:
    if len(plan.layers) != model.p:
        raise ValueError(f"plan covers {len(plan.layers)} layers, model has {model.p}")
    if any(layer.has_replicas for layer in model.layers):
        raise StateError("model already carries replicas; apply plans to the raw model")
    layers = []
    for li, (layer, lp) in enumerate(zip(model.layers, plan.layers)):
        for e in (lp.replicate_id, lp.quantize_id):
            if not 0 <= e < layer.m:
                raise ValueError(f"layer {li}: expert id {e} outside [0, {layer.m})")
        base = layer.base_scheme
        for s in (lp.replica_scheme, lp.quant_scheme):
            if not s.lower_than(base):
                raise ValueError(f"layer {li}: scheme {s.value} is not below base {base.value}")
        if lp.replicate_id == lp.quantize_id:
            log.info("layer %d: expert %d is both heavy-hitter and least important", li, lp.replicate_id)
        layers.append(_rebuild_layer(layer, lp.replicate_id, lp.quantize_id, lp.replica_scheme, lp.quant_scheme))
    return MoeModel(layers, model.name, model.seed)


@dataclass
class LayerMemory:
    bytes_before: int
    bytes_after: int
    scale_overhead_bytes: int

    @property
    def delta(self) -> int:
        return self.bytes_after - self.bytes_before


@dataclass
class MemoryReport:
    layers: list[LayerMemory]

    @property
    def bytes_before(self) -> int:
        return sum(l.bytes_before for l in self.layers)

    @property
    def bytes_after(self) -> int:
        return sum(l.bytes_after for l in self.layers)

    @property
    def scale_overhead_bytes(self) -> int:
        return sum(l.scale_overhead_bytes for l in self.layers)

    @property
    def within_budget(self) -> bool:
        return self.bytes_after <= self.bytes_before

    def to_dict(self) -> dict:
        return {
            "layers": [{"layer": i, "bytes_before": l.bytes_before, "bytes_after": l.bytes_after,
                        "scale_overhead_bytes": l.scale_overhead_bytes} for i, l in enumerate(self.layers)],
            "total": {"bytes_before": self.bytes_before, "bytes_after": self.bytes_after,
                      "scale_overhead_bytes": self.scale_overhead_bytes, "within_budget": self.within_budget},
        }


def layer_bytes(layer: MoeLayer) -> int:
    return sum(storage_bytes(inst.weights) for inst in layer.instances)


def memory_report(before: MoeModel, after: MoeModel) -> MemoryReport:
    if before.p != after.p:
        raise ValueError(f"models differ in depth: {before.p} vs {after.p}")
    rows = []
    for lb, la in zip(before.layers, after.layers):
        introduced = [inst for inst in la.instances
                      if inst.weights.scheme is PrecisionScheme.INT8SYM
                      and (inst.is_replica or lb.instances[lb.primary_index(inst.origin_id)].weights.scheme
                           is not PrecisionScheme.INT8SYM)]
        overhead = sum(scale_overhead_bytes(inst.weights) for inst in introduced)
        rows.append(LayerMemory(layer_bytes(lb), layer_bytes(la), overhead))
    return MemoryReport(rows)
