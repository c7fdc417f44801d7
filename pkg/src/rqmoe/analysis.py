"""Calibration sampling, heavy-hitter search and Wanda-style expert importance."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .metrics import RoutingTrace
from .model import MoeModel, run_layers
from .numerics import Matrix, as_array, col_l2_norms_array, sum_ltr
from .rng import CounterRNG

CALIBRATION_STREAM = 0xCA11B


@dataclass
class ImportanceReport:
    scores: list[list[float]]
    chosen: list[int]
    sparsity: float
    calibration: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "sparsity": self.sparsity,
            "calibration": dict(self.calibration),
            "layers": [{"layer": i, "scores": list(s), "less_important": c}
                       for i, (s, c) in enumerate(zip(self.scores, self.chosen))],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImportanceReport":
        layers = sorted(d["layers"], key=lambda r: r["layer"])
        return cls([list(map(float, r["scores"])) for r in layers],
                   [int(r["less_important"]) for r in layers],
                   float(d["sparsity"]), dict(d.get("calibration", {})))


def calibration_size(n: int, fraction: float) -> int:
    # rounding guards against 0.3 * 10 == 3.0000000000000004
    return max(1, math.ceil(round(fraction * n, 9)))


def sample_calibration(tokens, fraction: float, seed: int) -> Matrix:
    """ceil(fraction * n) rows drawn without replacement, kept in original order."""
    x = as_array(tokens)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("calibration needs a non-empty token matrix")
    if not 0 < fraction <= 1:
        raise ValueError(f"calibration fraction must lie in (0, 1], got {fraction}")
    n = x.shape[0]
    want = calibration_size(n, fraction)
    if want >= n:
        return Matrix(x)
    rng = CounterRNG(seed, CALIBRATION_STREAM)
    perm = list(range(n))
    for i in range(want):
        j = i + rng.below(n - i)
        perm[i], perm[j] = perm[j], perm[i]
    return Matrix(x[sorted(perm[:want])])


def origin_count_table(model: MoeModel, calib) -> RoutingTrace:
    trace = RoutingTrace.for_model(model)
    run_layers(model, calib, trace)
    return trace


def find_heavy_hitters(model: MoeModel, calib) -> list[int]:
    x = as_array(calib)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("heavy-hitter search needs a non-empty calibration set")
    trace = origin_count_table(model, x)
    return [int(np.argmax(lt.origin_counts)) for lt in trace.layers]


def bottom_mean_score(w: np.ndarray, norms: np.ndarray, sparsity: float) -> float:
    """Mean of the ascending-sorted bottom floor(C_in * s) scores of every output row."""
    s = np.abs(w) * norms[None, :]
    t = max(1, math.floor(w.shape[1] * sparsity))
    bottom = np.sort(s, axis=1)[:, :t]
    return sum_ltr(bottom.ravel()) / bottom.size


DISPATCHED = "dispatched"
LAYER = "layer"


def wanda_expert_scores(model: MoeModel, calib, sparsity: float = 0.5,
                        activations: str = DISPATCHED) -> ImportanceReport:
    """Per-expert bottom-fraction Wanda means; the argmax expert is the least important.

    ``activations="dispatched"`` takes column norms over the layer inputs routed
    to each expert; ``"layer"`` uses every layer input for every expert.
    """
    if not 0 < sparsity <= 1:
        raise ValueError(f"sparsity must lie in (0, 1], got {sparsity}")
    if activations not in (DISPATCHED, LAYER):
        raise ValueError(f"unknown activation source {activations!r}")
    x = as_array(calib)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("importance scoring needs a non-empty calibration set")
    capture: list = []
    run_layers(model, x, None, capture)
    scores, chosen = [], []
    for layer, (inputs, selected, _) in zip(model.layers, capture):
        layer_norms = col_l2_norms_array(inputs)
        row = []
        for e in range(layer.m):
            norms = layer_norms
            if activations == DISPATCHED:
                routed = np.nonzero((selected == e).any(axis=1))[0]
                # unused experts keep the whole-layer norms
                if routed.size:
                    norms = col_l2_norms_array(inputs[routed])
            w = layer.instances[layer.primary_index(e)].dense()
            row.append(bottom_mean_score(w, norms, sparsity))
        scores.append(row)
        chosen.append(int(np.argmax(row)))
    return ImportanceReport(scores, chosen, sparsity,
                            {"tokens": int(x.shape[0]), "activations": activations})
