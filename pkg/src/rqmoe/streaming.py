"""Timestep-segmented streaming inference with per-timestep replica decisions.

Two decision rules pick the replicated expert before each segment: the
argmax of origin counts over every earlier segment (``cumulative``) or over
the previous segment only (``window1``). The quantized expert of each layer
is fixed for the whole stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .analysis import ImportanceReport
from .errors import InsufficientStreamError
from .metrics import RoutingTrace, lis, lis_from_counts
from .model import MoeModel, run_layers
from .numerics import Matrix, as_array
from .quantization import PrecisionScheme
from .transform import transform

CUMULATIVE = "cumulative"
WINDOW1 = "window1"
STRATEGIES = (CUMULATIVE, WINDOW1)


@dataclass
class StreamConfig:
    timesteps: int = 10
    strategy: str = CUMULATIVE
    importance: ImportanceReport | None = None
    replica_scheme: PrecisionScheme = PrecisionScheme.HALF16
    quant_scheme: PrecisionScheme = PrecisionScheme.HALF16
    warm_start: list[int] | None = None
    replicate: bool = True
    quantize: bool = True

    def __post_init__(self):
        if self.timesteps < 2:
            raise ValueError("a stream needs at least two timesteps")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.quantize and self.importance is None:
            raise ValueError("quantization needs a pre-identified importance report")
        self.replica_scheme = PrecisionScheme.parse(self.replica_scheme)
        self.quant_scheme = PrecisionScheme.parse(self.quant_scheme)


@dataclass
class StreamRow:
    timestep: int
    layer: int
    variant: str
    strategy: str
    cumulative_lis: float
    instant_lis: float
    replica_origin: int | None


@dataclass
class StreamReport:
    strategy: str
    rows: list[StreamRow]
    raw_traces: list[RoutingTrace] = field(default_factory=list)
    rq_traces: list[RoutingTrace] = field(default_factory=list)
    replica_choice: list[list[int | None]] = field(default_factory=list)

    def series(self, variant: str, metric: str, layer: int) -> list[float]:
        return [getattr(r, metric) for r in self.rows if r.variant == variant and r.layer == layer]


def build_adversarial_stream(model: MoeModel, tokens, timesteps: int, seed: int = 0) -> list[Matrix]:
    """Keep tokens whose layer-0 top-1 expert is the layer-0 heavy-hitter; split in order.

    ``seed`` is accepted for interface stability; the split keeps input order.
    """
    x = as_array(tokens)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("adversarial stream needs a non-empty token matrix")
    if timesteps < 2:
        raise ValueError("a stream needs at least two timesteps")
    trace = RoutingTrace.for_model(model)
    capture: list = []
    run_layers(model, x, trace, capture)
    heavy = int(np.argmax(trace.layers[0].origin_counts))
    keep = x[capture[0][1][:, 0] == heavy]
    return split_segments(keep, timesteps)


def split_segments(tokens, timesteps: int) -> list[Matrix]:
    """Contiguous equal segments; the last absorbs the remainder."""
    x = as_array(tokens)
    n = x.shape[0]
    if n < timesteps:
        raise InsufficientStreamError(f"only {n} tokens for {timesteps} timesteps")
    size = n // timesteps
    cuts = [i * size for i in range(timesteps)] + [n]
    return [Matrix(x[cuts[t]:cuts[t + 1]]) for t in range(timesteps)]


def _run(model: MoeModel, seg) -> RoutingTrace:
    x = as_array(seg)
    if x.shape[0] == 0:
        raise ValueError("empty stream segment")
    trace = RoutingTrace.for_model(model)
    run_layers(model, x, trace)
    return trace


def _raw_rows(model: MoeModel, segments, strategy: str):
    rows, traces = [], []
    cum = [np.zeros(l.m, dtype=np.int64) for l in model.layers]
    n_cum = 0
    for t, seg in enumerate(segments, start=1):
        tr = _run(model, seg)
        traces.append(tr)
        n_cum += tr.n
        for li, lt in enumerate(tr.layers):
            cum[li] += lt.origin_counts
            rows.append(StreamRow(t, li, "raw", strategy, lis_from_counts(cum[li], n_cum, lt.k),
                                  lis(tr, li, "origin"), None))
    return rows, traces


def _choose(history: list[RoutingTrace], strategy: str, p: int) -> list[int]:
    window = history if strategy == CUMULATIVE else history[-1:]
    out = []
    for li in range(p):
        total = sum(tr.layers[li].origin_counts for tr in window)
        out.append(int(np.argmax(total)))
    return out


def run_stream(model: MoeModel, segments, cfg: StreamConfig) -> StreamReport:
    segments = list(segments)
    if len(segments) != cfg.timesteps:
        raise ValueError(f"expected {cfg.timesteps} segments, got {len(segments)}")
    p = model.p
    raw_rows, raw_traces = _raw_rows(model, segments, cfg.strategy)

    quant_ids = list(cfg.importance.chosen) if cfg.quantize else [None] * p
    orig = [np.zeros(l.m, dtype=np.int64) for l in model.layers]
    rep_count = [0] * p
    rep_origin: list[int | None] = [None] * p
    n_cum = 0
    rows, rq_traces, choices = [], [], []
    for t, seg in enumerate(segments, start=1):
        if not cfg.replicate:
            choice = [None] * p
        elif t == 1:
            choice = list(cfg.warm_start) if cfg.warm_start is not None else [None] * p
        else:
            choice = _choose(rq_traces, cfg.strategy, p)
        choices.append(choice)
        model_t = transform(model, choice, quant_ids, cfg.replica_scheme, cfg.quant_scheme)
        tr = _run(model_t, seg)
        rq_traces.append(tr)
        n_cum += tr.n
        for li, (layer, lt) in enumerate(zip(model_t.layers, tr.layers)):
            if choice[li] != rep_origin[li]:
                # a retired replica's history folds back into its origin's original
                if rep_origin[li] is not None:
                    orig[li][rep_origin[li]] += rep_count[li]
                rep_origin[li], rep_count[li] = choice[li], 0
            for e in range(layer.m):
                orig[li][e] += lt.instance_counts[layer.primary_index(e)]
            counts = orig[li]
            if choice[li] is not None:
                rep_count[li] += int(lt.instance_counts[layer.replica_index(choice[li])])
                counts = np.append(orig[li], rep_count[li])
            rows.append(StreamRow(t, li, "rq", cfg.strategy, lis_from_counts(counts, n_cum, lt.k),
                                  lis(tr, li, "instance"), choice[li]))
    return StreamReport(cfg.strategy, raw_rows + rows, raw_traces, rq_traces, choices)
