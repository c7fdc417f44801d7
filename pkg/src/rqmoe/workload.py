"""Seeded synthetic MoE models and token sets with tunable routing skew."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ExpertInstance, MoeLayer, MoeModel, Router
from .numerics import Matrix
from .quantization import PrecisionScheme, quantize
from .rng import CounterRNG

UNIFORM = "uniform"
ZIPF = "zipf"
DIRECTIONAL = "directional"

_ROUTER, _EXPERT, _DIRECTION, _TOKENS = 1, 2, 3, 4


def _stream(kind: int, layer: int = 0, expert: int = 0) -> int:
    return (kind << 40) | (layer << 20) | expert


@dataclass(frozen=True)
class SkewSpec:
    mode: str = UNIFORM
    zipf_exponent: float = 0.0
    bias_strength: float = 0.0

    def __post_init__(self):
        if self.mode not in (UNIFORM, ZIPF, DIRECTIONAL):
            raise ValueError(f"unknown skew mode {self.mode!r}")
        if self.zipf_exponent < 0 or self.bias_strength < 0:
            raise ValueError("skew parameters must be non-negative")
        if self.mode == UNIFORM and self.zipf_exponent != 0:
            raise ValueError("uniform skew takes no zipf exponent")

    def to_dict(self) -> dict:
        return {"mode": self.mode, "zipf_exponent": self.zipf_exponent, "bias_strength": self.bias_strength}


def zipf_bias(m: int, strength: float, exponent: float) -> np.ndarray:
    return np.array([strength * (1.0 / (j + 1)) ** exponent for j in range(m)])


def gen_model(seed: int, p: int, m: int, k: int, d: int, skew: SkewSpec = SkewSpec(),
              base_scheme=PrecisionScheme.FULL32, name: str = "synthetic") -> MoeModel:
    """Random square-expert model; every weight drawn N(0, 1/d).

    Full32 weights are rounded onto the float32 grid so the stored precision is honest.
    """
    if not 1 <= k < m:
        raise ValueError(f"need 1 <= k < m, got k={k}, m={m}")
    if p < 1 or d < 1:
        raise ValueError("need p >= 1 and d >= 1")
    base_scheme = PrecisionScheme.parse(base_scheme)
    scale = 1.0 / math.sqrt(d)
    layers = []
    for li in range(p):
        r = CounterRNG(seed, _stream(_ROUTER, li)).normal(m * d).reshape(m, d) * scale
        bias = None
        if skew.mode == ZIPF:
            bias = zipf_bias(m, skew.bias_strength, skew.zipf_exponent)
        elif skew.mode == DIRECTIONAL:
            u = CounterRNG(seed, _stream(_DIRECTION, li)).normal(d)
            u /= np.linalg.norm(u) or 1.0
            pull = skew.bias_strength * (m - np.arange(m)) / m
            r = r + pull[:, None] * u[None, :]
        r = r.astype(np.float32).astype(np.float64)
        instances = []
        for e in range(m):
            w = CounterRNG(seed, _stream(_EXPERT, li, e)).normal(d * d).reshape(d, d) * scale
            w = w.astype(np.float32).astype(np.float64)
            instances.append(ExpertInstance(e, quantize(w, base_scheme)))
        layers.append(MoeLayer(Router(Matrix(r), bias), k, instances))
    return MoeModel(layers, name, seed)


def gen_tokens(seed: int, n: int, d: int) -> Matrix:
    if n < 1 or d < 1:
        raise ValueError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    return Matrix(CounterRNG(seed, _stream(_TOKENS)).normal(n * d).reshape(n, d))
