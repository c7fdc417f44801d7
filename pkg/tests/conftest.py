import numpy as np
import pytest

from rqmoe.model import ExpertInstance, MoeLayer, MoeModel, Router
from rqmoe.numerics import Matrix
from rqmoe.quantization import PrecisionScheme, quantize


def make_layer(router_rows, experts, k=1, bias=None, scheme=PrecisionScheme.FULL32):
    instances = [ExpertInstance(e, quantize(np.asarray(w, dtype=float), scheme)) for e, w in enumerate(experts)]
    return MoeLayer(Router(Matrix(router_rows), bias), k, instances)


def random_model(rng: np.random.Generator, p=None, m=None, k=None, d=None, bias=False,
                 scheme=PrecisionScheme.FULL32, low=-1.0, high=1.0):
    p = p or int(rng.integers(1, 4))
    m = m or int(rng.integers(2, 9))
    k = k or int(rng.integers(1, m))
    d = d or int(rng.integers(2, 9))
    layers = []
    for _ in range(p):
        router = rng.normal(size=(m, d))
        b = rng.normal(size=m) if bias else None
        experts = [rng.uniform(low, high, size=(d, d)) for _ in range(m)]
        layers.append(make_layer(router, experts, k, b, scheme))
    return MoeModel(layers, "random", 0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
