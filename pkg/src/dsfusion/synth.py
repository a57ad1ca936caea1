"""Seeded synthetic tensors, weights and quantization parameters.

Numeric correctness checks are data-independent, so simulations run on
uniform random int8 data.  Generators are keyed by (seed, tag) through a
CRC so that results are stable across processes and runs.
"""

from __future__ import annotations

import zlib

import numpy as np

from .geometry import LayerGeometry, LayerKind
from .tensors import Layout, QuantParams, TensorBuf, WeightsBuf


def rng_for(seed: int, tag: str) -> np.random.Generator:
    return np.random.default_rng((seed & 0xFFFFFFFF) ^ zlib.crc32(tag.encode()))


def random_tensor(rng: np.random.Generator, dims: tuple[int, int, int],
                  layout: Layout = Layout.HWC) -> TensorBuf:
    arr = rng.integers(-128, 128, size=dims, dtype=np.int64).astype(np.int8)
    return TensorBuf.from_array(arr, layout)


def random_weights(rng: np.random.Generator, g: LayerGeometry) -> WeightsBuf:
    if g.kind is LayerKind.DW:
        n = g.c * g.fx * g.fy
        return WeightsBuf(LayerKind.DW, rng.integers(-128, 128, n).astype(np.int8),
                          k=g.c, fx=g.fx, fy=g.fy)
    if g.kind is LayerKind.PW:
        n = g.k * g.c
        return WeightsBuf(LayerKind.PW, rng.integers(-128, 128, n).astype(np.int8),
                          k=g.k, c=g.c)
    raise ValueError(f"random weights support DW/PW layers, got {g.kind}")


def random_quant(rng: np.random.Generator, g: LayerGeometry) -> QuantParams:
    """Quantization parameters whose typical outputs stay inside int8 while
    still saturating occasionally."""
    if g.kind is LayerKind.DW:
        fan_in = g.fx * g.fy
    else:
        fan_in = g.c * g.fx * g.fy
    mult = rng.integers(1, 5, g.k).astype(np.int32)
    bias = rng.integers(-1000, 1000, g.k).astype(np.int32)
    # std of a sum of fan_in products of two uniform int8 values ~ 5300*sqrt(fan_in)
    typical = 5300.0 * np.sqrt(fan_in) * float(np.mean(mult))
    shift = int(np.clip(np.round(np.log2(typical / 48.0)), 0, 31))
    return QuantParams(mult, shift, bias)


def block_data(seed: int, tag: str, g_a: LayerGeometry, g_b: LayerGeometry,
               in_layout: Layout = Layout.HWC):
    """(input, weights_a, quant_a, weights_b, quant_b) for a two-layer block."""
    rng = rng_for(seed, tag)
    inp = random_tensor(rng, (g_a.ix, g_a.iy, g_a.c), in_layout)
    w_a, q_a = random_weights(rng, g_a), random_quant(rng, g_a)
    w_b, q_b = random_weights(rng, g_b), random_quant(rng, g_b)
    return inp, w_a, q_a, w_b, q_b
