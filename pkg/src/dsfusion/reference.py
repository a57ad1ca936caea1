"""Naive single-layer and two-layer reference kernels.

These are the bit-exact oracles every optimized and fused kernel is checked
against.  They are deliberately written as whole-tensor operations with no
tiling: correctness over speed, and no shared loop structure with the code
they validate.  Outputs are HWC by convention.

Between the two layers of a block the intermediate is materialised as
requantized int8, not as the 32-bit accumulator: the tiled pipelines all
store an 8-bit intermediate buffer, so the oracle must follow the same
numerical path.
"""

from __future__ import annotations

import numpy as np

from .geometry import LayerGeometry, LayerKind
from .tensors import Layout, QuantParams, TensorBuf, WeightsBuf, requantize


def _check_input(t: TensorBuf, g: LayerGeometry):
    if t.dims != (g.ix, g.iy, g.c):
        raise ValueError(f"input dims {t.dims} do not match geometry ({g.ix}, {g.iy}, {g.c})")


def dw_accumulate(x: np.ndarray, filters: np.ndarray, g: LayerGeometry) -> np.ndarray:
    """int64 depthwise accumulators for a logical (h, w, c) input array.

    Out-of-bounds taps read zero (zero-point padding).
    """
    h, w, c = x.shape
    padded = np.zeros((h + 2 * g.p, w + 2 * g.p, c), dtype=np.int64)
    padded[g.p:g.p + h, g.p:g.p + w, :] = x
    acc = np.zeros((g.ox, g.oy, c), dtype=np.int64)
    for i in range(g.fx):
        for j in range(g.fy):
            win = padded[i:i + g.s * (g.ox - 1) + 1:g.s, j:j + g.s * (g.oy - 1) + 1:g.s, :]
            acc += win * filters[:, i, j].astype(np.int64)
    return acc


def pw_accumulate(x: np.ndarray, matrix: np.ndarray, s: int = 1) -> np.ndarray:
    """int64 pointwise accumulators: channel mix at every (strided) pixel."""
    if s > 1:
        x = x[::s, ::s, :]
    return x.astype(np.int64) @ matrix.T.astype(np.int64)


def ref_dw(inp: TensorBuf, w: WeightsBuf, q: QuantParams, g: LayerGeometry) -> TensorBuf:
    """Depthwise convolution oracle: each channel convolved independently."""
    if g.kind is not LayerKind.DW:
        raise ValueError(f"ref_dw requires a depthwise geometry, got {g.kind}")
    _check_input(inp, g)
    if w.kind is not LayerKind.DW or w.k != g.c or (w.fx, w.fy) != (g.fx, g.fy):
        raise ValueError("depthwise weights do not match geometry")
    acc = dw_accumulate(inp.to_array(), w.dw_filters(), g)
    return TensorBuf.from_array(requantize(acc, q), Layout.HWC)


def ref_pw(inp: TensorBuf, w: WeightsBuf, q: QuantParams, g: LayerGeometry) -> TensorBuf:
    """Pointwise (1x1) convolution oracle: per-pixel channel mixing."""
    if g.kind is not LayerKind.PW:
        raise ValueError(f"ref_pw requires a pointwise geometry, got {g.kind}")
    _check_input(inp, g)
    if w.kind is not LayerKind.PW or (w.k, w.c) != (g.k, g.c):
        raise ValueError("pointwise weights do not match geometry")
    acc = pw_accumulate(inp.to_array(), w.pw_matrix(), g.s)
    return TensorBuf.from_array(requantize(acc, q), Layout.HWC)


_REF = {LayerKind.DW: ref_dw, LayerKind.PW: ref_pw}


def ref_block(
    inp: TensorBuf,
    w_a: WeightsBuf, q_a: QuantParams, g_a: LayerGeometry,
    w_b: WeightsBuf, q_b: QuantParams, g_b: LayerGeometry,
) -> TensorBuf:
    """Two-layer oracle: layer B applied to layer A's fully materialised,
    int8-requantized output."""
    pair = (g_a.kind, g_b.kind)
    if pair not in ((LayerKind.DW, LayerKind.PW), (LayerKind.PW, LayerKind.DW)):
        raise ValueError(f"ref_block supports DW-PW and PW-DW pairs, got {pair}")
    if (g_a.ox, g_a.oy, g_a.k) != (g_b.ix, g_b.iy, g_b.c):
        raise ValueError(
            f"geometries do not chain: A out ({g_a.ox}, {g_a.oy}, {g_a.k}) "
            f"vs B in ({g_b.ix}, {g_b.iy}, {g_b.c})"
        )
    mid = _REF[g_a.kind](inp, w_a, q_a, g_a)
    return _REF[g_b.kind](mid, w_b, q_b, g_b)
