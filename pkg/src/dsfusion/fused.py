"""Fused two-layer execution schemes with an L1-resident intermediate buffer.

Three schemes are implemented, all bit-exact with the unfused reference
block (`ref_block`):

* ``DWPW / Rows`` -- depthwise then pointwise, tiled over intermediate rows.
  The pointwise has a receptive field of one, so row tiles never overlap and
  nothing is recomputed.  The buffer must hold *all* intermediate channels of
  ``fd`` rows (the pointwise needs every input channel per pixel), giving a
  buffer of ``c_mid * row_width * fd`` bytes.
* ``PWDW / Channels`` -- pointwise then depthwise, tiled over intermediate
  channels.  Depthwise channels are independent, so each tile computes ``fd``
  pointwise output channels over the whole map (buffer ``fd * h * w``) and
  the depthwise consumes exactly those channels.
* ``PWDW / Rows`` -- pointwise then depthwise, tiled over rows.  Between
  tiles the trailing rows still inside the depthwise's vertical receptive
  field are *shifted* to the buffer head (a memmove, charged to the compute
  model) instead of being recomputed; each steady-state tile computes only
  ``fd - (filter_rows - stride)`` fresh rows.  Buffer ``c_mid * row_width *
  fd``, with ``fd`` at least the filter's vertical extent.

A ``DWPW / Channels`` scheme is deliberately not constructible: tiling the
intermediate channel dimension would leave the pointwise without the full
channel vector it needs per pixel.

Fused kernels use the same layout for input and output activations so that
consecutive blocks of the same kind chain without data re-organization; the
intermediate layout is free and only affects the access-pattern counters.

The intermediate is stored requantized to int8 (moving high-precision partial
outputs up the hierarchy would defeat the point of fusing), so buffer byte
counts equal element counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import GeometryError, LayerGeometry, LayerKind
from .kernels import KernelStats, KernelVariant, analyze
from .reference import dw_accumulate, pw_accumulate
from .tensors import Layout, QuantParams, TensorBuf, WeightsBuf, requantize


class FusedOrder(Enum):
    DWPW = "dwpw"
    PWDW = "pwdw"


class FusedTiling(Enum):
    ROWS = "rows"
    CHANNELS = "channels"


@dataclass(frozen=True)
class FusedScheme:
    """One fused kernel: execution order, tiled dimension, layout triple and
    fused-dimension size (rows or channels per tile)."""

    order: FusedOrder
    tiling: FusedTiling
    in_layout: Layout
    mid_layout: Layout
    out_layout: Layout
    fd: int

    def __post_init__(self):
        if self.order is FusedOrder.DWPW and self.tiling is FusedTiling.CHANNELS:
            raise ValueError(
                "DWPW cannot tile channels: the pointwise needs all intermediate "
                "channels of a pixel at once"
            )
        if self.in_layout is not self.out_layout:
            raise ValueError("fused kernels use the same input and output layout")
        if self.fd < 1:
            raise ValueError(f"fd must be >= 1, got {self.fd}")

    @property
    def name(self) -> str:
        tag = f"{self.in_layout.value}/{self.mid_layout.value}/{self.out_layout.value}"
        return f"{self.order.value}-{self.tiling.value} {tag} fd={self.fd}"

    def with_fd(self, fd: int) -> "FusedScheme":
        return FusedScheme(self.order, self.tiling, self.in_layout, self.mid_layout,
                           self.out_layout, fd)

    def leg_variants(self) -> tuple[KernelVariant, KernelVariant]:
        """(first op, second op) layout variants of the two fused legs."""
        if self.order is FusedOrder.DWPW:
            return (
                KernelVariant(LayerKind.DW, self.in_layout, self.mid_layout),
                KernelVariant(LayerKind.PW, self.mid_layout, self.out_layout),
            )
        return (
            KernelVariant(LayerKind.PW, self.in_layout, self.mid_layout),
            KernelVariant(LayerKind.DW, self.mid_layout, self.out_layout),
        )


def all_schemes(fd: int | None = None) -> list[FusedScheme]:
    """The full pool of 12 constructible scheme/layout combinations."""
    out = []
    for order, tiling in (
        (FusedOrder.DWPW, FusedTiling.ROWS),
        (FusedOrder.PWDW, FusedTiling.CHANNELS),
        (FusedOrder.PWDW, FusedTiling.ROWS),
    ):
        for outer in (Layout.CHW, Layout.HWC):
            for mid in (Layout.CHW, Layout.HWC):
                f = fd if fd is not None else default_fd(order, tiling)
                out.append(FusedScheme(order, tiling, outer, mid, outer, f))
    return out


def retained_schemes(fd: int | None = None) -> list[FusedScheme]:
    """The six-kernel subset after dropping layout combinations with strided
    *loads* on either leg: the first operator's input layout is pinned to the
    one it reads contiguously (CHW for a leading depthwise, HWC for a leading
    pointwise).  Inputs are re-read many times by output-stationary kernels,
    so strided loads hurt much more than strided stores."""
    keep = []
    for s in all_schemes(fd):
        outer_ok = s.in_layout is (
            Layout.CHW if s.order is FusedOrder.DWPW else Layout.HWC
        )
        if outer_ok:
            keep.append(s)
    return keep


def default_fd(order: FusedOrder, tiling: FusedTiling, n_cores: int = 8) -> int:
    """Shipped fd defaults: the smallest value that keeps all cores busy."""
    if order is FusedOrder.DWPW:
        return n_cores // 2
    if tiling is FusedTiling.CHANNELS:
        return n_cores
    return n_cores // 2  # rows PWDW: callers add the filter overlap via select_fd


DEFAULT_DWPW = FusedScheme(FusedOrder.DWPW, FusedTiling.ROWS, Layout.CHW, Layout.HWC,
                           Layout.CHW, 4)
DEFAULT_PWDW = FusedScheme(FusedOrder.PWDW, FusedTiling.CHANNELS, Layout.HWC, Layout.CHW,
                           Layout.HWC, 8)


def default_schemes() -> list[FusedScheme]:
    """The two deployment defaults: channel-wise PWDW HWC/CHW/HWC (fd=8) and
    row-wise DWPW CHW/HWC/CHW (fd=4)."""
    return [DEFAULT_DWPW, DEFAULT_PWDW]


@dataclass
class IntermediateBuffer:
    """Bookkeeping for the L1-resident intermediate: extents, byte size and,
    for the shifting row scheme, the current window position."""

    scheme: FusedScheme
    rows: int
    cols: int
    channels: int
    lo: int = 0  # first buffered row (rows tiling) / channel (channels tiling)
    hi: int = 0

    @property
    def nbytes(self) -> int:
        return self.rows * self.cols * self.channels


def intermediate_elems(scheme: FusedScheme, g_a: LayerGeometry, g_b: LayerGeometry) -> int:
    """Intermediate buffer size in elements (= bytes at int8)."""
    mid_h, mid_w, mid_c = g_a.ox, g_a.oy, g_a.k
    if scheme.tiling is FusedTiling.ROWS:
        return mid_c * mid_w * scheme.fd
    return scheme.fd * mid_h * mid_w


@dataclass
class FusedStats:
    """Execution profile of one fused run: tile structure, buffer size, shift
    traffic and the per-leg kernel stats (with one invocation per tile)."""

    scheme: FusedScheme
    n_tiles: int
    mid_buffer_bytes: int
    mid_units_total: int
    mid_units_computed: int
    shift_bytes: int
    first_stats: KernelStats
    second_stats: KernelStats


def validate_chain(g_a: LayerGeometry, g_b: LayerGeometry, order: FusedOrder):
    kinds = {
        FusedOrder.DWPW: (LayerKind.DW, LayerKind.PW),
        FusedOrder.PWDW: (LayerKind.PW, LayerKind.DW),
    }[order]
    if (g_a.kind, g_b.kind) != kinds:
        raise GeometryError(f"block is ({g_a.kind}, {g_b.kind}), scheme needs {kinds}")
    if (g_a.ox, g_a.oy, g_a.k) != (g_b.ix, g_b.iy, g_b.c):
        raise GeometryError(
            f"geometries do not chain: first out ({g_a.ox}, {g_a.oy}, {g_a.k}) "
            f"vs second in ({g_b.ix}, {g_b.iy}, {g_b.c})"
        )


def _check_fused_inputs(inp, scheme, g_a, g_b):
    validate_chain(g_a, g_b, scheme.order)
    if inp.layout is not scheme.in_layout:
        raise ValueError(f"input layout {inp.layout} != scheme layout {scheme.in_layout}")
    if inp.dims != (g_a.ix, g_a.iy, g_a.c):
        raise ValueError(f"input dims {inp.dims} do not match first layer geometry")


def _leg_stats(scheme, g_a, g_b, n_tiles_a, n_tiles_b) -> tuple[KernelStats, KernelStats]:
    va, vb = scheme.leg_variants()
    sa, sb = analyze(va, g_a), analyze(vb, g_b)
    sa.invocations = n_tiles_a
    sb.invocations = n_tiles_b
    return sa, sb


def fused_dwpw_rows(
    inp: TensorBuf,
    w_dw: WeightsBuf, w_pw: WeightsBuf,
    q_dw: QuantParams, q_pw: QuantParams,
    g_dw: LayerGeometry, g_pw: LayerGeometry,
    scheme: FusedScheme,
) -> tuple[TensorBuf, FusedStats]:
    """Row-tiled depthwise->pointwise fusion.

    Per tile of ``fd`` intermediate rows: depthwise over the needed input
    rows, requantize into the buffer, then pointwise over exactly those rows.
    No intermediate row is ever computed twice.
    """
    if scheme.order is not FusedOrder.DWPW or scheme.tiling is not FusedTiling.ROWS:
        raise ValueError("scheme must be DWPW/Rows")
    _check_fused_inputs(inp, scheme, g_dw, g_pw)
    if g_pw.s != 1:
        raise GeometryError("row-fused blocks require a stride-1 pointwise")
    mid_rows, mid_w, mid_c = g_dw.ox, g_dw.oy, g_dw.k
    if scheme.fd > mid_rows:
        raise GeometryError(f"fd={scheme.fd} exceeds the {mid_rows} intermediate rows")

    x = inp.to_array()
    filters = w_dw.dw_filters()
    matrix = w_pw.pw_matrix()
    out = np.empty((g_pw.ox, g_pw.oy, g_pw.k), dtype=np.int8)
    buf = IntermediateBuffer(scheme, scheme.fd, mid_w, mid_c)
    mid_computed = 0
    n_tiles = 0
    for t0 in range(0, mid_rows, scheme.fd):
        t1 = min(t0 + scheme.fd, mid_rows)
        n_tiles += 1
        # Depthwise on input rows feeding intermediate rows [t0, t1).
        in_lo = max(0, t0 * g_dw.s - g_dw.p)
        in_hi = min(g_dw.ix, (t1 - 1) * g_dw.s - g_dw.p + g_dw.fx)
        sub = _dw_rows(x[in_lo:in_hi], filters, g_dw, t0, t1, in_lo)
        tile = requantize(sub, q_dw)
        mid_computed += t1 - t0
        # Pointwise consumes the tile 1:1 (stride-1, 1x1 field).
        acc = pw_accumulate(tile, matrix)
        out[t0:t1] = requantize(acc, q_pw)
    first, second = _leg_stats(scheme, g_dw, g_pw, n_tiles, n_tiles)
    stats = FusedStats(scheme, n_tiles, buf.nbytes, mid_rows, mid_computed, 0, first, second)
    return TensorBuf.from_array(out, scheme.out_layout), stats


def _dw_rows(x_rows, filters, g, r0, r1, in_lo) -> np.ndarray:
    """Depthwise accumulators for output rows [r0, r1) given the input row
    slab starting at absolute row ``in_lo``.  Columns are fully padded."""
    rows = r1 - r0
    h = x_rows.shape[0]
    c = x_rows.shape[2]
    padded = np.zeros((g.s * (rows - 1) + g.fx, g.iy + 2 * g.p, c), dtype=np.int64)
    # Absolute padded-row index of output row r's window start is r*s; the
    # slab's first real row sits at padded index in_lo + p.
    base = r0 * g.s
    lo = in_lo + g.p - base
    padded[lo:lo + h, g.p:g.p + g.iy, :] = x_rows
    acc = np.zeros((rows, g.oy, c), dtype=np.int64)
    for i in range(g.fx):
        for j in range(g.fy):
            acc += padded[i:i + g.s * (rows - 1) + 1:g.s,
                          j:j + g.s * (g.oy - 1) + 1:g.s, :] * filters[:, i, j].astype(np.int64)
    return acc


def fused_pwdw_channels(
    inp: TensorBuf,
    w_pw: WeightsBuf, w_dw: WeightsBuf,
    q_pw: QuantParams, q_dw: QuantParams,
    g_pw: LayerGeometry, g_dw: LayerGeometry,
    scheme: FusedScheme,
) -> tuple[TensorBuf, FusedStats]:
    """Channel-tiled pointwise->depthwise fusion.

    Per tile: the pointwise computes ``fd`` output channels over the whole
    spatial map, then the depthwise consumes exactly those channels (its
    channels are independent).  Recomputation is avoided because the buffer
    spans all spatial positions.
    """
    if scheme.order is not FusedOrder.PWDW or scheme.tiling is not FusedTiling.CHANNELS:
        raise ValueError("scheme must be PWDW/Channels")
    _check_fused_inputs(inp, scheme, g_pw, g_dw)
    mid_c = g_pw.k
    if scheme.fd > mid_c:
        raise GeometryError(f"fd={scheme.fd} exceeds the {mid_c} intermediate channels")

    x = inp.to_array()
    matrix = w_pw.pw_matrix()
    filters = w_dw.dw_filters()
    out = np.empty((g_dw.ox, g_dw.oy, g_dw.k), dtype=np.int8)
    buf = IntermediateBuffer(scheme, g_pw.ox, g_pw.oy, scheme.fd)
    n_tiles = 0
    computed = 0
    for k0 in range(0, mid_c, scheme.fd):
        k1 = min(k0 + scheme.fd, mid_c)
        n_tiles += 1
        acc = pw_accumulate(x, matrix[k0:k1], g_pw.s)
        tile = requantize(acc, q_pw.slice(k0, k1))
        computed += k1 - k0
        g_slice = _dw_channel_slice(g_dw, k1 - k0)
        acc2 = dw_accumulate(tile, filters[k0:k1], g_slice)
        out[:, :, k0:k1] = requantize(acc2, q_dw.slice(k0, k1))
    first, second = _leg_stats(scheme, g_pw, g_dw, n_tiles, n_tiles)
    stats = FusedStats(scheme, n_tiles, buf.nbytes, mid_c, computed, 0, first, second)
    return TensorBuf.from_array(out, scheme.out_layout), stats


def _dw_channel_slice(g: LayerGeometry, channels: int) -> LayerGeometry:
    return LayerGeometry(LayerKind.DW, g.ix, g.iy, channels, g.ox, g.oy, channels,
                         g.fx, g.fy, g.p, g.s)


@dataclass(frozen=True)
class RowTile:
    """One step of the shifting row walk: rows kept from the previous tile,
    fresh intermediate rows [new_lo, new_hi) and output rows [out_lo, out_hi)
    emitted once the window allows."""

    kept_rows: int
    new_lo: int
    new_hi: int
    out_lo: int
    out_hi: int


def pwdw_row_walk(fd: int, mid_rows: int, g_dw: LayerGeometry) -> list[RowTile]:
    """Tile sequence for the shifting row-wise PWDW scheme.

    The buffer holds ``fd`` intermediate rows.  After each tile the rows still
    inside the next output's receptive field are kept (shifted to the buffer
    head); everything else is replaced by fresh pointwise rows.  An output row
    ``r`` is emitted once all real rows of its window [r*s - p, r*s - p + fx)
    are buffered (rows outside [0, mid_rows) read as padding zeros).
    """
    fx, s, p = g_dw.fx, g_dw.s, g_dw.p
    if fd < fx:
        raise GeometryError(f"fd={fd} must be >= the filter's vertical extent {fx}")
    if fd > mid_rows:
        raise GeometryError(f"fd={fd} exceeds the {mid_rows} intermediate rows")
    tiles = []
    hi = 0
    out_next = 0
    out_rows = g_dw.ox
    first = True
    while out_next < out_rows:
        if first:
            kept, new_lo, new_hi = 0, 0, min(fd, mid_rows)
            first = False
        else:
            next_start = max(out_next * s - p, 0)
            kept = max(hi - next_start, 0)
            new_lo = max(hi, next_start)  # a large stride may skip dead rows
            new_hi = max(min(next_start + fd, mid_rows), new_lo)
        hi = max(hi, new_hi)
        emit_lo = out_next
        while out_next < out_rows:
            w_end = out_next * s - p + fx
            if w_end <= hi or hi == mid_rows:
                out_next += 1
            else:
                break
        if out_next == emit_lo and new_hi == new_lo:
            raise GeometryError("row walk stalled; fd too small for this geometry")
        tiles.append(RowTile(kept, new_lo, new_hi, emit_lo, out_next))
    return tiles


def fused_pwdw_rows(
    inp: TensorBuf,
    w_pw: WeightsBuf, w_dw: WeightsBuf,
    q_pw: QuantParams, q_dw: QuantParams,
    g_pw: LayerGeometry, g_dw: LayerGeometry,
    scheme: FusedScheme,
) -> tuple[TensorBuf, FusedStats]:
    """Row-tiled pointwise->depthwise fusion with a shifting buffer.

    Tiles reuse the trailing rows of the previous tile instead of recomputing
    them: the buffer is shifted (a memmove whose bytes are reported in the
    stats) and only the fresh rows run through the pointwise.
    """
    if scheme.order is not FusedOrder.PWDW or scheme.tiling is not FusedTiling.ROWS:
        raise ValueError("scheme must be PWDW/Rows")
    _check_fused_inputs(inp, scheme, g_pw, g_dw)
    mid_rows, mid_w, mid_c = g_pw.ox, g_pw.oy, g_pw.k
    tiles = pwdw_row_walk(scheme.fd, mid_rows, g_dw)

    x = inp.to_array()
    matrix = w_pw.pw_matrix()
    filters = w_dw.dw_filters()
    out = np.empty((g_dw.ox, g_dw.oy, g_dw.k), dtype=np.int8)
    buf = np.zeros((scheme.fd, mid_w, mid_c), dtype=np.int8)
    buf_lo = 0  # absolute intermediate row held at buf[0]
    shift_bytes = 0
    computed = 0
    for t in tiles:
        if t.kept_rows:
            start = t.new_lo - t.kept_rows - buf_lo
            buf[:t.kept_rows] = buf[start:start + t.kept_rows]
            shift_bytes += t.kept_rows * mid_w * mid_c
        buf_lo = t.new_lo - t.kept_rows
        if t.new_hi > t.new_lo:
            rows = slice(t.new_lo * g_pw.s, (t.new_hi - 1) * g_pw.s + 1, g_pw.s)
            acc = pw_accumulate(x[rows, :: g_pw.s, :], matrix)
            buf[t.new_lo - buf_lo:t.new_hi - buf_lo] = requantize(acc, q_pw)
            computed += t.new_hi - t.new_lo
        out[t.out_lo:t.out_hi] = _dw_window(
            buf, buf_lo, t.new_hi, mid_rows, filters, g_dw, t.out_lo, t.out_hi, q_dw
        )
    first, second = _leg_stats(scheme, g_pw, g_dw, len(tiles), len(tiles))
    stats = FusedStats(
        scheme, len(tiles), scheme.fd * mid_w * mid_c, mid_rows, computed,
        shift_bytes, first, second,
    )
    return TensorBuf.from_array(out, scheme.out_layout), stats


def _dw_window(buf, buf_lo, buf_hi, mid_rows, filters, g, r0, r1, q) -> np.ndarray:
    """Depthwise output rows [r0, r1) from the buffered intermediate rows
    [buf_lo, buf_hi); rows outside [0, mid_rows) are padding zeros."""
    lo_need = r0 * g.s - g.p
    hi_need = (r1 - 1) * g.s - g.p + g.fx
    slab = np.zeros((hi_need - lo_need, g.iy + 2 * g.p, buf.shape[2]), dtype=np.int64)
    real_lo, real_hi = max(lo_need, 0), min(hi_need, mid_rows)
    if real_hi > real_lo:
        slab[real_lo - lo_need:real_hi - lo_need, g.p:g.p + g.iy, :] = (
            buf[real_lo - buf_lo:real_hi - buf_lo]
        )
    rows = r1 - r0
    acc = np.zeros((rows, g.oy, buf.shape[2]), dtype=np.int64)
    for i in range(g.fx):
        for j in range(g.fy):
            acc += slab[i:i + g.s * (rows - 1) + 1:g.s,
                        j:j + g.s * (g.oy - 1) + 1:g.s, :] * filters[:, i, j].astype(np.int64)
    return requantize(acc, q)


_RUNNERS = {
    (FusedOrder.DWPW, FusedTiling.ROWS): fused_dwpw_rows,
    (FusedOrder.PWDW, FusedTiling.CHANNELS): fused_pwdw_channels,
    (FusedOrder.PWDW, FusedTiling.ROWS): fused_pwdw_rows,
}


def run_fused(inp, w_a, w_b, q_a, q_b, g_a, g_b, scheme) -> tuple[TensorBuf, FusedStats]:
    """Dispatch to the scheme's kernel; arguments are in execution order."""
    return _RUNNERS[(scheme.order, scheme.tiling)](inp, w_a, w_b, q_a, q_b, g_a, g_b, scheme)


def count_intermediate_traffic(
    scheme: FusedScheme | None,
    g_a: LayerGeometry,
    g_b: LayerGeometry,
    l1_bytes: int,
) -> int:
    """Bytes the block's intermediate tensor moves between L1 and the next
    level up.

    Fused execution never spills the intermediate, so every scheme returns 0.
    Unfused execution (``scheme=None``) stores and reloads the full tensor
    unless it fits in L1 alongside the working tensors of both layers.
    """
    validate_chain(g_a, g_b, FusedOrder.DWPW if g_a.kind is LayerKind.DW else FusedOrder.PWDW)
    if scheme is not None:
        return 0
    mid = g_a.out_elems
    working = (
        g_a.in_elems + mid + g_b.out_elems
        + _block_weight_bytes(g_a) + _block_weight_bytes(g_b)
        + 8 * (g_a.k + g_b.k)
    )
    if working <= l1_bytes:
        return 0
    return 2 * mid


def _block_weight_bytes(g: LayerGeometry) -> int:
    from .geometry import weight_bytes

    return weight_bytes(g)
