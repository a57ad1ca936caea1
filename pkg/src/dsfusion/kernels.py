"""Layout-parameterized single-layer depthwise/pointwise primitives.

Each operator exists in four variants: the cross product of {CHW, HWC} for
the input and output buffers.  All variants are one parameterized kernel
body over the logical array view -- layouts change memory walk order, never
semantics -- so every variant is bit-exact with the reference kernel.

Beside the output tensor, each run reports a :class:`KernelStats` describing
its work decomposition and element-access pattern:

* depthwise work is split by channel (one unit per channel);
* pointwise work is split into half-rows (two units per output row), the
  granularity the multi-core cost model and the fused-dimension heuristics
  are built around;
* activation loads/stores are classified contiguous vs strided from the
  variant's layouts (a CHW input makes depthwise loads contiguous; an HWC
  input makes pointwise loads contiguous; the same rule applies to stores).

The counts are analytical -- derived from geometry, not traced -- so the
planner can cost a kernel without executing it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import LayerGeometry, LayerKind, op_count
from .tensors import Layout, QuantParams, TensorBuf, WeightsBuf, requantize


@dataclass(frozen=True)
class KernelVariant:
    op: LayerKind
    in_layout: Layout
    out_layout: Layout

    def __post_init__(self):
        if self.op not in (LayerKind.DW, LayerKind.PW):
            raise ValueError(f"kernel variants exist for DW and PW only, got {self.op}")

    @property
    def name(self) -> str:
        return f"{self.op.value}-{self.in_layout.value}/{self.out_layout.value}"


def variants_for(op: LayerKind) -> list[KernelVariant]:
    """All four layout variants of one operator."""
    return [
        KernelVariant(op, il, ol)
        for il in (Layout.CHW, Layout.HWC)
        for ol in (Layout.CHW, Layout.HWC)
    ]


# Layout that gives each operator contiguous element access.  Depthwise walks
# one channel plane at a time (CHW); pointwise walks all channels of one
# pixel at a time (HWC).
_CONTIGUOUS_FOR = {LayerKind.DW: Layout.CHW, LayerKind.PW: Layout.HWC}


@dataclass
class KernelStats:
    """Work decomposition and access profile of one kernel invocation."""

    op: LayerKind
    work_units: int
    macs: int
    contig_loads: int = 0
    strided_loads: int = 0
    contig_stores: int = 0
    strided_stores: int = 0
    invocations: int = 1

    def __add__(self, other: "KernelStats") -> "KernelStats":
        if other.op is not self.op:
            raise ValueError("cannot merge stats of different operators")
        return KernelStats(
            self.op,
            self.work_units + other.work_units,
            self.macs + other.macs,
            self.contig_loads + other.contig_loads,
            self.strided_loads + other.strided_loads,
            self.contig_stores + other.contig_stores,
            self.strided_stores + other.strided_stores,
            self.invocations + other.invocations,
        )


def work_units(op: LayerKind, g: LayerGeometry) -> int:
    """Parallel work units of one whole layer (see module docstring)."""
    if op is LayerKind.DW:
        return g.c
    if op is LayerKind.PW:
        return 2 * g.ox
    # Plumbing for the remaining kinds so whole networks can be costed.
    if op is LayerKind.STD_CONV:
        return 2 * g.ox
    if op is LayerKind.POOL:
        return g.c
    if op is LayerKind.ADD:
        return 2 * g.ox
    if op is LayerKind.FC:
        return 2
    raise ValueError(f"unknown op {op}")


def analyze(
    variant: KernelVariant,
    g: LayerGeometry,
    out_rows: int | None = None,
    out_channels: int | None = None,
) -> KernelStats:
    """Analytical stats for running ``variant`` over a (slice of a) layer.

    ``out_rows``/``out_channels`` restrict the computed output slab; loads are
    one per MAC (the operand fetch), stores one per output element.
    """
    rows = g.ox if out_rows is None else out_rows
    chans = g.k if out_channels is None else out_channels
    if variant.op is LayerKind.DW:
        units = chans
        macs = chans * rows * g.oy * g.fx * g.fy
        outs = chans * rows * g.oy
    else:
        units = 2 * rows
        macs = chans * rows * g.oy * g.c
        outs = chans * rows * g.oy
    loads_contig = variant.in_layout is _CONTIGUOUS_FOR[variant.op]
    stores_contig = variant.out_layout is _CONTIGUOUS_FOR[variant.op]
    return KernelStats(
        variant.op,
        work_units=units,
        macs=macs,
        contig_loads=macs if loads_contig else 0,
        strided_loads=0 if loads_contig else macs,
        contig_stores=outs if stores_contig else 0,
        strided_stores=0 if stores_contig else outs,
    )


def analyze_plain(g: LayerGeometry, out_rows: int | None = None) -> KernelStats:
    """Stats for the non-DW/PW kinds (conv stem, pool, add, classifier).

    These always run in their natural layout, so accesses count as contiguous.
    """
    rows = g.ox if out_rows is None else out_rows
    scale = rows / g.ox if g.ox else 1.0
    ops = int(round(op_count(g) * scale))
    outs = int(round(g.out_elems * scale))
    units = work_units(g.kind, g)
    if g.kind in (LayerKind.STD_CONV, LayerKind.ADD):
        units = 2 * rows
    return KernelStats(g.kind, work_units=units, macs=ops, contig_loads=ops, contig_stores=outs)


def run_dw(
    variant: KernelVariant,
    inp: TensorBuf,
    w: WeightsBuf,
    q: QuantParams,
    g: LayerGeometry,
) -> tuple[TensorBuf, KernelStats]:
    """Depthwise kernel: one work unit per channel, bit-exact with ref_dw
    modulo output layout.

    Units execute in a fixed order and write disjoint output slices, so the
    result is identical no matter how many simulated cores pick units up.
    """
    if variant.op is not LayerKind.DW:
        raise ValueError("run_dw requires a DW variant")
    if inp.layout is not variant.in_layout:
        raise ValueError(f"input layout {inp.layout} != variant layout {variant.in_layout}")
    if inp.dims != (g.ix, g.iy, g.c):
        raise ValueError(f"input dims {inp.dims} do not match geometry")
    x = inp.to_array()
    filters = w.dw_filters()
    out = np.empty((g.ox, g.oy, g.c), dtype=np.int8)
    pad_h, pad_w = g.ix + 2 * g.p, g.iy + 2 * g.p
    plane = np.zeros((pad_h, pad_w), dtype=np.int64)
    for ch in range(g.c):  # one unit per channel
        plane[:] = 0
        plane[g.p:g.p + g.ix, g.p:g.p + g.iy] = x[:, :, ch]
        acc = np.zeros((g.ox, g.oy), dtype=np.int64)
        for i in range(g.fx):
            for j in range(g.fy):
                acc += int(filters[ch, i, j]) * plane[
                    i:i + g.s * (g.ox - 1) + 1:g.s, j:j + g.s * (g.oy - 1) + 1:g.s
                ]
        out[:, :, ch] = requantize(acc, q.slice(ch, ch + 1), channel_axis=0)
    return TensorBuf.from_array(out, variant.out_layout), analyze(variant, g)


def run_pw(
    variant: KernelVariant,
    inp: TensorBuf,
    w: WeightsBuf,
    q: QuantParams,
    g: LayerGeometry,
) -> tuple[TensorBuf, KernelStats]:
    """Pointwise kernel: two work units per output row (half-rows), bit-exact
    with ref_pw modulo output layout."""
    if variant.op is not LayerKind.PW:
        raise ValueError("run_pw requires a PW variant")
    if inp.layout is not variant.in_layout:
        raise ValueError(f"input layout {inp.layout} != variant layout {variant.in_layout}")
    if inp.dims != (g.ix, g.iy, g.c):
        raise ValueError(f"input dims {inp.dims} do not match geometry")
    x = inp.to_array()[::g.s, ::g.s, :]
    matrix = w.pw_matrix().astype(np.int64)
    out = np.empty((g.ox, g.oy, g.k), dtype=np.int8)
    half = (g.oy + 1) // 2
    for row in range(g.ox):
        for lo, hi in ((0, half), (half, g.oy)):  # two half-row units per row
            if lo == hi:
                continue
            acc = x[row, lo:hi, :].astype(np.int64) @ matrix.T
            out[row, lo:hi, :] = requantize(acc, q)
    return TensorBuf.from_array(out, variant.out_layout), analyze(variant, g)
