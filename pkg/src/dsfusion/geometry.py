"""Convolution layer geometry and basic operation/parameter arithmetic.

Notation follows the usual embedded-inference convention: ``ix``/``iy`` are
input rows/columns, ``ox``/``oy`` output rows/columns, ``c``/``k`` input/output
channels, ``fx``/``fy`` filter height/width, ``p`` symmetric zero padding and
``s`` stride.  ``x`` always indexes rows (height), ``y`` columns (width).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum


class GeometryError(ValueError):
    """Raised for ill-formed layer geometries."""


class LayerKind(Enum):
    DW = "dw"
    PW = "pw"
    STD_CONV = "conv"
    ADD = "add"
    POOL = "pool"
    FC = "fc"


_CONV_KINDS = (LayerKind.DW, LayerKind.PW, LayerKind.STD_CONV)


def conv_out_extent(in_extent: int, f: int, p: int, s: int) -> int:
    """Output extent along one axis: floor((in + 2p - f) / s) + 1."""
    if f > in_extent + 2 * p:
        raise GeometryError(
            f"filter extent {f} exceeds padded input extent {in_extent + 2 * p}"
        )
    return (in_extent + 2 * p - f) // s + 1


@dataclass(frozen=True)
class LayerGeometry:
    """Hyperparameters of one layer.

    ``ox``/``oy`` are stored redundantly and validated against the output-size
    law so that network descriptions are self-checking.
    """

    kind: LayerKind
    ix: int
    iy: int
    c: int
    ox: int
    oy: int
    k: int
    fx: int = 1
    fy: int = 1
    p: int = 0
    s: int = 1

    def __post_init__(self):
        for name in ("ix", "iy", "c", "ox", "oy", "k", "fx", "fy", "s"):
            if getattr(self, name) < 1:
                raise GeometryError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.p < 0:
            raise GeometryError(f"padding must be >= 0, got {self.p}")
        if self.kind is LayerKind.DW and self.k != self.c:
            raise GeometryError(f"depthwise layer requires k == c, got k={self.k} c={self.c}")
        if self.kind is LayerKind.PW:
            if self.fx != 1 or self.fy != 1 or self.p != 0:
                raise GeometryError("pointwise layer requires fx = fy = 1 and p = 0")
            if self.s not in (1, 2):
                raise GeometryError(f"pointwise stride must be 1 or 2, got {self.s}")
        if self.kind in (LayerKind.ADD, LayerKind.FC) and (self.ix, self.iy) != (self.ox, self.oy) and self.kind is LayerKind.ADD:
            raise GeometryError("add layer must preserve spatial dims")
        if self.kind is not LayerKind.FC:
            expect = output_dims(self, _validate=False)
            if (self.ox, self.oy) != expect:
                raise GeometryError(
                    f"stored output dims ({self.ox}, {self.oy}) violate the output-size "
                    f"law, expected {expect}"
                )

    @property
    def in_elems(self) -> int:
        return self.ix * self.iy * self.c

    @property
    def out_elems(self) -> int:
        return self.ox * self.oy * self.k

    def with_input(self, ix: int, iy: int) -> "LayerGeometry":
        """Same layer re-derived for a different input resolution."""
        ox = conv_out_extent(ix, self.fx, self.p, self.s)
        oy = conv_out_extent(iy, self.fy, self.p, self.s)
        return replace(self, ix=ix, iy=iy, ox=ox, oy=oy)


def output_dims(g: LayerGeometry, _validate: bool = True) -> tuple[int, int]:
    """Output (rows, cols) from the floor-law.  Matches the stored ``ox``/``oy``."""
    if g.kind is LayerKind.FC:
        return (1, 1)
    ox = conv_out_extent(g.ix, g.fx, g.p, g.s)
    oy = conv_out_extent(g.iy, g.fy, g.p, g.s)
    if _validate and (ox, oy) != (g.ox, g.oy):
        raise GeometryError(f"geometry stores ({g.ox}, {g.oy}), law gives ({ox}, {oy})")
    return ox, oy


def mac_count(g: LayerGeometry) -> int:
    """Multiply-accumulate count of one convolution layer.

    Standard convolution: k*ox*oy*c*fx*fy; depthwise: c*ox*oy*fx*fy (one
    filter per channel); pointwise: k*ox*oy*c.
    """
    if g.kind is LayerKind.STD_CONV:
        return g.k * g.ox * g.oy * g.c * g.fx * g.fy
    if g.kind is LayerKind.DW:
        return g.c * g.ox * g.oy * g.fx * g.fy
    if g.kind is LayerKind.PW:
        return g.k * g.ox * g.oy * g.c
    raise GeometryError(f"mac_count is defined for conv kinds only, got {g.kind}")


def weight_bytes(g: LayerGeometry) -> int:
    """Weight storage in bytes (one byte per 8-bit weight)."""
    if g.kind is LayerKind.STD_CONV:
        return g.k * g.c * g.fx * g.fy
    if g.kind is LayerKind.DW:
        return g.c * g.fx * g.fy
    if g.kind is LayerKind.PW:
        return g.k * g.c
    raise GeometryError(f"weight_bytes is defined for conv kinds only, got {g.kind}")


def op_count(g: LayerGeometry) -> int:
    """Modeled arithmetic ops for any layer kind (MACs for convs, element ops
    for add/pool, k*c for the classifier).  Used by the cost model."""
    if g.kind in _CONV_KINDS:
        return mac_count(g)
    if g.kind is LayerKind.ADD:
        return g.ox * g.oy * g.k
    if g.kind is LayerKind.POOL:
        return g.ox * g.oy * g.k * g.fx * g.fy
    if g.kind is LayerKind.FC:
        return g.k * g.c
    raise GeometryError(f"unknown layer kind {g.kind}")


def dw(ix, iy, c, fx=3, fy=3, p=1, s=1) -> LayerGeometry:
    """Convenience constructor for a depthwise layer."""
    ox = conv_out_extent(ix, fx, p, s)
    oy = conv_out_extent(iy, fy, p, s)
    return LayerGeometry(LayerKind.DW, ix, iy, c, ox, oy, c, fx, fy, p, s)


def pw(ix, iy, c, k, s=1) -> LayerGeometry:
    """Convenience constructor for a pointwise layer."""
    ox = conv_out_extent(ix, 1, 0, s)
    oy = conv_out_extent(iy, 1, 0, s)
    return LayerGeometry(LayerKind.PW, ix, iy, c, ox, oy, k, 1, 1, 0, s)


def conv(ix, iy, c, k, fx=3, fy=3, p=1, s=1) -> LayerGeometry:
    """Convenience constructor for a standard convolution."""
    ox = conv_out_extent(ix, fx, p, s)
    oy = conv_out_extent(iy, fy, p, s)
    return LayerGeometry(LayerKind.STD_CONV, ix, iy, c, ox, oy, k, fx, fy, p, s)
