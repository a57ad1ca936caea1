"""Dense int8 tensors with explicit memory layout, weights, and requantization.

Two layouts are supported for activation tensors:

* ``HWC`` -- height-major, channels innermost: flat index of element
  ``(y, x, c)`` is ``((y * w) + x) * ch + c`` (``y`` = row, ``x`` = column).
* ``CHW`` -- channel-major, width innermost: flat index is
  ``(c * h + y) * w + x``.

Layout changes how a kernel walks memory, never which values it sees; all
numeric code in this package works on the logical ``(h, w, ch)`` view.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import LayerGeometry, LayerKind

INT8_MIN = -128
INT8_MAX = 127


class Layout(Enum):
    CHW = "chw"
    HWC = "hwc"


def flat_index(layout: Layout, dims: tuple[int, int, int], y: int, x: int, c: int) -> int:
    """Flat offset of logical element (row y, col x, channel c)."""
    h, w, ch = dims
    if layout is Layout.HWC:
        return (y * w + x) * ch + c
    return (c * h + y) * w + x


@dataclass
class TensorBuf:
    """A dense int8 tensor: logical dims (h, w, ch), a layout tag and flat data."""

    dims: tuple[int, int, int]
    layout: Layout
    data: np.ndarray

    def __post_init__(self):
        h, w, ch = self.dims
        self.data = np.ascontiguousarray(self.data, dtype=np.int8).ravel()
        if self.data.size != h * w * ch:
            raise ValueError(
                f"data length {self.data.size} != h*w*ch = {h * w * ch}"
            )

    @property
    def nbytes(self) -> int:
        return self.data.size

    def to_array(self) -> np.ndarray:
        """Logical (h, w, ch) view of the data (no copy where possible)."""
        h, w, ch = self.dims
        if self.layout is Layout.HWC:
            return self.data.reshape(h, w, ch)
        return self.data.reshape(ch, h, w).transpose(1, 2, 0)

    def at(self, y: int, x: int, c: int) -> int:
        return int(self.data[flat_index(self.layout, self.dims, y, x, c)])

    @classmethod
    def from_array(cls, arr: np.ndarray, layout: Layout) -> "TensorBuf":
        """Build from a logical (h, w, ch) array, serialising per ``layout``."""
        if arr.ndim != 3:
            raise ValueError(f"expected a (h, w, ch) array, got shape {arr.shape}")
        arr = arr.astype(np.int8, copy=False)
        if layout is Layout.HWC:
            flat = np.ascontiguousarray(arr).ravel()
        else:
            flat = np.ascontiguousarray(arr.transpose(2, 0, 1)).ravel()
        return cls(tuple(arr.shape), layout, flat)


def layout_convert(t: TensorBuf, target: Layout) -> TensorBuf:
    """Re-serialise a tensor into ``target`` layout; logical values unchanged.

    Converting twice is the identity.
    """
    if t.layout is target:
        return TensorBuf(t.dims, t.layout, t.data.copy())
    return TensorBuf.from_array(t.to_array(), target)


class PWOrder(Enum):
    """Storage order of pointwise weights: output-channel-major (KC) keeps one
    output channel's weights contiguous; CK keeps one input channel's."""

    KC = "kc"
    CK = "ck"


@dataclass
class WeightsBuf:
    """int8 weights for one layer.

    Depthwise/standard conv: logical shape (k, c_per_group, fx, fy) with
    c_per_group = 1 for depthwise.  Pointwise: logical (k, c), stored per
    ``pw_order``.
    """

    kind: LayerKind
    data: np.ndarray
    k: int
    c: int = 1
    fx: int = 1
    fy: int = 1
    pw_order: PWOrder = PWOrder.KC

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.int8).ravel()
        if self.data.size != self.expected_len():
            raise ValueError(
                f"weight length {self.data.size} != expected {self.expected_len()}"
            )

    def expected_len(self) -> int:
        if self.kind is LayerKind.DW:
            return self.k * self.fx * self.fy
        if self.kind is LayerKind.PW:
            return self.k * self.c
        if self.kind in (LayerKind.STD_CONV, LayerKind.FC):
            return self.k * self.c * self.fx * self.fy
        raise ValueError(f"no weights for layer kind {self.kind}")

    @property
    def nbytes(self) -> int:
        return self.data.size

    def dw_filters(self) -> np.ndarray:
        """(k, fx, fy) filter bank for a depthwise layer."""
        assert self.kind is LayerKind.DW
        return self.data.reshape(self.k, self.fx, self.fy)

    def pw_matrix(self) -> np.ndarray:
        """(k, c) mixing matrix for a pointwise layer, order-normalised."""
        assert self.kind is LayerKind.PW
        if self.pw_order is PWOrder.KC:
            return self.data.reshape(self.k, self.c)
        return self.data.reshape(self.c, self.k).T

    def conv_filters(self) -> np.ndarray:
        """(k, c, fx, fy) filters for a standard convolution."""
        assert self.kind in (LayerKind.STD_CONV, LayerKind.FC)
        return self.data.reshape(self.k, self.c, self.fx, self.fy)


@dataclass
class QuantParams:
    """Requantization parameters: per-output-channel 32-bit multiplier and
    bias, one per-layer right-shift.

    The requantization of a 32-bit accumulator is
    ``sat8(round((acc + bias) * mult / 2**shift))`` with round-to-nearest
    implemented by adding ``1 << (shift - 1)`` before the arithmetic shift
    (half-values round toward +inf), saturating into [-128, 127].
    """

    mult: np.ndarray
    shift: int
    bias: np.ndarray

    def __post_init__(self):
        self.mult = np.ascontiguousarray(self.mult, dtype=np.int32).ravel()
        self.bias = np.ascontiguousarray(self.bias, dtype=np.int32).ravel()
        if not (0 <= self.shift <= 31):
            raise ValueError(f"shift must be in [0, 31], got {self.shift}")
        if self.mult.size != self.bias.size:
            raise ValueError("mult and bias must have one entry per output channel")

    @property
    def channels(self) -> int:
        return self.mult.size

    @property
    def nbytes(self) -> int:
        # mult + bias, 4 B each per channel; the scalar shift is free.
        return 8 * self.channels

    def slice(self, lo: int, hi: int) -> "QuantParams":
        return QuantParams(self.mult[lo:hi], self.shift, self.bias[lo:hi])

    @classmethod
    def identity(cls, channels: int) -> "QuantParams":
        return cls(np.ones(channels, np.int32), 0, np.zeros(channels, np.int32))


def requantize(acc: np.ndarray, q: QuantParams, channel_axis: int = -1) -> np.ndarray:
    """Map 32-bit accumulators to int8 per the scheme documented on QuantParams.

    ``acc`` may have any shape; ``channel_axis`` selects the axis that the
    per-channel mult/bias broadcast over.  Intermediate math runs in int64,
    which cannot overflow for int32 operands.
    """
    acc = np.asarray(acc, dtype=np.int64)
    shape = [1] * acc.ndim
    shape[channel_axis] = q.channels
    mult = q.mult.astype(np.int64).reshape(shape)
    bias = q.bias.astype(np.int64).reshape(shape)
    v = (acc + bias) * mult
    if q.shift > 0:
        v = (v + (1 << (q.shift - 1))) >> q.shift
    return np.clip(v, INT8_MIN, INT8_MAX).astype(np.int8)
