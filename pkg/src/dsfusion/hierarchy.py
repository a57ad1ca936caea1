"""Memory hierarchy description and cost-model constants.

Three scratchpad levels: a small fast L1 the kernels compute from, a larger
L2 that stages activations and weights, and an optional L3 (external RAM or
flash, ``l3_bytes = 0`` when absent).  Transfers are explicit (DMA-style);
there are no caches.

All cost constants are abstract, documented model parameters -- defaults are
plausible for a small multi-core MCU cluster but are not measurements of any
particular chip:

* ``macs_per_cycle_per_core`` -- arithmetic throughput of one core.
* ``l2_l1_cost_per_byte`` / ``l3_l2_cost_per_byte`` -- cycles per byte moved
  across each level pair; moving a byte from L3 is never cheaper than from L2.
* ``strided_load_penalty`` / ``strided_store_penalty`` -- extra cycles per
  strided element access inside a kernel.  Loads are penalised more than
  stores: output-stationary kernels write each output once but re-read
  inputs many times.
* ``tile_overhead_cycles`` -- fixed per-kernel-invocation cost (setup,
  control flow, core fork/join); this is what makes many tiny tiles slower
  than few large ones.
* ``shift_cost_per_byte`` -- cost of the intermediate-buffer memmove used by
  the shifting row-fused scheme.
* ``overlap_factor`` -- 0 means compute and transfer serialise (default);
  1 means perfect double-buffered overlap.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path


class Level(Enum):
    L1 = "l1"
    L2 = "l2"
    L3 = "l3"


@dataclass(frozen=True)
class MemHierarchy:
    l1_bytes: int
    l2_bytes: int
    l3_bytes: int = 0
    n_cores: int = 8
    macs_per_cycle_per_core: float = 2.0
    l2_l1_cost_per_byte: float = 0.25
    l3_l2_cost_per_byte: float = 1.0
    strided_load_penalty: float = 0.4
    strided_store_penalty: float = 0.1
    tile_overhead_cycles: float = 400.0
    shift_cost_per_byte: float = 0.25
    overlap_factor: float = 0.0

    def __post_init__(self):
        if self.l1_bytes >= self.l2_bytes:
            raise ValueError("l1 must be smaller than l2")
        if self.n_cores < 1 or self.n_cores % 2:
            raise ValueError("n_cores must be a positive even number")
        for name in ("l2_l1_cost_per_byte", "l3_l2_cost_per_byte",
                     "strided_load_penalty", "strided_store_penalty",
                     "tile_overhead_cycles", "shift_cost_per_byte"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.l3_l2_cost_per_byte < self.l2_l1_cost_per_byte:
            raise ValueError("a byte from L3 cannot cost less than one from L2")
        if not 0.0 <= self.overlap_factor <= 1.0:
            raise ValueError("overlap_factor must be in [0, 1]")
        if self.macs_per_cycle_per_core <= 0:
            raise ValueError("macs_per_cycle_per_core must be positive")

    @property
    def has_l3(self) -> bool:
        return self.l3_bytes > 0

    def xfer_cost(self, a: Level, b: Level) -> float:
        pair = {a, b}
        if pair == {Level.L1, Level.L2}:
            return self.l2_l1_cost_per_byte
        if pair == {Level.L2, Level.L3}:
            return self.l3_l2_cost_per_byte
        raise ValueError(f"no direct path between {a} and {b}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "MemHierarchy":
        return cls(**obj)


def gap8() -> MemHierarchy:
    """Preset for an 8-core cluster with 64 kB L1, 512 kB L2 and 8 MB external
    memory."""
    return MemHierarchy(l1_bytes=64 * 1024, l2_bytes=512 * 1024, l3_bytes=8 * 1024 * 1024)


def bench_l1() -> MemHierarchy:
    """Kernel-benchmark preset: L1 grown to 1 MB so whole blocks sit in L1 and
    only compute-side non-idealities remain visible."""
    return MemHierarchy(l1_bytes=1024 * 1024, l2_bytes=8 * 1024 * 1024,
                        l3_bytes=64 * 1024 * 1024)


_PRESETS = {"gap8": gap8, "bench-l1": bench_l1}


def load_hierarchy(name_or_path: str) -> MemHierarchy:
    """Resolve a preset name or read a JSON config file.

    The file schema is a flat JSON object whose keys are exactly the
    MemHierarchy fields.
    """
    if name_or_path in _PRESETS:
        return _PRESETS[name_or_path]()
    path = Path(name_or_path)
    try:
        obj = json.loads(path.read_text())
    except OSError as e:
        raise FileNotFoundError(f"unknown hierarchy preset or file: {name_or_path}") from e
    return MemHierarchy.from_json(obj)


def save_hierarchy(h: MemHierarchy, path: str | Path):
    Path(path).write_text(json.dumps(h.to_json(), indent=2, sort_keys=True) + "\n")
