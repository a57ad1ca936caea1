"""Execution of tiled schedules over the memory hierarchy.

A :class:`Schedule` is a flat list of steps -- buffer (de)allocations in L1,
byte transfers between levels, and kernel invocations.  Executing one walks
the steps, charges every byte moved to a :class:`TransferLedger` keyed by
(source level, destination level, tensor class), applies the compute cost
model to each kernel step, tracks peak L1 occupancy, and returns a
:class:`CostReport`.

Execution is deterministic: the same schedule and hierarchy always produce
the same report, and a report predicted at planning time is reproduced
exactly when the schedule is replayed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from math import ceil

from .hierarchy import Level, MemHierarchy
from .kernels import KernelStats


class TensorClass(Enum):
    ACTIVATION = "activation"
    WEIGHT = "weight"
    INTERMEDIATE = "intermediate"


class ScheduleError(RuntimeError):
    """Raised when a schedule is invalid, e.g. its resident set overflows L1."""


@dataclass
class TransferLedger:
    """Byte counters per (src level, dst level, tensor class)."""

    counts: dict = field(default_factory=dict)

    def add(self, src: Level, dst: Level, klass: TensorClass, nbytes: int):
        if nbytes < 0:
            raise ValueError("cannot move a negative number of bytes")
        key = (src, dst, klass)
        self.counts[key] = self.counts.get(key, 0) + nbytes

    def total(self, levels: frozenset | None = None,
              classes: tuple = ()) -> int:
        """Sum of bytes, optionally restricted to one level pair (unordered)
        and/or a set of tensor classes."""
        tot = 0
        for (src, dst, klass), n in self.counts.items():
            if levels is not None and {src, dst} != set(levels):
                continue
            if classes and klass not in classes:
                continue
            tot += n
        return tot

    @property
    def total_bytes(self) -> int:
        return sum(self.counts.values())

    @property
    def weight_bytes(self) -> int:
        return self.total(classes=(TensorClass.WEIGHT,))

    @property
    def activation_l2_l1(self) -> int:
        """Non-weight bytes moved between L2 and L1 (both directions)."""
        return self.total(levels=frozenset({Level.L1, Level.L2}),
                          classes=(TensorClass.ACTIVATION, TensorClass.INTERMEDIATE))

    @property
    def amt_bytes(self) -> int:
        """Activation memory transfers: all non-weight bytes moved between
        adjacent levels (L2<->L1, plus L3<->L2 when an L3 exists)."""
        return self.total(classes=(TensorClass.ACTIVATION, TensorClass.INTERMEDIATE))

    def merge(self, other: "TransferLedger") -> "TransferLedger":
        out = TransferLedger(dict(self.counts))
        for key, n in other.counts.items():
            out.counts[key] = out.counts.get(key, 0) + n
        return out

    def to_json(self) -> dict:
        return {
            f"{s.value}->{d.value}:{k.value}": n
            for (s, d, k), n in sorted(self.counts.items(),
                                       key=lambda kv: (kv[0][0].value, kv[0][1].value,
                                                       kv[0][2].value))
        }


# --- schedule steps ---------------------------------------------------------

@dataclass(frozen=True)
class Alloc:
    name: str
    nbytes: int


@dataclass(frozen=True)
class Free:
    name: str


@dataclass(frozen=True)
class Xfer:
    src: Level
    dst: Level
    klass: TensorClass
    nbytes: int
    repeat: int = 1


@dataclass(frozen=True)
class Kernel:
    """One (repeated) kernel invocation described by its work stats.

    ``shift_bytes`` charges the intermediate-buffer memmove of the shifting
    row-fused scheme to the compute side.
    """

    stats: KernelStats
    repeat: int = 1
    shift_bytes: int = 0


Schedule = list  # of Alloc | Free | Xfer | Kernel


@dataclass
class CostReport:
    macs: int
    compute_cycles: float
    transfer_cycles: float
    total_cycles: float
    ledger: TransferLedger
    peak_l1_bytes: int

    def __add__(self, other: "CostReport") -> "CostReport":
        ledger = self.ledger.merge(other.ledger)
        compute = self.compute_cycles + other.compute_cycles
        transfer = self.transfer_cycles + other.transfer_cycles
        return CostReport(
            macs=self.macs + other.macs,
            compute_cycles=compute,
            transfer_cycles=transfer,
            total_cycles=self.total_cycles + other.total_cycles,
            ledger=ledger,
            peak_l1_bytes=max(self.peak_l1_bytes, other.peak_l1_bytes),
        )

    def to_json(self) -> dict:
        return {
            "macs": self.macs,
            "compute_cycles": round(self.compute_cycles, 3),
            "transfer_cycles": round(self.transfer_cycles, 3),
            "total_cycles": round(self.total_cycles, 3),
            "peak_l1_bytes": self.peak_l1_bytes,
            "amt_bytes": self.ledger.amt_bytes,
            "weight_transfer_bytes": self.ledger.weight_bytes,
            "ledger": self.ledger.to_json(),
        }


ZERO_REPORT = CostReport(0, 0.0, 0.0, 0.0, TransferLedger(), 0)


def compute_cycles(stats: KernelStats, h: MemHierarchy, shift_bytes: int = 0) -> float:
    """Cycles for one kernel invocation under the multi-core model.

    Work units are scheduled in rounds of ``n_cores``; a round costs one full
    unit regardless of how many units it actually holds, which is what makes
    unit counts that are not a multiple of the core count waste capacity
    (the granularity cliffs the fused-dimension heuristics are built around).
    The per-unit cost combines arithmetic throughput with the strided-access
    penalties; every invocation also pays a fixed setup overhead.
    """
    cyc = h.tile_overhead_cycles * stats.invocations
    if stats.work_units:
        per_call_units = stats.work_units / stats.invocations
        rounds = ceil(per_call_units / h.n_cores) * stats.invocations
        unit_macs = stats.macs / stats.work_units
        unit_penalty = (
            stats.strided_loads * h.strided_load_penalty
            + stats.strided_stores * h.strided_store_penalty
        ) / stats.work_units
        unit_cost = unit_macs / h.macs_per_cycle_per_core + unit_penalty
        cyc += rounds * unit_cost
    cyc += shift_bytes * h.shift_cost_per_byte
    return cyc


def transfer_cycles(ledger: TransferLedger, h: MemHierarchy) -> float:
    """Linear per-byte transfer cost, summed over level pairs."""
    cyc = 0.0
    for (src, dst, _klass), nbytes in ledger.counts.items():
        cyc += nbytes * h.xfer_cost(src, dst)
    return cyc


def combine_cycles(compute: float, transfer: float, h: MemHierarchy) -> float:
    """Total latency given the hierarchy's compute/transfer overlap factor."""
    return compute + transfer - h.overlap_factor * min(compute, transfer)


def execute_schedule(schedule: Schedule, h: MemHierarchy) -> CostReport:
    """Walk a schedule, accounting every byte and cycle.

    Raises :class:`ScheduleError` if the resident set ever exceeds the L1
    budget or a Free names an unknown buffer.
    """
    ledger = TransferLedger()
    live: dict[str, int] = {}
    l1_now = 0
    peak = 0
    comp = 0.0
    macs = 0
    for step in schedule:
        if isinstance(step, Alloc):
            if step.name in live:
                raise ScheduleError(f"buffer {step.name!r} allocated twice")
            live[step.name] = step.nbytes
            l1_now += step.nbytes
            peak = max(peak, l1_now)
            if l1_now > h.l1_bytes:
                raise ScheduleError(
                    f"L1 overflow: {l1_now} B resident > budget {h.l1_bytes} B "
                    f"(allocating {step.name!r})"
                )
        elif isinstance(step, Free):
            if step.name not in live:
                raise ScheduleError(f"free of unknown buffer {step.name!r}")
            l1_now -= live.pop(step.name)
        elif isinstance(step, Xfer):
            ledger.add(step.src, step.dst, step.klass, step.nbytes * step.repeat)
        elif isinstance(step, Kernel):
            # shift_bytes are totals for the whole step, not per repetition
            comp += step.repeat * compute_cycles(step.stats, h)
            comp += step.shift_bytes * h.shift_cost_per_byte
            macs += step.stats.macs * step.repeat
        else:
            raise ScheduleError(f"unknown schedule step {step!r}")
    xfer = transfer_cycles(ledger, h)
    total = combine_cycles(comp, xfer, h)
    return CostReport(macs, comp, xfer, total, ledger, peak)
