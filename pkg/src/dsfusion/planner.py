"""Per-block fusion strategy selection for whole networks.

Candidate blocks are the maximal non-overlapping депthwise/pointwise pairs
found by one left-to-right scan of the layer list.  A PW-DW-PW bottleneck is
one slot carrying *two* overlapping fused candidates (PW+DW or DW+PW, sharing
the middle depthwise); the search never fuses both.  Residual adds, pooling
and classifier layers always run unfused.

Planning works in three steps:

1. three whole-network seed variants are simulated: all layers unfused, every
   feasible DW-PW candidate fused, every feasible PW-DW candidate fused;
2. per slot, each fused candidate is compared with the unfused execution of
   its member layers and the better one kept (ties prefer unfused), yielding
   two partially-fused graphs;
3. an exhaustive search over all 2^M per-slot combinations of those two
   graphs picks the plan minimising the objective.  Slot costs are
   independent, so the search space contains the true per-slot optimum and
   the result is never worse than any seed.

The returned plan embeds the network, the hierarchy, per-entry tiling
solutions and predicted cost reports; replaying it through the memory
simulator reproduces those reports exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .fused import DEFAULT_DWPW, DEFAULT_PWDW, FusedOrder, FusedScheme, FusedTiling
from .geometry import LayerGeometry, LayerKind
from .hierarchy import MemHierarchy
from .memsim import CostReport, execute_schedule
from .network import NetworkGraph, graph_from_text, graph_to_text
from .tensors import Layout
from .tiling import (
    InfeasibleError,
    TilingSolution,
    build_block_schedule,
    build_layer_schedule,
    tile_fused_block,
    tile_unfused_layer,
)

SEARCH_CAP = 24  # slots; 2^M combinations are enumerated explicitly

OBJECTIVES = ("latency", "transfers")


class PlanError(RuntimeError):
    pass


@dataclass(frozen=True)
class BlockSlot:
    """One fusion decision point: the covered layer ids and the layer pairs
    of the available fused candidates."""

    index: int
    layer_ids: tuple[int, ...]
    dwpw_pair: tuple[int, int] | None
    pwdw_pair: tuple[int, int] | None


def scan_block_slots(net: NetworkGraph) -> list[BlockSlot]:
    gs = net.geometries()
    slots = []
    i = 0
    while i < len(gs) - 1:
        a, b = gs[i].kind, gs[i + 1].kind
        if a is LayerKind.DW and b is LayerKind.PW:
            slots.append(BlockSlot(len(slots), (i, i + 1), (i, i + 1), None))
            i += 2
        elif a is LayerKind.PW and b is LayerKind.DW:
            if i + 2 < len(gs) and gs[i + 2].kind is LayerKind.PW:
                slots.append(BlockSlot(len(slots), (i, i + 1, i + 2),
                                       (i + 1, i + 2), (i, i + 1)))
                i += 3
            else:
                slots.append(BlockSlot(len(slots), (i, i + 1), None, (i, i + 1)))
                i += 2
        else:
            i += 1
    return slots


STRATEGY_LABELS = {
    (FusedOrder.DWPW, FusedTiling.ROWS): "fused-dwpw-rows",
    (FusedOrder.PWDW, FusedTiling.CHANNELS): "fused-pwdw-channels",
    (FusedOrder.PWDW, FusedTiling.ROWS): "fused-pwdw-rows",
}


@dataclass
class PlanEntry:
    layers: tuple[int, ...]
    strategy: str  # "unfused" or a fused strategy label
    solution: TilingSolution
    report: CostReport

    def to_json(self) -> dict:
        return {
            "layers": list(self.layers),
            "strategy": self.strategy,
            "solution": self.solution.to_json(),
            "report": self.report.to_json(),
        }


@dataclass
class SlotOption:
    """One way to execute a slot: its entries and their summed report."""

    label: str  # "unfused" | "dwpw" | "pwdw"
    entries: list[PlanEntry]
    report: CostReport


@dataclass
class FusionPlan:
    network: NetworkGraph
    hierarchy: MemHierarchy
    objective: str
    entries: list[PlanEntry]
    totals: CostReport
    seeds: dict[str, CostReport]
    combinations_searched: int

    def fused_entries(self) -> list[PlanEntry]:
        return [e for e in self.entries if e.strategy != "unfused"]


def _metric(report: CostReport, objective: str) -> tuple:
    if objective == "latency":
        return (report.total_cycles, report.ledger.total_bytes, report.ledger.amt_bytes)
    return (report.ledger.amt_bytes, report.ledger.total_bytes, report.total_cycles)


def _layer_entry(net, i, h, cache) -> PlanEntry:
    if i not in cache:
        g = net.layers[i].geometry
        sol = tile_unfused_layer(g, h)
        report = execute_schedule(build_layer_schedule(g, sol, h), h)
        cache[i] = PlanEntry((i,), "unfused", sol, report)
    return cache[i]


def _fused_option(net, pair, scheme, h) -> SlotOption | None:
    g_a = net.layers[pair[0]].geometry
    g_b = net.layers[pair[1]].geometry
    try:
        sol = tile_fused_block(g_a, g_b, scheme, h)
    except InfeasibleError:
        return None
    report = execute_schedule(build_block_schedule(g_a, g_b, sol, h), h)
    label = STRATEGY_LABELS[(scheme.order, scheme.tiling)]
    return SlotOption("fused", [PlanEntry(pair, label, sol, report)], report)


def _slot_options(net, slot, h, cache, scheme_dwpw, scheme_pwdw):
    """(unfused, dwpw-or-None, pwdw-or-None) options covering all slot layers."""
    unfused_entries = [_layer_entry(net, i, h, cache) for i in slot.layer_ids]
    unfused = SlotOption("unfused", unfused_entries,
                         _sum_reports(e.report for e in unfused_entries))
    dwpw = pwdw = None
    if slot.dwpw_pair is not None:
        opt = _fused_option(net, slot.dwpw_pair, scheme_dwpw, h)
        if opt is not None:
            extra = [i for i in slot.layer_ids if i not in slot.dwpw_pair]
            entries = [_layer_entry(net, i, h, cache) for i in extra] + opt.entries
            entries.sort(key=lambda e: e.layers[0])
            dwpw = SlotOption("dwpw", entries, _sum_reports(e.report for e in entries))
    if slot.pwdw_pair is not None:
        opt = _fused_option(net, slot.pwdw_pair, scheme_pwdw, h)
        if opt is not None:
            extra = [i for i in slot.layer_ids if i not in slot.pwdw_pair]
            entries = [_layer_entry(net, i, h, cache) for i in extra] + opt.entries
            entries.sort(key=lambda e: e.layers[0])
            pwdw = SlotOption("pwdw", entries, _sum_reports(e.report for e in entries))
    return unfused, dwpw, pwdw


def _sum_reports(reports) -> CostReport:
    total = None
    for r in reports:
        total = r if total is None else total + r
    if total is None:
        raise ValueError("no reports to sum")
    return total


def _better(a: SlotOption, b: SlotOption, objective: str) -> SlotOption:
    """Lower metric wins; ties prefer the unfused option."""
    ka = (_metric(a.report, objective), 0 if a.label == "unfused" else 1)
    kb = (_metric(b.report, objective), 0 if b.label == "unfused" else 1)
    return a if ka <= kb else b


def optimize(
    net: NetworkGraph,
    h: MemHierarchy,
    objective: str = "latency",
    scheme_dwpw: FusedScheme = DEFAULT_DWPW,
    scheme_pwdw: FusedScheme = DEFAULT_PWDW,
    search_cap: int = SEARCH_CAP,
) -> FusionPlan:
    """Select the per-slot fusion strategy minimising the objective."""
    if objective not in OBJECTIVES:
        raise PlanError(f"objective must be one of {OBJECTIVES}, got {objective!r}")
    slots = scan_block_slots(net)
    if len(slots) > search_cap:
        raise PlanError(
            f"{len(slots)} candidate blocks exceed the exhaustive-search cap "
            f"({search_cap}); raise search_cap to proceed (2^M combinations are "
            f"enumerated)"
        )
    cache: dict[int, PlanEntry] = {}
    slot_layer_ids = {i for s in slots for i in s.layer_ids}
    single_entries = [
        _layer_entry(net, i, h, cache)
        for i in range(len(net.layers)) if i not in slot_layer_ids
    ]

    per_slot = [_slot_options(net, s, h, cache, scheme_dwpw, scheme_pwdw) for s in slots]

    # Seed variants: all unfused / fuse every feasible candidate of one order.
    seeds = {
        "all-unfused": _sum_all(single_entries, [u for u, _, _ in per_slot]),
        "all-dwpw": _sum_all(single_entries, [d or u for u, d, _ in per_slot]),
        "all-pwdw": _sum_all(single_entries, [p or u for u, _, p in per_slot]),
    }

    # Step 2: per-slot comparison against unfused, per candidate order.
    graph_a = [_better(d, u, objective) if d else u for u, d, _ in per_slot]
    graph_b = [_better(p, u, objective) if p else u for u, _, p in per_slot]

    # Step 3: exhaustive 2^M search over the two partially-fused graphs.
    base = _metric(_sum_all(single_entries, []), objective) if single_entries else None
    combos: list[tuple[tuple, int]] = [(base or (0.0, 0, 0), 0)]
    for idx, (opt_a, opt_b) in enumerate(zip(graph_a, graph_b)):
        ma, mb = _metric(opt_a.report, objective), _metric(opt_b.report, objective)
        combos = [
            (_tuple_add(m, pick), bits | (which << idx))
            for m, bits in combos
            for which, pick in ((0, ma), (1, mb))
        ]
    best_metric, best_bits = min(combos)
    chosen = [
        (graph_a if not (best_bits >> i) & 1 else graph_b)[i]
        for i in range(len(slots))
    ]

    entries = list(single_entries)
    for opt in chosen:
        entries.extend(opt.entries)
    entries.sort(key=lambda e: e.layers[0])
    totals = _sum_reports(e.report for e in entries)
    return FusionPlan(net, h, objective, entries, totals, seeds, 2 ** len(slots))


def _tuple_add(a: tuple, b: tuple) -> tuple:
    return tuple(x + y for x, y in zip(a, b))


def _sum_all(singles, options) -> CostReport:
    reports = [e.report for e in singles]
    for opt in options:
        reports.extend(e.report for e in opt.entries)
    return _sum_reports(reports)


# --- plan files ---------------------------------------------------------------

PLAN_FORMAT = "dsfusion-plan"
PLAN_VERSION = 1


def plan_to_json(plan: FusionPlan) -> dict:
    return {
        "format": PLAN_FORMAT,
        "version": PLAN_VERSION,
        "objective": plan.objective,
        "network": {
            "name": plan.network.name,
            "layers": len(plan.network.layers),
            "graph": graph_to_text(plan.network),
        },
        "hierarchy": plan.hierarchy.to_json(),
        "combinations_searched": plan.combinations_searched,
        "entries": [e.to_json() for e in plan.entries],
        "totals": plan.totals.to_json(),
        "seeds": {name: r.to_json() for name, r in sorted(plan.seeds.items())},
    }


def save_plan(plan: FusionPlan, path: str | Path):
    Path(path).write_text(json.dumps(plan_to_json(plan), indent=2, sort_keys=True) + "\n")


def load_plan(path: str | Path) -> dict:
    try:
        obj = json.loads(Path(path).read_text())
    except OSError as e:
        raise PlanError(f"cannot read plan file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise PlanError(f"plan file {path} is not valid JSON: {e}") from e
    if obj.get("format") != PLAN_FORMAT or obj.get("version") != PLAN_VERSION:
        raise PlanError("not a recognised plan file")
    return obj


def solution_from_json(obj: dict, geoms: tuple) -> TilingSolution:
    scheme = None
    if "scheme" in obj:
        s = obj["scheme"]
        scheme = FusedScheme(
            FusedOrder(s["order"]), FusedTiling(s["tiling"]),
            Layout(s["layouts"][0]), Layout(s["layouts"][1]), Layout(s["layouts"][2]),
            s["fd"],
        )
    return TilingSolution(
        strategy=obj["strategy"], geometry=geoms, scheme=scheme,
        rows=obj["rows"], kt=obj["kt"], fd=obj["fd"], loop_order=obj["loop_order"],
        in_resident=obj["in_resident"], in_chunk_rows=obj["in_chunk_rows"],
        out_chunk_rows=obj["out_chunk_rows"], n_tiles=tuple(obj["n_tiles"]),
        resident_bytes=obj["resident_bytes"], breakdown=dict(obj["breakdown"]),
    )


def replay_entry(entry_obj: dict, net: NetworkGraph, h: MemHierarchy) -> CostReport:
    """Re-execute one plan entry's schedule; used to verify stored reports."""
    ids = entry_obj["layers"]
    geoms = tuple(net.layers[i].geometry for i in ids)
    sol = solution_from_json(entry_obj["solution"], geoms)
    if sol.strategy == "unfused":
        sched = build_layer_schedule(geoms[0], sol, h)
    else:
        sched = build_block_schedule(geoms[0], geoms[1], sol, h)
    return execute_schedule(sched, h)


def plan_network(obj: dict) -> NetworkGraph:
    return graph_from_text(obj["network"]["graph"])


def plan_hierarchy(obj: dict) -> MemHierarchy:
    return MemHierarchy.from_json(obj["hierarchy"])
