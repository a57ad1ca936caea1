"""Tile-size selection under the L1 budget, for single layers and fused blocks.

The resident-set accounting is the single source of truth shared by the
fusion-feasibility check, the tiler and the schedule builders:

* Unfused layers tile over output rows and output channels (full-width row
  tiles keep the halo logic one-dimensional).  The loop order (rows-outer vs
  channels-outer) is chosen to minimise total bytes moved.
* ``DWPW / Rows`` blocks tile over ``fd`` intermediate rows; the intermediate
  always spans all channels (the pointwise needs every input channel), while
  the pointwise *output* channels may be sliced, re-streaming the pointwise
  weights once per row tile.
* ``PWDW / Channels`` blocks tile over ``fd`` intermediate channels; the
  pointwise input is kept L1-resident when it fits and otherwise re-streamed
  once per channel tile (the scheme's input-reuse loss).
* ``PWDW / Rows`` blocks tile over rows only: the channel dimension stays
  whole and both weight sets are fully resident.  Slicing channels here would
  re-stream the pointwise input per slice -- forfeiting exactly the input
  reuse this scheme exists for -- and would need shift-carry buffers spanning
  all channels anyway, so the engine never considers it.

All layers also keep their requantization parameters (8 B per output
channel) resident next to the weights.

Fused-dimension selection follows the per-scheme core-utilisation rules: the
fused dimension should be a multiple of ``n_cores/2`` (row-tiled DWPW, whose
pointwise splits rows in half), of ``n_cores`` (channel-tiled PWDW, whose
depthwise splits by channel), or of ``n_cores/2 + filter_rows - 1`` (row-tiled
PWDW, where each steady-state tile computes ``fd - (filter_rows-1)`` fresh
rows).  ``select_fd`` returns the smallest such multiple that fits the budget
-- the minimal value that keeps every core busy -- falling back to the
smallest legal ``fd`` when no multiple fits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil

from .fused import (
    FusedOrder,
    FusedScheme,
    FusedTiling,
    pwdw_row_walk,
    validate_chain,
)
from .geometry import LayerGeometry, LayerKind, weight_bytes
from .hierarchy import Level, MemHierarchy
from .kernels import KernelStats, KernelVariant, analyze, analyze_plain
from .memsim import Alloc, Free, Kernel, Schedule, TensorClass, Xfer


class InfeasibleError(RuntimeError):
    """No tiling of the requested execution fits the L1 budget."""


QUANT_BYTES_PER_CHANNEL = 8  # int32 multiplier + int32 bias


def layer_weight_bytes(g: LayerGeometry) -> int:
    if g.kind in (LayerKind.DW, LayerKind.PW, LayerKind.STD_CONV):
        return weight_bytes(g)
    if g.kind is LayerKind.FC:
        return g.k * g.c
    return 0


def layer_quant_bytes(g: LayerGeometry) -> int:
    if g.kind in (LayerKind.DW, LayerKind.PW, LayerKind.STD_CONV, LayerKind.FC):
        return QUANT_BYTES_PER_CHANNEL * g.k
    return 0


def _in_rows_for(g: LayerGeometry, r0: int, r1: int) -> int:
    """Input rows read to produce output rows [r0, r1), edge-clipped."""
    lo = max(r0 * g.s - g.p, 0)
    hi = min((r1 - 1) * g.s - g.p + g.fx, g.ix)
    return max(hi - lo, 0)


def _row_tiles(total: int, size: int) -> list[tuple[int, int]]:
    return [(t0, min(t0 + size, total)) for t0 in range(0, total, size)]


@dataclass
class TilingSolution:
    """A chosen execution: tile extents, fused dimension, tile counts, the
    resident-set byte breakdown and its total."""

    strategy: str  # "unfused" | "fused"
    geometry: tuple
    scheme: FusedScheme | None = None
    rows: int = 0
    kt: int = 0
    fd: int = 0
    loop_order: str = "rows"
    in_resident: bool = True
    in_chunk_rows: int = 0
    out_chunk_rows: int = 0
    n_tiles: tuple = (1, 1)
    resident_bytes: int = 0
    breakdown: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "strategy": self.strategy,
            "rows": self.rows,
            "kt": self.kt,
            "fd": self.fd,
            "loop_order": self.loop_order,
            "in_resident": self.in_resident,
            "in_chunk_rows": self.in_chunk_rows,
            "out_chunk_rows": self.out_chunk_rows,
            "n_tiles": list(self.n_tiles),
            "resident_bytes": self.resident_bytes,
            "breakdown": dict(sorted(self.breakdown.items())),
        }
        if self.scheme is not None:
            out["scheme"] = {
                "order": self.scheme.order.value,
                "tiling": self.scheme.tiling.value,
                "layouts": [self.scheme.in_layout.value, self.scheme.mid_layout.value,
                            self.scheme.out_layout.value],
                "fd": self.scheme.fd,
            }
        return out


# --- unfused layers ---------------------------------------------------------

def _unfused_components(g: LayerGeometry, rows: int, kt: int) -> dict[str, int]:
    in_rows = _in_rows_for(g, 0, rows) if g.kind is not LayerKind.FC else 1
    if g.kind in (LayerKind.DW, LayerKind.POOL):
        in_tile = in_rows * g.iy * kt
    elif g.kind is LayerKind.ADD:
        in_tile = 2 * rows * g.oy * kt
    elif g.kind is LayerKind.FC:
        in_tile = g.c
    else:  # PW / StdConv need all input channels
        in_tile = in_rows * g.iy * g.c
    out_tile = rows * g.oy * kt if g.kind is not LayerKind.FC else kt
    if g.kind in (LayerKind.DW, LayerKind.POOL):
        w_tile = kt * g.fx * g.fy if g.kind is LayerKind.DW else 0
    elif g.kind in (LayerKind.PW, LayerKind.STD_CONV):
        w_tile = kt * g.c * g.fx * g.fy
    elif g.kind is LayerKind.FC:
        w_tile = kt * g.c
    else:
        w_tile = 0
    q_tile = QUANT_BYTES_PER_CHANNEL * kt if w_tile else 0
    return {"input": in_tile, "output": out_tile, "weights": w_tile, "quant": q_tile}


def tile_unfused_layer(g: LayerGeometry, h: MemHierarchy) -> TilingSolution:
    """Largest (rows x channels) output tile fitting the L1 budget.

    Maximises the output elements per tile; ties prefer larger row extents,
    then larger channel extents.
    """
    budget = h.l1_bytes
    max_rows = g.ox if g.kind is not LayerKind.FC else 1
    best = None
    for rows in range(max_rows, 0, -1):
        comp = _unfused_components(g, rows, 1)
        fixed = comp["input"] if g.kind in (LayerKind.PW, LayerKind.STD_CONV, LayerKind.FC) else 0
        per_kt = sum(v for k, v in comp.items() if k != "input") + (
            0 if fixed else comp["input"]
        )
        kt = min(g.k, (budget - fixed) // per_kt) if per_kt else g.k
        if kt < 1:
            continue
        score = (rows * kt, rows, kt)
        if best is None or score > best[0]:
            best = (score, rows, kt)
        if kt == g.k and rows == max_rows:
            break  # whole layer resident; nothing larger exists
    if best is None:
        raise InfeasibleError(
            f"no (rows, channels) tile of {g.kind.value} layer fits {budget} B L1"
        )
    _, rows, kt = best
    comp = _unfused_components(g, rows, kt)
    n_r = ceil(max_rows / rows)
    n_kt = ceil(g.k / kt)
    loop_order = _pick_loop_order(g, rows, kt, n_r, n_kt)
    return TilingSolution(
        "unfused", (g,), rows=rows, kt=kt, loop_order=loop_order,
        n_tiles=(n_r, n_kt), resident_bytes=sum(comp.values()), breakdown=comp,
    )


def _act_in_once(g: LayerGeometry, rows: int) -> int:
    """Input bytes to stream the whole layer once, halo included."""
    if g.kind is LayerKind.FC:
        return g.c
    if g.kind is LayerKind.ADD:
        return 2 * g.in_elems
    total_rows = sum(_in_rows_for(g, r0, r1) for r0, r1 in _row_tiles(g.ox, rows))
    chans = g.c
    return total_rows * g.iy * chans


def _pick_loop_order(g, rows, kt, n_r, n_kt) -> str:
    if n_r == 1 or n_kt == 1:
        return "rows"
    w_once = layer_weight_bytes(g) + layer_quant_bytes(g)
    in_once = _act_in_once(g, rows)
    reload_in = g.kind in (LayerKind.PW, LayerKind.STD_CONV, LayerKind.FC)
    rows_outer = in_once + n_r * w_once
    kt_outer = (n_kt * in_once if reload_in else in_once) + w_once
    return "rows" if rows_outer <= kt_outer else "channels"


def build_layer_schedule(g: LayerGeometry, sol: TilingSolution, h: MemHierarchy) -> Schedule:
    """Lower an unfused-layer tiling to transfer/compute steps."""
    comp = sol.breakdown
    rows, kt = sol.rows, sol.kt
    n_r, n_kt = sol.n_tiles
    sched: Schedule = []
    for name in ("weights", "quant", "input", "output"):
        if comp.get(name):
            sched.append(Alloc(name, comp[name]))

    w_once = layer_weight_bytes(g) + layer_quant_bytes(g)
    in_once = _act_in_once(g, rows)
    out_once = g.out_elems if g.kind is not LayerKind.FC else g.k
    if sol.loop_order == "rows":
        in_traffic = in_once
        w_traffic = w_once if n_kt == 1 else n_r * w_once
    else:
        reload_in = g.kind in (LayerKind.PW, LayerKind.STD_CONV, LayerKind.FC)
        in_traffic = n_kt * in_once if reload_in else in_once
        w_traffic = w_once

    spill_in, spill_out = _l2_spill(in_once if g.kind is not LayerKind.ADD else 2 * g.in_elems,
                                    out_once, w_once, h)
    _stage_weights(sched, w_traffic, w_once, h)
    _stage_activation(sched, in_traffic, TensorClass.ACTIVATION, True, spill_in, h)
    _emit_layer_kernels(sched, g, rows, kt)
    _stage_activation(sched, out_once, TensorClass.ACTIVATION, False, spill_out, h)
    for name in ("weights", "quant", "input", "output"):
        if comp.get(name):
            sched.append(Free(name))
    return sched


def _emit_layer_kernels(sched, g, rows, kt):
    variant = _unfused_variant(g)
    max_rows = g.ox if g.kind is not LayerKind.FC else 1
    r_groups = _tile_groups(max_rows, rows)
    k_groups = _tile_groups(g.k, kt)
    for r_sz, r_n in r_groups:
        for k_sz, k_n in k_groups:
            if variant is None:
                stats = analyze_plain(g, out_rows=r_sz, out_channels=k_sz)
            else:
                stats = analyze(variant, g, out_rows=r_sz, out_channels=k_sz)
            sched.append(Kernel(stats, repeat=r_n * k_n))


def _tile_groups(total: int, size: int) -> list[tuple[int, int]]:
    """[(tile size, count)] for a 1-D split, tail last."""
    full, tail = divmod(total, size)
    groups = []
    if full:
        groups.append((size, full))
    if tail:
        groups.append((tail, 1))
    return groups


def _unfused_variant(g: LayerGeometry) -> KernelVariant | None:
    from .tensors import Layout

    if g.kind in (LayerKind.DW, LayerKind.PW):
        return KernelVariant(g.kind, Layout.HWC, Layout.HWC)
    return None


def _l2_spill(in_bytes, out_bytes, w_bytes, h: MemHierarchy) -> tuple[bool, bool]:
    """Which activations stage through L3: none unless the layer's L2 working
    set (input + output + weights in flight) exceeds the L2 budget; then the
    larger activation spills first."""
    if not h.has_l3:
        return False, False
    need = in_bytes + out_bytes + w_bytes
    if need <= h.l2_bytes:
        return False, False
    if in_bytes >= out_bytes:
        if out_bytes + w_bytes + in_bytes > h.l2_bytes:
            return True, (out_bytes + w_bytes > h.l2_bytes)
    return (in_bytes + w_bytes > h.l2_bytes), True


def _stage_weights(sched, l1_traffic, w_once, h):
    if not w_once:
        return
    if h.has_l3:
        sched.append(Xfer(Level.L3, Level.L2, TensorClass.WEIGHT, w_once))
    sched.append(Xfer(Level.L2, Level.L1, TensorClass.WEIGHT, l1_traffic))


def _stage_activation(sched, nbytes, klass, inbound, spilled, h):
    if not nbytes:
        return
    if inbound:
        if spilled:
            sched.append(Xfer(Level.L3, Level.L2, klass, nbytes))
        sched.append(Xfer(Level.L2, Level.L1, klass, nbytes))
    else:
        sched.append(Xfer(Level.L1, Level.L2, klass, nbytes))
        if spilled:
            sched.append(Xfer(Level.L2, Level.L3, klass, nbytes))


# --- fused blocks -----------------------------------------------------------

def fd_step(order: FusedOrder, tiling: FusedTiling, g_dw: LayerGeometry,
            n_cores: int) -> int:
    if order is FusedOrder.DWPW:
        return n_cores // 2
    if tiling is FusedTiling.CHANNELS:
        return n_cores
    return n_cores // 2 + g_dw.fx - 1


def fd_floor(order: FusedOrder, tiling: FusedTiling, g_dw: LayerGeometry) -> int:
    if order is FusedOrder.PWDW and tiling is FusedTiling.ROWS:
        return g_dw.fx
    return 1


def fd_domain(order: FusedOrder, tiling: FusedTiling,
              g_a: LayerGeometry, g_b: LayerGeometry) -> int:
    if tiling is FusedTiling.CHANNELS:
        return g_a.k
    return g_a.ox  # intermediate rows


def _dw_of(g_a, g_b):
    return g_a if g_a.kind is LayerKind.DW else g_b


def fused_components(
    g_a: LayerGeometry, g_b: LayerGeometry, scheme: FusedScheme,
    fd: int, kt: int | None = None,
    in_resident: bool = True, in_chunk_rows: int = 0, out_chunk_rows: int = 0,
) -> dict[str, int]:
    """L1-resident byte breakdown of one fused tile configuration."""
    mid_h, mid_w, mid_c = g_a.ox, g_a.oy, g_a.k
    key = (scheme.order, scheme.tiling)
    if key == (FusedOrder.DWPW, FusedTiling.ROWS):
        kt = mid_c if kt is None else kt
        pw = g_b
        in_rows = _in_rows_for(g_a, 0, min(fd, mid_h))
        return {
            "input": in_rows * g_a.iy * g_a.c,
            "intermediate": mid_c * mid_w * fd,
            "output": min(fd, pw.ox) * pw.oy * kt,
            "dw-weights": g_a.c * g_a.fx * g_a.fy,
            "pw-weights": kt * pw.c,
            "quant": QUANT_BYTES_PER_CHANNEL * (g_a.k + kt),
        }
    if key == (FusedOrder.PWDW, FusedTiling.ROWS):
        dw = g_b
        walk = pwdw_row_walk(fd, mid_h, dw)
        max_new = max(t.new_hi - t.new_lo for t in walk)
        max_out = max(t.out_hi - t.out_lo for t in walk)
        return {
            "input": max_new * g_a.iy * g_a.c,
            "intermediate": mid_c * mid_w * fd,
            "output": max_out * dw.oy * dw.k,
            "pw-weights": g_a.k * g_a.c,
            "dw-weights": dw.k * dw.fx * dw.fy,
            "quant": QUANT_BYTES_PER_CHANNEL * (g_a.k + dw.k),
        }
    # PWDW / Channels
    dw = g_b
    in_tile = (
        g_a.ox * g_a.iy * g_a.c if in_resident  # rows the strided 1x1 reads
        else max(in_chunk_rows, 1) * g_a.iy * g_a.c
    )
    out_rows = max(out_chunk_rows, 1)
    return {
        "input": in_tile,
        "intermediate": fd * mid_h * mid_w,
        "output": out_rows * dw.oy * fd,
        "pw-weights": fd * g_a.c,
        "dw-weights": fd * dw.fx * dw.fy,
        "quant": 2 * QUANT_BYTES_PER_CHANNEL * fd,
    }


@dataclass
class FusionCheck:
    feasible: bool
    required_bytes: int
    budget_bytes: int
    breakdown: dict
    reason: str = ""


def check_fusible(
    g_a: LayerGeometry, g_b: LayerGeometry, scheme: FusedScheme, h: MemHierarchy,
) -> FusionCheck:
    """Can this block run fused at all?  Compares the minimum resident set
    (smallest legal fused dimension, minimal slices, required weights) against
    the L1 budget; infeasibility is a value carrying the blocking resource."""
    validate_chain(g_a, g_b, scheme.order)
    g_dw = _dw_of(g_a, g_b)
    domain = fd_domain(scheme.order, scheme.tiling, g_a, g_b)
    floor_fd = fd_floor(scheme.order, scheme.tiling, g_dw)
    if domain < floor_fd:
        return FusionCheck(False, 0, h.l1_bytes, {},
                           "intermediate has fewer rows than the filter's vertical extent")
    fd_min = floor_fd
    comp = fused_components(g_a, g_b, scheme, fd_min, kt=1,
                            in_resident=False, in_chunk_rows=1, out_chunk_rows=1)
    need = sum(comp.values())
    if need <= h.l1_bytes:
        return FusionCheck(True, need, h.l1_bytes, comp)
    worst = max(comp, key=lambda k: (comp[k], k))
    return FusionCheck(
        False, need, h.l1_bytes, comp,
        f"minimum resident set {need} B exceeds the {h.l1_bytes} B L1 budget; "
        f"largest component {worst} ({comp[worst]} B)",
    )


def select_fd(
    scheme: FusedScheme, g_a: LayerGeometry, g_b: LayerGeometry, h: MemHierarchy,
) -> int:
    """Fused-dimension choice: the smallest multiple of the scheme's
    core-utilisation step that fits the budget (with the other tile dimensions
    at their minimal extents); the smallest legal fd when no multiple fits."""
    g_dw = _dw_of(g_a, g_b)
    step = fd_step(scheme.order, scheme.tiling, g_dw, h.n_cores)
    domain = fd_domain(scheme.order, scheme.tiling, g_a, g_b)
    floor_fd = min(fd_floor(scheme.order, scheme.tiling, g_dw), domain)

    def fits(fd: int) -> bool:
        if fd > domain or fd < fd_floor(scheme.order, scheme.tiling, g_dw):
            return False
        comp = fused_components(g_a, g_b, scheme, fd, kt=1,
                                in_resident=False, in_chunk_rows=1, out_chunk_rows=1)
        return sum(comp.values()) <= h.l1_bytes

    fd = step
    while fd <= domain:
        if fits(fd):
            return fd
        fd += step
    return floor_fd


def tile_fused_block(
    g_a: LayerGeometry, g_b: LayerGeometry, scheme: FusedScheme, h: MemHierarchy,
) -> TilingSolution:
    """Tiling for one fused block.

    Prefers the degenerate single tile when the whole block is L1-resident;
    otherwise takes the heuristic fused dimension and maximises the remaining
    free extent (pointwise output slice for DWPW, input/output row chunks for
    channel-tiled PWDW).  Raises :class:`InfeasibleError` when not even the
    minimal tile fits.
    """
    chk = check_fusible(g_a, g_b, scheme, h)
    if not chk.feasible:
        raise InfeasibleError(chk.reason)
    key = (scheme.order, scheme.tiling)
    domain = fd_domain(scheme.order, scheme.tiling, g_a, g_b)
    mid_rows, mid_c = g_a.ox, g_a.k

    # Degenerate single tile: everything resident, identical to an unfused
    # execution with both layers held in L1.
    whole = fused_components(g_a, g_b, scheme, domain, kt=None, in_resident=True,
                             in_chunk_rows=g_a.ox, out_chunk_rows=g_b.ox)
    if sum(whole.values()) <= h.l1_bytes:
        sol = TilingSolution(
            "fused", (g_a, g_b), scheme=scheme.with_fd(domain), fd=domain,
            kt=mid_c if key == (FusedOrder.DWPW, FusedTiling.ROWS) else 0,
            in_resident=True, in_chunk_rows=g_a.ox, out_chunk_rows=g_b.ox,
            n_tiles=(1, 1), resident_bytes=sum(whole.values()), breakdown=whole,
        )
        return sol

    fd = select_fd(scheme, g_a, g_b, h)
    budget = h.l1_bytes

    if key == (FusedOrder.DWPW, FusedTiling.ROWS):
        # Maximise the pointwise output-channel slice.
        base = fused_components(g_a, g_b, scheme, fd, kt=1)
        fixed = sum(v for n, v in base.items()
                    if n not in ("output", "pw-weights", "quant"))
        fixed += QUANT_BYTES_PER_CHANNEL * g_a.k
        per_kt = (min(fd, g_b.ox) * g_b.oy) + g_b.c + QUANT_BYTES_PER_CHANNEL
        kt = min(g_b.k, (budget - fixed) // per_kt)
        if kt < 1:
            raise InfeasibleError("no pointwise output slice fits next to the fused tile")
        comp = fused_components(g_a, g_b, scheme, fd, kt=kt)
        return TilingSolution(
            "fused", (g_a, g_b), scheme=scheme.with_fd(fd), fd=fd, kt=kt,
            n_tiles=(ceil(mid_rows / fd), ceil(g_b.k / kt)),
            resident_bytes=sum(comp.values()), breakdown=comp,
        )

    if key == (FusedOrder.PWDW, FusedTiling.ROWS):
        comp = fused_components(g_a, g_b, scheme, fd)
        if sum(comp.values()) > budget:
            raise InfeasibleError(
                f"row-wise tile at fd={fd} needs {sum(comp.values())} B > {budget} B"
            )
        walk = pwdw_row_walk(fd, mid_rows, g_b)
        return TilingSolution(
            "fused", (g_a, g_b), scheme=scheme.with_fd(fd), fd=fd,
            n_tiles=(len(walk), 1),
            resident_bytes=sum(comp.values()), breakdown=comp,
        )

    # PWDW / Channels: prefer a resident input; stream it otherwise.
    n_ch = ceil(mid_c / fd)
    for in_resident in (True, False):
        base = fused_components(g_a, g_b, scheme, fd, in_resident=in_resident,
                                in_chunk_rows=1, out_chunk_rows=1)
        fixed = sum(v for n, v in base.items() if n != "output")
        per_row = g_b.oy * fd
        out_rows = min(g_b.ox, (budget - fixed) // per_row)
        if out_rows < 1:
            continue
        in_rows = g_a.ox
        if not in_resident:
            # grow the streaming chunk into whatever budget remains
            comp = fused_components(g_a, g_b, scheme, fd, in_resident=False,
                                    in_chunk_rows=1, out_chunk_rows=out_rows)
            spare = budget - sum(comp.values())
            in_rows = min(g_a.ox, 1 + spare // (g_a.iy * g_a.c))
        comp = fused_components(g_a, g_b, scheme, fd, in_resident=in_resident,
                                in_chunk_rows=in_rows, out_chunk_rows=out_rows)
        return TilingSolution(
            "fused", (g_a, g_b), scheme=scheme.with_fd(fd), fd=fd,
            in_resident=in_resident, in_chunk_rows=in_rows, out_chunk_rows=out_rows,
            n_tiles=(n_ch, 1),
            resident_bytes=sum(comp.values()), breakdown=comp,
        )
    raise InfeasibleError("no channel-tiled configuration fits the L1 budget")


def build_block_schedule(
    g_a: LayerGeometry, g_b: LayerGeometry, sol: TilingSolution, h: MemHierarchy,
) -> Schedule:
    """Lower a fused-block tiling to transfer/compute steps.

    The intermediate tensor never leaves L1, so its transfer class stays at
    zero by construction; only the buffer allocation appears.
    """
    scheme = sol.scheme
    comp = sol.breakdown
    sched: Schedule = []
    for name, nbytes in comp.items():
        if nbytes:
            sched.append(Alloc(name, nbytes))
    leg_a, leg_b = scheme.leg_variants()
    mid_rows, mid_c = g_a.ox, g_a.k
    in_bytes_once = g_a.ox * g_a.iy * g_a.c  # rows a strided 1x1 / halo-less read
    out_once = g_b.out_elems
    w_a = layer_weight_bytes(g_a) + layer_quant_bytes(g_a)
    w_b = layer_weight_bytes(g_b) + layer_quant_bytes(g_b)

    key = (scheme.order, scheme.tiling)
    if key == (FusedOrder.DWPW, FusedTiling.ROWS):
        tiles = _row_tiles(mid_rows, sol.fd)
        in_traffic = sum(_in_rows_for(g_a, t0, t1) for t0, t1 in tiles) * g_a.iy * g_a.c
        n_kt = ceil(g_b.k / sol.kt)
        w_traffic = w_a + (w_b if n_kt == 1 else len(tiles) * w_b)
        w_once = w_a + w_b
        spill_in, spill_out = _l2_spill(g_a.in_elems, out_once, w_once, h)
        _stage_weights(sched, w_traffic, w_once, h)
        _stage_activation(sched, in_traffic, TensorClass.ACTIVATION, True, spill_in, h)
        for r_sz, r_n in _tile_groups(mid_rows, sol.fd):
            sched.append(Kernel(analyze(leg_a, g_a, out_rows=r_sz), repeat=r_n))
            for k_sz, k_n in _tile_groups(g_b.k, sol.kt):
                sched.append(Kernel(
                    analyze(leg_b, g_b, out_rows=r_sz, out_channels=k_sz),
                    repeat=r_n * k_n,
                ))
        _stage_activation(sched, out_once, TensorClass.ACTIVATION, False, spill_out, h)
    elif key == (FusedOrder.PWDW, FusedTiling.ROWS):
        walk = pwdw_row_walk(sol.fd, mid_rows, g_b)
        in_traffic = sum(t.new_hi - t.new_lo for t in walk) * g_a.iy * g_a.c
        shift_bytes = sum(t.kept_rows for t in walk) * g_a.oy * mid_c
        w_once = w_a + w_b
        spill_in, spill_out = _l2_spill(g_a.in_elems, out_once, w_once, h)
        _stage_weights(sched, w_once, w_once, h)
        _stage_activation(sched, in_traffic, TensorClass.ACTIVATION, True, spill_in, h)
        pw_groups: dict[int, int] = {}
        dw_groups: dict[int, int] = {}
        for t in walk:
            if t.new_hi > t.new_lo:
                pw_groups[t.new_hi - t.new_lo] = pw_groups.get(t.new_hi - t.new_lo, 0) + 1
            dw_groups[t.out_hi - t.out_lo] = dw_groups.get(t.out_hi - t.out_lo, 0) + 1
        for rows, n in pw_groups.items():
            sched.append(Kernel(analyze(leg_a, g_a, out_rows=rows), repeat=n))
        for rows, n in dw_groups.items():
            sched.append(Kernel(analyze(leg_b, g_b, out_rows=rows), repeat=n))
        if shift_bytes:
            sched.append(Kernel(
                KernelStats(g_b.kind, work_units=0, macs=0, invocations=0),
                shift_bytes=shift_bytes,
            ))
        _stage_activation(sched, out_once, TensorClass.ACTIVATION, False, spill_out, h)
    else:  # PWDW / Channels
        n_tiles = ceil(mid_c / sol.fd)
        in_traffic = in_bytes_once if sol.in_resident else n_tiles * in_bytes_once
        w_once = w_a + w_b
        spill_in, spill_out = _l2_spill(g_a.in_elems, out_once, w_once, h)
        _stage_weights(sched, w_once, w_once, h)
        _stage_activation(sched, in_traffic, TensorClass.ACTIVATION, True, spill_in, h)
        for c_sz, c_n in _tile_groups(mid_c, sol.fd):
            sched.append(Kernel(analyze(leg_a, g_a, out_channels=c_sz), repeat=c_n))
            sched.append(Kernel(analyze(leg_b, g_b, out_channels=c_sz), repeat=c_n))
        _stage_activation(sched, out_once, TensorClass.ACTIVATION, False, spill_out, h)
    for name, nbytes in comp.items():
        if nbytes:
            sched.append(Free(name))
    return sched
