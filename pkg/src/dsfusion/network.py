"""Network graphs: validated layer chains, a text file format and builtin
model generators.

The graph file format (version 1) stores only connectivity parameters; input
extents of every layer are re-derived from the chain, so a loaded file is
self-checking against the output-size law::

    # dsfusion network graph v1
    net mv1-128
    input 128 128 3
    layer conv out 8 f 3 3 s 2 p 1
    layer dw out 8 f 3 3 s 1 p 1
    layer pw out 16 f 1 1 s 1 p 0
    layer add out 24 f 1 1 s 1 p 0 res 3
    ...

``res <i>`` marks the second operand of a residual addition: the output of
layer ``i`` (0-based), which must match the add's shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .geometry import (
    GeometryError,
    LayerGeometry,
    LayerKind,
    conv_out_extent,
    mac_count,
)
from .tiling import layer_quant_bytes, layer_weight_bytes


class GraphError(ValueError):
    """Malformed network description (parse error or chain violation)."""


_KIND_TOKENS = {k.value: k for k in LayerKind}


@dataclass
class NetLayer:
    geometry: LayerGeometry
    residual_from: int | None = None


@dataclass
class NetworkGraph:
    name: str
    input_dims: tuple[int, int, int]
    layers: list[NetLayer] = field(default_factory=list)
    bottleneck_blocks: int = 0  # generator metadata; 0 when unknown

    def __len__(self) -> int:
        return len(self.layers)

    def geometries(self) -> list[LayerGeometry]:
        return [l.geometry for l in self.layers]

    def total_macs(self, conv_only: bool = True) -> int:
        kinds = (LayerKind.DW, LayerKind.PW, LayerKind.STD_CONV)
        total = 0
        for l in self.layers:
            g = l.geometry
            if g.kind in kinds:
                total += mac_count(g)
            elif not conv_only and g.kind is LayerKind.FC:
                total += g.k * g.c
        return total

    def total_weight_bytes(self) -> int:
        return sum(layer_weight_bytes(l.geometry) + layer_quant_bytes(l.geometry)
                   for l in self.layers)

    def validate(self):
        h, w, ch = self.input_dims
        for i, layer in enumerate(self.layers):
            g = layer.geometry
            if (g.ix, g.iy, g.c) != (h, w, ch):
                raise GraphError(
                    f"layer {i}: input ({g.ix}, {g.iy}, {g.c}) does not chain with "
                    f"previous output ({h}, {w}, {ch})"
                )
            if g.kind is LayerKind.ADD:
                j = layer.residual_from
                if j is None or not (0 <= j < i):
                    raise GraphError(f"layer {i}: add requires a valid res index")
                other = self.layers[j].geometry
                if (other.ox, other.oy, other.k) != (g.ox, g.oy, g.k):
                    raise GraphError(
                        f"layer {i}: residual edge from layer {j} connects unequal "
                        f"shapes"
                    )
            if g.kind is LayerKind.FC and (g.ix, g.iy) != (1, 1):
                raise GraphError(f"layer {i}: fc expects a 1x1 spatial input")
            h, w, ch = g.ox, g.oy, g.k


def _mk_layer(kind: LayerKind, ix, iy, c, k, fx, fy, s, p, index: int) -> LayerGeometry:
    try:
        if kind is LayerKind.FC:
            return LayerGeometry(kind, ix, iy, c, 1, 1, k, fx, fy, p, s)
        ox = conv_out_extent(ix, fx, p, s)
        oy = conv_out_extent(iy, fy, p, s)
        if kind is LayerKind.DW and k != c:
            raise GeometryError(f"depthwise k={k} != c={c}")
        return LayerGeometry(kind, ix, iy, c, ox, oy, k, fx, fy, p, s)
    except GeometryError as e:
        raise GraphError(f"layer {index}: {e}") from e


# --- text format -------------------------------------------------------------

HEADER = "# dsfusion network graph v1"


def save_graph(net: NetworkGraph, path: str | Path):
    Path(path).write_text(graph_to_text(net))


def graph_to_text(net: NetworkGraph) -> str:
    lines = [HEADER, f"net {net.name}"]
    if net.bottleneck_blocks:
        lines.append(f"meta bottlenecks {net.bottleneck_blocks}")
    h, w, ch = net.input_dims
    lines.append(f"input {h} {w} {ch}")
    for layer in net.layers:
        g = layer.geometry
        line = f"layer {g.kind.value} out {g.k} f {g.fx} {g.fy} s {g.s} p {g.p}"
        if layer.residual_from is not None:
            line += f" res {layer.residual_from}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def load_graph(path: str | Path) -> NetworkGraph:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise GraphError(f"cannot read graph file {path}: {e}") from e
    return graph_from_text(text)


def graph_from_text(text: str) -> NetworkGraph:
    name = ""
    dims = None
    bottlenecks = 0
    specs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        try:
            if tok[0] == "net":
                name = tok[1]
            elif tok[0] == "meta" and tok[1] == "bottlenecks":
                bottlenecks = int(tok[2])
            elif tok[0] == "input":
                dims = (int(tok[1]), int(tok[2]), int(tok[3]))
            elif tok[0] == "layer":
                specs.append((lineno, tok[1:]))
            else:
                raise GraphError(f"line {lineno}: unknown directive {tok[0]!r}")
        except (IndexError, ValueError) as e:
            raise GraphError(f"line {lineno}: malformed: {raw!r}") from e
    if not name or dims is None:
        raise GraphError("graph file must declare 'net <name>' and 'input <h> <w> <ch>'")

    net = NetworkGraph(name, dims, bottleneck_blocks=bottlenecks)
    h, w, ch = dims
    for index, (lineno, tok) in enumerate(specs):
        fields = {}
        if tok[0] not in _KIND_TOKENS:
            raise GraphError(f"line {lineno}: unsupported layer kind {tok[0]!r}")
        kind = _KIND_TOKENS[tok[0]]
        i = 1
        while i < len(tok):
            key = tok[i]
            try:
                if key == "f":
                    fields["fx"], fields["fy"] = int(tok[i + 1]), int(tok[i + 2])
                    i += 3
                elif key in ("out", "s", "p", "res"):
                    fields[key] = int(tok[i + 1])
                    i += 2
                else:
                    raise GraphError(f"line {lineno}: unknown field {key!r}")
            except (IndexError, ValueError) as e:
                raise GraphError(f"line {lineno}: malformed field {key!r}") from e
        k = fields.get("out", ch)
        g = _mk_layer(kind, h, w, ch, k, fields.get("fx", 1), fields.get("fy", 1),
                      fields.get("s", 1), fields.get("p", 0), index)
        net.layers.append(NetLayer(g, fields.get("res")))
        h, w, ch = g.ox, g.oy, g.k
    net.validate()
    return net


# --- builtin generators ------------------------------------------------------

def _scaled(ch: int, width: float) -> int:
    v = int(round(ch * width))
    return max(v, 1)


def mobilenet_v1(input_size: int, width: float = 0.25) -> NetworkGraph:
    """Depthwise-separable classifier: a strided stem convolution, 13 DW+PW
    blocks, global pooling and a 1000-way classifier (29 layers)."""
    net = NetworkGraph(f"mv1-{input_size}", (input_size, input_size, 3))
    blocks = [(1, 64), (2, 128), (1, 128), (2, 256), (1, 256), (2, 512),
              (1, 512), (1, 512), (1, 512), (1, 512), (1, 512), (2, 1024), (1, 1024)]
    h = w = input_size
    c = _scaled(32, width)
    g = _mk_layer(LayerKind.STD_CONV, h, w, 3, c, 3, 3, 2, 1, 0)
    net.layers.append(NetLayer(g))
    h, w = g.ox, g.oy
    for stride, out_ch in blocks:
        k = _scaled(out_ch, width)
        g_dw = _mk_layer(LayerKind.DW, h, w, c, c, 3, 3, stride, 1, len(net.layers))
        net.layers.append(NetLayer(g_dw))
        h, w = g_dw.ox, g_dw.oy
        g_pw = _mk_layer(LayerKind.PW, h, w, c, k, 1, 1, 1, 0, len(net.layers))
        net.layers.append(NetLayer(g_pw))
        c = k
    g_pool = _mk_layer(LayerKind.POOL, h, w, c, c, h, w, 1, 0, len(net.layers))
    net.layers.append(NetLayer(g_pool))
    net.layers.append(NetLayer(_mk_layer(LayerKind.FC, 1, 1, c, 1000, 1, 1, 1, 0,
                                         len(net.layers))))
    net.validate()
    return net


def mobilenet_v2(input_size: int, width: float = 0.25) -> NetworkGraph:
    """Inverted-bottleneck classifier: stem conv, a ratio-1 stem unit, 16
    expansion bottlenecks (ratio 6, residual adds on repeated units), a 1280-
    channel head convolution, pooling and classifier (65 layers)."""
    net = NetworkGraph(f"mv2-{input_size}", (input_size, input_size, 3))
    h = w = input_size
    c = _scaled(32, width)
    g = _mk_layer(LayerKind.STD_CONV, h, w, 3, c, 3, 3, 2, 1, 0)
    net.layers.append(NetLayer(g))
    h, w = g.ox, g.oy

    def bottleneck(c_in, c_out, stride, expand, h, w, residual_from=None):
        mid = c_in * expand
        g1 = _mk_layer(LayerKind.PW, h, w, c_in, mid, 1, 1, 1, 0, len(net.layers))
        net.layers.append(NetLayer(g1))
        g2 = _mk_layer(LayerKind.DW, h, w, mid, mid, 3, 3, stride, 1, len(net.layers))
        net.layers.append(NetLayer(g2))
        h2, w2 = g2.ox, g2.oy
        g3 = _mk_layer(LayerKind.PW, h2, w2, mid, c_out, 1, 1, 1, 0, len(net.layers))
        net.layers.append(NetLayer(g3))
        if residual_from is not None:
            g4 = _mk_layer(LayerKind.ADD, h2, w2, c_out, c_out, 1, 1, 1, 0,
                           len(net.layers))
            net.layers.append(NetLayer(g4, residual_from))
        return c_out, h2, w2

    # stem unit: expansion ratio 1, never counted as a bottleneck block
    c, h, w = bottleneck(c, _scaled(16, width), 1, 1, h, w)
    groups = [(24, 2, 2), (32, 3, 2), (64, 4, 2), (96, 3, 1), (160, 3, 2), (320, 1, 1)]
    n_bottlenecks = 0
    for out_ch, repeats, first_stride in groups:
        k = _scaled(out_ch, width)
        for r in range(repeats):
            stride = first_stride if r == 0 else 1
            res = len(net.layers) - 1 if r > 0 else None
            c, h, w = bottleneck(c, k, stride, 6, h, w, residual_from=res)
            n_bottlenecks += 1
    head = 1280  # head width is not scaled down
    g_head = _mk_layer(LayerKind.PW, h, w, c, head, 1, 1, 1, 0, len(net.layers))
    net.layers.append(NetLayer(g_head))
    g_pool = _mk_layer(LayerKind.POOL, h, w, head, head, h, w, 1, 0, len(net.layers))
    net.layers.append(NetLayer(g_pool))
    net.layers.append(NetLayer(_mk_layer(LayerKind.FC, 1, 1, head, 1000, 1, 1, 1, 0,
                                         len(net.layers))))
    net.bottleneck_blocks = n_bottlenecks
    net.validate()
    return net


def dscnn() -> NetworkGraph:
    """Keyword-spotting model on a 49x10 feature map: one strided stem
    convolution and 4 DW+PW blocks at 64 channels (9 layers).

    The published model's 10x4 stem needs asymmetric padding; with symmetric
    padding the closest stem is 4x4/s2, giving a 24x5 map.  The classifier
    head is not part of this graph.
    """
    net = NetworkGraph("dscnn", (49, 10, 1))
    g = _mk_layer(LayerKind.STD_CONV, 49, 10, 1, 64, 4, 4, 2, 1, 0)
    net.layers.append(NetLayer(g))
    h, w, c = g.ox, g.oy, 64
    for _ in range(4):
        g_dw = _mk_layer(LayerKind.DW, h, w, c, c, 3, 3, 1, 1, len(net.layers))
        net.layers.append(NetLayer(g_dw))
        g_pw = _mk_layer(LayerKind.PW, h, w, c, c, 1, 1, 1, 0, len(net.layers))
        net.layers.append(NetLayer(g_pw))
    net.validate()
    return net


_BUILTINS = {
    "mv1-224": lambda: mobilenet_v1(224),
    "mv1-128": lambda: mobilenet_v1(128),
    "mv1-96": lambda: mobilenet_v1(96),
    "mv2-224": lambda: mobilenet_v2(224),
    "mv2-128": lambda: mobilenet_v2(128),
    "dscnn": dscnn,
}


def builtin(name: str) -> NetworkGraph:
    """Builtin generators; pure, so the same name always yields the same graph."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise GraphError(
            f"unknown builtin network {name!r}; available: {', '.join(sorted(_BUILTINS))}"
        ) from None
    return factory()


def builtin_names() -> list[str]:
    return sorted(_BUILTINS)
