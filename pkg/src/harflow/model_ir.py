"""3D-CNN model graph: layer descriptors, shape inference and workload queries.

Models are described by a JSON document (see docs/model-schema.md) holding a
DAG of layers. Shapes are stored as (D, H, W, C) where D is the temporal
dimension and C the channel dimension.
"""

import json
import math
from dataclasses import dataclass, field

LAYER_KINDS = (
    "Conv3D",
    "FullyConnected",
    "Pool3D",
    "Activation",
    "GlobalAvgPool",
    "ElementWise",
)

POOL_TYPES = ("max", "avg")
ACT_TYPES = ("relu", "sigmoid", "swish")
ELTWISE_TYPES = ("add", "mul")


class ModelError(ValueError):
    """Raised on malformed or inconsistent model documents."""


@dataclass(frozen=True)
class TensorShape:
    """Feature-map shape (depth, height, width, channels)."""

    d: int
    h: int
    w: int
    c: int

    def __post_init__(self):
        for dim in (self.d, self.h, self.w, self.c):
            if not isinstance(dim, int) or dim < 0:
                raise ModelError(f"shape dimensions must be non-negative ints, got {self}")

    @property
    def numel(self) -> int:
        return self.d * self.h * self.w * self.c

    @classmethod
    def from_list(cls, dims) -> "TensorShape":
        if not (isinstance(dims, (list, tuple)) and len(dims) == 4):
            raise ModelError(f"shape must be a 4-element [D,H,W,C] array, got {dims!r}")
        return cls(*[int(x) for x in dims])

    def to_list(self):
        return [self.d, self.h, self.w, self.c]


def _require_positive(shape: TensorShape, layer_id: str, role: str):
    if min(shape.d, shape.h, shape.w, shape.c) < 1:
        raise ModelError(f"layer '{layer_id}': {role} dimensions must be >= 1, got {shape}")


@dataclass(frozen=True)
class LayerDescriptor:
    """A single execution node of the model graph."""

    id: str
    kind: str
    shape_in: tuple  # tuple of TensorShape; more than one entry only for ElementWise
    shape_out: TensorShape
    # Conv3D / FullyConnected
    filters: int = 0
    # Conv3D / Pool3D; kernel and stride are (D, H, W), padding is
    # (D_start, D_end, H_start, H_end, W_start, W_end)
    kernel: tuple = (1, 1, 1)
    stride: tuple = (1, 1, 1)
    padding: tuple = (0, 0, 0, 0, 0, 0)
    groups: int = 1
    # Pool3D / Activation / ElementWise type selector
    op_type: str = ""
    broadcast: bool = False

    @property
    def primary_in(self) -> TensorShape:
        return self.shape_in[0]

    @property
    def kernel_volume(self) -> int:
        kd, kh, kw = self.kernel
        return kd * kh * kw

    @property
    def fc_features(self) -> int:
        """Input feature count of a FullyConnected layer (flattened input)."""
        return self.primary_in.numel


def _windowed_axis(x_in: int, k: int, j: int, p_start: int, p_end: int) -> int:
    return (x_in + p_start + p_end - k) // j + 1


def infer_output_shape(layer: LayerDescriptor) -> TensorShape:
    """Output shape from the layer's own parameters (floor convention)."""
    kind = layer.kind
    s = layer.primary_in
    if kind in ("Conv3D", "Pool3D"):
        kd, kh, kw = layer.kernel
        jd, jh, jw = layer.stride
        pds, pde, phs, phe, pws, pwe = layer.padding
        d = _windowed_axis(s.d, kd, jd, pds, pde)
        h = _windowed_axis(s.h, kh, jh, phs, phe)
        w = _windowed_axis(s.w, kw, jw, pws, pwe)
        if min(d, h, w) < 1:
            raise ModelError(
                f"layer '{layer.id}': kernel {layer.kernel} larger than padded input {s}"
            )
        c = layer.filters if kind == "Conv3D" else s.c
        return TensorShape(d, h, w, c)
    if kind == "FullyConnected":
        return TensorShape(1, 1, 1, layer.filters)
    if kind == "GlobalAvgPool":
        return TensorShape(1, 1, 1, s.c)
    if kind in ("Activation", "ElementWise"):
        return s
    raise ModelError(f"layer '{layer.id}': unknown kind '{kind}'")


def layer_workload_macs(layer: LayerDescriptor) -> int:
    """Multiply-accumulate count of a layer; zero for non-MAC kinds."""
    if layer.kind == "Conv3D":
        out = layer.shape_out
        macs = out.d * out.h * out.w * layer.primary_in.c * layer.filters * layer.kernel_volume
        return macs // layer.groups
    if layer.kind == "FullyConnected":
        return layer.fc_features * layer.filters
    return 0


@dataclass
class ModelGraph:
    """Validated DAG of layers."""

    name: str
    layers: dict = field(default_factory=dict)  # id -> LayerDescriptor, insertion ordered
    edges: list = field(default_factory=list)  # list of (src_id, dst_id)

    def predecessors(self, layer_id: str) -> list:
        return [s for s, t in self.edges if t == layer_id]

    def successors(self, layer_id: str) -> list:
        return [t for s, t in self.edges if s == layer_id]

    def workload_macs(self) -> int:
        return sum(layer_workload_macs(l) for l in self.layers.values())

    def layers_of_kind(self, kind: str) -> list:
        return [l for l in self.layers.values() if l.kind == kind]


def _validate_layer(layer: LayerDescriptor):
    lid = layer.id
    if layer.kind not in LAYER_KINDS:
        raise ModelError(f"layer '{lid}': unknown layer kind '{layer.kind}'")
    for s in layer.shape_in:
        _require_positive(s, lid, "input")
    _require_positive(layer.shape_out, lid, "output")
    if layer.kind == "ElementWise":
        if layer.op_type not in ELTWISE_TYPES:
            raise ModelError(f"layer '{lid}': unknown element-wise op '{layer.op_type}'")
        if len(layer.shape_in) != 2:
            raise ModelError(f"layer '{lid}': ElementWise requires exactly 2 inputs")
        primary, secondary = layer.shape_in
        if layer.broadcast:
            expect = TensorShape(1, 1, 1, primary.c)
            if secondary != expect:
                raise ModelError(
                    f"layer '{lid}': broadcast input must be {expect.to_list()}, "
                    f"got {secondary.to_list()}"
                )
        elif primary != secondary:
            raise ModelError(f"layer '{lid}': element-wise inputs differ without broadcast")
    else:
        if len(layer.shape_in) != 1:
            raise ModelError(f"layer '{lid}': '{layer.kind}' takes exactly one input")
    if layer.kind == "Activation" and layer.op_type not in ACT_TYPES:
        raise ModelError(f"layer '{lid}': unknown activation '{layer.op_type}'")
    if layer.kind == "Pool3D" and layer.op_type not in POOL_TYPES:
        raise ModelError(f"layer '{lid}': unknown pool type '{layer.op_type}'")
    if layer.kind in ("Conv3D", "FullyConnected") and layer.filters < 1:
        raise ModelError(f"layer '{lid}': filters must be >= 1")
    if layer.kind == "Conv3D":
        c_in = layer.primary_in.c
        gr = layer.groups
        if gr < 1 or c_in % gr or layer.filters % gr:
            raise ModelError(
                f"layer '{lid}': groups {gr} must divide channels {c_in} and filters "
                f"{layer.filters}"
            )
    if min(layer.kernel) < 1 or min(layer.stride) < 1 or min(layer.padding) < 0:
        raise ModelError(f"layer '{lid}': invalid kernel/stride/padding")
    declared = layer.shape_out
    inferred = infer_output_shape(layer)
    if inferred != declared:
        raise ModelError(
            f"layer '{lid}': declared shape_out {declared.to_list()} does not match "
            f"inferred {inferred.to_list()}"
        )
    if layer.shape_out.numel > 2**62 or layer.primary_in.numel > 2**62:
        raise ModelError(f"layer '{lid}': shape exceeds 64-bit element count")


def _layer_from_json(entry: dict) -> LayerDescriptor:
    if "id" not in entry or "kind" not in entry:
        raise ModelError(f"layer entry missing 'id' or 'kind': {entry}")
    lid = str(entry["id"])
    kind = entry["kind"]
    raw_in = entry.get("shape_in")
    if raw_in is None or raw_in == []:
        raise ModelError(f"layer '{lid}': missing shape_in")
    if isinstance(raw_in[0], (list, tuple)):
        shape_in = tuple(TensorShape.from_list(s) for s in raw_in)
    else:
        shape_in = (TensorShape.from_list(raw_in),)
    if "shape_out" not in entry:
        raise ModelError(f"layer '{lid}': missing shape_out")
    shape_out = TensorShape.from_list(entry["shape_out"])

    def triple(key, default):
        v = entry.get(key, default)
        if len(v) != len(default):
            raise ModelError(f"layer '{lid}': '{key}' must have {len(default)} entries")
        return tuple(int(x) for x in v)

    return LayerDescriptor(
        id=lid,
        kind=kind,
        shape_in=shape_in,
        shape_out=shape_out,
        filters=int(entry.get("filters", 0)),
        kernel=triple("kernel", (1, 1, 1)),
        stride=triple("stride", (1, 1, 1)),
        padding=triple("padding", (0, 0, 0, 0, 0, 0)),
        groups=int(entry.get("groups", 1)),
        op_type=entry.get("type", ""),
        broadcast=bool(entry.get("broadcast", False)),
    )


def _check_graph_structure(model: ModelGraph):
    ids = set(model.layers)
    for src, dst in model.edges:
        if src not in ids or dst not in ids:
            raise ModelError(f"edge ({src}, {dst}) references unknown layer")
    # cycle check via Kahn's algorithm
    indeg = {lid: 0 for lid in ids}
    for _, dst in model.edges:
        indeg[dst] += 1
    queue = sorted(lid for lid, n in indeg.items() if n == 0)
    seen = 0
    frontier = list(queue)
    indeg_work = dict(indeg)
    while frontier:
        lid = frontier.pop()
        seen += 1
        for nxt in model.successors(lid):
            indeg_work[nxt] -= 1
            if indeg_work[nxt] == 0:
                frontier.append(nxt)
    if seen != len(ids):
        cyclic = sorted(lid for lid, n in indeg_work.items() if n > 0)
        raise ModelError(f"cycle detected involving layers {cyclic}")
    sources = sorted(lid for lid, n in indeg.items() if n == 0)
    if len(sources) != 1:
        raise ModelError(f"model must have a single input layer, found {sources}")
    # connectivity from the single input
    reach = set()
    stack = [sources[0]]
    while stack:
        lid = stack.pop()
        if lid in reach:
            continue
        reach.add(lid)
        stack.extend(model.successors(lid))
    if reach != ids:
        raise ModelError(f"layers unreachable from input: {sorted(ids - reach)}")
    # edge shape consistency; input slots follow edge declaration order
    incoming = {lid: [] for lid in ids}
    for src, dst in model.edges:
        incoming[dst].append(src)
    for lid, producers in incoming.items():
        layer = model.layers[lid]
        if producers and len(producers) != len(layer.shape_in):
            raise ModelError(
                f"layer '{lid}': {len(producers)} incoming edges but "
                f"{len(layer.shape_in)} declared inputs"
            )
        for slot, src in enumerate(producers):
            produced = model.layers[src].shape_out
            if produced != layer.shape_in[slot]:
                raise ModelError(
                    f"shape mismatch on edge {src} -> {lid}: producer emits "
                    f"{produced.to_list()}, consumer expects "
                    f"{layer.shape_in[slot].to_list()}"
                )


def parse_model(document: str) -> ModelGraph:
    """Parse and validate a model JSON document."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ModelError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "layers" not in doc:
        raise ModelError("document must be an object with a 'layers' array")
    if not doc["layers"]:
        raise ModelError("model has no layers")
    model = ModelGraph(name=str(doc.get("name", "model")))
    for entry in doc["layers"]:
        layer = _layer_from_json(entry)
        if layer.id in model.layers:
            raise ModelError(f"duplicate layer id '{layer.id}'")
        _validate_layer(layer)
        model.layers[layer.id] = layer
    raw_edges = doc.get("edges", [])
    model.edges = [(str(s), str(t)) for s, t in raw_edges]
    _check_graph_structure(model)
    return model


def serialize_model(model: ModelGraph) -> str:
    """Inverse of parse_model: emit a JSON document for the graph."""
    layers = []
    for layer in model.layers.values():
        entry = {
            "id": layer.id,
            "kind": layer.kind,
            "shape_in": [s.to_list() for s in layer.shape_in]
            if layer.kind == "ElementWise"
            else layer.primary_in.to_list(),
            "shape_out": layer.shape_out.to_list(),
        }
        if layer.kind in ("Conv3D", "FullyConnected"):
            entry["filters"] = layer.filters
        if layer.kind in ("Conv3D", "Pool3D"):
            entry["kernel"] = list(layer.kernel)
            entry["stride"] = list(layer.stride)
            entry["padding"] = list(layer.padding)
        if layer.kind == "Conv3D":
            entry["groups"] = layer.groups
        if layer.op_type:
            entry["type"] = layer.op_type
        if layer.kind == "ElementWise":
            entry["broadcast"] = layer.broadcast
        layers.append(entry)
    doc = {"name": model.name, "layers": layers, "edges": [list(e) for e in model.edges]}
    return json.dumps(doc, indent=2)


def topological_order(model: ModelGraph) -> list:
    """Deterministic topological order; ties broken lexicographically by id."""
    import heapq

    indeg = {lid: 0 for lid in model.layers}
    for _, dst in model.edges:
        indeg[dst] += 1
    heap = [lid for lid, n in indeg.items() if n == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        lid = heapq.heappop(heap)
        order.append(lid)
        for nxt in model.successors(lid):
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                heapq.heappush(heap, nxt)
    return order
