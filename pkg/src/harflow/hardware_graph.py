"""Accelerator hardware graph: node capabilities, the layer-to-node mapping and
the combine/separate/fuse structural edits.

Graphs are immutable values: every edit returns a new graph, so candidate
states in concurrent search chains never alias mutable state.
"""

import math
from dataclasses import dataclass, field, replace

from .model_ir import LayerDescriptor, ModelGraph, TensorShape


class HardwareGraphError(ValueError):
    pass


def legal_fold(preferred: int, total: int) -> int:
    """Largest divisor of `total` that also divides `preferred` (>= 1)."""
    if total <= 0:
        return 1
    return max(1, math.gcd(preferred, total))


@dataclass(frozen=True)
class NodeCapability:
    """Compile-time capability record of a computation node."""

    kind: str
    shape_in_max: TensorShape
    shape_out_max: TensorShape
    filters_max: int = 0
    kernel_max: tuple = (1, 1, 1)
    coarse_in: int = 1
    coarse_out: int = 1
    fine: int = 1
    supports_types: frozenset = frozenset()
    runtime_configurable: bool = True

    def __post_init__(self):
        if self.kind in ("Conv3D", "FullyConnected"):
            if self.shape_in_max.c % self.coarse_in:
                raise HardwareGraphError(
                    f"coarse_in {self.coarse_in} must divide max channels "
                    f"{self.shape_in_max.c}"
                )
            if self.filters_max % self.coarse_out:
                raise HardwareGraphError(
                    f"coarse_out {self.coarse_out} must divide max filters "
                    f"{self.filters_max}"
                )
        else:
            if self.coarse_in != self.coarse_out:
                raise HardwareGraphError("non-Conv/FC nodes use a single coarse fold")
            if self.shape_in_max.c % self.coarse_in:
                raise HardwareGraphError(
                    f"coarse fold {self.coarse_in} must divide max channels "
                    f"{self.shape_in_max.c}"
                )
        kvol = self.kernel_max[0] * self.kernel_max[1] * self.kernel_max[2]
        if self.kind == "Conv3D":
            if kvol % self.fine:
                raise HardwareGraphError(f"fine {self.fine} must divide |K| = {kvol}")
        elif self.fine != 1:
            raise HardwareGraphError("fine folding applies to Conv3D only")

    def with_folds(self, coarse_in=None, coarse_out=None, fine=None) -> "NodeCapability":
        return replace(
            self,
            coarse_in=self.coarse_in if coarse_in is None else coarse_in,
            coarse_out=self.coarse_out if coarse_out is None else coarse_out,
            fine=self.fine if fine is None else fine,
        )

    def to_dict(self):
        return {
            "kind": self.kind,
            "shape_in_max": self.shape_in_max.to_list(),
            "shape_out_max": self.shape_out_max.to_list(),
            "filters_max": self.filters_max,
            "kernel_max": list(self.kernel_max),
            "coarse_in": self.coarse_in,
            "coarse_out": self.coarse_out,
            "fine": self.fine,
            "supports_types": sorted(self.supports_types),
            "runtime_configurable": self.runtime_configurable,
        }

    @classmethod
    def from_dict(cls, doc) -> "NodeCapability":
        return cls(
            kind=doc["kind"],
            shape_in_max=TensorShape.from_list(doc["shape_in_max"]),
            shape_out_max=TensorShape.from_list(doc["shape_out_max"]),
            filters_max=int(doc.get("filters_max", 0)),
            kernel_max=tuple(doc.get("kernel_max", (1, 1, 1))),
            coarse_in=int(doc.get("coarse_in", 1)),
            coarse_out=int(doc.get("coarse_out", 1)),
            fine=int(doc.get("fine", 1)),
            supports_types=frozenset(doc.get("supports_types", [])),
            runtime_configurable=bool(doc.get("runtime_configurable", True)),
        )


def _shape_max(shapes) -> TensorShape:
    return TensorShape(
        max(s.d for s in shapes),
        max(s.h for s in shapes),
        max(s.w for s in shapes),
        max(s.c for s in shapes),
    )


def capability_for_layers(kind, layers, runtime_configurable=True) -> NodeCapability:
    """Derive a maximal capability covering every given layer of one kind."""
    if not layers:
        raise HardwareGraphError("cannot derive a capability from zero layers")
    if any(l.kind != kind for l in layers):
        raise HardwareGraphError("layers of mixed kinds cannot share a node")
    if kind == "FullyConnected":
        shape_in = TensorShape(1, 1, 1, max(l.fc_features for l in layers))
        shape_out = TensorShape(1, 1, 1, max(l.filters for l in layers))
    else:
        shape_in = _shape_max([l.primary_in for l in layers])
        shape_out = _shape_max([l.shape_out for l in layers])
    filters_max = max((l.filters for l in layers), default=0)
    if kind in ("Conv3D", "Pool3D"):
        kernel_max = tuple(max(l.kernel[i] for l in layers) for i in range(3))
    else:
        kernel_max = (1, 1, 1)
    supports = frozenset(l.op_type for l in layers if l.op_type)
    return NodeCapability(
        kind=kind,
        shape_in_max=shape_in,
        shape_out_max=shape_out,
        filters_max=filters_max,
        kernel_max=kernel_max,
        supports_types=supports,
        runtime_configurable=runtime_configurable,
    )


@dataclass(frozen=True)
class HardwareGraph:
    """Set of computation nodes plus the execution mapping over model layers."""

    nodes: dict  # node id -> NodeCapability
    mapping: dict  # node id -> tuple of layer ids
    fused: dict = field(default_factory=dict)  # activation layer id -> producer layer id

    def inverse_mapping(self) -> dict:
        inv = {}
        for node_id, layer_ids in self.mapping.items():
            for lid in layer_ids:
                inv[lid] = node_id
        return inv

    def node_for_layer(self, layer_id: str) -> str:
        for node_id, layer_ids in self.mapping.items():
            if layer_id in layer_ids:
                return node_id
        raise HardwareGraphError(f"layer '{layer_id}' is not mapped to any node")

    def validate_cover(self, model: ModelGraph):
        """Disjoint-cover invariant: every non-fused layer mapped exactly once."""
        seen = {}
        for node_id, layer_ids in self.mapping.items():
            for lid in layer_ids:
                if lid in seen:
                    raise HardwareGraphError(
                        f"layer '{lid}' mapped to both '{seen[lid]}' and '{node_id}'"
                    )
                seen[lid] = node_id
        expected = set(model.layers) - set(self.fused)
        if set(seen) != expected:
            missing = sorted(expected - set(seen))
            extra = sorted(set(seen) - expected)
            raise HardwareGraphError(
                f"mapping does not cover the model (missing {missing}, extra {extra})"
            )
        for node_id, layer_ids in self.mapping.items():
            kind = self.nodes[node_id].kind
            for lid in layer_ids:
                if model.layers[lid].kind != kind:
                    raise HardwareGraphError(
                        f"layer '{lid}' ({model.layers[lid].kind}) mapped to "
                        f"'{node_id}' ({kind})"
                    )

    def to_dict(self):
        return {
            "nodes": {nid: cap.to_dict() for nid, cap in self.nodes.items()},
            "mapping": {nid: list(lids) for nid, lids in self.mapping.items()},
            "fused": dict(self.fused),
        }

    @classmethod
    def from_dict(cls, doc) -> "HardwareGraph":
        return cls(
            nodes={nid: NodeCapability.from_dict(d) for nid, d in doc["nodes"].items()},
            mapping={nid: tuple(lids) for nid, lids in doc["mapping"].items()},
            fused=dict(doc.get("fused", {})),
        )


_KIND_TAG = {
    "Conv3D": "conv",
    "FullyConnected": "fc",
    "Pool3D": "pool",
    "Activation": "act",
    "GlobalAvgPool": "gap",
    "ElementWise": "eltwise",
}


def _fresh_node_id(kind: str, existing) -> str:
    tag = _KIND_TAG[kind]
    i = 0
    while f"{tag}_{i}" in existing:
        i += 1
    return f"{tag}_{i}"


def initial_mapping(model: ModelGraph, runtime_configurable=True) -> HardwareGraph:
    """One computation node per layer kind, sized to cover all its layers."""
    kinds = []
    for layer in model.layers.values():
        if layer.kind not in kinds:
            kinds.append(layer.kind)
    nodes = {}
    mapping = {}
    for kind in kinds:
        layers = model.layers_of_kind(kind)
        node_id = _fresh_node_id(kind, nodes)
        nodes[node_id] = capability_for_layers(kind, layers, runtime_configurable)
        mapping[node_id] = tuple(l.id for l in layers)
    return HardwareGraph(nodes=nodes, mapping=mapping)


def combine_nodes(g: HardwareGraph, node_ids, model: ModelGraph) -> HardwareGraph:
    """Merge same-kind nodes into one whose capability covers all of them."""
    node_ids = list(node_ids)
    if len(node_ids) != len(set(node_ids)) or len(node_ids) < 2:
        raise HardwareGraphError("combine requires at least 2 distinct nodes")
    caps = []
    for nid in node_ids:
        if nid not in g.nodes:
            raise HardwareGraphError(f"unknown node '{nid}'")
        caps.append(g.nodes[nid])
    kind = caps[0].kind
    if any(c.kind != kind for c in caps):
        raise HardwareGraphError("cannot combine nodes of different kinds")
    shape_in = _shape_max([c.shape_in_max for c in caps])
    shape_out = _shape_max([c.shape_out_max for c in caps])
    filters_max = max(c.filters_max for c in caps)
    kernel_max = tuple(max(c.kernel_max[i] for c in caps) for i in range(3))
    coarse_in = legal_fold(max(c.coarse_in for c in caps), shape_in.c)
    if kind in ("Conv3D", "FullyConnected"):
        coarse_out = legal_fold(max(c.coarse_out for c in caps), filters_max)
    else:
        coarse_out = coarse_in
    kvol = kernel_max[0] * kernel_max[1] * kernel_max[2]
    fine = legal_fold(max(c.fine for c in caps), kvol) if kind == "Conv3D" else 1
    merged = NodeCapability(
        kind=kind,
        shape_in_max=shape_in,
        shape_out_max=shape_out,
        filters_max=filters_max,
        kernel_max=kernel_max,
        coarse_in=coarse_in,
        coarse_out=coarse_out,
        fine=fine,
        supports_types=frozenset().union(*[c.supports_types for c in caps]),
        runtime_configurable=all(c.runtime_configurable for c in caps),
    )
    nodes = {nid: cap for nid, cap in g.nodes.items() if nid not in node_ids}
    mapping = {nid: lids for nid, lids in g.mapping.items() if nid not in node_ids}
    merged_id = _fresh_node_id(kind, nodes)
    nodes[merged_id] = merged
    mapping[merged_id] = tuple(lid for nid in node_ids for lid in g.mapping[nid])
    return HardwareGraph(nodes=nodes, mapping=mapping, fused=dict(g.fused))


def separate_node(g: HardwareGraph, node_id: str, layer_ids, model: ModelGraph) -> HardwareGraph:
    """Detach layers from a node onto a freshly derived node of their own."""
    if node_id not in g.nodes:
        raise HardwareGraphError(f"unknown node '{node_id}'")
    detach = list(layer_ids)
    if not detach:
        raise HardwareGraphError("must detach at least one layer")
    assigned = g.mapping[node_id]
    for lid in detach:
        if lid not in assigned:
            raise HardwareGraphError(f"layer '{lid}' is not mapped to node '{node_id}'")
    source = g.nodes[node_id]
    remaining = tuple(lid for lid in assigned if lid not in detach)
    new_cap = capability_for_layers(
        source.kind,
        [model.layers[lid] for lid in detach],
        source.runtime_configurable,
    )
    new_cap = new_cap.with_folds(
        coarse_in=legal_fold(source.coarse_in, new_cap.shape_in_max.c),
        coarse_out=(
            legal_fold(source.coarse_out, new_cap.filters_max)
            if source.kind in ("Conv3D", "FullyConnected")
            else legal_fold(source.coarse_in, new_cap.shape_in_max.c)
        ),
        fine=(
            legal_fold(
                source.fine,
                new_cap.kernel_max[0] * new_cap.kernel_max[1] * new_cap.kernel_max[2],
            )
            if source.kind == "Conv3D"
            else 1
        ),
    )
    nodes = dict(g.nodes)
    mapping = dict(g.mapping)
    if remaining:
        mapping[node_id] = remaining
    else:
        del nodes[node_id]
        del mapping[node_id]
    new_id = _fresh_node_id(source.kind, nodes)
    nodes[new_id] = new_cap
    mapping[new_id] = tuple(detach)
    return HardwareGraph(nodes=nodes, mapping=mapping, fused=dict(g.fused))


FUSIBLE_PRODUCER_KINDS = ("Conv3D", "FullyConnected", "ElementWise")


def fuse_activations(g: HardwareGraph, model: ModelGraph) -> HardwareGraph:
    """Absorb activation layers into their producer's output stream.

    Activations are rate-1 elementwise passes; fusing one removes its
    standalone (memory-bound) invocation without changing the producer's
    stream shape. Activations fed by anything other than Conv/FC/ElementWise
    stay standalone.
    """
    fused = dict(g.fused)
    for layer in model.layers.values():
        if layer.kind != "Activation" or layer.id in fused:
            continue
        producers = model.predecessors(layer.id)
        if len(producers) != 1:
            continue
        if model.layers[producers[0]].kind in FUSIBLE_PRODUCER_KINDS:
            fused[layer.id] = producers[0]
    if fused == g.fused:
        return g
    nodes = dict(g.nodes)
    mapping = {}
    for node_id, layer_ids in g.mapping.items():
        keep = tuple(lid for lid in layer_ids if lid not in fused)
        if keep:
            mapping[node_id] = keep
        else:
            del nodes[node_id]
    return HardwareGraph(nodes=nodes, mapping=mapping, fused=fused)
