"""Network topology IR: loading, validation, shape inference, parameter stats.

Topology files are JSON:

    {
      "name": "alexnet",
      "input_shape": [1, 3, 227, 227],
      "layers": [
        {"name": "conv1", "kind": "Convolution", "inputs": ["input"],
         "kernel": [11, 11], "stride": [4, 4], "pad": [0, 0],
         "groups": 1, "out_channels": 96},
        {"name": "relu1", "kind": "ReLU", "inputs": ["conv1"]},
        ...
      ]
    }

`inputs` entries name an earlier layer or the reserved graph input "input".
Kind-specific keys: Convolution uses kernel/stride/pad/groups/out_channels;
Max/AvgPool use kernel/stride/pad; FullyConnected uses out_features; LRN uses
lrn_size/alpha/beta/k; Dropout carries dropout_ratio (identity at inference).
kernel/stride/pad accept a single int or an [h, w] pair.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from math import floor

from .errors import ParseError, ShapeError, UnknownLayer, ValidationError

GRAPH_INPUT = "input"


class DataType(Enum):
    FP32 = "fp32"
    INT8 = "int8"

    @property
    def byte_size(self) -> int:
        return 4 if self is DataType.FP32 else 1


class LayerKind(Enum):
    Convolution = "Convolution"
    FullyConnected = "FullyConnected"
    ReLU = "ReLU"
    MaxPool = "MaxPool"
    AvgPool = "AvgPool"
    LRN = "LRN"
    Dropout = "Dropout"
    Concat = "Concat"
    EltwiseAdd = "EltwiseAdd"
    Softmax = "Softmax"


PARAMETRIC_KINDS = frozenset({LayerKind.Convolution, LayerKind.FullyConnected})
#: Kinds that may take more than one input tensor (joins).
JOIN_KINDS = frozenset({LayerKind.Concat, LayerKind.EltwiseAdd})


@dataclass(frozen=True)
class TensorShape:
    dims: tuple[int, ...]

    def __post_init__(self):
        if not self.dims or any(d < 1 for d in self.dims):
            raise ValidationError(f"all dims must be >= 1, got {self.dims}")

    @property
    def element_count(self) -> int:
        n = 1
        for d in self.dims:
            n *= d
        return n

    def __str__(self) -> str:
        return "x".join(str(d) for d in self.dims)


@dataclass
class LayerSpec:
    name: str
    kind: LayerKind
    inputs: tuple[str, ...]
    hyperparams: dict = field(default_factory=dict)
    # Filled in by shape inference for parametric layers.
    weight_shape: TensorShape | None = None
    bias_shape: TensorShape | None = None

    @property
    def parametric(self) -> bool:
        return self.kind in PARAMETRIC_KINDS

    def param_count(self) -> int:
        n = self.weight_shape.element_count if self.weight_shape else 0
        if self.bias_shape:
            n += self.bias_shape.element_count
        return n


@dataclass
class NetworkGraph:
    """Validated DAG of layers; immutable after load."""

    name: str
    input_shape: TensorShape
    layers: tuple[LayerSpec, ...]
    #: layer name -> {"weight": ndarray, "bias": ndarray}; may be empty.
    weights: dict = field(default_factory=dict)
    #: layer name -> output TensorShape, filled by validation.
    shapes: dict = field(default_factory=dict)

    def __post_init__(self):
        self._by_name = {l.name: l for l in self.layers}
        self._index = {l.name: i for i, l in enumerate(self.layers)}

    def layer(self, name: str) -> LayerSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownLayer(f"no layer named {name!r} in {self.name}") from None

    def index(self, name: str) -> int:
        if name not in self._index:
            raise UnknownLayer(f"no layer named {name!r} in {self.name}")
        return self._index[name]

    def has_layer(self, name: str) -> bool:
        return name in self._by_name

    def consumers(self) -> dict[str, list[str]]:
        """Tensor name -> layers that consume it (includes the graph input)."""
        out: dict[str, list[str]] = {GRAPH_INPUT: []}
        for l in self.layers:
            out.setdefault(l.name, [])
        for l in self.layers:
            for src in l.inputs:
                out[src].append(l.name)
        return out

    @property
    def output_layer(self) -> LayerSpec:
        return self.layers[-1]

    def shape_of(self, tensor: str) -> TensorShape:
        if tensor == GRAPH_INPUT:
            return self.input_shape
        if tensor not in self.shapes:
            raise UnknownLayer(f"no tensor named {tensor!r} in {self.name}")
        return self.shapes[tensor]


def _pair(value, key: str, layer: str) -> tuple[int, int]:
    if isinstance(value, int):
        return (value, value)
    if isinstance(value, (list, tuple)) and len(value) == 2 and all(isinstance(v, int) for v in value):
        return (value[0], value[1])
    raise ParseError(f"layer {layer!r}: {key} must be an int or [h, w] pair, got {value!r}")


_KIND_KEYS = {
    LayerKind.Convolution: {"kernel", "stride", "pad", "groups", "out_channels"},
    LayerKind.FullyConnected: {"out_features"},
    LayerKind.MaxPool: {"kernel", "stride", "pad"},
    LayerKind.AvgPool: {"kernel", "stride", "pad"},
    LayerKind.LRN: {"lrn_size", "alpha", "beta", "k"},
    LayerKind.Dropout: {"dropout_ratio"},
    LayerKind.ReLU: set(),
    LayerKind.Concat: set(),
    LayerKind.EltwiseAdd: set(),
    LayerKind.Softmax: set(),
}


def _parse_layer(entry: dict) -> LayerSpec:
    if not isinstance(entry, dict):
        raise ParseError(f"layer entry must be an object, got {type(entry).__name__}")
    try:
        name = entry["name"]
        kind_str = entry["kind"]
        inputs = entry["inputs"]
    except KeyError as e:
        raise ParseError(f"layer entry missing required key {e.args[0]!r}: {entry!r}") from None
    if not isinstance(name, str) or not name:
        raise ParseError(f"layer name must be a non-empty string, got {name!r}")
    try:
        kind = LayerKind(kind_str)
    except ValueError:
        raise ParseError(f"layer {name!r}: unknown kind {kind_str!r}") from None
    if not isinstance(inputs, list) or not all(isinstance(i, str) for i in inputs):
        raise ParseError(f"layer {name!r}: inputs must be a list of layer names")

    allowed = _KIND_KEYS[kind]
    extra = set(entry) - {"name", "kind", "inputs"} - allowed
    if extra:
        raise ParseError(f"layer {name!r}: unexpected keys {sorted(extra)} for kind {kind.value}")

    hp: dict = {}
    if kind is LayerKind.Convolution:
        if "kernel" not in entry or "out_channels" not in entry:
            raise ParseError(f"layer {name!r}: Convolution requires kernel and out_channels")
        hp["kernel"] = _pair(entry["kernel"], "kernel", name)
        hp["stride"] = _pair(entry.get("stride", 1), "stride", name)
        hp["pad"] = _pair(entry.get("pad", 0), "pad", name)
        hp["groups"] = int(entry.get("groups", 1))
        hp["out_channels"] = int(entry["out_channels"])
        if hp["groups"] < 1 or hp["out_channels"] < 1:
            raise ParseError(f"layer {name!r}: groups and out_channels must be positive")
    elif kind is LayerKind.FullyConnected:
        if "out_features" not in entry:
            raise ParseError(f"layer {name!r}: FullyConnected requires out_features")
        hp["out_features"] = int(entry["out_features"])
        if hp["out_features"] < 1:
            raise ParseError(f"layer {name!r}: out_features must be positive")
    elif kind in (LayerKind.MaxPool, LayerKind.AvgPool):
        if "kernel" not in entry:
            raise ParseError(f"layer {name!r}: pooling requires kernel")
        hp["kernel"] = _pair(entry["kernel"], "kernel", name)
        hp["stride"] = _pair(entry.get("stride", hp["kernel"]), "stride", name)
        hp["pad"] = _pair(entry.get("pad", 0), "pad", name)
    elif kind is LayerKind.LRN:
        hp["lrn_size"] = int(entry.get("lrn_size", 5))
        hp["alpha"] = float(entry.get("alpha", 1e-4))
        hp["beta"] = float(entry.get("beta", 0.75))
        hp["k"] = float(entry.get("k", 1.0))
        if hp["lrn_size"] < 1 or hp["lrn_size"] % 2 == 0:
            raise ParseError(f"layer {name!r}: lrn_size must be odd and positive")
    elif kind is LayerKind.Dropout:
        hp["dropout_ratio"] = float(entry.get("dropout_ratio", 0.5))

    return LayerSpec(name=name, kind=kind, inputs=tuple(inputs), hyperparams=hp)


def _conv_out(in_hw: int, k: int, s: int, p: int, layer: str) -> int:
    if in_hw + 2 * p < k:
        raise ShapeError(f"layer {layer!r}: kernel {k} exceeds padded input {in_hw + 2 * p}")
    return floor((in_hw + 2 * p - k) / s) + 1


def infer_shapes(net: NetworkGraph) -> dict[str, TensorShape]:
    """Output shape per layer; standard conv/pool arithmetic with floor rounding.

    Also fills each parametric layer's weight_shape/bias_shape (they depend on
    the inferred input channel count).
    """
    shapes: dict[str, TensorShape] = {}

    def shape_of(tensor: str) -> TensorShape:
        return net.input_shape if tensor == GRAPH_INPUT else shapes[tensor]

    for layer in net.layers:
        ins = [shape_of(t) for t in layer.inputs]
        kind = layer.kind
        if kind is LayerKind.Convolution:
            if len(ins[0].dims) != 4:
                raise ShapeError(f"layer {layer.name!r}: Convolution needs a 4-D input, got {ins[0]}")
            n, c, h, w = ins[0].dims
            kh, kw = layer.hyperparams["kernel"]
            sh, sw = layer.hyperparams["stride"]
            ph, pw = layer.hyperparams["pad"]
            g = layer.hyperparams["groups"]
            oc = layer.hyperparams["out_channels"]
            if c % g or oc % g:
                raise ShapeError(f"layer {layer.name!r}: groups={g} must divide in={c} and out={oc} channels")
            oh = _conv_out(h, kh, sh, ph, layer.name)
            ow = _conv_out(w, kw, sw, pw, layer.name)
            shapes[layer.name] = TensorShape((n, oc, oh, ow))
            layer.weight_shape = TensorShape((oc, c // g, kh, kw))
            layer.bias_shape = TensorShape((oc,))
        elif kind is LayerKind.FullyConnected:
            n = ins[0].dims[0]
            in_features = ins[0].element_count // n
            of = layer.hyperparams["out_features"]
            shapes[layer.name] = TensorShape((n, of))
            layer.weight_shape = TensorShape((of, in_features))
            layer.bias_shape = TensorShape((of,))
        elif kind in (LayerKind.MaxPool, LayerKind.AvgPool):
            if len(ins[0].dims) != 4:
                raise ShapeError(f"layer {layer.name!r}: pooling needs a 4-D input, got {ins[0]}")
            n, c, h, w = ins[0].dims
            kh, kw = layer.hyperparams["kernel"]
            sh, sw = layer.hyperparams["stride"]
            ph, pw = layer.hyperparams["pad"]
            oh = _conv_out(h, kh, sh, ph, layer.name)
            ow = _conv_out(w, kw, sw, pw, layer.name)
            shapes[layer.name] = TensorShape((n, c, oh, ow))
        elif kind is LayerKind.Concat:
            base = ins[0].dims
            if len(base) < 2:
                raise ShapeError(f"layer {layer.name!r}: Concat needs rank >= 2 inputs")
            channels = 0
            for src, s in zip(layer.inputs, ins):
                if len(s.dims) != len(base) or s.dims[0] != base[0] or s.dims[2:] != base[2:]:
                    raise ShapeError(
                        f"layer {layer.name!r}: Concat input {src!r} has shape {s}, "
                        f"incompatible with {ins[0]} outside the channel axis"
                    )
                channels += s.dims[1]
            shapes[layer.name] = TensorShape((base[0], channels) + base[2:])
        elif kind is LayerKind.EltwiseAdd:
            for src, s in zip(layer.inputs, ins):
                if s.dims != ins[0].dims:
                    raise ShapeError(
                        f"layer {layer.name!r}: EltwiseAdd input {src!r} has shape {s}, expected {ins[0]}"
                    )
            shapes[layer.name] = ins[0]
        elif kind is LayerKind.LRN:
            if len(ins[0].dims) != 4:
                raise ShapeError(f"layer {layer.name!r}: LRN needs a 4-D input, got {ins[0]}")
            shapes[layer.name] = ins[0]
        else:  # ReLU, Dropout, Softmax: shape preserving
            shapes[layer.name] = ins[0]
    return shapes


def validate(net: NetworkGraph) -> None:
    """Check the structural invariants and run shape inference.

    Raises ValidationError naming the offending layer; fills net.shapes.
    """
    seen: set[str] = set()
    for i, layer in enumerate(net.layers):
        if layer.name == GRAPH_INPUT:
            raise ValidationError(f"layer name {GRAPH_INPUT!r} is reserved for the graph input")
        if layer.name in seen:
            raise ValidationError(f"duplicate layer name {layer.name!r}")
        seen.add(layer.name)
        if layer.kind in JOIN_KINDS:
            if len(layer.inputs) < 2:
                raise ValidationError(f"layer {layer.name!r}: {layer.kind.value} needs >= 2 inputs")
        elif len(layer.inputs) != 1:
            raise ValidationError(f"layer {layer.name!r}: {layer.kind.value} takes exactly 1 input")
        for src in layer.inputs:
            if src == GRAPH_INPUT:
                continue
            if src not in seen:
                # Forward or dangling reference; both break the earlier-layer rule.
                where = "later layer" if any(l.name == src for l in net.layers[i:]) else "nonexistent layer"
                raise ValidationError(f"layer {layer.name!r} references {where} {src!r}")
    if not net.layers:
        raise ValidationError("network has no layers")

    consumed = {src for l in net.layers for src in l.inputs}
    outputs = [l.name for l in net.layers if l.name not in consumed]
    if len(outputs) != 1:
        raise ValidationError(f"network must have exactly one output, got {outputs}")
    if outputs[0] != net.layers[-1].name:
        raise ValidationError(f"output layer {outputs[0]!r} must be listed last")

    net.shapes.update(infer_shapes(net))


def load_network(path) -> NetworkGraph:
    """Load and validate a topology JSON file. Weights are attached separately."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ParseError(f"cannot load topology {path}: {e}") from e
    return network_from_dict(doc)


def network_from_dict(doc: dict) -> NetworkGraph:
    if not isinstance(doc, dict):
        raise ParseError("topology document must be a JSON object")
    for key in ("name", "input_shape", "layers"):
        if key not in doc:
            raise ParseError(f"topology missing required key {key!r}")
    dims = doc["input_shape"]
    if not isinstance(dims, list) or not all(isinstance(d, int) and d >= 1 for d in dims):
        raise ParseError(f"input_shape must be a list of positive ints, got {dims!r}")
    layers = tuple(_parse_layer(e) for e in doc["layers"])
    net = NetworkGraph(name=str(doc["name"]), input_shape=TensorShape(tuple(dims)), layers=layers)
    validate(net)
    return net


def network_to_dict(net: NetworkGraph) -> dict:
    layers = []
    for l in net.layers:
        entry = {"name": l.name, "kind": l.kind.value, "inputs": list(l.inputs)}
        for k, v in l.hyperparams.items():
            entry[k] = list(v) if isinstance(v, tuple) else v
        layers.append(entry)
    return {"name": net.name, "input_shape": list(net.input_shape.dims), "layers": layers}


def save_network(net: NetworkGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(network_to_dict(net), f, indent=1)
        f.write("\n")


def param_stats(net: NetworkGraph, through_layer: str) -> tuple[int, int, int]:
    """(param_count, int8_bytes, fp32_bytes) for layers up to through_layer inclusive.

    Counts weights and biases of parametric layers in listed order; INT8 stores
    one byte per parameter, FP32 four.
    """
    idx = net.index(through_layer)
    count = sum(l.param_count() for l in net.layers[: idx + 1] if l.parametric)
    return count, count * DataType.INT8.byte_size, count * DataType.FP32.byte_size


def total_params(net: NetworkGraph) -> int:
    return sum(l.param_count() for l in net.layers if l.parametric)


def storage_reduction(net: NetworkGraph, through_layer: str) -> float:
    """1 - edge_params/total_params for a cut after through_layer."""
    total = total_params(net)
    if total == 0:
        return 0.0
    edge, _, _ = param_stats(net, through_layer)
    return 1.0 - edge / total


BUNDLED_TOPOLOGIES = (
    "alexnet",
    "vgg16",
    "resnet18",
    "googlenet",
    "inception_block",
    "residual_block",
)


def bundled_topology_path(name: str):
    """Path to a topology shipped with the package (see BUNDLED_TOPOLOGIES)."""
    if name not in BUNDLED_TOPOLOGIES:
        raise UnknownLayer(f"no bundled topology {name!r}; available: {', '.join(BUNDLED_TOPOLOGIES)}")
    return resources.files("splitwire").joinpath(f"topologies/{name}.json")


def load_bundled(name: str) -> NetworkGraph:
    with resources.as_file(bundled_topology_path(name)) as p:
        return load_network(p)
