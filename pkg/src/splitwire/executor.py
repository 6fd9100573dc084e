"""Reference executors: FP32 ground truth and the mixed-precision INT8 path.

The INT8 path follows the on-device steps for each parametric layer:

  1. quantize the incoming FP32 activation with the input tensor's params;
  2. run the operator on integer codes, accumulating exactly;
  3. map the accumulator back to FP32 through the affine expansion
     (x = s_x*q_x + m_x, w = s_w*q_w + m_w):

        sum(x*w) = s_x*s_w*S_qq + s_x*m_w*S_qx + s_w*m_x*S_qw + k*m_x*m_w

     where S_qq/S_qx/S_qw are integer sums over the reduction window and k is
     its length;
  4. apply the activation/pool/LRN tail in FP32 on the dequantized output.

Integer GEMMs are evaluated in float64, which is exact for these sums (codes
are <= 255, so any accumulator fits far below 2**53); engine construction
rejects reduction windows whose worst-case accumulator would not fit a signed
32-bit register, the budget real INT8 kernels work in.

Batch size is fixed to 1 throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MissingQuantParams, ShapeMismatch, ValidationError
from .graph_ir import GRAPH_INPUT, DataType, LayerKind, LayerSpec, NetworkGraph, TensorShape
from .quantizer import (
    CalibrationPolicy,
    MinMax,
    QuantParams,
    QuantizedLayerWeights,
    calibrate,
    dequantize,
    quantize,
    quantize_weights,
)

INT32_MAX = np.iinfo(np.int32).max


def _windows(x: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """(C, H, W) -> read-only view (C, kh, kw, OH, OW) of sliding windows."""
    c, h, w = x.shape
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1
    s0, s1, s2 = x.strides
    return np.lib.stride_tricks.as_strided(
        x, shape=(c, kh, kw, oh, ow), strides=(s0, s1, s2, s1 * sh, s2 * sw), writeable=False
    )


def _pad_hw(x: np.ndarray, ph: int, pw: int, fill) -> np.ndarray:
    if not (ph or pw):
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (ph, ph), (pw, pw)), constant_values=fill)


def _conv_hyper(layer: LayerSpec):
    hp = layer.hyperparams
    return hp["kernel"], hp["stride"], hp["pad"], hp["groups"], hp["out_channels"]


def conv_fp32(x: np.ndarray, layer: LayerSpec, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    (kh, kw), (sh, sw), (ph, pw), groups, oc = _conv_hyper(layer)
    img = _pad_hw(x[0].astype(np.float32), ph, pw, 0.0)
    c = img.shape[0]
    cg, og = c // groups, oc // groups
    win = _windows(img, kh, kw, sh, sw)
    oh, ow = win.shape[3], win.shape[4]
    out = np.empty((oc, oh, ow), dtype=np.float32)
    for g in range(groups):
        cols = win[g * cg : (g + 1) * cg].reshape(cg * kh * kw, oh * ow)
        wmat = w[g * og : (g + 1) * og].reshape(og, cg * kh * kw).astype(np.float32)
        out[g * og : (g + 1) * og] = (wmat @ cols + b[g * og : (g + 1) * og, None]).reshape(og, oh, ow)
    return out[None]


def fc_fp32(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    flat = x.reshape(1, -1).astype(np.float32)
    return flat @ w.T.astype(np.float32) + b.astype(np.float32)


def maxpool_fp32(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    hp = layer.hyperparams
    (kh, kw), (sh, sw), (ph, pw) = hp["kernel"], hp["stride"], hp["pad"]
    img = _pad_hw(x[0], ph, pw, -np.inf)
    return _windows(img, kh, kw, sh, sw).max(axis=(1, 2))[None].astype(np.float32)


def avgpool_fp32(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    hp = layer.hyperparams
    (kh, kw), (sh, sw), (ph, pw) = hp["kernel"], hp["stride"], hp["pad"]
    img = _pad_hw(x[0], ph, pw, 0.0)
    # Divisor is the full window area (padded positions count as zeros).
    return (_windows(img, kh, kw, sh, sw).sum(axis=(1, 2)) / (kh * kw))[None].astype(np.float32)


def lrn_fp32(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    hp = layer.hyperparams
    size, alpha, beta, k = hp["lrn_size"], hp["alpha"], hp["beta"], hp["k"]
    half = size // 2
    sq = (x[0] ** 2).astype(np.float32)
    c = sq.shape[0]
    padded = np.pad(sq, ((half, half), (0, 0), (0, 0)))
    csum = np.cumsum(np.concatenate([np.zeros((1,) + sq.shape[1:], dtype=sq.dtype), padded]), axis=0)
    window = csum[size:] - csum[:-size]  # (c, H, W) sliding channel sums
    assert window.shape[0] == c
    denom = (k + (alpha / size) * window) ** beta
    return (x[0] / denom)[None].astype(np.float32)


def softmax_fp32(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=1, keepdims=True)).astype(np.float32)


def relu_fp32(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0).astype(np.float32)


def _nonparam_forward(layer: LayerSpec, ins: list[np.ndarray]) -> np.ndarray:
    kind = layer.kind
    if kind is LayerKind.ReLU:
        return relu_fp32(ins[0])
    if kind is LayerKind.MaxPool:
        return maxpool_fp32(ins[0], layer)
    if kind is LayerKind.AvgPool:
        return avgpool_fp32(ins[0], layer)
    if kind is LayerKind.LRN:
        return lrn_fp32(ins[0], layer)
    if kind is LayerKind.Dropout:
        return ins[0]
    if kind is LayerKind.Concat:
        return np.concatenate(ins, axis=1)
    if kind is LayerKind.EltwiseAdd:
        out = ins[0].copy()
        for a in ins[1:]:
            out += a
        return out.astype(np.float32)
    if kind is LayerKind.Softmax:
        return softmax_fp32(ins[0])
    raise ValidationError(f"layer {layer.name!r}: unexpected kind {kind} in FP32 dispatch")


def conv_int8(
    codes: np.ndarray,
    in_params: QuantParams,
    layer: LayerSpec,
    qw: QuantizedLayerWeights,
) -> np.ndarray:
    """Integer convolution with affine-offset correction; returns FP32 output.

    Padded positions carry the code nearest to real 0.0 under the input
    params, matching how zero-point padding works in integer kernels.
    """
    (kh, kw), (sh, sw), (ph, pw), groups, oc = _conv_hyper(layer)
    zero_code = int(quantize(np.float64(0.0), in_params).data)
    img = _pad_hw(codes[0], ph, pw, zero_code).astype(np.float64)
    c = img.shape[0]
    cg, og = c // groups, oc // groups
    k_len = cg * kh * kw

    s_x, m_x = in_params.scale, in_params.t_min
    s_w, m_w = qw.params.scale, qw.params.t_min
    bias = dequantize(qw.bias).astype(np.float64)

    win = _windows(img, kh, kw, sh, sw)
    oh, ow = win.shape[3], win.shape[4]
    out = np.empty((oc, oh, ow), dtype=np.float64)
    for g in range(groups):
        cols = win[g * cg : (g + 1) * cg].reshape(k_len, oh * ow)
        wmat = qw.weight.data[g * og : (g + 1) * og].reshape(og, k_len).astype(np.float64)
        s_qq = wmat @ cols
        s_qx = cols.sum(axis=0)
        s_qw = wmat.sum(axis=1)
        acc = s_x * s_w * s_qq + s_x * m_w * s_qx[None, :] + s_w * m_x * s_qw[:, None] + k_len * m_x * m_w
        out[g * og : (g + 1) * og] = (acc + bias[g * og : (g + 1) * og, None]).reshape(og, oh, ow)
    return out[None].astype(np.float32)


def fc_int8(codes: np.ndarray, in_params: QuantParams, qw: QuantizedLayerWeights) -> np.ndarray:
    flat = codes.reshape(-1).astype(np.float64)
    wmat = qw.weight.data.astype(np.float64)
    k_len = flat.size
    s_x, m_x = in_params.scale, in_params.t_min
    s_w, m_w = qw.params.scale, qw.params.t_min
    s_qq = wmat @ flat
    s_qx = flat.sum()
    s_qw = wmat.sum(axis=1)
    acc = s_x * s_w * s_qq + s_x * m_w * s_qx + s_w * m_x * s_qw + k_len * m_x * m_w
    return (acc + dequantize(qw.bias).astype(np.float64))[None].astype(np.float32)


def _reduction_length(layer: LayerSpec) -> int:
    if layer.kind is LayerKind.Convolution:
        oc, cg, kh, kw = layer.weight_shape.dims
        return cg * kh * kw
    return layer.weight_shape.dims[1]


@dataclass
class SubnetEngine:
    """An executable (sub-)network bound to weights at one precision."""

    graph: NetworkGraph
    precision: DataType
    qweights: dict[str, QuantizedLayerWeights] = field(default_factory=dict)
    act_params: dict[str, QuantParams] = field(default_factory=dict)

    @property
    def input_shape(self) -> TensorShape:
        return self.graph.input_shape

    @property
    def output_layer(self) -> str:
        return self.graph.output_layer.name

    def output_params(self) -> QuantParams:
        """Quant params of the engine's final tensor (INT8 engines only)."""
        name = self.output_layer
        if name not in self.act_params:
            raise MissingQuantParams(f"no activation params for output tensor {name!r}")
        return self.act_params[name]


def build_fp32_engine(net: NetworkGraph) -> SubnetEngine:
    for layer in net.layers:
        if layer.parametric and layer.name not in net.weights:
            raise ValidationError(f"layer {layer.name!r} has no weights attached")
    return SubnetEngine(graph=net, precision=DataType.FP32)


def calibrate_activations(
    net: NetworkGraph, inputs: list[np.ndarray], policy: CalibrationPolicy = MinMax()
) -> dict[str, QuantParams]:
    """Per-tensor quant params from FP32 runs over a calibration batch.

    Keys are tensor names: the graph input plus every layer output.
    """
    engine = build_fp32_engine(net)
    observed: dict[str, list[np.ndarray]] = {GRAPH_INPUT: []}
    for x in inputs:
        vals = _forward_fp32(engine, x)
        if isinstance(policy, MinMax):
            # Only the extremes matter; keep memory flat for large nets.
            for name, v in vals.items():
                observed.setdefault(name, []).append(np.array([v.min(), v.max()], dtype=np.float64))
        else:
            for name, v in vals.items():
                observed.setdefault(name, []).append(v.ravel().astype(np.float64))
    return {name: calibrate(chunks, policy) for name, chunks in observed.items() if chunks}


def build_int8_engine(
    net: NetworkGraph,
    calib_inputs: list[np.ndarray],
    policy: CalibrationPolicy = MinMax(),
) -> SubnetEngine:
    for layer in net.layers:
        if layer.parametric:
            k_len = _reduction_length(layer)
            if k_len * 255 * 255 > INT32_MAX:
                raise ValidationError(
                    f"layer {layer.name!r}: reduction length {k_len} overflows a 32-bit accumulator"
                )
    qweights = quantize_weights(net, policy)
    act_params = calibrate_activations(net, calib_inputs, policy)
    return SubnetEngine(graph=net, precision=DataType.INT8, qweights=qweights, act_params=act_params)


def _check_input(engine: SubnetEngine, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if tuple(x.shape) != engine.input_shape.dims:
        raise ShapeMismatch(f"engine expects input {engine.input_shape.dims}, got {tuple(x.shape)}")
    return x


def _forward_fp32(engine: SubnetEngine, x: np.ndarray) -> dict[str, np.ndarray]:
    x = _check_input(engine, x)
    vals: dict[str, np.ndarray] = {GRAPH_INPUT: x}
    for layer in engine.graph.layers:
        ins = [vals[t] for t in layer.inputs]
        if layer.kind is LayerKind.Convolution:
            w = engine.graph.weights[layer.name]
            vals[layer.name] = conv_fp32(ins[0], layer, w["weight"], w["bias"])
        elif layer.kind is LayerKind.FullyConnected:
            w = engine.graph.weights[layer.name]
            vals[layer.name] = fc_fp32(ins[0], w["weight"], w["bias"])
        else:
            vals[layer.name] = _nonparam_forward(layer, ins)
    return vals


def run_fp32(engine: SubnetEngine, x: np.ndarray) -> np.ndarray:
    """Full-precision reference semantics; deterministic bit-for-bit."""
    if engine.precision is not DataType.FP32:
        raise ValidationError("run_fp32 requires an FP32 engine")
    return _forward_fp32(engine, x)[engine.output_layer]


def run_int8(engine: SubnetEngine, x: np.ndarray) -> np.ndarray:
    """Mixed INT8 path: integer parametric ops, FP32 tails; returns FP32."""
    if engine.precision is not DataType.INT8:
        raise ValidationError("run_int8 requires an INT8 engine")
    x = _check_input(engine, x)
    vals: dict[str, np.ndarray] = {GRAPH_INPUT: x}
    for layer in engine.graph.layers:
        if layer.parametric:
            src = layer.inputs[0]
            if src not in engine.act_params:
                raise MissingQuantParams(f"no activation params for tensor {src!r}")
            q = quantize(vals[src], engine.act_params[src])
            qw = engine.qweights[layer.name]
            if layer.kind is LayerKind.Convolution:
                vals[layer.name] = conv_int8(q.data, q.params, layer, qw)
            else:
                vals[layer.name] = fc_int8(q.data, q.params, qw)
        else:
            vals[layer.name] = _nonparam_forward(layer, [vals[t] for t in layer.inputs])
    return vals[engine.output_layer]


def run_collaborative(
    edge: SubnetEngine | None, cloud: SubnetEngine | None, x: np.ndarray
) -> np.ndarray:
    """Edge INT8 then cloud FP32, with the boundary blob quantized in between.

    With no edge engine this is exactly the FP32 run (cloud-only baseline,
    input crosses as raw FP32); with no cloud engine it is exactly the pure
    INT8 run (the result is not re-quantized, there is no next consumer).
    """
    if edge is None and cloud is None:
        raise ValidationError("need at least one engine")
    if edge is None:
        return run_fp32(cloud, x)
    if cloud is None:
        return run_int8(edge, x)
    y = run_int8(edge, x)
    q = quantize(y, edge.output_params())
    boundary = dequantize(q)
    if tuple(boundary.shape) != cloud.input_shape.dims:
        raise ShapeMismatch(
            f"edge boundary {tuple(boundary.shape)} does not match cloud input {cloud.input_shape.dims}"
        )
    return run_fp32(cloud, boundary)
