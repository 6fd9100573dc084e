"""Offline INT8 quantization: threshold calibration and the affine code map.

Values quantize to unsigned codes in [0, range_lp] (255 for INT8): the floor
threshold t_min maps to code 0, t_max to range_lp, everything between to
round((x - t_min) / (t_max - t_min) * range_lp) with half rounded away from
zero. Out-of-range values clamp to the end codes. Dequantization is the affine
inverse evaluated at the code grid.

Thresholds are stored rounded to float32 so they survive the wire format and
the weights container bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .container import ContainerEntry, load_container, save_container
from .errors import EmptyCalibration, NonFiniteInput, ParseError, ValidationError
from .graph_ir import DataType, NetworkGraph

INT8_RANGE = 255  # number of low-precision steps for 8-bit codes
DEGENERATE_WIDEN = 0.5  # applied when min == max, so the range is never empty


def _f32(x: float) -> float:
    return float(np.float32(x))


@dataclass(frozen=True)
class QuantParams:
    t_min: float
    t_max: float
    range_lp: int = INT8_RANGE

    def __post_init__(self):
        if not (self.t_min < self.t_max):
            raise ValidationError(f"need t_min < t_max, got [{self.t_min}, {self.t_max}]")
        if not (0 < self.range_lp <= 255):
            raise ValidationError(f"range_lp must be in (0, 255] for 8-bit codes, got {self.range_lp}")

    @property
    def scale(self) -> float:
        return (self.t_max - self.t_min) / self.range_lp


@dataclass
class QuantizedTensor:
    shape: tuple[int, ...]
    data: np.ndarray  # uint8 codes in [0, range_lp]
    params: QuantParams


@dataclass(frozen=True)
class MinMax:
    """Thresholds at the observed minimum and maximum."""


@dataclass(frozen=True)
class Percentile:
    """Two-sided quantile thresholds: t_max at the p-quantile, t_min at (1-p)."""

    p: float

    def __post_init__(self):
        if not (0.5 < self.p <= 1.0):
            raise ValidationError(f"percentile must be in (0.5, 1], got {self.p}")


CalibrationPolicy = MinMax | Percentile


def parse_policy(text: str) -> CalibrationPolicy:
    if text == "minmax":
        return MinMax()
    if text.startswith("percentile:"):
        try:
            return Percentile(float(text.split(":", 1)[1]))
        except ValueError as e:
            raise ParseError(f"bad calibration policy {text!r}: {e}") from None
    raise ParseError(f"unknown calibration policy {text!r} (expected minmax or percentile:P)")


def calibrate(
    values: np.ndarray | Iterable[np.ndarray],
    policy: CalibrationPolicy = MinMax(),
    range_lp: int = INT8_RANGE,
) -> QuantParams:
    """Find (t_min, t_max) thresholds over one tensor or a stream of tensors."""
    if isinstance(values, np.ndarray):
        values = [values]
    flats = []
    for v in values:
        a = np.asarray(v, dtype=np.float64).ravel()
        if a.size == 0:
            continue
        if not np.isfinite(a).all():
            raise NonFiniteInput("calibration values contain NaN or Inf")
        flats.append(a)
    if not flats:
        raise EmptyCalibration("no calibration values observed")
    pooled = np.concatenate(flats) if len(flats) > 1 else flats[0]

    if isinstance(policy, MinMax):
        t_min, t_max = float(pooled.min()), float(pooled.max())
    else:
        s = np.sort(pooled)
        n = s.size
        hi = int(np.floor(policy.p * (n - 1)))
        lo = int(np.ceil((1.0 - policy.p) * (n - 1)))
        t_min, t_max = float(s[lo]), float(s[hi])

    t_min, t_max = _f32(t_min), _f32(t_max)
    if t_min == t_max:
        t_min, t_max = _f32(t_min - DEGENERATE_WIDEN), _f32(t_max + DEGENERATE_WIDEN)
    return QuantParams(t_min, t_max, range_lp)


def quantize(x: np.ndarray, params: QuantParams) -> QuantizedTensor:
    """Map FP32 values to codes; total on finite inputs, clamps at thresholds."""
    a = np.asarray(x, dtype=np.float64)
    if not np.isfinite(a).all():
        raise NonFiniteInput("cannot quantize NaN or Inf")
    scaled = (a - params.t_min) / (params.t_max - params.t_min) * params.range_lp
    # Interior values are positive, so half-away-from-zero is floor(v + 0.5).
    codes = np.floor(scaled + 0.5)
    codes = np.where(a >= params.t_max, params.range_lp, codes)
    codes = np.where(a <= params.t_min, 0, codes)
    return QuantizedTensor(tuple(a.shape), codes.astype(np.uint8), params)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    """Affine inverse of quantize, exact at the code grid; returns float32."""
    out = q.params.scale * q.data.astype(np.float64) + q.params.t_min
    return out.astype(np.float32)


@dataclass
class QuantizedLayerWeights:
    weight: QuantizedTensor
    bias: QuantizedTensor
    params: QuantParams  # shared by weight and bias (per-tensor calibration)


def quantize_weights(net: NetworkGraph, policy: CalibrationPolicy = MinMax()) -> dict[str, QuantizedLayerWeights]:
    """Per-layer weight calibration + quantization; biases share the weight params."""
    out: dict[str, QuantizedLayerWeights] = {}
    for layer in net.layers:
        if not layer.parametric:
            continue
        if layer.name not in net.weights:
            raise ValidationError(f"layer {layer.name!r} has no weights attached")
        w = net.weights[layer.name]["weight"]
        b = net.weights[layer.name]["bias"]
        params = calibrate(w, policy)
        out[layer.name] = QuantizedLayerWeights(quantize(w, params), quantize(b, params), params)
    return out


def save_quantized_model(path, qweights: dict[str, QuantizedLayerWeights]) -> None:
    entries = []
    for name, qw in qweights.items():
        p = qw.params
        entries.append(
            ContainerEntry(f"{name}.weight", DataType.INT8, qw.weight.data, p.t_min, p.t_max, p.range_lp)
        )
        entries.append(
            ContainerEntry(f"{name}.bias", DataType.INT8, qw.bias.data, p.t_min, p.t_max, p.range_lp)
        )
    save_container(path, entries)


def load_quantized_model(path) -> dict[str, QuantizedLayerWeights]:
    entries = load_container(path)
    out: dict[str, QuantizedLayerWeights] = {}
    for name, e in entries.items():
        if not name.endswith(".weight"):
            continue
        layer = name[: -len(".weight")]
        be = entries.get(f"{layer}.bias")
        if be is None:
            raise ParseError(f"quantized model missing bias entry for {layer!r}")
        if e.dtype is not DataType.INT8 or be.dtype is not DataType.INT8:
            raise ParseError(f"quantized model entry {layer!r} is not INT8")
        params = QuantParams(e.t_min, e.t_max, e.range_lp)
        out[layer] = QuantizedLayerWeights(
            QuantizedTensor(tuple(e.array.shape), e.array, params),
            QuantizedTensor(tuple(be.array.shape), be.array, params),
            params,
        )
    return out
