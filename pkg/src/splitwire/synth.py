"""Seeded synthetic weights and inputs for tests and weightless runs.

SPLITWIRE_SEED overrides the default seed everywhere synthetic data is drawn.
"""

from __future__ import annotations

import os

import numpy as np

DEFAULT_SEED = 1234
WEIGHT_SCALE = 0.1  # uniform [-0.1, 0.1], see README


def default_seed() -> int:
    return int(os.environ.get("SPLITWIRE_SEED", DEFAULT_SEED))


def synthetic_weights(net, seed: int | None = None) -> None:
    """Fill net.weights with uniform [-WEIGHT_SCALE, WEIGHT_SCALE] tensors.

    Deterministic given (topology, seed): layers are visited in listed order.
    """
    rng = np.random.default_rng(default_seed() if seed is None else seed)
    for layer in net.layers:
        if not layer.parametric:
            continue
        w = rng.uniform(-WEIGHT_SCALE, WEIGHT_SCALE, size=layer.weight_shape.dims)
        b = rng.uniform(-WEIGHT_SCALE, WEIGHT_SCALE, size=layer.bias_shape.dims)
        net.weights[layer.name] = {"weight": w.astype(np.float32), "bias": b.astype(np.float32)}


def synthetic_inputs(shape: tuple[int, ...], count: int, seed: int | None = None) -> list[np.ndarray]:
    """`count` standard-normal input tensors of the given shape."""
    rng = np.random.default_rng(default_seed() if seed is None else seed)
    return [rng.standard_normal(shape).astype(np.float32) for _ in range(count)]
