"""Layers of the CNN -> max-pool -> GRU -> dense regressor.

All forward functions accept either a single example or a leading batch
axis: convolution and pooling take ``(C, T)`` or ``(B, C, T)``, the GRU takes
``(input, T)`` or ``(B, input, T)``, dense layers take ``(in,)`` or ``(B, in)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, matmul

ACTIVATIONS = ("tanh", "identity")


@dataclass
class Conv1dLayer:
    weight: Tensor  # (out, in, k)
    bias: Tensor  # (out,)

    def __post_init__(self):
        if self.weight.ndim != 3 or self.weight.shape[2] < 1:
            raise ShapeError(f"conv weight must be (out, in, k>=1), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError("conv bias length must equal out-channels")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


@dataclass
class GruLayer:
    W_z: Tensor
    W_r: Tensor
    W_h: Tensor
    U_z: Tensor
    U_r: Tensor
    U_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor

    def __post_init__(self):
        hidden, inp = self.W_z.shape
        for name in ("W_z", "W_r", "W_h"):
            if getattr(self, name).shape != (hidden, inp):
                raise ShapeError(f"{name} must be {(hidden, inp)}")
        for name in ("U_z", "U_r", "U_h"):
            if getattr(self, name).shape != (hidden, hidden):
                raise ShapeError(f"{name} must be {(hidden, hidden)}")
        for name in ("b_z", "b_r", "b_h"):
            if getattr(self, name).shape != (hidden,):
                raise ShapeError(f"{name} must be {(hidden,)}")

    @property
    def input_size(self) -> int:
        return self.W_z.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.W_z.shape[0]

    def parameters(self) -> dict[str, Tensor]:
        names = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")
        return {n: getattr(self, n) for n in names}


@dataclass
class DenseLayer:
    weight: Tensor  # (out, in)
    bias: Tensor  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError("dense bias length must equal output width")

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


def conv1d_forward(layer: Conv1dLayer, x: Tensor) -> Tensor:
    """Valid cross-correlation along the last (time) axis, mixing all input channels."""
    k = layer.kernel_size
    if x.ndim not in (2, 3) or x.shape[-2] != layer.in_channels:
        raise ShapeError(f"conv expects (..., {layer.in_channels}, T), got {x.shape}")
    T = x.shape[-1]
    if T < k:
        raise ShapeError(f"input length {T} shorter than kernel {k}")
    steps = T - k + 1
    out = None
    for j in range(k):
        term = matmul(layer.weight[:, :, j], x[..., j : j + steps])
        out = term if out is None else out + term
    return out + layer.bias.reshape(layer.out_channels, 1)


def maxpool1d(x: Tensor, pool_size: int) -> Tensor:
    """Non-overlapping max over windows of ``pool_size``; a short trailing remainder is dropped."""
    if pool_size < 1:
        raise ValueError("pool_size must be positive")
    T = x.shape[-1]
    if T < pool_size:
        raise ShapeError(f"sequence length {T} shorter than pool size {pool_size}")
    n = T // pool_size
    trimmed = x if n * pool_size == T else x[..., : n * pool_size]
    return trimmed.reshape(x.shape[:-1] + (n, pool_size)).max(axis=-1)


def _check_gru_input(layer: GruLayer, x: Tensor, h: Tensor) -> None:
    if x.shape[-1] != layer.input_size or h.shape[-1] != layer.hidden_size:
        raise ShapeError(
            f"gru step expects input (..., {layer.input_size}) and state (..., {layer.hidden_size}),"
            f" got {x.shape} and {h.shape}"
        )


def _gru_cell(layer: GruLayer, xz, xr, xh, h_prev: Tensor) -> Tensor:
    z = (xz + matmul(h_prev, layer.U_z.T) + layer.b_z).sigmoid()
    r = (xr + matmul(h_prev, layer.U_r.T) + layer.b_r).sigmoid()
    cand = (xh + matmul(r * h_prev, layer.U_h.T) + layer.b_h).tanh()
    return z * h_prev + (1.0 - z) * cand


def gru_step(layer: GruLayer, x_t: Tensor, h_prev: Tensor) -> Tensor:
    """One GRU update; ``h_t = z*h_prev + (1-z)*tanh(W_h x + U_h (r*h_prev) + b_h)``."""
    _check_gru_input(layer, x_t, h_prev)
    return _gru_cell(
        layer,
        matmul(x_t, layer.W_z.T),
        matmul(x_t, layer.W_r.T),
        matmul(x_t, layer.W_h.T),
        h_prev,
    )


def gru_forward(layer: GruLayer, xs: Tensor) -> Tensor:
    """Run the GRU over the time axis of ``xs`` from a zero state and return the last state."""
    if xs.ndim not in (2, 3) or xs.shape[-2] != layer.input_size:
        raise ShapeError(f"gru expects (..., {layer.input_size}, T), got {xs.shape}")
    T = xs.shape[-1]
    if T < 1:
        raise ShapeError("gru needs a non-empty sequence")
    seq = xs.transpose((1, 0)) if xs.ndim == 2 else xs.transpose((0, 2, 1))  # (..., T, in)
    # input projections for all steps at once
    pz = matmul(seq, layer.W_z.T)
    pr = matmul(seq, layer.W_r.T)
    ph = matmul(seq, layer.W_h.T)
    h = Tensor(np.zeros(xs.shape[:-2] + (layer.hidden_size,)))
    for t in range(T):
        h = _gru_cell(layer, pz[..., t, :], pr[..., t, :], ph[..., t, :], h)
    return h


def dense_forward(layer: DenseLayer, x: Tensor) -> Tensor:
    if x.shape[-1] != layer.weight.shape[1]:
        raise ShapeError(f"dense expects input width {layer.weight.shape[1]}, got {x.shape}")
    y = matmul(x, layer.weight.T) + layer.bias
    return y.tanh() if layer.activation == "tanh" else y


# -- initialisation ----------------------------------------------------------


@dataclass(frozen=True)
class Conv1dSpec:
    in_channels: int
    out_channels: int
    kernel_size: int


@dataclass(frozen=True)
class GruSpec:
    input_size: int
    hidden_size: int


@dataclass(frozen=True)
class DenseSpec:
    in_features: int
    out_features: int
    activation: str = "identity"


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def _zeros(n: int) -> Tensor:
    return Tensor(np.zeros(n), requires_grad=True)


def init_parameters(spec, seed) -> Conv1dLayer | GruLayer | DenseLayer:
    """Glorot-uniform weights and zero biases; ``seed`` may be an int or a Generator."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if isinstance(spec, Conv1dSpec):
        dims = (spec.in_channels, spec.out_channels, spec.kernel_size)
        if min(dims) < 1:
            raise ValueError(f"non-positive conv dimensions {spec}")
        k = spec.kernel_size
        w = glorot_uniform(
            rng, (spec.out_channels, spec.in_channels, k), spec.in_channels * k, spec.out_channels * k
        )
        return Conv1dLayer(w, _zeros(spec.out_channels))
    if isinstance(spec, GruSpec):
        if min(spec.input_size, spec.hidden_size) < 1:
            raise ValueError(f"non-positive GRU dimensions {spec}")
        H, D = spec.hidden_size, spec.input_size
        ws = {n: glorot_uniform(rng, (H, D), D, H) for n in ("W_z", "W_r", "W_h")}
        us = {n: glorot_uniform(rng, (H, H), H, H) for n in ("U_z", "U_r", "U_h")}
        bs = {n: _zeros(H) for n in ("b_z", "b_r", "b_h")}
        return GruLayer(**ws, **us, **bs)
    if isinstance(spec, DenseSpec):
        if min(spec.in_features, spec.out_features) < 1:
            raise ValueError(f"non-positive dense dimensions {spec}")
        w = glorot_uniform(
            rng, (spec.out_features, spec.in_features), spec.in_features, spec.out_features
        )
        return DenseLayer(w, _zeros(spec.out_features), spec.activation)
    raise TypeError(f"unknown layer spec {spec!r}")
