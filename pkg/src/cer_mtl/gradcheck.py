"""Finite-difference verification of every layer, loss and the full multi-task graph."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .layers import (
    Conv1dSpec,
    DenseSpec,
    GruSpec,
    conv1d_forward,
    dense_forward,
    gru_forward,
    gru_step,
    init_parameters,
    maxpool1d,
)
from .losses import ccc_loss, mse_loss, mtl_objective, pcc_loss
from .model import ModelConfig, build_model
from .tensor import Tensor, concat, elementwise, gradient_check, matmul, reduce

TOLERANCE = 1e-4


@dataclass(frozen=True)
class Sizes:
    input_dim: int = 6
    window: int = 8
    filters: int = 4
    hidden: int = 3
    batch: int = 16

    @classmethod
    def parse(cls, text: str) -> "Sizes":
        parts = [int(p) for p in text.split(",") if p.strip()]
        if not 1 <= len(parts) <= 5 or min(parts) < 1:
            raise ValueError("sizes must be 1-5 positive integers: P,N,F,H[,B]")
        return cls(*parts)


@dataclass
class ComponentResult:
    name: str
    errors: list[float] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.errors) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return bool(self.errors) and self.max_error < TOLERANCE


def _leaf(a) -> Tensor:
    return Tensor(a, requires_grad=True)


def _components(sizes: Sizes) -> dict[str, Callable[[np.random.Generator], tuple[dict, Callable]]]:
    """Each factory returns (point, f) for one random check point."""
    P, N, F, H, B = sizes.input_dim, sizes.window, sizes.filters, sizes.hidden, sizes.batch

    def elementwise_ops(rng):
        point = {"a": _leaf(rng.uniform(0.5, 2.0, (3, 4))), "b": _leaf(rng.uniform(0.5, 2.0, (4,)))}

        def f(p):
            a, b = p["a"], p["b"]
            y = elementwise("div", elementwise("mul", a, b), elementwise("add", b, 1.0))
            y = elementwise("sub", elementwise("sqrt", y), elementwise("square", elementwise("tanh", a)))
            return elementwise("sigmoid", elementwise("neg", y)).sum()

        return point, f

    def matmul_op(rng):
        point = {"a": _leaf(rng.standard_normal((3, 4))), "b": _leaf(rng.standard_normal((4, 2)))}
        return point, lambda p: matmul(p["a"], p["b"]).tanh().sum()

    def reductions(rng):
        point = {"x": _leaf(rng.standard_normal((4, 5)))}
        return point, lambda p: (reduce("max", p["x"], 1) * reduce("mean", p["x"], 1)).sum()

    def concat_op(rng):
        point = {"a": _leaf(rng.standard_normal((2, 3))), "b": _leaf(rng.standard_normal((4, 3)))}
        w = Tensor(rng.standard_normal((6, 3)))
        return point, lambda p: (concat([p["a"], p["b"]], 0) * w).tanh().sum()

    def conv1d(rng):
        layer = init_parameters(Conv1dSpec(P, F, 3), rng)
        layer.bias.data = 0.1 * rng.standard_normal(F)
        x = Tensor(rng.standard_normal((2, P, N)))
        return layer.parameters(), lambda p: conv1d_forward(layer, x).tanh().sum()

    def maxpool_routing(rng):
        point = {"x": _leaf(rng.standard_normal((2, F, N)))}
        w = Tensor(rng.standard_normal((2, F, N // 2)))
        return point, lambda p: (maxpool1d(p["x"], 2) * w).sum()

    def gru(rng):
        layer = init_parameters(GruSpec(F, H), rng)
        for b in (layer.b_z, layer.b_r, layer.b_h):
            b.data = 0.1 * rng.standard_normal(H)
        x = Tensor(rng.standard_normal((B, F)))
        h = Tensor(rng.uniform(-0.9, 0.9, (B, H)))
        return layer.parameters(), lambda p: gru_step(layer, x, h).square().sum()

    def gru_sequence(rng):
        layer = init_parameters(GruSpec(F, H), rng)
        xs = Tensor(rng.standard_normal((B, F, 5)))
        return layer.parameters(), lambda p: gru_forward(layer, xs).sum()

    def dense(rng):
        layer = init_parameters(DenseSpec(H, 2, "tanh"), rng)
        layer.bias.data = 0.1 * rng.standard_normal(2)
        x = Tensor(rng.standard_normal((B, H)))
        return layer.parameters(), lambda p: dense_forward(layer, x).sum()

    def loss_factory(loss):
        def make(rng):
            ref = rng.standard_normal(256)
            point = {"pred": _leaf(0.5 * ref + rng.standard_normal(256))}
            return point, lambda p: loss(p["pred"], ref)

        return make

    def cer_mtl(rng):
        cfg = ModelConfig(input_dim=P, window=N, conv_filters=F, gru_hidden=H)
        net = build_model(cfg, rng)
        for name, p in net.params.items():
            if ".b" in name or name.endswith("bias"):
                p.data = 0.1 * rng.standard_normal(p.shape)
        x = Tensor(rng.standard_normal((B, P, N)))
        refs = {t: rng.standard_normal(B) for t in cfg.tasks}

        def f(_):
            out = net(x)
            return mtl_objective([ccc_loss(out[t], refs[t]) for t in cfg.tasks])

        return net.params, f

    return {
        "elementwise": elementwise_ops,
        "matmul": matmul_op,
        "reduce": reductions,
        "concat": concat_op,
        "conv1d": conv1d,
        "maxpool1d": maxpool_routing,
        "gru_step": gru,
        "gru_forward": gru_sequence,
        "dense": dense,
        "mse_loss": loss_factory(mse_loss),
        "pcc_loss": loss_factory(pcc_loss),
        "ccc_loss": loss_factory(ccc_loss),
        "mtl_objective_cer_mtl": cer_mtl,
    }


def run_gradcheck(seed: int = 0, sizes: Sizes = Sizes(), points: int = 5, eps: float = 1e-5) -> list[ComponentResult]:
    results = []
    for name, factory in _components(sizes).items():
        rng = np.random.default_rng([seed, len(results)])
        res = ComponentResult(name)
        for _ in range(points):
            point, f = factory(rng)
            res.errors.append(gradient_check(f, point, eps=eps).max_rel_error)
        results.append(res)
    return results
