"""Pose feature codec: history padding and the graph-convolutional
encoder/decoder that maps DCT coefficient matrices to latent features.

The graph is over the D = J*3 pose coordinates with a fully learnable dense
adjacency; a layer computes act(A x W + b).  Encoder and decoder are both
three layers (T -> hidden -> hidden -> T) with tanh on the hidden layers,
a residual on the middle (width-preserving) layer, and inverted dropout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (ShapeError, Tensor, add, concat, matmul, mul,
                       slice_axis, tanh)


def pad_sequence(history: Tensor, total_frames: int) -> Tensor:
    """Extend (batch, D, t) to (batch, D, T) by repeating the last frame.

    Differentiable: the replicated frames route gradient back to frame t-1.
    """
    if history.ndim != 3:
        raise ShapeError(f"pad_sequence: expected (batch, D, t), got {history.shape}")
    t = history.shape[-1]
    if t < 1:
        raise ShapeError("pad_sequence: history must contain at least one frame")
    if t > total_frames:
        raise ShapeError(f"pad_sequence: history length {t} exceeds total frames {total_frames}")
    if t == total_frames:
        return history
    last = slice_axis(history, axis=2, start=t - 1, stop=t)
    return concat([history] + [last] * (total_frames - t), axis=2)


def apply_dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; scaling at train time keeps eval a plain forward."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(keep, requires_grad=False))


@dataclass
class GcnLayer:
    adjacency: Tensor  # (D, D), learnable
    weight: Tensor     # (C_in, C_out)
    bias: Tensor       # (C_out,)
    activation: str = "tanh"   # "tanh" or "none"
    residual: bool = False
    dropout: float = 0.0

    def forward(self, x: Tensor, train_mode: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        if x.ndim != 3 or x.shape[1] != self.adjacency.shape[0]:
            raise ShapeError(
                f"GcnLayer: expected (batch, {self.adjacency.shape[0]}, C_in), got {x.shape}")
        if x.shape[2] != self.weight.shape[0]:
            raise ShapeError(
                f"GcnLayer: input width {x.shape[2]} != weight rows {self.weight.shape[0]}")
        y = add(matmul(matmul(self.adjacency, x), self.weight), self.bias)
        if self.activation == "tanh":
            y = tanh(y)
        elif self.activation != "none":
            raise ValueError(f"unknown activation {self.activation!r}")
        if train_mode and self.dropout > 0.0:
            if rng is None:
                raise ValueError("dropout in train mode needs an explicit rng")
            y = apply_dropout(y, self.dropout, rng)
        if self.residual:
            y = add(y, x)
        return y

    def parameters(self) -> dict[str, Tensor]:
        return {"adjacency": self.adjacency, "weight": self.weight, "bias": self.bias}


def init_gcn_layer(rng: np.random.Generator, dim: int, c_in: int, c_out: int,
                   activation: str, residual: bool, dropout: float) -> GcnLayer:
    # identity + small noise keeps early propagation close to per-node
    adjacency = Tensor(np.eye(dim) + 0.01 * rng.standard_normal((dim, dim)),
                       requires_grad=True)
    bound = 1.0 / np.sqrt(c_in)
    weight = Tensor(rng.uniform(-bound, bound, size=(c_in, c_out)), requires_grad=True)
    bias = Tensor(np.zeros(c_out), requires_grad=True)
    return GcnLayer(adjacency, weight, bias, activation, residual, dropout)


@dataclass
class PoseCodec:
    encoder: list[GcnLayer]
    decoder: list[GcnLayer]

    def encode(self, coeffs: Tensor, train_mode: bool = False,
               rng: np.random.Generator | None = None) -> Tensor:
        return _run_stack(self.encoder, coeffs, train_mode, rng)

    def decode(self, features: Tensor, train_mode: bool = False,
               rng: np.random.Generator | None = None) -> Tensor:
        return _run_stack(self.decoder, features, train_mode, rng)

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for side, layers in (("enc", self.encoder), ("dec", self.decoder)):
            for i, layer in enumerate(layers):
                for name, p in layer.parameters().items():
                    out[f"{side}{i}/{name}"] = p
        return out


def _run_stack(layers: list[GcnLayer], x: Tensor, train_mode: bool,
               rng: np.random.Generator | None) -> Tensor:
    for layer in layers:
        x = layer.forward(x, train_mode, rng)
    return x


def init_pose_codec(rng: np.random.Generator, pose_dim: int, frames: int,
                    hidden: int = 64, dropout: float = 0.1) -> PoseCodec:
    """Both stacks run frames -> hidden -> hidden -> frames over the pose graph."""

    def stack():
        return [
            init_gcn_layer(rng, pose_dim, frames, hidden, "tanh", False, dropout),
            init_gcn_layer(rng, pose_dim, hidden, hidden, "tanh", True, dropout),
            init_gcn_layer(rng, pose_dim, hidden, frames, "none", False, 0.0),
        ]

    return PoseCodec(encoder=stack(), decoder=stack())
