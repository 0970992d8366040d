"""Top-k gated mixture over four spatiotemporal expert compositions.

All experts in one layer are built from the SAME two shared blocks: a
spatial block (scan axis = pose coordinate, channels = frequency bins) and
a temporal block (scan axis = frequency bin, channels = pose coordinates).
Choosing an expert only chooses a composition order, never new parameters:

    ST: spatial, then temporal        TT: temporal twice
    TS: temporal, then spatial        SS: spatial twice

The gate reduces each sample's feature map by a temporal mean, applies one
linear layer, keeps the top-k logits (ties to the lowest index), masks the
rest to -inf and softmaxes.  Experts whose weight is zero for every sample
in the batch are skipped; skipping is numerically identical to evaluating
and multiplying by zero.  There is no auxiliary load-balancing loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (ShapeError, Tensor, add, matmul, mul, reduce_mean,
                       reshape, slice_axis, softmax_lastaxis, topk_mask,
                       transpose)
from .ssm import BiBlockParams, bidirectional_forward

EXPERT_KINDS = ("ST", "TT", "TS", "SS")


@dataclass
class RouterParams:
    gate_weight: Tensor  # (D, N)
    gate_bias: Tensor    # (N,)
    k: int

    def __post_init__(self):
        n = self.gate_weight.shape[1]
        if not 1 <= self.k <= n:
            raise ValueError(f"router k={self.k} outside [1, {n}]")

    @property
    def n_experts(self) -> int:
        return self.gate_weight.shape[1]

    def parameters(self) -> dict[str, Tensor]:
        return {"gate_weight": self.gate_weight, "gate_bias": self.gate_bias}


def init_router(rng: np.random.Generator, pose_dim: int, n_experts: int, k: int) -> RouterParams:
    bound = 1.0 / np.sqrt(pose_dim)
    return RouterParams(
        gate_weight=Tensor(rng.uniform(-bound, bound, size=(pose_dim, n_experts)),
                           requires_grad=True),
        gate_bias=Tensor(np.zeros(n_experts), requires_grad=True),
        k=k,
    )


@dataclass
class GateDecision:
    """Routing record for one batch: raw logits, surviving expert indices
    (ascending) and the dense weight rows (exactly N-k zeros each)."""

    logits: np.ndarray   # (batch, N)
    kept: np.ndarray     # (batch, k) int
    weights: Tensor      # (batch, N), differentiable

    def to_lines(self, sample_offset: int = 0, layer: int = 0) -> list[str]:
        lines = []
        w = self.weights.data
        for i in range(self.logits.shape[0]):
            logits = ",".join(f"{v:.6f}" for v in self.logits[i])
            kept = ",".join(str(int(v)) for v in self.kept[i])
            weights = ",".join(f"{v:.6f}" for v in w[i])
            lines.append(f"sample={sample_offset + i} layer={layer} "
                         f"logits={logits} kept={kept} weights={weights}")
        return lines


def gate(router: RouterParams, features: Tensor) -> GateDecision:
    """Route (batch, D, T) features: temporal mean -> linear -> top-k softmax."""
    if features.ndim != 3 or features.shape[1] != router.gate_weight.shape[0]:
        raise ShapeError(
            f"gate: expected (batch, {router.gate_weight.shape[0]}, T), got {features.shape}")
    descriptor = reduce_mean(features, axes=(2,))
    logits = add(matmul(descriptor, router.gate_weight), router.gate_bias)
    weights = softmax_lastaxis(topk_mask(logits, router.k))
    # stable argsort of negated logits: ties resolve to the lowest index
    order = np.argsort(-logits.data, axis=-1, kind="stable")
    kept = np.sort(order[:, :router.k], axis=-1)
    return GateDecision(logits=np.array(logits.data), kept=kept, weights=weights)


def expert_forward(kind: str, shared_s: BiBlockParams, shared_t: BiBlockParams,
                   features: Tensor, scan_mode: str = "bidirectional",
                   flip_back: bool = True) -> Tensor:
    """Apply one expert composition to (batch, D, T).

    The spatial block consumes (batch, D, T) directly; the temporal block
    sees the transposed view (batch, T, D) and the result is transposed
    back, so every expert preserves (batch, D, T).
    """
    if kind not in EXPERT_KINDS:
        raise ValueError(f"unknown expert kind {kind!r}, expected one of {EXPERT_KINDS}")

    def spatial(x):
        return bidirectional_forward(shared_s, x, scan_mode, flip_back)

    def temporal(x):
        y = bidirectional_forward(shared_t, transpose(x, 1, 2), scan_mode, flip_back)
        return transpose(y, 1, 2)

    first, second = {"ST": (spatial, temporal), "TT": (temporal, temporal),
                     "TS": (temporal, spatial), "SS": (spatial, spatial)}[kind]
    return second(first(features))


def moe_layer_forward(router: RouterParams, shared_s: BiBlockParams,
                      shared_t: BiBlockParams, pool: tuple[str, ...],
                      features: Tensor, scan_mode: str = "bidirectional",
                      flip_back: bool = True) -> tuple[Tensor, GateDecision]:
    """Weighted sum of expert outputs under the gate's sparse decision."""
    if len(pool) != router.n_experts:
        raise ShapeError(f"pool size {len(pool)} != router width {router.n_experts}")
    decision = gate(router, features)
    bsz = features.shape[0]
    out = None
    for e, kind in enumerate(pool):
        if not np.any(decision.weights.data[:, e] != 0.0):
            continue
        w_col = reshape(slice_axis(decision.weights, axis=1, start=e, stop=e + 1),
                        (bsz, 1, 1))
        term = mul(expert_forward(kind, shared_s, shared_t, features, scan_mode, flip_back),
                   w_col)
        out = term if out is None else add(out, term)
    return out, decision
