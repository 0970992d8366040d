"""End-to-end forecaster: pad -> DCT -> encode -> expert mixture layers ->
decode -> inverse DCT.

The layer-L mixture output is added to the encoder features before
decoding, and layers feed each other directly (layer l+1 consumes layer
l's mixture output).  Persons are independent samples on the batch axis by
default; scene_persons > 1 instead concatenates that many persons along
the pose axis so the spatial scan crosses person boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .autodiff import ShapeError, Tensor, add
from .codec import PoseCodec, init_pose_codec, pad_sequence
from .dct import DctBasis, dct_forward, dct_inverse
from .moe import (EXPERT_KINDS, GateDecision, RouterParams, init_router,
                  moe_layer_forward)
from .ssm import SCAN_MODES, BiBlockParams, init_bi_block


@dataclass
class ModelConfig:
    joints: int = 15
    history_frames: int = 50
    total_frames: int = 75
    n_experts: int = 4
    active_experts: int = 4          # k
    moe_layers: int = 1
    expert_pool: tuple[str, ...] = ("ST", "TT", "TS", "SS")
    scan_mode: str = "bidirectional"
    flip_back: bool = True
    expand: int = 2
    state_dim: int = 16
    conv_width: int = 4
    dt_rank: int = 0                 # 0 = ceil(channels / 16) per block
    codec_hidden: int = 64
    dropout: float = 0.1
    scene_persons: int = 1
    seed: int = 0

    def __post_init__(self):
        self.expert_pool = tuple(self.expert_pool)
        if self.joints < 1:
            raise ValueError(f"joints must be >= 1, got {self.joints}")
        if not 1 <= self.history_frames < self.total_frames:
            raise ValueError(
                f"need 1 <= history_frames < total_frames, got "
                f"{self.history_frames}/{self.total_frames}")
        if len(self.expert_pool) != self.n_experts:
            raise ValueError(
                f"expert_pool has {len(self.expert_pool)} entries for n_experts={self.n_experts}")
        for kind in self.expert_pool:
            if kind not in EXPERT_KINDS:
                raise ValueError(f"unknown expert kind {kind!r}")
        if not 1 <= self.active_experts <= self.n_experts:
            raise ValueError(
                f"active_experts must be in [1, {self.n_experts}], got {self.active_experts}")
        if self.moe_layers < 1:
            raise ValueError(f"moe_layers must be >= 1, got {self.moe_layers}")
        if self.scan_mode not in SCAN_MODES:
            raise ValueError(f"scan_mode must be one of {SCAN_MODES}, got {self.scan_mode!r}")
        if self.scene_persons < 1:
            raise ValueError(f"scene_persons must be >= 1, got {self.scene_persons}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def pose_dim(self) -> int:
        return self.joints * 3 * self.scene_persons

    def to_dict(self) -> dict:
        d = asdict(self)
        d["expert_pool"] = list(self.expert_pool)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["expert_pool"] = tuple(d["expert_pool"])
        return cls(**d)


@dataclass
class MixtureLayer:
    router: RouterParams
    spatial: BiBlockParams
    temporal: BiBlockParams


class MotionMoE:
    """Owns the codec, the DCT basis and the mixture layers."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        d, t_total = config.pose_dim, config.total_frames
        self.basis = DctBasis(t_total)
        self.codec = init_pose_codec(rng, d, t_total, config.codec_hidden, config.dropout)
        dt_rank = config.dt_rank if config.dt_rank > 0 else None
        self.layers: list[MixtureLayer] = []
        for _ in range(config.moe_layers):
            self.layers.append(MixtureLayer(
                router=init_router(rng, d, config.n_experts, config.active_experts),
                spatial=init_bi_block(rng, t_total, config.expand, config.state_dim,
                                      config.conv_width, dt_rank),
                temporal=init_bi_block(rng, d, config.expand, config.state_dim,
                                       config.conv_width, dt_rank),
            ))

    def forward(self, history: Tensor, train_mode: bool = False,
                rng: np.random.Generator | None = None
                ) -> tuple[Tensor, list[GateDecision]]:
        """(batch, D, t) observed frames -> (batch, D, T) full trajectory.

        The first t output frames are reconstructions, not copies; the
        remaining T - t frames are the forecast.
        """
        cfg = self.config
        if not isinstance(history, Tensor):
            history = Tensor(history)
        if history.ndim != 3 or history.shape[1] != cfg.pose_dim:
            raise ShapeError(
                f"forward: expected (batch, {cfg.pose_dim}, t<= {cfg.total_frames}), "
                f"got {history.shape}")
        if history.shape[2] != cfg.history_frames:
            raise ShapeError(
                f"forward: expected {cfg.history_frames} history frames, got {history.shape[2]}")
        if train_mode and cfg.dropout > 0.0 and rng is None:
            raise ValueError("train-mode forward with dropout needs an explicit rng")

        padded = pad_sequence(history, cfg.total_frames)
        coeffs = dct_forward(padded, self.basis)
        f_input = self.codec.encode(coeffs, train_mode, rng)

        features = f_input
        decisions: list[GateDecision] = []
        for layer in self.layers:
            features, decision = moe_layer_forward(
                layer.router, layer.spatial, layer.temporal, cfg.expert_pool,
                features, cfg.scan_mode, cfg.flip_back)
            decisions.append(decision)

        decoded = self.codec.decode(add(f_input, features), train_mode, rng)
        return dct_inverse(decoded, self.basis), decisions

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, p in self.codec.parameters().items():
            out[f"codec/{name}"] = p
        for i, layer in enumerate(self.layers):
            for name, p in layer.router.parameters().items():
                out[f"layer{i}/router/{name}"] = p
            for name, p in layer.spatial.parameters().items():
                out[f"layer{i}/spatial/{name}"] = p
            for name, p in layer.temporal.parameters().items():
                out[f"layer{i}/temporal/{name}"] = p
        return out

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None


@dataclass
class ParameterAudit:
    per_module: dict[str, int]
    total: int
    sharing_ok: bool
    duplicates: list[str] = field(default_factory=list)

    def as_text(self) -> str:
        lines = [f"{name}\t{count}" for name, count in self.per_module.items()]
        lines.append(f"total\t{self.total}")
        lines.append(f"sharing_ok\t{self.sharing_ok}")
        return "\n".join(lines)


def audit_parameters(model: MotionMoE) -> ParameterAudit:
    """Per-module parameter counts plus the weight-sharing check: a mixture
    layer owns exactly router + one spatial + one temporal block, however
    many experts the pool lists."""
    params = model.parameters()
    seen: dict[int, str] = {}
    duplicates: list[str] = []
    per_module: dict[str, int] = {}
    for name, p in params.items():
        if p.tid in seen:
            duplicates.append(f"{name} aliases {seen[p.tid]}")
            continue
        seen[p.tid] = name
        module = "/".join(name.split("/")[:2])
        per_module[module] = per_module.get(module, 0) + p.size
    total = sum(per_module.values())

    sharing_ok = not duplicates
    for i, layer in enumerate(model.layers):
        expected = (sum(p.size for p in layer.router.parameters().values())
                    + sum(p.size for p in layer.spatial.parameters().values())
                    + sum(p.size for p in layer.temporal.parameters().values()))
        got = sum(count for module, count in per_module.items()
                  if module.startswith(f"layer{i}/"))
        if got != expected:
            sharing_ok = False
    return ParameterAudit(per_module=per_module, total=total,
                          sharing_ok=sharing_ok, duplicates=duplicates)
