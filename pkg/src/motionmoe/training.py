"""Training loop: Adam with bias correction, a per-epoch exponential decay
reaching 0.1x at epoch 50, and versioned binary checkpoints that round-trip
byte-identically (so 3 epochs + a 2-epoch resume equals a straight 5-epoch
run bit for bit in float64 mode).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor, backward, get_default_dtype, reshape
from .data import MotionSequence, batch_iter, unflatten_poses
from .model import ModelConfig, MotionMoE
from .objectives import LossWeights, report_at_horizons, total_loss


class TrainingError(Exception):
    """Non-finite losses or gradients, bad checkpoints, config mismatches."""


def lr_at_epoch(base_lr: float, epoch: int) -> float:
    """base * (0.1 ** (1/50)) ** epoch; epoch 0 is exactly base."""
    if base_lr <= 0:
        raise ValueError(f"base_lr must be positive, got {base_lr}")
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return base_lr * 0.1 ** (epoch / 50.0)


@dataclass
class AdamState:
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, Tensor],
              grads: dict[str, np.ndarray], lr: float) -> None:
    """One bias-corrected Adam update, in place on the parameter buffers."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class TrainSettings:
    epochs: int = 200
    batch_size: int = 96
    base_lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 0.0       # 0 disables clipping
    checkpoint_every: int = 0    # 0 = only final
    seed: int = 0
    loss: LossWeights = field(default_factory=LossWeights)
    fps: float = 25.0
    horizons: tuple[float, ...] = (0.2, 0.6, 1.0)
    root_joint: int = 0
    out_dir: str | None = None


def _clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


def _batch_to_pose4d(flat: np.ndarray | Tensor, scene_persons: int):
    """(B, D, T) with D = P*J*3 -> ndarray view (B*P, J, 3, T) for metrics."""
    arr = flat.data if isinstance(flat, Tensor) else flat
    b, d, t = arr.shape
    j3 = d // scene_persons
    return arr.reshape(b * scene_persons, j3 // 3, 3, t)


def run_epoch(model: MotionMoE, sequences: list[MotionSequence],
              settings: TrainSettings, optim: AdamState,
              rng: np.random.Generator, epoch: int) -> float:
    """One optimization pass; returns the mean batch loss."""
    cfg = model.config
    lr = lr_at_epoch(settings.base_lr, epoch)
    shuffle_seed = int(rng.integers(0, 2 ** 63 - 1))
    params = model.parameters()
    losses = []
    for batch_index, (hist, target) in enumerate(
            batch_iter(sequences, settings.batch_size, cfg.history_frames,
                       cfg.total_frames, shuffle_seed)):
        hist, target = _regroup_scene(hist, target, cfg.scene_persons)
        model.zero_grad()
        with Tape():
            pred, _ = model.forward(Tensor(hist), train_mode=True, rng=rng)
            b, d, t_total = pred.shape
            pred4 = reshape(pred, (b * cfg.scene_persons, d // (3 * cfg.scene_persons), 3, t_total))
            gt4 = Tensor(_batch_to_pose4d(target, cfg.scene_persons))
            loss = total_loss(pred4, gt4, cfg.history_frames, settings.loss)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss in epoch {epoch}, batch {batch_index}")
            backward(loss)
        grads = {name: p.grad for name, p in params.items() if p.grad is not None}
        if settings.grad_clip > 0.0:
            _clip_gradients(grads, settings.grad_clip)
        adam_step(optim, params, grads, lr)
        losses.append(value)
    return float(np.mean(losses)) if losses else 0.0


def _regroup_scene(hist: np.ndarray, target: np.ndarray, scene_persons: int):
    """Concatenate groups of scene_persons consecutive rows along the pose
    axis; rows are sequence-major so each group is one scene."""
    if scene_persons == 1:
        return hist, target
    b, d, t = hist.shape
    if b % scene_persons:
        raise TrainingError(
            f"batch of {b} person rows does not divide into scenes of {scene_persons}")
    g = b // scene_persons
    return (hist.reshape(g, scene_persons * d, t),
            target.reshape(g, scene_persons * d, target.shape[2]))


def evaluate(model: MotionMoE, sequences: list[MotionSequence],
             settings: TrainSettings, batch_size: int = 16):
    """Forecast every sequence in file order and score the forecast window."""
    cfg = model.config
    preds, gts = [], []
    for hist, target in batch_iter(sequences, batch_size, cfg.history_frames,
                                   cfg.total_frames, shuffle_seed=None):
        hist, target = _regroup_scene(hist, target, cfg.scene_persons)
        pred, _ = model.forward(Tensor(hist))
        preds.append(_batch_to_pose4d(pred, cfg.scene_persons))
        gts.append(_batch_to_pose4d(target, cfg.scene_persons))
    pred = np.concatenate(preds, axis=0)
    gt = np.concatenate(gts, axis=0)
    return report_at_horizons(pred, gt, cfg.history_frames, settings.fps,
                              settings.horizons, settings.root_joint)


def fit(model: MotionMoE, train_seqs: list[MotionSequence],
        val_seqs: list[MotionSequence] | None, settings: TrainSettings,
        hooks: tuple = (), resume: "Checkpoint | None" = None) -> list[dict]:
    """Train for settings.epochs total; returns one log record per epoch.

    When ``resume`` is given, training continues from its epoch with the
    optimizer and RNG state restored, reproducing an uninterrupted run.
    """
    if resume is not None:
        restore_into(model, resume)
        optim = resume.optim_state()
        rng = resume.rng()
        start = resume.epoch
    else:
        optim = AdamState(beta1=settings.beta1, beta2=settings.beta2, eps=settings.eps)
        rng = np.random.default_rng(settings.seed)
        start = 0

    log: list[dict] = []
    for epoch in range(start, settings.epochs):
        train_loss = run_epoch(model, train_seqs, settings, optim, rng, epoch)
        record = {"epoch": epoch, "lr": lr_at_epoch(settings.base_lr, epoch),
                  "train_loss": train_loss}
        if val_seqs:
            report = evaluate(model, val_seqs, settings)
            record["val_jpe"] = report.avg_jpe
            record["val_ape"] = report.avg_ape
        log.append(record)
        for hook in hooks:
            hook(model, record)
        if settings.out_dir is not None:
            done = epoch + 1
            periodic = settings.checkpoint_every > 0 and done % settings.checkpoint_every == 0
            if periodic or done == settings.epochs:
                save_checkpoint(f"{settings.out_dir}/checkpoint_{done:05d}.stmc",
                                model, optim, done, rng)
    return log


def append_log(path, records: list[dict]) -> None:
    with open(path, "a") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# --- checkpoints ------------------------------------------------------------

CKPT_MAGIC = b"STMC"
CKPT_VERSION = 1
_CKPT_HEAD = struct.Struct("<4sIQ")


@dataclass
class Checkpoint:
    config: ModelConfig
    epoch: int
    tensors: dict[str, np.ndarray]
    adam_meta: dict
    rng_state: dict

    def optim_state(self) -> AdamState:
        state = AdamState(step=self.adam_meta["step"], beta1=self.adam_meta["beta1"],
                          beta2=self.adam_meta["beta2"], eps=self.adam_meta["eps"])
        for key, arr in self.tensors.items():
            if key.startswith("adam_m/"):
                state.m[key[len("adam_m/"):]] = arr.copy()
            elif key.startswith("adam_v/"):
                state.v[key[len("adam_v/"):]] = arr.copy()
        return state

    def rng(self) -> np.random.Generator:
        gen = np.random.default_rng()
        gen.bit_generator.state = self.rng_state
        return gen


def save_checkpoint(path, model: MotionMoE, optim: AdamState, epoch: int,
                    rng: np.random.Generator) -> None:
    params = model.parameters()
    entries = []
    blobs = []
    offset = 0

    def push(name: str, arr: np.ndarray):
        nonlocal offset
        raw = np.ascontiguousarray(arr).tobytes()
        entries.append({"name": name, "shape": list(arr.shape),
                        "dtype": str(arr.dtype), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)

    for name, p in params.items():
        push(f"param/{name}", p.data)
    for name in params:
        if name in optim.m:
            push(f"adam_m/{name}", optim.m[name])
            push(f"adam_v/{name}", optim.v[name])

    header = {
        "version": CKPT_VERSION,
        "config": model.config.to_dict(),
        "epoch": epoch,
        "adam": {"step": optim.step, "beta1": optim.beta1,
                 "beta2": optim.beta2, "eps": optim.eps},
        "rng_state": _encode_rng(rng.bit_generator.state),
        "tensors": entries,
    }
    head_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, len(head_bytes)))
        fh.write(head_bytes)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _CKPT_HEAD.size:
        raise TrainingError("checkpoint too short for a header")
    magic, version, head_len = _CKPT_HEAD.unpack_from(raw)
    if magic != CKPT_MAGIC:
        raise TrainingError(f"bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise TrainingError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[_CKPT_HEAD.size:_CKPT_HEAD.size + head_len])
    config = ModelConfig.from_dict(header["config"])
    if expected_config is not None and config != expected_config:
        stored, wanted = config.to_dict(), expected_config.to_dict()
        diverging = sorted(k for k in wanted if stored.get(k) != wanted[k])
        raise TrainingError(f"checkpoint config mismatch on field(s): {', '.join(diverging)}")

    base = _CKPT_HEAD.size + head_len
    tensors = {}
    for entry in header["tensors"]:
        lo = base + entry["offset"]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"]),
                            count=int(np.prod(entry["shape"], dtype=np.int64)) or 1,
                            offset=lo)
        if not entry["shape"]:
            arr = arr.reshape(())
        else:
            arr = arr.reshape(entry["shape"])
        tensors[entry["name"]] = arr.copy()
    return Checkpoint(config=config, epoch=header["epoch"], tensors=tensors,
                      adam_meta=header["adam"], rng_state=_decode_rng(header["rng_state"]))


def restore_into(model: MotionMoE, ckpt: Checkpoint) -> None:
    if model.config != ckpt.config:
        stored, wanted = ckpt.config.to_dict(), model.config.to_dict()
        diverging = sorted(k for k in wanted if stored.get(k) != wanted[k])
        raise TrainingError(f"checkpoint config mismatch on field(s): {', '.join(diverging)}")
    params = model.parameters()
    for name, p in params.items():
        key = f"param/{name}"
        if key not in ckpt.tensors:
            raise TrainingError(f"checkpoint is missing parameter {name!r}")
        stored = ckpt.tensors[key]
        if stored.shape != p.data.shape:
            raise TrainingError(
                f"checkpoint parameter {name!r} has shape {stored.shape}, model expects {p.data.shape}")
        p.data[...] = stored


def model_from_checkpoint(ckpt: Checkpoint) -> MotionMoE:
    model = MotionMoE(ckpt.config)
    restore_into(model, ckpt)
    return model


def _encode_rng(state: dict) -> dict:
    # PCG64 state holds 128-bit ints; stringify for exact JSON round trips
    return json.loads(json.dumps(state, default=str))


def _decode_rng(state) -> dict:
    if isinstance(state, dict):
        return {k: _decode_rng(v) for k, v in state.items()}
    if isinstance(state, str) and state.lstrip("-").isdigit():
        return int(state)
    return state
