"""Selective state-space block and its bidirectional wrapper.

One block runs, over (batch, L, C):

    x, z   = split(in_proj(X))              # each (B, L, E*C)
    x'     = SiLU(causal depthwise conv(x))
    dt,B,C = split(x_proj(x'))
    delta  = softplus(dt_proj(dt) + dt_bias)        # (B, L, E*C), > 0
    A      = -exp(A_log)                            # (E*C, N), < 0
    A_bar  = exp(delta * A)        B_bar = delta * B
    h_i    = A_bar_i . h_{i-1} + B_bar_i . x'_i     # h_0 = 0
    y_i    = sum_n C_i . h_i
    out    = out_proj(y . SiLU(z))

The discretization is exact (zero-order hold) on the state path and Euler
on the input path.  The scan is a single fused tape operation with a
hand-written reverse recurrence; ``selective_scan_reference`` is the naive
per-step oracle it is tested against.

The bidirectional wrapper shares ONE set of block weights between the
forward and the reversed scan, adds the raw input back, and finishes with
LN(LN(core) + FFN(LN(core))).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (AutodiffError, ShapeError, Tensor, add,
                       depthwise_causal_conv1d, exp, layernorm_lastaxis,
                       matmul, mul, record, relu, reshape, reverse_axis,
                       silu, slice_axis, softplus)

SCAN_MODES = ("bidirectional", "forward", "backward")

_debug_checks = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle costly invariant checks (positive delta, finite states)."""
    global _debug_checks
    _debug_checks = bool(enabled)


def default_dt_rank(channels: int) -> int:
    return max(1, math.ceil(channels / 16))


@dataclass
class MambaBlockParams:
    channels: int
    expand: int
    state_dim: int
    conv_width: int
    dt_rank: int
    in_proj: Tensor      # (C, 2*E*C)
    conv_kernel: Tensor  # (E*C, W)
    conv_bias: Tensor    # (E*C,)
    x_proj: Tensor       # (E*C, dt_rank + 2*N)
    dt_proj: Tensor      # (dt_rank, E*C)
    dt_bias: Tensor      # (E*C,)
    A_log: Tensor        # (E*C, N)
    out_proj: Tensor     # (E*C, C)

    def parameters(self) -> dict[str, Tensor]:
        return {
            "in_proj": self.in_proj,
            "conv_kernel": self.conv_kernel,
            "conv_bias": self.conv_bias,
            "x_proj": self.x_proj,
            "dt_proj": self.dt_proj,
            "dt_bias": self.dt_bias,
            "A_log": self.A_log,
            "out_proj": self.out_proj,
        }


def init_mamba_block(rng: np.random.Generator, channels: int, expand: int = 2,
                     state_dim: int = 16, conv_width: int = 4,
                     dt_rank: int | None = None,
                     dt_min: float = 0.001, dt_max: float = 0.1) -> MambaBlockParams:
    """Initialization follows the reference selective-SSM recipe: per-channel
    step sizes start log-uniform in [dt_min, dt_max] (the bias stores the
    softplus preimage) and A starts at -(1..N) for every channel."""
    if channels < 1 or expand < 1 or state_dim < 1 or conv_width < 1:
        raise ValueError("channels, expand, state_dim and conv_width must be positive")
    if dt_rank is None:
        dt_rank = default_dt_rank(channels)
    inner = expand * channels

    def uniform(fan_in, shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), size=inner))
    dt_bias = dt + np.log(-np.expm1(-dt))  # softplus(dt_bias) == dt

    a = np.tile(np.arange(1, state_dim + 1, dtype=np.float64), (inner, 1))

    return MambaBlockParams(
        channels=channels, expand=expand, state_dim=state_dim,
        conv_width=conv_width, dt_rank=dt_rank,
        in_proj=Tensor(uniform(channels, (channels, 2 * inner)), requires_grad=True),
        conv_kernel=Tensor(uniform(conv_width, (inner, conv_width)), requires_grad=True),
        conv_bias=Tensor(np.zeros(inner), requires_grad=True),
        x_proj=Tensor(uniform(inner, (inner, dt_rank + 2 * state_dim)), requires_grad=True),
        dt_proj=Tensor(uniform(dt_rank, (dt_rank, inner)), requires_grad=True),
        dt_bias=Tensor(dt_bias, requires_grad=True),
        A_log=Tensor(np.log(a), requires_grad=True),
        out_proj=Tensor(uniform(inner, (inner, channels)), requires_grad=True),
    )


def ssm_discretize(delta: Tensor, a: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """(A_bar, B_bar) from step sizes and continuous parameters.

    delta: (B, L, EC) positive; a: (EC, N) negative; b: (B, L, N).
    A_bar = exp(delta x a) per state (exact), B_bar = delta x b (Euler).
    """
    if delta.ndim != 3:
        raise ShapeError(f"ssm_discretize: delta must be (batch, L, channels), got {delta.shape}")
    if a.ndim != 2 or a.shape[0] != delta.shape[2]:
        raise ShapeError(f"ssm_discretize: a must be ({delta.shape[2]}, N), got {a.shape}")
    if b.ndim != 3 or b.shape[:2] != delta.shape[:2] or b.shape[2] != a.shape[1]:
        raise ShapeError(
            f"ssm_discretize: b must be {delta.shape[:2] + (a.shape[1],)}, got {b.shape}")
    if _debug_checks and np.any(delta.data <= 0.0):
        raise AutodiffError("ssm_discretize: delta must be strictly positive")
    bsz, length, inner = delta.shape
    n = a.shape[1]
    d4 = reshape(delta, (bsz, length, inner, 1))
    a_bar = exp(mul(d4, a))
    b_bar = mul(d4, reshape(b, (bsz, length, 1, n)))
    return a_bar, b_bar


def selective_scan(a_bar: Tensor, b_bar: Tensor, c: Tensor, u: Tensor) -> Tensor:
    """Linear recurrence h_i = A_bar_i . h_{i-1} + B_bar_i . u_i with
    per-step readout y_i = sum_n C_i . h_i; h_0 = 0.

    a_bar, b_bar: (B, L, EC, N); c: (B, L, N); u: (B, L, EC) -> (B, L, EC).
    Fused into one tape node; the backward pass replays the recurrence in
    reverse (standard backprop-through-time).
    """
    ad, bd, cd, ud = a_bar.data, b_bar.data, c.data, u.data
    if ad.ndim != 4:
        raise ShapeError(f"selective_scan: a_bar must be (B, L, EC, N), got {ad.shape}")
    if bd.shape != ad.shape:
        raise ShapeError(f"selective_scan: b_bar shape {bd.shape} != a_bar shape {ad.shape}")
    bsz, length, inner, n = ad.shape
    if cd.shape != (bsz, length, n):
        raise ShapeError(f"selective_scan: c must be {(bsz, length, n)}, got {cd.shape}")
    if ud.shape != (bsz, length, inner):
        raise ShapeError(f"selective_scan: u must be {(bsz, length, inner)}, got {ud.shape}")

    states = np.empty((bsz, length, inner, n), dtype=ad.dtype)
    ys = np.empty((bsz, length, inner), dtype=ad.dtype)
    h = np.zeros((bsz, inner, n), dtype=ad.dtype)
    for i in range(length):
        h = ad[:, i] * h + bd[:, i] * ud[:, i, :, None]
        states[:, i] = h
        ys[:, i] = np.einsum("bcn,bn->bc", h, cd[:, i])
    if _debug_checks and not np.all(np.isfinite(states)):
        raise AutodiffError("selective_scan: non-finite hidden state")

    def bwd(g):
        ga = np.empty_like(ad)
        gb = np.empty_like(bd)
        gc = np.empty_like(cd)
        gu = np.empty_like(ud)
        gh = np.zeros((bsz, inner, n), dtype=ad.dtype)
        for i in range(length - 1, -1, -1):
            gh = gh + g[:, i, :, None] * cd[:, i, None, :]
            gc[:, i] = np.einsum("bc,bcn->bn", g[:, i], states[:, i])
            h_prev = states[:, i - 1] if i > 0 else np.zeros_like(gh)
            ga[:, i] = gh * h_prev
            gb[:, i] = gh * ud[:, i, :, None]
            gu[:, i] = np.einsum("bcn,bcn->bc", gh, bd[:, i])
            gh = gh * ad[:, i]
        return ga, gb, gc, gu

    return record("selective_scan", (a_bar, b_bar, c, u), ys, bwd)


def selective_scan_reference(a_bar: np.ndarray, b_bar: np.ndarray,
                             c: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Naive per-step recurrence, plain numpy, no tape.  Oracle for the
    fused scan; keep it dumb."""
    bsz, length, inner, n = a_bar.shape
    out = np.zeros((bsz, length, inner), dtype=np.float64)
    for b in range(bsz):
        h = np.zeros((inner, n), dtype=np.float64)
        for i in range(length):
            h = a_bar[b, i] * h + b_bar[b, i] * u[b, i][:, None]
            out[b, i] = h @ c[b, i]
    return out


def mamba_block_forward(params: MambaBlockParams, x: Tensor) -> Tensor:
    """One selective-SSM block over (batch, L, C) -> (batch, L, C)."""
    if x.ndim != 3 or x.shape[2] != params.channels:
        raise ShapeError(
            f"mamba_block_forward: expected (batch, L, {params.channels}), got {x.shape}")
    bsz, length, _ = x.shape
    inner = params.expand * params.channels
    rank, n = params.dt_rank, params.state_dim

    xz = matmul(x, params.in_proj)
    xr = slice_axis(xz, axis=2, start=0, stop=inner)
    z = slice_axis(xz, axis=2, start=inner, stop=2 * inner)

    xs = silu(add(depthwise_causal_conv1d(xr, params.conv_kernel), params.conv_bias))

    proj = matmul(xs, params.x_proj)
    dt_low = slice_axis(proj, axis=2, start=0, stop=rank)
    b_in = slice_axis(proj, axis=2, start=rank, stop=rank + n)
    c_in = slice_axis(proj, axis=2, start=rank + n, stop=rank + 2 * n)

    delta = softplus(add(matmul(dt_low, params.dt_proj), params.dt_bias))
    a = mul(exp(params.A_log), Tensor(-1.0))
    a_bar, b_bar = ssm_discretize(delta, a, b_in)

    y = selective_scan(a_bar, b_bar, c_in, xs)
    gated = mul(y, silu(z))
    return matmul(gated, params.out_proj)


@dataclass
class BiBlockParams:
    """Shared-weight bidirectional block plus its LN/FFN head.

    Both scan directions reuse the single ``mamba`` instance; the wrapper
    owns only normalization and feed-forward parameters.
    """

    mamba: MambaBlockParams
    ln_inner_gamma: Tensor
    ln_inner_beta: Tensor
    ln_outer_gamma: Tensor
    ln_outer_beta: Tensor
    ffn_w1: Tensor  # (C, 2C)
    ffn_b1: Tensor  # (2C,)
    ffn_w2: Tensor  # (2C, C)
    ffn_b2: Tensor  # (C,)

    def parameters(self) -> dict[str, Tensor]:
        out = {f"mamba/{k}": v for k, v in self.mamba.parameters().items()}
        out.update({
            "ln_inner_gamma": self.ln_inner_gamma,
            "ln_inner_beta": self.ln_inner_beta,
            "ln_outer_gamma": self.ln_outer_gamma,
            "ln_outer_beta": self.ln_outer_beta,
            "ffn_w1": self.ffn_w1,
            "ffn_b1": self.ffn_b1,
            "ffn_w2": self.ffn_w2,
            "ffn_b2": self.ffn_b2,
        })
        return out


def init_bi_block(rng: np.random.Generator, channels: int, expand: int = 2,
                  state_dim: int = 16, conv_width: int = 4,
                  dt_rank: int | None = None) -> BiBlockParams:
    mamba = init_mamba_block(rng, channels, expand, state_dim, conv_width, dt_rank)

    def uniform(fan_in, shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return BiBlockParams(
        mamba=mamba,
        ln_inner_gamma=Tensor(np.ones(channels), requires_grad=True),
        ln_inner_beta=Tensor(np.zeros(channels), requires_grad=True),
        ln_outer_gamma=Tensor(np.ones(channels), requires_grad=True),
        ln_outer_beta=Tensor(np.zeros(channels), requires_grad=True),
        ffn_w1=Tensor(uniform(channels, (channels, 2 * channels)), requires_grad=True),
        ffn_b1=Tensor(np.zeros(2 * channels), requires_grad=True),
        ffn_w2=Tensor(uniform(2 * channels, (2 * channels, channels)), requires_grad=True),
        ffn_b2=Tensor(np.zeros(channels), requires_grad=True),
    )


def bidirectional_core(params: BiBlockParams, x: Tensor,
                       scan_mode: str = "bidirectional",
                       flip_back: bool = True) -> Tensor:
    """Directional scans plus the raw-input residual, before normalization.

    flip_back=True re-reverses the backward branch so both summands are in
    input frame order; False keeps the reversed-frame sum as literally
    written in the source formulation.
    """
    if scan_mode not in SCAN_MODES:
        raise ValueError(f"scan_mode must be one of {SCAN_MODES}, got {scan_mode!r}")
    out = None
    if scan_mode in ("bidirectional", "forward"):
        out = mamba_block_forward(params.mamba, x)
    if scan_mode in ("bidirectional", "backward"):
        rev = mamba_block_forward(params.mamba, reverse_axis(x, 1))
        if flip_back:
            rev = reverse_axis(rev, 1)
        out = rev if out is None else add(out, rev)
    return add(out, x)


def bidirectional_forward(params: BiBlockParams, x: Tensor,
                          scan_mode: str = "bidirectional",
                          flip_back: bool = True) -> Tensor:
    """Full block: LN(LN(core) + FFN(LN(core))) over the channel axis."""
    core = bidirectional_core(params, x, scan_mode, flip_back)
    inner = layernorm_lastaxis(core, params.ln_inner_gamma, params.ln_inner_beta)
    hidden = relu(add(matmul(inner, params.ffn_w1), params.ffn_b1))
    ffn_out = add(matmul(hidden, params.ffn_w2), params.ffn_b2)
    return layernorm_lastaxis(add(inner, ffn_out),
                              params.ln_outer_gamma, params.ln_outer_beta)
