"""Dense-tensor reverse-mode autodiff on numpy storage.

A ``Tape`` records primitive applications in execution order (which is a
valid topological order, since every input tensor exists before the op that
consumes it runs).  ``backward`` walks the tape once in reverse, accumulating
adjoints per tensor id.  The primitive set is small and closed; composite
modules build everything else out of it.  Values are stored in the process
default dtype (float64 for gradient checking, float32 optionally for
training) selected through ``set_default_dtype``.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Sequence

import numpy as np


class AutodiffError(Exception):
    """Engine misuse: detached losses, unknown primitives, bad dtypes."""


class ShapeError(AutodiffError):
    """Operand shapes incompatible with the requested primitive."""


_DTYPE_LOCK = threading.Lock()
_default_dtype = np.float64


def set_default_dtype(dtype) -> None:
    """Select the storage dtype for newly constructed tensors.

    float64 is the gradient-check / reproducibility mode, float32 the cheap
    training mode.  Affects construction only; existing tensors keep theirs.
    """
    global _default_dtype
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise AutodiffError(f"unsupported default dtype {dt}, use float32 or float64")
    with _DTYPE_LOCK:
        _default_dtype = dt.type


def get_default_dtype():
    return _default_dtype


_tensor_ids = itertools.count()


class Tensor:
    """Immutable value node.  Only ``grad`` (and, for the optimizer between
    steps, ``data`` in place) may be written after construction."""

    __slots__ = ("data", "requires_grad", "grad", "tid", "tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else _default_dtype, order="C")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(_default_dtype)
        # ascontiguousarray would promote 0-d arrays to shape (1,)
        self.data = arr if arr.flags["C_CONTIGUOUS"] else np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.tid = next(_tensor_ids)
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; everything routes through apply_primitive so that
    # recording and gradient rules live in one place.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=False)


class _TapeNode:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], output: Tensor,
                 backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


_state = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = []
        _state.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive applications for one forward pass.

    Confined to one logical thread; concurrent evaluation should use
    disjoint tapes (the active-tape stack is thread local).
    """

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[_TapeNode] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise AutodiffError("tape stack corrupted: exiting a tape that is not active")
        stack.pop()
        return False


def record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray,
           backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """Wrap raw output data into a Tensor and push a node onto the active
    tape when any input participates in differentiation.

    This is the extension point for fused operations that keep a primitive
    interface but do not belong to the public ``apply_primitive`` registry.
    """
    inputs = tuple(inputs)
    out_arr = np.asarray(out_data)
    out = Tensor.__new__(Tensor)
    out.data = out_arr if out_arr.flags["C_CONTIGUOUS"] else np.ascontiguousarray(out_arr)
    out.grad = None
    out.tid = next(_tensor_ids)
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = active_tape()
    if out.requires_grad and tape is not None:
        out.tape = tape
        tape.nodes.append(_TapeNode(op, inputs, out, backward))
    else:
        out.tape = None
    return out


def backward(loss: Tensor) -> dict[Tensor, Tensor]:
    """Reverse pass from a scalar loss.

    Returns a map of requires-grad leaf tensors to their gradients and
    accumulates the same values into each leaf's ``grad`` buffer.  Every
    tape node is visited at most once; fan-out adjoints add.
    """
    if loss.data.ndim != 0:
        raise AutodiffError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    tape = loss.tape
    if tape is None:
        raise AutodiffError("loss is detached: it was not produced under an active tape")

    produced = {node.output.tid for node in tape.nodes}
    adjoint: dict[int, np.ndarray] = {loss.tid: np.ones((), dtype=loss.data.dtype)}
    leaves: dict[int, Tensor] = {}
    leaf_grads: dict[int, np.ndarray] = {}

    for node in reversed(tape.nodes):
        g_out = adjoint.pop(node.output.tid, None)
        if g_out is None:
            continue
        grads_in = node.backward(g_out)
        for tensor, g in zip(node.inputs, grads_in):
            if g is None or not tensor.requires_grad:
                continue
            if g.shape != tensor.data.shape:
                raise AutodiffError(
                    f"{node.op}: backward produced shape {g.shape} for input of shape {tensor.data.shape}")
            if tensor.tid in produced:
                acc = adjoint.get(tensor.tid)
                adjoint[tensor.tid] = g if acc is None else acc + g
            else:
                leaves[tensor.tid] = tensor
                acc = leaf_grads.get(tensor.tid)
                leaf_grads[tensor.tid] = np.array(g) if acc is None else acc + g

    result: dict[Tensor, Tensor] = {}
    for tid, tensor in leaves.items():
        g = leaf_grads[tid]
        tensor.grad = g if tensor.grad is None else tensor.grad + g
        result[tensor] = Tensor(g, requires_grad=False, dtype=g.dtype)
    return result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument only, so no overflow on either branch
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def _check_broadcastable(name: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from None


# --- primitive implementations -------------------------------------------
# Each returns (output array, backward closure).  Closures capture input
# arrays, never Tensors, so tapes hold no cycles through grad buffers.

def _p_add(inputs, attrs):
    a, b = inputs
    _check_broadcastable("add", a, b)
    out = a + b

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return out, bwd


def _p_sub(inputs, attrs):
    a, b = inputs
    _check_broadcastable("sub", a, b)
    out = a - b

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return out, bwd


def _p_mul(inputs, attrs):
    a, b = inputs
    _check_broadcastable("mul", a, b)
    out = a * b

    def bwd(g):
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

    return out, bwd


def _p_matmul(inputs, attrs):
    a, b = inputs
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must have ndim >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    _check_broadcastable("matmul (batch dims)", a[..., 0, 0], b[..., 0, 0])
    out = np.matmul(a, b)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b, -1, -2))
        gb = np.matmul(np.swapaxes(a, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return out, bwd


def _p_exp(inputs, attrs):
    (x,) = inputs
    out = np.exp(x)

    def bwd(g):
        return (g * out,)

    return out, bwd


def _p_softplus(inputs, attrs):
    (x,) = inputs
    out = np.logaddexp(0.0, x)

    def bwd(g):
        return (g * _sigmoid(x),)

    return out, bwd


def _p_silu(inputs, attrs):
    (x,) = inputs
    s = _sigmoid(x)
    out = x * s

    def bwd(g):
        return (g * s * (1.0 + x * (1.0 - s)),)

    return out, bwd


def _p_tanh(inputs, attrs):
    (x,) = inputs
    out = np.tanh(x)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return out, bwd


def _p_relu(inputs, attrs):
    (x,) = inputs
    out = np.maximum(x, 0.0)

    def bwd(g):
        return (g * (x > 0.0),)

    return out, bwd


def _p_transpose(inputs, attrs):
    (x,) = inputs
    a, b = attrs["axis_a"], attrs["axis_b"]
    if not (-x.ndim <= a < x.ndim and -x.ndim <= b < x.ndim):
        raise ShapeError(f"transpose: axes ({a}, {b}) out of range for shape {x.shape}")
    out = np.swapaxes(x, a, b)

    def bwd(g):
        return (np.swapaxes(g, a, b),)

    return out, bwd


def _p_reverse_axis(inputs, attrs):
    (x,) = inputs
    axis = attrs["axis"]
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"reverse_axis: axis {axis} out of range for shape {x.shape}")
    out = np.flip(x, axis=axis)

    def bwd(g):
        return (np.ascontiguousarray(np.flip(g, axis=axis)),)

    return out, bwd


def _p_reshape(inputs, attrs):
    (x,) = inputs
    shape = tuple(attrs["shape"])
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    out = x.reshape(shape)

    def bwd(g):
        return (g.reshape(x.shape),)

    return out, bwd


def _normalize_axes(axes, ndim, name):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    norm = tuple(sorted(a % ndim if -ndim <= a < ndim else _axis_err(name, a, ndim) for a in axes))
    if len(set(norm)) != len(norm):
        raise ShapeError(f"{name}: duplicate axes {axes}")
    return norm


def _axis_err(name, axis, ndim):
    raise ShapeError(f"{name}: axis {axis} out of range for ndim {ndim}")


def _reduce(inputs, attrs, use_mean):
    (x,) = inputs
    name = "reduce_mean" if use_mean else "reduce_sum"
    axes = _normalize_axes(attrs.get("axes"), x.ndim, name)
    out = x.mean(axis=axes) if use_mean else x.sum(axis=axes)
    count = 1
    for a in axes:
        count *= x.shape[a]

    def bwd(g):
        expand = list(x.shape)
        for a in axes:
            expand[a] = 1
        g_full = np.broadcast_to(g.reshape(expand), x.shape)
        if use_mean:
            g_full = g_full / count
        return (np.ascontiguousarray(g_full),)

    return out, bwd


def _p_reduce_mean(inputs, attrs):
    return _reduce(inputs, attrs, use_mean=True)


def _p_reduce_sum(inputs, attrs):
    return _reduce(inputs, attrs, use_mean=False)


def _p_softmax_lastaxis(inputs, attrs):
    (x,) = inputs
    if x.ndim < 1:
        raise ShapeError("softmax_lastaxis: needs at least one axis")
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return out, bwd


def _p_layernorm_lastaxis(inputs, attrs):
    x, gamma, beta = inputs
    eps = attrs.get("eps", 1e-5)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"layernorm_lastaxis: scale/shift must have shape ({c},), got {gamma.shape}/{beta.shape}")
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    out = xhat * gamma + beta

    def bwd(g):
        lead = tuple(range(x.ndim - 1))
        gbeta = g.sum(axis=lead)
        ggamma = (g * xhat).sum(axis=lead)
        gx_hat = g * gamma
        gx = inv * (gx_hat
                    - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return out, bwd


def _p_depthwise_causal_conv1d(inputs, attrs):
    x, kernel = inputs
    if x.ndim != 3:
        raise ShapeError(f"depthwise_causal_conv1d: input must be (batch, length, channels), got {x.shape}")
    if kernel.ndim != 2 or kernel.shape[0] != x.shape[2]:
        raise ShapeError(
            f"depthwise_causal_conv1d: kernel must be (channels={x.shape[2]}, width), got {kernel.shape}")
    w = kernel.shape[1]
    padded = np.pad(x, ((0, 0), (w - 1, 0), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, w, axis=1)  # (B, L, C, W)
    out = np.einsum("blcw,cw->blc", windows, kernel)

    def bwd(g):
        gk = np.einsum("blc,blcw->cw", g, windows)
        g_padded = np.pad(g, ((0, 0), (0, w - 1), (0, 0)))
        g_windows = np.lib.stride_tricks.sliding_window_view(g_padded, w, axis=1)
        gx = np.einsum("blcw,cw->blc", g_windows, kernel[:, ::-1])
        return np.ascontiguousarray(gx), gk

    return out, bwd


def _p_broadcast(inputs, attrs):
    (x,) = inputs
    shape = tuple(attrs["shape"])
    try:
        out = np.broadcast_to(x, shape)
    except ValueError:
        raise ShapeError(f"broadcast: cannot broadcast {x.shape} to {shape}") from None

    def bwd(g):
        return (_unbroadcast(g, x.shape),)

    return np.ascontiguousarray(out), bwd


def _p_slice(inputs, attrs):
    (x,) = inputs
    axis, start, stop = attrs["axis"], attrs["start"], attrs["stop"]
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"slice: axis {axis} out of range for shape {x.shape}")
    axis = axis % x.ndim
    n = x.shape[axis]
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"slice: window [{start}, {stop}) invalid for axis of length {n}")
    idx = (slice(None),) * axis + (slice(start, stop),)
    out = x[idx]

    def bwd(g):
        gx = np.zeros_like(x)
        gx[idx] = g
        return (gx,)

    return np.ascontiguousarray(out), bwd


def _p_concat(inputs, attrs):
    axis = attrs["axis"]
    if not inputs:
        raise ShapeError("concat: needs at least one input")
    ndim = inputs[0].ndim
    if not -ndim <= axis < ndim:
        raise ShapeError(f"concat: axis {axis} out of range for ndim {ndim}")
    axis = axis % ndim
    ref = list(inputs[0].shape)
    for arr in inputs[1:]:
        other = list(arr.shape)
        if len(other) != ndim or other[:axis] != ref[:axis] or other[axis + 1:] != ref[axis + 1:]:
            raise ShapeError(f"concat: shape {arr.shape} incompatible with {inputs[0].shape} on axis {axis}")
    out = np.concatenate(inputs, axis=axis)
    sizes = [arr.shape[axis] for arr in inputs]
    offsets = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, offsets, axis=axis))

    return out, bwd


def _p_topk_mask(inputs, attrs):
    (x,) = inputs
    k = attrs["k"]
    n = x.shape[-1]
    if not 1 <= k <= n:
        raise ShapeError(f"topk_mask: k={k} outside [1, {n}]")
    # stable sort of negated values keeps the lowest index first among ties
    order = np.argsort(-x, axis=-1, kind="stable")
    mask = np.zeros(x.shape, dtype=bool)
    np.put_along_axis(mask, order[..., :k], True, axis=-1)
    out = np.where(mask, x, -np.inf)

    def bwd(g):
        return (g * mask,)

    return out, bwd


_PRIMITIVES: dict[str, Callable] = {
    "add": _p_add,
    "sub": _p_sub,
    "mul": _p_mul,
    "matmul": _p_matmul,
    "exp": _p_exp,
    "softplus": _p_softplus,
    "silu": _p_silu,
    "tanh": _p_tanh,
    "relu": _p_relu,
    "transpose": _p_transpose,
    "reverse_axis": _p_reverse_axis,
    "reshape": _p_reshape,
    "reduce_mean": _p_reduce_mean,
    "reduce_sum": _p_reduce_sum,
    "softmax_lastaxis": _p_softmax_lastaxis,
    "layernorm_lastaxis": _p_layernorm_lastaxis,
    "depthwise_causal_conv1d": _p_depthwise_causal_conv1d,
    "broadcast": _p_broadcast,
    "slice": _p_slice,
    "concat": _p_concat,
    "topk_mask": _p_topk_mask,
}


def primitive_names() -> tuple[str, ...]:
    return tuple(_PRIMITIVES)


def apply_primitive(name: str, inputs: Sequence[Tensor], attrs: dict | None = None) -> Tensor:
    """Evaluate a registered primitive and record it on the active tape."""
    fn = _PRIMITIVES.get(name)
    if fn is None:
        raise AutodiffError(f"unknown primitive {name!r}")
    tensors = tuple(_as_tensor(t) for t in inputs)
    out_data, bwd = fn(tuple(t.data for t in tensors), attrs or {})
    return record(name, tensors, out_data, bwd)


# --- functional wrappers ---------------------------------------------------

def add(a, b) -> Tensor:
    return apply_primitive("add", (a, b))


def sub(a, b) -> Tensor:
    return apply_primitive("sub", (a, b))


def mul(a, b) -> Tensor:
    return apply_primitive("mul", (a, b))


def matmul(a, b) -> Tensor:
    return apply_primitive("matmul", (a, b))


def exp(x) -> Tensor:
    return apply_primitive("exp", (x,))


def softplus(x) -> Tensor:
    return apply_primitive("softplus", (x,))


def silu(x) -> Tensor:
    return apply_primitive("silu", (x,))


def tanh(x) -> Tensor:
    return apply_primitive("tanh", (x,))


def relu(x) -> Tensor:
    return apply_primitive("relu", (x,))


def transpose(x, axis_a: int, axis_b: int) -> Tensor:
    return apply_primitive("transpose", (x,), {"axis_a": axis_a, "axis_b": axis_b})


def reverse_axis(x, axis: int) -> Tensor:
    return apply_primitive("reverse_axis", (x,), {"axis": axis})


def reshape(x, shape: Sequence[int]) -> Tensor:
    return apply_primitive("reshape", (x,), {"shape": tuple(shape)})


def reduce_mean(x, axes=None) -> Tensor:
    return apply_primitive("reduce_mean", (x,), {"axes": axes})


def reduce_sum(x, axes=None) -> Tensor:
    return apply_primitive("reduce_sum", (x,), {"axes": axes})


def softmax_lastaxis(x) -> Tensor:
    return apply_primitive("softmax_lastaxis", (x,))


def layernorm_lastaxis(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    return apply_primitive("layernorm_lastaxis", (x, gamma, beta), {"eps": eps})


def depthwise_causal_conv1d(x, kernel) -> Tensor:
    return apply_primitive("depthwise_causal_conv1d", (x, kernel))


def broadcast_to(x, shape: Sequence[int]) -> Tensor:
    return apply_primitive("broadcast", (x,), {"shape": tuple(shape)})


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    return apply_primitive("slice", (x,), {"axis": axis, "start": start, "stop": stop})


def concat(tensors: Sequence, axis: int) -> Tensor:
    return apply_primitive("concat", tuple(tensors), {"axis": axis})


def topk_mask(x, k: int) -> Tensor:
    return apply_primitive("topk_mask", (x,), {"k": k})


# --- gradient verification -------------------------------------------------

def finite_difference_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative disagreement between analytic and central-difference
    gradients of a scalar-valued ``f`` with respect to ``x``.

    Relative error per element is |analytic - fd| / max(|analytic|, |fd|,
    1e-8).  Requires float64 input and a deterministic ``f``; raises on any
    non-finite value met along the way.
    """
    if x.data.dtype != np.float64:
        raise AutodiffError(f"finite_difference_check requires float64 input, got {x.data.dtype}")

    probe = Tensor(x.data.copy(), requires_grad=True, dtype=np.float64)
    with Tape():
        out = f(probe)
        if out.data.ndim != 0:
            raise AutodiffError(f"finite_difference_check: f must be scalar-valued, got shape {out.data.shape}")
        backward(out)
    analytic = probe.grad
    if analytic is None:
        analytic = np.zeros_like(probe.data)
    if not np.all(np.isfinite(analytic)):
        raise AutodiffError("finite_difference_check: non-finite analytic gradient")

    base = probe.data
    fd = np.zeros_like(base)
    flat_base = base.reshape(-1)
    flat_fd = fd.reshape(-1)
    for i in range(flat_base.size):
        saved = flat_base[i]
        flat_base[i] = saved + eps
        hi = float(f(Tensor(base, dtype=np.float64)).data)
        flat_base[i] = saved - eps
        lo = float(f(Tensor(base, dtype=np.float64)).data)
        flat_base[i] = saved
        flat_fd[i] = (hi - lo) / (2.0 * eps)
    if not np.all(np.isfinite(fd)):
        raise AutodiffError("finite_difference_check: non-finite finite-difference gradient")

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-8)
    return float(np.max(np.abs(analytic - fd) / denom))


def directional_derivative_check(f: Callable[[], Tensor], params: Sequence[Tensor],
                                 eps: float = 1e-5, seed: int = 0) -> float:
    """Relative error of grad . v against a central difference along one
    random direction v over all ``params`` jointly.

    Cheap full-parameter probe: two extra evaluations regardless of the
    number of parameters.
    """
    rng = np.random.default_rng(seed)
    for p in params:
        if p.data.dtype != np.float64:
            raise AutodiffError("directional_derivative_check requires float64 parameters")
    direction = [rng.standard_normal(p.shape) for p in params]
    norm = np.sqrt(sum(float((d * d).sum()) for d in direction))
    direction = [d / norm for d in direction]

    for p in params:
        p.zero_grad()
    with Tape():
        out = f()
        backward(out)
    analytic = sum(
        float((p.grad * d).sum()) for p, d in zip(params, direction) if p.grad is not None)

    saved = [p.data.copy() for p in params]
    for p, d, s in zip(params, direction, saved):
        p.data[...] = s + eps * d
    hi = float(f().data)
    for p, d, s in zip(params, direction, saved):
        p.data[...] = s - eps * d
    lo = float(f().data)
    for p, s in zip(params, saved):
        p.data[...] = s
    fd = (hi - lo) / (2.0 * eps)
    return abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-8)
