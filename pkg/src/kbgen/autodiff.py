"""Dense tensors with tape-based reverse-mode automatic differentiation.

Forward ops run on numpy arrays (hot kernels go through
``kbgen.kernels``) and, when a Tape is active, append a backward closure
to it. ``backward`` sweeps the tape once in reverse execution order,
which is a reverse topological order by construction, accumulating
gradients into ``Tensor.grad``. Tensors not on the path to the loss keep
``grad is None``.

Compute is float32 by default; pass float64 arrays for gradient
checking. Ops never mutate their inputs. A Tape instance belongs to one
thread; ops called with no active tape simply do not record (inference
mode).
"""

from __future__ import annotations

import os
import threading

import numpy as np

from . import KbgenError, kernels

DEFAULT_DTYPE = np.float32

_CHECK_FINITE = os.environ.get("KBGEN_CHECK_FINITE", "0") == "1"


def set_debug_checks(enabled: bool):
    """Toggle NaN/Inf detection on every forward op output."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


class AutodiffError(KbgenError):
    pass


class Tensor:
    """A dense float array plus an optional gradient buffer."""

    __slots__ = ("data", "grad")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


_state = threading.local()


def _active_tape():
    return getattr(_state, "tape", None)


class Tape:
    """Recorded operation graph; single-owner, one backward pass."""

    def __init__(self):
        self._nodes = []
        self._spent = False

    def __enter__(self):
        if _active_tape() is not None:
            raise AutodiffError("another tape is already recording on this thread")
        _state.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _state.tape = None
        return False

    def __len__(self):
        return len(self._nodes)


def _emit(out_data, parents, backward_fn):
    if _CHECK_FINITE and not np.all(np.isfinite(out_data)):
        raise AutodiffError("non-finite values in op output")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    tape = _active_tape()
    if tape is not None and not tape._spent:
        tape._nodes.append((out, parents, backward_fn))
    return out


def backward(tape: Tape, loss: Tensor):
    """Populate .grad for every tensor the loss depends on.

    The loss must be a scalar recorded on this tape; a tape can only be
    swept once.
    """
    if tape._spent:
        raise AutodiffError("backward already ran on this tape")
    if loss.data.size != 1:
        raise AutodiffError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not any(node[0] is loss for node in tape._nodes):
        raise AutodiffError("loss tensor was not recorded on this tape")
    tape._spent = True
    loss.grad = np.ones_like(loss.data)
    for out, parents, fn in reversed(tape._nodes):
        g = out.grad
        if g is None:
            continue
        for parent, pg in zip(parents, fn(g)):
            if parent is None or pg is None:
                continue
            if parent.grad is None:
                parent.grad = pg
            else:
                parent.grad = parent.grad + pg


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _as_data(x):
    if isinstance(x, Tensor):
        return x.data
    if isinstance(x, (int, float)):
        return x  # weak scalar: does not promote float32 operands
    return np.asarray(x)


def add(a: Tensor, b):
    """Elementwise sum; b may be a Tensor, array, or scalar (broadcast)."""
    bd = _as_data(b)
    try:
        out = a.data + bd
    except ValueError:
        raise AutodiffError(f"add shape mismatch: {a.data.shape} vs {bd.shape}") from None
    b_t = b if isinstance(b, Tensor) else None

    def bwd(g):
        ga = _unbroadcast(g, a.data.shape)
        gb = _unbroadcast(g, bd.shape) if b_t is not None else None
        return ga, gb

    return _emit(out, (a, b_t), bwd)


def mul(a: Tensor, b):
    """Elementwise product; b may be a Tensor, array, or scalar."""
    bd = _as_data(b)
    try:
        out = a.data * bd
    except ValueError:
        raise AutodiffError(f"mul shape mismatch: {a.data.shape} vs {bd.shape}") from None
    b_t = b if isinstance(b, Tensor) else None

    def bwd(g):
        ga = _unbroadcast(g * bd, a.data.shape)
        gb = _unbroadcast(g * a.data, bd.shape) if b_t is not None else None
        return ga, gb

    return _emit(out, (a, b_t), bwd)


def scale(a: Tensor, s: float):
    return mul(a, float(s))


def matmul(a: Tensor, b: Tensor):
    """np.matmul semantics; supports 2-d weights against batched inputs."""
    ad, bd = a.data, b.data
    if ad.shape[-1] != bd.shape[-2 if bd.ndim > 1 else 0]:
        raise AutodiffError(f"matmul shape mismatch: {ad.shape} vs {bd.shape}")
    if bd.ndim == 2 and ad.ndim > 2:
        # Fold the leading dims into one gemm instead of a stack of tiny ones.
        a2 = ad.reshape(-1, ad.shape[-1])
        out = (a2 @ bd).reshape(ad.shape[:-1] + (bd.shape[-1],))

        def bwd_folded(g):
            g2 = g.reshape(-1, bd.shape[-1])
            return (g2 @ bd.T).reshape(ad.shape), a2.T @ g2

        return _emit(out, (a, b), bwd_folded)
    out = np.matmul(ad, bd)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _emit(out, (a, b), bwd)


def transpose(a: Tensor, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        return (np.transpose(g, inv),)

    return _emit(np.transpose(a.data, axes), (a,), bwd)


def swap_last_axes(a: Tensor):
    order = list(range(a.data.ndim))
    order[-1], order[-2] = order[-2], order[-1]
    return transpose(a, order)


def reshape(a: Tensor, shape):
    shape = tuple(shape)
    orig = a.data.shape

    def bwd(g):
        return (g.reshape(orig),)

    return _emit(a.data.reshape(shape), (a,), bwd)


def concat(tensors, axis=-1):
    if not tensors:
        raise AutodiffError("concat needs at least one tensor")
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit(out, tuple(tensors), bwd)


def split(a: Tensor, sizes, axis=-1):
    if sum(sizes) != a.data.shape[axis]:
        raise AutodiffError(
            f"split sizes {sizes} do not cover axis {axis} of shape {a.data.shape}"
        )
    offsets = np.cumsum(sizes)[:-1]
    pieces = np.split(a.data, offsets, axis=axis)
    outs = []
    for i, piece in enumerate(pieces):
        def bwd(g, i=i, shape=piece.shape):
            parts = [
                g if j == i else np.zeros(p.shape, dtype=g.dtype)
                for j, p in enumerate(pieces)
            ]
            return (np.concatenate(parts, axis=axis),)

        outs.append(_emit(piece.copy(), (a,), bwd))
    return outs


def softmax(x: Tensor, axis=-1):
    nd = x.data.ndim
    axis = axis % nd
    if axis == nd - 1:
        y = kernels.impl.softmax_fwd(x.data)

        def bwd(g):
            return (kernels.impl.softmax_bwd(y, g),)

        return _emit(y, (x,), bwd)
    moved = np.moveaxis(x.data, axis, -1)
    y = kernels.impl.softmax_fwd(np.ascontiguousarray(moved))

    def bwd_moved(g):
        gm = np.moveaxis(g, axis, -1)
        gx = kernels.impl.softmax_bwd(y, np.ascontiguousarray(gm))
        return (np.moveaxis(gx, -1, axis),)

    return _emit(np.moveaxis(y, -1, axis), (x,), bwd_moved)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5):
    """Normalize the last axis to zero mean / unit variance, then apply
    the elementwise affine (gain, bias)."""
    if gain.data.shape != (x.data.shape[-1],) or bias.data.shape != (x.data.shape[-1],):
        raise AutodiffError(
            f"layer_norm affine shapes {gain.data.shape}/{bias.data.shape} "
            f"do not match feature dim of {x.data.shape}"
        )
    y, mu, rstd = kernels.impl.layernorm_fwd(x.data, gain.data, bias.data, eps)

    def bwd(g):
        return kernels.impl.layernorm_bwd(x.data, gain.data, mu, rstd, g)

    return _emit(y, (x, gain, bias), bwd)


def gelu(x: Tensor):
    y = kernels.impl.gelu_fwd(x.data)

    def bwd(g):
        return (kernels.impl.gelu_bwd(x.data, g),)

    return _emit(y, (x,), bwd)


def dropout(x: Tensor, rate: float, rng=None, training: bool = False):
    """Inverted dropout: zero with probability rate, scale survivors by
    1/(1-rate). Identity when not training or rate == 0."""
    if not 0.0 <= rate < 1.0:
        raise AutodiffError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise AutodiffError("dropout in training mode needs an rng")
    draw_dtype = np.float32 if x.data.dtype == np.float32 else np.float64
    keep = (rng.random(x.data.shape, dtype=draw_dtype) >= rate).astype(x.data.dtype)
    keep /= 1.0 - rate

    def bwd(g):
        return (g * keep,)

    return _emit(x.data * keep, (x,), bwd)


def embedding(table: Tensor, ids):
    """Gather rows of an embedding table by integer id."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise AutodiffError(
            f"embedding ids out of range [0, {table.data.shape[0]})"
        )
    out = table.data[ids]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.ravel(), g.reshape(-1, table.data.shape[-1]))
        return (gt,)

    return _emit(out, (table,), bwd)


def cross_entropy(logits: Tensor, targets, mask):
    """Mean negative log-likelihood of targets over masked positions.

    logits: (..., V); targets int and mask bool over the leading shape.
    """
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=bool)
    lead = logits.data.shape[:-1]
    if targets.shape != lead or mask.shape != lead:
        raise AutodiffError(
            f"cross_entropy shapes: logits {logits.data.shape}, "
            f"targets {targets.shape}, mask {mask.shape}"
        )
    n_masked = int(mask.sum())
    if n_masked == 0:
        raise AutodiffError("cross_entropy mask selects no positions")
    rows = np.ascontiguousarray(logits.data[mask])
    picked = targets[mask]
    if picked.min() < 0 or picked.max() >= logits.data.shape[-1]:
        raise AutodiffError("cross_entropy target id out of vocabulary range")
    nll = kernels.impl.cross_entropy_fwd(rows, picked)
    out = np.asarray(nll.mean(), dtype=logits.data.dtype)

    def bwd(g):
        grows = kernels.impl.cross_entropy_bwd(rows, picked, float(g) / n_masked)
        gl = np.zeros_like(logits.data)
        gl[mask] = grows
        return (gl,)

    return _emit(out, (logits,), bwd)
