"""Dense tensors with tape-based reverse-mode automatic differentiation.

Just enough machinery to express and train the attention operators in this
package: no broadcasting beyond a scalar with a tensor, no higher-order
derivatives, no GPU. Every differentiable operation appends one record to
the active :class:`Tape`; :func:`backward` replays the records once, in
reverse execution order.

Shapes are explicit. Where an operation needs a fixed broadcast pattern
(bias over rows, per-row scaling, ...) it is its own primitive with a
hand-written backward rule rather than a generic broadcast.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, IndexRangeError, NumericError, ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)

_active_tape = None


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; ops executed inside record themselves here.
    Only one tape may be active at a time (graphs are single-threaded).
    """

    def __init__(self):
        self._records = []

    def __enter__(self):
        global _active_tape
        if _active_tape is not None:
            raise ContractError("a tape is already active; graphs do not nest")
        _active_tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _active_tape
        _active_tape = None
        return False

    def __len__(self):
        return len(self._records)


class Tensor:
    """n-dimensional float array, optionally carrying a gradient buffer.

    ``grad`` is populated by :func:`backward` for tensors with
    ``requires_grad`` and accumulates across calls until :func:`zero_grad`.
    """

    __slots__ = ("data", "requires_grad", "grad", "tape")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.tape = None  # set on tensors produced by recorded ops

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        """A view of the same data outside any graph."""
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.requires_grad = False
        t.grad = None
        t.tape = None
        return t

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


def apply_op(inputs, out_data, backward):
    """Create the output tensor of an op and record it on the active tape.

    ``backward(out_grad) -> tuple of gradients`` must return one array (or
    None) per input, aligned with ``inputs``. Recording is skipped when no
    tape is active or no input participates in a graph, so inference-mode
    code pays only for the forward arithmetic.
    """
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    needs = any(t.requires_grad or t.tape is not None for t in inputs)
    out.requires_grad = needs
    if _active_tape is not None and needs:
        out.tape = _active_tape
        _active_tape._records.append(_Record(out, tuple(inputs), backward))
    else:
        out.tape = None
    return out


def backward(loss):
    """Accumulate d(loss)/d(tensor) into ``.grad`` of every reachable
    requires_grad tensor.

    ``loss`` must be a scalar recorded on a tape. Repeated calls without
    :func:`zero_grad` add up.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss.tape is None:
        raise ContractError("loss is not connected to a tape")
    flowing = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for rec in reversed(loss.tape._records):
        out_grad = flowing.pop(id(rec.out), None)
        if out_grad is None:
            continue
        grads = rec.backward(out_grad)
        for t, g in zip(rec.inputs, grads):
            if g is None:
                continue
            if t.tape is not None:
                key = id(t)
                if key in flowing:
                    flowing[key] = flowing[key] + g
                else:
                    flowing[key] = g
            elif t.requires_grad:
                key = id(t)
                if key in leaves:
                    leaves[key][1] += g
                else:
                    leaves[key] = [t, np.array(g, copy=True)]
    for t, g in leaves.values():
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


def zero_grad(tensors):
    """Reset gradients to all-zero buffers (allocating them if absent)."""
    for t in tensors:
        t.grad = np.zeros_like(t.data)


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product contracting a's last axis with b's first.

    ``a`` may have extra leading axes (grouped features); ``b`` is 2-D.
    """
    if b.data.ndim != 2 or a.data.ndim < 2:
        raise ShapeError(f"matmul needs a (...,k) by (k,n), got {a.shape} by {b.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} by {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        ga = g @ b.data.T if (a.requires_grad or a.tape is not None) else None
        if b.requires_grad or b.tape is not None:
            k = a.data.shape[-1]
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = None
        return ga, gb

    return apply_op((a, b), out, bwd)


def _same_shape(a, b, name):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{name} needs equal shapes, got {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return apply_op((a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return apply_op((a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two equal-shape tensors."""
    _same_shape(a, b, "mul")
    return apply_op((a, b), a.data * b.data, lambda g: (g * b.data, g * a.data))


def mul_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return apply_op((a,), a.data * c, lambda g: (g * c,))


def add_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """Add a length-d vector to every row of a (..., d) tensor (bias add)."""
    if v.data.ndim != 1 or a.data.shape[-1] != v.data.shape[0]:
        raise ShapeError(f"add_rowvec needs (...,d) and (d,), got {a.shape} and {v.shape}")

    def bwd(g):
        return g, g.reshape(-1, g.shape[-1]).sum(axis=0)

    return apply_op((a, v), a.data + v.data, bwd)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    mask = a.data > 0
    return apply_op((a,), out, lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-a.data))
    return apply_op((a,), s, lambda g: (g * s * (1.0 - s),))


def softmax_lastdim(a: Tensor) -> Tensor:
    """Row-stochastic softmax over the last axis, max-subtracted for
    stability. Raises on non-finite input."""
    if not np.isfinite(a.data).all():
        raise NumericError("softmax input contains non-finite values")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return apply_op((a,), s, bwd)


def concat_lastdim(tensors) -> Tensor:
    tensors = list(tensors)
    lead = tensors[0].data.shape[:-1]
    for t in tensors[1:]:
        if t.data.shape[:-1] != lead:
            raise ShapeError(
                f"concat_lastdim needs equal leading shapes, got {tensors[0].shape} and {t.shape}"
            )
    out = np.concatenate([t.data for t in tensors], axis=-1)
    widths = [t.data.shape[-1] for t in tensors]
    edges = np.cumsum([0] + widths)

    def bwd(g):
        return tuple(g[..., edges[i]:edges[i + 1]] for i in range(len(widths)))

    return apply_op(tuple(tensors), out, bwd)


def slice_lastdim(a: Tensor, start: int, stop: int) -> Tensor:
    d = a.data.shape[-1]
    if not (0 <= start < stop <= d):
        raise IndexRangeError(f"slice [{start}:{stop}] out of range for last dim {d}")
    out = a.data[..., start:stop].copy()

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[..., start:stop] = g
        return (ga,)

    return apply_op((a,), out, bwd)


def transpose2d(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose2d needs a matrix, got {a.shape}")
    return apply_op((a,), a.data.T.copy(), lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)
    return apply_op((a,), out, lambda g: (g.reshape(a.data.shape),))


def mean_reduce(a: Tensor, axis: int = 0) -> Tensor:
    n = a.data.shape[axis]
    out = a.data.mean(axis=axis)

    def bwd(g):
        return (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),)

    return apply_op((a,), out, bwd)


def sum_reduce(a: Tensor, axis: int = 0) -> Tensor:
    n = a.data.shape[axis]
    out = a.data.sum(axis=axis)

    def bwd(g):
        return (np.repeat(np.expand_dims(g, axis), n, axis=axis),)

    return apply_op((a,), out, bwd)


def max_reduce(a: Tensor, axis: int = 0) -> Tensor:
    """Max along ``axis``; the backward routes the gradient to the first
    occurrence of the maximum, so ties are deterministic."""
    out = a.data.max(axis=axis)
    argmax = np.argmax(a.data, axis=axis)

    def bwd(g):
        ga = np.zeros_like(a.data)
        idx = list(np.indices(out.shape))
        idx.insert(axis if axis >= 0 else a.data.ndim + axis, argmax)
        ga[tuple(idx)] = g
        return (ga,)

    return apply_op((a,), out, bwd)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows of ``a`` by integer index; the backward scatter-adds.

    ``idx`` may have any shape; the output is ``idx.shape + a.shape[1:]``.
    """
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise IndexRangeError(
            f"gather_rows index out of range [0, {a.data.shape[0]}): "
            f"min {idx.min()}, max {idx.max()}"
        )
    out = a.data[idx]

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return apply_op((a,), out, bwd)


def scale_rows(a: Tensor, s: Tensor) -> Tensor:
    """Multiply row i of a (N, d) tensor by scalar s_i; ``s`` is (N,) or (N, 1)."""
    sv = s.data.reshape(-1)
    if a.data.ndim != 2 or sv.shape[0] != a.data.shape[0]:
        raise ShapeError(f"scale_rows needs (N,d) and (N,), got {a.shape} and {s.shape}")
    out = a.data * sv[:, None]

    def bwd(g):
        gs = (g * a.data).sum(axis=1).reshape(s.data.shape)
        return g * sv[:, None], gs

    return apply_op((a, s), out, bwd)


def mul_bcast_last(a: Tensor, w: Tensor) -> Tensor:
    """Multiply a (..., d) tensor by per-position weights of shape (...)."""
    if w.data.shape != a.data.shape[:-1]:
        raise ShapeError(f"mul_bcast_last needs (...,d) and (...), got {a.shape} and {w.shape}")
    out = a.data * w.data[..., None]

    def bwd(g):
        return g * w.data[..., None], (g * a.data).sum(axis=-1)

    return apply_op((a, w), out, bwd)


def sub_bcast_mid(ag: Tensor, aq: Tensor) -> Tensor:
    """Subtract a per-group row from every member: (M,k,d) minus (M,d)."""
    if ag.data.ndim != 3 or aq.data.shape != (ag.data.shape[0], ag.data.shape[2]):
        raise ShapeError(f"sub_bcast_mid needs (M,k,d) and (M,d), got {ag.shape} and {aq.shape}")
    out = ag.data - aq.data[:, None, :]

    def bwd(g):
        return g, -g.sum(axis=1)

    return apply_op((ag, aq), out, bwd)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer class labels under
    softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.data.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels must be ({n},), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexRangeError(f"labels out of range [0, {c})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    nll = logz - shifted[np.arange(n), labels]
    out = np.asarray(nll.mean())

    def bwd(g):
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return apply_op((logits,), out, bwd)
