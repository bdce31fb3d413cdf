"""Small dense-tensor engine with reverse-mode autodiff.

Every differentiable quantity in the package (encoders, prototypes, losses)
is built from the kernels in this module. Values live in numpy arrays;
float32 is the training dtype, float64 is used by the gradient checker.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Skip graph recording in this thread (frozen-parameter inference)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """An n-d array that records how it was produced.

    ``grad`` stays ``None`` until a backward pass reaches the tensor; after
    that it always has the same shape as ``data``.
    """

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray], None] | None = None,
        _op: str = "",
        dtype=None,
    ):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        g = np.asarray(g, dtype=self.data.dtype)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    # -- backward ---------------------------------------------------------
    def backward(self) -> None:
        """Populate ``grad`` on every upstream tensor that requires it.

        Gradients accumulate across calls until ``zero_grad``.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        tape = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(tape):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node._accumulate(g)
                continue
            if node._backward is not None:
                for parent, pg in zip(node._parents, node._backward(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        return take(self, index)

    def sum(self, axis=None) -> "Tensor":
        return tsum(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return tmean(self, axis)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topological_order(root: Tensor) -> list[Tensor]:
    # iterative DFS; recursion depth would blow up on long op chains
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, dtype=None) -> Tensor:
    """Wrap ``x``; float32/float64 arrays keep their precision."""
    if isinstance(x, Tensor):
        return x
    if dtype is None and isinstance(x, np.ndarray) and x.dtype in (np.float32, np.float64):
        return Tensor(x)
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    req = grad_enabled() and any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data, _op=op)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward, _op=op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


# -- elementwise -----------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), backward, "mul")


def square(x: Tensor) -> Tensor:
    out = x.data * x.data

    def backward(g):
        return (2.0 * x.data * g,)

    return _make(out, (x,), backward, "square")


def relu(x: Tensor) -> Tensor:
    """Elementwise ``max(0, x)``; the gradient is zero where ``x <= 0``."""
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)

    def backward(g):
        return (g * mask,)

    return _make(out, (x,), backward, "relu")


# -- reductions and shape ----------------------------------------------------
def tsum(x: Tensor, axis=None) -> Tensor:
    out = np.asarray(x.data.sum(axis=axis))

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % x.ndim for a in axes)
        return (np.broadcast_to(np.expand_dims(g, axes), x.shape).copy(),)

    return _make(out, (x,), backward, "sum")


def tmean(x: Tensor, axis=None) -> Tensor:
    if axis is None:
        n = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(tsum(x, axis), 1.0 / n)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return _make(out, (x,), backward, "reshape")


def take(x: Tensor, index) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate gradient."""
    out = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out), (x,), backward, "take")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Juxtapose tensors along ``axis`` in argument order."""
    tensors = list(tensors)
    if len(tensors) == 1:
        return tensors[0]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(out, tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(out, tensors, backward, "stack")


# -- linear algebra and layers ----------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[0] or b.ndim != 2:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ b.data.T
        a2 = a.data.reshape(-1, a.shape[-1])
        gb = a2.T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _make(out, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` for a vector or a batch of row vectors."""
    if x.shape[-1] != weight.shape[0] or bias.shape != (weight.shape[1],):
        raise ValueError(
            f"linear shape mismatch: input {x.shape}, weight {weight.shape}, bias {bias.shape}"
        )
    return add(matmul(x, weight), bias)


def embedding(table: Tensor, ids: np.ndarray, padding_idx: int | None = None) -> Tensor:
    """Row lookup. The ``padding_idx`` row never receives gradient."""
    ids = np.asarray(ids, dtype=np.int64)
    out = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        if padding_idx is not None:
            full[padding_idx] = 0
        return (full,)

    return _make(out, (table,), backward, "embedding")


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Valid 1-d convolution over time.

    ``x`` is ``(L, D)`` or ``(B, L, D)``, ``kernel`` is ``(w, D, F)``; the
    result has ``L - w + 1`` timesteps with
    ``out[t, f] = bias[f] + sum_{j, d} x[t + j, d] * kernel[j, d, f]``.
    """
    single = x.ndim == 2
    xd = x.data[None] if single else x.data
    w, d_in, n_filters = kernel.shape
    B, L, D = xd.shape
    if D != d_in:
        raise ValueError(f"conv1d input dim {D} does not match kernel dim {d_in}")
    if L < w:
        raise ValueError(f"sequence shorter than window ({L} < {w})")
    T = L - w + 1
    # (B, T, D, w) -> (B, T, w, D)
    cols = np.lib.stride_tricks.sliding_window_view(xd, w, axis=1).transpose(0, 1, 3, 2)
    cols = cols.reshape(B, T, w * D)
    kmat = kernel.data.reshape(w * D, n_filters)
    out = cols @ kmat + bias.data
    if single:
        out = out[0]

    def backward(g):
        g3 = g[None] if single else g
        gk = (cols.reshape(-1, w * D).T @ g3.reshape(-1, n_filters)).reshape(w, D, n_filters)
        gb = g3.reshape(-1, n_filters).sum(axis=0)
        gcols = (g3 @ kmat.T).reshape(B, T, w, D)
        gx = np.zeros_like(xd)
        for j in range(w):
            gx[:, j : j + T, :] += gcols[:, :, j, :]
        return (gx[0] if single else gx), gk, gb

    return _make(out, (x, kernel, bias), backward, "conv1d")


def maxpool_over_time(x: Tensor, lengths: np.ndarray | None = None) -> Tensor:
    """Max over the time axis of ``(L, F)`` or ``(B, L, F)``.

    ``lengths`` limits each row to its first ``lengths[b]`` timesteps. Ties
    route the gradient to the lowest index.
    """
    single = x.ndim == 2
    xd = x.data[None] if single else x.data
    B, L, F = xd.shape
    if L == 0:
        raise ValueError("empty pooling input")
    if lengths is not None:
        lengths = np.asarray(lengths)
        if np.any(lengths < 1):
            raise ValueError("empty pooling input")
        valid = np.arange(L)[None, :] < lengths[:, None]
        masked = np.where(valid[:, :, None], xd, -np.inf)
    else:
        masked = xd
    arg = masked.argmax(axis=1)  # (B, F), first occurrence on ties
    out = np.take_along_axis(xd, arg[:, None, :], axis=1)[:, 0, :]
    if single:
        out = out[0]

    def backward(g):
        g2 = g[None] if single else g
        gx = np.zeros_like(xd)
        np.put_along_axis(gx, arg[:, None, :], g2[:, None, :], axis=1)
        return (gx[0] if single else gx,)

    return _make(out, (x,), backward, "maxpool")


# -- distances and losses ---------------------------------------------------
def squared_euclidean(a: Tensor, b: Tensor) -> Tensor:
    """Sum of squared differences over the last axis (broadcasting)."""
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    return tsum(square(sub(a, b)), axis=-1)


def pairwise_squared_euclidean(a: Tensor, b: Tensor) -> Tensor:
    """``(M, D)`` x ``(N, D)`` -> ``(M, N)`` matrix of squared distances."""
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    diff = a.data[:, None, :] - b.data[None, :, :]
    out = np.einsum("mnd,mnd->mn", diff, diff)

    def backward(g):
        gd = 2.0 * diff * g[:, :, None]
        return gd.sum(axis=1), -gd.sum(axis=0)

    return _make(out, (a, b), backward, "pdist2")


def log_softmax_xent(logits: Tensor, labels) -> Tensor:
    """Cross-entropy of softmax(logits) against integer labels.

    A 1-d ``logits`` with a scalar label gives that single loss; a 2-d batch
    gives the mean over rows.
    """
    single = logits.ndim == 1
    z = logits.data[None] if single else logits.data
    lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, k = z.shape
    if lab.shape != (n,):
        raise ValueError(f"expected {n} labels, got {lab.shape}")
    if np.any(lab < 0) or np.any(lab >= k):
        raise ValueError(f"label out of range [0, {k})")
    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(n)
    out = np.asarray(-logp[rows, lab].mean(), dtype=z.dtype)

    def backward(g):
        p = np.exp(logp)
        p[rows, lab] -= 1.0
        gz = p * (g / n)
        return (gz[0] if single else gz,)

    return _make(out, (logits,), backward, "xent")


def parameters_of(items: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in items if t.requires_grad]
