"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation returns a new :class:`Tensor` that records its
parents and a closure mapping the output gradient to parent gradients.
:func:`backward` walks the recorded graph in reverse topological order.

Broadcasting is limited to numpy rules for elementwise ops, which covers the
row-bias cases the models need.
"""
from __future__ import annotations

import contextlib
import math
import threading

import numpy as np

from . import kernels

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        # ascontiguousarray would promote 0-d scalars to shape (1,)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


class Parameter(Tensor):
    """A named, trainable tensor. Frozen parameters never record gradients."""

    __slots__ = ("name", "_frozen")

    def __init__(self, data, name: str = "", frozen: bool = False):
        super().__init__(data, requires_grad=not frozen)
        self.name = name
        self._frozen = bool(frozen)

    @property
    def frozen(self) -> bool:
        return self._frozen

    @frozen.setter
    def frozen(self, value: bool) -> None:
        self._frozen = bool(value)
        self.requires_grad = not self._frozen
        if self._frozen:
            self.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, frozen={self.frozen})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out.op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# --------------------------------------------------------------------------
# Elementwise and structural ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return _make(a.data * c, (a,), lambda g: (g * c,), "scale")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product ``a @ b``."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored as [out x in]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
        parents = (x, weight, bias)
    else:
        parents = (x, weight)

    def bw(g):
        gx = g @ weight.data
        gw = g.T @ x.data
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return _make(out, parents, bw, "linear")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects 2-D, got {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return _make(np.array(a.data.sum()), (a,), lambda g: (np.full(a.shape, float(g)),), "sum")


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _make(np.array(a.data.mean()), (a,), lambda g: (np.full(a.shape, float(g) / n),), "mean")


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    c = math.sqrt(2.0 / math.pi)
    u = c * (x.data + 0.044715 * x.data**3)
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def bw(g):
        du = c * (1.0 + 3 * 0.044715 * x.data**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du),)

    return _make(out, (x,), bw, "gelu")


def concat_rows(parts) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_rows of nothing")
    widths = {p.shape[1:] for p in parts}
    if len(widths) != 1:
        raise ShapeError(f"concat_rows: trailing shapes differ {sorted(widths)}")
    sizes = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=0), parts, bw, "concat_rows")


def take_rows(table: Tensor, index) -> Tensor:
    """Gather rows ``table[index]``; gradients scatter-add back."""
    idx = np.asarray(index, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"row index out of range for table with {table.shape[0]} rows")

    def bw(g):
        out = np.zeros_like(table.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(table.data[idx], (table,), bw, "take_rows")


# --------------------------------------------------------------------------
# Normalisation, attention, loss


def softmax_rows(x: Tensor, mask=None) -> Tensor:
    """Row softmax with max subtraction; ``mask`` [R x M] bool selects allowed
    entries, periodic over rows. Disallowed entries are exactly zero."""
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows expects 2-D, got {x.shape}")
    m = None if mask is None else np.ascontiguousarray(mask, dtype=np.uint8)
    y = kernels.softmax_rows_fwd(x.data, m)
    return _make(y, (x,), lambda g: (kernels.softmax_rows_bwd(y, np.ascontiguousarray(g)),), "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: last dim {d} vs gain {gain.shape} / bias {bias.shape}")
    shape = x.shape
    x2 = x.data.reshape(-1, d)
    y, xhat, rstd = kernels.layer_norm_fwd(x2, gain.data, bias.data, eps)

    def bw(g):
        gx, gg, gb = kernels.layer_norm_bwd(np.ascontiguousarray(g.reshape(-1, d)), xhat, rstd, gain.data)
        return gx.reshape(shape), gg, gb

    return _make(y.reshape(shape), (x, gain, bias), bw, "layer_norm")


def attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int, mask=None) -> Tensor:
    """Multi-head scaled dot-product attention over packed rows.

    ``q`` is [N x d], ``k`` and ``v`` are [M x d]; ``mask`` is an optional
    [N x M] boolean matrix of allowed query/key pairs shared by all heads.
    Returns the concatenated head outputs [N x d] (before any output
    projection).
    """
    n, d = q.shape
    m = k.shape[0]
    if k.shape[1] != d or v.shape != k.shape:
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape}")
    if d % n_heads:
        raise ShapeError(f"attention: width {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    scale = 1.0 / math.sqrt(dh)
    qh = q.data.reshape(n, n_heads, dh).transpose(1, 0, 2)
    kh = k.data.reshape(m, n_heads, dh).transpose(1, 0, 2)
    vh = v.data.reshape(m, n_heads, dh).transpose(1, 0, 2)
    scores = np.ascontiguousarray((qh @ kh.transpose(0, 2, 1)) * scale).reshape(n_heads * n, m)
    mk = None if mask is None else np.ascontiguousarray(mask, dtype=np.uint8)
    if mk is not None and mk.shape != (n, m):
        raise ShapeError(f"attention: mask {mk.shape} does not match ({n}, {m})")
    w2 = kernels.softmax_rows_fwd(scores, mk)
    w = w2.reshape(n_heads, n, m)
    out = (w @ vh).transpose(1, 0, 2).reshape(n, d)

    def bw(g):
        gh = g.reshape(n, n_heads, dh).transpose(1, 0, 2)
        gv = (w.transpose(0, 2, 1) @ gh).transpose(1, 0, 2).reshape(m, d)
        gw = np.ascontiguousarray(gh @ vh.transpose(0, 2, 1)).reshape(n_heads * n, m)
        gs = kernels.softmax_rows_bwd(w2, gw).reshape(n_heads, n, m) * scale
        gq = (gs @ kh).transpose(1, 0, 2).reshape(n, d)
        gk = (gs.transpose(0, 2, 1) @ qh).transpose(1, 0, 2).reshape(m, d)
        return gq, gk, gv

    out_t = _make(out, (q, k, v), bw, "attention")
    return out_t


def attention_weights(q: np.ndarray, k: np.ndarray, n_heads: int, mask=None) -> np.ndarray:
    """The [heads x N x M] weight tensor :func:`attention` uses (no graph)."""
    n, d = q.shape
    m = k.shape[0]
    dh = d // n_heads
    qh = q.reshape(n, n_heads, dh).transpose(1, 0, 2)
    kh = k.reshape(m, n_heads, dh).transpose(1, 0, 2)
    scores = np.ascontiguousarray((qh @ kh.transpose(0, 2, 1)) / math.sqrt(dh)).reshape(n_heads * n, m)
    mk = None if mask is None else np.ascontiguousarray(mask, dtype=np.uint8)
    return kernels.softmax_rows_fwd(scores, mk).reshape(n_heads, n, m)


class InvalidBatchError(ValueError):
    pass


def cross_entropy_rows(logits: Tensor, targets, mask=None, reduction: str = "mean") -> Tensor:
    """Masked next-token cross entropy.

    ``reduction="mean"`` averages over masked-in rows; ``"sum"`` returns the
    total, which callers use to form a corpus-wide mean across packed batches.
    """
    n, vocab = logits.shape
    t = np.asarray(targets, dtype=np.int64)
    keep = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if t.shape != (n,) or keep.shape != (n,):
        raise ShapeError(f"cross_entropy_rows: logits {logits.shape}, targets {t.shape}, mask {keep.shape}")
    if not keep.any():
        raise InvalidBatchError("cross_entropy_rows: every position is masked out")
    rows = np.nonzero(keep)[0]
    tk = t[rows]
    if tk.min() < 0 or tk.max() >= vocab:
        raise IndexError("cross_entropy_rows: target id outside vocabulary")
    x = logits.data[rows]
    z = x - x.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    nll = -logp[np.arange(rows.size), tk]
    denom = rows.size if reduction == "mean" else 1
    total = nll.sum() / denom

    def bw(g):
        p = np.exp(logp)
        p[np.arange(rows.size), tk] -= 1.0
        out = np.zeros_like(logits.data)
        out[rows] = p * (float(g) / denom)
        return (out,)

    return _make(np.array(total), (logits,), bw, "cross_entropy")


# --------------------------------------------------------------------------
# Backward pass


class Tape:
    """Reverse-topologically ordered record of the graph under a root."""

    def __init__(self, root: Tensor):
        order = []
        seen = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in reversed(node._parents):
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.nodes = order[::-1]

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        for node in self.nodes:
            node._parents = ()
            node._backward = None
        self.nodes = []


def backward(root: Tensor, retain_graph: bool = False) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    tape = Tape(root)
    grads = {id(root): np.ones_like(root.data)}
    for node in tape.nodes:
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    if not retain_graph:
        tape.clear()
