"""Dense float64 tensors with reverse-mode differentiation.

Only what the guidance model needs is here: dense layers, activations,
softmax variants, layer norm, GCN/GAT message passing over edge lists,
strided convolution, an Elman RNN cell, cross-entropy, SGD with weight decay
and a finite-difference gradient checker.

Every op records a backward closure on the output when any input requires a
gradient.  ``Tensor.backward`` walks the tape in reverse topological order
and accumulates into ``.grad`` of leaf tensors.
"""

from __future__ import annotations

import contextlib
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InputError

_GRAD_ENABLED = True

CHECKPOINT_FORMAT = "gnnplan-checkpoint"
CHECKPOINT_VERSION = 1


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        return self.data.ravel()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise InputError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --- elementwise and linear algebra -----------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise InputError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def back(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if ad.ndim == 1:
            return bd @ g, np.outer(ad, g)
        if bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    if a.data.ndim == 2:
        # One vector-matrix product per row: gemm tiling can round equal rows
        # differently, and equal nodes must get bit-equal outputs.
        out = np.matmul(a.data[:, None, :], b.data if b.data.ndim == 2 else b.data[:, None])
        out = out[:, 0, :] if b.data.ndim == 2 else out[:, 0, 0]
    else:
        out = a.data @ b.data
    return _make(out, (a, b), back)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def index(a, key) -> Tensor:
    """Basic or integer-array indexing; gradients scatter-add back."""
    a = as_tensor(a)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return _make(a.data[key], (a,), back)


def take_rows(a, idx) -> Tensor:
    """``a[idx]`` for a 2D tensor and an integer index vector."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    n = a.shape[0]

    def back(g):
        return (_scatter_rows(g, idx, n),)

    return _make(a.data[idx], (a,), back)


def _scatter_rows(values: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    """Sum rows of ``values`` into ``n`` buckets given by ``idx``."""
    if values.shape[0] == 0:
        return np.zeros((n,) + values.shape[1:])
    m = sp.csr_matrix((np.ones(idx.shape[0]), (idx, np.arange(idx.shape[0]))),
                      shape=(n, idx.shape[0]))
    flat = values.reshape(values.shape[0], -1)
    return np.asarray(m @ flat).reshape((n,) + values.shape[1:])


def segment_sum(values, seg, n: int) -> Tensor:
    values = as_tensor(values)
    seg = np.asarray(seg, dtype=np.int64)
    return _make(_scatter_rows(values.data, seg, n), (values,), lambda g: (g[seg],))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ax = axis % ts[0].data.ndim
    sizes = [t.shape[ax] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=ax))

    return _make(np.concatenate([t.data for t in ts], axis=ax), ts, back)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis), 1.0 / count)


# --- activations --------------------------------------------------------------

def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    factor = np.where(x.data > 0, 1.0, slope)
    return _make(x.data * factor, (x,), lambda g: (g * factor,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,))


def dense(x, W, b=None) -> Tensor:
    """``x @ W + b``."""
    x, W = as_tensor(x), as_tensor(W)
    if x.shape[-1] != W.shape[0]:
        raise InputError(f"dense: input width {x.shape[-1]} vs weight rows {W.shape[0]}")
    y = matmul(x, W)
    return y if b is None else add(y, b)


# --- normalisation and probabilities ----------------------------------------------

def softmax(v, axis: int = -1) -> Tensor:
    v = as_tensor(v)
    if v.data.size == 0:
        raise InputError("softmax of an empty vector")
    z = v.data - v.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _make(s, (v,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def log_softmax(v, axis: int = -1) -> Tensor:
    v = as_tensor(v)
    z = v.data - v.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)
    return _make(out, (v,), lambda g: (g - s * g.sum(axis=axis, keepdims=True),))


def cross_entropy(scores, target: int) -> Tensor:
    """``-log softmax(scores)[target]`` for a 1D score vector."""
    scores = as_tensor(scores)
    if scores.data.ndim != 1:
        raise InputError("cross_entropy expects a 1D score vector")
    n = scores.shape[0]
    if not 0 <= target < n:
        raise InputError(f"target {target} out of range for {n} scores")
    z = scores.data - scores.data.max()
    lse = math.log(np.exp(z).sum())
    loss = lse - z[target]
    p = np.exp(z - lse)

    def back(g):
        d = p.copy()
        d[target] -= 1.0
        return (g * d,)

    return _make(np.asarray(max(loss, 0.0)), (scores,), back)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance (1/n variance)."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if x.shape[-1] < 2:
        raise InputError("layer_norm needs at least two features")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gain.data + bias.data

    def back(g):
        dxhat = g * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _make(y, (x, gain, bias), back)


def segment_softmax(scores, seg, n: int) -> Tensor:
    """Softmax of a 1D score vector within groups given by ``seg``."""
    scores = as_tensor(scores)
    seg = np.asarray(seg, dtype=np.int64)
    peak = np.full(n, -np.inf)
    np.maximum.at(peak, seg, scores.data)
    e = np.exp(scores.data - peak[seg])
    denom = np.bincount(seg, weights=e, minlength=n)
    a = e / denom[seg]

    def back(g):
        ga = np.bincount(seg, weights=g * a, minlength=n)
        return (a * (g - ga[seg]),)

    return _make(a, (scores,), back)


def attention(Q, K, V) -> Tensor:
    """``softmax(Q K^T / sqrt(d_k)) V`` row-wise."""
    Q, K, V = as_tensor(Q), as_tensor(K), as_tensor(V)
    if Q.shape[1] != K.shape[1] or K.shape[0] != V.shape[0]:
        raise InputError(f"attention shape mismatch Q{Q.shape} K{K.shape} V{V.shape}")
    scores = mul(matmul(Q, transpose(K)), 1.0 / math.sqrt(K.shape[1]))
    return matmul(softmax(scores, axis=1), V)


# --- graph message passing ---------------------------------------------------------

@dataclass(frozen=True)
class EdgeIndex:
    """Directed message list ``src -> dst`` including one self loop per node."""

    src: np.ndarray
    dst: np.ndarray
    n: int

    @property
    def degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.n).astype(np.float64)


def edge_index(adjacency, n: Optional[int] = None) -> EdgeIndex:
    """Build message lists from neighbour lists or a square 0/1 matrix.

    Self loops are added here; the input must not contain any.
    """
    if isinstance(adjacency, EdgeIndex):
        return adjacency
    if isinstance(adjacency, np.ndarray) and adjacency.ndim == 2:
        if adjacency.shape[0] != adjacency.shape[1]:
            raise InputError("adjacency matrix must be square")
        dst, src = np.nonzero(adjacency)
        n = adjacency.shape[0]
    else:
        lists = list(adjacency)
        n = len(lists) if n is None else n
        counts = [len(a) for a in lists]
        dst = np.repeat(np.arange(n), counts)
        src = np.fromiter(itertools.chain.from_iterable(lists), dtype=np.int64, count=int(np.sum(counts)))
    loops = np.arange(n)
    src = np.concatenate([np.asarray(src, dtype=np.int64), loops])
    dst = np.concatenate([np.asarray(dst, dtype=np.int64), loops])
    order = np.lexsort((src, dst))
    return EdgeIndex(src[order], dst[order], n)


def gcn_forward(H, adjacency, W) -> Tensor:
    """``relu(D~^-1/2 (A + I) D~^-1/2 H W)``."""
    H, W = as_tensor(H), as_tensor(W)
    ei = edge_index(adjacency, H.shape[0])
    if H.shape[0] != ei.n:
        raise InputError("feature rows do not match node count")
    deg = ei.degree
    coef = 1.0 / np.sqrt(deg[ei.src] * deg[ei.dst])
    Z = dense(H, W)
    msg = mul(take_rows(Z, ei.src), coef[:, None])
    return relu(segment_sum(msg, ei.dst, ei.n))


def gat_forward(H, adjacency, W, a, slope: float = 0.2) -> Tensor:
    """Single-head graph attention with a self edge and ReLU output.

    ``alpha_ij = softmax_j(LeakyReLU(a . [W h_i || W h_j]))`` over
    ``j in N(i) + {i}``; ``h'_i = relu(sum_j alpha_ij W h_j)``.
    """
    H, W, a = as_tensor(H), as_tensor(W), as_tensor(a)
    ei = edge_index(adjacency, H.shape[0])
    if H.shape[0] != ei.n:
        raise InputError("feature rows do not match node count")
    d = W.shape[1]
    if a.shape != (2 * d,):
        raise InputError(f"attention vector must have shape ({2 * d},), got {a.shape}")
    Z = dense(H, W)
    s_dst = matmul(Z, index(a, slice(0, d)))
    s_src = matmul(Z, index(a, slice(d, 2 * d)))
    e = leaky_relu(add(take_rows(s_dst, ei.dst), take_rows(s_src, ei.src)), slope)
    alpha = segment_softmax(e, ei.dst, ei.n)
    msg = mul(take_rows(Z, ei.src), reshape(alpha, (-1, 1)))
    return relu(segment_sum(msg, ei.dst, ei.n))


# --- convolution -----------------------------------------------------------

def cover_pad(size: int, k: int, stride: int) -> int:
    """Zeros to append so strided windows reach the last input cell."""
    return (-(size - k)) % stride


def conv(x, kernel, bias=None, stride: int = 1, cover: bool = False) -> Tensor:
    """Cross-correlation of a ``(C_in, *spatial)`` map with ``(C_out, C_in, *k)`` kernels.

    With ``cover`` the input is zero-padded on the high side of each axis so
    that no cell is skipped by the stride.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    w = x.data.ndim - 1
    if kernel.data.ndim != w + 2 or kernel.shape[1] != x.shape[0]:
        raise InputError(f"conv kernel {kernel.shape} incompatible with input {x.shape}")
    ksize = kernel.shape[2:]
    if any(k > s for k, s in zip(ksize, x.shape[1:])):
        raise InputError("kernel does not fit inside the grid")
    spatial = tuple(range(1, w + 1))
    xd = x.data
    if cover:
        pads = [(0, 0)] + [(0, cover_pad(s, k, stride)) for s, k in zip(x.shape[1:], ksize)]
        xd = np.pad(xd, pads)
    win = sliding_window_view(xd, ksize, axis=spatial)
    win = win[(slice(None),) + (slice(None, None, stride),) * w]
    out_sp = win.shape[1:1 + w]
    letters = "ijk"[:w]
    kl = "uvw"[:w]
    y = np.einsum(f"c{letters}{kl},oc{kl}->o{letters}", win, kernel.data, optimize=True)
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        y = y + bias.data.reshape((-1,) + (1,) * w)
        parents.append(bias)

    def back(g):
        gk = np.einsum(f"c{letters}{kl},o{letters}->oc{kl}", win, g, optimize=True)
        gx = np.zeros_like(xd)
        for off in itertools.product(*[range(k) for k in ksize]):
            sl = (slice(None),) + tuple(slice(o, o + stride * (n - 1) + 1, stride)
                                        for o, n in zip(off, out_sp))
            kk = kernel.data[(slice(None), slice(None)) + off]
            gx[sl] += np.einsum(f"o{letters},oc->c{letters}", g, kk)
        grads = [gx[tuple(slice(0, n) for n in x.shape)], gk]
        if bias is not None:
            grads.append(g.sum(axis=spatial))
        return tuple(grads)

    return _make(y, parents, back)


def conv_forward(grid, kernels: Sequence, biases: Sequence, stride: int = 2,
                 W=None, b=None, cover: bool = True) -> Tensor:
    """Conv stack with ReLU after each layer; optional flatten + dense."""
    h = as_tensor(grid)
    if h.data.ndim in (2, 3) and (not kernels or as_tensor(kernels[0]).data.ndim == h.data.ndim + 2):
        h = reshape(h, (1,) + h.shape)
    for k, bb in zip(kernels, biases):
        h = relu(conv(h, k, bb, stride, cover))
    if W is None:
        return h
    return dense(reshape(h, (-1,)), W, b)


# --- recurrence ---------------------------------------------------------------------

def rnn_step(h_prev, x, Wx, Wh, b) -> Tensor:
    """Elman cell ``tanh(x Wx + h_prev Wh + b)``."""
    return tanh(add(add(matmul(as_tensor(x), Wx), matmul(as_tensor(h_prev), Wh)), b))


def rnn_encode(sequence, Wx, Wh, b) -> Tensor:
    """Fold :func:`rnn_step` over the rows of ``sequence`` from a zero state."""
    Wh = as_tensor(Wh)
    h = Tensor(np.zeros(Wh.shape[1]))
    seq = as_tensor(sequence)
    for t in range(seq.shape[0]):
        h = rnn_step(h, index(seq, t), Wx, Wh, b)
    return h


# --- parameters, optimisation, checking ------------------------------------------

class ParamSet:
    """Ordered name -> leaf tensor map.  Gradients live on each tensor's ``.grad``."""

    def __init__(self, params: Optional[Mapping[str, np.ndarray]] = None):
        self._params: dict[str, Tensor] = {}
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> Tensor:
        arr = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise InputError(f"parameter {name} has non-finite entries")
        t = Tensor(arr, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def n_values(self) -> int:
        return int(np.sum([t.data.size for t in self._params.values()]))

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        for k, v in state.items():
            if k not in self._params:
                raise InputError(f"unknown parameter {k}")
            v = np.asarray(v, dtype=np.float64)
            if v.shape != self._params[k].shape:
                raise InputError(f"shape mismatch for {k}: {v.shape} vs {self._params[k].shape}")
            self._params[k].data = v.copy()

    def copy(self) -> "ParamSet":
        return ParamSet(self.state())


def sgd_step(params: ParamSet, lr: float, weight_decay: float = 0.0) -> None:
    """``theta <- theta - lr * (grad + weight_decay * theta)``, then clear gradients."""
    for name, t in params.items():
        g = t.grad
        if g is None:
            g = np.zeros_like(t.data)
        elif g.shape != t.data.shape:
            raise InputError(f"gradient shape {g.shape} does not match parameter {name} {t.shape}")
        if lr != 0.0:
            t.data = t.data - lr * (g + weight_decay * t.data)
        t.grad = None


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def lines(self) -> list[str]:
        return [f"{name}: {err:.3e}" for name, err in sorted(self.errors.items())]


def numeric_gradient(loss_fn: Callable[[], float], t: Tensor, h: float = 1e-4,
                     entries: Optional[Iterable[int]] = None) -> np.ndarray:
    """Central differences with step ``h * max(1, |theta|)`` per entry."""
    flat = t.data.reshape(-1)
    out = np.full(flat.shape, np.nan)
    for k in (range(flat.size) if entries is None else entries):
        orig = flat[k]
        step = h * max(1.0, abs(orig))
        flat[k] = orig + step
        up = loss_fn()
        flat[k] = orig - step
        down = loss_fn()
        flat[k] = orig
        out[k] = (up - down) / (2 * step)
    return out.reshape(t.shape)


def grad_check(forward: Callable[[], Tensor], params: ParamSet, tolerance: float = 1e-3,
               h: float = 1e-4, max_entries: Optional[int] = None,
               rng: Optional[np.random.Generator] = None,
               analytic: Optional[Mapping[str, np.ndarray]] = None) -> GradCheckReport:
    """Compare analytic gradients of a scalar ``forward()`` with central differences.

    The error of a block is ``max|a - n| / max(max|a|, max|n|, 1e-8)`` taken
    over the checked entries.  ``analytic`` overrides the backprop result,
    which is how the negative-control test feeds a corrupted gradient.
    """
    params.zero_grad()
    out = forward()
    if out.data.size != 1:
        raise InputError("grad_check needs a scalar-valued forward")
    out.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)).copy()
             for k, t in params.items()}
    if analytic is not None:
        grads.update({k: np.asarray(v, dtype=float) for k, v in analytic.items()})
    params.zero_grad()

    def loss_fn():
        with no_grad():
            return float(forward().data)

    errors = {}
    for name, t in params.items():
        size = t.data.size
        if max_entries is not None and size > max_entries:
            pick = (rng or np.random.default_rng(0)).choice(size, max_entries, replace=False)
            entries = np.sort(pick)
        else:
            entries = np.arange(size)
        num = numeric_gradient(loss_fn, t, h, entries).reshape(-1)[entries]
        ana = grads[name].reshape(-1)[entries]
        scale = max(np.abs(ana).max(initial=0.0), np.abs(num).max(initial=0.0), 1e-8)
        errors[name] = float(np.abs(ana - num).max(initial=0.0) / scale)
    return GradCheckReport(errors, tolerance)


# --- checkpoints ------------------------------------------------------------------

def checkpoint_dict(params: ParamSet, meta: Optional[dict] = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "params": [{"name": k, "shape": list(t.shape), "values": [float(v) for v in t.data.ravel()]}
                   for k, t in params.items()],
    }


def save_checkpoint(params: ParamSet, path: Union[str, Path], meta: Optional[dict] = None) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(params, meta), sort_keys=True) + "\n")


def load_checkpoint(path: Union[str, Path]) -> tuple[ParamSet, dict]:
    data = json.loads(Path(path).read_text())
    if data.get("format") != CHECKPOINT_FORMAT:
        raise InputError(f"{path} is not a checkpoint file")
    if data.get("version") != CHECKPOINT_VERSION:
        raise InputError(f"unsupported checkpoint version {data.get('version')}")
    params = ParamSet()
    for entry in data["params"]:
        params.add(entry["name"], np.array(entry["values"], dtype=np.float64).reshape(entry["shape"]))
    return params, data.get("meta", {})
