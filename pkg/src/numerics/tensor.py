"""
Dense tensors with reverse-mode automatic differentiation over numpy.

Every forward reduction whose length can grow with the sequence (matrix
multiply inner dimension, softmax denominators, layer-norm moments) is
accumulated strictly left to right, so the value at one position never
depends on how many later positions exist.
"""
import logging
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.utils.errors import UsageError, NumericError

logger = logging.getLogger('Cascade.Numerics')

DTYPE = np.float64

ArrayLike = Union[np.ndarray, float, int, Sequence]


class Tensor:
    """A float64 array that records the operation producing it."""

    __slots__ = ('data', 'grad', 'requires_grad', '_parents', '_backward', 'op')

    def __init__(self, data: ArrayLike, requires_grad: bool = False,
                 parents: Tuple['Tensor', ...] = (), backward: Optional[Callable] = None,
                 op: str = 'leaf'):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents = parents
        self._backward = backward
        self.op = op

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float('nan')

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> 'Tensor':
        return Tensor(self.data)

    def backward(self) -> None:
        backward(Graph.from_output(self), self)

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data: ArrayLike) -> Tensor:
    """Create a trainable leaf."""
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True)


def _record(data: np.ndarray, parents: Tuple[Tensor, ...], backward_fn: Callable, op: str) -> Tensor:
    # only nodes downstream of a trainable leaf are recorded
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward=backward_fn, op=op)
    return Tensor(data, op=op)


class Graph:
    """Nodes reachable from an output, in deterministic topological order."""

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, output: Tensor) -> 'Graph':
        order: List[Tensor] = []
        if not output.requires_grad:
            return cls(order)
        visited = set()
        stack: List[Tuple[Tensor, int]] = [(output, 0)]
        visited.add(id(output))
        while stack:
            node, i = stack.pop()
            if i < len(node._parents):
                stack.append((node, i + 1))
                parent = node._parents[i]
                if parent.requires_grad and id(parent) not in visited:
                    visited.add(id(parent))
                    stack.append((parent, 0))
            else:
                order.append(node)
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(graph: Graph, output: Tensor) -> None:
    """
    Accumulate exact reverse-mode gradients into every trainable leaf.

    Args:
        graph: Graph built from output
        output: Scalar output node

    Raises:
        UsageError: output is not a scalar
    """
    if output.data.size != 1:
        raise UsageError(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        return
    grads = {id(output): np.ones_like(output.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


# ---------------------------------------------------------------------------
# helpers

def seq_sum(x: np.ndarray, axis: int = -1, keepdims: bool = True) -> np.ndarray:
    """Left-to-right sum along an axis."""
    if x.shape[axis] == 0:
        return np.sum(x, axis=axis, keepdims=keepdims)
    total = np.take(np.add.accumulate(x, axis=axis), -1, axis=axis)
    return np.expand_dims(total, axis) if keepdims else total


def _check_broadcast(a: Tuple[int, ...], b: Tuple[int, ...], op: str) -> None:
    if a == b or a == () or b == ():
        return
    short, long_ = (a, b) if len(a) < len(b) else (b, a)
    if len(short) < len(long_) and long_[len(long_) - len(short):] == short:
        return
    raise UsageError(f"{op}: shapes {a} and {b} only broadcast over leading batch dimensions")


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    return g.reshape((-1,) + shape).sum(axis=0)


# ---------------------------------------------------------------------------
# elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, 'add')
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), 'add')


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, 'sub')
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), 'sub')


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, 'mul')
    return _record(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                   'mul')


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record(a.data * c, (a,), lambda g: (g * c,), 'scale')


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,), 'neg')


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _record(y, (a,), lambda g: (g * (1.0 - y * y),), 'tanh')


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return _record(y, (a,), lambda g: (g * y * (1.0 - y),), 'sigmoid')


def log_sigmoid(a: Tensor) -> Tensor:
    y = -np.logaddexp(0.0, -a.data)
    return _record(y, (a,), lambda g: (g * _sigmoid(-a.data),), 'log_sigmoid')


def silu(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _record(a.data * s, (a,), lambda g: (g * (s + a.data * s * (1.0 - s)),), 'silu')


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _record(y, (a,), lambda g: (g * y,), 'exp')


def log(a: Tensor) -> Tensor:
    return _record(np.log(a.data), (a,), lambda g: (g / a.data,), 'log')


# ---------------------------------------------------------------------------
# reductions and normalizations

def logsumexp(v: ArrayLike) -> float:
    """
    log(sum(exp(v))) for a vector of reals, with max subtraction.

    Raises:
        UsageError: v is empty
    """
    arr = np.asarray(v, dtype=DTYPE).reshape(-1)
    if arr.size == 0:
        raise UsageError("logsumexp of an empty vector")
    m = np.max(arr)
    if m == -np.inf:
        return -np.inf
    return float(m + np.log(seq_sum(np.exp(arr - m), keepdims=False)))


def _lse_last(x: np.ndarray) -> np.ndarray:
    m = np.max(x, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return m + np.log(seq_sum(np.exp(x - m)))


def logsumexp_last(a: Tensor) -> Tensor:
    """logsumexp over the last axis (differentiable)."""
    lse = _lse_last(a.data)
    y = lse[..., 0]
    p = np.exp(a.data - lse)
    return _record(y, (a,), lambda g: (g[..., None] * p,), 'logsumexp')


def softmax(a: Tensor) -> Tensor:
    m = np.max(a.data, axis=-1, keepdims=True)
    e = np.exp(a.data - m)
    y = e / seq_sum(e)

    def _bw(g):
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)
    return _record(y, (a,), _bw, 'softmax')


def log_softmax(a: Tensor) -> Tensor:
    y = a.data - _lse_last(a.data)

    def _bw(g):
        return (g - np.exp(y) * np.sum(g, axis=-1, keepdims=True),)
    return _record(y, (a,), _bw, 'log_softmax')


def sum(a: Tensor) -> Tensor:  # noqa: A001
    total = seq_sum(a.data.reshape(-1), keepdims=False)
    return _record(np.asarray(total), (a,), lambda g: (np.full(a.shape, float(g)),), 'sum')


def mean(a: Tensor) -> Tensor:
    n = max(a.data.size, 1)
    return scale(sum(a), 1.0 / n)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis, then apply the learned gain and bias."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise UsageError(f"layer_norm: gain/bias shape must be ({d},)")
    mu = seq_sum(x.data) / d
    xc = x.data - mu
    var = seq_sum(xc * xc) / d
    inv = 1.0 / np.sqrt(var + eps)
    xh = xc * inv
    y = xh * gamma.data + beta.data

    def _bw(g):
        gxh = g * gamma.data
        gx = inv / d * (d * gxh - np.sum(gxh, axis=-1, keepdims=True)
                        - xh * np.sum(gxh * xh, axis=-1, keepdims=True))
        lead = g.reshape(-1, d)
        return (gx, (lead * xh.reshape(-1, d)).sum(axis=0), lead.sum(axis=0))
    return _record(y, (x, gamma, beta), _bw, 'layer_norm')


# ---------------------------------------------------------------------------
# linear algebra and shape

def _seq_matmul(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    k_dim = x.shape[-1]
    if k_dim == 0:
        return np.zeros(x.shape[:-1] + y.shape[-1:], dtype=DTYPE)
    out = x[..., :, 0:1] * y[..., 0:1, :]
    for k in range(1, k_dim):
        out = out + x[..., :, k:k + 1] * y[..., k:k + 1, :]
    return out


def matmul(a, b) -> Tensor:
    """
    Matrix product over the last two axes.

    `b` is either a matrix [K, M] shared across a's leading dimensions, or has
    the same leading dimensions as `a`.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise UsageError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise UsageError(f"matmul: inner dimensions differ ({a.shape} @ {b.shape})")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise UsageError(f"matmul: batch dimensions differ ({a.shape} @ {b.shape})")
    out = _seq_matmul(a.data, b.data)

    def _bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if b.ndim == 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb
    return _record(out, (a, b), _bw, 'matmul')


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    src = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), 'reshape')


def transpose(a: Tensor, axes: Tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return _record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), 'transpose')


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise UsageError("concat of zero tensors")
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def _bw(g):
        return tuple(np.split(g, bounds, axis=axis))
    return _record(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), _bw, 'concat')


def take(a: Tensor, idx: ArrayLike, axis: int = 0) -> Tensor:
    """Gather slices of `a` along an axis; repeated indices accumulate gradient."""
    idx = np.asarray(idx, dtype=np.int64)
    axis = axis % a.ndim
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[axis]):
        raise UsageError(f"take: index out of range for axis of size {a.shape[axis]}")
    out = np.take(a.data, idx, axis=axis)

    def _bw(g):
        gz = np.zeros_like(a.data)
        np.add.at(gz, (slice(None),) * axis + (idx,), g)
        return (gz,)
    return _record(out, (a,), _bw, 'take')


def pick(a: Tensor, idx: ArrayLike) -> Tensor:
    """Select one entry of the last axis per leading position."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != a.shape[:-1]:
        raise UsageError(f"pick: index shape {idx.shape} does not match {a.shape[:-1]}")
    out = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def _bw(g):
        gz = np.zeros_like(a.data)
        np.put_along_axis(gz, idx[..., None], g[..., None], axis=-1)
        return (gz,)
    return _record(out, (a,), _bw, 'pick')


def gather(a: Tensor, flat_idx: ArrayLike) -> Tensor:
    """Gather entries of the flattened tensor."""
    idx = np.asarray(flat_idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.size):
        raise UsageError(f"gather: index out of range for {a.data.size} entries")
    out = a.data.reshape(-1)[idx]

    def _bw(g):
        gz = np.zeros(a.data.size, dtype=DTYPE)
        np.add.at(gz, idx, g)
        return (gz.reshape(a.shape),)
    return _record(out, (a,), _bw, 'gather')


def shift_rows(a: Tensor, s: int) -> Tensor:
    """
    Shift along the first (time) axis with zero fill: out[t] = a[t - s].

    Positive s looks into the past, negative s into the future.
    """
    s = int(s)
    n = a.shape[0]
    out = np.zeros_like(a.data)
    if 0 <= s < n:
        out[s:] = a.data[:n - s]
    elif -n < s < 0:
        out[:n + s] = a.data[-s:]

    def _bw(g):
        gz = np.zeros_like(g)
        if 0 <= s < n:
            gz[:n - s] = g[s:]
        elif -n < s < 0:
            gz[-s:] = g[:n + s]
        return (gz,)
    return _record(out, (a,), _bw, 'shift_rows')


def outer_add(a: Tensor, b: Tensor) -> Tensor:
    """out[t, u] = a[t] + b[u] for a [T, H] and b [U, H]."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise UsageError(f"outer_add: incompatible shapes {a.shape}, {b.shape}")
    out = a.data[:, None, :] + b.data[None, :, :]
    return _record(out, (a, b), lambda g: (g.sum(axis=1), g.sum(axis=0)), 'outer_add')


# ---------------------------------------------------------------------------
# transducer objective

def _rnnt_tables(lb: np.ndarray, ly: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    t_len, u_plus = lb.shape
    u_len = u_plus - 1
    alpha = np.full((t_len, u_plus), -np.inf)
    alpha[0, 0] = 0.0
    for t in range(t_len):
        for u in range(u_plus):
            if t == 0 and u == 0:
                continue
            from_blank = alpha[t - 1, u] + lb[t - 1, u] if t > 0 else -np.inf
            from_label = alpha[t, u - 1] + ly[t, u - 1] if u > 0 else -np.inf
            alpha[t, u] = np.logaddexp(from_blank, from_label)
    beta = np.full((t_len, u_plus), -np.inf)
    beta[t_len - 1, u_len] = lb[t_len - 1, u_len]
    for t in range(t_len - 1, -1, -1):
        for u in range(u_len, -1, -1):
            if t == t_len - 1 and u == u_len:
                continue
            via_blank = beta[t + 1, u] + lb[t, u] if t + 1 < t_len else -np.inf
            via_label = beta[t, u + 1] + ly[t, u] if u < u_len else -np.inf
            beta[t, u] = np.logaddexp(via_blank, via_label)
    return alpha, beta


def rnnt_nll(logp: Tensor, targets: Sequence[int], blank: int = 0) -> Tensor:
    """
    Transducer negative log-likelihood from per-cell log-distributions.

    Args:
        logp: [T, U+1, V] log-probabilities; blank at index `blank`
        targets: U label ids (never blank)

    Returns:
        Scalar -log P(targets | logp) summed over all monotonic alignments
    """
    targets = np.asarray(list(targets), dtype=np.int64)
    if logp.ndim != 3:
        raise UsageError(f"rnnt_nll expects [T, U+1, V], got {logp.shape}")
    t_len, u_plus, vocab = logp.shape
    if t_len < 1 or u_plus != len(targets) + 1:
        raise UsageError(f"rnnt_nll: lattice {logp.shape} does not fit {len(targets)} targets")
    if targets.size and (targets.min() < 0 or targets.max() >= vocab or np.any(targets == blank)):
        raise UsageError("rnnt_nll: targets must be non-blank ids inside the vocabulary")

    lb = logp.data[:, :, blank]
    ly = np.full((t_len, u_plus), -np.inf)
    if targets.size:
        ly[:, :-1] = logp.data[:, np.arange(len(targets)), targets]
    alpha, beta = _rnnt_tables(lb, ly)
    log_z = alpha[t_len - 1, u_plus - 1] + lb[t_len - 1, u_plus - 1]
    if not np.isfinite(log_z):
        raise NumericError("transducer likelihood is zero or non-finite")

    def _bw(g):
        grad = np.zeros_like(logp.data)
        beta_next_t = np.full((t_len, u_plus), -np.inf)
        beta_next_t[:-1] = beta[1:]
        beta_next_t[t_len - 1, u_plus - 1] = 0.0
        grad[:, :, blank] = -np.exp(alpha + lb + beta_next_t - log_z)
        if targets.size:
            occ = -np.exp(alpha[:, :-1] + ly[:, :-1] + beta[:, 1:] - log_z)
            for u, y in enumerate(targets):
                grad[:, u, y] += occ[:, u]
        return (grad * float(g),)
    return _record(np.asarray(-log_z), (logp,), _bw, 'rnnt_nll')
