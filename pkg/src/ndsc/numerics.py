"""Minimal differentiable-computation substrate.

Dense tensors over numpy arrays, a handful of neural-net operations
(affine layers, GELU/sigmoid activations, reductions, concatenation,
row gathers), reverse-mode gradient computation over a static tape,
and the Adam optimizer.

Computation runs in float64 throughout; the 32-bit interchange format
only applies when tensors are written to disk (see
``write_tensor_record`` / ``read_tensor_record``).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import DataError, NumericalError

DTYPE = np.float64

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """A node in a computation graph over a dense n-d float array.

    ``data`` is the forward value (row-major numpy array).  Nodes
    produced by operations carry a vector-Jacobian-product closure so
    ``backward`` can push gradients to their parents.  Leaf tensors
    created with ``requires_grad=True`` accumulate gradients in
    ``grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, parents=(), vjp=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, inverting numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor(out, parents=(a, b), vjp=vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)

    return Tensor(out, parents=(a, b), vjp=vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def vjp(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return Tensor(out, parents=(a, b), vjp=vjp)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def vjp(g):
        return (g * c,)

    return Tensor(x.data * c, parents=(x,), vjp=vjp)


def square(x: Tensor) -> Tensor:
    def vjp(g):
        return (g * (2.0 * x.data),)

    return Tensor(x.data * x.data, parents=(x,), vjp=vjp)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Batched affine map: out[i, j] = sum_k x[i, k] * w[k, j] + b[j]."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ValueError(
            f"affine expects 2-d input and weight, got {x.data.shape} and {w.data.shape}")
    if x.data.shape[1] != w.data.shape[0]:
        raise ValueError(
            f"affine shape mismatch: input {x.data.shape} is incompatible with "
            f"weight {w.data.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise ValueError(
            f"affine bias shape {b.data.shape} does not match weight columns "
            f"({w.data.shape[1]},)")
    out = x.data @ w.data + b.data

    def vjp(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return Tensor(out, parents=(x, w, b), vjp=vjp)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU: u * Phi(u) with Phi the standard normal CDF."""
    cdf = 0.5 * (1.0 + special.erf(x.data * _INV_SQRT2))
    out = x.data * cdf

    def vjp(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        return (g * (cdf + x.data * pdf),)

    return Tensor(out, parents=(x,), vjp=vjp)


def sigmoid(x: Tensor) -> Tensor:
    s = special.expit(x.data)

    def vjp(g):
        return (g * s * (1.0 - s),)

    return Tensor(s, parents=(x,), vjp=vjp)


def activation(x: Tensor, kind: str) -> Tensor:
    """Elementwise activation, kind in {"gelu", "sigmoid"}."""
    if kind == "gelu":
        return gelu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation kind {kind!r}")


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())

    def vjp(g):
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return Tensor(out, parents=(x,), vjp=vjp)


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.data.size)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.data.shape),)

    return Tensor(out, parents=(x,), vjp=vjp)


def concat(parts, axis=1) -> Tensor:
    parts = list(parts)
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(out, parents=tuple(parts), vjp=vjp)


def gather_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Select rows of a (K, D) table by an integer index array.

    Output shape is indices.shape + (D,); the backward pass scatter-adds
    into the table rows.
    """
    idx = np.asarray(indices)
    out = table.data[idx]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.ravel(), g.reshape(-1, table.data.shape[1]))
        return (gt,)

    return Tensor(out, parents=(table,), vjp=vjp)


def detach(x: Tensor) -> Tensor:
    """Stop-gradient: a constant leaf carrying a copy of x's value."""
    return Tensor(x.data.copy())


def straight_through(z: Tensor, values: np.ndarray) -> Tensor:
    """Forward the given values, backward the gradient to z unchanged.

    ``values`` must have the same shape as z.
    """
    values = np.asarray(values, dtype=DTYPE)
    if values.shape != z.data.shape:
        raise ValueError(
            f"straight_through shape mismatch: {values.shape} vs {z.data.shape}")

    def vjp(g):
        return (g,)

    return Tensor(values, parents=(z,), vjp=vjp)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy over a batch of integer labels."""
    labels = np.asarray(labels)
    n = logits.data.shape[0]
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {n}")
    m = logits.data.max(axis=1, keepdims=True)
    exps = np.exp(logits.data - m)
    z = exps.sum(axis=1, keepdims=True)
    log_probs = logits.data - m - np.log(z)
    out = np.asarray(-log_probs[np.arange(n), labels].mean())

    def vjp(g):
        p = exps / z
        p[np.arange(n), labels] -= 1.0
        return (g * p / n,)

    return Tensor(out, parents=(logits,), vjp=vjp)


def backward(loss: Tensor) -> None:
    """Reverse-mode gradient of a scalar loss.

    Accumulates gradients into the ``grad`` field of every reachable
    tensor with ``requires_grad``.  Rejects non-scalar losses.
    """
    if loss.data.size != 1:
        raise ValueError(
            f"backward requires a scalar loss, got shape {loss.data.shape}")

    # Iterative post-order topological sort over the tape.
    topo = []
    visited = set()
    stack = [(loss, iter(loss._parents))]
    visited.add(id(loss))
    while stack:
        node, it = stack[-1]
        advanced = False
        for parent in it:
            if id(parent) not in visited and parent.requires_grad:
                visited.add(id(parent))
                stack.append((parent, iter(parent._parents)))
                advanced = True
                break
        if not advanced:
            topo.append(node)
            stack.pop()

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._vjp is None or node.grad is None:
            continue
        contribs = node._vjp(node.grad)
        for parent, g in zip(node._parents, contribs):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=DTYPE, copy=True)
            else:
                parent.grad += g


class ParamSet:
    """Named trainable tensors with matching gradient slots.

    Gradient slots live on the tensors themselves (``Tensor.grad``); a
    parameter untouched by the last backward pass reads as all zeros.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(array, dtype=DTYPE, copy=True), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self):
        return list(self._params.keys())

    def items(self):
        return self._params.items()

    def grad(self, name: str) -> np.ndarray:
        t = self._params[name]
        if t.grad is None:
            return np.zeros_like(t.data)
        return t.grad

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, arr in values.items():
            t = self._params[k]
            if t.data.shape != arr.shape:
                raise ValueError(
                    f"parameter {k!r} shape mismatch: {t.data.shape} vs {arr.shape}")
            t.data = np.array(arr, dtype=DTYPE, copy=True)
            t.grad = None


def init_affine(rng: np.random.Generator, d_in: int, d_out: int):
    """Fan-in uniform weight init, zero bias."""
    bound = 1.0 / np.sqrt(d_in)
    w = rng.uniform(-bound, bound, size=(d_in, d_out))
    b = np.zeros(d_out)
    return w, b


@dataclass
class AdamState:
    """Adam accumulators for one ParamSet."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamSet, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        st = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for name, tensor in params.items():
            st.m[name] = np.zeros_like(tensor.data)
            st.v[name] = np.zeros_like(tensor.data)
        return st


def adam_step(params: ParamSet, state: AdamState) -> None:
    """One Adam update with bias correction; increments the step counter."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, tensor in params.items():
        g = params.grad(name)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        tensor.data = tensor.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def check_finite_loss(loss_value: float, context: str) -> None:
    if not np.isfinite(loss_value):
        raise NumericalError(f"non-finite loss ({loss_value!r}) during {context}")


# ---------------------------------------------------------------------------
# Named tensor records: the on-disk interchange format used by model files.
# Layout per record: u16 name length, name bytes (utf-8), u8 rank,
# u32 shape entries, then raw little-endian float32 values, row-major.
# ---------------------------------------------------------------------------

def write_tensor_record(fh, name: str, array: np.ndarray) -> None:
    name_b = name.encode("utf-8")
    if len(name_b) > 0xFFFF:
        raise ValueError(f"tensor name too long: {name!r}")
    fh.write(struct.pack("<H", len(name_b)))
    fh.write(name_b)
    arr = np.ascontiguousarray(array)
    fh.write(struct.pack("<B", arr.ndim))
    for s in arr.shape:
        fh.write(struct.pack("<I", s))
    fh.write(arr.astype("<f4").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise DataError(
            f"truncated file while reading {what} at offset {fh.tell() - len(buf)}: "
            f"wanted {n} bytes, got {len(buf)}")
    return buf


def read_tensor_record(fh):
    (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "tensor name length"))
    name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
    (rank,) = struct.unpack("<B", _read_exact(fh, 1, f"rank of {name!r}"))
    shape = tuple(
        struct.unpack("<I", _read_exact(fh, 4, f"shape of {name!r}"))[0]
        for _ in range(rank)
    )
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    raw = _read_exact(fh, 4 * count, f"data of {name!r}")
    data = np.frombuffer(raw, dtype="<f4").astype(DTYPE).reshape(shape)
    return name, data
