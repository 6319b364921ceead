"""Dense float64 tensors with a reverse-mode gradient tape.

Operations only record themselves while a :class:`Tape` is active on the
current thread; outside a tape they behave like plain numpy arithmetic.
Leading (batch) dimensions broadcast the way numpy does, so every op works
on single ``N x D`` samples and on ``B x N x D`` stacks alike.

    >>> w = Tensor(np.ones((2, 2)), requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_(matmul(w, w))
    >>> tape.backward(loss)
    >>> w.grad
    array([[4., 4.],
           [4., 4.]])
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "TensorShapeError",
    "PreconditionError",
    "TensorFormatError",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "matmul",
    "transpose",
    "exp",
    "log",
    "elu",
    "sigmoid",
    "softmax_rows",
    "sum_",
    "mean",
    "mse",
    "cosine_similarity",
    "unit_lower_tri_inverse",
    "where",
    "numerical_rank",
    "gradcheck",
    "save_tensor",
    "load_tensor",
]


class TensorShapeError(ValueError):
    """Operand shapes are incompatible."""


class PreconditionError(ValueError):
    """An operand violates a structural precondition of the op."""


class TensorFormatError(OSError):
    """A tensor file is malformed or truncated."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# tape


@dataclass
class _Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of differentiable ops executed inside a ``with`` block.

    A tape is owned by the thread that opened it. ``backward`` walks the
    recorded nodes in exact reverse order and leaves gradients on every leaf
    tensor that was created with ``requires_grad=True`` and fed into the
    recorded graph (zeros if the leaf did not influence the output).
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._leaves: dict[int, Tensor] = {}
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward, op: str) -> None:
        for t in inputs:
            if t.requires_grad and id(t) not in self._produced:
                self._leaves.setdefault(id(t), t)
        self._produced.add(id(out))
        self.nodes.append(_Node(out, inputs, backward, op))

    @property
    def leaves(self) -> list[Tensor]:
        return list(self._leaves.values())

    def backward(self, out: Tensor, seed: np.ndarray | None = None) -> None:
        if seed is None:
            if out.data.size != 1:
                raise TensorShapeError("backward from a non-scalar needs an explicit seed gradient")
            seed = np.ones_like(out.data)
        grads: dict[int, np.ndarray] = {id(out): np.asarray(seed, dtype=np.float64)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for t, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                grads[key] = grads[key] + gi if key in grads else gi
        for key, leaf in self._leaves.items():
            g = grads.get(key)
            if g is None:
                g = np.zeros_like(leaf.data)
            leaf.grad = g if leaf.grad is None else leaf.grad + g


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward, op: str) -> Tensor:
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = needs
    out.name = None
    if needs:
        tape.record(out, inputs, backward, op)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # sum out dims that numpy broadcasting added or stretched
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_check(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise TensorShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from exc


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a.data, b.data, "add")
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a.data, b.data, "sub")
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a.data, b.data, "mul")
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a.data, b.data, "div")
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    x = a.data
    neg_part = alpha * np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, neg_part)
    slope = np.where(x > 0, 1.0, neg_part + alpha)
    return _make(out, (a,), lambda g: (g * slope,), "elu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def where(cond, a, b) -> Tensor:
    """Select from ``a`` where the (constant) boolean ``cond`` holds, else ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(np.where(cond, g, 0.0), a.shape),
            _unbroadcast(np.where(cond, 0.0, g), b.shape),
        ),
        "where",
    )


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise TensorShapeError("matmul needs operands with at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise TensorShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise TensorShapeError(f"matmul: batch dims incompatible, {a.shape} @ {b.shape}") from exc

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), backward, "matmul")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def unit_lower_tri_inverse(a, atol: float = 1e-12) -> Tensor:
    """Inverse of a unit lower-triangular matrix (or stack of them).

    Computed row by row with forward substitution, so the result is exact up
    to rounding and is itself unit lower-triangular. The input is treated as
    living on the unit lower-triangular manifold: its gradient is reported on
    the strictly lower entries only.
    """
    a = as_tensor(a)
    x = a.data
    if x.ndim < 2 or x.shape[-1] != x.shape[-2]:
        raise TensorShapeError(f"unit_lower_tri_inverse needs square matrices, got {x.shape}")
    n = x.shape[-1]
    diag = np.diagonal(x, axis1=-2, axis2=-1)
    if not np.allclose(diag, 1.0, rtol=0.0, atol=atol):
        raise PreconditionError("unit_lower_tri_inverse: diagonal must be all ones")
    if np.any(np.abs(np.triu(x, 1)) > atol):
        raise PreconditionError("unit_lower_tri_inverse: entries above the diagonal must be zero")

    inv = np.zeros_like(x)
    eye = np.eye(n)
    for i in range(n):
        # row_i(Y) = e_i - sum_{j<i} x_ij row_j(Y)
        row = np.broadcast_to(eye[i], x.shape[:-2] + (n,)).copy()
        if i:
            row -= np.einsum("...j,...jk->...k", x[..., i, :i], inv[..., :i, :])
        inv[..., i, :] = row
    lower = np.tril(np.ones((n, n)), -1)

    def backward(g):
        inv_t = np.swapaxes(inv, -1, -2)
        return (-(inv_t @ g @ inv_t) * lower,)

    return _make(inv, (a,), backward, "unit_lower_tri_inverse")


# ---------------------------------------------------------------------------
# reductions and losses


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out, dtype=np.float64), (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def mse(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise TensorShapeError(f"mse: shapes differ, {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size
    out = np.asarray(np.mean(diff**2))
    return _make(out, (a, b), lambda g: (2.0 * g * diff / n, -2.0 * g * diff / n), "mse")


def softmax_rows(a, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along the last axis, restricted to entries where ``mask`` is true.

    Masked-out entries are exactly zero; a row with no admissible entry is an
    all-zero row.
    """
    a = as_tensor(a)
    x = a.data
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    shifted = np.where(mask, x, -np.inf)
    row_max = np.max(shifted, axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.where(mask, np.exp(np.where(mask, x, 0.0) - row_max), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    out = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)

    def backward(g):
        inner = np.sum(g * out, axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _make(out, (a,), backward, "softmax_rows")


def cosine_similarity(a) -> Tensor:
    """Pairwise cosine similarity between the rows of ``a`` (``... x N x D`` -> ``... x N x N``).

    A row with zero norm has similarity 0 with everything, itself included.
    """
    a = as_tensor(a)
    x = a.data
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    safe = norms > 0
    inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=safe)
    u = x * inv
    out = u @ np.swapaxes(u, -1, -2)

    def backward(g):
        gs = g + np.swapaxes(g, -1, -2)
        gu = gs @ u
        # project out the radial component: d(x/|x|) = (I - u u^T)/|x|
        radial = np.sum(gu * u, axis=-1, keepdims=True)
        return ((gu - radial * u) * inv,)

    return _make(out, (a,), backward, "cosine_similarity")


# ---------------------------------------------------------------------------
# non-differentiable helpers


def numerical_rank(a, tol: float = 1e-6) -> int:
    """Number of singular values above ``tol`` times the largest one."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = a.data if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64)
    if x.size == 0:
        return 0
    s = np.linalg.svd(x, compute_uv=False)
    top = s.max()
    if top == 0.0:
        return 0
    return int(np.count_nonzero(s > tol * top))


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    mask: Sequence[np.ndarray | None] | None = None,
) -> float:
    """Largest relative error between tape gradients and central differences.

    ``fn`` must map the inputs to a scalar tensor. ``mask`` optionally
    restricts, per input, which entries are perturbed (others are skipped).
    Relative error is ``|g_tape - g_fd| / max(1, |g_tape|, |g_fd|)``.
    """
    for t in inputs:
        t.grad = None
        t.requires_grad = True
    with Tape() as tape:
        out = fn(*inputs)
    tape.backward(out)
    worst = 0.0
    for k, t in enumerate(inputs):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        m = None if mask is None else mask[k]
        flat = t.data.reshape(-1)
        for idx in range(flat.size):
            if m is not None and not np.asarray(m).reshape(-1)[idx]:
                continue
            orig = flat[idx]
            flat[idx] = orig + h
            up = float(fn(*inputs).data)
            flat[idx] = orig - h
            down = float(fn(*inputs).data)
            flat[idx] = orig
            fd = (up - down) / (2 * h)
            ga = analytic.reshape(-1)[idx]
            err = abs(ga - fd) / max(1.0, abs(ga), abs(fd))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# portable file format

MAGIC = b"IDTENSOR1"


def save_tensor(path, array) -> None:
    """Write ``array`` as ``IDTENSOR1\\n`` + ``dtype=f64 shape=..\\n`` + little-endian payload."""
    x = array.data if isinstance(array, Tensor) else np.asarray(array, dtype=np.float64)
    if x.ndim not in (2, 3):
        raise TensorShapeError(f"portable tensors are 2-D or 3-D, got shape {x.shape}")
    header = "dtype=f64 shape=" + ",".join(str(d) for d in x.shape) + "\n"
    payload = np.ascontiguousarray(x, dtype="<f8").tobytes()
    Path(path).write_bytes(MAGIC + b"\n" + header.encode("ascii") + payload)


def load_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC + b"\n"):
        raise TensorFormatError(f"{path}: missing IDTENSOR1 magic")
    rest = raw[len(MAGIC) + 1 :]
    end = rest.find(b"\n")
    if end < 0:
        raise TensorFormatError(f"{path}: header line not terminated")
    header = rest[:end].decode("ascii", errors="replace")
    fields = dict(item.split("=", 1) for item in header.split() if "=" in item)
    if fields.get("dtype") != "f64" or "shape" not in fields:
        raise TensorFormatError(f"{path}: bad header {header!r}")
    try:
        shape = tuple(int(d) for d in fields["shape"].split(","))
    except ValueError as exc:
        raise TensorFormatError(f"{path}: bad shape {fields['shape']!r}") from exc
    if len(shape) not in (2, 3) or any(d < 0 for d in shape):
        raise TensorFormatError(f"{path}: unsupported shape {shape}")
    payload = rest[end + 1 :]
    expected = int(np.prod(shape)) * 8
    if len(payload) != expected:
        raise TensorFormatError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
