"""Dense float64 tensors with reverse-mode automatic differentiation.

Operations record onto a dynamic :class:`Tape` (rebuilt every forward pass).
Values are C-order (row-major) float64 arrays of rank >= 1; there is no
implicit broadcasting beyond scalar-with-tensor, expansion is done with the
explicit :func:`repeat` op. Gradients accumulate on leaf tensors across
backward calls until :meth:`Tensor.zero_grad`.
"""

from __future__ import annotations

import contextvars

import numpy as np

from .errors import ContractError, NumericError, ShapeError

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "fathom_active_tape", default=None
)

_BCE_CLIP = 1e-12


class Tensor:
    """A dense float64 array plus an optional accumulated gradient.

    Tensors produced by ops are treated as immutable; `grad` is only ever
    populated on leaves (tensors created directly, e.g. parameters).
    """

    __slots__ = ("data", "requires_grad", "grad", "_creator", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"all extents must be >= 1, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._creator = None
        self._tape = None

    @classmethod
    def _from_op(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = requires_grad
        t.grad = None
        t._creator = None
        t._tape = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._creator is None

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """A new leaf sharing this tensor's values, cut off from the tape."""
        return Tensor._from_op(self.data, False)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Append-only record of operations; one backward pass visits each
    recorded node at most once, in reverse recording order."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._token = None

    def __enter__(self):
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPE.reset(self._token)
        self._token = None
        return False

    def backward(self, out: Tensor, seed: np.ndarray | None = None) -> None:
        """Vector-Jacobian product seeded at `out`.

        With `seed` omitted, `out` must be scalar and the seed is 1. Leaf
        gradients accumulate; gradients of intermediates are transient.
        """
        if out._tape is not self:
            raise ContractError("tensor was not produced on this tape")
        if seed is None:
            if out.size != 1:
                raise ContractError(
                    f"backward() needs a scalar output, got shape {out.shape}"
                )
            seed = np.ones_like(out.data)
        else:
            seed = np.asarray(seed, dtype=np.float64)
            if seed.shape != out.data.shape:
                raise ShapeError(
                    f"seed shape {seed.shape} != output shape {out.data.shape}"
                )
        # ids are stable here: the tape keeps every node (and hence every
        # non-leaf tensor) alive for its own lifetime
        grads: dict[int, np.ndarray] = {id(out): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if t._creator is None:
                    t.accumulate_grad(gi)
                else:
                    tid = id(t)
                    if tid in grads:
                        grads[tid] = grads[tid] + gi
                    else:
                        grads[tid] = gi


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


def record_op(out_data: np.ndarray, inputs: tuple, backward_fn) -> Tensor:
    """Wrap an op result, recording it on the active tape if any input
    requires grad. `backward_fn(g)` must return per-input gradient arrays
    (None for non-differentiable inputs), aligned with `inputs`."""
    tape = _ACTIVE_TAPE.get()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._from_op(np.ascontiguousarray(out_data), tracked)
    if tracked:
        node = _Node(out, inputs, backward_fn)
        out._creator = node
        out._tape = tape
        tape.nodes.append(node)
    return out


def backward(loss: Tensor) -> None:
    """Reverse pass from a scalar loss; populates grads on every
    requires_grad leaf that contributed to it."""
    if loss.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    if loss._tape is None:
        raise ContractError("loss has no recorded graph (was a tape active?)")
    loss._tape.backward(loss)


def backward_from(out: Tensor, seed: np.ndarray) -> None:
    """Continue a reverse pass from a non-scalar tensor with an explicit
    output gradient (used to stitch gradient flows across graphs)."""
    if out._tape is None:
        raise ContractError("tensor has no recorded graph")
    out._tape.backward(out, seed)


# ---------------------------------------------------------------------------
# ops


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape {a.shape} != shape {b.shape}")


def _lift_scalar(x):
    """Binary ops accept a python number or size-1 tensor on either side."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray([float(x)]))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims disagree, {a.shape} vs {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return record_op(out, (a, b), bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    nd = x.data.ndim
    if not -nd <= axis < nd:
        raise ShapeError(f"softmax axis {axis} out of range for shape {x.shape}")
    if not np.isfinite(x.data).all():
        raise NumericError("softmax input contains non-finite values")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return record_op(y, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def bwd(g):
        return (g * (1.0 - y * y),)

    return record_op(y, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid_stable(x.data)

    def bwd(g):
        return (g * y * (1.0 - y),)

    return record_op(y, (x,), bwd)


def _sigmoid_stable(v: np.ndarray) -> np.ndarray:
    # overflow-free on the whole real line
    return 0.5 * (np.tanh(0.5 * v) + 1.0)


def ewmul(a, b) -> Tensor:
    a, b = _lift_scalar(a), _lift_scalar(b)
    if a.size == 1 or b.size == 1:
        sc, t = (a, b) if a.size == 1 else (b, a)
        s = sc.data.reshape(-1)[0]
        out = t.data * s

        def bwd_scalar(g):
            gt = g * s
            gs = np.asarray([(g * t.data).sum()])
            return (gs, gt) if a.size == 1 else (gt, gs)

        return record_op(out, (a, b), bwd_scalar)
    _check_same_shape(a, b, "ewmul")
    out = a.data * b.data

    def bwd(g):
        return g * b.data, g * a.data

    return record_op(out, (a, b), bwd)


def add(a, b) -> Tensor:
    a, b = _lift_scalar(a), _lift_scalar(b)
    if a.size == 1 or b.size == 1:
        sc, t = (a, b) if a.size == 1 else (b, a)
        out = t.data + sc.data.reshape(-1)[0]

        def bwd_scalar(g):
            gs = np.asarray([g.sum()])
            return (gs, g) if a.size == 1 else (g, gs)

        return record_op(out, (a, b), bwd_scalar)
    _check_same_shape(a, b, "add")

    def bwd(g):
        return g, g

    return record_op(a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _lift_scalar(a), _lift_scalar(b)
    _check_same_shape(a, b, "sub")

    def bwd(g):
        return g, -g

    return record_op(a.data - b.data, (a, b), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ContractError("concat of an empty list")
    nd = ts[0].data.ndim
    axis = axis % nd
    ref = list(ts[0].shape)
    for t in ts[1:]:
        other = list(t.shape)
        if len(other) != nd or other[:axis] + other[axis + 1:] != ref[:axis] + ref[axis + 1:]:
            raise ShapeError(f"concat: shape {t.shape} incompatible with {ts[0].shape} on axis {axis}")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        sl = [slice(None)] * nd
        outs = []
        for i in range(len(ts)):
            sl[axis] = slice(offsets[i], offsets[i + 1])
            outs.append(g[tuple(sl)])
        return tuple(outs)

    return record_op(out, tuple(ts), bwd)


def flatten(x: Tensor) -> Tensor:
    """Row-major flatten to rank 1."""
    shape = x.data.shape
    out = x.data.reshape(-1)

    def bwd(g):
        return (g.reshape(shape),)

    return record_op(out, (x,), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    old = x.data.shape

    def bwd(g):
        return (g.reshape(old),)

    return record_op(x.data.reshape(shape), (x,), bwd)


def repeat(x: Tensor, count: int, axis: int) -> Tensor:
    """Insert a new axis of extent `count` at position `axis` by tiling;
    the explicit stand-in for broadcasting."""
    if count < 1:
        raise ShapeError(f"repeat count must be >= 1, got {count}")
    out = np.repeat(np.expand_dims(x.data, axis), count, axis=axis)

    def bwd(g):
        return (g.sum(axis=axis),)

    return record_op(out, (x,), bwd)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along an existing axis."""
    nd = x.data.ndim
    axis = axis % nd
    if not (0 <= start and start + length <= x.shape[axis] and length >= 1):
        raise ShapeError(
            f"narrow: [{start}, {start + length}) out of bounds for axis {axis} of {x.shape}"
        )
    sl = [slice(None)] * nd
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    in_shape = x.data.shape

    def bwd(g):
        z = np.zeros(in_shape)
        z[sl] = g
        return (z,)

    return record_op(x.data[sl].copy(), (x,), bwd)


def sum_all(x: Tensor) -> Tensor:
    shape = x.data.shape

    def bwd(g):
        return (np.full(shape, g.reshape(-1)[0]),)

    return record_op(np.asarray([x.data.sum()]), (x,), bwd)


def absolute(x: Tensor) -> Tensor:
    def bwd(g):
        return (g * np.sign(x.data),)

    return record_op(np.abs(x.data), (x,), bwd)


def binary_cross_entropy(p: Tensor, y: np.ndarray) -> Tensor:
    """Elementwise -[y log p + (1-y) log(1-p)] with p clamped away from
    {0, 1}; gradient is zero where the clamp is active."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != p.data.shape:
        raise ShapeError(f"bce: prediction shape {p.shape} != label shape {y.shape}")
    pc = np.clip(p.data, _BCE_CLIP, 1.0 - _BCE_CLIP)
    out = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    inside = (p.data > _BCE_CLIP) & (p.data < 1.0 - _BCE_CLIP)

    def bwd(g):
        return (g * inside * (pc - y) / (pc * (1.0 - pc)),)

    return record_op(out, (p,), bwd)
