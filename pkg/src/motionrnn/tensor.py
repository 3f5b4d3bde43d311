"""Reverse-mode autodiff over dense numpy arrays.

A ``Tape`` records one node per produced tensor, in creation order, so a
single reverse walk computes all gradients. When no tape is active the ops
run as plain numpy, which keeps inference and finite-difference loops cheap.

Conventions:
  - binary ops follow numpy trailing-dimension broadcasting,
  - slices and transposes copy (no strided views escape this module),
  - gradients accumulate into ``.grad`` buffers of the same shape.
"""

from __future__ import annotations

import numpy as np

_ACTIVE_TAPE: "Tape | None" = None
_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle per-op finiteness assertions. Slow, meant for debugging blowups."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def active_tape() -> "Tape | None":
    return _ACTIVE_TAPE


class Tensor:
    """A numpy array plus an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        """Same storage, cut from any recorded graph."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # operator sugar; implementations below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def abs(self):
        return absolute(self)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


class Tape:
    """Records ops in topological (creation) order for one backward pass.

    Usage::

        with Tape() as tape:
            loss = ...
        backward(loss, tape)
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], object]] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already active; nested tapes are not supported")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None

    def __len__(self) -> int:
        return len(self._nodes)


def backward(root: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` with d(root)/d(tensor) for every tensor on the tape.

    Grads are reset first, so repeated calls on the same tape are
    bit-identical. Tensors on branches that do not reach ``root`` keep
    ``grad is None``.
    """
    if root.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.shape}")
    if id(root) not in tape._produced:
        raise ValueError("backward root was not produced on this tape")
    for out, inputs, _ in tape._nodes:
        out.grad = None
        for t in inputs:
            t.grad = None
    root.grad = np.ones_like(root.data)
    for out, inputs, fn in reversed(tape._nodes):
        g = out.grad
        if g is None:
            continue
        # Hand fns a read-only view so a passthrough grad can never be
        # adopted as some input's own buffer (_accum copies it instead).
        ro = g.view()
        ro.flags.writeable = False
        fn(ro)


# ---------------------------------------------------------------------------
# op plumbing

def _check_finite(arr: np.ndarray, op: str) -> None:
    if _DEBUG_CHECKS and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by {op}")


def _result(data: np.ndarray, *inputs: Tensor, op: str = "op") -> tuple[Tensor, bool]:
    """Wrap op output; returns (tensor, whether to record a node)."""
    _check_finite(data, op)
    track = _ACTIVE_TAPE is not None and any(t.requires_grad for t in inputs)
    return Tensor(data, requires_grad=track), track


def _record(out: Tensor, inputs: tuple[Tensor, ...], fn) -> None:
    tape = _ACTIVE_TAPE
    tape._nodes.append((out, inputs, fn))
    tape._produced.add(id(out))


def _accum(t: Tensor, g: np.ndarray) -> None:
    """Add g into t.grad. The first write takes ownership of the buffer,
    copying when g aliases some other array (views stay contained)."""
    if not t.requires_grad:
        return
    if t.grad is None:
        if g.base is not None or not g.flags.writeable or g.shape != t.data.shape:
            g = np.broadcast_to(g, t.data.shape).copy()
        t.grad = g
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape` (reverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


# ---------------------------------------------------------------------------
# elementwise ops

def add(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = as_tensor(a)
        out, track = _result(a.data + b, a, op="add")
        if track:
            def bw(g, a=a):
                _accum(a, g)
            _record(out, (a,), bw)
        return out
    a, b = as_tensor(a), as_tensor(b)
    out, track = _result(a.data + b.data, a, b, op="add")
    if track:
        def bw(g, a=a, b=b):
            _accum(a, _unbroadcast(g, a.data.shape))
            _accum(b, _unbroadcast(g, b.data.shape))
        _record(out, (a, b), bw)
    return out


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        return add(a, -b)
    if not isinstance(a, Tensor) and np.isscalar(a):
        return add(neg(b), a)
    a, b = as_tensor(a), as_tensor(b)
    out, track = _result(a.data - b.data, a, b, op="sub")
    if track:
        def bw(g, a=a, b=b):
            _accum(a, _unbroadcast(g, a.data.shape))
            _accum(b, _unbroadcast(-g, b.data.shape))
        _record(out, (a, b), bw)
    return out


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = as_tensor(a)
        out, track = _result(a.data * b, a, op="mul")
        if track:
            def bw(g, a=a, b=b):
                _accum(a, g * b)
            _record(out, (a,), bw)
        return out
    a, b = as_tensor(a), as_tensor(b)
    out, track = _result(a.data * b.data, a, b, op="mul")
    if track:
        def bw(g, a=a, b=b):
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
            _accum(b, _unbroadcast(g * a.data, b.data.shape))
        _record(out, (a, b), bw)
    return out


def neg(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out, track = _result(-a.data, a, op="neg")
    if track:
        def bw(g, a=a):
            _accum(a, -g)
        _record(out, (a,), bw)
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # two-branch form avoids overflow in exp for large |x|
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    out, track = _result(s, a, op="sigmoid")
    if track:
        def bw(g, a=a, s=s):
            _accum(a, g * s * (1.0 - s))
        _record(out, (a,), bw)
    return out


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    out, track = _result(t, a, op="tanh")
    if track:
        def bw(g, a=a, t=t):
            _accum(a, g * (1.0 - t * t))
        _record(out, (a,), bw)
    return out


def absolute(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out, track = _result(np.abs(a.data), a, op="abs")
    if track:
        def bw(g, a=a):
            # subgradient 0 at the kink
            _accum(a, g * np.sign(a.data))
        _record(out, (a,), bw)
    return out


# ---------------------------------------------------------------------------
# reductions

def tensor_sum(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out, track = _result(np.asarray(a.data.sum()), a, op="sum")
    if track:
        def bw(g, a=a):
            _accum(a, np.broadcast_to(g, a.data.shape))
        _record(out, (a,), bw)
    return out


def tensor_mean(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out, track = _result(np.asarray(a.data.mean()), a, op="mean")
    if track:
        n = a.data.size
        def bw(g, a=a, n=n):
            _accum(a, np.broadcast_to(g / n, a.data.shape))
        _record(out, (a,), bw)
    return out


# ---------------------------------------------------------------------------
# shape ops

def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    out, track = _result(a.data.reshape(shape), a, op="reshape")
    if track:
        def bw(g, a=a):
            _accum(a, g.reshape(a.data.shape))
        _record(out, (a,), bw)
    return out


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    out, track = _result(np.ascontiguousarray(np.transpose(a.data, axes)), a, op="transpose")
    if track:
        inv = tuple(np.argsort(axes))
        def bw(g, a=a, inv=inv):
            _accum(a, np.ascontiguousarray(np.transpose(g, inv)))
        _record(out, (a,), bw)
    return out


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Copy of `length` entries along `axis` starting at `start`."""
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"narrow axis {axis} out of range for {a.ndim}-d tensor")
    axis = axis % a.ndim
    if start < 0 or start + length > a.shape[axis]:
        raise ValueError(f"narrow [{start}:{start + length}) out of range for axis {axis} of {a.shape}")
    idx = (slice(None),) * axis + (slice(start, start + length),)
    out, track = _result(a.data[idx].copy(), a, op="narrow")
    if track:
        def bw(g, a=a, idx=idx):
            full = np.zeros_like(a.data)
            full[idx] = g
            _accum(a, full)
        _record(out, (a,), bw)
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty list")
    axis = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim:
            raise ValueError("concat rank mismatch")
        for ax in range(t.ndim):
            if ax != axis and t.shape[ax] != tensors[0].shape[ax]:
                raise ValueError(f"concat shape mismatch off axis {axis}: {t.shape} vs {tensors[0].shape}")
    out, track = _result(np.concatenate([t.data for t in tensors], axis=axis), *tensors, op="concat")
    if track:
        sizes = [t.shape[axis] for t in tensors]
        def bw(g, tensors=tuple(tensors), sizes=sizes, axis=axis):
            ofs = 0
            for t, n in zip(tensors, sizes):
                idx = (slice(None),) * axis + (slice(ofs, ofs + n),)
                _accum(t, np.ascontiguousarray(g[idx]))
                ofs += n
        _record(out, tuple(tensors), bw)
    return out


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack along the channel axis (third from the end)."""
    return concat([a, b], axis=-3)
