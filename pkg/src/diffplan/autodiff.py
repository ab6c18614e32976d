"""Minimal reverse-mode automatic differentiation on dense numpy arrays.

The engine records every primitive operation on an explicit tape (a Wengert
list) and walks it backwards to accumulate vector-Jacobian products.  The op
set is deliberately small: affine, conv1d, elementwise nonlinearities, sum,
mean, mse, add, mul, concat, slice, and a structural reshape.  Everything
else in the package is composed from these.

Design rules:
  * Tensors are immutable after construction (the underlying buffer is
    write-protected), so a tape can be replayed bit-exactly at any time.
  * Ops run eagerly on numpy; recording only appends a closure.  With no
    active tape the same ops work as plain (non-differentiable) math.
  * Batched conv1d loops a single 2D GEMM over the leading axis, so the
    result for each batch element is bit-identical to running it alone.
"""

from __future__ import annotations

import threading

import numpy as np


class DimensionError(ValueError):
    """Shape or axis mismatch; the message names the offending axis."""


class ContractError(ValueError):
    """An argument violates an operation's stated precondition."""


class TapeLookupError(KeyError):
    """A tensor was expected on a tape but never recorded there."""


class NumericError(ArithmeticError):
    """A computation produced NaN or infinity."""


_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """An immutable dense array, optionally flagged to receive gradients."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype, copy=True)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        # ascontiguousarray would promote 0-d to 1-d, so guard it.
        if arr.ndim > 0 and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Take ownership of a freshly computed array without copying."""
        t = object.__new__(cls)
        arr = np.asarray(arr)
        if arr.ndim > 0 and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        t.data = arr
        t.requires_grad = requires_grad
        return t

    @property
    def shape(self) -> tuple:
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
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # Operator sugar over the primitive ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    """Coerce scalars/arrays to a constant Tensor, matching `like`'s dtype."""
    if isinstance(value, Tensor):
        return value
    dtype = like.data.dtype if like is not None else np.float64
    return Tensor(np.asarray(value, dtype=dtype))


class TapeEntry:
    """One recorded primitive: output, inputs, a replayable forward, a VJP."""

    __slots__ = ("op", "inputs", "output", "forward", "vjp")

    def __init__(self, op, inputs, output, forward, vjp):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.forward = forward
        self.vjp = vjp


_tape_stack = threading.local()


def _stack() -> list:
    if not hasattr(_tape_stack, "tapes"):
        _tape_stack.tapes = []
    return _tape_stack.tapes


def active_tape() -> "Tape | None":
    stack = _stack()
    return stack[-1] if stack else None


class no_tape:
    """Context manager that masks any enclosing tape (ops run unrecorded)."""

    def __enter__(self):
        _stack().append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _stack().pop()
        return False


class Tape:
    """Ordered record of primitive ops, used as a context manager.

    Entries appear in execution order, so a reverse walk visits every
    consumer of a tensor before its producer.
    """

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _stack().pop()
        if popped is not self:
            raise ContractError("tape context exited out of order")
        return False

    def __len__(self) -> int:
        return len(self.entries)

    def replay(self) -> bool:
        """Re-run every recorded forward and compare bit-for-bit."""
        for entry in self.entries:
            again = entry.forward()
            if again.dtype != entry.output.data.dtype or again.shape != entry.output.data.shape:
                return False
            if not np.array_equal(again, entry.output.data):
                return False
        return True


def _record(op: str, inputs: tuple, out_data: np.ndarray, forward, vjp) -> Tensor:
    out = Tensor._wrap(out_data)
    tape = active_tape()
    if tape is not None:
        tape.entries.append(TapeEntry(op, inputs, out, forward, vjp))
    return out


class GradientMap:
    """Gradients keyed by tensor identity."""

    def __init__(self):
        self._grads: dict[int, tuple[Tensor, Tensor]] = {}

    def _put(self, tensor: Tensor, grad: np.ndarray):
        self._grads[id(tensor)] = (tensor, Tensor._wrap(grad))

    def __contains__(self, tensor: Tensor) -> bool:
        return id(tensor) in self._grads

    def __getitem__(self, tensor: Tensor) -> Tensor:
        try:
            return self._grads[id(tensor)][1]
        except KeyError:
            raise TapeLookupError("tensor has no recorded gradient") from None

    def __len__(self) -> int:
        return len(self._grads)

    def items(self):
        return [(t, g) for t, g in self._grads.values()]


def backward(tape: Tape, output: Tensor, wrt: list[Tensor] | None = None) -> GradientMap:
    """Accumulate d(output)/d(tensor) for every gradient-flagged tensor.

    `output` must be a scalar produced on `tape`.  When `wrt` is given,
    exactly those tensors get entries (zeros if the output does not depend
    on them); otherwise every flagged tensor seen on the tape does.
    """
    if output.data.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    produced = {id(e.output) for e in tape.entries}
    if id(output) not in produced:
        raise TapeLookupError("output tensor is not on the tape")

    if wrt is None:
        targets: dict[int, Tensor] = {}
        for entry in tape.entries:
            for t in entry.inputs:
                if isinstance(t, Tensor) and t.requires_grad:
                    targets.setdefault(id(t), t)
    else:
        targets = {id(t): t for t in wrt}
        for t in wrt:
            seen = any(
                t is x for e in tape.entries for x in (*e.inputs, e.output)
            )
            if not seen:
                raise TapeLookupError("requested tensor is not on the tape")

    # Forward reachability: a tensor needs a gradient iff it is a target or
    # was computed from one.  The mask lets each VJP skip dead input slots
    # (e.g. data batches during training, parameters during sampling).
    needed = set(targets.keys())
    for entry in tape.entries:
        if any(isinstance(t, Tensor) and id(t) in needed for t in entry.inputs):
            needed.add(id(entry.output))

    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    for entry in reversed(tape.entries):
        g_out = grads.pop(id(entry.output), None)
        if g_out is None:
            continue
        mask = tuple(isinstance(t, Tensor) and id(t) in needed for t in entry.inputs)
        if not any(mask):
            continue
        partials = entry.vjp(g_out, mask)
        for inp, g_in, want in zip(entry.inputs, partials, mask):
            if g_in is None or not want:
                continue
            have = grads.get(id(inp))
            grads[id(inp)] = g_in if have is None else have + g_in

    result = GradientMap()
    for tid, tensor in targets.items():
        g = grads.get(tid)
        if g is None:
            g = np.zeros_like(tensor.data)
        result._put(tensor, g)
    return result


def _check_finite(arr: np.ndarray, op: str):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op} produced a non-finite value")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    try:
        out = a.data + b.data
    except ValueError:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None

    def vjp(g, mask=(True, True)):
        return (
            _unbroadcast(g, a.shape) if mask[0] else None,
            _unbroadcast(g, b.shape) if mask[1] else None,
        )

    return _record("add", (a, b), out, lambda: a.data + b.data, vjp)


def mul(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    try:
        out = a.data * b.data
    except ValueError:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None

    def vjp(g, mask=(True, True)):
        return (
            _unbroadcast(g * b.data, a.shape) if mask[0] else None,
            _unbroadcast(g * a.data, b.shape) if mask[1] else None,
        )

    return _record("mul", (a, b), out, lambda: a.data * b.data, vjp)


def _affine_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-by-row matmul so results do not depend on the leading batch size."""
    d_out, d_in = w.shape
    rows = x.reshape(-1, d_in)
    wt = np.ascontiguousarray(w.T)
    out = np.empty((rows.shape[0], d_out), dtype=x.dtype)
    with np.errstate(invalid="ignore", over="ignore"):
        for i in range(rows.shape[0]):
            np.matmul(rows[i], wt, out=out[i])
    out += b
    return out.reshape(*x.shape[:-1], d_out)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w.T + b with x (..., d_in), w (d_out, d_in), b (d_out,).

    Each leading element is computed by its own vector-matrix product, so a
    batched call is bit-identical per row to single-row calls.
    """
    if w.ndim != 2:
        raise DimensionError(f"affine: weight must be 2D, got {w.shape}")
    if x.shape[-1] != w.shape[1]:
        raise DimensionError(
            f"affine: input last axis {x.shape[-1]} != weight in-features {w.shape[1]}"
        )
    if b.shape != (w.shape[0],):
        raise DimensionError(f"affine: bias shape {b.shape} != ({w.shape[0]},)")
    out = _affine_forward(x.data, w.data, b.data)

    def vjp(g, mask=(True, True, True)):
        gx = gw = gb = None
        g2 = g.reshape(-1, w.shape[0])
        if mask[0]:
            gx = (g2 @ w.data).reshape(x.shape)
        if mask[1]:
            gw = g2.T @ x.data.reshape(-1, w.shape[1])
        if mask[2]:
            gb = g2.sum(axis=0)
        return (gx, gw, gb)

    return _record("affine", (x, w, b), out, lambda: _affine_forward(x.data, w.data, b.data), vjp)


def _conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-padded conv for x (B, C_in, L); loops one 2D GEMM per batch row."""
    batch, c_in, length = x.shape
    c_out, _, k = w.shape
    pad = (k - 1) // 2
    xp = np.zeros((batch, c_in, length + 2 * pad), dtype=x.dtype)
    xp[:, :, pad: pad + length] = x
    # Column matrix per batch element: (L, C_in * k).
    stride_b, stride_c, stride_l = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(batch, length, c_in, k),
        strides=(stride_b, stride_l, stride_c, stride_l),
        writeable=False,
    )
    cols = np.ascontiguousarray(windows).reshape(batch, length, c_in * k)
    wm = np.ascontiguousarray(w.reshape(c_out, c_in * k).T)
    out = np.empty((batch, length, c_out), dtype=x.dtype)
    with np.errstate(invalid="ignore", over="ignore"):
        for i in range(batch):
            np.matmul(cols[i], wm, out=out[i])
    out += b
    return np.ascontiguousarray(out.transpose(0, 2, 1))


def conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-padded 1D convolution over the trailing axis.

    x is (C_in, L) or (B, C_in, L); w is (C_out, C_in, k) with odd k; b is
    (C_out,).  Batched evaluation is bit-identical per element to running
    the elements one at a time.
    """
    if w.ndim != 3:
        raise DimensionError(f"conv1d: kernel must be 3D, got {w.shape}")
    c_out, c_in, k = w.shape
    if k % 2 == 0:
        raise ContractError(f"conv1d: kernel size must be odd, got {k}")
    if b.shape != (c_out,):
        raise DimensionError(f"conv1d: bias shape {b.shape} != ({c_out},)")
    single = x.ndim == 2
    if single:
        if x.shape[0] != c_in:
            raise DimensionError(f"conv1d: input channels {x.shape[0]} != kernel in-channels {c_in}")
        xv = x.data[None]
    elif x.ndim == 3:
        if x.shape[1] != c_in:
            raise DimensionError(f"conv1d: input channels {x.shape[1]} != kernel in-channels {c_in}")
        xv = x.data
    else:
        raise DimensionError(f"conv1d: input must be 2D or 3D, got {x.shape}")

    out = _conv1d_forward(xv, w.data, b.data)
    if single:
        out = out[0]

    def forward():
        res = _conv1d_forward(xv, w.data, b.data)
        return res[0] if single else res

    def vjp(g, mask=(True, True, True)):
        gv = g[None] if single else g
        batch, _, length = xv.shape
        pad = (k - 1) // 2
        gx = gw = gb = None
        if mask[0]:
            # Gradient w.r.t. input: correlate g with the flipped kernel.
            gp = np.zeros((batch, c_out, length + 2 * pad), dtype=gv.dtype)
            gp[:, :, pad: pad + length] = gv
            sb, sc, sl = gp.strides
            gwin = np.lib.stride_tricks.as_strided(
                gp,
                shape=(batch, length, c_out, k),
                strides=(sb, sl, sc, sl),
                writeable=False,
            )
            gcols = np.ascontiguousarray(gwin).reshape(batch, length, c_out * k)
            wflip = np.ascontiguousarray(
                w.data[:, :, ::-1].transpose(1, 0, 2).reshape(c_in, c_out * k).T
            )
            gxb = np.empty((batch, length, c_in), dtype=gv.dtype)
            for i in range(batch):
                np.matmul(gcols[i], wflip, out=gxb[i])
            gxb = np.ascontiguousarray(gxb.transpose(0, 2, 1))
            gx = gxb[0] if single else gxb
        if mask[1]:
            # Gradient w.r.t. kernel: accumulate column-matrix outer products.
            xp = np.zeros((batch, c_in, length + 2 * pad), dtype=xv.dtype)
            xp[:, :, pad: pad + length] = xv
            xb, xc, xl = xp.strides
            xwin = np.lib.stride_tricks.as_strided(
                xp,
                shape=(batch, length, c_in, k),
                strides=(xb, xl, xc, xl),
                writeable=False,
            )
            xcols = np.ascontiguousarray(xwin).reshape(batch, length, c_in * k)
            gwm = np.zeros((c_out, c_in * k), dtype=gv.dtype)
            for i in range(batch):
                gwm += gv[i] @ xcols[i]
            gw = gwm.reshape(c_out, c_in, k)
        if mask[2]:
            gb = gv.sum(axis=(0, 2))
        return (gx, gw, gb)

    return _record("conv1d", (x, w, b), out, forward, vjp)


def _nonlin(op: str, x: Tensor, fn, dfn) -> Tensor:
    out = fn(x.data)
    _check_finite(out, op)

    def vjp(g, mask=(True,)):
        return (g * dfn(x.data),)

    return _record(op, (x,), out, lambda: fn(x.data), vjp)


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x)."""

    def fn(v):
        with np.errstate(over="ignore"):
            s = 1.0 / (1.0 + np.exp(-v))
        return v * s

    def dfn(v):
        with np.errstate(over="ignore"):
            s = 1.0 / (1.0 + np.exp(-v))
        return s * (1.0 + v * (1.0 - s))

    return _nonlin("silu", x, fn, dfn)


def square(x: Tensor) -> Tensor:
    return _nonlin("square", x, lambda v: v * v, lambda v: 2.0 * v)


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.data < 0):
        raise NumericError("sqrt of a negative value")
    return _nonlin("sqrt", x, np.sqrt, lambda v: 0.5 / np.sqrt(v))


def reciprocal(x: Tensor) -> Tensor:
    if np.any(x.data == 0):
        raise NumericError("reciprocal of zero")
    return _nonlin("reciprocal", x, lambda v: 1.0 / v, lambda v: -1.0 / (v * v))


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)
    out = np.asarray(out)

    def vjp(g, mask=(True,)):
        if axis is None:
            return (np.broadcast_to(g, x.shape).astype(x.data.dtype, copy=True),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.shape).astype(x.data.dtype, copy=True),)

    return _record("sum", (x,), out, lambda: np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), vjp)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.mean(axis=axis, keepdims=keepdims)
    out = np.asarray(out)
    if axis is None:
        count = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for a in axes:
            count *= x.shape[a]

    def vjp(g, mask=(True,)):
        if axis is None:
            gg = np.broadcast_to(g, x.shape)
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            gg = np.broadcast_to(gg, x.shape)
        return ((gg / count).astype(x.data.dtype, copy=False),)

    return _record("mean", (x,), out, lambda: np.asarray(x.data.mean(axis=axis, keepdims=keepdims)), vjp)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all entries; returns a scalar."""
    if a.shape != b.shape:
        raise DimensionError(f"mse: shapes {a.shape} and {b.shape} differ")
    diff = a.data - b.data
    out = np.asarray((diff * diff).mean())
    n = a.data.size

    def vjp(g, mask=(True, True)):
        scale = 2.0 * g / n
        d = a.data - b.data
        return (scale * d if mask[0] else None, -scale * d if mask[1] else None)

    def forward():
        d = a.data - b.data
        return np.asarray((d * d).mean())

    return _record("mse", (a, b), out, forward, vjp)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat along axis {axis}: {e}") from None
    sizes = [t.shape[axis] for t in tensors]

    def vjp(g, mask=None):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    return _record(
        "concat", tuple(tensors), out,
        lambda: np.concatenate([t.data for t in tensors], axis=axis), vjp,
    )


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice [start:stop) along one axis."""
    n = x.shape[axis]
    if not (0 <= start < stop <= n):
        raise DimensionError(f"slice [{start}:{stop}) out of bounds for axis {axis} of size {n}")
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = np.ascontiguousarray(x.data[idx])

    def vjp(g, mask=(True,)):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    return _record("slice", (x,), out, lambda: np.ascontiguousarray(x.data[idx]), vjp)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from None

    def vjp(g, mask=(True,)):
        return (g.reshape(x.shape),)

    return _record("reshape", (x,), out.copy(), lambda: x.data.reshape(shape).copy(), vjp)


def grad_check(fn, point: Tensor, h: float = 1e-4) -> float:
    """Compare the taped gradient of a scalar function to central differences.

    Returns max over coordinates of |ad - fd| / (|fd| + 1e-8).  The function
    must be deterministic; non-finite values raise NumericError.
    """
    x = Tensor(point.data, requires_grad=True)
    with Tape() as tape:
        out = fn(x)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ContractError("grad_check needs fn to return a scalar tensor")
    if not np.isfinite(out.data).all():
        raise NumericError("grad_check: fn returned a non-finite value")
    ad = backward(tape, out, wrt=[x])[x].data.reshape(-1)

    flat = point.data.reshape(-1)
    fd = np.empty_like(flat)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        hi = fn(Tensor(bumped.reshape(point.shape))).item()
        bumped[i] = flat[i] - h
        lo = fn(Tensor(bumped.reshape(point.shape))).item()
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError("grad_check: finite-difference probe hit a non-finite value")
        fd[i] = (hi - lo) / (2.0 * h)
    return float(np.max(np.abs(ad - fd) / (np.abs(fd) + 1e-8)))
