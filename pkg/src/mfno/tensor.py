"""Dense arrays and a reverse-mode gradient tape.

Every differentiable operation in the package is built from the small set
of primitives defined here plus the spectral primitives in
:mod:`mfno.spectral`. Each primitive knows its own vector-Jacobian product,
so a single finite-difference harness certifies all gradients.

Tensors are immutable: the wrapped numpy buffer is marked read-only and
operations always allocate fresh outputs. Training runs in float32 by
default; verification paths use float64.
"""

from __future__ import annotations

import numpy as np
from scipy import special

from .errors import ShapeError

_REAL = (np.dtype(np.float32), np.dtype(np.float64))
_COMPLEX = (np.dtype(np.complex64), np.dtype(np.complex128))

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class Tensor:
    """Immutable dense real array (32- or 64-bit floats)."""

    __slots__ = ("array",)

    def __init__(self, data, dtype=None):
        arr = np.array(data, dtype=dtype, order="C")
        if arr.dtype not in _REAL:
            arr = arr.astype(np.float32)
        self.array = _freeze(arr)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # takes ownership of a freshly computed C-contiguous array, no copy
        obj = object.__new__(cls)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        obj.array = _freeze(arr)
        return obj

    @property
    def shape(self):
        return self.array.shape

    @property
    def ndim(self):
        return self.array.ndim

    @property
    def size(self):
        return self.array.size

    @property
    def dtype(self):
        return self.array.dtype

    def numpy(self) -> np.ndarray:
        """Read-only view of the underlying buffer."""
        return self.array

    def astype(self, dtype) -> "Tensor":
        return Tensor._wrap(self.array.astype(dtype))

    def item(self) -> float:
        return float(self.array.item())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.array.dtype})"


class ComplexTensor:
    """Immutable dense complex array (pairs of 32- or 64-bit floats)."""

    __slots__ = ("array",)

    def __init__(self, data, dtype=None):
        arr = np.array(data, dtype=dtype, order="C")
        if arr.dtype not in _COMPLEX:
            arr = arr.astype(np.complex64)
        self.array = _freeze(arr)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "ComplexTensor":
        obj = object.__new__(cls)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        obj.array = _freeze(arr)
        return obj

    @property
    def shape(self):
        return self.array.shape

    @property
    def ndim(self):
        return self.array.ndim

    @property
    def size(self):
        return self.array.size

    @property
    def dtype(self):
        return self.array.dtype

    def numpy(self) -> np.ndarray:
        return self.array

    def __repr__(self):
        return f"ComplexTensor(shape={self.shape}, dtype={self.array.dtype})"


def as_tensor(data, dtype=None) -> Tensor:
    if isinstance(data, Tensor):
        return data if dtype is None or data.dtype == dtype else data.astype(dtype)
    return Tensor(data, dtype=dtype)


class GradTape:
    """Ordered record of primitive operations for one reverse pass.

    A tape belongs to a single logical training step. Replaying it backward
    visits operations in exact reverse order of the forward pass.

    Gradients for complex tensors are stored as ``d/d(real) + i * d/d(imag)``,
    i.e. the two real components are differentiated independently.
    """

    def __init__(self):
        self._entries = []

    def __len__(self):
        return len(self._entries)

    def record(self, output, inputs, vjp):
        """Append one primitive: `vjp(upstream)` returns per-input gradients."""
        self._entries.append((output, tuple(inputs), vjp))

    def gradients(self, output, seed, wrt):
        """Vector-Jacobian products of `output` against each tensor in `wrt`.

        `seed` is the upstream gradient for `output` (same shape). Returns a
        list aligned with `wrt`; entries are numpy arrays, or None for
        tensors the recorded computation never touched.
        """
        seed_arr = np.asarray(seed.array if isinstance(seed, Tensor) else seed)
        if seed_arr.shape != output.shape:
            raise ShapeError(
                f"seed shape {seed_arr.shape} does not match output {output.shape}"
            )
        acc = {id(output): seed_arr.astype(output.dtype, copy=False)}
        for out, inputs, vjp in reversed(self._entries):
            upstream = acc.get(id(out))
            if upstream is None:
                continue
            for tensor, grad in zip(inputs, vjp(upstream)):
                if grad is None:
                    continue
                key = id(tensor)
                existing = acc.get(key)
                acc[key] = grad if existing is None else existing + grad
        return [acc.get(id(t)) for t in wrt]


def _record(tape, output, inputs, vjp):
    if tape is not None:
        tape.record(output, inputs, vjp)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def elementwise_add(a: Tensor, b: Tensor, tape: GradTape | None = None) -> Tensor:
    """out[i] = a[i] + b[i]; gradient passes the upstream to both inputs."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch in add: {a.shape} vs {b.shape}")
    out = Tensor._wrap(a.array + b.array)
    _record(tape, out, (a, b), lambda g: (g, g))
    return out


def elementwise_sub(a: Tensor, b: Tensor, tape: GradTape | None = None) -> Tensor:
    """out[i] = a[i] - b[i]."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch in sub: {a.shape} vs {b.shape}")
    out = Tensor._wrap(a.array - b.array)
    _record(tape, out, (a, b), lambda g: (g, -g))
    return out


def scale(x: Tensor, factor, tape: GradTape | None = None) -> Tensor:
    """Multiply by a constant scalar or broadcastable constant array."""
    f = np.asarray(factor, dtype=x.dtype)
    try:
        out_arr = x.array * f
    except ValueError as exc:
        raise ShapeError(f"scale factor not broadcastable: {exc}") from exc
    if out_arr.shape != x.shape:
        raise ShapeError(
            f"scale factor {f.shape} broadcasts {x.shape} to {out_arr.shape}"
        )
    out = Tensor._wrap(out_arr)
    _record(tape, out, (x,), lambda g: (g * f,))
    return out


def channel_linear(
    x: Tensor, weight: Tensor, bias: Tensor, tape: GradTape | None = None
) -> Tensor:
    """Affine map over the last axis, applied independently at every location.

    x[..., c_in] @ weight[c_in, c_out] + bias[c_out].
    """
    c_in = x.shape[-1] if x.ndim else 0
    if weight.ndim != 2 or weight.shape[0] != c_in:
        raise ShapeError(
            f"channel mismatch: input has {c_in} channels, weight is {weight.shape}"
        )
    c_out = weight.shape[1]
    if bias.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.shape} != ({c_out},)")
    lead = x.shape[:-1]
    flat = x.array.reshape(-1, c_in)
    out_arr = flat @ weight.array + bias.array
    out = Tensor._wrap(out_arr.reshape(lead + (c_out,)))

    def vjp(g):
        g2 = g.reshape(-1, c_out)
        gx = (g2 @ weight.array.T).reshape(x.shape)
        gw = flat.T @ g2
        gb = g2.sum(axis=0)
        return gx, gw, gb

    _record(tape, out, (x, weight, bias), vjp)
    return out


def gelu(x: Tensor, tape: GradTape | None = None) -> Tensor:
    """x * Phi(x) with Phi the standard normal CDF (exact erf form)."""
    cdf = special.ndtr(x.array)
    out = Tensor._wrap(x.array * cdf)

    def vjp(g):
        pdf = np.exp(-0.5 * x.array * x.array) * x.dtype.type(_INV_SQRT2PI)
        return (g * (cdf + x.array * pdf),)

    _record(tape, out, (x,), vjp)
    return out


def _check_pads(ndim, pad_per_axis):
    pads = tuple(int(p) for p in pad_per_axis)
    if len(pads) != ndim - 1:
        raise ShapeError(
            f"need {ndim - 1} pad values for a rank-{ndim} tensor "
            "(every axis except the channel axis), got "
            f"{len(pads)}"
        )
    if any(p < 0 for p in pads):
        raise ShapeError(f"negative pad in {pads}")
    return pads


def pad_spatial(x: Tensor, pad_per_axis, tape: GradTape | None = None) -> Tensor:
    """Zero-pad both sides of each non-channel axis; channel axis untouched."""
    pads = _check_pads(x.ndim, pad_per_axis)
    width = [(p, p) for p in pads] + [(0, 0)]
    out = Tensor._wrap(np.pad(x.array, width))
    if tape is not None:
        inner = tuple(slice(p, p + n) for p, n in zip(pads, x.shape)) + (
            slice(None),
        )
        tape.record(out, (x,), lambda g: (np.ascontiguousarray(g[inner]),))
    return out


def crop_spatial(x: Tensor, pad_per_axis, tape: GradTape | None = None) -> Tensor:
    """Inverse of pad_spatial: strip `pad` cells from both sides per axis."""
    pads = _check_pads(x.ndim, pad_per_axis)
    for p, n in zip(pads, x.shape):
        if n - 2 * p <= 0:
            raise ShapeError(f"cannot crop {p} from both sides of extent {n}")
    inner = tuple(slice(p, n - p) for p, n in zip(pads, x.shape)) + (slice(None),)
    out = Tensor._wrap(x.array[inner])
    if tape is not None:
        width = [(p, p) for p in pads] + [(0, 0)]
        tape.record(out, (x,), lambda g: (np.pad(g, width),))
    return out


def concat_channels(a: Tensor, b: Tensor, tape: GradTape | None = None) -> Tensor:
    """Concatenate along the last (channel) axis."""
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(
            f"leading shapes differ in concat: {a.shape} vs {b.shape}"
        )
    out = Tensor._wrap(np.concatenate([a.array, b.array], axis=-1))
    na = a.shape[-1]

    def vjp(g):
        return np.ascontiguousarray(g[..., :na]), np.ascontiguousarray(g[..., na:])

    _record(tape, out, (a, b), vjp)
    return out


def lp_norm(x: Tensor, p: float, axes=None, tape: GradTape | None = None) -> Tensor:
    """(sum |x|^p)^(1/p) over `axes` (all axes when None).

    The gradient is defined away from x == 0; at a zero vector the
    subgradient 0 is returned.
    """
    p = float(p)
    if p < 1.0:
        raise ShapeError(f"p must be >= 1, got {p}")
    ax = None if axes is None else tuple(int(a) for a in axes)
    absx = np.abs(x.array)
    if p == 2.0:
        norm = np.sqrt(np.sum(x.array * x.array, axis=ax))
    elif p == 1.0:
        norm = np.sum(absx, axis=ax)
    else:
        norm = np.sum(absx**p, axis=ax) ** (1.0 / p)
    out = Tensor._wrap(np.asarray(norm, dtype=x.dtype))

    def vjp(g):
        safe = np.where(norm == 0.0, 1.0, norm)
        if ax is None:
            gb = np.asarray(g, dtype=x.dtype)
            nb = safe
        else:
            gb = np.expand_dims(np.asarray(g, dtype=x.dtype), ax)
            nb = np.expand_dims(safe, ax)
        if p == 2.0:
            grad = gb * x.array / nb
        elif p == 1.0:
            grad = gb * np.sign(x.array)
        else:
            grad = gb * np.sign(x.array) * absx ** (p - 1.0) / nb ** (p - 1.0)
        if ax is None:
            grad = np.where(norm == 0.0, 0.0, grad)
        else:
            grad = np.where(np.expand_dims(norm == 0.0, ax), 0.0, grad)
        return (grad.astype(x.dtype, copy=False),)

    _record(tape, out, (x,), vjp)
    return out


def mean_all(x: Tensor, tape: GradTape | None = None) -> Tensor:
    """Mean over every element, returning a scalar tensor."""
    out = Tensor._wrap(np.asarray(x.array.mean(), dtype=x.dtype))
    inv = 1.0 / x.size

    def vjp(g):
        return (np.broadcast_to(np.asarray(g, dtype=x.dtype) * x.dtype.type(inv), x.shape).copy(),)

    _record(tape, out, (x,), vjp)
    return out
