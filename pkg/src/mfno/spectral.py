"""Multi-dimensional DFT, mode truncation, and learnable spectral mixing.

Conventions (recorded in every checkpoint so files are self-describing):

* forward transform is unnormalized, the inverse carries the full 1/N;
* the innermost transformed axis uses a real-input transform and stores
  ``n//2 + 1`` Hermitian coefficients; the remaining axes are full complex;
* kept modes on a full-spectrum axis of extent ``n`` are the corner indices
  ``[0, K)`` and ``[n-K, n)``; on the Hermitian axis only ``[0, K)``.

Spatial data layout is channels-last: ``(..., nx, ny, nz, c)`` with the
Hermitian axis being ``nz``. Mixing weights are stored per retained mode as
``(c_in, c_out, 2*Kx, 2*Ky, Kz)`` where the first ``Kx`` (``Ky``) slots hold
the non-negative-frequency corner and the last ``Kx`` (``Ky``) the conjugate
corner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .errors import ShapeError
from .tensor import ComplexTensor, GradTape, Tensor

SPECTRAL_CONVENTION = "rfft-last-axis/unnormalized-forward/corner-modes-v1"


@dataclass(frozen=True)
class ModeSpec:
    """Kept mode counts (Kx, Ky, Kz); Kz applies to the Hermitian axis."""

    kept: tuple

    def __post_init__(self):
        k = tuple(int(v) for v in self.kept)
        if len(k) != 3 or any(v < 0 for v in k):
            raise ShapeError(f"mode spec needs three non-negative counts, got {self.kept}")
        object.__setattr__(self, "kept", k)

    def validate_extents(self, extents):
        """Each transformed axis of extent n must satisfy K <= n // 2."""
        if len(extents) != 3:
            raise ShapeError(f"expected three spatial extents, got {extents}")
        for axis, (k, n) in enumerate(zip(self.kept, extents)):
            if k > n // 2:
                raise ShapeError(
                    f"axis {axis}: {k} kept modes need extent >= {2 * k}, got {n}"
                )

    def weight_shape(self, c_in: int, c_out: int) -> tuple:
        kx, ky, kz = self.kept
        return (c_in, c_out, 2 * kx, 2 * ky, kz)


@dataclass(frozen=True)
class SpectralWeights:
    """Per-mode complex channel-mixing coefficients."""

    values: ComplexTensor

    def __post_init__(self):
        if self.values.ndim != 5:
            raise ShapeError(
                f"spectral weights must be rank 5 (c_in, c_out, 2Kx, 2Ky, Kz), "
                f"got shape {self.values.shape}"
            )

    @property
    def c_in(self):
        return self.values.shape[0]

    @property
    def c_out(self):
        return self.values.shape[1]


def _norm_axes(ndim, axes):
    ax = tuple(a % ndim for a in axes)
    if len(set(ax)) != len(ax) or not ax:
        raise ShapeError(f"invalid transform axes {axes}")
    return ax


def dft_forward(x: Tensor, axes, tape: GradTape | None = None) -> ComplexTensor:
    """Unnormalized forward DFT; real-input transform on the last given axis."""
    ax = _norm_axes(x.ndim, axes)
    for a in ax:
        if x.shape[a] < 1:
            raise ShapeError(f"axis {a} has extent {x.shape[a]}")
    n_last = x.shape[ax[-1]]
    out = ComplexTensor._wrap(sfft.rfftn(x.array, axes=ax))

    def vjp(g):
        # adjoint of the complex transforms: N-scaled inverse per axis
        gc = np.asarray(g)
        if len(ax) > 1:
            scale = 1.0
            for a in ax[:-1]:
                scale *= x.shape[a]
            gc = sfft.ifftn(gc, axes=ax[:-1]) * scale
        # adjoint of rfft: zero-extend the half spectrum, n-scaled inverse, Re
        a = ax[-1]
        m = gc.shape[a]
        pad = [(0, 0)] * gc.ndim
        pad[a] = (0, n_last - m)
        full = np.pad(gc, pad)
        gx = (sfft.ifft(full, axis=a) * n_last).real
        return (gx.astype(x.dtype, copy=False),)

    if tape is not None:
        tape.record(out, (x,), vjp)
    return out


def dft_inverse(
    X: ComplexTensor, axes, extents, tape: GradTape | None = None
) -> Tensor:
    """Inverse of :func:`dft_forward` with 1/N normalization.

    `extents` gives the original (real-space) extent of every transformed
    axis, in the same order as `axes`.
    """
    ax = _norm_axes(X.ndim, axes)
    ext = tuple(int(n) for n in extents)
    if len(ext) != len(ax):
        raise ShapeError(f"{len(ax)} axes but {len(ext)} extents")
    for a, n in zip(ax[:-1], ext[:-1]):
        if X.shape[a] != n:
            raise ShapeError(
                f"axis {a}: spectrum extent {X.shape[a]} inconsistent with "
                f"signal extent {n}"
            )
    n_last = ext[-1]
    m = n_last // 2 + 1
    if X.shape[ax[-1]] != m:
        raise ShapeError(
            f"Hermitian axis stores {X.shape[ax[-1]]} bins, expected "
            f"{m} for signal extent {n_last}"
        )
    out_arr = sfft.irfftn(X.array, s=ext, axes=ax)
    out = Tensor._wrap(out_arr)

    def vjp(g):
        a = ax[-1]
        t = sfft.fft(np.asarray(g, dtype=out_arr.dtype), axis=a)
        sl = [slice(None)] * t.ndim
        sl[a] = slice(0, m)
        t = np.ascontiguousarray(t[tuple(sl)]) / n_last
        # interior Hermitian bins contribute twice; self-conjugate bins once
        # and their imaginary parts are ignored by the inverse transform
        weights = np.full(m, 2.0)
        weights[0] = 1.0
        if n_last % 2 == 0:
            weights[-1] = 1.0
        shape = [1] * t.ndim
        shape[a] = m
        t *= weights.reshape(shape)
        idx0 = [slice(None)] * t.ndim
        idx0[a] = 0
        t[tuple(idx0)] = t[tuple(idx0)].real
        if n_last % 2 == 0:
            idxn = [slice(None)] * t.ndim
            idxn[a] = m - 1
            t[tuple(idxn)] = t[tuple(idxn)].real
        if len(ax) > 1:
            scale = 1.0
            for n in ext[:-1]:
                scale *= n
            t = sfft.fftn(t, axes=ax[:-1]) / scale
        return (t.astype(X.dtype, copy=False),)

    if tape is not None:
        tape.record(out, (X,), vjp)
    return out


def _corner_slices(k: int):
    return (slice(0, k), slice(-k, None))


def truncate_and_mix(
    X: ComplexTensor,
    spec: ModeSpec,
    weights: SpectralWeights,
    tape: GradTape | None = None,
) -> ComplexTensor:
    """Keep the low-frequency corner modes and mix channels per mode.

    `X` is a channels-last half-spectrum ``(..., nx, ny, mz, c_in)`` as
    produced by :func:`dft_forward` over the three spatial axes. Output
    modes outside the kept corners are zero.
    """
    if X.ndim < 4:
        raise ShapeError(f"expected (..., nx, ny, mz, c_in), got {X.shape}")
    kx, ky, kz = spec.kept
    nx, ny, mz, c_in = X.shape[-4:]
    if weights.c_in != c_in:
        raise ShapeError(
            f"spectrum carries {c_in} channels, weights expect {weights.c_in}"
        )
    if weights.values.shape[2:] != (2 * kx, 2 * ky, kz):
        raise ShapeError(
            f"weights shape {weights.values.shape} inconsistent with modes {spec.kept}"
        )
    if nx < 2 * kx or ny < 2 * ky or mz < kz + 1:
        raise ShapeError(
            f"spectrum extents ({nx}, {ny}, {mz}) too small for modes {spec.kept}"
        )
    c_out = weights.c_out
    lead = X.shape[:-4]
    xb = X.array.reshape((-1, nx, ny, mz, c_in))
    r = weights.values.array
    out = np.zeros(xb.shape[:-1] + (c_out,), dtype=X.dtype)
    corners = []
    for ix, sx in enumerate(_corner_slices(kx)):
        for iy, sy in enumerate(_corner_slices(ky)):
            rblk = r[
                :, :, ix * kx : (ix + 1) * kx, iy * ky : (iy + 1) * ky, :
            ]
            xblk = xb[:, sx, sy, :kz, :]
            out[:, sx, sy, :kz, :] = np.einsum("bxyzi,ioxyz->bxyzo", xblk, rblk)
            corners.append((sx, sy, rblk, xblk))
    result = ComplexTensor._wrap(out.reshape(lead + (nx, ny, mz, c_out)))

    def vjp(g):
        gb = np.asarray(g).reshape((-1, nx, ny, mz, c_out))
        gx = np.zeros_like(xb)
        gr = np.zeros_like(r)
        blocks = iter(corners)
        for ix, sx in enumerate(_corner_slices(kx)):
            for iy, sy in enumerate(_corner_slices(ky)):
                _, _, rblk, xblk = next(blocks)
                gblk = gb[:, sx, sy, :kz, :]
                gx[:, sx, sy, :kz, :] = np.einsum(
                    "bxyzo,ioxyz->bxyzi", gblk, rblk.conj()
                )
                gr[
                    :, :, ix * kx : (ix + 1) * kx, iy * ky : (iy + 1) * ky, :
                ] = np.einsum("bxyzo,bxyzi->ioxyz", gblk, xblk.conj())
        return gx.reshape(X.shape), gr

    if tape is not None:
        tape.record(result, (X, weights.values), vjp)
    return result


def trig_interpolate(x: Tensor, new_extents, axes=None) -> Tensor:
    """Evaluate the trigonometric interpolant of `x` on a finer grid.

    Zero-extends the spectrum axis by axis (splitting the Nyquist bin of
    even extents) so band-limited fields are reproduced exactly at the new
    sample points.
    """
    ax = _norm_axes(x.ndim, axes if axes is not None else range(len(new_extents)))
    new = tuple(int(n) for n in new_extents)
    if len(new) != len(ax):
        raise ShapeError(f"{len(ax)} axes but {len(new)} target extents")
    work = x.array.astype(
        np.complex128 if x.dtype == np.float64 else np.complex64
    )
    for a, n_new in zip(ax, new):
        n_old = work.shape[a]
        if n_new < n_old:
            raise ShapeError(
                f"axis {a}: target extent {n_new} below source {n_old}"
            )
        if n_new == n_old:
            continue
        f = sfft.fft(work, axis=a)
        shape = list(f.shape)
        shape[a] = n_new
        g = np.zeros(shape, dtype=f.dtype)
        idx_src = [slice(None)] * f.ndim
        idx_dst = [slice(None)] * f.ndim
        if n_old % 2 == 0:
            h = n_old // 2
            idx_src[a], idx_dst[a] = slice(0, h), slice(0, h)
            g[tuple(idx_dst)] = f[tuple(idx_src)]
            idx_src[a], idx_dst[a] = slice(h + 1, n_old), slice(n_new - h + 1, n_new)
            g[tuple(idx_dst)] = f[tuple(idx_src)]
            idx_src[a] = h
            for pos in (h, n_new - h):
                idx_dst[a] = pos
                g[tuple(idx_dst)] += 0.5 * f[tuple(idx_src)]
        else:
            h = (n_old - 1) // 2
            idx_src[a], idx_dst[a] = slice(0, h + 1), slice(0, h + 1)
            g[tuple(idx_dst)] = f[tuple(idx_src)]
            idx_src[a], idx_dst[a] = slice(n_old - h, n_old), slice(n_new - h, n_new)
            g[tuple(idx_dst)] = f[tuple(idx_src)]
        work = sfft.ifft(g, axis=a) * (n_new / n_old)
    return Tensor._wrap(np.ascontiguousarray(work.real, dtype=x.dtype))
