"""Naive O(n^2)-per-axis DFT oracles, independent of any FFT library.

DFT matrices are built from explicit exponentials and applied by plain
matrix products, one axis at a time.
"""

import numpy as np


def dft_matrix(n, inverse=False):
    j, k = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    sign = 2.0j if inverse else -2.0j
    m = np.exp(sign * np.pi * j * k / n)
    return m / n if inverse else m


def naive_dft(x, axes):
    """Unnormalized full-spectrum forward DFT over `axes`."""
    out = np.asarray(x, dtype=np.complex128)
    for a in axes:
        out = np.moveaxis(out, a, -1)
        out = out @ dft_matrix(out.shape[-1]).T
        out = np.moveaxis(out, -1, a)
    return out


def naive_idft(X, axes):
    """Inverse with 1/n normalization per axis."""
    out = np.asarray(X, dtype=np.complex128)
    for a in axes:
        out = np.moveaxis(out, a, -1)
        out = out @ dft_matrix(out.shape[-1], inverse=True).T
        out = np.moveaxis(out, -1, a)
    return out


def half_spectrum(X, axis):
    """Restrict a full spectrum to the n//2+1 Hermitian bins of one axis."""
    n = X.shape[axis]
    sl = [slice(None)] * X.ndim
    sl[axis] = slice(0, n // 2 + 1)
    return X[tuple(sl)]


def naive_mixed_spectrum(x, kept, weights):
    """Full-spectrum reference for truncate-and-mix on a real field.

    x: real (nx, ny, nz, c_in); weights: (c_in, c_out, 2Kx, 2Ky, Kz) with the
    corner layout used by the implementation. Returns the full mixed
    spectrum, Hermitian-completed so its naive inverse is real: bins with
    positive z frequency are mirrored conjugately, and the self-conjugate z
    planes (z = 0, and z = nz/2 when even) are symmetrized in (kx, ky).
    """
    kx, ky, kz = kept
    nx, ny, nz, c_in = x.shape
    c_out = weights.shape[1]
    X = naive_dft(x, axes=(0, 1, 2))
    Y = np.zeros((nx, ny, nz, c_out), dtype=np.complex128)
    xs = {0: list(range(kx)), 1: [(-i - 1) % nx for i in range(kx)][::-1]}
    ys = {0: list(range(ky)), 1: [(-i - 1) % ny for i in range(ky)][::-1]}
    for bx in (0, 1):
        for by in (0, 1):
            for ai, gx in enumerate(xs[bx]):
                for bi, gy in enumerate(ys[by]):
                    for gz in range(kz):
                        r = weights[:, :, bx * kx + ai, by * ky + bi, gz]
                        Y[gx, gy, gz] = X[gx, gy, gz] @ r
    # Hermitian completion in z
    for gz in range(1, nz):
        if gz < kz:
            continue
        src = (-gz) % nz
        if src < kz and src != 0:
            for gx in range(nx):
                for gy in range(ny):
                    Y[gx, gy, gz] = np.conj(Y[(-gx) % nx, (-gy) % ny, src])
    planes = [0] + ([nz // 2] if nz % 2 == 0 and nz // 2 < kz else [])
    for gz in planes:
        plane = Y[:, :, gz].copy()
        for gx in range(nx):
            for gy in range(ny):
                Y[gx, gy, gz] = 0.5 * (
                    plane[gx, gy] + np.conj(plane[(-gx) % nx, (-gy) % ny])
                )
    return Y
