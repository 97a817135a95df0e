"""Heterogeneous porosity/permeability realizations and grid upscaling.

Porosity comes from a stationary Gaussian random field synthesized
spectrally: seeded white noise is shaped by the square root of the power
spectrum of a Gaussian correlation model (correlation e^-1 at one
correlation length), inverse-transformed, scaled to the target moments and
clamped. Log-permeability is tied to porosity by a linear trend plus white
residual noise and exponentiated, so permeability stays strictly positive.

Coarsening applies a per-axis Gaussian low-pass (sigma = factor/2,
truncated at 3 sigma, edges clamped) followed by linear interpolation onto
the coarse cell centers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
from scipy import ndimage

from ._blockio import CrcReader, CrcWriter, atomic_write, read_tensor, write_tensor
from .errors import DataError, MagicError, ShapeError, VersionError
from .tensor import Tensor

GEOMODEL_MAGIC = b"GEOM"
GEOMODEL_VERSION = 1


@dataclass(frozen=True)
class GeomodelSpec:
    grid_shape: tuple
    mean_porosity: float
    std_porosity: float
    corr_lengths: tuple  # (lx, ly, lz) in cells
    logk_slope: float  # ln(k_mD) = slope * porosity + intercept + noise
    logk_intercept: float
    logk_noise_std: float
    porosity_range: tuple  # clamp bounds, inside (0, 1)
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "grid_shape", tuple(int(n) for n in self.grid_shape))
        object.__setattr__(self, "corr_lengths", tuple(float(v) for v in self.corr_lengths))
        object.__setattr__(self, "porosity_range", tuple(float(v) for v in self.porosity_range))
        if len(self.grid_shape) != 3 or any(n < 1 for n in self.grid_shape):
            raise ShapeError(f"bad grid shape {self.grid_shape}")
        if any(l <= 0 for l in self.corr_lengths):
            raise DataError("correlation lengths must be positive")
        lo, hi = self.porosity_range
        if not (0.0 < lo < hi < 1.0):
            raise DataError(f"porosity clamp range {self.porosity_range} not inside (0, 1)")
        if self.std_porosity < 0:
            raise DataError("porosity std must be non-negative")

    def digest(self) -> str:
        text = "|".join(
            [
                "geomodel-spec-v1",
                ",".join(map(str, self.grid_shape)),
                repr(self.mean_porosity),
                repr(self.std_porosity),
                ",".join(map(repr, self.corr_lengths)),
                repr(self.logk_slope),
                repr(self.logk_intercept),
                repr(self.logk_noise_std),
                ",".join(map(repr, self.porosity_range)),
                str(self.seed),
            ]
        )
        return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class Geomodel:
    """Paired porosity and permeability (milliDarcy) fields."""

    porosity: Tensor
    permeability: Tensor
    spec_digest: str
    realization: int

    def __post_init__(self):
        if self.porosity.shape != self.permeability.shape:
            raise ShapeError(
                f"porosity {self.porosity.shape} vs permeability "
                f"{self.permeability.shape}"
            )
        if (self.permeability.numpy() <= 0).any():
            raise DataError("permeability must be strictly positive")

    @property
    def grid_shape(self):
        return self.porosity.shape


def _correlation_spectrum(shape, corr_lengths):
    # Gaussian correlation on the periodic grid via wrapped lags
    rho = np.ones(shape)
    for axis, (n, l) in enumerate(zip(shape, corr_lengths)):
        idx = np.arange(n)
        lag = np.minimum(idx, n - idx).astype(np.float64)
        shape_b = [1, 1, 1]
        shape_b[axis] = n
        rho = rho * np.exp(-((lag / l) ** 2)).reshape(shape_b)
    spectrum = sfft.fftn(rho).real
    return np.maximum(spectrum, 0.0)


def grf_generate(spec: GeomodelSpec, realization_id: int) -> Geomodel:
    """One realization; a pure function of (spec.seed, realization_id)."""
    rng = np.random.default_rng((spec.seed, int(realization_id)))
    shape = spec.grid_shape
    noise = rng.standard_normal(shape)
    spectrum = _correlation_spectrum(shape, spec.corr_lengths)
    field = sfft.ifftn(sfft.fftn(noise) * np.sqrt(spectrum)).real
    # white noise filtered by sqrt(S) has unit variance when sum(S) = N
    total = spectrum.sum()
    if total > 0:
        field = field / np.sqrt(total / field.size)
    porosity = np.clip(
        spec.mean_porosity + spec.std_porosity * field, *spec.porosity_range
    )
    logk = (
        spec.logk_slope * porosity
        + spec.logk_intercept
        + spec.logk_noise_std * rng.standard_normal(shape)
    )
    return Geomodel(
        porosity=Tensor(porosity, np.float64),
        permeability=Tensor(np.exp(logk), np.float64),
        spec_digest=spec.digest(),
        realization=int(realization_id),
    )


def _interp_axis(data: np.ndarray, factor: int, axis: int) -> np.ndarray:
    # linear interpolation at coarse cell centers: fine coord j*f + (f-1)/2
    n = data.shape[axis]
    coarse = n // factor
    pos = np.arange(coarse) * factor + (factor - 1) / 2.0
    lo = np.floor(pos).astype(int)
    frac = pos - lo
    hi = np.minimum(lo + 1, n - 1)
    moved = np.moveaxis(data, axis, 0)
    out = moved[lo] * (1.0 - frac).reshape((-1,) + (1,) * (moved.ndim - 1)) + moved[
        hi
    ] * frac.reshape((-1,) + (1,) * (moved.ndim - 1))
    return np.moveaxis(out, 0, axis)


def upscale(field: Tensor, factors) -> Tensor:
    """Gaussian low-pass then linear interpolation; factor 1 is an identity."""
    f = tuple(int(v) for v in factors)
    if len(f) != field.ndim:
        raise ShapeError(f"need {field.ndim} factors, got {len(f)}")
    if any(v < 1 for v in f):
        raise ShapeError(f"factors must be >= 1, got {f}")
    for axis, (n, v) in enumerate(zip(field.shape, f)):
        if n % v:
            raise ShapeError(f"axis {axis}: extent {n} not divisible by factor {v}")
    data = field.numpy().astype(np.float64)
    for axis, v in enumerate(f):
        if v == 1:
            continue
        data = ndimage.gaussian_filter1d(
            data, sigma=0.5 * v, axis=axis, mode="nearest", truncate=3.0
        )
        data = _interp_axis(data, v, axis)
    return Tensor(data, field.dtype)


def upscale_geomodel(gm: Geomodel, factors) -> Geomodel:
    """Coarsen a geomodel: porosity directly, permeability in log space."""
    coarse_k = np.exp(upscale(Tensor(np.log(gm.permeability.numpy()), np.float64), factors).numpy())
    return Geomodel(
        porosity=upscale(gm.porosity, factors),
        permeability=Tensor(coarse_k, np.float64),
        spec_digest=gm.spec_digest,
        realization=gm.realization,
    )


def write_geomodel(path, gm: Geomodel):
    with atomic_write(path) as f:
        w = CrcWriter(f)
        w.write(GEOMODEL_MAGIC)
        w.write_u32(GEOMODEL_VERSION)
        w.write_str(gm.spec_digest)
        w.write_u32(gm.realization)
        w.write_u32(0)  # reserved
        write_tensor(w, gm.porosity.numpy(), allowed_codes=(0, 1))
        write_tensor(w, gm.permeability.numpy(), allowed_codes=(0, 1))
        w.write_crc()


def read_geomodel(path) -> Geomodel:
    with open(path, "rb") as f:
        r = CrcReader(f)
        magic = r.read(4)
        if magic != GEOMODEL_MAGIC:
            raise MagicError(f"{path}: bad magic {magic!r}")
        version = r.read_u32()
        if version != GEOMODEL_VERSION:
            raise VersionError(f"{path}: unsupported geomodel version {version}")
        digest = r.read_str()
        realization = r.read_u32()
        r.read_u32()
        porosity = read_tensor(r)
        permeability = read_tensor(r)
        r.expect_crc()
    return Geomodel(
        porosity=Tensor._wrap(porosity),
        permeability=Tensor._wrap(permeability),
        spec_digest=digest,
        realization=realization,
    )
