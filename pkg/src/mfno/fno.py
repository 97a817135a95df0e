"""The Fourier neural operator: lift, spectral layers, projection.

One parameter set evaluates on any spatial grid whose padded extents
satisfy the kept-mode bound; no parameter shape depends on the grid. The
pipeline per call is

    concat 3 coordinate channels -> lift -> zero-pad spatial axes ->
    n_layers x [ gelu( W v + idft( mix( dft v ) ) ) ] -> de-pad -> project

with the activation omitted after the final spectral layer. Coordinate
channels are generated internally (per-axis linspace over [0, 1]) so data
files stay grid-pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .spectral import ModeSpec, SpectralWeights, dft_forward, dft_inverse, truncate_and_mix
from .tensor import ComplexTensor, GradTape, Tensor

N_COORD_CHANNELS = 3


@dataclass(frozen=True)
class FnoConfig:
    in_channels: int = 4
    width: int = 16
    n_layers: int = 4
    modes: tuple = (20, 20, 10)
    padding: int = 6
    out_channels: int = 1
    activation: str = "gelu"
    precision: str = "f32"

    def __post_init__(self):
        for name in ("in_channels", "width", "n_layers", "out_channels"):
            if getattr(self, name) < 1:
                raise ShapeError(f"{name} must be positive")
        if self.padding < 0:
            raise ShapeError("padding must be non-negative")
        if self.activation not in ("gelu", "identity"):
            raise ShapeError(f"unknown activation {self.activation!r}")
        if self.precision not in ("f32", "f64"):
            raise ShapeError(f"precision must be 'f32' or 'f64', got {self.precision!r}")
        object.__setattr__(self, "modes", tuple(int(m) for m in self.modes))
        ModeSpec(self.modes)

    @property
    def mode_spec(self) -> ModeSpec:
        return ModeSpec(self.modes)

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    @property
    def cdtype(self):
        return np.complex64 if self.precision == "f32" else np.complex128

    def to_kv(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "width": self.width,
            "n_layers": self.n_layers,
            "modes": ",".join(str(m) for m in self.modes),
            "padding": self.padding,
            "out_channels": self.out_channels,
            "activation": self.activation,
            "precision": self.precision,
        }

    @classmethod
    def from_kv(cls, kv: dict) -> "FnoConfig":
        return cls(
            in_channels=int(kv["in_channels"]),
            width=int(kv["width"]),
            n_layers=int(kv["n_layers"]),
            modes=tuple(int(m) for m in kv["modes"].split(",")),
            padding=int(kv["padding"]),
            out_channels=int(kv["out_channels"]),
            activation=kv["activation"],
            precision=kv["precision"],
        )


@dataclass(frozen=True)
class LayerParams:
    spectral: SpectralWeights
    linear_w: Tensor
    linear_b: Tensor


@dataclass(frozen=True)
class FnoParams:
    """All learnable weights; shapes are independent of grid extents."""

    lift_w: Tensor
    lift_b: Tensor
    layers: tuple
    proj_w: Tensor
    proj_b: Tensor

    def named_arrays(self):
        """Ordered (name, ndarray) pairs; the checkpoint tensor order."""
        items = [("lift.weight", self.lift_w.array), ("lift.bias", self.lift_b.array)]
        for i, layer in enumerate(self.layers):
            items.append((f"layer{i}.spectral", layer.spectral.values.array))
            items.append((f"layer{i}.linear.weight", layer.linear_w.array))
            items.append((f"layer{i}.linear.bias", layer.linear_b.array))
        items.append(("project.weight", self.proj_w.array))
        items.append(("project.bias", self.proj_b.array))
        return items

    def named_tensors(self):
        items = [("lift.weight", self.lift_w), ("lift.bias", self.lift_b)]
        for i, layer in enumerate(self.layers):
            items.append((f"layer{i}.spectral", layer.spectral.values))
            items.append((f"layer{i}.linear.weight", layer.linear_w))
            items.append((f"layer{i}.linear.bias", layer.linear_b))
        items.append(("project.weight", self.proj_w))
        items.append(("project.bias", self.proj_b))
        return items

    @classmethod
    def from_arrays(cls, arrays: dict) -> "FnoParams":
        """Rebuild from a name->ndarray mapping (inverse of named_arrays)."""
        n_layers = 0
        while f"layer{n_layers}.spectral" in arrays:
            n_layers += 1
        layers = tuple(
            LayerParams(
                spectral=SpectralWeights(
                    ComplexTensor._wrap(arrays[f"layer{i}.spectral"])
                ),
                linear_w=Tensor._wrap(arrays[f"layer{i}.linear.weight"]),
                linear_b=Tensor._wrap(arrays[f"layer{i}.linear.bias"]),
            )
            for i in range(n_layers)
        )
        return cls(
            lift_w=Tensor._wrap(arrays["lift.weight"]),
            lift_b=Tensor._wrap(arrays["lift.bias"]),
            layers=layers,
            proj_w=Tensor._wrap(arrays["project.weight"]),
            proj_b=Tensor._wrap(arrays["project.bias"]),
        )

    def replace_arrays(self, updates: dict) -> "FnoParams":
        arrays = dict(self.named_arrays())
        arrays.update(updates)
        return FnoParams.from_arrays(arrays)


def init_params(config: FnoConfig, seed: int) -> FnoParams:
    """Deterministic initialization.

    Spectral coefficients are drawn uniformly on the complex disc of radius
    1/(c_in*c_out); linear weights uniformly in +-1/sqrt(fan_in); biases
    start at zero.
    """
    rng = np.random.default_rng(seed)
    dt, cdt = config.dtype, config.cdtype

    def linear(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        return Tensor._wrap(w.astype(dt)), Tensor._wrap(np.zeros(fan_out, dtype=dt))

    def disc(shape, radius):
        r = radius * np.sqrt(rng.uniform(0.0, 1.0, size=shape))
        theta = rng.uniform(0.0, 2.0 * np.pi, size=shape)
        return ComplexTensor._wrap((r * np.exp(1j * theta)).astype(cdt))

    lift_w, lift_b = linear(config.in_channels + N_COORD_CHANNELS, config.width)
    radius = 1.0 / (config.width * config.width)
    wshape = config.mode_spec.weight_shape(config.width, config.width)
    layers = []
    for _ in range(config.n_layers):
        spectral = SpectralWeights(disc(wshape, radius))
        lw, lb = linear(config.width, config.width)
        layers.append(LayerParams(spectral=spectral, linear_w=lw, linear_b=lb))
    proj_w, proj_b = linear(config.width, config.out_channels)
    return FnoParams(
        lift_w=lift_w,
        lift_b=lift_b,
        layers=tuple(layers),
        proj_w=proj_w,
        proj_b=proj_b,
    )


def zero_params(config: FnoConfig) -> FnoParams:
    params = init_params(config, seed=0)
    return params.replace_arrays(
        {name: np.zeros_like(arr) for name, arr in params.named_arrays()}
    )


@lru_cache(maxsize=16)
def _coordinate_grid(spatial_shape: tuple, dtype_name: str) -> np.ndarray:
    dt = np.dtype(dtype_name)
    axes = [
        np.linspace(0.0, 1.0, n, dtype=dt) if n > 1 else np.zeros(n, dtype=dt)
        for n in spatial_shape
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.ascontiguousarray(np.stack(mesh, axis=-1))


def coordinate_channels(spatial_shape, dtype) -> Tensor:
    """Normalized per-axis coordinates, shape (nx, ny, nz, 3)."""
    return Tensor._wrap(
        _coordinate_grid(tuple(int(n) for n in spatial_shape), np.dtype(dtype).name).copy()
    )


def _check_grid(config: FnoConfig, spatial_shape):
    padded = tuple(n + 2 * config.padding for n in spatial_shape)
    kept = config.modes
    for axis, (k, n) in enumerate(zip(kept, padded)):
        if k > n // 2:
            need = 2 * k - 2 * config.padding
            raise ShapeError(
                f"axis {axis}: {k} kept modes require padded extent >= {2 * k} "
                f"(grid extent >= {max(need, 1)}), got padded {n}"
            )
    return padded


def forward(
    params: FnoParams,
    x: Tensor,
    config: FnoConfig,
    tape: GradTape | None = None,
    shape_trace: list | None = None,
) -> Tensor:
    """Evaluate the operator on one sample (rank 4) or a batch (rank 5)."""
    if x.ndim == 4:
        batched = False
    elif x.ndim == 5:
        batched = True
    else:
        raise ShapeError(f"expected (nx,ny,nz,c) or (b,nx,ny,nz,c), got {x.shape}")
    spatial = x.shape[1:4] if batched else x.shape[0:3]
    if x.shape[-1] != config.in_channels:
        raise ShapeError(
            f"input has {x.shape[-1]} channels, config expects {config.in_channels}"
        )
    _check_grid(config, spatial)

    def trace(stage, t):
        if shape_trace is not None:
            shape = t.shape[1:] if batched else t.shape
            shape_trace.append((stage, tuple(shape)))

    coords = coordinate_channels(spatial, x.dtype)
    if batched:
        coords = Tensor._wrap(
            np.broadcast_to(coords.array, (x.shape[0],) + coords.shape).copy()
        )
    trace("input", x)
    v = T.concat_channels(x, coords, tape)
    v = T.channel_linear(v, params.lift_w, params.lift_b, tape)
    trace("lift", v)
    pads = (0,) * (x.ndim - 4) + (config.padding,) * 3
    spatial_axes = tuple(range(x.ndim - 4, x.ndim - 1))
    padded_extents = tuple(n + 2 * config.padding for n in spatial)
    if config.padding:
        v = T.pad_spatial(v, pads, tape)
    trace("pad", v)
    spec = config.mode_spec
    use_gelu = config.activation == "gelu"
    for i, layer in enumerate(params.layers):
        spectrum = dft_forward(v, spatial_axes, tape)
        mixed = truncate_and_mix(spectrum, spec, layer.spectral, tape)
        conv = dft_inverse(mixed, spatial_axes, padded_extents, tape)
        lin = T.channel_linear(v, layer.linear_w, layer.linear_b, tape)
        v = T.elementwise_add(lin, conv, tape)
        if use_gelu and i < len(params.layers) - 1:
            v = T.gelu(v, tape)
        trace(f"fourier{i + 1}", v)
    if config.padding:
        v = T.crop_spatial(v, pads, tape)
    trace("depad", v)
    out = T.channel_linear(v, params.proj_w, params.proj_b, tape)
    trace("project", out)
    return out


def backward(
    params: FnoParams,
    x: Tensor,
    config: FnoConfig,
    upstream,
    trainable=None,
):
    """Reverse-mode gradients of `sum(upstream * forward)` for every parameter.

    Returns (param_grads, input_grad). `trainable` restricts which parameter
    names appear in the result; excluded names are absent, not zero-filled.
    """
    tape = GradTape()
    out = forward(params, x, config, tape=tape)
    named = params.named_tensors()
    if trainable is not None:
        named = [(n, t) for n, t in named if n in trainable]
    wrt = [t for _, t in named] + [x]
    grads = tape.gradients(out, upstream, wrt)
    param_grads = {}
    for (name, tens), g in zip(named, grads[:-1]):
        param_grads[name] = (
            g if g is not None else np.zeros_like(tens.array)
        )
    return param_grads, grads[-1]
