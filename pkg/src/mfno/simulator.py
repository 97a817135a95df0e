"""Desk-scale finite-volume two-phase flow (IMPES).

Immiscible, slightly compressible model: incompressible fluids, rock
compressibility only, zero capillary pressure. Pressure is solved
implicitly on a 7-point stencil (face transmissibility = harmonic mean of
cell permeability times face geometry, phase mobilities upwinded), then
the injected-phase saturation advances explicitly with first-order upwind
fluxes under a CFL bound. Injection wells couple through Peaceman indices
and switch from rate control to pressure control when a bottomhole
pressure cap binds.

Units are SI throughout (Pa, m, s); permeability fields are milliDarcy and
converted on mesh construction. Depth increases downward.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import CflError, ConvergenceError, DataError, NumericError, ShapeError
from .geomodel import Geomodel
from .tensor import Tensor

MILLIDARCY_TO_M2 = 9.869233e-16
SECONDS_PER_YEAR = 365.25 * 86400.0
SECONDS_PER_DAY = 86400.0

FACES = ("x-", "x+", "y-", "y+", "z-", "z+")


@dataclass(frozen=True)
class WellSpec:
    """Vertical injector completed over a contiguous layer range."""

    name: str
    column: tuple  # (i, j)
    layers: tuple  # (k_first, k_last) inclusive
    rate: float  # target injection rate, m^3/s (injected phase)
    bhp_cap: float | None = None  # Pa; None = unconstrained
    radius: float = 0.1  # wellbore radius, m

    def __post_init__(self):
        if self.rate < 0:
            raise DataError(f"well {self.name}: negative rate")
        if self.layers[0] > self.layers[1]:
            raise DataError(f"well {self.name}: empty layer range {self.layers}")


@dataclass(frozen=True)
class ReservoirConfig:
    geomodel: Geomodel
    cell_size: tuple  # (dx, dy, dz) in meters
    viscosity_water: float = 5.0e-4
    viscosity_gas: float = 5.0e-5
    density_water: float = 1000.0
    density_gas: float = 700.0
    corey_exp_water: float = 2.0
    corey_exp_gas: float = 2.0
    residual_water: float = 0.1
    residual_gas: float = 0.05
    rock_compressibility: float = 4.64e-9  # 1/Pa
    gravity: bool = False
    gravity_accel: float = 9.81
    initial_pressure: float = 1.5e7  # Pa at datum depth
    datum_depth: float = 1500.0  # depth of the top-layer cell centers, m
    pressure_faces: tuple = ()  # faces held at boundary_pressure
    boundary_pressure: float | None = None
    report_times: tuple = tuple(float(t) for t in range(1, 11))  # years
    dt_initial_days: float = 1.0
    dt_max_days: float = 30.0
    dt_growth: float = 1.25
    dt_floor_days: float = 1e-4
    cfl_number: float = 0.4
    cg_tol: float = 1e-8
    cg_max_iter: int = 20000

    def __post_init__(self):
        if self.viscosity_water <= 0 or self.viscosity_gas <= 0:
            raise DataError("viscosities must be positive")
        if self.density_water <= 0 or self.density_gas <= 0:
            raise DataError("densities must be positive")
        if not (0.0 <= self.residual_water + self.residual_gas < 1.0):
            raise DataError("residual saturations must satisfy 0 <= Swr + Sgr < 1")
        if self.corey_exp_water < 1 or self.corey_exp_gas < 1:
            raise DataError("relative-permeability exponents must be >= 1")
        if self.rock_compressibility < 0:
            raise DataError("rock compressibility must be non-negative")
        for f in self.pressure_faces:
            if f not in FACES:
                raise DataError(f"unknown boundary face {f!r}")
        if any(t <= 0 for t in self.report_times):
            raise DataError("report times must be positive")
        object.__setattr__(self, "report_times", tuple(sorted(self.report_times)))
        object.__setattr__(self, "pressure_faces", tuple(self.pressure_faces))
        object.__setattr__(self, "cell_size", tuple(float(v) for v in self.cell_size))

    @property
    def grid_shape(self):
        return self.geomodel.grid_shape


@dataclass
class SimState:
    pressure: np.ndarray  # Pa, (nx, ny, nz)
    saturation: np.ndarray  # injected-phase saturation in [0, 1]
    cumulative: dict  # well name -> injected volume, m^3
    time: float = 0.0  # seconds


@dataclass(frozen=True)
class Snapshot:
    year: float
    pressure: Tensor
    saturation: Tensor


@dataclass
class RunSummary:
    well_names: tuple
    report_years: tuple
    cumulative: dict  # name -> list of m^3 at each report time
    bhp: dict  # name -> list of Pa at each report time
    shortfall: dict  # name -> m^3 of missed target volume
    total_steps: int = 0
    rejected_steps: int = 0
    clamped_volume: float = 0.0
    injected_volume: float = 0.0
    wall_seconds: float = 0.0


@dataclass
class SimResult:
    snapshots: list
    summary: RunSummary


def brooks_corey_relperm(s_g, config: ReservoirConfig):
    """Power-law relative permeabilities in effective saturation."""
    s = np.asarray(s_g)
    if (s < -1e-12).any() or (s > 1 + 1e-12).any():
        raise DataError("saturation outside [0, 1]")
    denom = 1.0 - config.residual_water - config.residual_gas
    se = np.clip((s - config.residual_gas) / denom, 0.0, 1.0)
    return (1.0 - se) ** config.corey_exp_water, se**config.corey_exp_gas


class _Mesh:
    """Precomputed geometry: volumes, face transmissibilities, depths."""

    def __init__(self, config: ReservoirConfig):
        nx, ny, nz = config.grid_shape
        dx, dy, dz = config.cell_size
        self.shape = (nx, ny, nz)
        self.n = nx * ny * nz
        self.cell_volume = dx * dy * dz
        k = config.geomodel.permeability.numpy() * MILLIDARCY_TO_M2
        self.perm = k
        self.porosity = config.geomodel.porosity.numpy()
        # face transmissibility: (area / distance) * harmonic mean of k
        geo = (dy * dz / dx, dx * dz / dy, dx * dy / dz)
        self.face_t = []
        for axis, g in enumerate(geo):
            a = _left(k, axis)
            b = _right(k, axis)
            self.face_t.append(g * 2.0 * a * b / (a + b))
        # half-cell transmissibility toward each boundary face
        self.boundary_t = {}
        for face in config.pressure_faces:
            axis = "xyz".index(face[0])
            sl = [slice(None)] * 3
            sl[axis] = 0 if face[1] == "-" else -1
            self.boundary_t[face] = (axis, tuple(sl), 2.0 * geo[axis] * k[tuple(sl)])
        self.depth = (
            config.datum_depth
            + (np.arange(nz) + 0.0) * dz
        ) * np.ones((nx, ny, 1))
        strides = (ny * nz, nz, 1)
        self.strides = strides
        idx = np.arange(self.n).reshape(self.shape)
        self.flat_index = idx


def _left(arr, axis):
    sl = [slice(None)] * arr.ndim
    sl[axis] = slice(None, -1)
    return arr[tuple(sl)]


def _right(arr, axis):
    sl = [slice(None)] * arr.ndim
    sl[axis] = slice(1, None)
    return arr[tuple(sl)]


class _Completions:
    """Per-well completed cells with Peaceman well indices."""

    def __init__(self, config: ReservoirConfig, wells):
        nx, ny, nz = config.grid_shape
        dx, dy, dz = config.cell_size
        self.wells = tuple(wells)
        self.cells = {}
        self.windex = {}
        names = set()
        for w in wells:
            if w.name in names:
                raise DataError(f"duplicate well name {w.name}")
            names.add(w.name)
            i, j = w.column
            k0, k1 = w.layers
            if not (0 <= i < nx and 0 <= j < ny and 0 <= k0 <= k1 < nz):
                raise DataError(f"well {w.name} completion outside grid")
            ks = np.arange(k0, k1 + 1)
            perm = config.geomodel.permeability.numpy()[i, j, ks] * MILLIDARCY_TO_M2
            r_eq = 0.2 * dx
            wi = 2.0 * np.pi * perm * dz / np.log(r_eq / w.radius)
            if (wi <= 0).any():
                raise DataError(f"well {w.name}: non-positive well index")
            self.cells[w.name] = np.array(
                [(i * ny + j) * nz + k for k in ks], dtype=np.int64
            )
            self.windex[w.name] = wi


@dataclass
class _FaceData:
    """Per-axis face coefficients shared by pressure and transport steps."""

    t_lambda_w: list
    t_lambda_g: list
    t_lambda_t: list


def _phase_mobilities(state, config):
    krw, krg = brooks_corey_relperm(state, config)
    return krw / config.viscosity_water, krg / config.viscosity_gas


def _upwind_faces(pressure, saturation, mesh, config):
    """Face mobilities, each phase upwinded by its own potential."""
    lam_w, lam_g = _phase_mobilities(saturation, config)
    g = config.gravity_accel if config.gravity else 0.0
    out_w, out_g, out_t = [], [], []
    for axis in range(3):
        pl, pr = _left(pressure, axis), _right(pressure, axis)
        if g and axis == 2:
            zl, zr = _left(mesh.depth, axis), _right(mesh.depth, axis)
            dzf = zl - zr
        else:
            dzf = 0.0
        lw = np.where(
            (pl - pr) - config.density_water * g * dzf >= 0.0,
            _left(lam_w, axis),
            _right(lam_w, axis),
        )
        lg = np.where(
            (pl - pr) - config.density_gas * g * dzf >= 0.0,
            _left(lam_g, axis),
            _right(lam_g, axis),
        )
        t = mesh.face_t[axis]
        out_w.append(t * lw)
        out_g.append(t * lg)
        out_t.append(t * (lw + lg))
    return _FaceData(out_w, out_g, out_t)


@dataclass
class PressureSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    diag: np.ndarray
    faces: _FaceData
    well_rates: dict  # name -> per-completion fixed rates (rate mode), m^3/s
    bhp_coeff: dict  # name -> per-completion WI*lambda_t (bhp mode)


def assemble_pressure_system(
    state: SimState,
    config: ReservoirConfig,
    wells,
    dt: float,
    mesh: _Mesh | None = None,
    completions: _Completions | None = None,
    well_modes: dict | None = None,
) -> PressureSystem:
    """Implicit total-volume pressure equation for one step of length dt."""
    mesh = mesh or _Mesh(config)
    completions = completions or _Completions(config, wells)
    well_modes = well_modes or {}
    n = mesh.n
    p_old = state.pressure
    faces = _upwind_faces(p_old, state.saturation, mesh, config)
    if not all(np.isfinite(f).all() for f in faces.t_lambda_t):
        bad = [
            int(np.argwhere(~np.isfinite(f))[0][0])
            for f in faces.t_lambda_t
            if not np.isfinite(f).all()
        ]
        raise NumericError(f"non-finite face coefficient near cell {bad[0]}")

    diag = np.zeros(n)
    rhs = np.zeros(n)
    acc = (
        mesh.porosity * mesh.cell_volume * config.rock_compressibility / dt
    ).ravel()
    diag += acc
    rhs += acc * p_old.ravel()

    rows, cols, vals = [], [], []
    g = config.gravity_accel if config.gravity else 0.0
    for axis in range(3):
        c = faces.t_lambda_t[axis].ravel()
        left_ids = _left(mesh.flat_index, axis).ravel()
        right_ids = _right(mesh.flat_index, axis).ravel()
        np.add.at(diag, left_ids, c)
        np.add.at(diag, right_ids, c)
        rows.append(left_ids)
        cols.append(right_ids)
        vals.append(-c)
        rows.append(right_ids)
        cols.append(left_ids)
        vals.append(-c)
        if g and axis == 2:
            dzf = (_left(mesh.depth, axis) - _right(mesh.depth, axis)).ravel()
            grav = (
                faces.t_lambda_w[axis].ravel() * config.density_water
                + faces.t_lambda_g[axis].ravel() * config.density_gas
            ) * g * dzf
            np.add.at(rhs, left_ids, grav)
            np.add.at(rhs, right_ids, -grav)

    p_bdry = (
        config.boundary_pressure
        if config.boundary_pressure is not None
        else config.initial_pressure
    )
    lam_w, lam_g = _phase_mobilities(state.saturation, config)
    lam_t = lam_w + lam_g
    for face, (axis, sl, t_half) in mesh.boundary_t.items():
        ids = mesh.flat_index[sl].ravel()
        coeff = (t_half * lam_t[sl]).ravel()
        np.add.at(diag, ids, coeff)
        np.add.at(rhs, ids, coeff * p_bdry)

    well_rates = {}
    bhp_coeff = {}
    for w in completions.wells:
        ids = completions.cells[w.name]
        wi = completions.windex[w.name]
        mode = well_modes.get(w.name, "rate")
        if mode == "rate":
            frac = wi / wi.sum()
            q = w.rate * frac
            np.add.at(rhs, ids, q)
            well_rates[w.name] = q
        else:
            lam_cells = lam_t.ravel()[ids]
            coeff = wi * lam_cells
            np.add.at(diag, ids, coeff)
            np.add.at(rhs, ids, coeff * w.bhp_cap)
            bhp_coeff[w.name] = coeff

    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    return PressureSystem(
        matrix=matrix,
        rhs=rhs,
        diag=diag,
        faces=faces,
        well_rates=well_rates,
        bhp_coeff=bhp_coeff,
    )


def solve_pressure(system, rhs=None, x0=None, tol=1e-8, max_iter=None):
    """Jacobi-preconditioned conjugate gradients to relative residual < tol."""
    if isinstance(system, PressureSystem):
        a, b = system.matrix, system.rhs if rhs is None else rhs
        diag = system.diag
    else:
        a, b = system, rhs
        diag = a.diagonal()
    if (diag <= 0).any():
        raise NumericError("non-positive diagonal in pressure system")
    n = b.shape[0]
    max_iter = max_iter or max(200, 10 * n)
    x = np.zeros_like(b) if x0 is None else x0.astype(np.float64).copy()
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return x * 0.0
    r = b - a @ x
    inv_d = 1.0 / diag
    z = r * inv_d
    p = z.copy()
    rz = r @ z
    history = []
    for _ in range(max_iter):
        res = np.linalg.norm(r) / b_norm
        history.append(res)
        if res < tol:
            return x
        ap = a @ p
        denom = p @ ap
        if denom <= 0:
            raise ConvergenceError(
                "conjugate gradients lost positive definiteness", history
            )
        alpha = rz / denom
        x += alpha * p
        r -= alpha * ap
        z = r * inv_d
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = np.linalg.norm(b - a @ x) / b_norm
    history.append(res)
    if res < tol:
        return x
    raise ConvergenceError(
        f"no convergence in {max_iter} iterations (residual {res:.3e}); "
        f"history tail {['%.2e' % h for h in history[-5:]]}",
        history,
    )


def _face_fluxes(pressure, faces, mesh, config):
    """Signed phase fluxes per face, positive toward increasing index."""
    g = config.gravity_accel if config.gravity else 0.0
    flux_w, flux_g = [], []
    for axis in range(3):
        dp = _left(pressure, axis) - _right(pressure, axis)
        if g and axis == 2:
            dzf = _left(mesh.depth, axis) - _right(mesh.depth, axis)
            fw = faces.t_lambda_w[axis] * (dp - config.density_water * g * dzf)
            fg = faces.t_lambda_g[axis] * (dp - config.density_gas * g * dzf)
        else:
            fw = faces.t_lambda_w[axis] * dp
            fg = faces.t_lambda_g[axis] * dp
        flux_w.append(fw)
        flux_g.append(fg)
    return flux_w, flux_g


def _divergence(flux, axis, shape):
    div = np.zeros(shape)
    sl_lo = [slice(None)] * 3
    sl_hi = [slice(None)] * 3
    sl_lo[axis] = slice(None, -1)
    sl_hi[axis] = slice(1, None)
    div[tuple(sl_lo)] += flux
    div[tuple(sl_hi)] -= flux
    return div


def advance_saturation(
    state: SimState,
    pressure: np.ndarray,
    config: ReservoirConfig,
    wells,
    dt: float,
    system: PressureSystem,
    mesh: _Mesh,
    completions: _Completions,
):
    """Explicit upwind transport of the injected phase.

    Returns (new_saturation, per-well injected volumes, clamped volume).
    Raises CflError when dt exceeds the stable bound computed from the
    fresh fluxes.
    """
    shape = mesh.shape
    flux_w, flux_g = _face_fluxes(pressure, system.faces, mesh, config)
    div_g = np.zeros(shape)
    out_total = np.zeros(shape)
    for axis in range(3):
        div_g += _divergence(flux_g[axis], axis, shape)
        ft = flux_w[axis] + flux_g[axis]
        pos, neg = np.maximum(ft, 0.0), np.maximum(-ft, 0.0)
        sl_lo = [slice(None)] * 3
        sl_hi = [slice(None)] * 3
        sl_lo[axis] = slice(None, -1)
        sl_hi[axis] = slice(1, None)
        out_total[tuple(sl_lo)] += pos
        out_total[tuple(sl_hi)] += neg

    lam_w, lam_g = _phase_mobilities(state.saturation, config)
    p_bdry = (
        config.boundary_pressure
        if config.boundary_pressure is not None
        else config.initial_pressure
    )
    for face, (axis, sl, t_half) in mesh.boundary_t.items():
        dp = pressure[sl] - p_bdry
        outflow = np.maximum(dp, 0.0)
        div_g[sl] += t_half * lam_g[sl] * outflow
        out_total[sl] += t_half * (lam_w[sl] + lam_g[sl]) * np.abs(dp)

    q_g = np.zeros(shape)
    injected = {}
    for w in completions.wells:
        ids = completions.cells[w.name]
        if w.name in system.well_rates:
            q = system.well_rates[w.name]
        else:
            q = system.bhp_coeff[w.name] * (w.bhp_cap - pressure.ravel()[ids])
        np.add.at(q_g.ravel(), ids, q)
        injected[w.name] = float(q.sum()) * dt

    pv_old = mesh.porosity * mesh.cell_volume * (
        1.0 + config.rock_compressibility * (state.pressure - config.initial_pressure)
    )
    pv_new = mesh.porosity * mesh.cell_volume * (
        1.0 + config.rock_compressibility * (pressure - config.initial_pressure)
    )

    inflow = out_total + q_g  # conservative stability measure
    with np.errstate(divide="ignore"):
        limits = config.cfl_number * pv_old / np.maximum(inflow, 1e-300)
    dt_limit = float(limits.min())
    if dt > dt_limit:
        raise CflError(
            f"dt {dt:.4g}s exceeds CFL bound {dt_limit:.4g}s", dt_limit
        )

    s_new = (pv_old * state.saturation + dt * (q_g - div_g)) / pv_new
    clamped = np.clip(s_new, 0.0, 1.0)
    clamp_volume = float((np.abs(s_new - clamped) * pv_new).sum())
    return clamped, injected, clamp_volume


def run_simulation(config: ReservoirConfig, wells, log=None) -> SimResult:
    """IMPES time loop with adaptive step ramping and BHP-cap switching."""
    t_start = _time.perf_counter()
    mesh = _Mesh(config)
    completions = _Completions(config, wells)
    nx, ny, nz = mesh.shape

    p0 = np.full(mesh.shape, config.initial_pressure, dtype=np.float64)
    if config.gravity:
        p0 += (
            config.density_water
            * config.gravity_accel
            * (mesh.depth - config.datum_depth)
        )
    state = SimState(
        pressure=p0,
        saturation=np.zeros(mesh.shape),
        cumulative={w.name: 0.0 for w in wells},
        time=0.0,
    )

    report_seconds = [t * SECONDS_PER_YEAR for t in config.report_times]
    t_end = report_seconds[-1]
    dt = config.dt_initial_days * SECONDS_PER_DAY
    dt_max = config.dt_max_days * SECONDS_PER_DAY
    dt_floor = config.dt_floor_days * SECONDS_PER_DAY

    summary = RunSummary(
        well_names=tuple(w.name for w in wells),
        report_years=tuple(config.report_times),
        cumulative={w.name: [] for w in wells},
        bhp={w.name: [] for w in wells},
        shortfall={w.name: 0.0 for w in wells},
    )
    snapshots = []
    next_report = 0
    modes = {w.name: "rate" for w in wells}
    last_bhp = {w.name: config.initial_pressure for w in wells}

    while next_report < len(report_seconds):
        target = report_seconds[next_report]
        dt_try = min(dt, dt_max, target - state.time)
        while True:
            if dt_try < dt_floor:
                raise NumericError(
                    f"step size {dt_try / SECONDS_PER_DAY:.3e} days fell below "
                    f"the floor after {summary.rejected_steps} rejections"
                )
            try:
                pressure, system, modes, bhp_now = _pressure_step(
                    state, config, wells, dt_try, mesh, completions, modes
                )
                s_new, injected, clamp_volume = advance_saturation(
                    state, pressure, config, wells, dt_try, system, mesh, completions
                )
                break
            except CflError as err:
                summary.rejected_steps += 1
                dt_try = min(dt_try * 0.5, err.dt_limit)
        if not np.isfinite(pressure).all() or not np.isfinite(s_new).all():
            raise NumericError(
                f"non-finite state at t = {state.time / SECONDS_PER_YEAR:.3f} years"
            )
        state.pressure = pressure
        state.saturation = s_new
        state.time += dt_try
        for name, vol in injected.items():
            state.cumulative[name] += vol
            summary.injected_volume += vol
            target_vol = next(w.rate for w in wells if w.name == name) * dt_try
            if vol < target_vol:
                summary.shortfall[name] += target_vol - vol
        summary.clamped_volume += clamp_volume
        summary.total_steps += 1
        last_bhp = bhp_now
        dt = min(dt_try * config.dt_growth, dt_max)
        if log is not None and summary.total_steps % 50 == 0:
            log(
                f"t={state.time / SECONDS_PER_YEAR:8.3f}y steps={summary.total_steps}"
            )
        if abs(state.time - target) < 1e-6 * SECONDS_PER_YEAR:
            snapshots.append(
                Snapshot(
                    year=config.report_times[next_report],
                    pressure=Tensor(state.pressure, np.float64),
                    saturation=Tensor(state.saturation, np.float64),
                )
            )
            for w in wells:
                summary.cumulative[w.name].append(state.cumulative[w.name])
                summary.bhp[w.name].append(last_bhp[w.name])
            next_report += 1

    summary.wall_seconds = _time.perf_counter() - t_start
    return SimResult(snapshots=snapshots, summary=summary)


def _pressure_step(state, config, wells, dt, mesh, completions, modes):
    """Solve pressure, switching rate wells to BHP control where caps bind."""
    modes = dict(modes)
    for _ in range(2 * len(wells) + 1 if wells else 1):
        system = assemble_pressure_system(
            state, config, wells, dt, mesh, completions, modes
        )
        pressure = solve_pressure(
            system, x0=state.pressure.ravel(), tol=config.cg_tol,
            max_iter=config.cg_max_iter,
        ).reshape(mesh.shape)
        lam_w, lam_g = _phase_mobilities(state.saturation, config)
        lam_cells = (lam_w + lam_g).ravel()
        bhp = {}
        switched = False
        for w in wells:
            ids = completions.cells[w.name]
            wi_lam = completions.windex[w.name] * lam_cells[ids]
            p_cells = pressure.ravel()[ids]
            if modes[w.name] == "rate":
                p_bh = (w.rate + (wi_lam * p_cells).sum()) / wi_lam.sum()
                bhp[w.name] = p_bh
                if w.bhp_cap is not None and p_bh > w.bhp_cap:
                    modes[w.name] = "bhp"
                    switched = True
            else:
                bhp[w.name] = w.bhp_cap
                actual = (wi_lam * (w.bhp_cap - p_cells)).sum()
                if actual > w.rate:
                    modes[w.name] = "rate"
                    switched = True
        if not switched:
            return pressure, system, modes, bhp
    raise NumericError("well control modes failed to settle")
