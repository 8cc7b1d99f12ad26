"""Numerical integrators for the limiting objects of the scaling theory:
the fluctuating-selection diffusion, the coloured-noise SPDEs in one and
two dimensions, the tracer SPDE system, and the geometric constants that
calibrate them to the prelimit simulators.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from .core import (
    EnvironmentKernel,
    RngContract,
    SpatialDomain,
    as_contract,
    block_index_per_cell,
    kernel_covariance_matrix,
)
from .errors import ConfigError, KernelError, StateError

# ---------------------------------------------------------------------------
# Geometric constants
# ---------------------------------------------------------------------------


def v_r(radius: float, dimension: int) -> float:
    """Volume of a ball of the given radius (interval length / disc area)."""
    if radius <= 0:
        raise ConfigError(f"radius must be positive, got {radius}")
    if dimension == 1:
        return 2.0 * radius
    if dimension == 2:
        return np.pi * radius ** 2
    raise ConfigError(f"dimension must be 1 or 2, got {dimension}")


def gamma_r(radius: float, dimension: int, n_radial: int = 24, n_angular: int = 32) -> float:
    """Averaged second moment of overlapping balls:

        (1 / V_R) * int_{B(0,R)} int_{B(x,R)} z_1^2 dz dx,

    computed by deterministic nested quadrature (Gauss-Legendre radially,
    trapezoid in the angles, exact for the polynomial integrand well below
    a 1e-6 relative error).
    """
    if radius <= 0:
        raise ConfigError(f"radius must be positive, got {radius}")
    nodes, weights = np.polynomial.legendre.leggauss(n_radial)
    if dimension == 1:
        # outer variable x in (-R, R), inner z in (x-R, x+R)
        x = radius * nodes
        wx = radius * weights
        half = radius * (nodes + 1.0) / 2.0  # map to (0, 2R) offsets
        wz = radius * weights  # weight for inner interval of length 2R
        z = x[:, None] - radius + 2.0 * half[None, :]
        inner = np.sum(wz[None, :] * z ** 2, axis=1)
        return float(np.sum(wx * inner) / v_r(radius, 1))
    if dimension == 2:
        r = radius * (nodes + 1.0) / 2.0
        wr = radius * weights / 2.0
        ang = 2.0 * np.pi * np.arange(n_angular) / n_angular
        wa = 2.0 * np.pi / n_angular
        # z1 = r cos(phi) + rho cos(theta); integrate over both discs in polar
        rc = r[:, None] * np.cos(ang)[None, :]            # (r, phi)
        pc = r[:, None] * np.cos(ang)[None, :]            # (rho, theta)
        z1 = rc[:, :, None, None] + pc[None, None, :, :]  # (r, phi, rho, theta)
        jac = (r * wr)[:, None, None, None] * (r * wr)[None, None, :, None]
        total = np.sum(z1 ** 2 * jac) * wa * wa
        return float(total / v_r(radius, 2))
    raise ConfigError(f"dimension must be 1 or 2, got {dimension}")


# ---------------------------------------------------------------------------
# Limiting diffusion (non-spatial)
# ---------------------------------------------------------------------------


@dataclass
class ClampCounter:
    """Tracks how often an Euler step left [0,1] and was clamped back."""

    clamps: int = 0
    cell_steps: int = 0

    @property
    def frequency(self) -> float:
        return self.clamps / self.cell_steps if self.cell_steps else 0.0


@dataclass(frozen=True)
class DiffusionParams:
    """Coefficients of the limiting allele-frequency diffusion."""

    impact: float
    selection: float
    dt: float = 1e-3

    def __post_init__(self):
        # The limit coefficients are well-defined at impact 1, and the
        # scaling checks use exactly that value.
        if not 0 < self.impact <= 1:
            raise ConfigError(f"impact must be in (0,1], got {self.impact}")
        if self.selection < 0 or not np.isfinite(self.selection):
            raise ConfigError(f"selection must be finite and >= 0, got {self.selection}")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ConfigError(f"dt must be positive and finite, got {self.dt}")


def sde_step(p, params: DiffusionParams, z1, z2, clamp_counter: Optional[ClampCounter] = None):
    """One Euler-Maruyama step of the limiting diffusion

        dp = u^2 s^2 p(1-p)(1-2p) dt + u sqrt(p(1-p)) dB1
             + sqrt(2) u s p(1-p) dB2,

    clamped back into [0,1].  ``z1``/``z2`` are standard normal draws.
    """
    p = np.asarray(p, dtype=float)
    u, s, dt = params.impact, params.selection, params.dt
    pq = np.clip(p * (1.0 - p), 0.0, None)
    drift = u * u * s * s * pq * (1.0 - 2.0 * p)
    diff1 = u * np.sqrt(pq)
    diff2 = np.sqrt(2.0) * u * s * pq
    raw = p + drift * dt + np.sqrt(dt) * (diff1 * z1 + diff2 * z2)
    out = np.clip(raw, 0.0, 1.0)
    if clamp_counter is not None:
        clamp_counter.clamps += int(np.count_nonzero(raw != out))
        clamp_counter.cell_steps += raw.size
    return out if out.ndim else float(out)


def run_sde(
    params: DiffusionParams,
    p0: float,
    horizon: float,
    replicates: int,
    rng,
) -> tuple[np.ndarray, ClampCounter]:
    """Euler-Maruyama sample of p(horizon) across independent replicates."""
    if horizon <= 0:
        raise ConfigError(f"horizon must be positive, got {horizon}")
    if replicates < 1:
        raise ConfigError(f"replicates must be >= 1, got {replicates}")
    stream = as_contract(rng).stream("outcomes")
    n_steps = int(np.ceil(horizon / params.dt))
    # Land exactly on the horizon with a uniform step size.
    params = DiffusionParams(params.impact, params.selection, horizon / n_steps)
    p = np.full(replicates, float(p0))
    counter = ClampCounter()
    for _ in range(n_steps):
        z = stream.standard_normal((2, replicates))
        p = sde_step(p, params, z[0], z[1], counter)
    return p, counter


# ---------------------------------------------------------------------------
# Coloured-noise SPDE integrators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpdeParams:
    """Grid, coefficients, and derived constants of the limiting SPDE."""

    domain: SpatialDomain
    impact: float
    selection: float
    radius: float
    kernel: EnvironmentKernel
    dt: float
    include_white_noise: bool = False
    gamma_R: float = dc_field(init=False, default=0.0)
    v_R: float = dc_field(init=False, default=0.0)

    def __post_init__(self):
        if not 0 < self.impact <= 1:
            raise ConfigError(f"impact must be in (0,1], got {self.impact}")
        if self.selection < 0:
            raise ConfigError(f"selection must be >= 0, got {self.selection}")
        if self.radius <= 0:
            raise ConfigError(f"radius must be positive, got {self.radius}")
        if self.include_white_noise and self.domain.dimension != 1:
            raise ConfigError("the genetic-drift white noise exists only in d=1")
        if self.kernel.domain != self.domain:
            raise ConfigError("kernel was built for a different domain")
        object.__setattr__(self, "gamma_R", gamma_r(self.radius, self.domain.dimension))
        object.__setattr__(self, "v_R", v_r(self.radius, self.domain.dimension))
        bound = self.courant_bound()
        if not 0 < self.dt <= bound:
            raise ConfigError(
                f"dt={self.dt} violates the grid stability bound dt <= "
                f"h^2/(2 d u Gamma_R) = {bound:.3e}"
            )

    def courant_bound(self) -> float:
        d = self.domain.dimension
        return self.domain.h ** 2 / (2.0 * d * self.impact * self.gamma_R)


_NOISE_FACTOR_CACHE: dict = {}


def _noise_factor(params: SpdeParams):
    """(factor, block_map) with factor @ z ~ N(0, g) per draw.

    Block kernels factor exactly over blocks (any grid size); other kinds
    factor the dense per-cell covariance.
    """
    key = (params.kernel, params.domain)
    if key in _NOISE_FACTOR_CACHE:
        return _NOISE_FACTOR_CACHE[key]
    kernel = params.kernel
    if kernel.kind == "block":
        b = kernel.n_blocks
        cov = np.full((b, b), kernel.rho)
        np.fill_diagonal(cov, 1.0)
        block_map = block_index_per_cell(kernel).reshape(params.domain.grid_shape)
    else:
        cov = kernel_covariance_matrix(kernel)
        block_map = None
    vals, vecs = np.linalg.eigh(cov)
    if float(vals.min()) < -1e-8 * max(float(vals.max()), 1.0):
        raise KernelError(
            f"grid covariance is not positive semidefinite: eigenvalue {vals.min()}"
        )
    factor = vecs * np.sqrt(np.clip(vals, 0.0, None))
    _NOISE_FACTOR_CACHE[key] = (factor, block_map)
    return factor, block_map


def coloured_noise_increment(params: SpdeParams, stream: np.random.Generator) -> np.ndarray:
    """Mean-zero Gaussian field with Cov[dW_i, dW_j] = g(x_i, x_j) * dt."""
    factor, block_map = _noise_factor(params)
    z = stream.standard_normal(factor.shape[1])
    draw = (factor @ z) * np.sqrt(params.dt)
    if block_map is not None:
        return draw[block_map]
    return draw.reshape(params.domain.grid_shape)


def periodic_laplacian(w: np.ndarray, h: float) -> np.ndarray:
    """Standard 2d-point finite-difference Laplacian on the torus."""
    if w.ndim == 1:
        lap = np.roll(w, 1) + np.roll(w, -1) - 2.0 * w
    else:
        lap = (
            np.roll(w, 1, axis=0)
            + np.roll(w, -1, axis=0)
            + np.roll(w, 1, axis=1)
            + np.roll(w, -1, axis=1)
            - 4.0 * w
        )
    return lap / (h * h)


def spde_step(
    w: np.ndarray,
    params: SpdeParams,
    env_stream: np.random.Generator,
    drift_stream: Optional[np.random.Generator] = None,
    clamp_counter: Optional[ClampCounter] = None,
) -> np.ndarray:
    """One explicit Euler step of the limiting SPDE.

    Deterministic part: (u Gamma_R / 2) Lap w + u^2 V_R^2 s^2 w(1-w)(1-2w).
    Noise: sqrt(2) u V_R s w(1-w) dW with dW the coloured increment; in
    d=1 an optional genetic-drift term V_R u sqrt(w(1-w)/h) sqrt(dt) Z
    with independent per-cell standard normals Z.
    """
    u, s, dt = params.impact, params.selection, params.dt
    g, v = params.gamma_R, params.v_R
    pq = w * (1.0 - w)
    new = w + dt * (0.5 * u * g * periodic_laplacian(w, params.domain.h)
                    + u * u * v * v * s * s * pq * (1.0 - 2.0 * w))
    if s > 0:
        dw = coloured_noise_increment(params, env_stream)
        new = new + np.sqrt(2.0) * u * v * s * pq * dw
    if params.include_white_noise:
        if drift_stream is None:
            raise ConfigError("white-noise term enabled but no drift stream given")
        z = drift_stream.standard_normal(w.shape)
        amp = v * u * np.sqrt(np.clip(pq, 0.0, None) / params.domain.h)
        new = new + amp * np.sqrt(dt) * z
    out = np.clip(new, 0.0, 1.0)
    if clamp_counter is not None:
        clamp_counter.clamps += int(np.count_nonzero(new != out))
        clamp_counter.cell_steps += out.size
    return out


@dataclass
class TracerSpdeState:
    """Total frequency w and tracer frequency v on the grid, v <= w."""

    w: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.w.shape != self.v.shape:
            raise StateError("tracer and total fields must share a grid")
        if np.any(self.v > self.w + 1e-12) or np.any(self.v < -1e-12) or np.any(self.w > 1 + 1e-12):
            raise StateError("tracer state must satisfy 0 <= v <= w <= 1 cellwise")


def tracer_spde_step(
    state: TracerSpdeState,
    params: SpdeParams,
    env_stream: np.random.Generator,
    drift_stream: Optional[np.random.Generator] = None,
    clamp_counter: Optional[ClampCounter] = None,
) -> TracerSpdeState:
    """Advance the coupled (w, v) system one explicit Euler step.

    Both equations are driven by the same coloured increment; the d=1
    genetic-drift terms use three independent white fields, one of which
    is shared between the two equations.  The result is projected back
    onto {0 <= v <= w <= 1}.
    """
    w, v = state.w, state.v
    u, s, dt = params.impact, params.selection, params.dt
    g, vr = params.gamma_R, params.v_R
    h = params.domain.h
    one_w = 1.0 - w
    react = u * u * vr * vr * s * s * one_w * (1.0 - 2.0 * w)
    new_w = w + dt * (0.5 * u * g * periodic_laplacian(w, h) + react * w)
    new_v = v + dt * (0.5 * u * g * periodic_laplacian(v, h) + react * v)
    if s > 0:
        dw = coloured_noise_increment(params, env_stream)
        new_w = new_w + np.sqrt(2.0) * u * vr * s * (w * one_w) * dw
        new_v = new_v + np.sqrt(2.0) * u * vr * s * (v * one_w) * dw
    if params.include_white_noise:
        if drift_stream is None:
            raise ConfigError("white-noise terms enabled but no drift stream given")
        z0 = drift_stream.standard_normal(w.shape)
        z1 = drift_stream.standard_normal(w.shape)
        z2 = drift_stream.standard_normal(w.shape)
        scale = vr * u * np.sqrt(dt / h)
        a0 = np.sqrt(np.clip(v * one_w, 0.0, None))
        a1 = np.sqrt(np.clip((w - v) * one_w, 0.0, None))
        a2 = np.sqrt(np.clip(v * (w - v), 0.0, None))
        new_w = new_w + scale * (a0 * z0 + a1 * z1)
        new_v = new_v + scale * (a0 * z0 + a2 * z2)
    out_w = np.clip(new_w, 0.0, 1.0)
    out_v = np.clip(new_v, 0.0, out_w)
    if clamp_counter is not None:
        clamp_counter.clamps += int(
            np.count_nonzero(new_w != out_w) + np.count_nonzero(new_v != out_v)
        )
        clamp_counter.cell_steps += 2 * out_w.size
    return TracerSpdeState(out_w, out_v)


def run_spde(
    params: SpdeParams,
    w0: np.ndarray,
    horizon: float,
    record_dt: float,
    rng,
) -> tuple[np.ndarray, np.ndarray, ClampCounter]:
    """Integrate to the horizon, returning (times, snapshots, clamp stats)."""
    contract = as_contract(rng)
    env = contract.stream("environment")
    drift = contract.stream("outcomes")
    n_steps = int(np.ceil(horizon / params.dt))
    every = max(1, int(round(record_dt / params.dt)))
    w = np.asarray(w0, dtype=float).copy()
    if w.shape != params.domain.grid_shape:
        raise ConfigError(f"initial field shape {w.shape} != grid {params.domain.grid_shape}")
    counter = ClampCounter()
    times = [0.0]
    snaps = [w.copy()]
    for k in range(1, n_steps + 1):
        w = spde_step(w, params, env, drift, counter)
        if k % every == 0 or k == n_steps:
            times.append(k * params.dt)
            snaps.append(w.copy())
    return np.array(times), np.array(snaps), counter
