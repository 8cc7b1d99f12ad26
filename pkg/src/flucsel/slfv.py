"""Grid-based event-driven simulator of the spatial Lambda-Fleming-Viot
process with fluctuating selection, its tracer extension, and the
rescaled family converging to the coloured-noise SPDEs.

The state is a density on a periodic grid: a cell is affected by an
event when its centre lies in the event ball, parents resolve to the
cell containing a uniform draw from the ball, and event centres live on
the continuous torus to avoid lattice artefacts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .core import EnvironmentField, EnvironmentKernel, SpatialDomain, as_contract, sample_environment
from .errors import ConfigError, StateError


@dataclass(frozen=True)
class SlfvParams:
    """Event geometry and rates of the (unscaled or level-n) process."""

    domain: SpatialDomain
    radius: float
    impact: float
    selection: float
    kernel: EnvironmentKernel
    env_rate: float
    rate_per_volume: float = 1.0

    def __post_init__(self):
        if self.radius < 2 * self.domain.h:
            raise ConfigError(
                f"event radius {self.radius} must cover multiple cells (>= 2h = "
                f"{2 * self.domain.h})"
            )
        if 2.0 * self.radius >= self.domain.length:
            raise ConfigError("event ball must not wrap onto itself: need 2R < L")
        if not 0 < self.impact < 1:
            raise ConfigError(f"impact must be in (0,1), got {self.impact}")
        if not 0 <= self.selection <= 1:
            raise ConfigError(f"selection must be in [0,1], got {self.selection}")
        if self.env_rate < 0:
            raise ConfigError(f"environment rate must be >= 0, got {self.env_rate}")
        if self.rate_per_volume <= 0:
            raise ConfigError(f"event rate must be positive, got {self.rate_per_volume}")
        if self.kernel.domain != self.domain:
            raise ConfigError("environment kernel built for a different domain")

    @property
    def total_reproduction_rate(self) -> float:
        return self.rate_per_volume * self.domain.length ** self.domain.dimension


@dataclass(frozen=True)
class EventRecord:
    """One Poisson reproduction event."""

    t: float
    centre: np.ndarray
    radius: float
    impact: float
    kind: str  # "neutral" | "selective"


@dataclass
class SlfvState:
    """Frequency field w, optional tracer v <= w, environment, and time."""

    w: np.ndarray
    env: EnvironmentField
    v: Optional[np.ndarray] = None
    t: float = 0.0

    def __post_init__(self):
        self.w = np.ascontiguousarray(self.w, dtype=float)
        if np.any(self.w < 0) or np.any(self.w > 1):
            raise StateError("frequency field must lie in [0,1] cellwise")
        if self.v is not None:
            self.v = np.ascontiguousarray(self.v, dtype=float)
            if self.v.shape != self.w.shape:
                raise StateError("tracer field must share the grid with w")
            if np.any(self.v < 0) or np.any(self.v > self.w + 1e-12):
                raise StateError("tracer must satisfy 0 <= v <= w cellwise")
        if self.env.values.shape != self.w.shape:
            raise StateError("environment field must share the grid with w")

    def copy(self) -> "SlfvState":
        return SlfvState(
            self.w.copy(),
            EnvironmentField(self.env.values.copy(), self.env.epoch),
            None if self.v is None else self.v.copy(),
            self.t,
        )


# ---------------------------------------------------------------------------
# Compiled single-event application (shared by the ops and the batch runner)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _wrap(pos, length):
    out = pos % length
    if out < 0.0:
        out += length
    if out >= length:
        out -= length
    return out


@njit(cache=True)
def _cell_index(pos, h, k):
    i = int(pos // h)
    if i >= k:
        i = k - 1
    if i < 0:
        i = 0
    return i


@njit(cache=True)
def _parent_type(u, pw, pv, tracer):
    """0 = A, 1 = unmarked a, 2 = marked a.  A single uniform realises the
    trichotomy, so marked|a has probability v/w (0 when w = 0)."""
    if tracer:
        if u < pv:
            return 2
        if u < pw:
            return 1
        return 0
    return 1 if u < pw else 0


@njit(cache=True)
def _offspring_indicators(selective, zeta, k0, k1):
    """(ind_w, ind_v) for the offspring type given parental types."""
    if not selective:
        return (1 if k0 >= 1 else 0), (1 if k0 == 2 else 0)
    if zeta == 1:
        ind_w = 1 if (k0 >= 1 and k1 >= 1) else 0
        ind_v = 1 if (k0 == 2 and k1 >= 1) else 0
    else:
        ind_w = 0 if (k0 == 0 and k1 == 0) else 1
        ind_v = 1 if (k0 == 2 or (k0 == 0 and k1 == 2)) else 0
    return ind_w, ind_v


@njit(cache=True)
def _apply_event_1d(w, v, tracer, env, h, length, radius, impact,
                    selective, xc, lu0, lu1, tu0, tu1):
    k = w.shape[0]
    # parent 0
    p0 = _wrap(xc + (2.0 * lu0 - 1.0) * radius, length)
    c0 = _cell_index(p0, h, k)
    k0 = _parent_type(tu0, w[c0], v[c0], tracer)
    k1 = 0
    if selective:
        p1 = _wrap(xc + (2.0 * lu1 - 1.0) * radius, length)
        c1 = _cell_index(p1, h, k)
        k1 = _parent_type(tu1, w[c1], v[c1], tracer)
    zeta = env[_cell_index(_wrap(xc, length), h, k)]
    ind_w, ind_v = _offspring_indicators(selective, zeta, k0, k1)
    m = int(radius / h) + 2
    base = _cell_index(_wrap(xc, length), h, k)
    keep = 1.0 - impact
    for off in range(-m, m + 1):
        idx = (base + off) % k
        centre = (idx + 0.5) * h
        d = abs(centre - xc)
        if d > 0.5 * length:
            d = length - d
        if d <= radius:
            w[idx] = keep * w[idx] + impact * ind_w
            if tracer:
                v[idx] = keep * v[idx] + impact * ind_v


@njit(cache=True)
def _apply_event_2d(w, v, tracer, env, h, length, radius, impact,
                    selective, xc, yc, lu0a, lu0b, lu1a, lu1b, tu0, tu1):
    k = w.shape[0]
    r0 = radius * np.sqrt(lu0a)
    a0 = 2.0 * np.pi * lu0b
    px = _wrap(xc + r0 * np.cos(a0), length)
    py = _wrap(yc + r0 * np.sin(a0), length)
    c0x, c0y = _cell_index(px, h, k), _cell_index(py, h, k)
    k0 = _parent_type(tu0, w[c0x, c0y], v[c0x, c0y], tracer)
    k1 = 0
    if selective:
        r1 = radius * np.sqrt(lu1a)
        a1 = 2.0 * np.pi * lu1b
        qx = _wrap(xc + r1 * np.cos(a1), length)
        qy = _wrap(yc + r1 * np.sin(a1), length)
        c1x, c1y = _cell_index(qx, h, k), _cell_index(qy, h, k)
        k1 = _parent_type(tu1, w[c1x, c1y], v[c1x, c1y], tracer)
    bx = _cell_index(_wrap(xc, length), h, k)
    by = _cell_index(_wrap(yc, length), h, k)
    zeta = env[bx, by]
    ind_w, ind_v = _offspring_indicators(selective, zeta, k0, k1)
    m = int(radius / h) + 2
    keep = 1.0 - impact
    r2 = radius * radius
    for ox in range(-m, m + 1):
        ix = (bx + ox) % k
        cx = (ix + 0.5) * h
        dx = abs(cx - xc)
        if dx > 0.5 * length:
            dx = length - dx
        if dx > radius:
            continue
        for oy in range(-m, m + 1):
            iy = (by + oy) % k
            cy = (iy + 0.5) * h
            dy = abs(cy - yc)
            if dy > 0.5 * length:
                dy = length - dy
            if dx * dx + dy * dy <= r2:
                w[ix, iy] = keep * w[ix, iy] + impact * ind_w
                if tracer:
                    v[ix, iy] = keep * v[ix, iy] + impact * ind_v


@njit(cache=True)
def _apply_batch_1d(w, v, tracer, env, h, length, radius, impact,
                    selective, centres, loc_u, type_u, start, stop):
    for e in range(start, stop):
        _apply_event_1d(
            w, v, tracer, env, h, length, radius, impact,
            selective[e], centres[e, 0],
            loc_u[e, 0], loc_u[e, 1], type_u[e, 0], type_u[e, 1],
        )


@njit(cache=True)
def _apply_batch_2d(w, v, tracer, env, h, length, radius, impact,
                    selective, centres, loc_u, type_u, start, stop):
    for e in range(start, stop):
        _apply_event_2d(
            w, v, tracer, env, h, length, radius, impact,
            selective[e], centres[e, 0], centres[e, 1],
            loc_u[e, 0], loc_u[e, 1], loc_u[e, 2], loc_u[e, 3],
            type_u[e, 0], type_u[e, 1],
        )


def _apply_single(state: SlfvState, ev: EventRecord, params: SlfvParams,
                  draw: np.random.Generator) -> SlfvState:
    new = state.copy()
    d = params.domain.dimension
    tracer = new.v is not None
    v = new.v if tracer else np.zeros_like(new.w)
    selective = ev.kind == "selective"
    if d == 1:
        lu = draw.random(2)
        tu = draw.random(2)
        _apply_event_1d(
            new.w, v, tracer, new.env.values,
            params.domain.h, params.domain.length, ev.radius, ev.impact,
            selective, float(ev.centre[0]), lu[0], lu[1], tu[0], tu[1],
        )
    else:
        lu = draw.random(4)
        tu = draw.random(2)
        _apply_event_2d(
            new.w, v, tracer, new.env.values,
            params.domain.h, params.domain.length, ev.radius, ev.impact,
            selective, float(ev.centre[0]), float(ev.centre[1]),
            lu[0], lu[1], lu[2], lu[3], tu[0], tu[1],
        )
    new.t = ev.t
    return new


def apply_neutral_event(state: SlfvState, ev: EventRecord, params: SlfvParams,
                        draw: np.random.Generator) -> SlfvState:
    """One neutral event: a single uniform parent in the ball donates its
    type (and tracer mark) to a proportion ``impact`` of every affected
    cell."""
    if ev.kind != "neutral":
        raise ConfigError(f"expected a neutral event, got kind {ev.kind!r}")
    return _apply_single(state, ev, params, draw)


def apply_selective_event(state: SlfvState, ev: EventRecord, params: SlfvParams,
                          draw: np.random.Generator) -> SlfvState:
    """One selective event: two uniform potential parents; the offspring
    type depends on the environment sign at the event centre."""
    if ev.kind != "selective":
        raise ConfigError(f"expected a selective event, got kind {ev.kind!r}")
    return _apply_single(state, ev, params, draw)


# ---------------------------------------------------------------------------
# Trajectory runner
# ---------------------------------------------------------------------------


@dataclass
class SlfvRun:
    """Snapshots, event log, and final state of one trajectory."""

    times: np.ndarray
    w: np.ndarray
    v: Optional[np.ndarray]
    event_times: np.ndarray
    event_centres: np.ndarray
    event_selective: np.ndarray
    radius: float
    impact: float
    final: SlfvState

    def event_records(self) -> list:
        return [
            EventRecord(
                float(t), c.copy(), self.radius, self.impact,
                "selective" if s else "neutral",
            )
            for t, c, s in zip(self.event_times, self.event_centres, self.event_selective)
        ]


def _draw_schedule(params: SlfvParams, horizon: float, ev: np.random.Generator):
    """Event times for the race between the reproduction and environment
    clocks, plus centres and kinds for the reproduction events.  All
    draws come from the events stream, so two runs differing only in
    kernel parameters consume identical event sequences."""
    total = params.total_reproduction_rate + params.env_rate
    gaps = []
    acc = 0.0
    chunk = max(64, int(total * horizon * 1.2) + 64)
    while acc <= horizon:
        block = ev.standard_exponential(chunk) / total
        gaps.append(block)
        acc += float(block.sum())
    times = np.cumsum(np.concatenate(gaps))
    times = times[times <= horizon]
    n = times.size
    is_rep = ev.random(n) < params.total_reproduction_rate / total
    n_rep = int(np.count_nonzero(is_rep))
    d = params.domain.dimension
    centres = ev.random((n_rep, d)) * params.domain.length
    selective = ev.random(n_rep) < params.selection
    return times, is_rep, centres, selective


def run_slfv(
    params: SlfvParams,
    initial: SlfvState,
    horizon: float,
    record_dt: float,
    rng,
) -> SlfvRun:
    """Simulate one trajectory: events as a marked Poisson process (total
    reproduction rate = rate_per_volume * L^d, neutral/selective split
    1-s : s, centres uniform on the torus) raced against the environment
    clock; fields are snapshotted at multiples of ``record_dt``."""
    if horizon <= 0 or record_dt <= 0:
        raise ConfigError("horizon and record_dt must be positive")
    if initial.w.shape != params.domain.grid_shape:
        raise ConfigError(
            f"initial field shape {initial.w.shape} != grid {params.domain.grid_shape}"
        )
    contract = as_contract(rng)
    ev = contract.stream("events")
    out = contract.stream("outcomes")
    env_stream = contract.stream("environment")

    times, is_rep, centres, selective = _draw_schedule(params, horizon, ev)
    n_rep = centres.shape[0]
    d = params.domain.dimension
    loc_u = out.random((n_rep, 2 * d))
    type_u = out.random((n_rep, 2))

    state = initial.copy()
    tracer = state.v is not None
    v = state.v if tracer else np.zeros_like(state.w)
    batch = _apply_batch_1d if d == 1 else _apply_batch_2d

    ticks = list(np.arange(0.0, horizon + 0.5 * record_dt, record_dt))
    if not np.isclose(ticks[-1], horizon):
        ticks.append(horizon)
    rep_times = times[is_rep]
    env_times = times[~is_rep]

    # Boundaries: (time, kind) with kind 0 = snapshot, 1 = env resample.
    bounds = [(t, 0) for t in ticks] + [(t, 1) for t in env_times]
    bounds.sort()
    snap_t, snap_w, snap_v = [], [], []
    cursor = 0
    epoch = state.env.epoch
    for b_time, b_kind in bounds:
        upto = int(np.searchsorted(rep_times, b_time, side="left"))
        if upto > cursor:
            batch(
                state.w, v, tracer, state.env.values,
                params.domain.h, params.domain.length, params.radius, params.impact,
                selective, centres, loc_u, type_u, cursor, upto,
            )
            cursor = upto
        if b_kind == 0:
            snap_t.append(b_time)
            snap_w.append(state.w.copy())
            if tracer:
                snap_v.append(v.copy())
        else:
            epoch += 1
            state.env = sample_environment(params.kernel, env_stream, epoch)
    state.t = horizon
    if tracer:
        state.v = v
    return SlfvRun(
        times=np.array(snap_t),
        w=np.array(snap_w),
        v=np.array(snap_v) if tracer else None,
        event_times=rep_times,
        event_centres=centres,
        event_selective=selective,
        radius=params.radius,
        impact=params.impact,
        final=state,
    )


# ---------------------------------------------------------------------------
# Local averaging and the rescaled family
# ---------------------------------------------------------------------------


def local_average(field: np.ndarray, domain: SpatialDomain, radius: float) -> np.ndarray:
    """Ball average: mean of the field over cells whose centre lies within
    ``radius`` of each cell centre (periodic)."""
    if radius < domain.h:
        raise ConfigError(f"averaging radius {radius} must be >= grid h {domain.h}")
    h = domain.h
    m = int(radius / h)
    r2 = (radius / h) ** 2 * (1.0 + 1e-12)
    out = np.zeros_like(field, dtype=float)
    count = 0
    if domain.dimension == 1:
        for off in range(-m, m + 1):
            if off * off <= r2:
                out += np.roll(field, -off)
                count += 1
    else:
        for ox in range(-m, m + 1):
            for oy in range(-m, m + 1):
                if ox * ox + oy * oy <= r2:
                    out += np.roll(field, (-ox, -oy), axis=(0, 1))
                    count += 1
    return out / count


@dataclass(frozen=True)
class RescaleSpec:
    """Scaling level for the spatial family: impact u_n = u n^{-1/3},
    selection s_n = s n^{alpha - 2/3}, radius R_n = R n^{-1/3},
    environment rate n^{2 alpha}, event rate n^{1 + d/3} per unit scaled
    volume (the intensity dt (x) dx of the unscaled process seen in
    scaled coordinates)."""

    level: int
    alpha: float
    base_impact: float
    base_selection: float
    base_radius: float

    def __post_init__(self):
        if self.level < 1:
            raise ConfigError(f"level must be >= 1, got {self.level}")
        if not 0.0 < self.alpha < 1.0 / 6.0:
            raise ConfigError(f"alpha must be in (0, 1/6), got {self.alpha}")
        if not 0 < self.impact_n < 1:
            raise ConfigError(f"derived impact u_n = {self.impact_n} must be in (0,1)")
        if not 0 <= self.selection_n < 1:
            raise ConfigError(f"derived selection s_n = {self.selection_n} must be in [0,1)")

    @property
    def impact_n(self) -> float:
        return self.base_impact * self.level ** (-1.0 / 3.0)

    @property
    def selection_n(self) -> float:
        return self.base_selection * self.level ** (self.alpha - 2.0 / 3.0)

    @property
    def radius_n(self) -> float:
        return self.base_radius * self.level ** (-1.0 / 3.0)

    @property
    def env_rate_n(self) -> float:
        return self.level ** (2.0 * self.alpha)

    def rate_per_volume(self, dimension: int) -> float:
        return self.level ** (1.0 + dimension / 3.0)

    def params(self, domain: SpatialDomain, kernel: EnvironmentKernel) -> SlfvParams:
        if domain.h > self.radius_n / 2.0:
            raise ConfigError(
                f"grid h = {domain.h} does not resolve R_n = {self.radius_n}: "
                "need h <= R_n / 2"
            )
        return SlfvParams(
            domain=domain,
            radius=self.radius_n,
            impact=self.impact_n,
            selection=self.selection_n,
            kernel=kernel,
            env_rate=self.env_rate_n,
            rate_per_volume=self.rate_per_volume(domain.dimension),
        )


def run_rescaled_slfv(
    spec: RescaleSpec,
    domain: SpatialDomain,
    kernel: EnvironmentKernel,
    initial_w: np.ndarray,
    horizon: float,
    replicates: int,
    test_functions: Sequence[np.ndarray],
    rng,
    record_dt: Optional[float] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Trajectories of <w-bar_n(t), f> for each test function.

    Returns (record times, values of shape (replicates, n_records,
    n_functions)); each replicate runs sequentially on its own spawned
    streams.
    """
    params = spec.params(domain, kernel)
    contract = as_contract(rng)
    record_dt = horizon if record_dt is None else record_dt
    fs = [np.asarray(f, dtype=float) for f in test_functions]
    cell_vol = domain.h ** domain.dimension
    results = None
    times = None
    for i in range(replicates):
        child = contract.replicate(i)
        # The "init" stream seeds the starting environment; the run itself
        # owns the "environment" stream for resampling.
        env0 = sample_environment(kernel, child.stream("init"))
        state = SlfvState(np.asarray(initial_w, dtype=float).copy(), env0)
        run = run_slfv(params, state, horizon, record_dt, child)
        if results is None:
            times = run.times
            results = np.empty((replicates, len(times), len(fs)))
        for k in range(len(times)):
            averaged = local_average(run.w[k], domain, spec.radius_n)
            for j, f in enumerate(fs):
                results[i, k, j] = cell_vol * float(np.sum(averaged * f))
    return times, results
