"""Exact event-driven simulation of the non-spatial Lambda-Fleming-Viot
process with fluctuating selection, and its rescaled family whose limit
is the diffusion integrated in :mod:`flucsel.limits`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import as_contract
from .errors import ConfigError, StateError


@dataclass(frozen=True)
class NonspatialParams:
    """Rates and event parameters of the unscaled process.

    rate        reproduction events per unit time (lambda)
    impact      fraction of the population replaced per event (u-bar)
    selection   selection strength per event, in [0, 1)
    env_rate    resampling rate of the ±1 environment
    """

    rate: float
    impact: float
    selection: float
    env_rate: float

    def __post_init__(self):
        vals = (self.rate, self.impact, self.selection, self.env_rate)
        if not all(np.isfinite(v) for v in vals):
            raise ConfigError(f"parameters must be finite, got {vals}")
        if self.rate < 0:
            raise ConfigError(f"event rate must be >= 0, got {self.rate}")
        if not 0 < self.impact < 1:
            raise ConfigError(f"impact must be in (0,1), got {self.impact}")
        if not 0 <= self.selection < 1:
            raise ConfigError(f"selection must be in [0,1), got {self.selection}")
        if not self.env_rate > 0:
            raise ConfigError(f"environment rate must be > 0, got {self.env_rate}")


@dataclass
class NonspatialState:
    p: float
    zeta: int
    t: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise StateError(f"frequency must be in [0,1], got {self.p}")
        if self.zeta not in (-1, 1):
            raise StateError(f"environment must be ±1, got {self.zeta}")


def parent_prob_a(p, selection, zeta):
    """Probability that the parent of a reproduction event is type a.

    The environment value -1 favours type a, +1 favours type A.
    """
    s = selection
    if zeta == -1:
        return (1.0 + s) * p / (1.0 + s * p)
    return p / (1.0 + s * (1.0 - p))


def reproduction_step(
    state: NonspatialState, params: NonspatialParams, draw: np.random.Generator
) -> NonspatialState:
    """Apply one reproduction event: pick a parent type, replace a
    proportion ``impact`` of the population by its offspring."""
    prob = parent_prob_a(state.p, params.selection, state.zeta)
    parent_is_a = draw.random() < prob
    p_new = (1.0 - params.impact) * state.p + (params.impact if parent_is_a else 0.0)
    return NonspatialState(p_new, state.zeta, state.t)


def environment_step(state: NonspatialState, draw: np.random.Generator) -> NonspatialState:
    """Resample the environment uniformly from {-1,+1}; p is untouched."""
    zeta_new = -1 if draw.random() < 0.5 else 1
    return NonspatialState(state.p, zeta_new, state.t)


def run_nonspatial(
    params: NonspatialParams,
    p0: float,
    horizon: float,
    record_dt: float,
    rng,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Simulate one trajectory by racing the reproduction and environment
    exponential clocks; returns (times, p, zeta) sampled at multiples of
    ``record_dt`` with the left-limit convention at jump times.
    """
    if not (np.isfinite(horizon) and horizon > 0):
        raise ConfigError(f"horizon must be positive and finite, got {horizon}")
    if not (np.isfinite(record_dt) and record_dt > 0):
        raise ConfigError(f"record_dt must be positive and finite, got {record_dt}")
    contract = as_contract(rng)
    ev = contract.stream("events")
    out = contract.stream("outcomes")
    env = contract.stream("environment")

    state = NonspatialState(float(p0), -1 if env.random() < 0.5 else 1, 0.0)
    total = params.rate + params.env_rate
    rep_frac = params.rate / total

    ticks = np.arange(0.0, horizon + 0.5 * record_dt, record_dt)
    rec_p = np.empty(len(ticks))
    rec_z = np.empty(len(ticks), dtype=np.int8)
    rec_p[0], rec_z[0] = state.p, state.zeta
    cursor = 1

    t = 0.0
    while True:
        t_next = t + ev.standard_exponential() / total
        while cursor < len(ticks) and ticks[cursor] < t_next:
            rec_p[cursor], rec_z[cursor] = state.p, state.zeta
            cursor += 1
        if t_next > horizon:
            break
        if ev.random() < rep_frac:
            state = reproduction_step(state, params, out)
        else:
            state = environment_step(state, env)
        t = t_next
        state.t = t
    while cursor < len(ticks):
        rec_p[cursor], rec_z[cursor] = state.p, state.zeta
        cursor += 1
    return ticks, rec_p, rec_z


@dataclass(frozen=True)
class ScalingSchedule:
    """Scaling level n with exponent alpha in (0, 1/4).

    Derived values: impact u_n = u n^{-1/2}, selection s_n = s n^{-1/2+alpha},
    event rate n, environment rate n^{2 alpha}.
    """

    level: int
    alpha: float
    base_impact: float
    base_selection: float

    def __post_init__(self):
        if self.level < 1:
            raise ConfigError(f"level must be >= 1, got {self.level}")
        if not 0.0 < self.alpha < 0.25:
            raise ConfigError(f"alpha must be in (0, 1/4), got {self.alpha}")
        if self.impact_n >= 1.0 or self.impact_n <= 0.0:
            raise ConfigError(
                f"derived impact u_n = {self.impact_n} must lie in (0,1)"
            )
        if self.selection_n >= 1.0 or self.selection_n < 0.0:
            raise ConfigError(
                f"derived selection s_n = {self.selection_n} must lie in [0,1)"
            )

    @property
    def impact_n(self) -> float:
        return self.base_impact * self.level ** -0.5

    @property
    def selection_n(self) -> float:
        return self.base_selection * self.level ** (-0.5 + self.alpha)

    @property
    def event_rate(self) -> float:
        return float(self.level)

    @property
    def env_rate(self) -> float:
        return self.level ** (2.0 * self.alpha)

    def params(self) -> NonspatialParams:
        return NonspatialParams(
            rate=self.event_rate,
            impact=self.impact_n,
            selection=self.selection_n,
            env_rate=self.env_rate,
        )


def run_rescaled(
    schedule: ScalingSchedule,
    p0: float,
    horizon: float,
    replicates: int,
    rng,
) -> np.ndarray:
    """Empirical law of p(horizon) under the rescaled process.

    Replicates advance in lockstep, one Poisson event per lane per
    iteration, each lane reading its own component of every vector draw;
    lanes are mutually independent and the whole batch is reproducible
    from the seed.
    """
    if horizon <= 0:
        raise ConfigError(f"horizon must be positive, got {horizon}")
    if replicates < 1:
        raise ConfigError(f"replicates must be >= 1, got {replicates}")
    params = schedule.params()
    contract = as_contract(rng)
    ev = contract.stream("events")
    out = contract.stream("outcomes")
    env = contract.stream("environment")

    r = replicates
    total = params.rate + params.env_rate
    rep_frac = params.rate / total
    u, s = params.impact, params.selection

    p = np.full(r, float(p0))
    zeta = np.where(env.random(r) < 0.5, -1, 1).astype(np.int8)
    t = np.zeros(r)
    active = np.ones(r, dtype=bool)
    while active.any():
        t = t + np.where(active, ev.standard_exponential(r) / total, 0.0)
        still = active & (t <= horizon)
        is_rep = ev.random(r) < rep_frac
        # reproduction lanes
        prob = np.where(
            zeta == -1,
            (1.0 + s) * p / (1.0 + s * p),
            p / (1.0 + s * (1.0 - p)),
        )
        parent_a = out.random(r) < prob
        p_rep = (1.0 - u) * p + u * parent_a
        # environment lanes
        zeta_env = np.where(env.random(r) < 0.5, -1, 1).astype(np.int8)
        do_rep = still & is_rep
        do_env = still & ~is_rep
        p = np.where(do_rep, p_rep, p)
        zeta = np.where(do_env, zeta_env, zeta)
        active = still
    return p
