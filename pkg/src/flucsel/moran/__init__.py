"""Deme-based Moran model with fluctuating selection.

A circle of demes, each holding a fixed number of haploid individuals,
evolves through neutral and selective reproduction events, pairwise
migration swaps, and global environment resampling.  Every individual
carries its genetic type and the index of the deme its ancestor occupied
at time zero, which yields ancestral-origin tracer records.

Scenario comparability: the event-times stream and the outcome stream
are consumed identically in all four scenarios (anticorrelated,
correlated, constant, neutral), so runs sharing a seed see the same
events and differ only through the environment values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from ..core import RngContract, as_contract
from ..errors import ConfigError, SimulationError, StateError
from . import _kernels as K

SCENARIOS = ("anticorrelated", "correlated", "constant", "neutral")
_SCENARIO_CODE = {name: i for i, name in enumerate(SCENARIOS)}
_KIND_NAMES = ("neutral", "selective", "migration", "environment")

_CHUNK = 8_000_000


@dataclass(frozen=True)
class MoranConfig:
    """Experiment parameters.

    ``selection`` sets the *rate* of selective events (s * deme_size per
    deme) in every scenario; the neutral scenario keeps those events but
    ignores the favoured-type rule, which is what makes shared-seed
    scenario runs comparable event by event.
    """

    demes: int
    deme_size: int
    selection: float
    env_rate: float
    migration: float
    scenario: str
    horizon: Optional[float] = None
    p0: float = 0.5
    init: str = "bernoulli"  # or "fraction": round(p0 * deme_size) per deme
    record_every: int = 0
    record_dt: float = 0.0
    log_events: bool = False
    stop_on_fixation: bool = False
    max_events: Optional[int] = None

    def __post_init__(self):
        if self.demes < 2:
            raise ConfigError(f"need at least 2 demes, got {self.demes}")
        if self.deme_size < 2:
            raise ConfigError(f"need at least 2 individuals per deme, got {self.deme_size}")
        if not 0.0 <= self.selection <= 1.0:
            raise ConfigError(f"selection must be in [0,1], got {self.selection}")
        if self.env_rate < 0 or self.migration < 0:
            raise ConfigError("rates must be >= 0")
        if self.scenario not in _SCENARIO_CODE:
            raise ConfigError(
                f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}"
            )
        if not 0.0 <= self.p0 <= 1.0:
            raise ConfigError(f"p0 must be in [0,1], got {self.p0}")
        if self.init not in ("bernoulli", "fraction"):
            raise ConfigError(f"init must be 'bernoulli' or 'fraction', got {self.init!r}")
        if self.horizon is None:
            if not self.stop_on_fixation:
                raise ConfigError("either a finite horizon or stop_on_fixation is required")
            if self.record_dt > 0:
                raise ConfigError("time-based recording needs a finite horizon")
        elif not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ConfigError(f"horizon must be positive and finite, got {self.horizon}")
        if self.record_every < 0 or self.record_dt < 0:
            raise ConfigError("record frequencies must be >= 0")
        if self.record_every > 0 and self.record_dt > 0:
            raise ConfigError("choose event-count or time-based recording, not both")

    @property
    def neutral_rate(self) -> float:
        n = self.deme_size
        return n * (n - 1) / 2.0

    @property
    def selective_rate(self) -> float:
        return self.selection * self.deme_size

    @property
    def migration_rate(self) -> float:
        return self.migration * self.deme_size

    @property
    def pairs(self) -> list:
        if self.demes == 2:
            return [(0, 1)]
        return [(i, (i + 1) % self.demes) for i in range(self.demes)]

    @property
    def total_rate(self) -> float:
        return (
            self.demes * (self.neutral_rate + self.selective_rate)
            + len(self.pairs) * self.migration_rate
            + self.env_rate
        )

    @property
    def half(self) -> int:
        return (self.demes + 1) // 2


def _build_clock_arrays(config: MoranConfig):
    beta = config.demes
    pairs = config.pairs
    e = 2 * beta + len(pairs) + 1
    kinds = np.empty(e, dtype=np.int8)
    demes = np.empty(e, dtype=np.int32)
    partners = np.full(e, -1, dtype=np.int32)
    rates = np.empty(e, dtype=np.float64)
    kinds[:beta] = K.KIND_NEUTRAL
    demes[:beta] = np.arange(beta)
    rates[:beta] = config.neutral_rate
    kinds[beta:2 * beta] = K.KIND_SELECTIVE
    demes[beta:2 * beta] = np.arange(beta)
    rates[beta:2 * beta] = config.selective_rate
    for p, (a, b) in enumerate(pairs):
        kinds[2 * beta + p] = K.KIND_MIGRATION
        demes[2 * beta + p] = a
        partners[2 * beta + p] = b
        rates[2 * beta + p] = config.migration_rate
    kinds[-1] = K.KIND_ENVIRONMENT
    demes[-1] = -1
    rates[-1] = config.env_rate
    return kinds, demes, partners, rates


# ---------------------------------------------------------------------------
# Spec-level operations (thin wrappers over the compiled primitives)
# ---------------------------------------------------------------------------


def outcome_state(rng) -> np.ndarray:
    """xoshiro state for the outcome stream of a contract or seed."""
    return as_contract(rng).xoshiro_state("outcomes")


@dataclass
class DemePopulation:
    """Types (1 = a, 0 = A) and ancestral-origin labels of one deme."""

    types: np.ndarray
    origins: np.ndarray

    def __post_init__(self):
        self.types = np.ascontiguousarray(self.types, dtype=np.int8)
        self.origins = np.ascontiguousarray(self.origins, dtype=np.int32)
        if self.types.shape != self.origins.shape or self.types.ndim != 1:
            raise StateError("types and origins must be 1-d arrays of equal length")

    @property
    def a_count(self) -> int:
        return int(self.types.sum())


@dataclass(frozen=True)
class ClockEvent:
    time: float
    kind: str
    deme: int
    partner: int


class EventClock:
    """Per-deme next-firing times for every event kind plus one global
    environment entry; popping returns the global minimum and redraws it."""

    def __init__(self, config: MoranConfig, rng):
        self.config = config
        kinds, demes, partners, rates = _build_clock_arrays(config)
        self.kinds, self.demes, self.partners, self.rates = kinds, demes, partners, rates
        self.times = np.empty_like(rates)
        self._st = as_contract(rng).xoshiro_state("events")
        K.init_clock(self.times, self.rates, self._st)

    def next_event(self) -> Optional[ClockEvent]:
        j, t = K.pop_next(self.times, self.rates, self._st)
        if j < 0:
            return None  # all rates zero: simulation complete
        return ClockEvent(
            float(t), _KIND_NAMES[self.kinds[j]], int(self.demes[j]), int(self.partners[j])
        )


def apply_reproduction(
    pop: DemePopulation, kind: str, env_value: int, draw: np.ndarray,
    selection_active: bool = True,
) -> DemePopulation:
    """One reproduction event inside a single deme; deme size is conserved."""
    if kind not in ("neutral", "selective"):
        raise ConfigError(f"reproduction kind must be neutral or selective, got {kind!r}")
    if pop.types.size < 2:
        raise ConfigError("reproduction needs at least two individuals")
    types = pop.types[None, :].copy()
    origins = pop.origins[None, :].copy()
    a_count = np.array([pop.a_count], dtype=np.int64)
    origin_count = _origin_counts(origins, np.max(origins) + 1)
    totals = np.array([pop.a_count], dtype=np.int64)
    env = np.array([env_value], dtype=np.int8)
    K.exec_reproduction(
        types, origins, env, a_count, origin_count, totals,
        0, kind == "selective", selection_active, draw,
    )
    return DemePopulation(types[0], origins[0])


def apply_migration(
    pop1: DemePopulation, pop2: DemePopulation, draw: np.ndarray
) -> tuple[DemePopulation, DemePopulation]:
    """Swap one uniform individual between two demes."""
    n = max(pop1.types.size, pop2.types.size)
    if min(pop1.types.size, pop2.types.size) == 0:
        raise ConfigError("migration needs nonempty demes")
    if pop1.types.size != pop2.types.size:
        raise ConfigError("demes must have equal size")
    types = np.stack([pop1.types, pop2.types]).copy()
    origins = np.stack([pop1.origins, pop2.origins]).copy()
    a_count = np.array([pop1.a_count, pop2.a_count], dtype=np.int64)
    origin_count = _origin_counts(origins, int(max(np.max(origins) + 1, 2)))
    K.exec_migration(types, origins, a_count, origin_count, 0, 1, draw)
    return DemePopulation(types[0], origins[0]), DemePopulation(types[1], origins[1])


def apply_environment(scenario: str, env: np.ndarray, draw: np.ndarray) -> np.ndarray:
    """Resample the environment field according to the scenario; one
    uniform sign is consumed in every scenario."""
    if scenario not in _SCENARIO_CODE:
        raise ConfigError(f"unknown scenario {scenario!r}")
    out = np.ascontiguousarray(env, dtype=np.int8).copy()
    half = (out.size + 1) // 2
    K.exec_environment(out, _SCENARIO_CODE[scenario], half, draw)
    return out


def _origin_counts(origins: np.ndarray, n_labels: int) -> np.ndarray:
    beta = origins.shape[0]
    counts = np.zeros((beta, max(n_labels, beta)), dtype=np.int64)
    for d in range(beta):
        vals, c = np.unique(origins[d], return_counts=True)
        counts[d, vals] = c
    return counts


# ---------------------------------------------------------------------------
# Full experiment
# ---------------------------------------------------------------------------


@dataclass
class MoranResult:
    """Records plus final state of one experiment run."""

    config: MoranConfig
    times: np.ndarray
    global_prop: np.ndarray
    deme_prop: np.ndarray      # (records, demes)
    origin_prop: np.ndarray    # (records, demes, origins)
    n_events: int
    t_end: float
    final_types: np.ndarray
    final_origins: np.ndarray
    final_env: np.ndarray
    fixed: Optional[str] = None  # "a", "A", or None
    event_t: Optional[np.ndarray] = None
    event_kind: Optional[np.ndarray] = None
    event_deme: Optional[np.ndarray] = None
    event_partner: Optional[np.ndarray] = None


def _initial_population(config: MoranConfig, contract: RngContract):
    beta, nd = config.demes, config.deme_size
    types = np.zeros((beta, nd), dtype=np.int8)
    if config.init == "fraction":
        k = int(round(config.p0 * nd))
        types[:, :k] = 1
    else:
        init = contract.stream("init")
        types[:] = init.random((beta, nd)) < config.p0
    origins = np.tile(np.arange(beta, dtype=np.int32)[:, None], (1, nd))
    return types, origins


def run_experiment(config: MoranConfig, rng) -> MoranResult:
    """Simulate per the event Clock until the horizon (or fixation)."""
    contract = as_contract(rng)
    horizon = np.inf if config.horizon is None else float(config.horizon)
    scenario = _SCENARIO_CODE[config.scenario]
    selection_active = config.scenario != "neutral"

    if config.max_events is not None:
        max_events = config.max_events
    elif np.isfinite(horizon):
        expect = config.total_rate * horizon
        max_events = int(expect + 10.0 * math.sqrt(expect + 1.0) + 10_000) * 2
    else:
        max_events = 50_000_000

    rec_cap = 8
    if config.record_dt > 0:
        rec_cap = int(horizon / config.record_dt) + 3
    elif config.record_every > 0:
        rec_cap = max_events // config.record_every + 3
    log_cap = max_events + 1 if config.log_events else 1

    while True:
        result = _attempt(
            config, contract, horizon, scenario, selection_active,
            max_events, rec_cap, log_cap,
        )
        if result is not None:
            return result
        rec_cap *= 2  # deterministic rerun with larger buffers
        log_cap *= 2


def _attempt(config, contract, horizon, scenario, selection_active,
             max_events, rec_cap, log_cap):
    beta, nd = config.demes, config.deme_size
    types, origins = _initial_population(config, contract)
    env = np.empty(beta, dtype=np.int8)
    st_times = contract.xoshiro_state("events")
    st_out = contract.xoshiro_state("outcomes")
    st_env = contract.xoshiro_state("environment")
    K.init_environment(env, scenario, config.half, st_env)

    a_count = types.sum(axis=1).astype(np.int64)
    origin_count = np.zeros((beta, beta), dtype=np.int64)
    origin_count[np.arange(beta), np.arange(beta)] = nd
    totals = np.array([a_count.sum()], dtype=np.int64)

    kinds, demes, partners, rates = _build_clock_arrays(config)
    clock_times = np.empty_like(rates)
    K.init_clock(clock_times, rates, st_times)

    rec_t = np.zeros(rec_cap)
    rec_global = np.zeros(rec_cap)
    rec_deme = np.zeros((rec_cap, beta))
    rec_origin = np.zeros((rec_cap, beta, beta))
    rec_count = np.zeros(1, dtype=np.int64)
    if config.record_every > 0:  # initial record; the tick path emits t=0 itself
        K._emit_record(0.0, types, a_count, origin_count, totals,
                       rec_t, rec_global, rec_deme, rec_origin, rec_count)
    log_t = np.zeros(log_cap)
    log_kind = np.zeros(log_cap, dtype=np.int8)
    log_deme = np.zeros(log_cap, dtype=np.int32)
    log_partner = np.zeros(log_cap, dtype=np.int32)
    log_count = np.zeros(1, dtype=np.int64)

    t_arr = np.zeros(1)
    n_events = np.zeros(1, dtype=np.int64)
    next_tick = np.zeros(1)

    status = K.CHUNK_EXHAUSTED
    if config.stop_on_fixation and totals[0] in (0, beta * nd):
        status = K.DONE_FIXED
    while status == K.CHUNK_EXHAUSTED:
        if n_events[0] >= max_events:
            raise SimulationError(
                f"run exceeded max_events = {max_events}; raise config.max_events "
                "or shorten the horizon"
            )
        chunk = min(_CHUNK, max_events - n_events[0])
        status = K.run_chunk(
            clock_times, kinds, demes, partners, rates,
            types, origins, env, a_count, origin_count, totals,
            t_arr, n_events,
            horizon, chunk,
            scenario, selection_active, config.half, config.stop_on_fixation,
            config.record_every, config.record_dt, next_tick,
            rec_t, rec_global, rec_deme, rec_origin, rec_count,
            config.log_events, log_t, log_kind, log_deme, log_partner, log_count,
            st_times, st_out, st_env,
        )
    if status in (K.RECORDS_FULL, K.LOG_FULL):
        return None  # caller retries with larger buffers

    n_rec = int(rec_count[0])
    n_log = int(log_count[0])
    fixed = None
    if totals[0] == 0:
        fixed = "A"
    elif totals[0] == beta * nd:
        fixed = "a"
    return MoranResult(
        config=config,
        times=rec_t[:n_rec].copy(),
        global_prop=rec_global[:n_rec].copy(),
        deme_prop=rec_deme[:n_rec].copy(),
        origin_prop=rec_origin[:n_rec].copy(),
        n_events=int(n_events[0]),
        t_end=float(t_arr[0]),
        final_types=types,
        final_origins=origins,
        final_env=env,
        fixed=fixed,
        event_t=log_t[:n_log].copy() if config.log_events else None,
        event_kind=log_kind[:n_log].copy() if config.log_events else None,
        event_deme=log_deme[:n_log].copy() if config.log_events else None,
        event_partner=log_partner[:n_log].copy() if config.log_events else None,
    )


def run_scenarios(config: MoranConfig, rng, scenarios=SCENARIOS) -> dict:
    """Run several scenarios with the same seed: shared event streams,
    different environment values only."""
    contract = as_contract(rng)
    return {
        name: run_experiment(replace(config, scenario=name), contract)
        for name in scenarios
    }


# ---------------------------------------------------------------------------
# Record files
# ---------------------------------------------------------------------------


def write_records(result: MoranResult, out_dir) -> list:
    """Write the proportion and ancestral-origin record files.

    proportions.txt: time, global a-proportion, per-deme a-proportion.
    origin_<g>.txt:  time, per-deme proportion of individuals with
    ancestral origin g.  Values are space-separated shortest-roundtrip
    floats, one row per record point.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    beta = result.config.demes
    paths = []
    path = out / "proportions.txt"
    with open(path, "w") as fh:
        for i in range(len(result.times)):
            row = [result.times[i], result.global_prop[i], *result.deme_prop[i]]
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")
    paths.append(path)
    for g in range(beta):
        path = out / f"origin_{g}.txt"
        with open(path, "w") as fh:
            for i in range(len(result.times)):
                row = [result.times[i], *result.origin_prop[i, :, g]]
                fh.write(" ".join(repr(float(x)) for x in row) + "\n")
        paths.append(path)
    if result.event_t is not None:
        path = out / "events.txt"
        with open(path, "w") as fh:
            for i in range(len(result.event_t)):
                fh.write(
                    f"{result.event_t[i]!r} {_KIND_NAMES[result.event_kind[i]]} "
                    f"{result.event_deme[i]} {result.event_partner[i]}\n"
                )
        paths.append(path)
    return paths
