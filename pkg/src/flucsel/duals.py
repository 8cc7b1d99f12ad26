"""Branching-annihilating dual processes and Monte-Carlo verification of
the moment-duality identities linking them to the transformed
allele-frequency equations (substitution X = 1 - 2p).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import as_contract
from .errors import ConfigError, StateError


@dataclass
class JumpDualState:
    """Particle count of the non-spatial branching-annihilating dual."""

    count: int
    t: float = 0.0

    def __post_init__(self):
        if self.count < 0:
            raise StateError(f"particle count must be >= 0, got {self.count}")


def jump_dual_rates(count: int, impact: float, selection: float) -> tuple[float, float]:
    """(up, down) transition rates of N -> N±2.

    up   = (u^2 s^2 / 2) (N + C(N,2))      -- each particle branches into
                                              three, each pair replicates
    down = u^2 (1 + s^2/2) C(N,2), N >= 2  -- pair annihilation
    """
    n = count
    pairs = n * (n - 1) / 2.0
    up = 0.5 * impact ** 2 * selection ** 2 * (n + pairs)
    down = impact ** 2 * (1.0 + selection ** 2 / 2.0) * pairs
    return up, down


def jump_dual_step(
    state: JumpDualState, impact: float, selection: float, draw: np.random.Generator
) -> JumpDualState:
    """Advance to the next transition by an exponential race.

    An absorbed state (both rates zero) is returned unchanged with an
    infinite clock.
    """
    up, down = jump_dual_rates(state.count, impact, selection)
    total = up + down
    if total == 0.0:
        return JumpDualState(state.count, np.inf)
    dt = draw.standard_exponential() / total
    delta = 2 if draw.random() < up / total else -2
    return JumpDualState(state.count + delta, state.t + dt)


def run_jump_dual(
    count0: int,
    impact: float,
    selection: float,
    horizon: float,
    replicates: int,
    rng,
) -> np.ndarray:
    """Particle counts at the horizon across independent replicates."""
    if count0 < 0:
        raise ConfigError(f"initial count must be >= 0, got {count0}")
    ev = as_contract(rng).stream("events")
    r = replicates
    n = np.full(r, count0, dtype=np.int64)
    t = np.zeros(r)
    active = np.ones(r, dtype=bool)
    u2, s2 = impact ** 2, selection ** 2
    while True:
        pairs = n * (n - 1) / 2.0
        up = 0.5 * u2 * s2 * (n + pairs)
        down = u2 * (1.0 + s2 / 2.0) * pairs
        total = up + down
        alive = active & (total > 0.0)
        if not alive.any():
            break
        dt = np.divide(
            ev.standard_exponential(r), total, out=np.full(r, np.inf), where=total > 0
        )
        t = t + np.where(alive, dt, 0.0)
        still = alive & (t <= horizon)
        coin = ev.random(r) * total < up
        n = n + np.where(still, np.where(coin, 2, -2), 0)
        active = still
    return n


# ---------------------------------------------------------------------------
# Transformed SDE (non-spatial) and the moment-duality check
# ---------------------------------------------------------------------------


def transformed_sde_step(x, impact, selection, dt, z1, z2):
    """Euler-Maruyama step of the transformed equation

        dX = (u^2 s^2 / 2)(X^3 - X) dt + u sqrt(1 - X^2) dB1
             + (sqrt(2)/2) u s (1 - X^2) dB2,

    clamped into [-1, 1]."""
    x = np.asarray(x, dtype=float)
    one_x2 = np.clip(1.0 - x * x, 0.0, None)
    drift = 0.5 * impact ** 2 * selection ** 2 * (x ** 3 - x)
    new = x + drift * dt + np.sqrt(dt) * (
        impact * np.sqrt(one_x2) * z1
        + (np.sqrt(2.0) / 2.0) * impact * selection * one_x2 * z2
    )
    return np.clip(new, -1.0, 1.0)


def run_transformed_sde(
    x0: float,
    impact: float,
    selection: float,
    horizon: float,
    replicates: int,
    rng,
    dt: float = 1e-4,
) -> np.ndarray:
    """X(horizon) across replicates under Euler-Maruyama integration."""
    stream = as_contract(rng).stream("outcomes")
    n_steps = int(np.ceil(horizon / dt))
    step = horizon / n_steps
    x = np.full(replicates, float(x0))
    for _ in range(n_steps):
        z = stream.standard_normal((2, replicates))
        x = transformed_sde_step(x, impact, selection, step, z[0], z[1])
    return x


@dataclass
class DualityReport:
    """Two-sided Monte-Carlo estimate of a moment-duality identity."""

    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    odd_start: bool = False

    @property
    def z_score(self) -> float:
        diff = abs(self.lhs - self.rhs)
        se = np.hypot(self.lhs_se, self.rhs_se)
        if diff == 0.0:
            return 0.0
        return float(diff / se) if se > 0 else np.inf

    @property
    def passed(self) -> bool:
        return self.z_score <= 3.0


def _mean_se(samples: np.ndarray) -> tuple[float, float]:
    m = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / np.sqrt(len(samples))) if len(samples) > 1 else 0.0
    return m, se


def duality_check_nonspatial(
    x0: float,
    count0: int,
    impact: float,
    selection: float,
    horizon: float,
    replicates: int,
    rng,
    dt: float = 1e-4,
) -> DualityReport:
    """Check E[X_t^{N_0}] = E[X_0^{N_t}] by independent Monte Carlo on
    both sides.  Odd N_0 is allowed (the identity still holds) but
    flagged, since the extinction argument needs an even start.
    """
    if count0 < 0:
        raise ConfigError(f"initial dual count must be >= 0, got {count0}")
    if not -1.0 <= x0 <= 1.0:
        raise ConfigError(f"X0 must be in [-1,1], got {x0}")
    contract = as_contract(rng)
    x_t = run_transformed_sde(
        x0, impact, selection, horizon, replicates, contract.replicate(0), dt
    )
    n_t = run_jump_dual(count0, impact, selection, horizon, replicates, contract.replicate(1))
    lhs, lhs_se = _mean_se(x_t ** count0)
    rhs, rhs_se = _mean_se(np.power(float(x0), n_t))
    return DualityReport(lhs, lhs_se, rhs, rhs_se, odd_start=bool(count0 % 2))


# ---------------------------------------------------------------------------
# Lattice dual (1d torus of sites)
# ---------------------------------------------------------------------------

# Transition kinds inside the categorical race
_WALK_L, _WALK_R, _BRANCH, _ANNIH, _REPL = range(5)


def lattice_dual_rate_table(
    counts: np.ndarray, impact: float, selection: float, gamma: float, delta: float
) -> np.ndarray:
    """Per-site rates, shape (sites, 5): left/right walk, branch into
    three, pair annihilation, pair replication.

    Collocated-pair interactions carry the 1/delta local-time
    discretisation; the per-particle branch rate u^2 s^2 / 2 mirrors the
    non-spatial dual so the lattice duality is exact against the
    site-wise transformed SDE system.
    """
    n = np.asarray(counts, dtype=float)
    pairs = n * (n - 1) / 2.0
    walk = impact * gamma / delta ** 2 * n
    branch = 0.5 * impact ** 2 * selection ** 2 * n
    annih = impact ** 2 * (1.0 + selection ** 2 / 2.0) * pairs / delta
    repl = 0.5 * impact ** 2 * selection ** 2 * pairs / delta
    return np.stack([walk, walk, branch, annih, repl], axis=-1)


def lattice_dual_step(
    counts: np.ndarray,
    impact: float,
    selection: float,
    gamma: float,
    delta: float,
    draw: np.random.Generator,
) -> tuple[np.ndarray, float]:
    """Apply the next transition; returns (new counts, waiting time).

    With no particles left the state is absorbing and the waiting time
    is infinite.
    """
    counts = np.asarray(counts, dtype=np.int64).copy()
    table = lattice_dual_rate_table(counts, impact, selection, gamma, delta)
    total = float(table.sum())
    if total == 0.0:
        return counts, np.inf
    dt = draw.standard_exponential() / total
    flat = table.ravel()
    pick = np.searchsorted(np.cumsum(flat), draw.random() * total, side="right")
    pick = min(pick, flat.size - 1)
    site, kind = divmod(pick, 5)
    sites = counts.size
    if kind == _WALK_L:
        counts[site] -= 1
        counts[(site - 1) % sites] += 1
    elif kind == _WALK_R:
        counts[site] -= 1
        counts[(site + 1) % sites] += 1
    elif kind in (_BRANCH, _REPL):
        counts[site] += 2
    else:
        counts[site] -= 2
    return counts, dt


def run_lattice_dual(
    counts0: np.ndarray,
    impact: float,
    selection: float,
    gamma: float,
    delta: float,
    horizon: float,
    replicates: int,
    rng,
) -> np.ndarray:
    """Site occupancies at the horizon, shape (replicates, sites)."""
    ev = as_contract(rng).stream("events")
    counts0 = np.asarray(counts0, dtype=np.int64)
    sites = counts0.size
    r = replicates
    counts = np.tile(counts0, (r, 1))
    t = np.zeros(r)
    active = np.ones(r, dtype=bool)
    while True:
        n = counts.astype(float)
        pairs = n * (n - 1) / 2.0
        walk = impact * gamma / delta ** 2 * n
        branch = 0.5 * impact ** 2 * selection ** 2 * n
        annih = impact ** 2 * (1.0 + selection ** 2 / 2.0) * pairs / delta
        repl = 0.5 * impact ** 2 * selection ** 2 * pairs / delta
        table = np.stack([walk, walk, branch, annih, repl], axis=-1)  # (r, sites, 5)
        flat = table.reshape(r, sites * 5)
        total = flat.sum(axis=1)
        alive = active & (total > 0.0)
        if not alive.any():
            break
        dt = np.divide(
            ev.standard_exponential(r), total, out=np.full(r, np.inf), where=total > 0
        )
        t = t + np.where(alive, dt, 0.0)
        still = alive & (t <= horizon)
        cum = np.cumsum(flat, axis=1)
        target = ev.random(r) * total
        pick = (cum < target[:, None]).sum(axis=1)
        pick = np.minimum(pick, sites * 5 - 1)
        site, kind = np.divmod(pick, 5)
        rows = np.arange(r)
        do = still
        dec_site = site
        inc_site = np.where(
            kind == _WALK_L, (site - 1) % sites, (site + 1) % sites
        )
        is_walk = (kind == _WALK_L) | (kind == _WALK_R)
        is_up = (kind == _BRANCH) | (kind == _REPL)
        # walks move one particle; branch/replication add a pair; annihilation removes one
        sel = do & is_walk
        counts[rows[sel], dec_site[sel]] -= 1
        counts[rows[sel], inc_site[sel]] += 1
        sel = do & is_up
        counts[rows[sel], site[sel]] += 2
        sel = do & ~is_walk & ~is_up
        counts[rows[sel], site[sel]] -= 2
        active = still
    return counts


def run_lattice_sde(
    x0: np.ndarray,
    impact: float,
    selection: float,
    gamma: float,
    delta: float,
    horizon: float,
    replicates: int,
    rng,
    dt: float = 1e-4,
) -> np.ndarray:
    """Site-wise transformed SDE system with independent per-site noises
    (1/delta variance scaling) and diffusive coupling u*gamma through the
    discrete Laplacian; returns X(horizon), shape (replicates, sites).
    """
    stream = as_contract(rng).stream("outcomes")
    x0 = np.asarray(x0, dtype=float)
    n_steps = int(np.ceil(horizon / dt))
    step = horizon / n_steps
    x = np.tile(x0, (replicates, 1))
    coef = impact * gamma / delta ** 2
    root = np.sqrt(step / delta)
    for _ in range(n_steps):
        lap = np.roll(x, 1, axis=1) + np.roll(x, -1, axis=1) - 2.0 * x
        one_x2 = np.clip(1.0 - x * x, 0.0, None)
        drift = coef * lap + 0.5 * impact ** 2 * selection ** 2 * (x ** 3 - x)
        z1 = stream.standard_normal(x.shape)
        z2 = stream.standard_normal(x.shape)
        x = x + drift * step + root * (
            impact * np.sqrt(one_x2) * z1
            + (np.sqrt(2.0) / 2.0) * impact * selection * one_x2 * z2
        )
        x = np.clip(x, -1.0, 1.0)
    return x


def duality_check_lattice(
    x0: np.ndarray,
    counts0: np.ndarray,
    impact: float,
    selection: float,
    gamma: float,
    delta: float,
    horizon: float,
    replicates: int,
    rng,
    dt: float = 1e-4,
    environment: str = "white",
) -> DualityReport:
    """Check E[prod_i X_t(i)^{n_i(0)}] = E[prod_i X_0(i)^{n_i(t)}] on a
    small torus of sites.  Only independent per-site environment noise is
    accepted; the duality fails for spatially correlated noise.
    """
    if environment != "white":
        raise ConfigError(
            "lattice duality holds only for white per-site environment noise; "
            f"got {environment!r}"
        )
    x0 = np.asarray(x0, dtype=float)
    counts0 = np.asarray(counts0, dtype=np.int64)
    if x0.size > 16:
        raise ConfigError(f"lattice duality check is desk-scale: <= 16 sites, got {x0.size}")
    if x0.shape != counts0.shape:
        raise ConfigError("X0 and dual occupancy must share the lattice")
    contract = as_contract(rng)
    x_t = run_lattice_sde(
        x0, impact, selection, gamma, delta, horizon, replicates, contract.replicate(0), dt
    )
    n_t = run_lattice_dual(
        counts0, impact, selection, gamma, delta, horizon, replicates, contract.replicate(1)
    )
    lhs, lhs_se = _mean_se(np.prod(x_t ** counts0[None, :], axis=1))
    rhs, rhs_se = _mean_se(np.prod(x0[None, :] ** n_t, axis=1))
    return DualityReport(lhs, lhs_se, rhs, rhs_se)


def write_duality_csv(path, reports) -> None:
    """Duality reports as CSV: lhs,lhs_se,rhs,rhs_se,z_score,pass."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lhs", "lhs_se", "rhs", "rhs_se", "z_score", "pass"])
        for rep in reports:
            writer.writerow(
                [
                    repr(rep.lhs),
                    repr(rep.lhs_se),
                    repr(rep.rhs),
                    repr(rep.rhs_se),
                    repr(rep.z_score),
                    str(rep.passed).lower(),
                ]
            )
