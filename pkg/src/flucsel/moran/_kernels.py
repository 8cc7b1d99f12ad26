"""Compiled event loop of the deme-based Moran model.

The loop is driven by three xoshiro256++ streams (event times, event
outcomes, environment values) so that runs sharing a seed consume
identical event schedules across the four environmental scenarios: only
the environment *values*, and how selective events read them, differ.
"""

import numpy as np
from numba import njit

# Event kinds held in the clock
KIND_NEUTRAL = 0
KIND_SELECTIVE = 1
KIND_MIGRATION = 2
KIND_ENVIRONMENT = 3

# Scenario codes
SC_ANTICORRELATED = 0
SC_CORRELATED = 1
SC_CONSTANT = 2
SC_NEUTRAL = 3

# run_chunk exit statuses
DONE_HORIZON = 0
DONE_FIXED = 1
CHUNK_EXHAUSTED = 2
RECORDS_FULL = 3
LOG_FULL = 4
NO_RATES = 5

_INV_2_53 = 1.0 / 9007199254740992.0  # 2^-53


@njit(cache=True, inline="always")
def _xo_next(s):
    s0 = s[0]
    s3 = s[3]
    tmp = s0 + s3
    result = ((tmp << np.uint64(23)) | (tmp >> np.uint64(41))) + s0
    t = s[1] << np.uint64(17)
    s[2] ^= s0
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = (s[3] << np.uint64(45)) | (s[3] >> np.uint64(19))
    return result


@njit(cache=True, inline="always")
def _u01(s):
    return float(_xo_next(s) >> np.uint64(11)) * _INV_2_53


@njit(cache=True, inline="always")
def _exp(s, rate):
    if rate <= 0.0:
        return np.inf
    return -np.log(1.0 - _u01(s)) / rate


@njit(cache=True)
def init_clock(clock_times, clock_rates, st_times):
    for e in range(clock_times.size):
        clock_times[e] = _exp(st_times, clock_rates[e])


@njit(cache=True)
def pop_next(clock_times, clock_rates, st_times):
    """Index and time of the globally next entry; the entry is redrawn."""
    j = 0
    best = clock_times[0]
    for e in range(1, clock_times.size):
        if clock_times[e] < best:
            best = clock_times[e]
            j = e
    if best == np.inf:
        return -1, np.inf
    clock_times[j] = best + _exp(st_times, clock_rates[j])
    return j, best


@njit(cache=True)
def exec_reproduction(types, origins, env, a_count, origin_count, totals,
                      deme, selective, selection_active, st_out):
    """Choose a distinct pair, a potential parent, apply the favoured-type
    override at mixed selective pairs, and copy type + ancestral origin
    from parent to the other individual."""
    nd = types.shape[1]
    u1 = _u01(st_out)
    u2 = _u01(st_out)
    u3 = _u01(st_out)
    i = int(u1 * nd)
    if i >= nd:
        i = nd - 1
    j = int(u2 * (nd - 1))
    if j >= nd - 1:
        j = nd - 2
    if j >= i:
        j += 1
    parent = i if u3 < 0.5 else j
    if selective and selection_active:
        ti = types[deme, i]
        tj = types[deme, j]
        if ti != tj:
            fav = 1 if env[deme] == -1 else 0  # environment -1 favours type a
            parent = i if ti == fav else j
    child = j if parent == i else i
    pt = types[deme, parent]
    po = origins[deme, parent]
    ct = types[deme, child]
    co = origins[deme, child]
    if ct != pt:
        a_count[deme] += pt - ct
        totals[0] += pt - ct
        types[deme, child] = pt
    if co != po:
        origin_count[deme, co] -= 1
        origin_count[deme, po] += 1
        origins[deme, child] = po


@njit(cache=True)
def exec_migration(types, origins, a_count, origin_count,
                   deme_a, deme_b, st_out):
    """Swap one uniform individual from each deme (types and origins)."""
    nd = types.shape[1]
    u1 = _u01(st_out)
    u2 = _u01(st_out)
    ia = int(u1 * nd)
    if ia >= nd:
        ia = nd - 1
    ib = int(u2 * nd)
    if ib >= nd:
        ib = nd - 1
    ta = types[deme_a, ia]
    tb = types[deme_b, ib]
    oa = origins[deme_a, ia]
    ob = origins[deme_b, ib]
    types[deme_a, ia] = tb
    types[deme_b, ib] = ta
    origins[deme_a, ia] = ob
    origins[deme_b, ib] = oa
    if ta != tb:
        a_count[deme_a] += tb - ta
        a_count[deme_b] += ta - tb
    if oa != ob:
        origin_count[deme_a, oa] -= 1
        origin_count[deme_a, ob] += 1
        origin_count[deme_b, ob] -= 1
        origin_count[deme_b, oa] += 1


@njit(cache=True)
def exec_environment(env, scenario, half, st_env):
    """Resample the environment.  One value is always drawn so the stream
    stays aligned across scenarios; constant and neutral scenarios leave
    the field untouched."""
    u = _u01(st_env)
    val = np.int8(-1) if u < 0.5 else np.int8(1)
    beta = env.shape[0]
    if scenario == SC_ANTICORRELATED:
        for d in range(beta):
            env[d] = val if d < half else -val
    elif scenario == SC_CORRELATED:
        for d in range(beta):
            env[d] = val
    return val


@njit(cache=True)
def init_environment(env, scenario, half, st_env):
    """Initial environment; consumes one draw in every scenario.  The
    constant scenario uses the fixed pattern +1 / -1 (type a favoured in
    the second half); the neutral scenario is all +1 and never read."""
    u = _u01(st_env)
    val = np.int8(-1) if u < 0.5 else np.int8(1)
    beta = env.shape[0]
    if scenario == SC_ANTICORRELATED:
        for d in range(beta):
            env[d] = val if d < half else -val
    elif scenario == SC_CORRELATED:
        for d in range(beta):
            env[d] = val
    elif scenario == SC_CONSTANT:
        for d in range(beta):
            env[d] = np.int8(1) if d < half else np.int8(-1)
    else:
        for d in range(beta):
            env[d] = np.int8(1)


@njit(cache=True)
def _emit_record(time, types, a_count, origin_count, totals,
                 rec_t, rec_global, rec_deme, rec_origin, rec_count):
    beta = types.shape[0]
    nd = types.shape[1]
    rc = rec_count[0]
    rec_t[rc] = time
    rec_global[rc] = totals[0] / (beta * nd)
    for d in range(beta):
        rec_deme[rc, d] = a_count[d] / nd
        for g in range(beta):
            rec_origin[rc, d, g] = origin_count[d, g] / nd
    rec_count[0] = rc + 1


@njit(cache=True)
def run_chunk(clock_times, clock_kinds, clock_demes, clock_partners, clock_rates,
              types, origins, env, a_count, origin_count, totals,
              t_arr, n_events_arr,
              horizon, max_events_chunk,
              scenario, selection_active, half, stop_on_fixation,
              record_every, record_dt, next_tick_arr,
              rec_t, rec_global, rec_deme, rec_origin, rec_count,
              log_enabled, log_t, log_kind, log_deme, log_partner, log_count,
              st_times, st_out, st_env):
    beta = types.shape[0]
    nd = types.shape[1]
    npop = beta * nd
    rec_cap = rec_t.size
    log_cap = log_t.size
    processed = 0
    while processed < max_events_chunk:
        # peek at the global minimum without consuming it yet
        j = 0
        best = clock_times[0]
        for e in range(1, clock_times.size):
            if clock_times[e] < best:
                best = clock_times[e]
                j = e
        if best == np.inf:
            return NO_RATES
        if best > horizon:
            if record_dt > 0.0:
                while next_tick_arr[0] <= horizon:
                    if rec_count[0] >= rec_cap:
                        return RECORDS_FULL
                    _emit_record(next_tick_arr[0], types, a_count, origin_count,
                                 totals, rec_t, rec_global, rec_deme, rec_origin,
                                 rec_count)
                    next_tick_arr[0] += record_dt
            t_arr[0] = horizon
            return DONE_HORIZON
        if record_dt > 0.0:
            # ticks strictly before the event time see the pre-event state
            while next_tick_arr[0] <= best:
                if rec_count[0] >= rec_cap:
                    return RECORDS_FULL
                _emit_record(next_tick_arr[0], types, a_count, origin_count,
                             totals, rec_t, rec_global, rec_deme, rec_origin,
                             rec_count)
                next_tick_arr[0] += record_dt
        clock_times[j] = best + _exp(st_times, clock_rates[j])
        t_arr[0] = best
        kind = clock_kinds[j]
        deme = clock_demes[j]
        if kind == KIND_NEUTRAL:
            exec_reproduction(types, origins, env, a_count, origin_count,
                              totals, deme, False, selection_active, st_out)
        elif kind == KIND_SELECTIVE:
            exec_reproduction(types, origins, env, a_count, origin_count,
                              totals, deme, True, selection_active, st_out)
        elif kind == KIND_MIGRATION:
            exec_migration(types, origins, a_count, origin_count,
                           deme, clock_partners[j], st_out)
        else:
            exec_environment(env, scenario, half, st_env)
        n_events_arr[0] += 1
        processed += 1
        if log_enabled:
            if log_count[0] >= log_cap:
                return LOG_FULL
            lc = log_count[0]
            log_t[lc] = best
            log_kind[lc] = kind
            log_deme[lc] = deme
            log_partner[lc] = clock_partners[j]
            log_count[0] = lc + 1
        if record_every > 0 and n_events_arr[0] % record_every == 0:
            if rec_count[0] >= rec_cap:
                return RECORDS_FULL
            _emit_record(best, types, a_count, origin_count, totals,
                         rec_t, rec_global, rec_deme, rec_origin, rec_count)
        if stop_on_fixation and (totals[0] == 0 or totals[0] == npop):
            return DONE_FIXED
    return CHUNK_EXHAUSTED
