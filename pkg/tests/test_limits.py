"""Limiting-object integrators: constants, diffusion, coloured noise,
SPDE and tracer steps."""

import numpy as np
import pytest
from scipy.integrate import simpson

from flucsel import core, limits
from flucsel.core import RngContract, SpatialDomain
from flucsel.errors import ConfigError, KernelError, StateError
from flucsel.limits import (
    ClampCounter,
    DiffusionParams,
    SpdeParams,
    TracerSpdeState,
    coloured_noise_increment,
    gamma_r,
    run_sde,
    run_spde,
    sde_step,
    spde_step,
    tracer_spde_step,
    v_r,
)


def simpson_gamma_1d(radius, n=4001):
    """Independent oracle for the d=1 overlap constant via nested Simpson."""
    x = np.linspace(-radius, radius, n)
    inner = np.empty(n)
    for i, xi in enumerate(x):
        z = np.linspace(xi - radius, xi + radius, n)
        inner[i] = simpson(z ** 2, x=z)
    return simpson(inner, x=x) / (2.0 * radius)


def mc_gamma_2d(radius, n, seed):
    """Monte-Carlo oracle: Gamma_R = V_R * E[(x1 + y1)^2] with x, y uniform
    in the disc of the given radius, sampled in chunks."""
    rng = np.random.default_rng(seed)
    total = 0.0
    total_sq = 0.0
    done = 0
    chunk = 2_000_000
    while done < n:
        m = min(chunk, n - done)
        r1 = radius * np.sqrt(rng.random(m))
        r2 = radius * np.sqrt(rng.random(m))
        x1 = r1 * np.cos(2 * np.pi * rng.random(m))
        y1 = r2 * np.cos(2 * np.pi * rng.random(m))
        vals = (x1 + y1) ** 2
        total += vals.sum()
        total_sq += (vals ** 2).sum()
        done += m
    mean = total / n
    var = total_sq / n - mean ** 2
    vol = np.pi * radius ** 2
    return vol * mean, vol * np.sqrt(var / n)


class _ZeroStream:
    """Stub stream producing zero noise."""

    def standard_normal(self, shape):
        return np.zeros(shape)


class TestConstants:
    @pytest.mark.parametrize("radius", [0.5, 1.0, 2.0])
    def test_gamma_1d_closed_form(self, radius):
        expected = 4.0 * radius ** 3 / 3.0
        assert abs(gamma_r(radius, 1) - expected) <= 1e-6 * expected

    def test_gamma_1d_simpson_cross_check(self):
        assert gamma_r(1.0, 1) == pytest.approx(simpson_gamma_1d(1.0), abs=1e-8)

    def test_gamma_scaling_law(self):
        # Gamma_R grows like R^(d+2)
        assert gamma_r(2.0, 1) == pytest.approx(8.0 * gamma_r(1.0, 1), rel=1e-10)
        assert gamma_r(2.0, 2) == pytest.approx(16.0 * gamma_r(1.0, 2), rel=1e-10)

    def test_gamma_2d_against_mc(self):
        est, se = mc_gamma_2d(1.0, 1_000_000, seed=12)
        assert abs(gamma_r(1.0, 2) - est) <= max(3.0 * se, 1e-3)

    def test_gamma_errors(self):
        with pytest.raises(ConfigError):
            gamma_r(-1.0, 1)
        with pytest.raises(ConfigError):
            gamma_r(1.0, 3)

    def test_ball_volumes(self):
        assert v_r(1.0, 1) == 2.0
        assert v_r(1.0, 2) == pytest.approx(np.pi)
        assert v_r(0.5, 2) == pytest.approx(np.pi / 4.0)


class TestSdeStep:
    def test_absorbing_zero(self):
        params = DiffusionParams(1.0, 1.0, 1e-3)
        assert sde_step(0.0, params, 1.3, -0.7) == 0.0

    def test_symmetric_point_no_drift(self):
        params = DiffusionParams(1.0, 1.0, 1e-3)
        assert sde_step(0.5, params, 0.0, 0.0) == 0.5

    def test_drift_hand_value(self):
        params = DiffusionParams(1.0, 1.0, 0.01)
        assert sde_step(0.25, params, 0.0, 0.0) == pytest.approx(0.2509375)

    def test_clamp_counter(self):
        params = DiffusionParams(1.0, 1.0, 1e-3)
        counter = ClampCounter()
        sde_step(np.full(100, 0.5), params, np.full(100, 1e4), np.zeros(100), counter)
        assert counter.clamps == 100 and counter.cell_steps == 100
        assert counter.frequency == 1.0

    def test_run_sde_interval_and_determinism(self):
        params = DiffusionParams(1.0, 1.0, 1e-3)
        a, _ = run_sde(params, 0.3, 0.25, 500, RngContract(3))
        b, _ = run_sde(params, 0.3, 0.25, 500, RngContract(3))
        assert np.array_equal(a, b)
        assert np.all((a >= 0.0) & (a <= 1.0))


def _small_params(selection=1.0, rho=-1.0, dt=1e-4, dim=1, cells=8, include_white=False):
    length = 8.0
    dom = SpatialDomain(dim, length, length / cells)
    kernel = core.block_kernel(dom, 2, rho)
    return SpdeParams(
        domain=dom, impact=0.5, selection=selection, radius=1.0,
        kernel=kernel, dt=dt, include_white_noise=include_white,
    )


class TestSpdeParams:
    def test_v_r_in_one_dimension_is_2r(self):
        params = _small_params()
        assert params.v_R == 2.0 * params.radius

    def test_courant_violation(self):
        with pytest.raises(ConfigError, match="stability bound"):
            _small_params(dt=10.0)

    def test_white_noise_needs_d1(self):
        dom = SpatialDomain(2, 8.0, 1.0)
        kernel = core.block_kernel(dom, 2, 0.0)
        with pytest.raises(ConfigError, match="d=1"):
            SpdeParams(domain=dom, impact=0.5, selection=0.1, radius=1.0,
                       kernel=kernel, dt=1e-4, include_white_noise=True)


class TestColouredNoise:
    def test_fully_correlated_identical(self):
        params = _small_params(rho=1.0)
        stream = RngContract(1).stream("environment")
        for _ in range(16):
            dw = coloured_noise_increment(params, stream)
            assert np.all(dw == dw.flat[0])

    def test_anticorrelated_exact_negatives(self):
        params = _small_params(rho=-1.0)
        stream = RngContract(2).stream("environment")
        for _ in range(16):
            dw = coloured_noise_increment(params, stream)
            assert np.array_equal(dw[:4], -dw[4:])

    def test_empirical_covariance_matches_g_dt(self):
        params = _small_params(rho=0.4, dt=1e-3)
        stream = RngContract(3).stream("environment")
        n = 20_000
        draws = np.array([coloured_noise_increment(params, stream) for _ in range(n)])
        g = core.kernel_covariance_matrix(params.kernel)
        emp = draws.T @ draws / n
        # entrywise: SE of an empirical covariance of Gaussians
        for i in range(8):
            for j in range(8):
                target = g[i, j] * params.dt
                se = np.sqrt((params.dt ** 2 + target ** 2) / n)
                assert abs(emp[i, j] - target) <= 3.5 * se

    def test_not_psd_reports_eigenvalue(self):
        dom = SpatialDomain(1, 8.0, 1.0)
        bad = core.EnvironmentKernel(kind="block", domain=dom, n_blocks=4, rho=-0.9)
        params = SpdeParams.__new__(SpdeParams)
        object.__setattr__(params, "domain", dom)
        object.__setattr__(params, "kernel", bad)
        object.__setattr__(params, "dt", 1e-4)
        with pytest.raises(KernelError, match="eigenvalue"):
            coloured_noise_increment(params, RngContract(4).stream("environment"))


def wrapped_gaussian(axis, centre, variance, length, images=4):
    out = np.zeros_like(axis)
    for m in range(-images, images + 1):
        out += np.exp(-((axis - centre + m * length) ** 2) / (2.0 * variance))
    return out


class TestSpdeStep:
    def test_fixation_state_invariant(self):
        params = _small_params(selection=0.7)
        w = np.ones(params.domain.grid_shape)
        out = spde_step(w, params, RngContract(5).stream("environment"))
        assert np.all(out == 1.0)

    def test_balanced_point_deterministic_part(self):
        params = _small_params(selection=0.7)
        w = np.full(params.domain.grid_shape, 0.5)
        out = spde_step(w, params, _ZeroStream())
        assert np.allclose(out, 0.5)

    def test_drift_sign_pushes_toward_half(self):
        params = _small_params(selection=0.7)
        low = spde_step(np.full(8, 0.3), params, _ZeroStream())
        high = spde_step(np.full(8, 0.7), params, _ZeroStream())
        assert np.all(low > 0.3) and np.all(high < 0.7)

    def test_heat_equation_against_torus_kernel(self):
        length, cells = 8.0, 64
        dom = SpatialDomain(2, length, length / cells)
        kernel = core.block_kernel(dom, 1, 1.0)
        params = SpdeParams(domain=dom, impact=1.0, selection=0.0, radius=0.8,
                            kernel=kernel, dt=5e-4)
        ax = (np.arange(cells) + 0.5) * dom.h
        var0 = 0.8 ** 2
        w0 = 0.5 * np.outer(
            wrapped_gaussian(ax, 4.0, var0, length),
            wrapped_gaussian(ax, 4.0, var0, length),
        )
        times, snaps, _ = run_spde(params, w0, 0.1, 0.1, RngContract(6))
        diff = params.impact * params.gamma_R / 2.0
        var_t = var0 + 2.0 * diff * times[-1]
        exact = 0.5 * (var0 / var_t) * np.outer(
            wrapped_gaussian(ax, 4.0, var_t, length),
            wrapped_gaussian(ax, 4.0, var_t, length),
        )
        assert np.max(np.abs(snaps[-1] - exact)) <= 1e-2

    def test_mass_conservation_without_reaction(self):
        params = _small_params(selection=0.0, dim=2, cells=16)
        rng = np.random.default_rng(0)
        w = 0.2 + 0.6 * rng.random(params.domain.grid_shape)
        cell = params.domain.h ** 2
        for _ in range(50):
            before = w.sum() * cell
            w = spde_step(w, params, RngContract(7).stream("environment"))
            assert abs(w.sum() * cell - before) <= 1e-10

    def test_white_noise_requires_stream(self):
        params = _small_params(include_white=True)
        w = np.full(params.domain.grid_shape, 0.5)
        with pytest.raises(ConfigError, match="drift stream"):
            spde_step(w, params, RngContract(8).stream("environment"), None)

    def test_output_stays_in_unit_interval(self):
        params = _small_params(selection=1.0, include_white=True, dt=1e-3)
        contract = RngContract(9)
        env, drift = contract.stream("environment"), contract.stream("outcomes")
        w = np.full(params.domain.grid_shape, 0.5)
        counter = ClampCounter()
        for _ in range(500):
            w = spde_step(w, params, env, drift, counter)
            assert np.all((w >= 0.0) & (w <= 1.0))


class TestTracer:
    def test_state_validation(self):
        with pytest.raises(StateError):
            TracerSpdeState(np.full(8, 0.4), np.full(8, 0.5))

    def test_total_tracer_stays_equal(self):
        params = _small_params(selection=0.8, include_white=True, dt=1e-4)
        contract = RngContract(10)
        env, drift = contract.stream("environment"), contract.stream("outcomes")
        state = TracerSpdeState(np.full(8, 0.6), np.full(8, 0.6))
        for _ in range(200):
            state = tracer_spde_step(state, params, env, drift)
            assert np.array_equal(state.v, state.w)

    def test_empty_tracer_stays_empty(self):
        params = _small_params(selection=0.8, include_white=True, dt=1e-4)
        contract = RngContract(11)
        env, drift = contract.stream("environment"), contract.stream("outcomes")
        state = TracerSpdeState(np.full(8, 0.6), np.zeros(8))
        for _ in range(200):
            state = tracer_spde_step(state, params, env, drift)
            assert np.all(state.v == 0.0)

    def test_ordering_preserved(self):
        params = _small_params(selection=1.0, include_white=True, dt=1e-3)
        contract = RngContract(12)
        env, drift = contract.stream("environment"), contract.stream("outcomes")
        state = TracerSpdeState(np.full(8, 0.5), np.full(8, 0.25))
        for _ in range(500):
            state = tracer_spde_step(state, params, env, drift)
            assert np.all(state.v >= 0.0) and np.all(state.v <= state.w)

    def test_neutral_tracer_ratio_martingale(self):
        # half-tracer initial condition, no selection: the v/w ratio is a
        # bounded martingale per cell, so its mean absolute drift over 10^3
        # steps stays small at this noise scale
        length, cells = 16.0, 16
        dom = SpatialDomain(1, length, length / cells)
        kernel = core.block_kernel(dom, 2, -1.0)
        params = SpdeParams(domain=dom, impact=0.25, selection=0.0, radius=1.0,
                            kernel=kernel, dt=1e-4, include_white_noise=True)
        devs = []
        for rep in range(100):
            contract = RngContract(1000 + rep)
            env, drift = contract.stream("environment"), contract.stream("outcomes")
            state = TracerSpdeState(np.full(cells, 0.6), np.full(cells, 0.3))
            for _ in range(1000):
                state = tracer_spde_step(state, params, env, drift)
            mask = state.w > 1e-3
            if mask.any():
                devs.append(np.mean(np.abs(state.v[mask] / state.w[mask] - 0.5)))
        assert np.mean(devs) <= 0.1
