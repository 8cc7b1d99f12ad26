"""Deme-based Moran model tests."""

import numpy as np
import pytest

from flucsel import moran
from flucsel.core import RngContract
from flucsel.errors import ConfigError
from flucsel.moran import (
    DemePopulation,
    EventClock,
    MoranConfig,
    apply_environment,
    apply_migration,
    apply_reproduction,
    outcome_state,
    run_experiment,
    run_scenarios,
    write_records,
)


def small_config(**overrides):
    base = dict(demes=4, deme_size=10, selection=0.1, env_rate=2.0, migration=1.0,
                scenario="anticorrelated", horizon=1.0)
    base.update(overrides)
    return MoranConfig(**base)


class TestConfig:
    def test_paper_scale_rates(self):
        cfg = MoranConfig(demes=100, deme_size=400, selection=0.1, env_rate=10.0,
                          migration=1.0, scenario="anticorrelated", horizon=1.0)
        assert cfg.neutral_rate == 79_800  # C(400, 2)
        assert cfg.selective_rate == pytest.approx(40.0)  # s * N_d
        assert cfg.migration_rate == pytest.approx(400.0)  # m * N_d

    @pytest.mark.parametrize(
        "overrides",
        [
            {"demes": 1},
            {"deme_size": 1},
            {"selection": 1.5},
            {"scenario": "windy"},
            {"horizon": None},
            {"horizon": -1.0},
            {"record_every": 10, "record_dt": 0.1},
        ],
    )
    def test_invalid(self, overrides):
        with pytest.raises(ConfigError):
            small_config(**overrides)

    def test_two_deme_single_pair(self):
        cfg = small_config(demes=2)
        assert cfg.pairs == [(0, 1)]
        assert len(small_config(demes=5).pairs) == 5


class TestEventClock:
    def test_degenerate_race_all_neutral(self):
        cfg = small_config(demes=2, selection=0.0, migration=0.0, env_rate=0.0)
        clock = EventClock(cfg, RngContract(1))
        last = 0.0
        for _ in range(50):
            ev = clock.next_event()
            assert ev.kind == "neutral"
            assert ev.time > last
            last = ev.time

    def test_all_rates_zero_signals_completion(self):
        cfg = small_config(demes=2, selection=0.0, migration=0.0, env_rate=0.0)
        clock = EventClock(cfg, RngContract(2))
        clock.times[:] = np.inf  # no live entries remain
        assert clock.next_event() is None

    def test_mixed_kinds_appear(self):
        cfg = small_config()
        clock = EventClock(cfg, RngContract(3))
        kinds = {clock.next_event().kind for _ in range(2000)}
        assert kinds == {"neutral", "selective", "migration", "environment"}


class TestApplyReproduction:
    def test_homogeneous_pair_unchanged(self):
        pop = DemePopulation(np.ones(6, dtype=np.int8), np.zeros(6, dtype=np.int32))
        new = apply_reproduction(pop, "selective", -1, outcome_state(RngContract(4)))
        assert new.a_count == 6

    def test_selective_mixed_pair_favours_a_when_env_negative(self):
        # two individuals, one of each type: pair choice is forced
        pop = DemePopulation(np.array([1, 0], dtype=np.int8),
                             np.array([0, 1], dtype=np.int32))
        state = outcome_state(RngContract(5))
        new = apply_reproduction(pop, "selective", -1, state)
        assert new.a_count == 2
        # the surviving pair carries the a-parent's origin label
        assert set(new.origins.tolist()) == {0}

    def test_selective_mixed_pair_favours_big_a_when_env_positive(self):
        pop = DemePopulation(np.array([1, 0], dtype=np.int8),
                             np.array([0, 1], dtype=np.int32))
        new = apply_reproduction(pop, "selective", 1, outcome_state(RngContract(6)))
        assert new.a_count == 0
        assert set(new.origins.tolist()) == {1}

    def test_selective_with_selection_disabled_is_neutral(self):
        # the neutral scenario keeps selective events but ignores the
        # favoured-type rule: outcomes are the potential-parent coin
        ups = 0
        n = 2000
        for i in range(n):
            pop = DemePopulation(np.array([1, 0], dtype=np.int8),
                                 np.array([0, 1], dtype=np.int32))
            new = apply_reproduction(pop, "selective", -1,
                                     outcome_state(RngContract(1000 + i)),
                                     selection_active=False)
            ups += new.a_count == 2
        assert abs(ups / n - 0.5) <= 3.0 * np.sqrt(0.25 / n)

    def test_neutral_mixed_pair_symmetric(self):
        ups = 0
        n = 2000
        for i in range(n):
            pop = DemePopulation(np.array([1, 0], dtype=np.int8),
                                 np.array([0, 1], dtype=np.int32))
            new = apply_reproduction(pop, "neutral", -1,
                                     outcome_state(RngContract(5000 + i)))
            ups += new.a_count == 2
        assert abs(ups / n - 0.5) <= 3.0 * np.sqrt(0.25 / n)

    def test_size_conserved(self):
        pop = DemePopulation(np.array([1, 0, 1, 0, 1], dtype=np.int8),
                             np.arange(5, dtype=np.int32))
        new = apply_reproduction(pop, "neutral", 1, outcome_state(RngContract(7)))
        assert new.types.size == 5

    def test_undersized_deme_rejected(self):
        pop = DemePopulation(np.ones(1, dtype=np.int8), np.zeros(1, dtype=np.int32))
        with pytest.raises(ConfigError):
            apply_reproduction(pop, "neutral", 1, outcome_state(RngContract(8)))


class TestApplyMigration:
    def test_forced_exchange(self):
        all_a = DemePopulation(np.ones(8, dtype=np.int8), np.zeros(8, dtype=np.int32))
        all_big_a = DemePopulation(np.zeros(8, dtype=np.int8), np.ones(8, dtype=np.int32))
        new1, new2 = apply_migration(all_a, all_big_a, outcome_state(RngContract(9)))
        assert new1.a_count == 7 and new2.a_count == 1

    def test_total_count_conserved(self):
        rng = np.random.default_rng(10)
        for i in range(50):
            p1 = DemePopulation(rng.integers(0, 2, 8).astype(np.int8),
                                np.zeros(8, dtype=np.int32))
            p2 = DemePopulation(rng.integers(0, 2, 8).astype(np.int8),
                                np.ones(8, dtype=np.int32))
            before = p1.a_count + p2.a_count
            n1, n2 = apply_migration(p1, p2, outcome_state(RngContract(100 + i)))
            assert n1.a_count + n2.a_count == before

    def test_identical_compositions_keep_type_histograms(self):
        types = np.array([1, 1, 0, 0], dtype=np.int8)
        p1 = DemePopulation(types.copy(), np.zeros(4, dtype=np.int32))
        p2 = DemePopulation(types.copy(), np.ones(4, dtype=np.int32))
        counts = set()
        for i in range(40):
            n1, n2 = apply_migration(p1, p2, outcome_state(RngContract(200 + i)))
            counts.add((n1.a_count, n2.a_count))
        assert all(c1 + c2 == 4 for c1, c2 in counts)


class TestApplyEnvironment:
    def test_constant_unchanged(self):
        env = np.array([1, 1, -1, -1], dtype=np.int8)
        out = apply_environment("constant", env, RngContract(11).xoshiro_state("environment"))
        assert np.array_equal(out, env)

    def test_correlated_all_equal(self):
        env = np.array([1, -1, 1, -1], dtype=np.int8)
        for i in range(20):
            out = apply_environment("correlated", env,
                                    RngContract(300 + i).xoshiro_state("environment"))
            assert np.all(out == out[0])

    def test_anticorrelated_halves_opposite(self):
        env = np.ones(5, dtype=np.int8)
        for i in range(20):
            out = apply_environment("anticorrelated", env,
                                    RngContract(400 + i).xoshiro_state("environment"))
            assert np.all(out[:3] == out[0]) and np.all(out[3:] == -out[0])

    def test_draw_consumed_in_every_scenario(self):
        # the stream advances identically whether or not the field changes
        s1 = RngContract(12).xoshiro_state("environment")
        s2 = RngContract(12).xoshiro_state("environment")
        env = np.ones(4, dtype=np.int8)
        apply_environment("constant", env, s1)
        apply_environment("correlated", env, s2)
        assert np.array_equal(s1, s2)


class TestRunExperiment:
    def test_record_partition_and_sizes(self):
        cfg = small_config(record_dt=0.25, horizon=1.0)
        res = run_experiment(cfg, RngContract(13))
        assert res.final_types.shape == (4, 10)
        assert np.allclose(res.times, np.arange(0, 1.01, 0.25))
        sums = res.origin_prop.sum(axis=2)
        assert np.max(np.abs(sums - 1.0)) <= 1e-12
        # per-deme origin totals across all demes conserve beta * N_d
        assert res.origin_prop[-1].sum() * cfg.deme_size == pytest.approx(40.0)

    def test_initial_record_structure(self):
        cfg = small_config(record_every=50)
        res = run_experiment(cfg, RngContract(14))
        assert res.times[0] == 0.0
        # at t=0 every deme is fully its own origin
        assert np.array_equal(res.origin_prop[0], np.eye(4))

    def test_neutral_martingale(self):
        cfg = small_config(demes=5, deme_size=20, scenario="neutral", horizon=2.0,
                           p0=0.5)
        finals = np.empty(400)
        base = RngContract(15)
        for i in range(400):
            finals[i] = run_experiment(cfg, base.replicate(i)).final_types.mean()
        se = finals.std(ddof=1) / np.sqrt(len(finals))
        assert abs(finals.mean() - 0.5) <= 3.0 * se

    def test_fixation_probability_tracks_p0(self):
        cfg = MoranConfig(demes=2, deme_size=10, selection=0.1, env_rate=5.0,
                          migration=1.0, scenario="neutral", horizon=None,
                          p0=0.3, init="fraction", stop_on_fixation=True)
        base = RngContract(16)
        fixed = [run_experiment(cfg, base.replicate(i)).fixed for i in range(600)]
        assert all(f in ("a", "A") for f in fixed)
        frac = np.mean([f == "a" for f in fixed])
        assert abs(frac - 0.3) <= 3.5 * np.sqrt(0.3 * 0.7 / 600)

    def test_deterministic(self):
        cfg = small_config(log_events=True)
        a = run_experiment(cfg, RngContract(17))
        b = run_experiment(cfg, RngContract(17))
        assert np.array_equal(a.final_types, b.final_types)
        assert np.array_equal(a.event_t, b.event_t)

    def test_scenarios_share_event_streams(self):
        cfg = small_config(log_events=True, horizon=2.0)
        outs = run_scenarios(cfg, RngContract(18))
        ref = outs["neutral"]
        for name, res in outs.items():
            assert np.array_equal(res.event_t, ref.event_t), name
            assert np.array_equal(res.event_kind, ref.event_kind), name
            assert np.array_equal(res.event_deme, ref.event_deme), name

    def test_records_identical_across_scenarios_without_selection(self):
        cfg = small_config(selection=0.0, record_every=25, horizon=2.0)
        outs = run_scenarios(cfg, RngContract(19))
        ref = outs["neutral"]
        for res in outs.values():
            assert np.array_equal(res.deme_prop, ref.deme_prop)
            assert np.array_equal(res.origin_prop, ref.origin_prop)


class TestWriteRecords:
    def test_saturated_population_rows(self, tmp_path):
        cfg = small_config(p0=1.0, init="fraction", record_every=100, horizon=0.5)
        res = run_experiment(cfg, RngContract(20))
        paths = write_records(res, tmp_path)
        rows = (tmp_path / "proportions.txt").read_text().strip().splitlines()
        first = rows[0].split(" ")
        assert len(first) == cfg.demes + 2
        assert [float(x) for x in first[1:]] == [1.0] * (cfg.demes + 1)
        assert len(paths) == 1 + cfg.demes

    def test_origin_file_initial_structure(self, tmp_path):
        cfg = small_config(record_every=1000)
        res = run_experiment(cfg, RngContract(21))
        write_records(res, tmp_path)
        for g in range(cfg.demes):
            first = (tmp_path / f"origin_{g}.txt").read_text().splitlines()[0].split(" ")
            assert len(first) == cfg.demes + 1
            vals = [float(x) for x in first[1:]]
            assert vals[g] == 1.0 and sum(vals) == 1.0

    def test_partition_rows_sum_to_one(self, tmp_path):
        cfg = small_config(record_dt=0.2, horizon=1.0)
        res = run_experiment(cfg, RngContract(22))
        write_records(res, tmp_path)
        data = [np.loadtxt(tmp_path / f"origin_{g}.txt") for g in range(cfg.demes)]
        stacked = np.stack([d[:, 1:] for d in data])  # (origin, time, deme)
        sums = stacked.sum(axis=0)
        assert np.max(np.abs(sums - 1.0)) <= 1e-12
