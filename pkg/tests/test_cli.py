"""Config parsing, experiment orchestration, and artefact manifests."""

import numpy as np
import pytest
import yaml

from flucsel import cli, gridio
from flucsel.errors import ConfigError


def write_config(tmp_path, payload, name="config.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(payload))
    return path


MORAN_PAPER_DEFAULTS = {
    "kind": "moran",
    "seed": 1,
    "params": {
        "demes": 100,
        "deme_size": 400,
        "selection": 0.1,
        "env_rate": 10.0,
        "migration": 1.0,
        "scenario": "anticorrelated",
        "horizon": 0.01,
    },
}


class TestParseConfig:
    def test_moran_reference_defaults_valid(self, tmp_path):
        spec = cli.parse_config(write_config(tmp_path, MORAN_PAPER_DEFAULTS))
        assert spec.kind == "moran"
        assert spec.params["deme_size"] == 400

    def test_nonspatial_alpha_bound(self, tmp_path):
        payload = {
            "kind": "nonspatial-scaling",
            "seed": 1,
            "replicates": 100,
            "params": {"levels": [100], "alpha": 0.3, "impact": 1.0,
                       "selection": 1.0, "p0": 0.3, "horizon": 0.5},
        }
        with pytest.raises(ConfigError, match=r"\(0, 1/4\)"):
            cli.parse_config(write_config(tmp_path, payload))

    def test_rescaled_slfv_alpha_bound(self, tmp_path):
        payload = {
            "kind": "slfv-rescaled",
            "seed": 1,
            "replicates": 10,
            "params": {
                "domain": {"dimension": 2, "length": 3.0, "cells": 127},
                "kernel": {"kind": "block", "n_blocks": 2, "rho": -1.0},
                "levels": [4], "alpha": 0.2, "impact": 0.8, "selection": 0.0,
                "radius": 0.3, "horizon": 0.1,
            },
        }
        with pytest.raises(ConfigError, match=r"\(0, 1/6\)"):
            cli.parse_config(write_config(tmp_path, payload))

    def test_unknown_key_named(self, tmp_path):
        payload = dict(MORAN_PAPER_DEFAULTS)
        payload["params"] = dict(payload["params"], mystery=1)
        with pytest.raises(ConfigError, match="mystery"):
            cli.parse_config(write_config(tmp_path, payload))

    def test_zero_replicates_rejected(self, tmp_path):
        payload = dict(MORAN_PAPER_DEFAULTS, replicates=0)
        with pytest.raises(ConfigError, match="replicates"):
            cli.parse_config(write_config(tmp_path, payload))

    def test_all_errors_reported(self, tmp_path):
        payload = {
            "kind": "nonspatial-scaling",
            "seed": 1,
            "replicates": 0,
            "params": {"levels": [100], "alpha": 0.3, "impact": 1.0,
                       "selection": 1.0, "p0": 0.3, "horizon": 0.5, "bogus": 2},
        }
        with pytest.raises(ConfigError) as err:
            cli.parse_config(write_config(tmp_path, payload))
        message = str(err.value)
        assert "3 validation error" in message
        assert "replicates" in message and "bogus" in message and "alpha" in message

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            cli.parse_config(tmp_path / "nope.yaml")


class TestRun:
    def test_duality_routing_and_manifest(self, tmp_path):
        payload = {
            "kind": "duality-nonspatial",
            "seed": 3,
            "replicates": 2000,
            "params": {"impacts": [1.0], "selections": [1.0], "x0s": [0.5],
                       "n0": 2, "horizon": 0.05, "dt": 1e-3},
        }
        spec = cli.parse_config(write_config(tmp_path, payload))
        manifest = cli.run(spec, tmp_path / "out")
        content = manifest.read_text()
        assert "duality_report.csv" in content
        report = (tmp_path / "out" / "duality_report.csv").read_text().splitlines()
        assert report[0] == "lhs,lhs_se,rhs,rhs_se,z_score,pass"

    def test_manifest_checksums_reproducible(self, tmp_path):
        spec = cli.parse_config(write_config(tmp_path, {
            "kind": "sde",
            "seed": 9,
            "replicates": 500,
            "params": {"impact": 1.0, "selection": 1.0, "p0": 0.3,
                       "horizon": 0.1, "dt": 1e-3},
        }))
        m1 = cli.run(spec, tmp_path / "a").read_text()
        m2 = cli.run(spec, tmp_path / "b").read_text()
        assert [line.split()[0] for line in m1.splitlines()] == \
               [line.split()[0] for line in m2.splitlines()]

    def test_moran_scenario_sweep_layout(self, tmp_path):
        payload = {
            "kind": "moran",
            "seed": 4,
            "params": {
                "demes": 4, "deme_size": 10, "selection": 0.1, "env_rate": 2.0,
                "migration": 1.0, "scenario": ["anticorrelated", "neutral"],
                "horizon": 0.5, "record_every": 50, "log_events": True,
            },
        }
        spec = cli.parse_config(write_config(tmp_path, payload))
        cli.run(spec, tmp_path / "out")
        for scenario in ("anticorrelated", "neutral"):
            assert (tmp_path / "out" / scenario / "proportions.txt").exists()
        a = (tmp_path / "out" / "anticorrelated" / "events.txt").read_bytes()
        b = (tmp_path / "out" / "neutral" / "events.txt").read_bytes()
        assert a == b

    def test_spde_artifacts(self, tmp_path):
        payload = {
            "kind": "spde",
            "seed": 5,
            "params": {
                "domain": {"dimension": 1, "length": 8.0, "cells": 16},
                "kernel": {"kind": "block", "n_blocks": 2, "rho": -1.0},
                "impact": 0.5, "selection": 0.5, "radius": 1.0, "dt": 1e-3,
                "horizon": 0.05, "record_dt": 0.05,
                "initial": {"kind": "constant", "value": 0.5},
            },
        }
        spec = cli.parse_config(write_config(tmp_path, payload))
        cli.run(spec, tmp_path / "out")
        times, fields = gridio.read_field_csv(tmp_path / "out" / "fields.csv")
        assert fields.shape[1] == 16
        d, t, values = gridio.read_field_binary(tmp_path / "out" / "final.bin")
        assert d == 1 and values.shape == (16,)
        assert np.allclose(values, fields[-1])


class TestMain:
    def test_simulate_and_verify_exit_codes(self, tmp_path, capsys):
        path = write_config(tmp_path, {
            "kind": "sde",
            "seed": 7,
            "replicates": 200,
            "params": {"impact": 0.8, "selection": 0.5, "p0": 0.4,
                       "horizon": 0.1, "dt": 1e-3},
        })
        assert cli.main(["simulate", str(path), "--out", str(tmp_path / "out")]) == 0
        assert cli.main(["verify", str(path)]) == 0
        out = capsys.readouterr().out
        assert "[PASS]" in out

    def test_bad_config_exit_code(self, tmp_path):
        path = write_config(tmp_path, {"kind": "mystery"})
        assert cli.main(["simulate", str(path)]) == 2


class TestGridIo:
    def test_binary_roundtrip(self, tmp_path):
        values = np.random.default_rng(0).random((8, 8))
        path = tmp_path / "field.bin"
        gridio.write_field_binary(path, 2, 1.25, values)
        d, t, back = gridio.read_field_binary(path)
        assert d == 2 and t == 1.25
        assert np.array_equal(back, values)
        assert path.read_bytes()[:4] == b"FSL1"

    def test_csv_roundtrip(self, tmp_path):
        times = np.array([0.0, 0.5])
        snaps = np.random.default_rng(1).random((2, 4, 4))
        path = tmp_path / "fields.csv"
        gridio.write_field_csv(path, times, snaps)
        t, flat = gridio.read_field_csv(path)
        assert np.array_equal(t, times)
        assert np.array_equal(flat.reshape(2, 4, 4), snaps)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(ConfigError, match="magic"):
            gridio.read_field_binary(path)
