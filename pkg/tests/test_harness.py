import csv
import json
import os
import sys

import numpy as np
import pytest

from stmp.cli import main as cli_main
from stmp.harness import (
    ConfigError,
    ExperimentConfig,
    run_experiment,
    run_se,
    run_single_seed,
    write_outputs,
)

STUB = os.path.join(os.path.dirname(__file__), "stub_denoiser.py")

BASE = {
    "prior": {"kind": "gaussian", "mean": 0.0, "variance": 1.0},
    "operator": {"kind": "dct", "n_cols": 512},
    "sampling_ratio": 0.5,
    "noise_std": 0.1,
    "algorithm": "stmp",
    "seeds": [0, 1],
    "max_iters": 30,
}


def make_cfg(**overrides) -> ExperimentConfig:
    d = dict(BASE)
    d.update(overrides)
    return ExperimentConfig(**d)


def write_cfg(tmp_path, **overrides) -> str:
    d = dict(BASE)
    d.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(d))
    return str(path)


class TestConfigValidation:
    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigError, match="unknown config fields"):
            ExperimentConfig.from_json(json.dumps(dict(BASE, bogus=1)))

    def test_field_level_messages(self):
        with pytest.raises(ConfigError, match="sampling_ratio"):
            make_cfg(sampling_ratio=1.5)
        with pytest.raises(ConfigError, match="operator.kind"):
            make_cfg(operator={"kind": "dft", "n_cols": 512})
        with pytest.raises(ConfigError, match="prior"):
            make_cfg(prior={"kind": "cauchy"})
        with pytest.raises(ConfigError, match="damping"):
            make_cfg(damping=0.0)
        with pytest.raises(ConfigError, match="hadamard"):
            make_cfg(operator={"kind": "hadamard", "n_cols": 500})

    def test_quantizer_requires_qstmp(self):
        with pytest.raises(ConfigError, match="quantizer"):
            make_cfg(quantizer={"bits": 1})
        with pytest.raises(ConfigError, match="quantizer"):
            make_cfg(algorithm="qstmp")
        make_cfg(algorithm="qstmp", quantizer={"bits": 1})

    def test_external_backend_needs_address(self):
        with pytest.raises(ConfigError, match="denoiser.address"):
            make_cfg(denoiser={"backend": "external"})

    def test_fitted_backend_needs_existing_files(self):
        with pytest.raises(ConfigError, match="model_first"):
            make_cfg(denoiser={"backend": "fitted", "model_first": "/nope", "model_second": "/nope"})


class TestRunExperiment:
    def test_gaussian_smoke_matches_se_fixed_point(self):
        import time

        cfg = make_cfg(
            operator={"kind": "dct", "n_cols": 4096},
            seeds=list(range(5)),
            rel_change_tol=1e-8,
        )
        started = time.perf_counter()
        result = run_experiment(cfg)
        elapsed = time.perf_counter() - started
        assert elapsed < 5.0
        group = result["groups"][0]
        se_fp = group["se"].fixed_point
        predicted_nmse = se_fp["mse"] / 1.0  # unit-variance prior
        mean_nmse = group["aggregate"]["mean_nmse"]
        assert abs(mean_nmse - predicted_nmse) / predicted_nmse < 0.05
        assert group["aggregate"]["all_converged"]

    def test_reproducible_from_config_and_seed(self):
        cfg = make_cfg()
        a = run_single_seed(cfg, 3)
        b = run_single_seed(cfg, 3)
        assert a.nmse == b.nmse
        assert a.trace["v_B_pri"] == b.trace["v_B_pri"]

    def test_fixed_operator_seed_reused_across_seeds(self):
        cfg = make_cfg(operator={"kind": "dct", "n_cols": 512, "seed": 7})
        a = run_single_seed(cfg, 0)
        b = run_single_seed(cfg, 1)
        assert a.nmse != b.nmse  # different signal/noise draws

    def test_workers_match_serial(self):
        cfg = make_cfg(seeds=[0, 1, 2])
        serial = run_experiment(cfg, workers=1)
        parallel = run_experiment(cfg, workers=3)
        for rs, rp in zip(serial["groups"][0]["records"], parallel["groups"][0]["records"]):
            assert rs.seed == rp.seed
            assert rs.nmse == rp.nmse

    def test_external_backend_matches_analytic(self):
        cfg_ext = make_cfg(
            operator={"kind": "dct", "n_cols": 128},
            seeds=[0],
            denoiser={"backend": "external", "address": [sys.executable, STUB, "ok"]},
        )
        cfg_ana = make_cfg(operator={"kind": "dct", "n_cols": 128}, seeds=[0])
        r_ext = run_single_seed(cfg_ext, 0)
        r_ana = run_single_seed(cfg_ana, 0)
        assert abs(r_ext.nmse - r_ana.nmse) < 1e-6

    def test_env_var_overrides_external_address(self, monkeypatch):
        from stmp.harness import ENV_EXTERNAL_ADDRESS, _external_target

        cfg = make_cfg(
            operator={"kind": "dct", "n_cols": 128},
            denoiser={"backend": "external", "address": "unreachable:1"},
        )
        monkeypatch.setenv(ENV_EXTERNAL_ADDRESS, "override-host:7040")
        assert _external_target(cfg) == ("tcp", "override-host", 7040)

    def test_fitted_backend_loads_saved_models(self, tmp_path):
        from stmp.score_matching import FeatureSpec, NoiseSchedule, fit_linear_score

        prior = {"kind": "gaussian", "mean": 0.0, "variance": 1.0}
        from stmp.priors import prior_from_dict

        sigmas = tuple(np.geomspace(0.05, 2.0, 16))
        first, second = fit_linear_score(
            prior_from_dict(prior), NoiseSchedule(sigmas=sigmas), FeatureSpec("polynomial", 1), 50_000, 0
        )
        p1 = tmp_path / "first.json"
        p2 = tmp_path / "second.json"
        p1.write_text(first.to_json())
        p2.write_text(second.to_json())
        cfg = make_cfg(
            prior=prior,
            operator={"kind": "dct", "n_cols": 512},
            seeds=[0],
            denoiser={"backend": "fitted", "model_first": str(p1), "model_second": str(p2)},
        )
        fitted = run_single_seed(cfg, 0)
        analytic = run_single_seed(make_cfg(prior=prior, operator={"kind": "dct", "n_cols": 512}, seeds=[0]), 0)
        gap_db = abs(10 * np.log10(fitted.nmse) - 10 * np.log10(analytic.nmse))
        assert gap_db < 0.5


class TestOutputs:
    def test_csv_schema_and_row_groups(self, tmp_path):
        cfg = make_cfg(
            operator={"kind": "dct", "n_cols": 256},
            seeds=[0, 1],
            sweep={"param": "sampling_ratio", "values": [0.2, 0.5, 0.8]},
        )
        result = run_experiment(cfg)
        paths = write_outputs(str(tmp_path), result)
        with open(paths["trace"], newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["iter", "v_A_pri", "v_B_pri", "v_B_post", "nmse", "se_mse"]
        resets = sum(1 for r in rows[1:] if r[0] == "0")
        assert resets == 6  # 3 sweep values x 2 seeds
        assert os.path.exists(paths["results"])
        assert os.path.exists(paths["se"])
        payload = json.load(open(paths["results"]))
        assert [g["sweep_value"] for g in payload["groups"]] == [0.2, 0.5, 0.8]

    def test_se_json_deterministic(self, tmp_path):
        cfg = make_cfg()
        blobs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            traces = run_se(cfg)
            out.mkdir()
            path = out / "se.json"
            path.write_text(json.dumps(traces, indent=2, sort_keys=True))
            blobs.append(path.read_bytes())
        assert blobs[0] == blobs[1]


class TestCli:
    def test_run_exit_codes(self, tmp_path):
        good = write_cfg(tmp_path, operator={"kind": "dct", "n_cols": 256}, seeds=[0])
        assert cli_main(["run", "--config", good, "--output", str(tmp_path / "o1"), "--quiet"]) == 0
        # starved iteration budget on a slow mixture: convergence fails
        bad_dir = tmp_path / "bad"
        bad_dir.mkdir()
        bad = bad_dir / "config.json"
        bad.write_text(
            json.dumps(
                dict(
                    BASE,
                    prior={"kind": "gmm", "weights": [0.95, 0.05], "means": [0.0, 0.0], "variances": [0.01, 2.0]},
                    operator={"kind": "dct", "n_cols": 256},
                    max_iters=2,
                    rel_change_tol=1e-8,
                    seeds=[0],
                )
            )
        )
        assert cli_main(["run", "--config", str(bad), "--output", str(tmp_path / "o2"), "--quiet"]) == 1

    def test_run_writes_outputs(self, tmp_path):
        cfg = write_cfg(tmp_path, operator={"kind": "dct", "n_cols": 256}, seeds=[0])
        out = tmp_path / "out"
        assert cli_main(["run", "--config", cfg, "--output", str(out), "--quiet"]) == 0
        for name in ("results.json", "trace.csv", "se.json"):
            assert (out / name).exists()

    def test_seed_override(self, tmp_path):
        cfg = write_cfg(tmp_path, operator={"kind": "dct", "n_cols": 256})
        out = tmp_path / "out"
        assert (
            cli_main(
                ["run", "--config", cfg, "--output", str(out), "--quiet", "--seed-override", "5,6,7"]
            )
            == 0
        )
        payload = json.load(open(out / "results.json"))
        assert [r["seed"] for r in payload["groups"][0]["records"]] == [5, 6, 7]

    def test_se_subcommand(self, tmp_path):
        cfg = write_cfg(tmp_path)
        out = tmp_path / "se_out"
        assert cli_main(["se", "--config", cfg, "--output", str(out), "--quiet"]) == 0
        traces = json.load(open(out / "se.json"))
        assert traces[0]["se"]["converged"]

    def test_se_nonconvergence_is_nonzero(self, tmp_path):
        # the crawling bimodal mixture cannot satisfy the SE tolerance
        # in three iterations; the flag must propagate to the exit code
        cfg = write_cfg(
            tmp_path,
            prior={"kind": "gmm", "weights": [0.5, 0.5], "means": [-1.0, 1.0], "variances": [0.04, 0.04]},
            se_max_iters=3,
        )
        out = tmp_path / "se_out"
        assert cli_main(["se", "--config", cfg, "--output", str(out), "--quiet"]) == 1

    def test_sweep_subcommand(self, tmp_path):
        cfg = write_cfg(tmp_path, operator={"kind": "dct", "n_cols": 256}, seeds=[0])
        out = tmp_path / "sweep_out"
        code = cli_main(
            [
                "sweep",
                "--config",
                cfg,
                "--output",
                str(out),
                "--quiet",
                "--param",
                "sampling_ratio",
                "--values",
                "[0.5, 0.8]",
            ]
        )
        assert code == 0
        payload = json.load(open(out / "results.json"))
        assert [g["sweep_value"] for g in payload["groups"]] == [0.5, 0.8]

    def test_qstmp_bits_sweep_ordering(self, tmp_path):
        cfg = write_cfg(
            tmp_path,
            algorithm="qstmp",
            prior={"kind": "gmm", "weights": [0.95, 0.05], "means": [0.0, 0.0], "variances": [0.01, 5.0]},
            operator={"kind": "dct", "n_cols": 2048},
            sampling_ratio=0.8,
            noise_std=0.5,
            quantizer={"bits": 1},
            seeds=[0, 1, 2],
            max_iters=60,
            sweep={"param": "bits", "values": [1, 2, 3]},
        )
        out = tmp_path / "bits_out"
        assert cli_main(["sweep", "--config", cfg, "--output", str(out), "--quiet"]) == 0
        payload = json.load(open(out / "results.json"))
        nmse = [g["aggregate"]["mean_nmse"] for g in payload["groups"]]
        assert nmse[0] >= nmse[1] >= nmse[2]

    def test_conformance_subcommand(self, capsys):
        code = cli_main(
            [
                "conformance",
                "--prior",
                json.dumps({"kind": "gaussian", "mean": 0.0, "variance": 1.0}),
                "--address",
                json.dumps([sys.executable, STUB, "ok"]),
                "--n",
                "32",
                "--requests",
                "50",
            ]
        )
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["passed"] is True

    def test_table_subcommand_builds_and_caches(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        out = tmp_path / "tables"
        assert cli_main(
            ["table", "--config", cfg, "--output", str(out), "--v-min", "1e-3", "--v-max", "1e1"]
        ) == 0
        first = capsys.readouterr().out
        assert "wrote" in first
        assert cli_main(["table", "--config", cfg, "--output", str(out)]) == 0
        second = capsys.readouterr().out
        assert "cache hit" in second

    def test_config_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert cli_main(["run", "--config", str(bad), "--output", str(tmp_path)]) == 2
        assert "config error" in capsys.readouterr().err
