import json

import pandas as pd
import pytest

from cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, load_config, main
from utils import ConfigError

BALLISTIC = {"kind": "dirichlet", "dirichlet": {"dimension_d": 2, "alphas": [2.0, 0.5, 0.5, 0.5]}}


def _write(tmp_path, payload, name="config.json"):
    target = tmp_path / name
    target.write_text(json.dumps(payload))
    return str(target)


def _qn_config(**extra):
    return {"environment": BALLISTIC, "n_grid": [8, 16], "replicates": 5, "master_seed": 3, **extra}


class TestDirichletDiag:
    def test_kappa_and_sufficiency(self, tmp_path):
        env = {"kind": "dirichlet", "dirichlet": {"dimension_d": 2, "alphas": [2, 1, 1, 1]}}
        config = _write(tmp_path, {"environment": env, "draws": 2000})
        out = tmp_path / "out"
        assert main(["dirichlet-diag", "--config", config, "--out", str(out)]) == EXIT_OK

        summary = json.loads((out / "dirichlet-diag_summary.json").read_text())
        assert summary["kappa"] == pytest.approx(7.0)
        assert summary["t_gamma_sufficient"] is False
        moments = pd.read_csv(out / "dirichlet-diag_moments.csv")
        assert len(moments) == 4


class TestQnCurve:
    def test_smoke(self, tmp_path):
        out = tmp_path / "out"
        assert main(["qn-curve", "--config", _write(tmp_path, _qn_config()), "--out", str(out)]) == EXIT_OK
        frame = pd.read_csv(out / "qn-curve_qn_curve.csv")
        assert frame["n"].tolist() == [8, 16]

        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["master_seed"] == 3
        assert "qn-curve_qn_curve.csv" in manifest["files"]
        assert manifest["columns"]["qn-curve_qn_curve.csv"] == ["n", "mean_Qn", "stderr", "replicates"]

    def test_reruns_are_byte_identical(self, tmp_path):
        config = _write(tmp_path, _qn_config())
        for name in ("a", "b"):
            assert main(["qn-curve", "--config", config, "--out", str(tmp_path / name)]) == EXIT_OK
        for filename in ("qn-curve_qn_curve.csv", "qn-curve_summary.json"):
            assert (tmp_path / "a" / filename).read_bytes() == (tmp_path / "b" / filename).read_bytes()

    def test_workers_do_not_change_output(self, tmp_path):
        config = _write(tmp_path, _qn_config())
        assert main(["qn-curve", "--config", config, "--workers", "1", "--out", str(tmp_path / "w1")]) == EXIT_OK
        assert main(["qn-curve", "--config", config, "--workers", "2", "--out", str(tmp_path / "w2")]) == EXIT_OK
        name = "qn-curve_qn_curve.csv"
        assert (tmp_path / "w1" / name).read_bytes() == (tmp_path / "w2" / name).read_bytes()

    def test_seed_override(self, tmp_path):
        out = tmp_path / "out"
        args = ["qn-curve", "--config", _write(tmp_path, _qn_config()), "--seed", "11", "--out", str(out)]
        assert main(args) == EXIT_OK
        assert json.loads((out / "manifest.json").read_text())["master_seed"] == 11


class TestOtherExperiments:
    def test_regen_tail(self, tmp_path):
        payload = {"environment": BALLISTIC, "horizon": 300, "replicates": 4,
                   "direction": {"v_star": [1, 0], "confirm_margin": 2}}
        out = tmp_path / "out"
        assert main(["regen-tail", "--config", _write(tmp_path, payload), "--out", str(out)]) == EXIT_OK
        tau = pd.read_csv(out / "regen-tail_tau1.csv")
        assert tau["replicate"].tolist() == [0, 1, 2, 3]
        blocks = pd.read_csv(out / "regen-tail_blocks.csv")
        assert set(blocks["replicate"]) <= {0, 1, 2, 3}

    def test_joint_regen(self, tmp_path):
        payload = {"environment": BALLISTIC, "horizon": 300, "replicates": 6, "separations": [0, 2],
                   "direction": {"v_star": [1, 0], "confirm_margin": 3}}
        out = tmp_path / "out"
        assert main(["joint-regen", "--config", _write(tmp_path, payload), "--out", str(out)]) == EXIT_OK
        summary = json.loads((out / "joint-regen_summary.json").read_text())
        assert summary["oracle_agreement"] == 6
        lines = (out / "joint-regen_joint_records.jsonl").read_text().splitlines()
        assert len(lines) == 6
        assert len(pd.read_csv(out / "joint-regen_coupling.csv")) == 2

    def test_clt_endpoint(self, tmp_path):
        payload = {"environment": BALLISTIC, "horizon": 40, "envs": 3, "walks_per_env": 30, "velocity": [0.3, 0.0]}
        out = tmp_path / "out"
        assert main(["clt-endpoint", "--config", _write(tmp_path, payload), "--out", str(out)]) == EXIT_OK
        assert len(pd.read_csv(out / "clt-endpoint_normality.csv")) == 3

    def test_quenched_variance(self, tmp_path):
        payload = {"environment": BALLISTIC, "stages": [1, 3], "envs": 4, "walks_per_env": 3, "velocity": [0.3, 0.0]}
        out = tmp_path / "out"
        assert main(["quenched-variance", "--config", _write(tmp_path, payload), "--out", str(out)]) == EXIT_OK
        stages = pd.read_csv(out / "quenched-variance_stages.csv")
        assert stages["bn"].tolist() == [2, 4, 8]


class TestErrors:
    def test_invalid_alphas(self, tmp_path):
        env = {"kind": "dirichlet", "dirichlet": {"dimension_d": 2, "alphas": [1, 0, 1, 1]}}
        config = _write(tmp_path, {"environment": env})
        assert main(["dirichlet-diag", "--config", config, "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_missing_experiment_fields(self, tmp_path):
        config = _write(tmp_path, {"environment": BALLISTIC})
        assert main(["qn-curve", "--config", config, "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_functional_coordinate_outside_dimension(self, tmp_path):
        payload = {"environment": BALLISTIC, "stages": [1, 2], "envs": 4, "walks_per_env": 3,
                   "velocity": [0.3, 0.0], "functional": {"kind": "clipped-endpoint", "coordinate": 2}}
        config = _write(tmp_path, payload)
        assert main(["quenched-variance", "--config", config, "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_experiment_mismatch(self, tmp_path):
        config = _write(tmp_path, _qn_config(experiment="regen-tail"))
        assert main(["qn-curve", "--config", config, "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_missing_file(self, tmp_path):
        assert main(["qn-curve", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("not a directory")
        config = _write(tmp_path, _qn_config())
        assert main(["qn-curve", "--config", config, "--out", str(blocker / "sub")]) == EXIT_RUNTIME

    def test_load_config_rejects_unknown_fields(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(_write(tmp_path, _qn_config(horizn=5)), "qn-curve")
