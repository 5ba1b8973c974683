import json

import numpy as np
import pytest

from hjblab.cli import main
from hjblab.measures import DiscreteMeasure


@pytest.fixture
def workdir(tmp_path):
    mu = DiscreteMeasure([[0.0], [0.5]], [0.5, 0.5])
    nu = DiscreteMeasure([[-0.3], [0.8]], [0.4, 0.6])
    (tmp_path / "mu.json").write_text(mu.to_json())
    (tmp_path / "nu.json").write_text(nu.to_json())
    (tmp_path / "bad.json").write_text(
        json.dumps({"dim": 1, "points": [[0.0], [1.0]], "weights": [0.5, 0.3]})
    )
    (tmp_path / "model.json").write_text(
        json.dumps(
            {
                "kind": "linear",
                "params": {
                    "A": [[-1.0]],
                    "B": [[0.0]],
                    "s1": [[0.4]],
                    "s2": [[0.3]],
                    "H": [[1.0]],
                },
            }
        )
    )
    (tmp_path / "points.json").write_text(json.dumps([[0.0], [0.5], [-1.0]]))
    (tmp_path / "ucfg.json").write_text(
        json.dumps(
            {
                "cylindrical": {
                    "outer": {"kind": "linear", "coeffs": [1.0]},
                    "inners": [{"kind": "bump", "center": [0.0], "width": 1.0}],
                },
                "bound": 1.0,
                "lip_w1": 1.0,
            }
        )
    )
    return tmp_path


class TestGaugeCli:
    def test_identical_measures_zero(self, workdir, capsys):
        code = main(
            ["gauge", "eval", "--mu", str(workdir / "mu.json"), "--nu", str(workdir / "mu.json")]
        )
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert out["G"] == 0.0
        assert "config_hash" in out and "version" in out

    def test_output_file_atomic_and_deterministic(self, workdir):
        out1 = workdir / "a.json"
        out2 = workdir / "b.json"
        args = [
            "gauge", "eval",
            "--mu", str(workdir / "mu.json"),
            "--nu", str(workdir / "nu.json"),
            "--seed", "7",
        ]
        assert main(args + ["--out", str(out1)]) == 0
        assert main(args + ["--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_malformed_weights_exit_one(self, workdir):
        code = main(
            ["gauge", "eval", "--mu", str(workdir / "bad.json"), "--nu", str(workdir / "mu.json")]
        )
        assert code == 1

    def test_derivs(self, workdir, capsys):
        code = main(
            [
                "gauge", "derivs",
                "--mu", str(workdir / "mu.json"),
                "--nu", str(workdir / "nu.json"),
                "--points", str(workdir / "points.json"),
            ]
        )
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert len(out["first_var"]) == 3


class TestEntropyCli:
    def test_eval(self, workdir, capsys):
        code = main(["entropy", "eval", "--mu", str(workdir / "mu.json"), "--sigma", "0.5"])
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert out["entropy_tilde"] >= 0


class TestTransportCli:
    def test_w2(self, workdir, capsys):
        code = main(
            ["transport", "w2", "--mu", str(workdir / "mu.json"), "--nu", str(workdir / "nu.json")]
        )
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert out["distance"] > 0

    def test_w2sigma(self, workdir, capsys):
        code = main(
            [
                "transport", "w2sigma",
                "--mu", str(workdir / "mu.json"),
                "--nu", str(workdir / "mu.json"),
                "--n-mc", "128",
            ]
        )
        assert code == 0
        assert json.loads(capsys.readouterr().out)["distance"] == 0.0


class TestCheckDerivativesCli:
    def test_gauge_check_passes(self, workdir, capsys):
        code = main(
            [
                "check-derivatives",
                "--target", "gauge",
                "--mu", str(workdir / "mu.json"),
                "--nu", str(workdir / "nu.json"),
            ]
        )
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert out["all_pass"]


class TestFilterCli:
    def test_run_with_kalman_oracle(self, workdir, capsys):
        out = workdir / "run.json"
        code = main(
            [
                "filter", "run",
                "--model", str(workdir / "model.json"),
                "--N", "400",
                "--dt", "0.005",
                "--T", "0.2",
                "--oracle", "kalman",
                "--out", str(out),
            ]
        )
        assert code == 0
        record = json.loads(out.read_text())
        assert record["rmse_vs_kalman"] < 0.2
        assert "kalman_mean0" in record["csv"].splitlines()[0]

    def test_missing_model_exit_one(self, workdir):
        code = main(["filter", "run", "--model", str(workdir / "nope.json")])
        assert code == 1


class TestHjbCli:
    def test_residual(self, workdir, capsys):
        ucfg = {
            "cylindrical": {
                "outer": {"kind": "linear", "coeffs": [0.0], "const": 0.7},
                "inners": [{"kind": "bump", "center": [0.0], "width": 1.0}],
            },
            "cost": {"kind": "tanh-state"},
        }
        (workdir / "u.json").write_text(json.dumps(ucfg))
        code = main(
            [
                "hjb", "residual",
                "--model", str(workdir / "model.json"),
                "--u", str(workdir / "u.json"),
                "--mu", str(workdir / "mu.json"),
            ]
        )
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert np.isfinite(out["residual"])


class TestDoublingCli:
    def test_max_small(self, workdir, capsys):
        code = main(
            [
                "doubling", "max",
                "--u1", str(workdir / "ucfg.json"),
                "--alpha", "0.5",
                "--beta", "0.1",
                "--family", "grid:11",
                "--restarts", "1",
            ]
        )
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert "mu_bar" in out and out["converged"] in (True, False)
