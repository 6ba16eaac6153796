import hashlib
import functools
import json

import numpy as np
import pytest

from ellrisk import cli
from ellrisk.assess import AssessOptions
from ellrisk.config import (
    ConfigError,
    bundled,
    covariance,
    load_scenario,
    load_scene,
    parse_scenario,
    parse_scene,
    rotation_matrix,
)

SCENARIOS = ["single_obstacle", "four_obstacles_a", "four_obstacles_b", "four_obstacles_c",
             "column_domain_1", "column_domain_2"]


class TestParsing:
    def test_quaternion(self):
        R = rotation_matrix([np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)], 3, "r")
        np.testing.assert_allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-12)

    def test_bad_quaternion(self):
        with pytest.raises(ConfigError, match="unit length"):
            rotation_matrix([1, 1, 0, 0], 3, "robot")

    def test_covariance_forms(self):
        assert covariance(None, 3, "c") is None
        np.testing.assert_array_equal(covariance(0.5, 2, "c"), 0.5 * np.eye(2))
        np.testing.assert_array_equal(covariance([1, 2], 2, "c"), np.diag([1.0, 2.0]))
        with pytest.raises(ConfigError, match="symmetric"):
            covariance([[1, 0.5], [0, 1]], 2, "c")
        with pytest.raises(ConfigError, match="semi-definite"):
            covariance([[1, 2], [2, 1]], 2, "c")

    def test_scene_errors_name_field(self):
        with pytest.raises(ConfigError, match="robot"):
            parse_scene({})
        with pytest.raises(ConfigError, match=r"obstacles\[0\].semi_axes"):
            parse_scene({"robot": {"center": [0, 0, 0], "semi_axes": [1, 1, 1]},
                         "obstacles": [{"center": [1, 0, 0], "semi_axes": [1, 1]}]})
        with pytest.raises(ConfigError, match="epsilon"):
            parse_scene({"robot": {"center": [0, 0], "semi_axes": [1, 1]}, "epsilon": 2})

    def test_json_error_location(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"robot": {\n  "center": [0, 0, 0],,\n}')
        with pytest.raises(ConfigError, match="line 2"):
            load_scene(p)

    def test_planar_scene(self):
        s = parse_scene({"robot": {"center": [0, 0], "semi_axes": [1, 2], "rotation": 0.3},
                         "obstacles": [{"center": [4, 0], "semi_axes": [1, 1]}]})
        assert s.robot.dim == 2 and len(s.obstacles) == 1

    @pytest.mark.parametrize("name", SCENARIOS)
    def test_bundled_scenarios_load(self, name):
        cfg = load_scenario(bundled(name))
        assert cfg.dim == 3 and cfg.obstacles
        assert json.loads(json.dumps(cfg.to_dict()))["name"] == name

    def test_column_domain_has_19_columns(self):
        assert len(load_scenario(bundled("column_domain_1")).obstacles) == 19

    def test_table1_scene(self):
        s = load_scene(bundled("table1"))
        assert s.epsilon == 0.09
        np.testing.assert_allclose(np.diag(s.robot_cov), [0.41, 0.41, 0.21])

    def test_scenario_validation(self):
        doc = json.loads(bundled("single_obstacle").read_text())
        with pytest.raises(ConfigError, match="noise_scale"):
            parse_scenario({**doc, "noise_scale": 0})
        with pytest.raises(ConfigError, match="goal"):
            parse_scenario({**doc, "goal": [0, 1]})


class TestCli:
    def test_prob_table1(self, capsys):
        assert cli.main(["prob", "table1", "--method", "upper_bound"]) == 0
        rec = json.loads(capsys.readouterr().out.splitlines()[0])
        assert rec["method"] == "upper_bound" and rec["epsilon"] == 0.09
        assert rec["feasible"] == (rec["probability"] <= 0.09)

    def test_prob_eps_override(self, capsys):
        cli.main(["prob", "table1", "--method", "exact", "--eps", "0.005"])
        rec = json.loads(capsys.readouterr().out)
        assert rec["epsilon"] == 0.005 and rec["feasible"] is False

    def test_empty_scene(self, tmp_path, capsys):
        p = tmp_path / "s.json"
        p.write_text(json.dumps({"robot": {"center": [0, 0, 0], "semi_axes": [1, 1, 1]},
                                 "obstacles": []}))
        assert cli.main(["prob", str(p)]) == 0
        assert capsys.readouterr().out == ""

    def test_malformed_exit_1(self, tmp_path, capsys):
        p = tmp_path / "s.json"
        p.write_text("{")
        assert cli.main(["prob", str(p)]) == 1
        assert "line 1" in capsys.readouterr().err
        assert cli.main(["prob", str(tmp_path / "missing.json")]) == 1

    def test_not_converged_exit_2(self, tmp_path, monkeypatch, capsys):
        p = tmp_path / "s.json"
        p.write_text(json.dumps({
            "robot": {"center": [0, 0, 0], "semi_axes": [0.2, 0.2, 0.2],
                      "covariance": 0.05},
            "obstacles": [{"center": [1.0, 0, 0], "semi_axes": [0.5, 0.5, 0.5]}]}))
        assert cli.main(["prob", str(p), "--no-fallback"]) == 0
        capsys.readouterr()
        # starving the series of terms forces non-convergence
        monkeypatch.setattr(cli, "AssessOptions", functools.partial(AssessOptions, k_max=2))
        assert cli.main(["prob", str(p), "--no-fallback"]) == 2
        assert "error:" in capsys.readouterr().err
        # with the fallback allowed the same query is answered by sampling
        assert cli.main(["prob", str(p), "--mc-samples", "20000"]) == 0

    def test_bench_degenerate_scene(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps({"robot": {"center": [0, 0, 0], "semi_axes": [1, 1, 1]},
                                 "obstacles": [{"center": [3, 0, 0], "semi_axes": [1, 1, 1]}],
                                 "epsilon": 0.05}))
        out = tmp_path / "b.csv"
        assert cli.main(["bench-table1", str(p), "--out", str(out), "--reps", "2",
                         "--mc-samples", "10000"]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "# schema=1"
        rows = [dict(zip(lines[1].split(","), ln.split(","))) for ln in lines[2:]]
        assert [r["method"] for r in rows] == ["exact", "upper_bound", "mc", "bounding_volume",
                                              "center_point"]
        mc = next(r for r in rows if r["method"] == "mc")
        assert float(mc["stderr"]) == 0.0

    def test_simulate_deterministic(self, tmp_path):
        scen = tmp_path / "scen.json"
        scen.write_text(json.dumps({
            "name": "tiny", "start": [0, 0, 1.4], "goal": [0, 1.5, 1.4],
            "robot": {"semi_axes": [0.18, 0.18, 0.06]},
            "obstacles": [{"center": [0.3, 0.8, 1.4], "semi_axes": [0.2, 0.2, 0.2]}],
            "initial_cov": 0.001, "step_cap": 60,
            "solver": {"population": 16, "elite": 4, "iterations": 3}}))
        digests = []
        for out in ("a", "b"):
            assert cli.main(["simulate", str(scen), "--runs", "2", "--seed", "7",
                             "--out", str(tmp_path / out)]) == 0
            files = sorted((tmp_path / out).iterdir())
            assert [f.name for f in files] == ["metrics.csv", "run_000.csv", "run_001.csv",
                                               "summary.json"]
            digests.append([hashlib.sha256(f.read_bytes()).hexdigest() for f in files])
        assert digests[0] == digests[1]
        summary = json.loads((tmp_path / "a" / "summary.json").read_text())
        assert summary["seed"] == 7 and summary["runs"] == 2

    def test_simulate_single_run_aggregate(self, tmp_path):
        scen = bundled("single_obstacle")
        out = tmp_path / "o"
        assert cli.main(["simulate", str(scen), "--runs", "1", "--out", str(out)]) == 0
        lines = (out / "metrics.csv").read_text().splitlines()
        assert lines[2].split(",")[1:] == lines[3].split(",")[1:]

    def test_unknown_method_exit_1(self, capsys):
        assert cli.main(["prob", "table1", "--method", "magic"]) == 1
