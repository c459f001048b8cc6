import json

import numpy as np
import pytest

from nhkpm.cli import main, validate_config, ConfigError


def write_config(tmp_path, name="config.json", **updates):
    cfg = {
        "model": {"kind": "spin_chain", "L": 4, "J": 1.0, "gamma": 0.0,
                  "Jz": 0.5, "hz": 1.0, "bc": "open"},
        "task": "projected",
        "plan": {"order": 32, "delta": "auto",
                 "grid": {"re": [-0.5, 2.0, 9], "im": [-3.2, 3.2, 15]}},
        "output": str(tmp_path / "out"),
    }
    cfg.update(updates)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path, cfg


class TestConfigValidation:
    def test_unknown_top_level_key(self, tmp_path):
        path, _ = write_config(tmp_path, banana=1)
        assert main(["run", str(path)]) == 2

    def test_unknown_nested_key(self):
        with pytest.raises(ConfigError, match="model.flavor"):
            validate_config({"model": {"kind": "spin_chain", "L": 4, "flavor": 1},
                             "task": "validate",
                             "plan": {"order": 4, "grid": {"re": [0, 1, 2], "im": [0, 1, 2]}}})

    def test_bad_task(self):
        with pytest.raises(ConfigError, match="task"):
            validate_config({"model": {"kind": "spin_chain", "L": 4}, "task": "plot"})

    def test_defaults_resolved(self):
        resolved = validate_config({
            "model": {"kind": "spin_chain", "L": 3},
            "task": "validate",
            "plan": {"order": 4, "grid": {"re": [0, 1, 2], "im": [0, 1, 2]}}})
        assert resolved["model"]["J"] == 1.0
        assert resolved["sites"] == [1, 2, 3]
        assert resolved["eig"]["k"] == 4

    def test_site_out_of_range(self):
        with pytest.raises(ConfigError, match="sites"):
            validate_config({
                "model": {"kind": "spin_chain", "L": 3},
                "task": "correlator", "sites": [4],
                "plan": {"order": 4, "grid": {"re": [0, 1, 2], "im": [0, 1, 2]}}})

    def test_parse_error_reports_line(self, tmp_path, capsys):
        bad = tmp_path / "broken.json"
        bad.write_text('{\n  "model": {,}\n}')
        assert main(["run", str(bad)]) == 2
        assert "line 2" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.json")]) == 2


class TestRun:
    def test_validate_task_manifest(self, tmp_path):
        path, _ = write_config(
            tmp_path, task="validate",
            model={"kind": "spin_chain", "L": 4, "J": 1.0, "gamma": 0.0,
                   "Jz": 0.5, "hz": 2.0, "bc": "open"})
        out = tmp_path / "val"
        assert main(["run", str(path), "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "ok"
        gs = manifest["ground_state"]
        assert gs["d_right"] < 1e-3 and gs["d_left"] < 1e-3
        assert manifest["diagnostics"]["validate"]["energy_agreement"] < 1e-8

    def test_projected_outputs_and_schema(self, tmp_path):
        path, _ = write_config(tmp_path)
        out = tmp_path / "out"
        assert main(["run", str(path)]) == 0
        lines = (out / "projected.csv").read_text().splitlines()
        assert lines[0] == "E,site,value"
        first = lines[1].split(",")
        assert len(first) == 3 and first[1] == "1"
        total = (out / "correlator_total.csv").read_text().splitlines()
        assert total[0] == "re_omega,im_omega,re_value,im_value"
        manifest = json.loads((out / "manifest.json").read_text())
        assert set(manifest["outputs"]) == {"projected.csv", "correlator_total.csv"}

    def test_runs_are_bitwise_deterministic(self, tmp_path):
        path, _ = write_config(tmp_path)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["run", str(path), "--out", str(a)]) == 0
        assert main(["run", str(path), "--out", str(b), "--threads", "4"]) == 0
        assert (a / "projected.csv").read_bytes() == (b / "projected.csv").read_bytes()
        assert (a / "correlator_total.csv").read_bytes() == (b / "correlator_total.csv").read_bytes()

    def test_manifest_round_trip(self, tmp_path):
        path, _ = write_config(tmp_path)
        a = tmp_path / "a2"
        assert main(["run", str(path), "--out", str(a)]) == 0
        c = tmp_path / "c2"
        assert main(["run", str(a / "manifest.json"), "--out", str(c)]) == 0
        assert (a / "projected.csv").read_bytes() == (c / "projected.csv").read_bytes()

    def test_override(self, tmp_path):
        path, _ = write_config(tmp_path, task="validate")
        out = tmp_path / "ov"
        assert main(["run", str(path), "--out", str(out),
                     "--override", "model.hz=0.5", "--override", "seed=7"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["resolved_config"]["model"]["hz"] == 0.5
        assert manifest["resolved_config"]["seed"] == 7

    def test_override_unknown_key(self, tmp_path):
        path, _ = write_config(tmp_path)
        assert main(["run", str(path), "--override", "modle.hz=1"]) == 2

    def test_numerical_failure_exit_code(self, tmp_path):
        # deliberately broken scaling: spectrum far outside (-1, 1)
        path, _ = write_config(
            tmp_path, task="dos",
            model={"kind": "hatano_nelson", "L": 6, "t": 1.0, "gamma": 0.2, "bc": "open"},
            plan={"order": 256, "delta": 0.05,
                  "grid": {"re": [-2.0, 2.0, 5], "im": [-0.5, 0.5, 3]}})
        out = tmp_path / "blow"
        assert main(["run", str(path), "--out", str(out)]) == 3
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "error"
        assert manifest["error"]["type"] == "BlowupError"

    def test_dos_task(self, tmp_path):
        path, _ = write_config(
            tmp_path, task="dos",
            model={"kind": "hatano_nelson", "L": 4, "t": 1.0, "gamma": 0.2, "bc": "open"},
            plan={"order": 48, "delta": "auto",
                  "grid": {"re": [-2.8, 2.8, 29], "im": [-1.2, 1.2, 13]}})
        out = tmp_path / "dos"
        assert main(["run", str(path), "--out", str(out)]) == 0
        rows = (out / "dos.csv").read_text().splitlines()
        assert len(rows) == 1 + 29 * 13

    def test_hermitian_sf_task(self, tmp_path):
        path, _ = write_config(
            tmp_path, task="hermitian_sf",
            model={"kind": "spin_chain", "L": 4, "J": 1.0, "gamma": 0.0,
                   "Jz": 0.5, "hz": 0.0, "bc": "open"},
            plan={"order": 64, "delta": "auto",
                  "grid": {"re": [-0.5, 2.2, 15], "im": [-1.0, 1.0, 3]}})
        out = tmp_path / "hsf"
        assert main(["run", str(path), "--out", str(out)]) == 0
        rows = (out / "hermitian_sf.csv").read_text().splitlines()
        assert rows[0] == "E,site,value"
        assert len(rows) == 1 + 15 * 4


class TestBench:
    def test_single_length_reports_raw_time(self, tmp_path):
        cfg = {
            "model": {"kind": "spin_chain", "L": 4, "J": 1.0, "Jz": 0.5,
                      "hz": 1.0, "bc": "open"},
            "task": "bench",
            "bench": {"L_values": [4], "omega": [0.0, 0.23], "site": 1,
                      "order_per_site": 8.0, "repeats": 1},
        }
        path = tmp_path / "bench.json"
        path.write_text(json.dumps(cfg))
        out = tmp_path / "bench_out"
        assert main(["bench", str(path), "--out", str(out)]) == 0
        report = json.loads((out / "bench.json").read_text())
        assert "loglog_slope" not in report
        assert report["points"][0]["seconds"] > 0

    def test_multiple_lengths_fit_slope(self, tmp_path):
        cfg = {
            "model": {"kind": "spin_chain", "L": 4, "J": 1.0, "Jz": 0.5,
                      "hz": 1.0, "bc": "open"},
            "task": "bench",
            "bench": {"L_values": [4, 6, 8], "omega": [0.0, 0.23], "site": 1,
                      "order_per_site": 8.0, "repeats": 2},
        }
        path = tmp_path / "bench.json"
        path.write_text(json.dumps(cfg))
        out = tmp_path / "bench_out2"
        assert main(["bench", str(path), "--out", str(out)]) == 0
        report = json.loads((out / "bench.json").read_text())
        assert "loglog_slope" in report and len(report["points"]) == 3

    def test_order_doubling_doubles_runtime(self):
        import time

        import nhkpm as nk
        from nhkpm.kpm import make_plan, nhkpm_point

        p = nk.SpinChainParams(L=6, J=1.0, gamma=0.0, Jz=0.5, hz=1.0)
        H = nk.build_spin_chain(p)
        gs = nk.smallest_real_eigpair(H)
        op = nk.spin_operator(1, "plus", 6)
        left, right = op @ gs.left, op @ gs.right

        def best_time(order):
            plan = make_plan(H, order=order, shift=gs.value, omega_max=1.5)
            best = np.inf
            for _ in range(5):
                t0 = time.perf_counter()
                nhkpm_point(H, left, right, gs.value + 0.23j, plan)
                best = min(best, time.perf_counter() - t0)
            return best

        t1 = best_time(1024)
        t2 = best_time(2048)
        assert 1.4 <= t2 / t1 <= 2.6

    def test_bench_limits_length(self, tmp_path):
        cfg = {
            "model": {"kind": "spin_chain", "L": 4, "J": 1.0, "bc": "open"},
            "task": "bench",
            "bench": {"L_values": [14]},
        }
        path = tmp_path / "bench.json"
        path.write_text(json.dumps(cfg))
        assert main(["bench", str(path)]) == 2

    def test_bench_subcommand_rejects_other_tasks(self, tmp_path):
        path, _ = write_config(tmp_path, task="validate")
        assert main(["bench", str(path)]) == 2
