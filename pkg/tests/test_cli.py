import json
import subprocess
import sys

import numpy as np
import pytest

from sarqc.tensorio import read_tensor, write_manifest, write_tensor


def run_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "sarqc.cli", *map(str, args)],
        capture_output=True,
        text=True,
    )


def gen_spec(tmp_path, **overrides):
    spec = {
        "layers": 2,
        "d_out": 8,
        "d_in": 16,
        "n": 32,
        "outlier_channels": 2,
        "outlier_scale": 6.0,
        "weight_std": 1.0,
    }
    spec.update(overrides)
    p = tmp_path / "spec.json"
    p.write_text(json.dumps(spec))
    return p


class TestGen:
    def test_deterministic_bytes(self, tmp_path):
        spec = gen_spec(tmp_path)
        for out in ("g1", "g2"):
            assert run_cli("gen", "--spec", spec, "--out", tmp_path / out, "--seed", 5).returncode == 0
        for f in sorted((tmp_path / "g1").iterdir()):
            assert f.read_bytes() == (tmp_path / "g2" / f.name).read_bytes()

    def test_generated_manifest_quantizes(self, tmp_path):
        spec = gen_spec(tmp_path)
        assert run_cli("gen", "--spec", spec, "--out", tmp_path / "d", "--seed", 1).returncode == 0
        r = run_cli(
            "quantize", "--manifest", tmp_path / "d" / "manifest.json",
            "--method", "rtn", "--bits", 4, "--group-size", 8, "--mode", "asym",
            "--out", tmp_path / "q",
        )
        assert r.returncode == 0, r.stderr
        report = json.loads((tmp_path / "q" / "report.json").read_text())
        assert len(report["layers"]) == 2

    def test_default_calibration_size_is_128(self, tmp_path):
        p = tmp_path / "spec.json"
        p.write_text(json.dumps({"layers": 1, "d_out": 4, "d_in": 8}))
        assert run_cli("gen", "--spec", p, "--out", tmp_path / "d", "--seed", 0).returncode == 0
        doc = json.loads((tmp_path / "d" / "manifest.json").read_text())
        assert doc["layers"][0]["n"] == 128


def lossless_manifest(tmp_path):
    # weights already on the symmetric 4-bit grid with per-row max 7
    rng = np.random.default_rng(3)
    w = rng.integers(-7, 8, size=(4, 8)).astype(np.float64)
    w[:, 0] = 7.0
    x = rng.standard_normal((8, 16))
    write_tensor(tmp_path / "w.sqt", w)
    write_tensor(tmp_path / "x.sqt", x)
    entry = {"layer_id": "l0", "weights": "w.sqt", "calib": "x.sqt", "d_out": 4, "d_in": 8, "n": 16}
    write_manifest(tmp_path / "m.json", [entry], {})
    return w


class TestQuantize:
    def test_rtn_lossless_layer_bytes(self, tmp_path):
        lossless_manifest(tmp_path)
        r = run_cli(
            "quantize", "--manifest", tmp_path / "m.json", "--method", "rtn",
            "--bits", 4, "--group-size", "per_channel", "--mode", "sym",
            "--out", tmp_path / "q",
        )
        assert r.returncode == 0, r.stderr
        assert (tmp_path / "q" / "l0.dequant.sqt").read_bytes() == (tmp_path / "w.sqt").read_bytes()

    def test_gptq_equals_gbs_at_lambda_zero(self, tmp_path):
        rng = np.random.default_rng(4)
        w = rng.standard_normal((6, 12))
        x = rng.standard_normal((12, 24))
        write_tensor(tmp_path / "w.sqt", w)
        write_tensor(tmp_path / "x.sqt", x)
        entry = {"layer_id": "l0", "weights": "w.sqt", "calib": "x.sqt", "d_out": 6, "d_in": 12, "n": 24}
        write_manifest(tmp_path / "m.json", [entry], {})
        common = ["--manifest", tmp_path / "m.json", "--bits", 4, "--group-size", 4, "--mode", "asym"]
        assert run_cli("quantize", *common, "--method", "gptq", "--out", tmp_path / "a").returncode == 0
        assert run_cli(
            "quantize", *common, "--method", "sarqc-gbs", "--lambda", 0, "--out", tmp_path / "b"
        ).returncode == 0
        for name in ("codes", "scales", "zeros", "dequant"):
            assert (tmp_path / "a" / f"l0.{name}.sqt").read_bytes() == (tmp_path / "b" / f"l0.{name}.sqt").read_bytes()
        ra = json.loads((tmp_path / "a" / "report.json").read_text())["layers"][0]["losses"]
        rb = json.loads((tmp_path / "b" / "report.json").read_text())["layers"][0]["losses"]
        assert ra["recon"] == rb["recon"] and ra["drift"] == rb["drift"]

    def test_sarqc_gs_defaults_select_from_paper_grids(self, tmp_path):
        rng = np.random.default_rng(5)
        w = rng.standard_normal((4, 8)) * 3
        w[:, 0] *= 8
        x = rng.standard_normal((8, 20))
        write_tensor(tmp_path / "w.sqt", w)
        write_tensor(tmp_path / "x.sqt", x)
        entry = {"layer_id": "l0", "weights": "w.sqt", "calib": "x.sqt", "d_out": 4, "d_in": 8, "n": 20}
        write_manifest(tmp_path / "m.json", [entry], {})
        r = run_cli(
            "quantize", "--manifest", tmp_path / "m.json", "--method", "sarqc-gs",
            "--bits", 4, "--group-size", "per_channel", "--mode", "sym", "--out", tmp_path / "q",
        )
        assert r.returncode == 0, r.stderr
        layer = json.loads((tmp_path / "q" / "report.json").read_text())["layers"][0]
        assert layer["chosen_alpha"] in [k / 20 for k in range(21)]
        assert layer["chosen_lambda"] in [k / 10 for k in range(1, 11)]

    def test_replay_from_config_echo(self, tmp_path):
        spec = gen_spec(tmp_path, layers=2)
        assert run_cli("gen", "--spec", spec, "--out", tmp_path / "d", "--seed", 2).returncode == 0
        args = [
            "quantize", "--manifest", tmp_path / "d" / "manifest.json",
            "--method", "sarqc-gbs", "--bits", 4, "--group-size", 8, "--mode", "asym",
            "--seed", 9, "--out", tmp_path / "q1",
        ]
        assert run_cli(*args).returncode == 0
        cfg = json.loads((tmp_path / "q1" / "report.json").read_text())["config"]
        replay = [
            "quantize", "--manifest", cfg["manifest"], "--method", cfg["method"],
            "--bits", cfg["bits"], "--group-size", cfg["group_size"], "--mode", cfg["mode"],
            "--block", cfg["block"], "--saliency", cfg["saliency"],
            "--val-fraction", cfg["val_fraction"], "--seed", cfg["seed"],
            "--jobs", cfg["jobs"], "--out", tmp_path / "q2",
        ]
        assert run_cli(*replay).returncode == 0
        for f in sorted((tmp_path / "q1").glob("*.sqt")):
            assert f.read_bytes() == (tmp_path / "q2" / f.name).read_bytes()

    def test_manifest_validation_fails_before_compute(self, tmp_path):
        write_tensor(tmp_path / "w.sqt", np.zeros((2, 3)))
        write_tensor(tmp_path / "x.sqt", np.zeros((3, 4)))
        entry = {"layer_id": "l0", "weights": "w.sqt", "calib": "x.sqt", "d_out": 2, "d_in": 7, "n": 4}
        write_manifest(tmp_path / "m.json", [entry], {})
        r = run_cli("quantize", "--manifest", tmp_path / "m.json", "--method", "rtn", "--out", tmp_path / "q")
        assert r.returncode == 3
        assert not (tmp_path / "q" / "report.json").exists()

    def test_unknown_method_exits_2(self, tmp_path):
        lossless_manifest(tmp_path)
        r = run_cli("quantize", "--manifest", tmp_path / "m.json", "--method", "magic", "--out", tmp_path / "q")
        assert r.returncode == 2


class TestSweep:
    SPEC = {"d_out": 8, "d_in": 12, "outlier_channels": 2, "outlier_scale": 6.0,
            "n_calib": 16, "n_heldout": 32, "corr_strength": 2.0}

    def test_single_record(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps(self.SPEC))
        r = run_cli(
            "sweep", "--spec", p, "--method", "sarqc-gbs", "--lambda-grid", "0.5",
            "--seeds", 1, "--bits", 4, "--group-size", 4, "--mode", "asym",
            "--out", tmp_path / "out.csv",
        )
        assert r.returncode == 0, r.stderr
        lines = (tmp_path / "out.csv").read_text().strip().splitlines()
        assert lines[0] == "lambda,gamma,recon,sar,drift,heldout_risk,method,seed"
        assert len(lines) == 2

    def test_rerun_byte_identical(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps(self.SPEC))
        for name in ("a.csv", "b.csv"):
            assert run_cli(
                "sweep", "--spec", p, "--method", "sarqc-gbs", "--lambda-grid", "0,0.5,1.0",
                "--seeds", 2, "--seed", 3, "--bits", 4, "--group-size", 4, "--mode", "asym",
                "--out", tmp_path / name,
            ).returncode == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_requires_exactly_one_source(self, tmp_path):
        r = run_cli("sweep", "--method", "sarqc-gbs", "--out", tmp_path / "o.csv")
        assert r.returncode == 2

    def test_manifest_mode(self, tmp_path):
        spec = gen_spec(tmp_path, layers=2, d_in=12, n=24)
        assert run_cli("gen", "--spec", spec, "--out", tmp_path / "d", "--seed", 4).returncode == 0
        r = run_cli(
            "sweep", "--manifest", tmp_path / "d" / "manifest.json", "--method", "sarqc-gbs",
            "--lambda-grid", "0,0.5", "--bits", 4, "--group-size", 4, "--mode", "asym",
            "--seed", 4, "--out", tmp_path / "m.csv",
        )
        assert r.returncode == 0, r.stderr
        lines = (tmp_path / "m.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 2 * 2  # header + layers x lambdas


class TestVerify:
    def test_zero_trials_invalid(self, tmp_path):
        r = run_cli("verify", "--suite", "compensation", "--trials", 0, "--out", tmp_path / "v.json")
        assert r.returncode == 2

    def test_all_suites_pass(self, tmp_path):
        r = run_cli("verify", "--suite", "all", "--trials", 20, "--out", tmp_path / "v.json")
        assert r.returncode == 0, r.stderr
        doc = json.loads((tmp_path / "v.json").read_text())
        assert set(doc["suites"]) == {"compensation", "supportedness", "hoeffding", "gptq-equiv"}
        assert all(s["passed"] for s in doc["suites"].values())

    def test_compensation_suite_passes(self, tmp_path):
        r = run_cli("verify", "--suite", "compensation", "--trials", 50, "--out", tmp_path / "v.json")
        assert r.returncode == 0, r.stderr
        doc = json.loads((tmp_path / "v.json").read_text())
        assert doc["suites"]["compensation"]["passed"]

    def test_fault_injection_fails_with_counterexample(self, tmp_path):
        r = run_cli(
            "verify", "--suite", "compensation", "--trials", 20,
            "--inject-fault", "--out", tmp_path / "v.json",
        )
        assert r.returncode == 1
        doc = json.loads((tmp_path / "v.json").read_text())
        suite = doc["suites"]["compensation"]
        assert not suite["passed"]
        assert suite["counterexample"] is not None


class TestExitCodes:
    def test_numerical_failure_maps_to_4(self, tmp_path, monkeypatch):
        from sarqc import cli
        from sarqc.linalg import NumericalFailure

        lossless_manifest(tmp_path)

        def boom(entry, method, scheme, args):
            raise NumericalFailure("synthetic failure in layer l0")

        monkeypatch.setattr(cli, "_quantize_one", boom)
        rc = cli.main(
            ["quantize", "--manifest", str(tmp_path / "m.json"), "--method", "rtn", "--out", str(tmp_path / "q")]
        )
        assert rc == 4

    def test_missing_manifest_maps_to_3(self, tmp_path):
        r = run_cli("quantize", "--manifest", tmp_path / "missing.json", "--method", "rtn", "--out", tmp_path / "q")
        assert r.returncode == 3
