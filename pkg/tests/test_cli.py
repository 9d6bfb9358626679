import json

import numpy as np
import pytest

from mzisim.cli import (
    EXIT_NUMERICAL,
    EnergyParams,
    config_hash,
    energy_estimate,
    gradcheck_report,
    main,
)


class TestEnergyModel:
    def test_analog_unit_energies(self):
        p = EnergyParams(n_modes=4)
        assert energy_estimate(p, "backprop_analog") == 36.0

    def test_digital_unit_energies(self):
        p = EnergyParams(n_modes=4)
        assert energy_estimate(p, "backprop_digital") == 68.0

    def test_inference_unit_energies(self):
        p = EnergyParams(n_modes=4)
        assert energy_estimate(p, "inference") == 8.0

    def test_free_gradient_leaves_io_cost(self):
        p = EnergyParams(n_modes=6, e_grad=0.0, e_inp=2.0, e_meas=3.0)
        assert energy_estimate(p, "backprop_analog") == 6 * (3 * 2.0 + 2 * 3.0)

    def test_closed_forms_random_parameters(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(1, 80))
            ei, em, eg, egd = rng.integers(0, 50, 4)
            p = EnergyParams(n_modes=n, e_inp=float(ei), e_meas=float(em),
                             e_grad=float(eg), e_grad_digital=float(egd))
            assert energy_estimate(p, "inference") == n * (ei + em)
            assert energy_estimate(p, "backprop_analog") == n * n * eg + n * (3 * ei + 2 * em)
            assert energy_estimate(p, "backprop_digital") == 3 * n * n * egd + n * (3 * ei + 2 * em)

    def test_negative_energy_rejected(self):
        with pytest.raises(ValueError):
            EnergyParams(n_modes=4, e_inp=-1.0)

    def test_unknown_scheme_rejected(self):
        with pytest.raises(ValueError):
            energy_estimate(EnergyParams(n_modes=4), "teleport")


class TestGradcheck:
    def test_report_is_tight(self):
        report = gradcheck_report(n_modes=4, n_layers=2, n_examples=2, seed=0)
        assert report["max_relative_error"] < 1e-5


class TestCliCommands:
    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["definitely-not-a-command"])
        assert exc.value.code == 2

    def test_energy_writes_stamped_report(self, tmp_path):
        assert main(["energy", "--out", str(tmp_path), "--seed", "4"]) == 0
        report = json.loads((tmp_path / "energy.json").read_text())
        assert report["backprop_analog"] == 36.0
        assert report["seed"] == 4
        assert len(report["config_hash"]) == 16

    def test_gradcheck_command(self, tmp_path, capsys):
        assert main(["gradcheck", "--out", str(tmp_path), "--seed", "1"]) == 0
        out = capsys.readouterr().out
        assert "max relative error" in out
        report = json.loads((tmp_path / "gradcheck.json").read_text())
        assert report["max_relative_error"] < 1e-5

    def test_train_smoke_and_reproducibility(self, tmp_path):
        cfg = {
            "train": {"iterations": 8, "eval_every": 4, "log_every": 4},
            "dataset": {"n": 60},
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            code = main(["train", "--config", str(cfg_path), "--out", str(out),
                         "--ideal", "--seed", "3"])
            assert code == 0
        assert (out1 / "trainlog.jsonl").read_text() == (out2 / "trainlog.jsonl").read_text()
        final = json.loads((out1 / "final_metrics.json").read_text())
        assert "model_test_accuracy" in final
        assert final["seed"] == 3

    def test_calibrate_command(self, tmp_path):
        cfg = {"hardware": {"snr_db": 30.0}}
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        assert main(["calibrate", "--config", str(cfg_path), "--out", str(tmp_path)]) == 0
        report = json.loads((tmp_path / "calibration_report.json").read_text())
        assert report["rms_phase_error"] < 0.05
        cal = json.loads((tmp_path / "calibration.json").read_text())
        assert "p_coeffs" in cal and "v_range" in cal

    def test_analog_demo_traces(self, tmp_path):
        assert main(["analog-demo", "--out", str(tmp_path), "--ideal"]) == 0
        for sigma in ("1", "0.2"):
            path = tmp_path / f"analog_traces_sigma{sigma}.tsv"
            lines = path.read_text().strip().splitlines()
            assert lines[0].startswith("# config_hash=")
            assert len(lines) == 2 + 64  # header comment, column names, K rows

    def test_noise_sweep_table(self, tmp_path):
        cfg = {
            "noise_sweep": {
                "a_error": [0.0, 0.02],
                "p_error": [0.0, 0.02],
                "snr_db": [None, 20.0],
                "instances": 3,
            },
            "dataset": {"n": 40},
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        assert main(["noise-sweep", "--config", str(cfg_path), "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "noise_sweep.tsv").read_text().strip().splitlines()
        assert lines[0].startswith("# config_hash=")
        assert len(lines) == 2 + 6

    def test_bad_config_exits_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["train", "--config", str(bad), "--out", str(tmp_path)]) == 2

    def test_config_hash_stable(self):
        a = config_hash({"b": 1, "a": [1, 2]})
        b = config_hash({"a": [1, 2], "b": 1})
        assert a == b and len(a) == 16
