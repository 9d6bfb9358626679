import json

import numpy as np
import pytest

from mzisim.hardware import (
    CalibrationError,
    CalibrationModel,
    HardwareErrorConfig,
    fit_calibration,
    measure_power,
    perturb_input,
    phase_from_voltage,
    simulate_calibration_sweep,
    tap_coupling,
    voltage_from_phase,
)


def linear_model(slope=1.6, offset=0.2, v_max=5.0):
    p = (0.0, 0.0, slope, offset)
    vs = np.linspace(0, v_max, 50)
    q = tuple(np.polyfit(np.polyval(p, vs), vs**2, 3))
    return CalibrationModel(p_coeffs=p, q_coeffs=q, t_amp=0.45, t_offset=0.5,
                            v_range=(0.0, v_max))


class TestCalibrationModel:
    def test_rejects_non_monotone(self):
        with pytest.raises(CalibrationError):
            CalibrationModel(p_coeffs=(0, 0, -1.0, 10.0), q_coeffs=(0, 0, 0, 0),
                             t_amp=0.4, t_offset=0.5, v_range=(0.0, 5.0))

    def test_rejects_short_span(self):
        with pytest.raises(CalibrationError):
            CalibrationModel(p_coeffs=(0, 0, 0.5, 0.0), q_coeffs=(0, 0, 0, 0),
                             t_amp=0.4, t_offset=0.5, v_range=(0.0, 5.0))

    def test_default_synthetic_spans(self):
        m = CalibrationModel.default_synthetic()
        lo, hi = m.phase_span()
        assert hi - lo >= 2 * np.pi

    def test_serialization_roundtrip(self, tmp_path):
        m = CalibrationModel.default_synthetic()
        path = tmp_path / "cal.json"
        m.save(path)
        loaded = CalibrationModel.load(path)
        assert loaded.p_coeffs == m.p_coeffs
        assert loaded.v_range == m.v_range
        # human-readable key-value document
        assert "p_coeffs" in json.loads(path.read_text())


class TestVoltagePhase:
    def test_linear_evaluation(self):
        m = linear_model(slope=1.0, offset=0.0, v_max=7.0)
        assert abs(phase_from_voltage(m, 1.5) - 1.5) < 1e-12

    def test_constant_term(self):
        m = linear_model(slope=1.6, offset=0.7)
        assert abs(phase_from_voltage(m, 0.0) - 0.7) < 1e-12

    def test_out_of_range_rejected(self):
        m = linear_model()
        with pytest.raises(CalibrationError):
            phase_from_voltage(m, 9.0)

    def test_linear_inverse(self):
        m = linear_model(slope=1.0, offset=0.0, v_max=7.0)
        assert abs(voltage_from_phase(m, 2.0) - 2.0) < 1e-9

    def test_wrapped_targets_agree(self):
        m = linear_model()
        v1 = voltage_from_phase(m, 2.0)
        v2 = voltage_from_phase(m, 2.0 + 2 * np.pi)
        th1 = phase_from_voltage(m, v1) % (2 * np.pi)
        th2 = phase_from_voltage(m, v2) % (2 * np.pi)
        assert abs(th1 - th2) < 1e-9

    def test_roundtrip_random_cubic(self):
        rng = np.random.default_rng(2)
        model = CalibrationModel.default_synthetic()
        lo, hi = model.phase_span()
        for _ in range(100):
            theta = rng.uniform(lo, hi)
            v = voltage_from_phase(model, theta)
            back = phase_from_voltage(model, v)
            assert abs((back - theta + np.pi) % (2 * np.pi) - np.pi) < 1e-9


class TestPerturbInput:
    def test_identity_when_disabled(self):
        x = np.array([1.0 + 2.0j, -0.5j])
        out = perturb_input(x, HardwareErrorConfig.ideal(), None)
        np.testing.assert_array_equal(out, x)

    def test_amplitude_error_statistics(self):
        rng = np.random.default_rng(3)
        cfg = HardwareErrorConfig(a_error=0.05)
        x = np.ones(10_000, dtype=complex)
        out = perturb_input(x, cfg, rng)
        ratio = np.abs(out) / np.abs(x) - 1.0
        assert abs(np.std(ratio) - 0.05) < 0.005

    def test_phase_error_statistics(self):
        rng = np.random.default_rng(4)
        cfg = HardwareErrorConfig(p_error=0.05)
        x = np.ones(10_000, dtype=complex)
        out = perturb_input(x, cfg, rng)
        assert abs(np.std(np.angle(out)) - 0.05) < 0.005


class TestMeasurePower:
    def test_exact_when_ideal(self):
        cfg = HardwareErrorConfig.ideal()
        assert measure_power(0.37, 5, cfg, None) == 0.37

    def test_zero_intensity_reads_zero(self):
        cfg = HardwareErrorConfig(snr_db=20.0, seed=1)
        rng = np.random.default_rng(0)
        assert measure_power(0.0, 0, cfg, rng) == 0.0

    def test_negative_intensity_rejected(self):
        with pytest.raises(ValueError):
            measure_power(-1.0, 0, HardwareErrorConfig.ideal(), None)

    def test_snr_calibration_at_reference_intensity(self):
        n = 4
        cfg = HardwareErrorConfig(snr_db=20.0, seed=1, snr_ref_intensity=1.0 / n)
        rng = np.random.default_rng(5)
        readings = np.array([measure_power(1.0 / n, 0, cfg, rng) for _ in range(10_000)])
        snr_db = 10.0 * np.log10((1.0 / n) / np.std(readings))
        assert abs(snr_db - 20.0) < 1.0

    def test_coupling_fixed_per_tap(self):
        cfg = HardwareErrorConfig(tap_coupling_spread=0.05, seed=9)
        assert tap_coupling(cfg, 3) == tap_coupling(cfg, 3)
        assert tap_coupling(cfg, 3) != tap_coupling(cfg, 4)

    def test_seeded_runs_identical(self):
        cfg = HardwareErrorConfig(snr_db=25.0, tap_coupling_spread=0.02, seed=4)
        a = [measure_power(0.3, k, cfg, np.random.default_rng(0)) for k in range(5)]
        b = [measure_power(0.3, k, cfg, np.random.default_rng(0)) for k in range(5)]
        assert a == b


class TestCalibrationSweepAndFit:
    def test_noiseless_sweep_matches_model(self):
        m = linear_model(slope=1.6, offset=0.2)
        sweep = simulate_calibration_sweep(m, 50)
        vs, ts = sweep[:, 0], sweep[:, 1]
        expected = m.t_amp * np.sin(np.polyval(m.p_coeffs, vs)) + m.t_offset
        np.testing.assert_allclose(ts, expected, atol=1e-12)

    def test_sweep_spans_two_pi(self):
        m = CalibrationModel.default_synthetic()
        sweep = simulate_calibration_sweep(m, 100)
        th = np.polyval(m.p_coeffs, sweep[:, 0])
        assert th[-1] - th[0] >= 2 * np.pi

    def test_too_few_points_rejected(self):
        with pytest.raises(CalibrationError):
            simulate_calibration_sweep(CalibrationModel.default_synthetic(), 4)

    def test_noiseless_fit_recovers_truth(self):
        truth = CalibrationModel.default_synthetic()
        sweep = simulate_calibration_sweep(truth, 201)
        fitted = fit_calibration(sweep)
        vs = np.linspace(*truth.v_range, 300)
        err = np.polyval(fitted.p_coeffs, vs) - np.polyval(truth.p_coeffs, vs)
        err = err - 2 * np.pi * np.round(np.mean(err) / (2 * np.pi))
        assert np.sqrt(np.mean(err**2)) < 1e-3

    def test_noisy_fit_median_error(self):
        truth = CalibrationModel.default_synthetic()
        errors = []
        for seed in range(20):
            cfg = HardwareErrorConfig(snr_db=30.0, seed=seed, snr_ref_intensity=0.25)
            rng = np.random.default_rng(seed)
            fitted = fit_calibration(simulate_calibration_sweep(truth, 201, cfg, rng))
            vs = np.linspace(*truth.v_range, 300)
            err = np.polyval(fitted.p_coeffs, vs) - np.polyval(truth.p_coeffs, vs)
            err = err - 2 * np.pi * np.round(np.mean(err) / (2 * np.pi))
            errors.append(np.sqrt(np.mean(err**2)))
        assert np.median(errors) < 0.01

    def test_short_span_rejected(self):
        # half a period of a slow heater: ambiguous branch
        vs = np.linspace(0.0, 1.0, 40)
        ts = 0.45 * np.sin(0.8 * vs) + 0.5
        with pytest.raises(CalibrationError):
            fit_calibration(np.column_stack([vs, ts]))

    def test_phi_sweep_same_form(self):
        m = CalibrationModel.default_synthetic()
        sweep = simulate_calibration_sweep(m, 64, shifter="phi")
        vs, ts = sweep[:, 0], sweep[:, 1]
        expected = m.t_amp * np.sin(np.polyval(m.p_coeffs, vs)) + m.t_offset
        np.testing.assert_allclose(ts, expected, atol=1e-12)


class TestMetaMziOracle:
    def test_mesh_split_ratio_is_sinusoidal_in_theta(self):
        # route light to one MZI and sweep its internal phase; the output
        # split ratio follows a*sin(theta + const) + b exactly
        from mzisim.mesh import MeshTopology, propagate, route_to_mzi, routing_input_port

        topo = MeshTopology.triangular(4)
        target = topo.nodes[3]
        base = route_to_mzi(topo, target)
        port = routing_input_port(target)
        thetas = np.linspace(0, 2 * np.pi, 60, endpoint=False)
        ratios = []
        for th in thetas:
            theta = base.theta.copy()
            theta[target.theta_index] = th
            from mzisim.mesh import MeshPhases

            phases = MeshPhases(theta, base.phi, base.gamma)
            x = np.zeros(4, dtype=complex)
            x[port] = 1.0
            out, _ = propagate(topo, phases, x, "forward")
            powers = np.abs(out) ** 2
            cross = powers[target.top_waveguide + 1]
            ratios.append(cross / powers.sum())
        ratios = np.array(ratios)
        design = np.column_stack([np.ones_like(thetas), np.sin(thetas), np.cos(thetas)])
        resid = ratios - design @ np.linalg.lstsq(design, ratios, rcond=None)[0]
        assert np.max(np.abs(resid)) < 1e-10

    def test_meta_mzi_phi_sweep_is_sinusoidal(self):
        # with the two MZIs bracketing a phi shifter set to 50/50, sweeping
        # phi produces the same single-harmonic split ratio
        from mzisim.mesh import MeshPhases, MeshTopology, propagate

        topo = MeshTopology.triangular(4)
        # pick two MZIs on the same waveguide pair: the first feeds the second
        same_pair = [n for n in topo.nodes if n.top_waveguide == 0]
        feeder, probe = same_pair[0], same_pair[1]
        assert feeder.top_waveguide == probe.top_waveguide
        theta = np.full(topo.n_nodes, np.pi)
        theta[feeder.theta_index] = np.pi / 2
        theta[probe.theta_index] = np.pi / 2
        phis = np.linspace(0, 2 * np.pi, 48, endpoint=False)
        ratios = []
        for ph in phis:
            phi = np.zeros(topo.n_nodes)
            phi[probe.phi_index] = ph
            phases = MeshPhases(theta, phi, np.zeros(4))
            x = np.zeros(4, dtype=complex)
            x[feeder.top_waveguide] = 1.0
            out, _ = propagate(topo, phases, x, "forward")
            powers = np.abs(out) ** 2
            ratios.append(powers[probe.top_waveguide + 1] / powers.sum())
        ratios = np.array(ratios)
        design = np.column_stack([np.ones_like(phis), np.sin(phis), np.cos(phis)])
        resid = ratios - design @ np.linalg.lstsq(design, ratios, rcond=None)[0]
        assert np.max(np.abs(resid)) < 1e-10
