import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mzisim.hardware import HardwareErrorConfig
from mzisim.vecio import (
    ReadoutConfig,
    VectorIoError,
    VectorUnitPhases,
    embed_reference,
    four_point_phase,
    phase2vec,
    self_configure_analyzer,
    strip_reference,
    vec2phase,
    _probe_powers,
)


def unit(v):
    v = np.asarray(v, dtype=complex)
    return v / np.linalg.norm(v)


class TestVec2Phase:
    def test_equal_pair(self):
        p = vec2phase(unit([1, 1]))
        assert abs(p.theta[0] - np.pi / 2) < 1e-12
        assert abs(p.phi[0]) < 1e-12

    def test_quarter_phase_pair(self):
        p = vec2phase(unit([1, 1j]))
        assert abs(p.theta[0] - np.pi / 2) < 1e-12
        assert abs(p.phi[0] - np.pi / 2) < 1e-12

    def test_zero_vector_rejected(self):
        with pytest.raises(VectorIoError):
            vec2phase(np.zeros(3, dtype=complex))

    def test_non_unit_rejected(self):
        with pytest.raises(VectorIoError):
            vec2phase(np.array([1.0, 1.0]))

    @pytest.mark.parametrize("n", [2, 3, 5, 9])
    def test_roundtrip_random(self, n):
        rng = np.random.default_rng(n)
        for _ in range(25):
            x = unit(rng.standard_normal(n) + 1j * rng.standard_normal(n))
            y = phase2vec(vec2phase(x))
            np.testing.assert_allclose(y, x * np.exp(-1j * np.angle(x[-1])), atol=1e-10)

    def test_roundtrip_with_zero_components(self):
        x = unit([0.6, 0.0, 0.8])
        y = phase2vec(vec2phase(x))
        np.testing.assert_allclose(y, x, atol=1e-12)

    def test_zero_denominator_forces_bar(self):
        p = vec2phase(unit([1.0, 0.0]))
        assert abs(p.theta[0] - np.pi) < 1e-12
        assert p.phi[0] == 0.0


class TestPhase2Vec:
    def test_all_bar_keeps_top_port(self):
        p = VectorUnitPhases(np.full(3, np.pi), np.zeros(3))
        v = phase2vec(p)
        assert abs(abs(v[0]) - 1.0) < 1e-12
        np.testing.assert_allclose(v[1:], 0.0, atol=1e-12)

    def test_first_cross_moves_to_second_mode(self):
        p = VectorUnitPhases(np.array([0.0, np.pi, np.pi]), np.zeros(3))
        v = phase2vec(p)
        assert abs(abs(v[1]) - 1.0) < 1e-12

    @given(st.integers(2, 8), st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_always_unit_norm(self, n, seed):
        rng = np.random.default_rng(seed)
        p = VectorUnitPhases(rng.uniform(0, np.pi, n - 1), rng.uniform(0, 2 * np.pi, n - 1))
        v = phase2vec(p)
        assert abs(np.linalg.norm(v) - 1.0) < 1e-12
        if abs(v[-1]) > 1e-14:
            assert abs(np.angle(v[-1])) < 1e-12


class TestReferenceArm:
    def test_embed_amplitudes(self):
        x = unit([1, 1, 1, 1])
        e = embed_reference(x)
        assert abs(e[-1] - 0.5) < 1e-12
        np.testing.assert_allclose(e[:4], x * np.sqrt(3) / 2, atol=1e-12)
        assert abs(np.linalg.norm(e) - 1.0) < 1e-12

    def test_strip_inverts_embed(self):
        rng = np.random.default_rng(1)
        x = unit(rng.standard_normal(5) + 1j * rng.standard_normal(5))
        np.testing.assert_allclose(strip_reference(embed_reference(x), 5), x, atol=1e-12)

    def test_strip_removes_global_phase(self):
        x = unit([0.5, 0.5j, -0.5, 0.5])
        e = embed_reference(x) * np.exp(1.3j)
        np.testing.assert_allclose(strip_reference(e, 4), x, atol=1e-12)

    def test_zero_reference_rejected(self):
        y = np.array([1.0, 0.0, 0.0], dtype=complex)
        with pytest.raises(VectorIoError):
            strip_reference(y, 2)

    def test_needs_two_modes(self):
        with pytest.raises(VectorIoError):
            embed_reference(np.array([1.0 + 0j]), 1)


class TestFourPointPhase:
    def test_zero_phase_readings(self):
        assert abs(four_point_phase(1.0, 0.5, 0.0, 0.5)) < 1e-12

    def test_negative_quarter_readings(self):
        assert abs(four_point_phase(0.5, 1.0, 0.5, 0.0) + np.pi / 2) < 1e-12

    def test_offset_invariance(self):
        a = four_point_phase(1.0, 0.4, 0.1, 0.8)
        b = four_point_phase(1.3, 0.7, 0.4, 1.1)
        assert abs(a - b) < 1e-12

    def test_scaling_invariance(self):
        a = four_point_phase(1.0, 0.4, 0.1, 0.8)
        b = four_point_phase(3.0, 1.2, 0.3, 2.4)
        assert abs(a - b) < 1e-12

    def test_all_equal_rejected(self):
        with pytest.raises(VectorIoError):
            four_point_phase(0.5, 0.5, 0.5, 0.5)

    def test_negative_power_rejected(self):
        with pytest.raises(VectorIoError):
            four_point_phase(-0.1, 0.5, 0.2, 0.5)

    def test_matches_simulated_probe(self):
        # the sign convention is anchored to the simulated analyzer pair
        rng = np.random.default_rng(3)
        for _ in range(30):
            a = rng.standard_normal() + 1j * rng.standard_normal()
            b = rng.standard_normal() + 1j * rng.standard_normal()
            est = four_point_phase(*_probe_powers(a, b))
            diff = np.mod(est - np.angle(a / b) + np.pi, 2 * np.pi) - np.pi
            assert abs(diff) < 1e-12


class TestSelfConfigureAnalyzer:
    def test_ideal_reconstruction_exact(self):
        rng = np.random.default_rng(7)
        f = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        phases, measured = self_configure_analyzer(f, ReadoutConfig.ideal(), rng)
        np.testing.assert_allclose(measured, f, atol=1e-12)
        regenerated = phase2vec(phases) * np.linalg.norm(f)
        overlap = abs(np.vdot(regenerated, f)) / np.linalg.norm(f) ** 2
        assert overlap > 1 - 1e-10

    def test_basis_vector_trivial(self):
        f = np.zeros(5, dtype=complex)
        f[0] = 1.0
        _, measured = self_configure_analyzer(f, ReadoutConfig.ideal(), None)
        np.testing.assert_allclose(measured, f, atol=1e-12)

    def test_zero_field_rejected(self):
        with pytest.raises(VectorIoError):
            self_configure_analyzer(np.zeros(4, dtype=complex), ReadoutConfig.ideal(), None)

    def _median_error(self, snr_db, rng, trials=100, true_phase=False, probe=0.0):
        cfg = ReadoutConfig(
            mode="self_configure",
            error=HardwareErrorConfig(snr_db=snr_db, seed=1, snr_ref_intensity=0.2),
            true_phase=true_phase,
            probe_phase_error=probe,
        )
        errs = []
        for _ in range(trials):
            f = rng.standard_normal(5) + 1j * rng.standard_normal(5)
            f /= np.linalg.norm(f)
            _, measured = self_configure_analyzer(f, cfg, rng)
            aligned = f * np.exp(1j * np.angle(np.vdot(f, measured)))
            errs.append(np.linalg.norm(aligned - measured))
        return float(np.median(errs))

    def test_error_decreases_with_snr(self):
        # detector-noise-only configuration (probe calibration error off)
        rng = np.random.default_rng(21)
        errs = [self._median_error(snr, rng) for snr in (20, 30, 40)]
        assert errs[0] > 0
        assert errs[0] > errs[1] > errs[2]

    def test_true_phase_mode_reduces_error(self):
        rng = np.random.default_rng(22)
        measured = self._median_error(20, rng, true_phase=False, probe=0.05)
        corrected = self._median_error(20, rng, true_phase=True, probe=0.05)
        assert corrected < measured

    def test_probe_calibration_error_hits_phases_not_amplitudes(self):
        rng = np.random.default_rng(23)
        cfg = ReadoutConfig(mode="self_configure",
                            error=HardwareErrorConfig.ideal(),
                            probe_phase_error=0.1)
        f = unit(rng.standard_normal(5) + 1j * rng.standard_normal(5))
        _, measured = self_configure_analyzer(f, cfg, rng)
        np.testing.assert_allclose(np.abs(measured), np.abs(f), atol=1e-12)
        assert np.max(np.abs(np.angle(measured / f))) > 1e-3

    def test_unknown_mode_rejected(self):
        with pytest.raises(VectorIoError):
            ReadoutConfig(mode="telepathy")
