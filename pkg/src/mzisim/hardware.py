"""Hardware imperfection models: voltage-phase calibration physics, optical I/O
field errors, and detector noise at the power monitors.

With an all-zero error configuration every routine here is the identity (or
exact), so the simulator collapses to the ideal mathematical model.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
import json

import numpy as np
from scipy import optimize

TWO_PI = 2.0 * np.pi

# Salt separating the per-tap coupling draw from other uses of the seed.
_TAP_SALT = 7919


class CalibrationError(ValueError):
    """Raised for unusable calibration models or sweeps."""


@dataclass(frozen=True)
class HardwareErrorConfig:
    """Error magnitudes for one simulated chip.

    a_error / p_error: std-dev of relative amplitude / phase (rad) errors
    applied at every field generation and analysis.
    snr_db: detector signal-to-noise ratio (power reading / noise std) at
    intensity ``snr_ref_intensity``, in dB; ``inf`` disables detector noise.
    tap_coupling_spread: relative std-dev of the per-tap coupling efficiency,
    drawn once per tap from the seed (a systematic, not per-reading, error).
    """

    a_error: float = 0.0
    p_error: float = 0.0
    snr_db: float = np.inf
    tap_coupling_spread: float = 0.0
    seed: int = 0
    snr_ref_intensity: float = 0.25  # 1/N anchor for the shot-noise scale

    def __post_init__(self):
        if self.a_error < 0 or self.p_error < 0 or self.tap_coupling_spread < 0:
            raise ValueError("error std-devs must be >= 0")
        if not self.snr_db > 0:
            raise ValueError("snr_db must be positive or inf")
        if not self.snr_ref_intensity > 0:
            raise ValueError("snr_ref_intensity must be positive")

    @classmethod
    def ideal(cls) -> "HardwareErrorConfig":
        return cls()

    def with_ref_intensity(self, ref: float) -> "HardwareErrorConfig":
        return replace(self, snr_ref_intensity=ref)

    @property
    def is_ideal(self) -> bool:
        return (
            self.a_error == 0.0
            and self.p_error == 0.0
            and np.isinf(self.snr_db)
            and self.tap_coupling_spread == 0.0
        )

    @property
    def snr_linear(self) -> float:
        return float(10.0 ** (self.snr_db / 10.0))


@lru_cache(maxsize=16384)
def static_normal(seed: int, salt: int, index: int) -> float:
    """Deterministic unit normal for device-lifetime (systematic) errors."""
    return float(np.random.default_rng([seed, salt, index]).standard_normal())


def tap_coupling(cfg: HardwareErrorConfig, tap_index: int) -> float:
    """Coupling efficiency of one monitor tap, fixed for the chip's lifetime."""
    if cfg.tap_coupling_spread == 0.0:
        return 1.0
    draw = static_normal(cfg.seed, _TAP_SALT, int(tap_index))
    return max(1.0 + cfg.tap_coupling_spread * draw, 1e-6)


def measure_power(intensity, tap_index: int, cfg: HardwareErrorConfig, rng=None):
    """Detector reading of an optical intensity at a given tap.

    reading = coupling * intensity + noise, with noise std
    sqrt(intensity * snr_ref) / snr_linear so the SNR equals snr_db at the
    reference intensity.  Readings are clamped at zero.
    """
    intensity = np.asarray(intensity, dtype=float)
    if np.any(intensity < 0):
        raise ValueError("intensity must be >= 0")
    reading = tap_coupling(cfg, tap_index) * intensity
    if np.isfinite(cfg.snr_db):
        sigma = np.sqrt(intensity * cfg.snr_ref_intensity) / cfg.snr_linear
        reading = reading + sigma * rng.standard_normal(intensity.shape)
        reading = np.maximum(reading, 0.0)
    if reading.ndim == 0:
        return float(reading)
    return reading


def measure_powers(intensities: np.ndarray, first_tap_index: int, cfg, rng=None) -> np.ndarray:
    """Vectorized measure_power over a contiguous tap index range."""
    intensities = np.asarray(intensities, dtype=float)
    if np.any(intensities < 0):
        raise ValueError("intensity must be >= 0")
    if cfg.is_ideal:
        return intensities.copy()
    n = intensities.size
    if cfg.tap_coupling_spread == 0.0:
        reading = intensities.copy()
    else:
        couplings = np.array([tap_coupling(cfg, first_tap_index + k) for k in range(n)])
        reading = couplings * intensities
    if np.isfinite(cfg.snr_db):
        sigma = np.sqrt(intensities * cfg.snr_ref_intensity) / cfg.snr_linear
        reading = np.maximum(reading + sigma * rng.standard_normal(n), 0.0)
    return reading


def perturb_input(x: np.ndarray, cfg: HardwareErrorConfig, rng=None) -> np.ndarray:
    """Apply per-element amplitude and phase errors of one field generation
    or analysis step.  Identity when both std-devs are zero."""
    x = np.asarray(x, dtype=complex)
    if cfg.a_error == 0.0 and cfg.p_error == 0.0:
        return x.copy()
    factor = np.ones(x.shape)
    if cfg.a_error > 0.0:
        factor = 1.0 + cfg.a_error * rng.standard_normal(x.shape)
    phase = np.zeros(x.shape)
    if cfg.p_error > 0.0:
        phase = cfg.p_error * rng.standard_normal(x.shape)
    return x * factor * np.exp(1j * phase)


@dataclass(frozen=True)
class CalibrationModel:
    """Voltage-to-phase physics of one thermal shifter.

    theta(v) = p0 v^3 + p1 v^2 + p2 v + p3 (strictly monotone on v_range,
    spanning at least 2*pi); transmissivity t = a sin(theta) + b; the fitted
    inverse cubic v^2 = q0 th^3 + q1 th^2 + q2 th + q3 seeds voltage lookup.
    """

    p_coeffs: tuple
    q_coeffs: tuple
    t_amp: float
    t_offset: float
    v_range: tuple
    fit_rms: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "p_coeffs", tuple(float(c) for c in self.p_coeffs))
        object.__setattr__(self, "q_coeffs", tuple(float(c) for c in self.q_coeffs))
        object.__setattr__(self, "v_range", (float(self.v_range[0]), float(self.v_range[1])))
        v0, v1 = self.v_range
        if not v1 > v0:
            raise CalibrationError("empty voltage range")
        vs = np.linspace(v0, v1, 257)
        slope = np.polyval(np.polyder(self.p_coeffs), vs)
        if np.any(slope <= 0):
            raise CalibrationError("theta(v) is not strictly increasing on v_range")
        span = np.polyval(self.p_coeffs, v1) - np.polyval(self.p_coeffs, v0)
        if span < TWO_PI:
            raise CalibrationError(f"phase span {span:.3f} rad does not cover 2*pi")

    @classmethod
    def default_synthetic(cls) -> "CalibrationModel":
        """Synthetic ground-truth heater: ~2.5*pi of phase over 0..5 V."""
        p = (0.012, 0.04, 1.05, 0.2)
        return cls(p_coeffs=p, q_coeffs=_fit_q_cubic(p, (0.0, 5.0)), t_amp=0.45,
                   t_offset=0.5, v_range=(0.0, 5.0))

    def phase_span(self) -> tuple:
        v0, v1 = self.v_range
        return (float(np.polyval(self.p_coeffs, v0)), float(np.polyval(self.p_coeffs, v1)))

    def to_dict(self) -> dict:
        return {
            "p_coeffs": list(self.p_coeffs),
            "q_coeffs": list(self.q_coeffs),
            "t_amp": self.t_amp,
            "t_offset": self.t_offset,
            "v_range": list(self.v_range),
            "fit_rms": self.fit_rms,
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CalibrationModel":
        with open(path) as fh:
            return cls(**json.load(fh))


def _fit_q_cubic(p_coeffs, v_range) -> tuple:
    vs = np.linspace(v_range[0], v_range[1], 101)
    th = np.polyval(p_coeffs, vs)
    return tuple(np.polyfit(th, vs**2, 3))


def phase_from_voltage(model: CalibrationModel, v: float) -> float:
    """Unwrapped heater phase at a drive voltage (caller wraps if needed)."""
    v0, v1 = model.v_range
    if np.any(np.asarray(v) < v0) or np.any(np.asarray(v) > v1):
        raise CalibrationError(f"voltage {v} outside range [{v0}, {v1}]")
    out = np.polyval(model.p_coeffs, v)
    return float(out) if np.ndim(v) == 0 else out


def voltage_from_phase(model: CalibrationModel, theta: float) -> float:
    """Drive voltage realizing a phase (mod 2*pi) inside the achievable span."""
    lo, hi = model.phase_span()
    target = np.mod(theta, TWO_PI)
    k0 = np.floor((lo - target) / TWO_PI)
    candidates = [target + TWO_PI * k for k in (k0, k0 + 1, k0 + 2, k0 + 3)]
    candidates = [t for t in candidates if lo - 1e-12 <= t <= hi + 1e-12]
    if not candidates:
        raise CalibrationError(f"phase {theta} unreachable within span [{lo:.3f}, {hi:.3f}]")
    t = min(candidates, key=lambda c: abs(c - (lo + hi) / 2))
    t = min(max(t, lo), hi)
    # q-cubic initial guess, then bracketed root refinement
    v_sq = np.polyval(model.q_coeffs, t)
    v0 = np.sqrt(max(v_sq, 0.0))
    v0 = min(max(v0, model.v_range[0]), model.v_range[1])
    f = lambda v: np.polyval(model.p_coeffs, v) - t
    try:
        v = optimize.newton(f, v0, fprime=lambda v: np.polyval(np.polyder(model.p_coeffs), v),
                            tol=1e-12, maxiter=50)
        if not (model.v_range[0] - 1e-9 <= v <= model.v_range[1] + 1e-9):
            raise RuntimeError("newton left the voltage range")
    except RuntimeError:
        v = optimize.brentq(f, model.v_range[0], model.v_range[1], xtol=1e-13)
    return float(min(max(v, model.v_range[0]), model.v_range[1]))


def simulate_calibration_sweep(
    true_model: CalibrationModel,
    n_points: int,
    cfg: HardwareErrorConfig | None = None,
    rng=None,
    shifter: str = "theta",
    tap_index: int = 0,
) -> np.ndarray:
    """Synthetic (voltage, split-ratio) sweep covering the full drive range.

    theta shifters are reached directly via light routed to the MZI;
    phi shifters use the meta-MZI arrangement (neighbors at 50/50), which
    yields the same a*sin(theta(v)) + b form up to constants absorbed in the
    fit.  Detector noise is applied per the error config.
    """
    if n_points < 8:
        raise CalibrationError("need at least 8 sweep points")
    if shifter not in ("theta", "phi"):
        raise CalibrationError(f"unknown shifter kind {shifter!r}")
    if cfg is None:
        cfg = HardwareErrorConfig.ideal()
    vs = np.linspace(true_model.v_range[0], true_model.v_range[1], n_points)
    th = np.polyval(true_model.p_coeffs, vs)
    t = true_model.t_amp * np.sin(th) + true_model.t_offset
    t = np.clip(t, 0.0, None)
    readings = measure_powers(t, tap_index, cfg, rng)
    return np.column_stack([vs, readings])


def _recover_phase(t_readings: np.ndarray, amp: float, offset: float) -> np.ndarray:
    """Quadrature phase estimate of a swept a*sin(theta)+b record.

    The cosine sign comes from the (smoothed) derivative of the sine channel,
    valid for a monotone increasing theta(v); the two-argument arctangent is
    then unwrapped across branch jumps.
    """
    u = np.clip((t_readings - offset) / amp, -1.0, 1.0)
    kernel = np.ones(5) / 5.0
    smooth = np.convolve(u, kernel, mode="same")
    du = np.gradient(smooth)
    c = np.sqrt(np.maximum(1.0 - u * u, 0.0)) * np.where(du >= 0, 1.0, -1.0)
    return np.unwrap(np.arctan2(u, c))


def fit_calibration(samples: np.ndarray) -> CalibrationModel:
    """Recover a CalibrationModel from a (voltage, split-ratio) sweep.

    Fits t = a sin(theta(v)) + b with theta(v) cubic via branch-stitched
    arcsin followed by nonlinear refinement, then the q-cubic used for
    voltage lookup.  fit_rms reports the RMS phase residual in radians.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[1] != 2 or samples.shape[0] < 8:
        raise CalibrationError("need >= 8 (v, t) samples")
    vs, ts = samples[:, 0], samples[:, 1]
    if np.any(np.diff(vs) <= 0):
        raise CalibrationError("sweep voltages must be strictly increasing")
    amp0 = (ts.max() - ts.min()) / 2.0
    off0 = (ts.max() + ts.min()) / 2.0
    if amp0 <= 0:
        raise CalibrationError("flat sweep, cannot calibrate")

    th_quad = _recover_phase(ts, amp0, off0)
    p0 = np.polyfit(vs, th_quad, 3)
    try:
        popt, _ = optimize.curve_fit(
            lambda v, a3, a2, a1, a0, a, b: a * np.sin(np.polyval([a3, a2, a1, a0], v)) + b,
            vs, ts, p0=[*p0, amp0, off0], maxfev=20000,
        )
    except RuntimeError as exc:
        raise CalibrationError(f"calibration fit did not converge: {exc}") from exc
    p = popt[:4]
    amp, off = popt[4], popt[5]
    if amp < 0:  # canonicalize sign: fold into a pi phase offset
        amp = -amp
        p = np.array([p[0], p[1], p[2], p[3] + np.pi])
    span = abs(np.polyval(p, vs[-1]) - np.polyval(p, vs[0]))
    if span < np.pi:
        raise CalibrationError(f"sweep spans only {span:.3f} rad of phase (ambiguous branch)")
    if np.polyval(np.polyder(p), (vs[0] + vs[-1]) / 2) < 0:  # enforce increasing branch
        p = -np.asarray(p)
        p[3] += np.pi  # sin(-x) = sin(x + pi) up to offset absorbed in amp sign
    th_fit = np.polyval(p, vs)
    resid_t = ts - (amp * np.sin(th_fit) + off)
    # residual in phase units, evaluated away from the sine crests
    slope = amp * np.cos(th_fit)
    ok = np.abs(slope) > 0.2 * amp
    phase_rms = float(np.sqrt(np.mean((resid_t[ok] / slope[ok]) ** 2))) if ok.any() else 0.0
    q = tuple(np.polyfit(th_fit, vs**2, 3))
    return CalibrationModel(
        p_coeffs=tuple(p),
        q_coeffs=q,
        t_amp=float(amp),
        t_offset=float(off),
        v_range=(float(vs[0]), float(vs[-1])),
        fit_rms=phase_rms,
    )
