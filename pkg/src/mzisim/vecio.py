"""Generator / analyzer vector units: conversion between complex vectors and
tree phase settings, reference-arm embedding, and simulated output readout.

The vector unit is the unbalanced diagonal cascade: nullifying MZIs walk the
vector from the bottom port upward, so generation (the exact inverse) spreads
a single input down the diagonal.  All phase conventions are anchored so that
``phase2vec(vec2phase(x))`` reproduces ``x`` exactly up to the zero-phase
convention on the last element.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hardware import HardwareErrorConfig, measure_powers, static_normal, tap_coupling

TWO_PI = 2.0 * np.pi

# Tap index namespaces so systematic per-detector couplings stay consistent.
ANALYZER_PORT_TAP_BASE = 10_000
ANALYZER_PHASE_TAP_BASE = 20_000

# Salt separating the static probe-calibration residuals from tap couplings.
_PROBE_SALT = 6311


class VectorIoError(ValueError):
    """Raised on degenerate vector-unit inputs."""


@dataclass(frozen=True)
class VectorUnitPhases:
    """Tree settings of an N-mode vector unit: N-1 (theta, phi) pairs."""

    theta: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float))
        if self.theta.shape != self.phi.shape:
            raise VectorIoError("theta and phi lengths differ")


@dataclass(frozen=True)
class ReadoutConfig:
    """How output fields are turned into measured vectors.

    mode 'ideal' bypasses all noise; 'self_configure' reconstructs the field
    from noisy port powers and four-point phase measurements.  true_phase
    keeps the noisy amplitude readings but substitutes ground-truth phases
    (the corrected-phase readout variant).  probe_phase_error is the std-dev
    (rad) of the four-point probe setting inaccuracy, i.e. the voltage-phase
    calibration residual of the analyzer shifters: a device-lifetime offset
    per analyzer step (drawn from the hardware seed) that corrupts measured
    phases only, which is why ground-truth-phase readout sidesteps it.
    """

    mode: str = "ideal"
    error: HardwareErrorConfig = field(default_factory=HardwareErrorConfig.ideal)
    true_phase: bool = False
    probe_phase_error: float = 0.05

    def __post_init__(self):
        if self.mode not in ("ideal", "self_configure"):
            raise VectorIoError(f"unknown readout mode {self.mode!r}")
        if self.probe_phase_error < 0:
            raise VectorIoError("probe_phase_error must be >= 0")

    @classmethod
    def ideal(cls) -> "ReadoutConfig":
        return cls()


def vec2phase(x: np.ndarray) -> VectorUnitPhases:
    """Tree phases whose generation reproduces x (zero phase on the last element).

    Walks nullifying MZIs up the diagonal: theta = 2*arctan|upper/lower|,
    phi = -arg(upper/lower); a zero denominator forces the bar state with
    phi = 0.
    """
    x = np.asarray(x, dtype=complex)
    n = x.size
    norm = np.linalg.norm(x)
    if norm < 1e-12:
        raise VectorIoError("cannot derive phases for a zero vector")
    if abs(norm - 1.0) > 1e-9:
        raise VectorIoError(f"input must be unit norm, got {norm}")
    if n < 2:
        return VectorUnitPhases(theta=np.zeros(0), phi=np.zeros(0))
    mag = np.abs(x)
    # running nullified amplitude below element m: magnitude is the suffix
    # norm, phase that of the lowest nonzero element
    suffix = np.sqrt(np.cumsum((mag**2)[::-1])[::-1])
    lower = suffix[1:]
    upper = mag[: n - 1]
    theta = np.where(lower < 1e-14, np.pi, 2.0 * np.arctan2(upper, np.maximum(lower, 1e-300)))
    theta = np.where((upper < 1e-14) & (lower >= 1e-14), 0.0, theta)
    nz = np.nonzero(mag > 1e-14)[0]
    carrier = np.angle(x[nz[-1]]) if nz.size else 0.0
    phi = np.where(
        (upper >= 1e-14) & (lower >= 1e-14),
        np.mod(carrier - np.angle(np.where(mag[: n - 1] > 0, x[: n - 1], 1.0)), TWO_PI),
        0.0,
    )
    return VectorUnitPhases(theta=theta, phi=phi)


def phase2vec(p: VectorUnitPhases) -> np.ndarray:
    """Unit vector generated by tree phases, with arg(x_N) = 0.

    Exact inverse of vec2phase: each step splits the running amplitude with
    the conjugate transpose of the nullifying MZI row.
    """
    n = p.theta.size + 1
    if n == 1:
        return np.ones(1, dtype=complex)
    s = np.sin(p.theta / 2.0)
    c = np.cos(p.theta / 2.0)
    # running amplitude entering step m is the product of upstream cosines
    running = np.concatenate([[1.0 + 0.0j], np.cumprod(c.astype(complex))])
    w = np.empty(n, dtype=complex)
    w[: n - 1] = np.exp(-1j * p.phi) * s * running[: n - 1]
    w[n - 1] = running[n - 1]
    if abs(w[-1]) > 1e-14:
        w = w * np.exp(-1j * np.angle(w[-1]))
    return w


def embed_reference(x: np.ndarray, n: int | None = None) -> np.ndarray:
    """Append the reference arm: [x * sqrt(1 - 1/N), sqrt(1/N)], unit norm."""
    x = np.asarray(x, dtype=complex)
    if n is None:
        n = x.size
    if n < 2:
        raise VectorIoError("reference embedding needs N >= 2")
    if x.size != n:
        raise VectorIoError(f"expected length {n}, got {x.size}")
    if abs(np.linalg.norm(x) - 1.0) > 1e-9:
        raise VectorIoError("embed_reference expects a unit vector")
    return np.concatenate([x * np.sqrt(1.0 - 1.0 / n), [np.sqrt(1.0 / n) + 0.0j]])


def strip_reference(y: np.ndarray, n: int) -> np.ndarray:
    """Invert embed_reference: rotate the reference phase to zero, drop it,
    and undo the signal scaling."""
    y = np.asarray(y, dtype=complex)
    if y.size != n + 1:
        raise VectorIoError(f"expected length {n + 1}, got {y.size}")
    ref = y[n]
    if abs(ref) < 1e-9:
        raise VectorIoError("reference amplitude vanished; phase reference undefined")
    return y[:n] * np.exp(-1j * np.angle(ref)) / np.sqrt(1.0 - 1.0 / n)


def four_point_phase(p0: float, p_half: float, p_pi: float, p_3half: float) -> float:
    """Relative phase arg(upper/lower) of an interfered pair from the four
    powers read at probe phases 0, pi/2, pi, 3pi/2 (MZI held at theta=pi/2).

    Quadrant-resolving form: atan2(p_{3pi/2} - p_{pi/2}, p_0 - p_pi);
    invariant under common offsets and positive scaling of the readings.
    """
    readings = np.array([p0, p_half, p_pi, p_3half], dtype=float)
    if np.any(readings < 0):
        raise VectorIoError("powers must be >= 0")
    if np.ptp(readings) < 1e-15 * max(1.0, readings.max()):
        raise VectorIoError("all four readings equal; phase indeterminate")
    return float(np.arctan2(p_3half - p_half, p0 - p_pi))


_PROBE_FACTORS = np.exp(1j * np.array([0.0, np.pi / 2, np.pi, 3 * np.pi / 2]))


def _probe_powers(a, b) -> np.ndarray:
    """Ideal monitor powers of the four-point probe on field pair(s) (a, b).

    Scalars give shape (4,); arrays of n pairs give shape (n, 4).
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    return 0.5 * np.abs(np.multiply.outer(a, _PROBE_FACTORS) + b[..., None]) ** 2


def self_configure_analyzer(
    field: np.ndarray,
    cfg: ReadoutConfig,
    rng=None,
) -> tuple[VectorUnitPhases, np.ndarray]:
    """Sequentially nullify the analyzer tree and reconstruct the input field.

    Returns the tree phases that route all power to the top port together
    with the measured vector those phases encode.  In ideal mode the
    reconstruction equals the field exactly (up to global phase).  In
    self_configure mode the ports are nullified bottom-up into the running
    accumulated field: each port's phase comes from one four-point probe
    against the running sum (whose phase carries the last-port reference
    through every merge), and amplitudes come from noisy port powers.
    """
    field = np.asarray(field, dtype=complex)
    n = field.size
    total = float(np.sum(np.abs(field) ** 2))
    if total < 1e-12:
        raise VectorIoError("total measured power below threshold")
    if cfg.mode == "ideal":
        return vec2phase(field / np.sqrt(total)), field.copy()

    err = cfg.error
    p_hat = measure_powers(np.abs(field) ** 2, ANALYZER_PORT_TAP_BASE, err, rng)
    if float(np.sum(p_hat)) < 1e-12:
        raise VectorIoError("total measured power below threshold")

    alpha = np.zeros(n)
    if cfg.true_phase:
        alpha = np.angle(field) - np.angle(field[-1])
    else:
        running = field[n - 1]
        for m in range(n - 2, -1, -1):
            a = field[m]
            amp2 = abs(a) * abs(running)
            if amp2 > 1e-14:
                probes = _probe_powers(a, running)
                if err.is_ideal:
                    readings = probes
                else:
                    coupling = tap_coupling(err, ANALYZER_PHASE_TAP_BASE + m)
                    readings = coupling * probes
                    if np.isfinite(err.snr_db):
                        sigma = np.sqrt(probes * err.snr_ref_intensity) / err.snr_linear
                        readings = np.maximum(
                            readings + sigma * rng.standard_normal(4), 0.0
                        )
                if np.ptp(readings) > 1e-15:
                    # phase of the port relative to the running sum, whose own
                    # phase is the preserved reference-port phase
                    alpha[m] = float(np.arctan2(readings[3] - readings[1],
                                                readings[0] - readings[2]))
                    if cfg.probe_phase_error > 0:
                        alpha[m] += cfg.probe_phase_error * static_normal(
                            err.seed, _PROBE_SALT, m
                        )
            # nullify port m into the running field; the converged merge keeps
            # the lower (accumulated) input's phase and the pair's magnitude
            hyp = np.hypot(abs(a), abs(running))
            if abs(running) > 1e-14:
                running = np.exp(1j * np.angle(running)) * hyp
            else:
                running = a
    measured = np.sqrt(np.maximum(p_hat, 0.0)) * np.exp(1j * alpha)
    mnorm = np.linalg.norm(measured)
    if mnorm < 1e-12:
        raise VectorIoError("total measured power below threshold")
    return vec2phase(measured / mnorm), measured
