"""The three-pass optical gradient protocol: forward, adjoint, and sum passes,
digital-subtraction and analog phase-sweep gradient extraction, nonlinearity
VJPs, and the recursive multi-layer gradient routine.

Sign and conjugation conventions (all verified against finite differences):

* The error signal physically injected backward into layer ``l`` is
  ``beta = 2 * dL/dy`` (unconjugated Wirtinger derivative of the real loss
  with respect to the layer output).  ``mesh_backward`` then returns
  ``U.T @ beta`` and the per-shifter identity
  ``dL/d(eta) = -Im(x_eta * x_eta_adj) * sqrt(P * P_adj)`` holds exactly.
* ``abs_vjp`` follows the autodiff convention ``(y/|y|) * Re(x_adj)``; its
  output is conjugated at the point of physical injection (the generation-side
  conjugation of the backward step), which keeps the chain exact.
* Output gamma phases are digital, so their gradients are computed digitally:
  ``dL/d(gamma_k) = -Im(y_k * beta_k)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hardware import HardwareErrorConfig, measure_powers, perturb_input
from .mesh import FieldTapRecord, MeshPhases, MeshTopology, propagate
from .vecio import (
    ReadoutConfig,
    embed_reference,
    phase2vec,
    self_configure_analyzer,
    strip_reference,
    vec2phase,
)

# Tap namespaces: the same physical grating taps are read in all three passes.
THETA_TAP_BASE = 0
PHI_TAP_BASE = 5_000

_NORM_TOL = 1e-9


class ProtocolError(ValueError):
    """Raised on degenerate inputs to the gradient protocol."""


@dataclass(frozen=True)
class PassResult:
    """One optical pass: measured output, ideal tap fields, measured tap powers.

    Tap fields and powers are reported in calibrated units (the constant
    reference-arm scaling is divided out), so ideal powers equal
    ``|taps.theta_fields|**2`` elementwise.
    """

    output: np.ndarray
    taps: FieldTapRecord
    theta_powers: np.ndarray
    phi_powers: np.ndarray
    input_power: float
    direction: str


@dataclass(frozen=True)
class GradientRecord:
    """Per-shifter loss gradients for one mesh layer, ordered like MeshPhases.

    gamma gradients are computed digitally (the output phases never touch the
    optical protocol).
    """

    theta: np.ndarray
    phi: np.ndarray
    gamma: np.ndarray
    method: str

    def flat(self) -> np.ndarray:
        return np.concatenate([self.theta, self.phi, self.gamma])


@dataclass(frozen=True)
class AnalogSweep:
    """Adjoint-phase sweep record: K sample angles plus per-shifter power traces."""

    zeta_samples: np.ndarray
    theta_traces: np.ndarray  # shape (K, n_nodes)
    phi_traces: np.ndarray

    def __post_init__(self):
        if self.zeta_samples.size < 3:
            raise ProtocolError("need K >= 3 sweep samples")


def _require_unit(x: np.ndarray, what: str) -> float:
    nrm = float(np.linalg.norm(x))
    if abs(nrm - 1.0) > _NORM_TOL:
        raise ProtocolError(f"{what} must be unit norm (got {nrm})")
    return nrm


def _measured_tap_powers(taps: FieldTapRecord, scale: float, err: HardwareErrorConfig, rng):
    th = measure_powers(np.abs(taps.theta_fields) ** 2, THETA_TAP_BASE, err, rng) / scale
    ph = measure_powers(np.abs(taps.phi_fields) ** 2, PHI_TAP_BASE, err, rng) / scale
    return th, ph


def _readout(field: np.ndarray, cfg: ReadoutConfig, rng) -> np.ndarray:
    if cfg.mode == "ideal":
        return field
    _, measured = self_configure_analyzer(field, cfg, rng)
    return measured


def mesh_forward(
    x: np.ndarray,
    phases: MeshPhases,
    topology: MeshTopology,
    cfg: ReadoutConfig,
    rng=None,
) -> PassResult:
    """Send a unit-power vector forward through one mesh layer.

    Embeds the reference arm, generates the field from tree phases (where the
    generation errors enter), propagates while recording every shifter tap,
    reads the output through the analyzer model, and strips the reference.
    Ideal configuration returns exactly ``U @ x``.
    """
    x = np.asarray(x, dtype=complex)
    power = float(np.linalg.norm(x)) ** 2
    _require_unit(x, "mesh_forward input")
    n = topology.n_modes
    emb = embed_reference(x, n)
    gen = phase2vec(vec2phase(emb))
    gen = perturb_input(gen, cfg.error, rng)
    out_sig, taps = propagate(topology, phases, gen[:n], "forward")
    scale = 1.0 - 1.0 / n
    th_p, ph_p = _measured_tap_powers(taps, scale, cfg.error, rng)
    y_field = np.concatenate([out_sig, gen[n:]])
    y_field = perturb_input(y_field, cfg.error, rng)
    measured = _readout(y_field, cfg, rng)
    y = strip_reference(measured, n)
    comp = 1.0 / np.sqrt(scale)
    taps = FieldTapRecord(taps.theta_fields * comp, taps.phi_fields * comp)
    return PassResult(y, taps, th_p, ph_p, power, "forward")


def mesh_backward(
    y_adj: np.ndarray,
    phases: MeshPhases,
    topology: MeshTopology,
    cfg: ReadoutConfig,
    rng=None,
) -> PassResult:
    """Send a unit-power error signal backward; output is ``U.T @ y_adj``.

    The right-side generator is programmed through the conjugated vector (the
    tree emits the conjugate of what its phases analyze), and the digital
    gamma rotation is applied at the injection boundary.
    """
    y_adj = np.asarray(y_adj, dtype=complex)
    power = float(np.linalg.norm(y_adj)) ** 2
    _require_unit(y_adj, "mesh_backward input")
    n = topology.n_modes
    emb = embed_reference(y_adj, n)
    gen = np.conj(phase2vec(vec2phase(np.conj(emb))))
    gen = perturb_input(gen, cfg.error, rng)
    out_sig, taps = propagate(topology, phases, gen[:n], "backward")
    scale = 1.0 - 1.0 / n
    th_p, ph_p = _measured_tap_powers(taps, scale, cfg.error, rng)
    x_field = np.concatenate([out_sig, gen[n:]])
    x_field = perturb_input(x_field, cfg.error, rng)
    measured = _readout(x_field, cfg, rng)
    x_adj = strip_reference(measured, n)
    comp = 1.0 / np.sqrt(scale)
    taps = FieldTapRecord(taps.theta_fields * comp, taps.phi_fields * comp)
    return PassResult(x_adj, taps, th_p, ph_p, power, "backward")


def digital_gradient(
    p_sum: np.ndarray,
    p_fwd: np.ndarray,
    p_adj: np.ndarray,
    input_power: float = 1.0,
    adjoint_power: float = 1.0,
    sum_power: float = 1.0,
) -> np.ndarray:
    """Digital-subtraction gradient from the three measured tap powers.

    g = (P_sum * p_sum - p - p_adj) * sqrt(P * P_adj) / 2, where the sum pass
    ran on the unit-normalized sum vector of true squared norm P_sum.  Equals
    -Im(x_eta * x_eta_adj) * sqrt(P * P_adj) under ideal hardware.
    """
    p_sum = np.asarray(p_sum, dtype=float)
    p_fwd = np.asarray(p_fwd, dtype=float)
    p_adj = np.asarray(p_adj, dtype=float)
    if p_sum.shape != p_fwd.shape or p_fwd.shape != p_adj.shape:
        raise ProtocolError("tap power arrays must be congruent")
    scale = np.sqrt(input_power * adjoint_power) / 2.0
    return (sum_power * p_sum - p_fwd - p_adj) * scale


def analog_gradient(
    x: np.ndarray,
    x_adj: np.ndarray,
    phases: MeshPhases,
    topology: MeshTopology,
    k_samples: int = 64,
    cfg: ReadoutConfig | None = None,
    rng=None,
    input_power: float = 1.0,
    adjoint_power: float = 1.0,
) -> tuple[GradientRecord, AnalogSweep]:
    """Adjoint-phase-sweep gradient: AC component of the swept sum-pass power.

    For each sweep angle the interferometric sum ``(x - i conj(x_adj) e^{i z})
    / sqrt(2)`` (the physical summing junction loses half the power) is sent
    forward and every tap power recorded.  Per shifter the trace mean is
    removed (the high-pass filter), a single-harmonic model is fit, and the
    AC value at zero sweep phase gives the gradient after undoing the 1/2
    loss and applying the sqrt(P * P_adj) scaling.
    """
    if k_samples < 3:
        raise ProtocolError("need K >= 3 sweep samples")
    if cfg is None:
        cfg = ReadoutConfig.ideal()
    x = np.asarray(x, dtype=complex)
    x_adj = np.asarray(x_adj, dtype=complex)
    zeta = np.arange(k_samples) * (2.0 * np.pi / k_samples)
    m = topology.n_nodes
    th_traces = np.zeros((k_samples, m))
    ph_traces = np.zeros((k_samples, m))
    # the two summed fields are generated once; only the adjoint phase is swept
    u_gen = perturb_input(x, cfg.error, rng)
    w_gen = perturb_input(-1j * np.conj(x_adj), cfg.error, rng)
    for i, z in enumerate(zeta):
        summed = (u_gen + w_gen * np.exp(1j * z)) / np.sqrt(2.0)
        _, taps = propagate(topology, phases, summed, "forward")
        th_traces[i], ph_traces[i] = _measured_tap_powers(taps, 1.0, cfg.error, rng)
    sweep = AnalogSweep(zeta_samples=zeta, theta_traces=th_traces, phi_traces=ph_traces)

    # remove DC, then least-squares single-harmonic fit evaluated at zeta = 0
    design = np.column_stack([np.ones_like(zeta), np.sin(zeta), np.cos(zeta)])
    pinv = np.linalg.pinv(design)
    scale = np.sqrt(input_power * adjoint_power)

    def ac_at_zero(traces):
        centered = traces - traces.mean(axis=0, keepdims=True)
        coef = pinv @ centered  # rows: offset, sin, cos
        return coef[2]

    g_theta = ac_at_zero(th_traces) * scale
    g_phi = ac_at_zero(ph_traces) * scale
    record = GradientRecord(
        theta=g_theta, phi=g_phi, gamma=np.zeros(topology.gamma_count), method="analog"
    )
    return record, sweep


def abs_vjp(y: np.ndarray, x_adj_next: np.ndarray) -> np.ndarray:
    """VJP of the elementwise modulus: (y/|y|) * Re(x_adj_next).

    Components with |y| below 1e-12 get the zero subgradient.
    """
    y = np.asarray(y, dtype=complex)
    x_adj_next = np.asarray(x_adj_next, dtype=complex)
    mag = np.abs(y)
    out = np.zeros_like(y)
    ok = mag > 1e-12
    out[ok] = (y[ok] / mag[ok]) * np.real(x_adj_next[ok])
    return out


def group_powers(y: np.ndarray, n_groups: int) -> np.ndarray:
    """Summed powers of consecutive output groups (size N // n_groups each;
    trailing remainder ports are unused)."""
    y = np.asarray(y)
    size = y.size // n_groups
    if size < 1:
        raise ProtocolError("more groups than output modes")
    used = y[: size * n_groups]
    return np.sum(np.abs(used.reshape(n_groups, size)) ** 2, axis=1)


def softmax_probabilities(y: np.ndarray, n_groups: int) -> np.ndarray:
    w = group_powers(y, n_groups)
    w = w - w.max()
    e = np.exp(w)
    return e / e.sum()


def output_vjp(y_out: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Adjoint seed of the grouped softmax cross-entropy head.

    Returns the injection-ready error signal 2*dL/dy for the final mesh
    layer: component j carries 2 * (zhat_g - z_g) * conj(y_j) for its group.
    """
    y_out = np.asarray(y_out, dtype=complex)
    z = np.asarray(z, dtype=float)
    if np.linalg.norm(y_out) < 1e-12:
        raise ProtocolError("degenerate zero output")
    n_groups = z.size
    zhat = softmax_probabilities(y_out, n_groups)
    size = y_out.size // n_groups
    seed = np.zeros_like(y_out)
    for g in range(n_groups):
        seed[g * size : (g + 1) * size] = (
            2.0 * (zhat[g] - z[g]) * np.conj(y_out[g * size : (g + 1) * size])
        )
    return seed


def softmax_cross_entropy(y_out: np.ndarray, z: np.ndarray) -> float:
    """Negative log-likelihood of the grouped softmax head."""
    zhat = softmax_probabilities(y_out, z.size)
    return float(-np.sum(np.asarray(z, dtype=float) * np.log(np.maximum(zhat, 1e-300))))


def fidelity_loss_adjoint(u_hat_row: np.ndarray, u_row: np.ndarray, m: int) -> np.ndarray:
    """Error signal of the row-fidelity loss 1 - |uhat_m^T u_m^*|^2:
    -2 conj(uhat_m^T u_m^*) e_m."""
    u_hat_row = np.asarray(u_hat_row, dtype=complex)
    u_row = np.asarray(u_row, dtype=complex)
    if u_hat_row.shape != u_row.shape:
        raise ProtocolError("row length mismatch")
    overlap = np.sum(u_hat_row * np.conj(u_row))
    seed = np.zeros_like(u_hat_row)
    seed[m] = -2.0 * np.conj(overlap)
    return seed


@dataclass(frozen=True)
class InsituResult:
    """Output of one recursive gradient evaluation."""

    x_adjoint: np.ndarray
    gradients: dict  # layer index (1-based) -> GradientRecord
    loss: float
    prediction: np.ndarray | None

    def flat_gradient(self, n_layers: int) -> np.ndarray:
        return np.concatenate([self.gradients[l].flat() for l in range(1, n_layers + 1)])


def insitu_gradient(
    x: np.ndarray,
    z: np.ndarray | None,
    layer: int,
    model,
    cfg: ReadoutConfig | None = None,
    rng=None,
    method: str = "digital",
    analog_k: int = 64,
) -> InsituResult:
    """Recursive three-pass gradient of the model loss for one training example.

    Runs the forward pass of layer ``layer``, recurses through the digital
    nonlinearity to the head, then performs the backward and sum passes on the
    way out, assembling a GradientRecord per layer.  Power scalings P and
    P_adj are tracked so gradients come out in true loss units.
    """
    if cfg is None:
        cfg = ReadoutConfig.ideal()
    if method not in ("digital", "analog"):
        raise ProtocolError(f"unknown gradient method {method!r}")
    n_layers = len(model.layers)
    if not 1 <= layer <= n_layers:
        raise ProtocolError(f"layer {layer} outside [1, {n_layers}]")
    topo = model.topology
    phases = model.layers[layer - 1]

    x = np.asarray(x, dtype=complex)
    power = float(np.linalg.norm(x)) ** 2
    if power < 1e-24:
        raise ProtocolError("zero input power")
    x_unit = x / np.sqrt(power)
    fwd = mesh_forward(x_unit, phases, topo, cfg, rng)
    y = np.sqrt(power) * fwd.output

    prediction = None
    if layer == n_layers:
        beta = model.head.adjoint_seed(y, z)
        loss = model.head.loss(y, z)
        if hasattr(model.head, "probabilities"):
            prediction = model.head.probabilities(y)
        deeper: dict = {}
    else:
        x_next = np.abs(y)
        inner = insitu_gradient(x_next, z, layer + 1, model, cfg, rng, method, analog_k)
        # generation-side conjugation: the injected error signal is the
        # conjugate of the autodiff VJP value
        beta = np.conj(abs_vjp(y, inner.x_adjoint))
        loss = inner.loss
        prediction = inner.prediction
        deeper = inner.gradients

    adj_power = float(np.linalg.norm(beta)) ** 2
    m = topo.n_nodes
    if adj_power < 1e-24:
        record = GradientRecord(
            np.zeros(m), np.zeros(m), np.zeros(topo.gamma_count), method
        )
        x_adjoint = np.zeros_like(x)
    else:
        beta_unit = beta / np.sqrt(adj_power)
        bwd = mesh_backward(beta_unit, phases, topo, cfg, rng)
        x_adjoint = np.sqrt(adj_power) * bwd.output
        if method == "digital":
            sum_vec = x_unit - 1j * np.conj(bwd.output)
            sum_power = float(np.linalg.norm(sum_vec)) ** 2
            sum_res = mesh_forward(sum_vec / np.sqrt(sum_power), phases, topo, cfg, rng)
            g_theta = digital_gradient(
                sum_res.theta_powers, fwd.theta_powers, bwd.theta_powers,
                power, adj_power, sum_power,
            )
            g_phi = digital_gradient(
                sum_res.phi_powers, fwd.phi_powers, bwd.phi_powers,
                power, adj_power, sum_power,
            )
        else:
            rec, _ = analog_gradient(
                x_unit, bwd.output, phases, topo, analog_k, cfg, rng, power, adj_power
            )
            g_theta, g_phi = rec.theta, rec.phi
        g_gamma = -np.imag(y * beta)
        record = GradientRecord(g_theta, g_phi, g_gamma, method)

    gradients = dict(deeper)
    gradients[layer] = record
    return InsituResult(x_adjoint=x_adjoint, gradients=gradients, loss=loss, prediction=prediction)
