"""Hybrid mesh classifier model, synthetic datasets, the Adam optimizer, the
minibatch training loop, and experiment metrics."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .insitu import (
    GradientRecord,
    InsituResult,
    abs_vjp,
    insitu_gradient,
    output_vjp,
    softmax_cross_entropy,
    softmax_probabilities,
)
from .mesh import MeshPhases, MeshTopology, build_unitary, propagate
from .vecio import ReadoutConfig

TWO_PI = 2.0 * np.pi


class TrainingError(ValueError):
    pass


# ---------------------------------------------------------------------------
# model and loss heads

@dataclass(frozen=True)
class SoftmaxGroupHead:
    """Grouped softmax cross-entropy decision layer.

    The N outputs are split into n_groups consecutive blocks of N // n_groups
    ports; class probabilities are the softmax of the per-group powers.
    """

    n_groups: int = 2

    def probabilities(self, y_out: np.ndarray) -> np.ndarray:
        return softmax_probabilities(y_out, self.n_groups)

    def loss(self, y_out: np.ndarray, z: np.ndarray) -> float:
        return softmax_cross_entropy(y_out, z)

    def adjoint_seed(self, y_out: np.ndarray, z: np.ndarray) -> np.ndarray:
        return output_vjp(y_out, z)


@dataclass(frozen=True)
class FidelityHead:
    """Row-fidelity loss 1 - |uhat_m^T u_m^*|^2 against a target unitary.

    Drive it with the input x = conj(target[row]); then y[row] is the row
    overlap and the loss its fidelity defect.
    """

    target: np.ndarray
    row: int = 0

    def input_vector(self) -> np.ndarray:
        return np.conj(np.asarray(self.target)[self.row])

    def loss(self, y_out: np.ndarray, z=None) -> float:
        return float(1.0 - np.abs(y_out[self.row]) ** 2)

    def adjoint_seed(self, y_out: np.ndarray, z=None) -> np.ndarray:
        seed = np.zeros_like(np.asarray(y_out, dtype=complex))
        seed[self.row] = -2.0 * np.conj(y_out[self.row])
        return seed


@dataclass(frozen=True)
class PnnModel:
    """L mesh layers with digital modulus nonlinearities and a loss head."""

    topology: MeshTopology
    layers: tuple
    head: object
    nonlinearity: str = "abs"

    def __post_init__(self):
        if self.nonlinearity != "abs":
            raise TrainingError(f"unsupported nonlinearity {self.nonlinearity!r}")
        if len(self.layers) < 1:
            raise TrainingError("need at least one layer")
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def n_modes(self) -> int:
        return self.topology.n_modes

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def n_parameters(self) -> int:
        return sum(p.n_parameters for p in self.layers)

    @classmethod
    def random(cls, n_modes: int, n_layers: int, head, rng) -> "PnnModel":
        topo = MeshTopology.triangular(n_modes)
        layers = tuple(MeshPhases.random(topo, rng) for _ in range(n_layers))
        return cls(topology=topo, layers=layers, head=head)

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.flat() for p in self.layers])

    def with_flat_parameters(self, vec: np.ndarray) -> "PnnModel":
        layers = []
        off = 0
        for p in self.layers:
            layers.append(MeshPhases.from_flat(vec[off : off + p.n_parameters], self.topology))
            off += p.n_parameters
        return replace(self, layers=tuple(layers))

    def unitaries(self) -> list:
        return [build_unitary(self.topology, p) for p in self.layers]

    def ideal_output(self, x: np.ndarray, unitaries=None) -> np.ndarray:
        """Noise-free model evaluation: y_L of the abs-nonlinearity chain."""
        us = self.unitaries() if unitaries is None else unitaries
        v = np.asarray(x, dtype=complex)
        for ell, u in enumerate(us):
            v = u @ v
            if ell < len(us) - 1:
                v = np.abs(v)
        return v


# ---------------------------------------------------------------------------
# datasets

@dataclass(frozen=True)
class Dataset:
    """Classification examples with a fixed train/test split."""

    inputs: np.ndarray  # (n, d) real coordinates or prepared mode vectors
    labels: np.ndarray  # (n, n_label) one-hot
    train_idx: np.ndarray
    test_idx: np.ndarray
    kind: str = ""
    seed: int = 0
    noise: float = 0.0

    @property
    def n_labels(self) -> int:
        return self.labels.shape[1]


def _one_hot(labels: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((labels.size, n))
    out[np.arange(labels.size), labels] = 1.0
    return out


def make_dataset(kind: str, n: int, noise: float = 0.05, seed: int = 0) -> Dataset:
    """Synthetic 2-D classification sets with circle-, moon-, or ring-shaped
    boundaries.  Labels follow the clean geometry; coordinate noise is added
    afterwards, so boundary points may carry the "wrong" label.  80/20 split.
    """
    if n < 10:
        raise TrainingError("need at least 10 examples")
    rng = np.random.default_rng(seed)
    if kind == "circle":
        r = np.sqrt(rng.uniform(0.0, 1.0, n))
        ang = rng.uniform(0.0, TWO_PI, n)
        pts = np.column_stack([r * np.cos(ang), r * np.sin(ang)])
        labels = (r < np.sqrt(0.5)).astype(int)
    elif kind == "ring":
        r = np.sqrt(rng.uniform(0.0, 1.0, n))
        ang = rng.uniform(0.0, TWO_PI, n)
        pts = np.column_stack([r * np.cos(ang), r * np.sin(ang)])
        labels = ((r > 0.45) & (r < 0.8)).astype(int)
    elif kind == "moons":
        n0 = n // 2
        t0 = rng.uniform(0.0, np.pi, n0)
        t1 = rng.uniform(0.0, np.pi, n - n0)
        upper = np.column_stack([np.cos(t0), np.sin(t0)])
        lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
        pts = np.vstack([upper, lower])
        labels = np.concatenate([np.zeros(n0, dtype=int), np.ones(n - n0, dtype=int)])
        perm = rng.permutation(n)
        pts, labels = pts[perm], labels[perm]
    else:
        raise TrainingError(f"unknown dataset kind {kind!r}")
    pts = pts + rng.normal(0.0, noise, pts.shape)
    train_idx, test_idx = _split_indices(n, seed)
    return Dataset(
        inputs=pts,
        labels=_one_hot(labels, 2),
        train_idx=train_idx,
        test_idx=test_idx,
        kind=kind,
        seed=seed,
        noise=noise,
    )


def _split_indices(n: int, seed: int):
    """Deterministic 80/20 split, independent of generator draw order."""
    split = np.random.default_rng([seed, 101]).permutation(n)
    n_train = int(round(0.8 * n))
    return np.sort(split[:n_train]), np.sort(split[n_train:])


def save_dataset(dataset: Dataset, path):
    with open(path, "w") as fh:
        fh.write(f"# kind={dataset.kind} seed={dataset.seed} noise={dataset.noise}\n")
        for pt, lab in zip(dataset.inputs, dataset.labels):
            fh.write(f"{pt[0]:.9g},{pt[1]:.9g},{int(np.argmax(lab))}\n")


def load_dataset(path, seed: int = 0) -> Dataset:
    kind, noise = "", 0.0
    pts, labels = [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if tok.startswith("kind="):
                        kind = tok[5:]
                    elif tok.startswith("noise="):
                        noise = float(tok[6:])
                    elif tok.startswith("seed="):
                        seed = int(tok[5:])
                continue
            x1, x2, lab = line.split(",")
            pts.append((float(x1), float(x2)))
            labels.append(int(lab))
    pts = np.asarray(pts)
    labels = np.asarray(labels, dtype=int)
    train_idx, test_idx = _split_indices(len(pts), seed)
    return Dataset(pts, _one_hot(labels, 2), train_idx, test_idx, kind, seed, noise)


def format_input(point: np.ndarray, total_power: float = 1.0) -> np.ndarray:
    """Encode a 2-D point as the mode vector (x1, x2, p, p) with
    x1^2 + x2^2 + 2 p^2 = total_power."""
    x1, x2 = float(point[0]), float(point[1])
    rest = total_power - x1 * x1 - x2 * x2
    if rest < -1e-12:
        raise TrainingError(f"point {point} outside the power budget {total_power}")
    p = np.sqrt(max(rest, 0.0) / 2.0)
    return np.array([x1, x2, p, p], dtype=complex)


@dataclass(frozen=True)
class InputMap:
    """Affine map placing dataset coordinates inside the encoding power disk."""

    center: np.ndarray
    scale: float
    total_power: float = 1.0

    def __call__(self, point: np.ndarray) -> np.ndarray:
        return format_input((np.asarray(point) - self.center) * self.scale, self.total_power)


def fit_input_map(dataset: Dataset, total_power: float = 1.0, margin: float = 0.8) -> InputMap:
    """Scale the train split into the disk of squared radius margin * power."""
    pts = dataset.inputs[dataset.train_idx]
    center = (pts.max(axis=0) + pts.min(axis=0)) / 2.0
    radius = np.max(np.linalg.norm(pts - center, axis=1))
    if radius <= 0:
        radius = 1.0
    scale = np.sqrt(margin * total_power) / radius
    return InputMap(center=center, scale=scale, total_power=total_power)


def prepare_example(dataset: Dataset, index: int, input_map: InputMap | None):
    """Mode vector and one-hot label for one dataset row."""
    row = dataset.inputs[index]
    if input_map is not None and row.size == 2:
        x = input_map(row)
    else:
        x = np.asarray(row, dtype=complex)
    return x, dataset.labels[index]


# ---------------------------------------------------------------------------
# optimizer

@dataclass(frozen=True)
class OptimizerState:
    """Adam first/second moment accumulators and hyperparameters."""

    m: np.ndarray
    v: np.ndarray
    step: int
    alpha: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def initial(cls, n: int, alpha: float = 0.01, beta1: float = 0.9,
                beta2: float = 0.999, eps: float = 1e-8) -> "OptimizerState":
        return cls(np.zeros(n), np.zeros(n), 0, alpha, beta1, beta2, eps)


def adam_step(grad: np.ndarray, state: OptimizerState):
    """One bias-corrected Adam update; returns (parameter deltas, new state).

    Deltas follow the descent direction -alpha * mhat / (sqrt(vhat) + eps).
    """
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.m.shape:
        raise TrainingError("gradient shape does not match optimizer state")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    delta = -state.alpha * m_hat / (np.sqrt(v_hat) + state.eps)
    return delta, replace(state, m=m, v=v, step=t)


# ---------------------------------------------------------------------------
# metrics

def gradient_direction_error(g: np.ndarray, g_hat: np.ndarray) -> float:
    """1 - cosine similarity between two gradient vectors, in [0, 2]."""
    g = np.asarray(g, dtype=float)
    g_hat = np.asarray(g_hat, dtype=float)
    ng, nh = np.linalg.norm(g), np.linalg.norm(g_hat)
    if ng == 0.0 or nh == 0.0:
        raise TrainingError("gradient direction undefined for a zero vector")
    return float(1.0 - np.dot(g / ng, g_hat / nh))


def fidelity_error(u_hat: np.ndarray, u: np.ndarray) -> float:
    """Normalized unitary distance 1 - |tr(uhat^dag u) / N|^2."""
    u_hat = np.asarray(u_hat)
    u = np.asarray(u)
    if u_hat.shape != u.shape:
        raise TrainingError("dimension mismatch")
    n = u.shape[0]
    return float(1.0 - np.abs(np.trace(u_hat.conj().T @ u) / n) ** 2)


def perturb_phases(phases: MeshPhases, sigma: float, rng) -> MeshPhases:
    """Gaussian phase error on every theta and phi shifter (gamma untouched)."""
    if sigma < 0:
        raise TrainingError("sigma must be >= 0")
    if sigma == 0.0:
        return phases
    return MeshPhases(
        phases.theta + rng.normal(0.0, sigma, phases.theta.shape),
        phases.phi + rng.normal(0.0, sigma, phases.phi.shape),
        phases.gamma.copy(),
    )


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TrainLog:
    """Per-iteration metrics (deterministic given config and seed) plus
    wall-clock timings kept separately so logs hash reproducibly."""

    records: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    final: dict = field(default_factory=dict)

    def to_jsonl(self, path):
        import json

        with open(path, "w") as fh:
            fh.write(json.dumps({"meta": self.metadata}, sort_keys=True) + "\n")
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.write(json.dumps({"final": self.final}, sort_keys=True) + "\n")


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of one training run."""

    iterations: int = 1000
    batch_size: int = 1
    alpha: float = 0.01
    method: str = "digital"  # digital | analog | exact
    analog_k: int = 64
    readout: ReadoutConfig = field(default_factory=ReadoutConfig.ideal)
    seed: int = 0
    eval_every: int = 10
    log_every: int = 1
    device_eval: bool = False
    total_power: float = 1.0


def evaluate_model(model: PnnModel, dataset: Dataset, indices, input_map) -> tuple:
    """Ideal-mathematics cost and accuracy over a set of examples."""
    us = model.unitaries()
    losses, correct = [], 0
    for i in indices:
        x, z = prepare_example(dataset, i, input_map)
        y = model.ideal_output(x, us)
        losses.append(model.head.loss(y, z))
        if np.argmax(model.head.probabilities(y)) == np.argmax(z):
            correct += 1
    return float(np.mean(losses)), correct / len(indices)


def evaluate_device(model: PnnModel, dataset: Dataset, indices, input_map,
                    cfg: ReadoutConfig, rng) -> tuple:
    """Noisy-simulator cost and accuracy (forward passes only)."""
    from .insitu import mesh_forward

    losses, correct = [], 0
    for i in indices:
        x, z = prepare_example(dataset, i, input_map)
        v = np.asarray(x, dtype=complex)
        for ell, phases in enumerate(model.layers):
            p = float(np.linalg.norm(v)) ** 2
            res = mesh_forward(v / np.sqrt(p), phases, model.topology, cfg, rng)
            v = np.sqrt(p) * res.output
            if ell < model.n_layers - 1:
                v = np.abs(v)
        losses.append(model.head.loss(v, z))
        if np.argmax(model.head.probabilities(v)) == np.argmax(z):
            correct += 1
    return float(np.mean(losses)), correct / len(indices)


def exact_gradient(model: PnnModel, x: np.ndarray, z) -> InsituResult:
    """Noise-free reference gradient via bare field propagation.

    Runs the same mathematics as the optical protocol without the generation,
    readout, or sum-pass machinery: per layer the forward and adjoint tap
    fields give dL/d(eta) = -Im(x_eta * x_eta_adj) directly.
    """
    x = np.asarray(x, dtype=complex)
    topo = model.topology
    n_layers = model.n_layers
    # forward chain, keeping tap fields per layer
    values = []  # (y, fwd_taps)
    v = x
    for phases in model.layers:
        y, taps = propagate(topo, phases, v, "forward")
        values.append((y, taps))
        v = np.abs(y)
    y_out = values[-1][0]
    loss = model.head.loss(y_out, z)
    prediction = model.head.probabilities(y_out) if hasattr(model.head, "probabilities") else None
    beta = model.head.adjoint_seed(y_out, z)
    gradients = {}
    x_adj = np.zeros_like(x)
    for ell in range(n_layers, 0, -1):
        y, fwd_taps = values[ell - 1]
        if np.linalg.norm(beta) < 1e-18:
            m = topo.n_nodes
            gradients[ell] = GradientRecord(np.zeros(m), np.zeros(m),
                                            np.zeros(topo.gamma_count), "exact")
            x_adj = np.zeros_like(x)
            beta = np.zeros_like(x)
            continue
        x_adj, adj_taps = propagate(topo, model.layers[ell - 1], beta, "backward")
        gradients[ell] = GradientRecord(
            theta=-np.imag(fwd_taps.theta_fields * adj_taps.theta_fields),
            phi=-np.imag(fwd_taps.phi_fields * adj_taps.phi_fields),
            gamma=-np.imag(y * beta),
            method="exact",
        )
        if ell > 1:
            beta = np.conj(abs_vjp(values[ell - 2][0], x_adj))
    return InsituResult(x_adjoint=x_adj, gradients=gradients, loss=loss, prediction=prediction)


def _example_gradient(model, x, z, cfg, rng, method, analog_k) -> InsituResult:
    if method == "exact":
        return exact_gradient(model, x, z)
    return insitu_gradient(x, z, 1, model, cfg, rng, method, analog_k)


def train(model: PnnModel, dataset: Dataset, cfg: TrainConfig):
    """Minibatch training with per-example three-pass gradients and Adam.

    Every logged iteration also evaluates the exact (ideal-hardware) gradient
    on the same minibatch, giving the gradient direction error series.
    Returns (trained model, TrainLog).
    """
    input_map = fit_input_map(dataset, cfg.total_power) if dataset.inputs.shape[1] == 2 else None
    params = model.flat_parameters()
    state = OptimizerState.initial(params.size, alpha=cfg.alpha)
    log = TrainLog(metadata={"seed": cfg.seed, "iterations": cfg.iterations,
                             "batch_size": cfg.batch_size, "method": cfg.method})
    current = model
    for t in range(cfg.iterations):
        t0 = time.perf_counter()
        rng_batch = np.random.default_rng([cfg.seed, 17, t])
        idx = rng_batch.choice(dataset.train_idx, size=cfg.batch_size, replace=False)
        grads, costs = [], []
        for i in idx:
            x, z = prepare_example(dataset, int(i), input_map)
            res = _example_gradient(current, x, z, cfg.readout, rng_batch, cfg.method, cfg.analog_k)
            grads.append(res.flat_gradient(current.n_layers))
            costs.append(res.loss)
        g = np.mean(grads, axis=0)

        record = {"iteration": t, "train_cost": float(np.mean(costs))}
        if t % cfg.log_every == 0:
            if cfg.method == "exact":
                record["gradient_direction_error"] = 0.0
            else:
                ref = []
                for i in idx:
                    x, z = prepare_example(dataset, int(i), input_map)
                    res = _example_gradient(current, x, z, cfg.readout, None, "exact", cfg.analog_k)
                    ref.append(res.flat_gradient(current.n_layers))
                g_ref = np.mean(ref, axis=0)
                if np.linalg.norm(g) > 0 and np.linalg.norm(g_ref) > 0:
                    record["gradient_direction_error"] = gradient_direction_error(g_ref, g)
        if cfg.eval_every and t % cfg.eval_every == 0:
            tr_cost, tr_acc = evaluate_model(current, dataset, dataset.train_idx, input_map)
            te_cost, te_acc = evaluate_model(current, dataset, dataset.test_idx, input_map)
            record.update(model_train_cost=tr_cost, model_train_accuracy=tr_acc,
                          model_test_cost=te_cost, model_test_accuracy=te_acc)
            if cfg.device_eval:
                rng_eval = np.random.default_rng([cfg.seed, 23, t])
                _, dev_acc = evaluate_device(current, dataset, dataset.test_idx,
                                             input_map, cfg.readout, rng_eval)
                record["device_test_accuracy"] = dev_acc

        delta, state = adam_step(g, state)
        params = params + delta
        current = current.with_flat_parameters(params)
        log.records.append(record)
        log.timings.append(time.perf_counter() - t0)

    tr_cost, tr_acc = evaluate_model(current, dataset, dataset.train_idx, input_map)
    te_cost, te_acc = evaluate_model(current, dataset, dataset.test_idx, input_map)
    log.final = {"model_train_cost": tr_cost, "model_train_accuracy": tr_acc,
                 "model_test_cost": te_cost, "model_test_accuracy": te_acc}
    return current, log
