"""Complex-valued MZI building blocks, triangular mesh topology, field propagation
with per-shifter taps, and unitary decomposition.

Conventions used throughout:

* A mode vector is a 1-D complex ndarray; its squared norm is the total optical
  power.
* A single MZI consists of an external phase shifter ``phi`` on the top input
  arm, a 50/50 coupler, an internal phase shifter ``theta``, and a second 50/50
  coupler.
* In the default ``single_shifter`` mesh variant the internal shifter applies
  ``exp(i * theta)`` on the top internal arm, giving the per-node transfer
  ``exp(i*theta/2) * T(theta, phi)`` where ``T`` is the ``standard``
  2x2 matrix below.  This positive-exponent placement is what makes the
  three-pass tap-power gradient identity reproduce true parameter derivatives;
  the ``standard`` (differential-arm) variant is kept for unit tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CROSS_THETA = 0.0
BAR_THETA = np.pi

TWO_PI = 2.0 * np.pi

# 50/50 directional coupler.
_COUPLER = np.array([[1.0, 1.0j], [1.0j, 1.0]], dtype=complex) / np.sqrt(2.0)


class MeshError(ValueError):
    """Raised on malformed topology, phases, or non-unitary input."""


def mzi_transfer(theta: float, phi: float, variant: str = "standard") -> np.ndarray:
    """2x2 MZI transfer matrix.

    ``standard`` returns ``i * [[e^{i phi} sin(t/2), cos(t/2)],
    [e^{i phi} cos(t/2), -sin(t/2)]]``; ``global_phase`` scales it by
    ``e^{-i theta/2}`` (single internal shifter referenced to the lower arm).
    """
    s, c = np.sin(theta / 2.0), np.cos(theta / 2.0)
    eip = np.exp(1j * phi)
    m = 1j * np.array([[eip * s, c], [eip * c, -s]], dtype=complex)
    if variant == "global_phase":
        m = np.exp(-1j * theta / 2.0) * m
    elif variant != "standard":
        raise MeshError(f"unknown MZI variant {variant!r}")
    return m


@dataclass(frozen=True)
class MziNode:
    """Placement of one MZI: acts on waveguides (top_waveguide, top_waveguide+1)."""

    column: int
    top_waveguide: int
    theta_index: int
    phi_index: int


@dataclass(frozen=True)
class MeshTopology:
    """Ordered MZI arrangement on ``n_modes`` waveguides.

    ``nodes`` are listed in propagation order (light hits nodes[0] first);
    nodes sharing a column act on disjoint waveguide pairs.  ``variant``
    selects the internal shifter model: ``single_shifter`` (default, transfer
    ``e^{i theta/2} T``) or ``standard`` (differential arms, transfer ``T``).
    """

    n_modes: int
    nodes: tuple[MziNode, ...]
    gamma_count: int
    variant: str = "single_shifter"
    # waveguide indices grouped by column, precomputed for vectorized passes
    _columns: tuple[tuple[np.ndarray, np.ndarray, np.ndarray], ...] = field(
        init=False, repr=False, compare=False, default=()
    )

    def __post_init__(self):
        if self.variant not in ("single_shifter", "standard"):
            raise MeshError(f"unknown mesh variant {self.variant!r}")
        seen = set()
        for node in self.nodes:
            if node.top_waveguide + 1 >= self.n_modes:
                raise MeshError(f"node {node} exceeds mesh width {self.n_modes}")
            key = (node.theta_index, node.phi_index)
            if key in seen:
                raise MeshError(f"duplicate phase indices on node {node}")
            seen.add(key)
        by_col: dict[int, list[MziNode]] = {}
        for node in self.nodes:
            by_col.setdefault(node.column, []).append(node)
        columns = []
        for col in sorted(by_col):
            group = by_col[col]
            tops = np.array([n.top_waveguide for n in group], dtype=int)
            if len(set(tops) | set(tops + 1)) != 2 * len(group):
                raise MeshError(f"column {col} has overlapping waveguide pairs")
            columns.append(
                (
                    tops,
                    np.array([n.theta_index for n in group], dtype=int),
                    np.array([n.phi_index for n in group], dtype=int),
                )
            )
        object.__setattr__(self, "_columns", tuple(columns))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @classmethod
    def triangular(cls, n_modes: int, variant: str = "single_shifter") -> "MeshTopology":
        """Triangular mesh with n(n-1)/2 MZIs.

        Node order follows the nullification schedule of the decomposition in
        reverse, so phases_from_unitary() and build_unitary() share indexing.
        """
        if n_modes < 1:
            raise MeshError("mesh needs at least one mode")
        pairs = []
        for row in range(n_modes - 1, 0, -1):
            for col in range(row):
                pairs.append(col)
        nodes = []
        depth = [0] * n_modes  # next free column per waveguide
        for k, top in enumerate(pairs):
            col = max(depth[top], depth[top + 1])
            nodes.append(MziNode(column=col, top_waveguide=top, theta_index=k, phi_index=k))
            depth[top] = depth[top + 1] = col + 1
        return cls(n_modes=n_modes, nodes=tuple(nodes), gamma_count=n_modes, variant=variant)


@dataclass(frozen=True)
class MeshPhases:
    """Phase settings (theta, phi, gamma) of one mesh layer.

    Angles are stored wrapped to [0, 2pi).  Decomposition emits theta in the
    canonical [0, pi] branch; propagation accepts any wrapped theta so that
    perturbation experiments are not clipped at the branch boundary.
    """

    theta: np.ndarray
    phi: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        for name in ("theta", "phi", "gamma"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise MeshError(f"non-finite {name} entries")
            object.__setattr__(self, name, np.mod(arr, TWO_PI))

    @property
    def n_parameters(self) -> int:
        return self.theta.size + self.phi.size + self.gamma.size

    def flat(self) -> np.ndarray:
        """Concatenated (theta, phi, gamma) parameter vector."""
        return np.concatenate([self.theta, self.phi, self.gamma])

    @classmethod
    def from_flat(cls, vec: np.ndarray, topology: MeshTopology) -> "MeshPhases":
        m = topology.n_nodes
        return cls(vec[:m], vec[m : 2 * m], vec[2 * m : 2 * m + topology.gamma_count])

    @classmethod
    def zeros(cls, topology: MeshTopology) -> "MeshPhases":
        m = topology.n_nodes
        return cls(np.zeros(m), np.zeros(m), np.zeros(topology.gamma_count))

    @classmethod
    def bar_state(cls, topology: MeshTopology) -> "MeshPhases":
        """All MZIs in the bar state (theta = pi), phases zero."""
        m = topology.n_nodes
        return cls(np.full(m, BAR_THETA), np.zeros(m), np.zeros(topology.gamma_count))

    @classmethod
    def random(cls, topology: MeshTopology, rng: np.random.Generator) -> "MeshPhases":
        m = topology.n_nodes
        return cls(
            rng.uniform(0.0, np.pi, m),
            rng.uniform(0.0, TWO_PI, m),
            rng.uniform(0.0, TWO_PI, topology.gamma_count),
        )


@dataclass(frozen=True)
class FieldTapRecord:
    """Complex field at each shifter's monitor point for one optical pass.

    theta_fields[i] is the amplitude entering theta shifter i (top internal
    arm); phi_fields[i] the amplitude entering phi shifter i (top input arm).
    Backward passes record the field at the same physical points, i.e. after
    the counter-propagating light has traversed the shifter.
    """

    theta_fields: np.ndarray
    phi_fields: np.ndarray

    def powers(self) -> tuple[np.ndarray, np.ndarray]:
        return np.abs(self.theta_fields) ** 2, np.abs(self.phi_fields) ** 2


def _check_phases(topology: MeshTopology, phases: MeshPhases):
    if phases.theta.size != topology.n_nodes or phases.phi.size != topology.n_nodes:
        raise MeshError("phase arrays do not match topology node count")
    if phases.gamma.size != topology.gamma_count:
        raise MeshError("gamma length does not match topology")


def _node_block(theta: float, phi: float, variant: str) -> np.ndarray:
    if variant == "single_shifter":
        return np.exp(1j * theta / 2.0) * mzi_transfer(theta, phi, "standard")
    return mzi_transfer(theta, phi, "standard")


def build_unitary(topology: MeshTopology, phases: MeshPhases) -> np.ndarray:
    """N x N transfer matrix: per-column node embeddings followed by e^{i gamma}."""
    _check_phases(topology, phases)
    n = topology.n_modes
    u = np.eye(n, dtype=complex)
    for node in topology.nodes:
        block = _node_block(phases.theta[node.theta_index], phases.phi[node.phi_index], topology.variant)
        i = node.top_waveguide
        u[i : i + 2, :] = block @ u[i : i + 2, :]
    return np.exp(1j * phases.gamma)[:, None] * u


def propagate(
    topology: MeshTopology,
    phases: MeshPhases,
    mode_vector: np.ndarray,
    direction: str = "forward",
) -> tuple[np.ndarray, FieldTapRecord]:
    """Propagate a mode vector through the mesh, recording shifter taps.

    Forward output equals build_unitary(...) @ x; backward output equals
    build_unitary(...).T @ x (columns visited in reverse).  The output gamma
    phases are applied at the boundary only and never appear in tap records.
    """
    _check_phases(topology, phases)
    x = np.asarray(mode_vector, dtype=complex)
    if x.shape != (topology.n_modes,):
        raise MeshError(f"mode vector has shape {x.shape}, expected ({topology.n_modes},)")
    v = x.copy()
    m = topology.n_nodes
    theta_taps = np.zeros(m, dtype=complex)
    phi_taps = np.zeros(m, dtype=complex)
    single = topology.variant == "single_shifter"
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    eiph = np.exp(1j * phases.phi)
    if single:
        eith = np.exp(1j * phases.theta)
        eith_half = None
    else:
        eith_half = np.exp(0.5j * phases.theta)
        eith = None

    if direction == "forward":
        for tops, th_idx, ph_idx in topology._columns:
            t, b = v[tops], v[tops + 1]
            phi_taps[ph_idx] = t
            t = eiph[ph_idx] * t
            a = (t + 1j * b) * inv_sqrt2
            bb = (1j * t + b) * inv_sqrt2
            theta_taps[th_idx] = a
            if single:
                a = eith[th_idx] * a
            else:
                a = eith_half[th_idx] * a
                bb = bb / eith_half[th_idx]
            v[tops] = (a + 1j * bb) * inv_sqrt2
            v[tops + 1] = (1j * a + bb) * inv_sqrt2
        v *= np.exp(1j * phases.gamma)
    elif direction == "backward":
        v *= np.exp(1j * phases.gamma)
        for tops, th_idx, ph_idx in reversed(topology._columns):
            p, q = v[tops], v[tops + 1]
            a = (p + 1j * q) * inv_sqrt2
            bb = (1j * p + q) * inv_sqrt2
            if single:
                a = eith[th_idx] * a
            else:
                a = eith_half[th_idx] * a
                bb = bb / eith_half[th_idx]
            theta_taps[th_idx] = a
            p = (a + 1j * bb) * inv_sqrt2
            q = (1j * a + bb) * inv_sqrt2
            p = eiph[ph_idx] * p
            phi_taps[ph_idx] = p
            v[tops] = p
            v[tops + 1] = q
    else:
        raise MeshError(f"unknown direction {direction!r}")
    return v, FieldTapRecord(theta_fields=theta_taps, phi_fields=phi_taps)


def unitarity_deviation(u: np.ndarray) -> float:
    n = u.shape[0]
    return float(np.max(np.abs(u.conj().T @ u - np.eye(n))))


def phases_from_unitary(
    u: np.ndarray,
    topology: MeshTopology | None = None,
    tol: float = 1e-8,
) -> MeshPhases:
    """Recover mesh phases implementing a unitary on the triangular topology.

    Column-by-column nullification; theta outputs lie in [0, pi].  The
    rebuilt matrix reproduces ``u`` elementwise to ~1e-9 for N <= 16.
    """
    u = np.asarray(u, dtype=complex)
    if u.ndim != 2 or u.shape[0] != u.shape[1] or u.shape[0] < 1:
        raise MeshError(f"expected a square matrix, got shape {u.shape}")
    n = u.shape[0]
    dev = unitarity_deviation(u)
    if dev > tol:
        raise MeshError(f"input is not unitary: max deviation {dev:.3e} > tol {tol:.3e}")
    if topology is None:
        topology = MeshTopology.triangular(n)
    if topology.n_modes != n:
        raise MeshError("topology size does not match matrix")

    if n == 1:
        return MeshPhases(np.zeros(0), np.zeros(0), np.array([np.angle(u[0, 0])]))

    v = u.copy()
    m = topology.n_nodes
    theta = np.zeros(m)
    phi = np.zeros(m)
    # Nullification visits nodes in propagation order: right-multiply by each
    # node block's conjugate transpose to zero v[row, col].
    step = 0
    for row in range(n - 1, 0, -1):
        for col in range(row):
            node = topology.nodes[step]
            assert node.top_waveguide == col, "topology ordering out of sync"
            a, b = v[row, col], v[row, col + 1]
            if abs(a) < 1e-14:
                th, ph = BAR_THETA, 0.0
            elif abs(b) < 1e-14:
                th, ph = CROSS_THETA, 0.0
            else:
                th = 2.0 * np.arctan2(abs(b), abs(a))
                ph = np.mod(np.pi - np.angle(b / a), TWO_PI)
            theta[node.theta_index] = th
            phi[node.phi_index] = ph
            block = _node_block(th, ph, topology.variant)
            v[:, col : col + 2] = v[:, col : col + 2] @ block.conj().T
            step += 1
    gamma = np.angle(np.diag(v))
    return MeshPhases(theta, phi, np.mod(gamma, TWO_PI))


def route_to_mzi(topology: MeshTopology, target: MziNode) -> MeshPhases:
    """Phase settings steering unit input power to the target MZI's top input.

    With every MZI in the bar state, light injected at waveguide
    ``target.top_waveguide`` travels straight to the target; the matching
    input port is ``routing_input_port(target)``.
    """
    if target not in topology.nodes:
        raise MeshError(f"target {target} not part of topology")
    return MeshPhases.bar_state(topology)


def routing_input_port(target: MziNode) -> int:
    """Input port paired with route_to_mzi()'s phase settings."""
    return target.top_waveguide


def haar_random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed random unitary via QR with phase correction."""
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def dft_matrix(n: int) -> np.ndarray:
    """Unitary discrete Fourier transform matrix."""
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)
