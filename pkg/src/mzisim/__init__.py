"""mzisim: MZI photonic mesh simulator with optical three-pass gradient training.

The package simulates programmable triangular Mach-Zehnder meshes at the
field level, including the forward/adjoint/sum optical passes whose monitored
tap powers yield exact parameter gradients, configurable hardware error
models (I/O field errors, detector shot noise, tap coupling spread,
voltage-phase calibration), and a training harness reproducing the reference
classification and noise-robustness experiments.
"""

from .hardware import (
    CalibrationError,
    CalibrationModel,
    HardwareErrorConfig,
    fit_calibration,
    measure_power,
    perturb_input,
    phase_from_voltage,
    simulate_calibration_sweep,
    voltage_from_phase,
)
from .insitu import (
    AnalogSweep,
    GradientRecord,
    InsituResult,
    PassResult,
    ProtocolError,
    abs_vjp,
    analog_gradient,
    digital_gradient,
    fidelity_loss_adjoint,
    insitu_gradient,
    mesh_backward,
    mesh_forward,
    output_vjp,
)
from .mesh import (
    BAR_THETA,
    CROSS_THETA,
    FieldTapRecord,
    MeshError,
    MeshPhases,
    MeshTopology,
    MziNode,
    build_unitary,
    dft_matrix,
    haar_random_unitary,
    mzi_transfer,
    phases_from_unitary,
    propagate,
    route_to_mzi,
    routing_input_port,
)
from .training import (
    Dataset,
    FidelityHead,
    OptimizerState,
    PnnModel,
    SoftmaxGroupHead,
    TrainConfig,
    TrainLog,
    adam_step,
    exact_gradient,
    fidelity_error,
    format_input,
    gradient_direction_error,
    make_dataset,
    perturb_phases,
    train,
)
from .vecio import (
    ReadoutConfig,
    VectorIoError,
    VectorUnitPhases,
    embed_reference,
    four_point_phase,
    phase2vec,
    self_configure_analyzer,
    strip_reference,
    vec2phase,
)

__all__ = [
    "AnalogSweep", "BAR_THETA", "CROSS_THETA", "CalibrationError",
    "CalibrationModel", "Dataset", "FidelityHead", "FieldTapRecord",
    "GradientRecord", "HardwareErrorConfig", "InsituResult", "MeshError",
    "MeshPhases", "MeshTopology", "MziNode", "OptimizerState", "PassResult",
    "PnnModel", "ProtocolError", "ReadoutConfig", "SoftmaxGroupHead",
    "TrainConfig", "TrainLog", "VectorIoError", "VectorUnitPhases",
    "abs_vjp", "adam_step", "analog_gradient", "build_unitary",
    "dft_matrix", "digital_gradient", "embed_reference", "exact_gradient",
    "fidelity_error", "fidelity_loss_adjoint", "fit_calibration",
    "format_input", "four_point_phase", "gradient_direction_error",
    "haar_random_unitary", "insitu_gradient", "make_dataset",
    "measure_power", "mesh_backward", "mesh_forward", "mzi_transfer",
    "output_vjp", "perturb_input", "perturb_phases", "phase2vec",
    "phase_from_voltage", "phases_from_unitary", "propagate",
    "route_to_mzi", "routing_input_port", "self_configure_analyzer",
    "simulate_calibration_sweep", "strip_reference", "train", "vec2phase",
    "voltage_from_phase",
]
