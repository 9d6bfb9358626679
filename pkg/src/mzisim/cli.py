"""Reproducible experiment runner: subcommand CLI, config handling with hash
stamping, and the closed-form energy calculator."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hardware import (
    CalibrationError,
    CalibrationModel,
    HardwareErrorConfig,
    fit_calibration,
    simulate_calibration_sweep,
)
from .insitu import analog_gradient, insitu_gradient, mesh_backward
from .mesh import MeshTopology, dft_matrix, phases_from_unitary
from .mnist import IdxError
from .training import (
    FidelityHead,
    PnnModel,
    SoftmaxGroupHead,
    TrainConfig,
    exact_gradient,
    gradient_direction_error,
    make_dataset,
    perturb_phases,
    prepare_example,
    fit_input_map,
    train,
)
from .vecio import ReadoutConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


@dataclass(frozen=True)
class EnergyParams:
    """Per-operation energies of the closed-form cost model."""

    n_modes: int
    e_inp: float = 1.0
    e_meas: float = 1.0
    e_grad: float = 1.0
    e_grad_digital: float = 1.0

    def __post_init__(self):
        if min(self.e_inp, self.e_meas, self.e_grad, self.e_grad_digital) < 0:
            raise ValueError("energies must be >= 0")
        if self.n_modes < 1:
            raise ValueError("n_modes must be >= 1")


def energy_estimate(params: EnergyParams, scheme: str) -> float:
    """Energy of one pass through an N-mode mesh under a given scheme.

    inference: N (E_inp + E_meas); analog three-pass gradient:
    N^2 E_grad + N (3 E_inp + 2 E_meas); digital subtraction:
    3 N^2 E_grad_digital + N (3 E_inp + 2 E_meas).
    """
    n = params.n_modes
    io3 = n * (3.0 * params.e_inp + 2.0 * params.e_meas)
    if scheme == "inference":
        return n * (params.e_inp + params.e_meas)
    if scheme == "backprop_analog":
        return n * n * params.e_grad + io3
    if scheme == "backprop_digital":
        return 3.0 * n * n * params.e_grad_digital + io3
    raise ValueError(f"unknown scheme {scheme!r}")


DEFAULT_CONFIG = {
    "experiment": "train",
    "dataset": {"kind": "circle", "n": 250, "noise": 0.03, "seed": 7},
    "model": {"n_modes": 4, "n_layers": 3, "n_groups": 2},
    "train": {
        "iterations": 1000,
        "batch_size": 1,
        "alpha": 0.01,
        "method": "digital",
        "analog_k": 64,
        "eval_every": 10,
        "log_every": 10,
        "total_power": 3.0,
    },
    "hardware": {
        "a_error": 0.0,
        "p_error": 0.0,
        "snr_db": None,  # null means noiseless detectors
        "tap_coupling_spread": 0.0,
        "seed": 0,
    },
    "readout": {"mode": "ideal", "true_phase": False},
    "seed": 3,
}

DATASET_OVERRIDES = {
    # per-task defaults reproducing the reference experiments
    "circle": {"dataset": {"kind": "circle", "n": 250, "noise": 0.03, "seed": 7}, "seed": 3},
    "moons": {"dataset": {"kind": "moons", "n": 250, "noise": 0.05, "seed": 7}, "seed": 9},
    "ring": {
        "dataset": {"kind": "ring", "n": 250, "noise": 0.02, "seed": 7},
        "train": {"iterations": 3000, "batch_size": 16, "alpha": 0.02, "method": "exact"},
        "seed": 1,
    },
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = val
    return out


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path: str | None, overrides: dict) -> dict:
    cfg = dict(DEFAULT_CONFIG)
    if path is not None:
        with open(path) as fh:
            cfg = _deep_merge(cfg, json.load(fh))
    return _deep_merge(cfg, overrides)


def hardware_from_config(cfg: dict, n_modes: int) -> HardwareErrorConfig:
    hw = cfg["hardware"]
    snr = hw.get("snr_db")
    return HardwareErrorConfig(
        a_error=hw.get("a_error", 0.0),
        p_error=hw.get("p_error", 0.0),
        snr_db=np.inf if snr is None else float(snr),
        tap_coupling_spread=hw.get("tap_coupling_spread", 0.0),
        seed=hw.get("seed", 0),
        snr_ref_intensity=1.0 / n_modes,
    )


def readout_from_config(cfg: dict, n_modes: int) -> ReadoutConfig:
    return ReadoutConfig(
        mode=cfg["readout"].get("mode", "ideal"),
        error=hardware_from_config(cfg, n_modes),
        true_phase=cfg["readout"].get("true_phase", False),
        probe_phase_error=cfg["readout"].get("probe_phase_error", 0.05),
    )


def _write_json(path: Path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _stamp(cfg: dict) -> dict:
    return {"config_hash": config_hash(cfg), "seed": cfg.get("seed", 0)}


def _mnist_dataset(ds_cfg: dict, total_power: float):
    """64-mode digit dataset from canonical IDX files in dataset.dir."""
    import numpy as _np

    from .mnist import load_mnist64
    from .training import Dataset

    root = Path(ds_cfg.get("dir", "."))
    xtr, ztr = load_mnist64(root / "train-images-idx3-ubyte.gz",
                            root / "train-labels-idx1-ubyte.gz",
                            limit=ds_cfg.get("n_train", 2000))
    xte, zte = load_mnist64(root / "t10k-images-idx3-ubyte.gz",
                            root / "t10k-labels-idx1-ubyte.gz",
                            limit=ds_cfg.get("n_test", 400))
    inputs = _np.vstack([xtr, xte]) * _np.sqrt(total_power)
    labels = _np.vstack([ztr, zte])
    return Dataset(inputs=inputs, labels=labels,
                   train_idx=_np.arange(len(xtr)),
                   test_idx=_np.arange(len(xtr), len(xtr) + len(xte)),
                   kind="mnist64")


def cmd_train(cfg: dict, out_dir: Path) -> int:
    ds_cfg = cfg["dataset"]
    model_cfg = cfg["model"]
    if ds_cfg["kind"] == "mnist64":
        model_cfg = _deep_merge(model_cfg, {"n_modes": 64, "n_layers": 2, "n_groups": 10})
        dataset = _mnist_dataset(ds_cfg, ds_cfg.get("total_power", 10.0))
    else:
        dataset = make_dataset(ds_cfg["kind"], ds_cfg["n"], ds_cfg["noise"], ds_cfg["seed"])
    rng = np.random.default_rng(cfg["seed"])
    model = PnnModel.random(
        model_cfg["n_modes"], model_cfg["n_layers"], SoftmaxGroupHead(model_cfg["n_groups"]), rng
    )
    tr = cfg["train"]
    train_cfg = TrainConfig(
        iterations=tr["iterations"],
        batch_size=tr["batch_size"],
        alpha=tr["alpha"],
        method=tr["method"],
        analog_k=tr.get("analog_k", 64),
        readout=readout_from_config(cfg, model_cfg["n_modes"]),
        seed=cfg["seed"],
        eval_every=tr.get("eval_every", 10),
        log_every=tr.get("log_every", 1),
        device_eval=tr.get("device_eval", False),
        total_power=tr.get("total_power", 1.0),
    )
    trained, log = train(model, dataset, train_cfg)
    log.metadata.update(_stamp(cfg))
    log.to_jsonl(out_dir / "trainlog.jsonl")
    _write_json(out_dir / "final_metrics.json", {**_stamp(cfg), **log.final})
    final = log.final
    print(
        f"train done: test_accuracy={final['model_test_accuracy']:.3f} "
        f"train_accuracy={final['model_train_accuracy']:.3f}"
    )
    return EXIT_OK


def gradcheck_report(n_modes=4, n_layers=3, n_examples=10, seed=0, step=1e-5) -> dict:
    """Compare every in-situ phase gradient against central finite differences."""
    rng = np.random.default_rng(seed)
    model = PnnModel.random(n_modes, n_layers, SoftmaxGroupHead(2), rng)
    worst = 0.0
    for _ in range(n_examples):
        x = rng.standard_normal(n_modes) + 1j * rng.standard_normal(n_modes)
        x *= 0.9 / np.linalg.norm(x)
        z = np.zeros(2)
        z[rng.integers(0, 2)] = 1.0
        res = insitu_gradient(x, z, 1, model)
        g = res.flat_gradient(n_layers)
        v0 = model.flat_parameters()
        fd = np.zeros_like(v0)
        for i in range(v0.size):
            vp, vm = v0.copy(), v0.copy()
            vp[i] += step
            vm[i] -= step
            mp = model.with_flat_parameters(vp)
            mm = model.with_flat_parameters(vm)
            fd[i] = (mp.head.loss(mp.ideal_output(x), z) - mm.head.loss(mm.ideal_output(x), z)) / (2 * step)
        scale = max(np.max(np.abs(fd)), 1e-12)
        worst = max(worst, float(np.max(np.abs(g - fd)) / scale))
    return {"max_relative_error": worst, "n_examples": n_examples,
            "n_modes": n_modes, "n_layers": n_layers, "step": step}


def cmd_gradcheck(cfg: dict, out_dir: Path) -> int:
    report = gradcheck_report(
        cfg["model"]["n_modes"], cfg["model"]["n_layers"],
        cfg.get("gradcheck", {}).get("examples", 10), cfg["seed"],
    )
    report.update(_stamp(cfg))
    _write_json(out_dir / "gradcheck.json", report)
    print(f"gradcheck max relative error: {report['max_relative_error']:.3e}")
    return EXIT_OK if report["max_relative_error"] < 1e-5 else EXIT_NUMERICAL


def _sweep_point(args):
    """Mean gradient direction error of one noise grid point (worker task)."""
    cfg, knob, value, grid_index = args
    n_modes = cfg["model"]["n_modes"]
    n_layers = cfg["model"]["n_layers"]
    model = PnnModel.random(
        n_modes, n_layers, SoftmaxGroupHead(cfg["model"]["n_groups"]),
        np.random.default_rng(cfg["seed"]),
    )
    dataset = make_dataset(
        cfg["dataset"]["kind"], cfg["dataset"]["n"], cfg["dataset"]["noise"], cfg["dataset"]["seed"]
    )
    imap = fit_input_map(dataset, cfg["train"].get("total_power", 1.0))
    hw = {"a_error": 0.0, "p_error": 0.0, "snr_db": None,
          "tap_coupling_spread": 0.0, "seed": cfg["hardware"].get("seed", 0)}
    hw[knob] = value
    point_cfg = _deep_merge(cfg, {"hardware": hw, "readout": {"mode": "self_configure"}})
    ro = readout_from_config(point_cfg, n_modes)
    errs = []
    for inst in range(cfg.get("noise_sweep", {}).get("instances", 10)):
        # each grid point owns seeds derived from the master seed and index
        rng_i = np.random.default_rng([cfg["seed"], grid_index, inst])
        idx = int(rng_i.choice(dataset.train_idx))
        x, z = prepare_example(dataset, idx, imap)
        g = insitu_gradient(x, z, 1, model, ro, rng_i, "digital").flat_gradient(n_layers)
        g_ref = exact_gradient(model, x, z).flat_gradient(n_layers)
        if np.linalg.norm(g) > 0 and np.linalg.norm(g_ref) > 0:
            errs.append(gradient_direction_error(g_ref, g))
    return knob, "inf" if value is None else value, float(np.mean(errs))


def cmd_noise_sweep(cfg: dict, out_dir: Path) -> int:
    """Gradient direction error grids over amplitude, phase, and detector noise."""
    sweep = cfg.setdefault(
        "noise_sweep",
        {
            "a_error": [0.0, 0.01, 0.02, 0.05],
            "p_error": [0.0, 0.01, 0.02, 0.05],
            "snr_db": [None, 30.0, 20.0, 10.0],
            "instances": 10,
        },
    )
    tasks = []
    grid_index = 0
    for knob in ("a_error", "p_error", "snr_db"):
        for value in sweep[knob]:
            tasks.append((cfg, knob, value, grid_index))
            grid_index += 1
    workers = int(sweep.get("workers", 1))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, tasks))
    else:
        rows = [_sweep_point(t) for t in tasks]
    stamp = _stamp(cfg)
    with open(out_dir / "noise_sweep.tsv", "w") as fh:
        fh.write(f"# config_hash={stamp['config_hash']} seed={stamp['seed']}\n")
        fh.write("knob\tvalue\tmean_gradient_direction_error\n")
        for knob, value, err in rows:
            fh.write(f"{knob}\t{value}\t{err:.6g}\n")
    print(f"noise sweep wrote {len(rows)} grid points")
    return EXIT_OK


def cmd_calibrate(cfg: dict, out_dir: Path) -> int:
    cal = cfg.get("calibrate", {"n_points": 201})
    true_model = CalibrationModel.default_synthetic()
    hw = hardware_from_config(cfg, cfg["model"]["n_modes"])
    rng = np.random.default_rng(cfg["seed"])
    samples = simulate_calibration_sweep(true_model, cal.get("n_points", 201), hw, rng)
    fitted = fit_calibration(samples)
    fitted.save(out_dir / "calibration.json")
    vs = np.linspace(*true_model.v_range, 301)
    rms = float(np.sqrt(np.mean(
        (np.polyval(fitted.p_coeffs, vs) - np.polyval(true_model.p_coeffs, vs)) ** 2
    )))
    _write_json(out_dir / "calibration_report.json",
                {**_stamp(cfg), "rms_phase_error": rms, "fit_rms": fitted.fit_rms})
    print(f"calibration RMS phase error vs truth: {rms:.4g} rad")
    return EXIT_OK


def cmd_analog_demo(cfg: dict, out_dir: Path) -> int:
    """Adjoint-phase sweep traces for a mesh perturbed from the 4-point DFT."""
    n = 4
    target = dft_matrix(n)
    base = phases_from_unitary(target)
    topo = MeshTopology.triangular(n)
    ro = readout_from_config(cfg, n)
    stamp = _stamp(cfg)
    for sigma in cfg.get("analog_demo", {}).get("sigmas", [1.0, 0.2]):
        rng = np.random.default_rng([cfg["seed"], int(sigma * 10)])
        phases = perturb_phases(base, sigma, rng)
        head = FidelityHead(target=target, row=0)
        x = head.input_vector()
        model = PnnModel(topology=topo, layers=(phases,), head=head)
        res = insitu_gradient(x, None, 1, model, ro, rng, "digital")
        beta = head.adjoint_seed(model.ideal_output(x), None)
        beta_unit = beta / np.linalg.norm(beta)
        bwd = mesh_backward(beta_unit, phases, topo, ro, rng)
        _, sweep = analog_gradient(x, bwd.output, phases, topo,
                                   cfg["train"].get("analog_k", 64), ro, rng)
        path = out_dir / f"analog_traces_sigma{sigma:g}.tsv"
        with open(path, "w") as fh:
            fh.write(f"# config_hash={stamp['config_hash']} seed={stamp['seed']} sigma={sigma}\n")
            fh.write("zeta\t" + "\t".join(f"theta_{i}" for i in range(topo.n_nodes)) + "\n")
            for k, z in enumerate(sweep.zeta_samples):
                row = "\t".join(f"{v:.8g}" for v in sweep.theta_traces[k])
                fh.write(f"{z:.8g}\t{row}\n")
    print("analog demo traces written")
    return EXIT_OK


def cmd_energy(cfg: dict, out_dir: Path) -> int:
    e = cfg.get("energy", {})
    params = EnergyParams(
        n_modes=e.get("n_modes", cfg["model"]["n_modes"]),
        e_inp=e.get("e_inp", 1.0),
        e_meas=e.get("e_meas", 1.0),
        e_grad=e.get("e_grad", 1.0),
        e_grad_digital=e.get("e_grad_digital", 1.0),
    )
    report = {
        scheme: energy_estimate(params, scheme)
        for scheme in ("inference", "backprop_analog", "backprop_digital")
    }
    report.update(_stamp(cfg))
    _write_json(out_dir / "energy.json", report)
    for scheme in ("inference", "backprop_analog", "backprop_digital"):
        print(f"{scheme}: {report[scheme]:g} J")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "gradcheck": cmd_gradcheck,
    "noise-sweep": cmd_noise_sweep,
    "calibrate": cmd_calibrate,
    "analog-demo": cmd_analog_demo,
    "energy": cmd_energy,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mzisim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=str, default="out")
        p.add_argument("--method", choices=["digital", "analog", "exact"], default=None)
        p.add_argument("--ideal", action="store_true", help="disable all hardware error")
        p.add_argument("--dataset", type=str, default=None,
                       help="dataset kind (circle, moons, ring)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.method is not None:
        overrides["train"] = {"method": args.method}
    if args.ideal:
        overrides["hardware"] = {"a_error": 0.0, "p_error": 0.0, "snr_db": None,
                                 "tap_coupling_spread": 0.0}
        overrides["readout"] = {"mode": "ideal"}
    if args.dataset is not None:
        base = DATASET_OVERRIDES.get(args.dataset, {"dataset": {"kind": args.dataset}})
        overrides = _deep_merge(base, overrides)
    try:
        cfg = load_config(args.config, overrides)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](cfg, out_dir)
    except CalibrationError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FileNotFoundError as exc:
        print(f"data ingestion failure: {exc}", file=sys.stderr)
        return EXIT_DATA
    except IdxError as exc:
        print(f"data ingestion failure: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (KeyError, ValueError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
