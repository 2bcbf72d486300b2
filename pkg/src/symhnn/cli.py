"""Command-line entry point: data generation, training, evaluation, pipelines.

Subcommands: generate-data, train, evaluate, rollout, run.  The `run` command
drives the full experiment from a JSON config file; flags override config
values, and reruns with the same seeds produce byte-identical artifacts.
Exit codes: 2 config errors, 3 data errors, 4 numeric failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import datagen, evaluation, systems, training
from .datagen import SnapshotDataset, build_dataset, monte_carlo_phase_samples
from .errors import (
    ConfigError,
    DataError,
    DomainError,
    IntegrationError,
    NumericError,
)
from .integrators import implicit_midpoint, rk4
from .training import TrainConfig, TrainedModel, train

log = logging.getLogger("symhnn")

DATASET_DEFAULTS = {
    "cart-pendulum": {"count": 1000, "horizon": 3.0, "rate": 15.0},
    "two-body": {"count": 5000, "horizon": 10.0, "rate": 1.0},
}
ROLLOUT_DEFAULTS = {
    "cart-pendulum": {"z0": [0.0, 2.34, 0.49, 1.54], "h": 1.0 / 15.0},
    "two-body": {"z0": [7.0, 0.0, 1.72, 12.05], "h": 0.01},
}

_CONFIG_SCHEMA = {
    "system": {"name", "params"},
    "dataset": {"count", "horizon", "rate", "noise_var", "seed"},
    "train": {"basenn", "hnn", "symhnn"},
    "evaluation": {
        "rollout_z0", "rollout_horizon", "rollout_step",
        "grid_res", "samples", "seed",
    },
    "out_dir": None,
}


def _check_keys(data: dict, allowed, context: str) -> None:
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {context}")


def load_experiment_config(path) -> dict:
    """Load and validate the pipeline config; unknown keys are rejected."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    _check_keys(cfg, _CONFIG_SCHEMA, "config")
    for section, allowed in _CONFIG_SCHEMA.items():
        if allowed is None or section not in cfg:
            continue
        _check_keys(cfg[section], allowed, f"config.{section}")
    if "system" not in cfg or "name" not in cfg["system"]:
        raise ConfigError("config.system.name is required")
    if cfg["system"]["name"] not in DATASET_DEFAULTS:
        raise ConfigError(f"unknown system {cfg['system']['name']!r}")
    train_section = cfg.get("train", {})
    train_fields = set(TrainConfig().to_dict())
    for mode, entry in train_section.items():
        _check_keys(entry, train_fields, f"config.train.{mode}")
    return cfg


def _train_config(entry: dict) -> TrainConfig:
    try:
        return TrainConfig(**entry)
    except TypeError as exc:
        raise ConfigError(f"bad training config: {exc}") from exc


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.split(",")])
    except ValueError as exc:
        raise ConfigError(f"cannot parse vector {text!r}: {exc}") from exc


def _make_system(name: str, params: dict | None = None):
    return systems.make_system(name, params)


# ---------------------------------------------------------------- commands


def cmd_generate_data(args) -> list[str]:
    defaults = DATASET_DEFAULTS[args.system]
    count = args.count if args.count is not None else defaults["count"]
    horizon = args.horizon if args.horizon is not None else defaults["horizon"]
    rate = args.rate if args.rate is not None else defaults["rate"]
    sys_ = _make_system(args.system)
    if args.system == "cart-pendulum":
        initials = datagen.sample_cart_pendulum_initials(count, args.seed)
    else:
        initials = datagen.sample_two_body_initials(count, args.seed, k=sys_.params["k"])
    # decorrelate snapshot noise from the initial-condition draw
    ds = build_dataset(
        sys_, initials, horizon, rate, args.noise_var, seed=args.seed + 1,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ds.save(out)
    log.info("wrote %d records to %s", ds.size, out)
    return [str(out), str(datagen.sidecar_path(out))]


def cmd_train(args) -> list[str]:
    ds = SnapshotDataset.load(args.dataset)
    overrides = {
        "epochs": args.epochs,
        "lr0": args.lr,
        "delta_max": args.delta_max,
        "mc_points": args.mc_points,
        "batch_size": args.batch_size,
        "seed": args.seed,
        "K": args.k,
    }
    if args.hidden:
        overrides["hidden"] = tuple(int(w) for w in args.hidden.split(","))
    cfg = TrainConfig(**{k: v for k, v in overrides.items() if v is not None})
    prior = TrainedModel.load(args.prior) if args.prior else None
    model = train(ds, cfg, args.mode, prior=prior)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    history_path = args.history_out or out.with_suffix(".history.csv")
    model.write_history_csv(history_path)
    log.info("wrote checkpoint %s and history %s", out, history_path)
    return [str(out), str(history_path)]


def cmd_evaluate(args) -> list[str]:
    ds = SnapshotDataset.load(args.dataset)
    models = {}
    for path in args.models:
        model = TrainedModel.load(path)
        name = Path(path).stem
        while name in models:
            name += "_"
        models[name] = model
    report_dir = Path(args.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    files = run_evaluation(
        models=models,
        dataset=ds,
        report_dir=report_dir,
        rollout_z0=_parse_vector(args.rollout_z0) if args.rollout_z0 else None,
        rollout_horizon=args.rollout_horizon,
        rollout_step=args.rollout_step,
        grid_res=args.grid_res,
        samples=args.samples,
        seed=args.seed,
        inputs={"dataset": str(args.dataset), "models": [str(p) for p in args.models]},
    )
    return files


def cmd_rollout(args) -> list[str]:
    if bool(args.model) == bool(args.system):
        raise ConfigError("give exactly one of --model or --system")
    if args.model:
        model = TrainedModel.load(args.model)
        field = model.field()
        sys_name = (model.metadata.get("system") or {}).get("name")
    else:
        sys_name = args.system
        sys_ = _make_system(sys_name)
        field = lambda z: systems.vector_field(sys_, z)
    defaults = ROLLOUT_DEFAULTS.get(sys_name, {"z0": None, "h": 0.01})
    z0 = _parse_vector(args.z0) if args.z0 else defaults["z0"]
    if z0 is None:
        raise ConfigError("--z0 is required for this model")
    h = args.h if args.h is not None else defaults["h"]
    if args.integrator == "midpoint":
        traj = implicit_midpoint(field, np.asarray(z0, float), args.t_end, h)
    else:
        traj = rk4(field, np.asarray(z0, float), args.t_end,
                   sample_times=np.arange(0, args.t_end + h / 2, h))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    traj.write_csv(out)
    log.info("wrote rollout %s (%d samples)", out, len(traj.times))
    return [str(out)]


def cmd_run(args) -> list[str]:
    cfg = load_experiment_config(args.config)
    out_dir = Path(
        args.out_dir or os.environ.get("SYMHNN_OUT_DIR") or cfg.get("out_dir", "runs/out")
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    produced: list[str] = []

    sys_name = cfg["system"]["name"]
    sys_ = _make_system(sys_name, cfg["system"].get("params"))

    ds_cfg = dict(DATASET_DEFAULTS[sys_name])
    ds_cfg.update({"noise_var": 1e-2, "seed": 0})
    ds_cfg.update(cfg.get("dataset", {}))
    dataset_path = out_dir / "dataset.csv"
    if sys_name == "cart-pendulum":
        initials = datagen.sample_cart_pendulum_initials(ds_cfg["count"], ds_cfg["seed"])
    else:
        initials = datagen.sample_two_body_initials(ds_cfg["count"], ds_cfg["seed"], k=sys_.params["k"])
    ds = build_dataset(
        sys_, initials, ds_cfg["horizon"], ds_cfg["rate"], ds_cfg["noise_var"],
        seed=ds_cfg["seed"] + 1,
    )
    ds.save(dataset_path)
    produced += [str(dataset_path), str(datagen.sidecar_path(dataset_path))]
    log.info("stage data: %d records", ds.size)

    models = {}
    checkpoints = {}
    for mode in ("basenn", "hnn", "symhnn"):
        if mode not in cfg.get("train", {}):
            continue
        tcfg = _train_config(cfg["train"][mode])
        model = train(ds, tcfg, mode)
        ckpt = out_dir / f"model_{mode}.json"
        hist = out_dir / f"history_{mode}.csv"
        model.save(ckpt)
        model.write_history_csv(hist)
        models[mode] = model
        checkpoints[mode] = str(ckpt)
        produced += [str(ckpt), str(hist)]
        log.info("stage train[%s]: best_val=%.6g", mode, model.metadata["best_val"])

    if models:
        eval_cfg = cfg.get("evaluation", {})
        report_dir = out_dir / "report"
        report_dir.mkdir(parents=True, exist_ok=True)
        files = run_evaluation(
            models=models,
            dataset=ds,
            report_dir=report_dir,
            rollout_z0=np.array(eval_cfg["rollout_z0"], dtype=float) if "rollout_z0" in eval_cfg else None,
            rollout_horizon=eval_cfg.get("rollout_horizon", 60.0),
            rollout_step=eval_cfg.get("rollout_step"),
            grid_res=eval_cfg.get("grid_res", 21),
            samples=eval_cfg.get("samples", 1000),
            seed=eval_cfg.get("seed", 0),
            inputs={"dataset": str(dataset_path), "models": checkpoints},
        )
        produced += files

    manifest = {
        "config": cfg,
        "files": [
            {"path": str(Path(p).relative_to(out_dir)), "sha256": evaluation.file_sha256(p)}
            for p in sorted(produced)
        ],
    }
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    produced.append(str(manifest_path))
    log.info("pipeline complete: %d files under %s", len(produced), out_dir)
    return produced


def run_evaluation(
    models: dict[str, TrainedModel],
    dataset: SnapshotDataset,
    report_dir: Path,
    rollout_z0=None,
    rollout_horizon: float = 60.0,
    rollout_step: float | None = None,
    grid_res: int = 21,
    samples: int = 1000,
    seed: int = 0,
    inputs: dict | None = None,
) -> list[str]:
    """Produce the full report directory for a set of trained models."""
    report_dir = Path(report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    sys_meta = dataset.metadata["system"]
    sys_ = _make_system(sys_meta["name"], sys_meta.get("params"))
    defaults = ROLLOUT_DEFAULTS[sys_.name]
    z0 = np.asarray(rollout_z0 if rollout_z0 is not None else defaults["z0"], dtype=float)
    h = rollout_step if rollout_step is not None else defaults["h"]
    files: list[str] = []

    def _write(name: str, writer) -> None:
        writer(report_dir / name)
        files.append(name)

    # loss table
    table = evaluation.loss_table(models, dataset)
    def _write_table(path):
        with open(path, "w") as fh:
            fh.write("model,loss,train,validation,test,sym\n")
            for row in table:
                sym = "" if row["sym"] is None else repr(row["sym"])
                fh.write(
                    f"{row['model']},{row['loss']},{row['train']!r},"
                    f"{row['validation']!r},{row['test']!r},{sym}\n"
                )
    _write("loss_table.csv", _write_table)

    # rollouts, energy traces, conserved-quantity traces
    rollouts = evaluation.rollout_compare(models, sys_, z0, rollout_horizon, h)
    true_gen = sys_.true_generators[0]
    rollout_errors = {}
    for name, result in rollouts.items():
        if result.error is not None:
            rollout_errors[name] = result.error
            continue
        _write(f"rollout_{name}.csv", result.trajectory.write_csv)

        def _write_energy(path, res=result):
            with open(path, "w") as fh:
                fh.write("t,energy_shift\n")
                for t, e in zip(res.trajectory.times, res.energy):
                    fh.write(f"{t!r},{e!r}\n")
        _write(f"energy_{name}.csv", _write_energy)

        gens = {"true": true_gen}
        model = models.get(name)
        if model is not None:
            for i, g in enumerate(model.generators):
                gens[f"learned{i + 1}"] = g
        traces = {
            label: evaluation.conserved_trace(g, result.trajectory)
            for label, g in gens.items()
        }

        def _write_conserved(path, res=result, traces=traces):
            with open(path, "w") as fh:
                fh.write("t," + ",".join(traces) + "\n")
                for i, t in enumerate(res.trajectory.times):
                    cells = [repr(float(t))] + [repr(float(v[i])) for v in traces.values()]
                    fh.write(",".join(cells) + "\n")
        _write(f"conserved_{name}.csv", _write_conserved)

    # symmetry-error fields over a region slightly larger than training
    eval_domain = evaluation.evaluation_domain(dataset.domain(), sys_.name)
    sym_samples = monte_carlo_phase_samples(eval_domain, samples, seed)
    summary: dict = {"rollout_errors": rollout_errors, "models": {}}
    for name, model in models.items():
        if model.mode == "basenn":
            continue
        entry = {}
        report = evaluation.symmetry_error_field(model, true_gen, sym_samples)
        entry["true_generator"] = {"aggregate": report.aggregate, **report.summary}
        _write(f"symmetry_samples_{name}_true.csv",
               lambda p, r=report: _write_samples(p, sym_samples, r.values))
        for i, g in enumerate(model.generators):
            rep = evaluation.symmetry_error_field(model, g, sym_samples)
            entry[f"learned{i + 1}"] = {
                "aggregate": rep.aggregate,
                "alignment_with_true": evaluation.generator_alignment(g, true_gen),
                **rep.summary,
            }
            _write(f"symmetry_samples_{name}_learned{i + 1}.csv",
                   lambda p, r=rep: _write_samples(p, sym_samples, r.values))
        summary["models"][name] = entry

    def _write_summary(path):
        with open(path, "w") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
    _write("symmetry_summary.json", _write_summary)

    # level-set grids of the true and learned Hamiltonians
    for label, target in [("true", sys_)] + [
        (name, m) for name, m in models.items() if m.mode != "basenn"
    ]:
        for grid_name, free_axes, base in _grid_specs(sys_):
            axis_a, axis_b = _grid_axes(dataset, free_axes, grid_res)
            grid = evaluation.level_set_grid(target, base, free_axes, axis_a, axis_b)

            def _write_grid(path, grid=grid, axis_a=axis_a, axis_b=axis_b,
                            free_axes=free_axes, base=base):
                payload = {
                    "free_axes": list(free_axes),
                    "fixed": base.tolist(),
                    "axis_a": axis_a.tolist(),
                    "axis_b": axis_b.tolist(),
                    "values": [[None if np.isnan(v) else v for v in row] for row in grid],
                    "train_domain": dataset.domain().to_dict(),
                }
                with open(path, "w") as fh:
                    json.dump(payload, fh)
                    fh.write("\n")
            _write(f"levelset_{label}_{grid_name}.json", _write_grid)

    evaluation.write_manifest(
        report_dir, files,
        inputs=inputs or {},
        settings={
            "rollout_z0": z0.tolist(), "rollout_horizon": rollout_horizon,
            "rollout_step": h, "grid_res": grid_res, "samples": samples, "seed": seed,
        },
    )
    files.append("manifest.json")
    return [str(report_dir / f) for f in files]


def _write_samples(path, Z: np.ndarray, values: np.ndarray) -> None:
    n = Z.shape[1] // 2
    header = [f"q{i+1}" for i in range(n)] + [f"p{i+1}" for i in range(n)] + ["value"]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row, v in zip(Z, values):
            fh.write(",".join(repr(float(x)) for x in (*row, v)) + "\n")


def _grid_specs(sys_):
    zero = np.zeros(2 * sys_.n)
    if sys_.name == "cart-pendulum":
        return [("q", (0, 1), zero), ("p", (2, 3), zero)]
    offset = zero.copy()
    offset[:2] = 3.0  # momentum cross-section away from the singularity
    return [("q", (0, 1), zero), ("p", (2, 3), offset)]


def _grid_axes(dataset: SnapshotDataset, free_axes, grid_res: int):
    domain = dataset.domain()
    if domain.kind == "box":
        box = domain.box
        return (
            np.linspace(box[free_axes[0], 0], box[free_axes[0], 1], grid_res),
            np.linspace(box[free_axes[1], 0], box[free_axes[1], 1], grid_res),
        )
    if free_axes[0] < dataset.n:  # configuration plane: bounding box of the annulus
        r = domain.r_max
        return np.linspace(-r, r, grid_res), np.linspace(-r, r, grid_res)
    mbox = domain.momentum_box
    i, j = free_axes[0] - dataset.n, free_axes[1] - dataset.n
    return (
        np.linspace(mbox[i, 0], mbox[i, 1], grid_res),
        np.linspace(mbox[j, 0], mbox[j, 1], grid_res),
    )


# ---------------------------------------------------------------- wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="symhnn",
        description="Learn Hamiltonians and their symmetry generators from vector-field snapshots.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="sample trajectories and write a snapshot dataset")
    p.add_argument("--system", required=True, choices=sorted(DATASET_DEFAULTS))
    p.add_argument("--count", type=int, default=None, help="number of initial conditions")
    p.add_argument("--horizon", type=float, default=None, help="trajectory length in seconds")
    p.add_argument("--rate", type=float, default=None, help="snapshot rate in Hz")
    p.add_argument("--noise-var", type=float, default=1e-2, dest="noise_var")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train one model on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", required=True, choices=training.MODES)
    p.add_argument("--k", type=int, default=None, help="number of symmetry generators")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--delta-max", type=float, default=None, dest="delta_max")
    p.add_argument("--mc-points", type=int, default=None, dest="mc_points")
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--hidden", default=None, help="comma-separated hidden widths")
    p.add_argument("--prior", default=None, help="checkpoint to initialize from")
    p.add_argument("--history-out", default=None, dest="history_out")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="write the diagnostic report for trained models")
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--report-dir", required=True, dest="report_dir")
    p.add_argument("--rollout-z0", default=None, dest="rollout_z0",
                   help="comma-separated initial state")
    p.add_argument("--rollout-horizon", type=float, default=60.0, dest="rollout_horizon")
    p.add_argument("--rollout-step", type=float, default=None, dest="rollout_step")
    p.add_argument("--grid-res", type=int, default=21, dest="grid_res")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rollout", help="integrate a learned or true field")
    p.add_argument("--model", default=None)
    p.add_argument("--system", default=None, choices=sorted(DATASET_DEFAULTS))
    p.add_argument("--z0", default=None, help="comma-separated initial state")
    p.add_argument("--t-end", type=float, required=True, dest="t_end")
    p.add_argument("--h", type=float, default=None)
    p.add_argument("--integrator", choices=("midpoint", "rk4"), default="midpoint")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("run", help="full pipeline: data, training, evaluation")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None, dest="out_dir")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    threads = os.environ.get("SYMHNN_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, DomainError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, IntegrationError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
