"""Post-training diagnostics: loss tables, rollouts, traces, error fields, grids.

Everything here reads immutable models and emits plain data (numpy arrays or
rows of Python scalars); the CLI turns these into CSV/JSON report files.
Plotting is deliberately out of scope.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import geometry
from .datagen import SamplingDomain, SnapshotDataset
from .diffnet import DTYPE
from .errors import DataError, IntegrationError
from .geometry import AffineGenerator, PhasePoint
from .integrators import Trajectory, implicit_midpoint
from .systems import TWO_BODY_MIN_RADIUS, ReferenceSystem, vector_field
from .training import (
    GeneratorParams,
    TrainedModel,
    loss_dynamics,
    loss_sym_total,
    loss_vectorfield,
)

_EVAL_CHUNK = 8192


def _scalar_model(model) -> object:
    """Accept a TrainedModel, ScalarNet, or exact-Hamiltonian adapter."""
    if isinstance(model, TrainedModel):
        if model.mode == "basenn":
            raise DataError("the vector-field baseline has no Hamiltonian")
        return model.net
    return model


def _chunked_loss(fn, Z: np.ndarray, Zdot: np.ndarray) -> float:
    total, count = 0.0, 0
    for start in range(0, len(Z), _EVAL_CHUNK):
        zb = torch.as_tensor(Z[start:start + _EVAL_CHUNK], dtype=DTYPE)
        zdotb = torch.as_tensor(Zdot[start:start + _EVAL_CHUNK], dtype=DTYPE)
        total += fn(zb, zdotb).item() * len(zb)
        count += len(zb)
    return total / count


def loss_table(
    models: dict[str, TrainedModel],
    dataset: SnapshotDataset,
    mesh_points_per_axis: int = 5,
) -> list[dict]:
    """Per-split data losses plus the symmetry loss on a fixed phase-space mesh.

    The symmetry loss is deliberately not a data-split quantity: it is
    evaluated on a deterministic mesh over the sampling domain.
    """
    system_name = dataset.metadata.get("system", {}).get("name")
    mesh = dataset.domain().mesh(mesh_points_per_axis)
    rows = []
    for name, model in models.items():
        model_system = model.metadata.get("system") or {}
        if model_system.get("name") not in (None, system_name):
            raise DataError(
                f"model {name!r} was trained on {model_system.get('name')!r}, "
                f"dataset is {system_name!r}"
            )
        if model.mode == "basenn":
            metric = "vf"
            fn = lambda Z, Zdot: loss_vectorfield(model.net, Z, Zdot)
        else:
            metric = "dynamics"
            fn = lambda Z, Zdot: loss_dynamics(model.net, Z, Zdot)
        row = {"model": name, "loss": metric}
        for split in ("train", "validation", "test"):
            _, Z, Zdot = dataset.split(split)
            row[split] = _chunked_loss(fn, Z, Zdot)
        row["sym"] = None
        if model.generators:
            gens = [GeneratorParams.from_generator(g) for g in model.generators]
            row["sym"] = loss_sym_total(
                model.net, gens, torch.as_tensor(mesh, dtype=DTYPE),
                model.config.alpha, model.config.beta,
            ).item()
        rows.append(row)
    return rows


@dataclass
class RolloutResult:
    trajectory: Trajectory | None
    energy: np.ndarray | None  # true H along the rollout, shifted to start at 0
    error: str | None = None


def rollout_compare(
    models: dict[str, TrainedModel],
    sys: ReferenceSystem,
    z0,
    t_end: float,
    h: float,
) -> dict[str, RolloutResult]:
    """Implicit-midpoint rollouts of each learned field and the true field.

    The energy trace always uses the TRUE Hamiltonian, shifted by its initial
    value, so distinct models are comparable.  A failed implicit solve is
    reported per model instead of aborting the comparison.
    """
    z0 = z0.z if isinstance(z0, PhasePoint) else np.asarray(z0, dtype=float)
    results: dict[str, RolloutResult] = {}
    fields = {"true": lambda z: vector_field(sys, z)}
    for name, model in models.items():
        fields[name] = model.field()
    for name, field in fields.items():
        try:
            traj = implicit_midpoint(field, z0, t_end, h, provenance=f"{name}/implicit-midpoint")
        except IntegrationError as exc:
            results[name] = RolloutResult(None, None, error=str(exc))
            continue
        energy = sys.hamiltonian(traj.states)
        results[name] = RolloutResult(traj, energy - energy[0])
    return results


def conserved_trace(v: AffineGenerator, traj: Trajectory) -> np.ndarray:
    """The invariant I(q, p) = p . (-Mq - b) along a trajectory."""
    return np.array([
        geometry.conserved_quantity(v, traj.point(i)) for i in range(len(traj.times))
    ])


@dataclass
class SymmetryErrorReport:
    values: np.ndarray  # directional derivative of H along the generator field
    summary: dict  # min, q1, median, q3, max
    aggregate: float  # mean squared value divided by the generator norm
    histogram_counts: np.ndarray
    histogram_edges: np.ndarray


def symmetry_error_field(
    model, v: AffineGenerator, samples: np.ndarray, histogram_bins: int = 40
) -> SymmetryErrorReport:
    """Pointwise symmetry errors of a (learned) Hamiltonian at given samples."""
    samples = np.asarray(samples, dtype=float)
    if len(samples) == 0:
        raise DataError("need at least one sample")
    net = _scalar_model(model)
    values = []
    for start in range(0, len(samples), _EVAL_CHUNK):
        Z = torch.as_tensor(samples[start:start + _EVAL_CHUNK], dtype=DTYPE)
        grad = net.gradient_batch(Z).detach().numpy()
        n = samples.shape[1] // 2
        q, p = samples[start:start + _EVAL_CHUNK, :n], samples[start:start + _EVAL_CHUNK, n:]
        dd = ((-q @ v.M.T - v.b) * grad[:, :n]).sum(axis=1) + ((p @ v.M) * grad[:, n:]).sum(axis=1)
        values.append(dd)
    values = np.concatenate(values)
    lo, q1, med, q3, hi = np.percentile(values, [0, 25, 50, 75, 100])
    counts, edges = np.histogram(values, bins=histogram_bins)
    nrm = geometry.norm(v)
    if nrm == 0:
        raise ValueError("symmetry error is undefined for the zero generator")
    return SymmetryErrorReport(
        values=values,
        summary={"min": lo, "q1": q1, "median": med, "q3": q3, "max": hi},
        aggregate=float(np.mean(values**2) / nrm),
        histogram_counts=counts,
        histogram_edges=edges,
    )


def hamiltonian_values_fn(model_or_system):
    """A batched H evaluator (B, 2n) -> (B,) for nets, adapters, or systems.

    Points inside a reference system's singular region come back as NaN so
    grids over the full plane stay well defined.
    """
    if isinstance(model_or_system, ReferenceSystem):
        sys = model_or_system

        def fn(Z: np.ndarray) -> np.ndarray:
            out = np.full(len(Z), np.nan)
            ok = np.ones(len(Z), dtype=bool)
            if sys.name == "two-body":
                ok = np.linalg.norm(Z[:, :sys.n], axis=1) >= TWO_BODY_MIN_RADIUS
            if ok.any():
                out[ok] = sys.hamiltonian(Z[ok])
            return out

        return fn

    net = _scalar_model(model_or_system)

    def fn(Z: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            return net.values(torch.as_tensor(Z, dtype=DTYPE)).numpy()

    return fn


def level_set_grid(
    model_or_system,
    fixed: np.ndarray,
    free_axes: tuple[int, int],
    axis_a: np.ndarray,
    axis_b: np.ndarray,
) -> np.ndarray:
    """H over a regular grid of two free coordinates, others held at `fixed`.

    Returns shape (len(axis_a), len(axis_b)); entry [i, j] is H at the point
    with coordinate free_axes[0] = axis_a[i] and free_axes[1] = axis_b[j].
    """
    axis_a = np.asarray(axis_a, dtype=float)
    axis_b = np.asarray(axis_b, dtype=float)
    if len(axis_a) < 2 or len(axis_b) < 2:
        raise ValueError("grid needs at least 2 points per axis")
    fixed = np.asarray(fixed, dtype=float)
    aa, bb = np.meshgrid(axis_a, axis_b, indexing="ij")
    Z = np.tile(fixed, (aa.size, 1))
    Z[:, free_axes[0]] = aa.ravel()
    Z[:, free_axes[1]] = bb.ravel()
    values = hamiltonian_values_fn(model_or_system)(Z)
    return values.reshape(len(axis_a), len(axis_b))


def generator_alignment(v_learned: AffineGenerator, v_true: AffineGenerator) -> float:
    """Absolute cosine of the angle between two generators, in [0, 1]."""
    n1, n2 = geometry.norm(v_learned), geometry.norm(v_true)
    if n1 == 0 or n2 == 0:
        raise ValueError("alignment is undefined for a zero generator")
    return abs(geometry.inner_product(v_learned, v_true)) / (n1 * n2)


def evaluation_domain(train_domain: SamplingDomain, system_name: str, q_factor: float = 1.2) -> SamplingDomain:
    """Slightly larger region than training for out-of-sample symmetry checks."""
    if system_name == "cart-pendulum":
        wider_p = np.array([[-2.0, 2.0], [-2 * np.pi, 2 * np.pi]])
        return train_domain.scaled(q_factor, wider_p)
    return train_domain.scaled(q_factor)


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(report_dir, files: list[str], inputs: dict, settings: dict) -> Path:
    """Record every produced file with its hash; enough to re-run evaluation."""
    report_dir = Path(report_dir)
    manifest = {
        "inputs": inputs,
        "settings": settings,
        "files": [
            {"path": name, "sha256": file_sha256(report_dir / name)}
            for name in sorted(files)
        ],
    }
    path = report_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path
