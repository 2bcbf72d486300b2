"""Losses, optimizer, schedules, and the training loop for all model modes.

Three modes share one loop:

* ``basenn``  -- a VectorNet fitted to the observed field by mean squared error.
* ``hnn``     -- a ScalarNet whose induced field J^{-1} grad H is fitted to the
  observations.
* ``symhnn``  -- hnn plus a Monte-Carlo symmetry loss that simultaneously
  learns K affine generators under which H is invariant; the symmetry weight
  delta ramps in after a warm-up so random initial generators cannot shape H
  before the dynamics data does.

The per-generator symmetry term is the sample mean of the squared derivative
of H along the lifted generator field, divided by the generator norm; unit-norm
and pairwise-orthogonality penalties keep the learned basis well conditioned.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import diffnet, geometry
from .datagen import SamplingDomain, SnapshotDataset, monte_carlo_phase_samples
from .diffnet import DTYPE, ScalarNet, VectorNet
from .errors import ConfigError, DataError, NumericError
from .geometry import AffineGenerator

log = logging.getLogger(__name__)

MODES = ("basenn", "hnn", "symhnn")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

BRACKET_PRIOR_MIN_NORM = 1e-6


@dataclass
class TrainConfig:
    epochs: int = 20000
    early_stop_patience: int = 10000
    lr0: float = 5e-3
    lr_factor: float = 0.95
    lr_patience: int = 50
    delta_max: float = 0.5
    warmup_flat: int = 100
    warmup_ramp: int = 100
    K: int = 1
    alpha: float = 1.0
    beta: float = 1.0
    mc_points: int = 128
    batch_size: int = 512  # 0 means full batch
    seed: int = 0
    hidden: tuple = (256, 256, 256)

    def __post_init__(self):
        if self.epochs < 1 or self.early_stop_patience < 1 or self.lr_patience < 1:
            raise ConfigError("epoch and patience counts must be positive")
        if self.mc_points < 1 or self.batch_size < 0 or self.K < 0:
            raise ConfigError("mc_points must be positive, batch_size and K nonnegative")
        if self.warmup_flat < 0 or self.warmup_ramp < 0:
            raise ConfigError("warm-up lengths must be nonnegative")
        if not 0 < self.lr_factor < 1 or self.lr0 <= 0:
            raise ConfigError("need lr0 > 0 and lr_factor in (0, 1)")
        if self.delta_max < 0 or self.alpha < 0 or self.beta < 0:
            raise ConfigError("delta_max, alpha, beta must be nonnegative")
        self.hidden = tuple(int(w) for w in self.hidden)
        if any(w <= 0 for w in self.hidden):
            raise ConfigError("hidden widths must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**data)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class GeneratorParams:
    """Learnable (M, b) pair living on the torch side of the fence."""

    def __init__(self, M: torch.Tensor, b: torch.Tensor):
        self.M = M
        self.b = b

    @classmethod
    def random_unit(cls, n: int, rng: np.random.Generator) -> "GeneratorParams":
        flat = rng.uniform(-1.0, 1.0, n * n + n)
        flat /= np.linalg.norm(flat)
        return cls.from_generator(AffineGenerator.from_flat(flat, n))

    @classmethod
    def from_generator(cls, gen: AffineGenerator) -> "GeneratorParams":
        return cls(
            torch.tensor(gen.M, dtype=DTYPE, requires_grad=True),
            torch.tensor(gen.b, dtype=DTYPE, requires_grad=True),
        )

    def to_generator(self) -> AffineGenerator:
        return AffineGenerator(self.M.detach().numpy().copy(), self.b.detach().numpy().copy())

    def tensors(self) -> list[torch.Tensor]:
        return [self.M, self.b]

    def norm(self) -> torch.Tensor:
        return torch.sqrt((self.M**2).sum() + (self.b**2).sum())


def _phase_split(Z: torch.Tensor) -> int:
    dim = Z.shape[-1]
    if dim % 2 != 0:
        raise DataError(f"phase dimension {dim} is odd")
    return dim // 2


def loss_dynamics(model, Z: torch.Tensor, Zdot: torch.Tensor, create_graph: bool = False) -> torch.Tensor:
    """Mean squared residual of the flow equations: |zdot - J^{-1} grad H|^2."""
    if len(Z) == 0:
        raise DataError("empty batch")
    n = _phase_split(Z)
    g = model.gradient_batch(Z, create_graph=create_graph)
    pred = torch.cat([g[:, n:], -g[:, :n]], dim=1)
    return ((Zdot - pred) ** 2).sum(dim=1).mean()


def loss_vectorfield(net: VectorNet, Z: torch.Tensor, Zdot: torch.Tensor) -> torch.Tensor:
    """Baseline fit: mean over samples of the squared Euclidean field error."""
    if len(Z) == 0:
        raise DataError("empty batch")
    return ((Zdot - net.field_batch(Z)) ** 2).sum(dim=1).mean()


def directional_derivative_batch(gen: GeneratorParams, grad_h: torch.Tensor, Z: torch.Tensor) -> torch.Tensor:
    """Derivative of H along the lifted generator field at each row, shape (B,)."""
    n = _phase_split(Z)
    q, p = Z[:, :n], Z[:, n:]
    field_q = -(q @ gen.M.T) - gen.b
    field_p = p @ gen.M
    return (field_q * grad_h[:, :n]).sum(dim=1) + (field_p * grad_h[:, n:]).sum(dim=1)


def loss_sym_k(model, gen: GeneratorParams, mc_Z: torch.Tensor, create_graph: bool = False) -> torch.Tensor:
    """Volume-normalized Monte-Carlo symmetry residual for one generator.

    The uniform-sample mean already carries the 1/volume factor of the
    normalized integral, so only the 1/|v| factor appears explicitly.
    """
    if len(mc_Z) == 0:
        raise DataError("empty Monte-Carlo sample")
    nrm = gen.norm()
    if nrm.item() <= 0:
        raise ValueError("symmetry loss is undefined for the zero generator")
    grad_h = model.gradient_batch(mc_Z, create_graph=create_graph)
    dd = directional_derivative_batch(gen, grad_h, mc_Z)
    return (dd**2).mean() / nrm


def loss_sym_total(
    model,
    generators: list[GeneratorParams],
    mc_Z: torch.Tensor,
    alpha: float = 1.0,
    beta: float = 1.0,
    create_graph: bool = False,
) -> torch.Tensor:
    """Symmetry residuals plus unit-norm and pairwise-orthogonality penalties."""
    if not generators:
        raise ValueError("need at least one generator")
    total = torch.zeros((), dtype=DTYPE)
    for k, gen in enumerate(generators):
        total = total + loss_sym_k(model, gen, mc_Z, create_graph=create_graph)
        total = total + alpha * (gen.norm() - 1.0) ** 2
        for prev in generators[:k]:
            ip = (gen.M * prev.M).sum() + (gen.b * prev.b).sum()
            total = total + beta * ip**2
    return total


def total_loss(
    model,
    generators: list[GeneratorParams],
    Z: torch.Tensor,
    Zdot: torch.Tensor,
    mc_Z: torch.Tensor,
    delta: float,
    alpha: float = 1.0,
    beta: float = 1.0,
    create_graph: bool = False,
) -> torch.Tensor:
    """Dynamics loss plus delta times the symmetry loss; plain HNN at delta=0."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    ld = loss_dynamics(model, Z, Zdot, create_graph=create_graph)
    if delta == 0 or not generators:
        return ld
    return ld + delta * loss_sym_total(model, generators, mc_Z, alpha, beta, create_graph=create_graph)


def delta_schedule(epoch: int, cfg: TrainConfig) -> float:
    """0 during the flat warm-up, then a linear ramp up to delta_max."""
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    ramp_pos = epoch - cfg.warmup_flat
    if ramp_pos < 0:
        return 0.0
    if ramp_pos >= cfg.warmup_ramp:
        return cfg.delta_max
    return cfg.delta_max * ramp_pos / cfg.warmup_ramp


@dataclass
class AdamState:
    m: torch.Tensor
    v: torch.Tensor
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(torch.zeros(size, dtype=DTYPE), torch.zeros(size, dtype=DTYPE))


def adam_step(
    theta: torch.Tensor,
    grad: torch.Tensor,
    state: AdamState,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> tuple[torch.Tensor, AdamState]:
    """One bias-corrected Adam update; returns the new parameters and state."""
    if theta.shape != grad.shape:
        raise DataError("parameter/gradient shape mismatch")
    if not torch.isfinite(grad).all():
        raise NumericError("non-finite gradient")
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * grad
    v = beta2 * state.v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    theta_new = theta - lr * m_hat / (torch.sqrt(v_hat) + eps)
    return theta_new, AdamState(m, v, t)


class PlateauScheduler:
    """Multiply lr by a factor when the monitored value stops improving.

    Improvement means a strict decrease of the best value seen so far; after
    lr_patience consecutive non-improving observations the rate is reduced and
    the patience counter restarts.
    """

    def __init__(self, lr0: float, factor: float = 0.95, patience: int = 50):
        self.lr = lr0
        self.factor = factor
        self.patience = patience
        self.best = np.inf
        self.wait = 0

    def observe(self, value: float) -> float:
        if value < self.best:
            self.best = value
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.lr *= self.factor
                self.wait = 0
        return self.lr


def bracket_prior(generators: list[AffineGenerator]) -> AffineGenerator | None:
    """Unit-normalized bracket of the two most recent generators, if sizable.

    Identified symmetries close under the bracket, so this is a cheap initial
    guess for the next basis element; near-zero brackets carry no information
    and yield None.
    """
    if len(generators) < 2:
        return None
    br = geometry.lie_bracket(generators[-2], generators[-1])
    nrm = geometry.norm(br)
    if nrm < BRACKET_PRIOR_MIN_NORM:
        return None
    return AffineGenerator(br.M / nrm, br.b / nrm)


@dataclass
class TrainedModel:
    """Checkpoint: network, learned generators, config, and loss history."""

    mode: str
    net: diffnet.DenseNet
    generators: list[AffineGenerator]
    config: TrainConfig
    history: list[dict]
    metadata: dict = field(default_factory=dict)

    def field(self):
        """The learned vector field as a plain numpy callable z -> zdot."""
        n_half = self.net.input_dim // 2
        if self.mode == "basenn":
            def fn(z: np.ndarray) -> np.ndarray:
                with torch.no_grad():
                    out = self.net(torch.as_tensor(z, dtype=DTYPE).reshape(1, -1))
                return out.numpy()[0]
        else:
            def fn(z: np.ndarray) -> np.ndarray:
                Z = torch.as_tensor(z, dtype=DTYPE).reshape(1, -1)
                g = self.net.gradient_batch(Z).detach().numpy()[0]
                return np.concatenate([g[n_half:], -g[:n_half]])
        return fn

    def save(self, path) -> None:
        payload = {
            "format_version": 1,
            "mode": self.mode,
            "net": diffnet.net_to_dict(self.net),
            "generators": [
                {"n": g.n, "M": g.M.ravel().tolist(), "b": g.b.tolist()}
                for g in self.generators
            ],
            "config": self.config.to_dict(),
            "metadata": self.metadata,
            "history": self.history,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TrainedModel":
        with open(path) as fh:
            payload = json.load(fh)
        if payload.get("format_version") != 1:
            raise DataError(f"unsupported checkpoint version in {path}")
        gens = [
            AffineGenerator(np.array(g["M"]).reshape(g["n"], g["n"]), np.array(g["b"]))
            for g in payload["generators"]
        ]
        return cls(
            mode=payload["mode"],
            net=diffnet.net_from_dict(payload["net"]),
            generators=gens,
            config=TrainConfig.from_dict(payload["config"]),
            history=payload["history"],
            metadata=payload["metadata"],
        )

    def write_history_csv(self, path) -> None:
        write_history_csv(self.history, path)


HISTORY_COLUMNS = ("epoch", "loss_train", "loss_val", "loss_sym", "lr", "delta")


def write_history_csv(history: list[dict], path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(HISTORY_COLUMNS) + "\n")
        for row in history:
            cells = [str(row["epoch"])] + [repr(float(row[c])) for c in HISTORY_COLUMNS[1:]]
            fh.write(",".join(cells) + "\n")


def _spawn_seeds(seed: int, count: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


def _init_generators(
    cfg: TrainConfig, n: int, rng: np.random.Generator, prior: "TrainedModel | None"
) -> list[GeneratorParams]:
    gens: list[GeneratorParams] = []
    prior_gens = list(prior.generators) if prior is not None else []
    for k in range(cfg.K):
        if k < len(prior_gens):
            gens.append(GeneratorParams.from_generator(prior_gens[k]))
            continue
        guess = bracket_prior([g.to_generator() for g in gens]) if len(gens) >= 2 else None
        if guess is not None:
            gens.append(GeneratorParams.from_generator(guess))
        else:
            gens.append(GeneratorParams.random_unit(n, rng))
    return gens


def train(
    dataset: SnapshotDataset,
    cfg: TrainConfig,
    mode: str,
    prior: TrainedModel | None = None,
    domain: SamplingDomain | None = None,
) -> TrainedModel:
    """Run the epoch loop and return the best-validation checkpoint.

    Every epoch shuffles the training split into minibatches, updates with
    Adam, evaluates the validation dynamics loss, feeds it to the plateau
    scheduler and the early-stopping counter, and (for symhnn) redraws the
    Monte-Carlo symmetry points.  With a prior model, network weights and the
    first K-1 generators start from the prior (incremental-K training).
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; choose from {MODES}")
    if mode == "symhnn" and cfg.K < 1:
        raise ConfigError("symhnn needs K >= 1")
    _, Z_train, Zdot_train = dataset.split("train")
    _, Z_val, Zdot_val = dataset.split("validation")
    if len(Z_train) == 0 or len(Z_val) == 0:
        raise DataError("training and validation splits must be nonempty")

    net_seed, gen_seed, shuffle_seed, mc_seed = _spawn_seeds(cfg.seed, 4)
    in_dim = 2 * dataset.n
    if mode == "basenn":
        net = VectorNet(in_dim, cfg.hidden, seed=net_seed)
    else:
        net = ScalarNet(in_dim, cfg.hidden, seed=net_seed)
    if prior is not None:
        if prior.net.layer_widths != net.layer_widths:
            raise ConfigError(
                f"prior widths {prior.net.layer_widths} do not match {net.layer_widths}"
            )
        diffnet.vector_to_params(
            diffnet.params_to_vector(prior.net.parameters()), net.parameters()
        )

    symmetric = mode == "symhnn"
    gens = _init_generators(cfg, dataset.n, np.random.default_rng(gen_seed), prior) if symmetric else []
    params = list(net.parameters()) + [t for g in gens for t in g.tensors()]

    shuffle_rng = np.random.default_rng(shuffle_seed)
    mc_rng = np.random.default_rng(mc_seed)
    if domain is None:
        domain = dataset.domain()

    Zt = torch.as_tensor(Z_train, dtype=DTYPE)
    Zdott = torch.as_tensor(Zdot_train, dtype=DTYPE)
    Zv = torch.as_tensor(Z_val, dtype=DTYPE)
    Zdotv = torch.as_tensor(Zdot_val, dtype=DTYPE)

    n_train = len(Zt)
    batch = cfg.batch_size if cfg.batch_size else n_train
    scheduler = PlateauScheduler(cfg.lr0, cfg.lr_factor, cfg.lr_patience)
    adam = AdamState.zeros(int(sum(p.numel() for p in params)))
    theta = diffnet.params_to_vector(params)

    best_val = np.inf
    best_theta = theta.clone()
    since_best = 0
    history: list[dict] = []

    for epoch in range(cfg.epochs):
        delta = delta_schedule(epoch, cfg) if symmetric else 0.0
        mc_Z = None
        if symmetric:
            mc_Z = torch.as_tensor(
                monte_carlo_phase_samples(domain, cfg.mc_points, mc_rng), dtype=DTYPE
            )

        perm = shuffle_rng.permutation(n_train)
        train_loss = 0.0
        for start in range(0, n_train, batch):
            idx = perm[start:start + batch]
            Zb, Zdotb = Zt[idx], Zdott[idx]
            if mode == "basenn":
                ld = loss_vectorfield(net, Zb, Zdotb)
            else:
                ld = loss_dynamics(net, Zb, Zdotb, create_graph=True)
            loss = ld
            if symmetric and delta > 0:
                loss = loss + delta * loss_sym_total(
                    net, gens, mc_Z, cfg.alpha, cfg.beta, create_graph=True
                )
            if not torch.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            grad = diffnet.loss_parameter_gradient(loss, params)
            theta, adam = adam_step(theta, grad, adam, scheduler.lr)
            diffnet.vector_to_params(theta, params)
            train_loss += ld.item() * len(idx) / n_train

        if mode == "basenn":
            with torch.no_grad():
                val_loss = loss_vectorfield(net, Zv, Zdotv).item()
        else:
            val_loss = loss_dynamics(net, Zv, Zdotv).item()
        if not np.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")

        sym_value = 0.0
        if symmetric:
            sym_value = loss_sym_total(net, gens, mc_Z, cfg.alpha, cfg.beta).item()

        lr_next = scheduler.observe(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_theta = theta.clone()
            since_best = 0
        else:
            since_best += 1

        history.append(
            {
                "epoch": epoch,
                "loss_train": train_loss,
                "loss_val": val_loss,
                "loss_sym": sym_value,
                "lr": lr_next,
                "delta": delta,
            }
        )
        if epoch % 100 == 0 or epoch == cfg.epochs - 1:
            log.info(
                "epoch=%d loss_train=%.6g loss_val=%.6g loss_sym=%.6g lr=%.4g delta=%.3g",
                epoch, train_loss, val_loss, sym_value, lr_next, delta,
            )
        if since_best >= cfg.early_stop_patience:
            log.info("early stop at epoch %d (no improvement for %d epochs)", epoch, since_best)
            break

    diffnet.vector_to_params(best_theta, params)
    metadata = {
        "system": dataset.metadata.get("system"),
        "dataset_size": dataset.size,
        "config_hash": cfg.digest(),
        "best_val": best_val,
        "epochs_run": len(history),
        "loss_reduction": "mean-over-samples of squared euclidean residual",
    }
    return TrainedModel(
        mode=mode,
        net=net,
        generators=[g.to_generator() for g in gens],
        config=cfg,
        history=history,
        metadata=metadata,
    )
