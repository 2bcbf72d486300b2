"""Initial-condition sampling, snapshot extraction, noise, and dataset files.

Training data is built by integrating sampled initial conditions with the
exact dynamics, evaluating the true vector field on a snapshot grid, and
adding Gaussian noise to the field values only (states stay exact).  Records
are shuffled and stored in split order (train block, validation block, test
block) next to a JSON metadata sidecar; floats are written with repr so files
round-trip bit-exactly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DomainError, IntegrationError
from .geometry import PhasePoint
from .integrators import rk4
from .systems import KEPLER_K_DEFAULT, ReferenceSystem, vector_field

log = logging.getLogger(__name__)

SPLIT_FRACTIONS = (0.70, 0.15, 0.15)

CART_PENDULUM_BOX = np.array(
    [[-5.0, 5.0], [-np.pi, np.pi], [-1.0, 1.0], [-np.pi, np.pi]]
)
TWO_BODY_RADIUS = (5.0, 10.0)
TWO_BODY_SPEED_RANGE = (0.7, 1.3)


@dataclass(frozen=True)
class SamplingDomain:
    """Region of phase space to draw symmetry-loss samples from.

    Either an axis-aligned box over all 2n coordinates, or (for the orbit
    problem) an annulus in q crossed with a box in p.
    """

    kind: str  # "box" or "annulus"
    box: np.ndarray | None = None  # (2n, 2) bounds for kind == "box"
    r_min: float = 0.0
    r_max: float = 0.0
    momentum_box: np.ndarray | None = None  # (n, 2) bounds for kind == "annulus"

    def __post_init__(self):
        if self.kind == "box":
            box = np.asarray(self.box, dtype=float)
            if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 0] >= box[:, 1]):
                raise DataError("box bounds must be ordered (2n, 2)")
            object.__setattr__(self, "box", box)
        elif self.kind == "annulus":
            if not 0 < self.r_min < self.r_max:
                raise DataError("annulus requires 0 < r_min < r_max")
            mbox = np.asarray(self.momentum_box, dtype=float)
            if mbox.ndim != 2 or mbox.shape[1] != 2 or np.any(mbox[:, 0] >= mbox[:, 1]):
                raise DataError("momentum box bounds must be ordered (n, 2)")
            object.__setattr__(self, "momentum_box", mbox)
        else:
            raise DataError(f"unknown domain kind {self.kind!r}")

    @property
    def phase_dim(self) -> int:
        if self.kind == "box":
            return self.box.shape[0]
        return 2 * self.momentum_box.shape[0]

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform samples on the region, shape (count, 2n)."""
        if self.kind == "box":
            return rng.uniform(self.box[:, 0], self.box[:, 1], size=(count, self.phase_dim))
        # area-uniform radius on the annulus, uniform box momenta
        r = np.sqrt(rng.uniform(self.r_min**2, self.r_max**2, count))
        theta = rng.uniform(0.0, 2 * np.pi, count)
        q = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
        mbox = self.momentum_box
        p = rng.uniform(mbox[:, 0], mbox[:, 1], size=(count, mbox.shape[0]))
        return np.concatenate([q, p], axis=1)

    def mesh(self, points_per_axis: int = 6) -> np.ndarray:
        """Deterministic grid on the region (used where a fixed mesh is wanted)."""
        if self.kind == "box":
            axes = [np.linspace(lo, hi, points_per_axis) for lo, hi in self.box]
            grids = np.meshgrid(*axes, indexing="ij")
            return np.stack([g.ravel() for g in grids], axis=1)
        radii = np.linspace(self.r_min, self.r_max, points_per_axis)
        angles = np.linspace(0.0, 2 * np.pi, 2 * points_per_axis, endpoint=False)
        p_axes = [np.linspace(lo, hi, points_per_axis) for lo, hi in self.momentum_box]
        rr, aa, *pp = np.meshgrid(radii, angles, *p_axes, indexing="ij")
        q = np.stack([(rr * np.cos(aa)).ravel(), (rr * np.sin(aa)).ravel()], axis=1)
        p = np.stack([g.ravel() for g in pp], axis=1)
        return np.concatenate([q, p], axis=1)

    def scaled(self, q_factor: float = 1.0, momentum_box: np.ndarray | None = None) -> "SamplingDomain":
        """A copy with the configuration part stretched and/or momenta replaced."""
        if self.kind == "box":
            n = self.phase_dim // 2
            box = self.box.copy()
            box[:n] *= q_factor
            if momentum_box is not None:
                box[n:] = np.asarray(momentum_box, dtype=float)
            return SamplingDomain(kind="box", box=box)
        mbox = self.momentum_box if momentum_box is None else momentum_box
        return SamplingDomain(
            kind="annulus",
            r_min=self.r_min / q_factor,
            r_max=self.r_max * q_factor,
            momentum_box=np.asarray(mbox, dtype=float),
        )

    def to_dict(self) -> dict:
        if self.kind == "box":
            return {"kind": "box", "box": self.box.tolist()}
        return {
            "kind": "annulus",
            "r_min": self.r_min,
            "r_max": self.r_max,
            "momentum_box": self.momentum_box.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SamplingDomain":
        if data["kind"] == "box":
            return cls(kind="box", box=np.asarray(data["box"]))
        return cls(
            kind="annulus",
            r_min=float(data["r_min"]),
            r_max=float(data["r_max"]),
            momentum_box=np.asarray(data["momentum_box"]),
        )


def cart_pendulum_train_domain() -> SamplingDomain:
    return SamplingDomain(kind="box", box=CART_PENDULUM_BOX)


def cart_pendulum_eval_domain(q_factor: float = 1.2) -> SamplingDomain:
    """Wider region for symmetry diagnostics: |p_s| < 2, |p_phi| < 2*pi."""
    wider_p = np.array([[-2.0, 2.0], [-2 * np.pi, 2 * np.pi]])
    return cart_pendulum_train_domain().scaled(q_factor, wider_p)


def sample_cart_pendulum_initials(count: int, seed: int | None = None) -> list[PhasePoint]:
    """Uniform initial conditions with |s|<5, |phi|<pi, |p_s|<1, |p_phi|<pi."""
    if count < 0:
        raise DataError("count must be nonnegative")
    rng = np.random.default_rng(seed)
    samples = cart_pendulum_train_domain().sample(count, rng)
    return [PhasePoint(row[:2], row[2:]) for row in samples]


def sample_two_body_initials(
    count: int,
    seed: int | None = None,
    k: float = KEPLER_K_DEFAULT,
    radius: tuple[float, float] = TWO_BODY_RADIUS,
    speed_range: tuple[float, float] = TWO_BODY_SPEED_RANGE,
) -> list[PhasePoint]:
    """Near-circular orbit initial conditions.

    The position is drawn with uniform direction and uniform radius in
    [r_min, r_max]; the momentum is orthogonal to q (both orientations equally
    likely) with norm u * sqrt(k / |q|), u uniform in the speed range.  u = 1
    gives exactly circular orbits.
    """
    if count < 0:
        raise DataError("count must be nonnegative")
    rng = np.random.default_rng(seed)
    r = rng.uniform(radius[0], radius[1], count)
    theta = rng.uniform(0.0, 2 * np.pi, count)
    orientation = 2 * rng.integers(0, 2, count) - 1
    u = rng.uniform(speed_range[0], speed_range[1], count)
    q_dir = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    p_dir = np.stack([-np.sin(theta), np.cos(theta)], axis=1) * orientation[:, None]
    speed = u * np.sqrt(k / r)
    points = []
    for i in range(count):
        points.append(PhasePoint(r[i] * q_dir[i], speed[i] * p_dir[i]))
    return points


def monte_carlo_phase_samples(
    domain: SamplingDomain, count: int, seed: int | np.random.Generator | None = None
) -> np.ndarray:
    """Uniform phase-space samples for the symmetry-loss integral, (count, 2n)."""
    if count < 0:
        raise DataError("count must be nonnegative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return domain.sample(count, rng)


@dataclass
class SnapshotDataset:
    """Vector-field observations (z, zdot) with a 70/15/15 split.

    Records are stored in shuffled order; the first block is the training
    split, then validation, then test.  t is the snapshot time along the
    generating trajectory (informational only).
    """

    t: np.ndarray
    Z: np.ndarray
    Zdot: np.ndarray
    counts: tuple[int, int, int]
    metadata: dict

    def __post_init__(self):
        if len(self.t) != len(self.Z) or len(self.Z) != len(self.Zdot):
            raise DataError("record arrays must have equal length")
        if sum(self.counts) != len(self.Z):
            raise DataError("split counts do not partition the records")

    @property
    def size(self) -> int:
        return len(self.Z)

    @property
    def n(self) -> int:
        return self.Z.shape[1] // 2

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(t, Z, Zdot) views of one of train / validation / test."""
        starts = np.concatenate([[0], np.cumsum(self.counts)])
        names = ("train", "validation", "test")
        if name not in names:
            raise DataError(f"unknown split {name!r}")
        i = names.index(name)
        sl = slice(starts[i], starts[i + 1])
        return self.t[sl], self.Z[sl], self.Zdot[sl]

    def domain(self) -> SamplingDomain:
        return SamplingDomain.from_dict(self.metadata["domain"])

    def save(self, path) -> None:
        path = Path(path)
        n = self.n
        header = (
            ["t"]
            + [f"q{i+1}" for i in range(n)]
            + [f"p{i+1}" for i in range(n)]
            + [f"qdot{i+1}" for i in range(n)]
            + [f"pdot{i+1}" for i in range(n)]
        )
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for t, z, zdot in zip(self.t, self.Z, self.Zdot):
                row = (t, *z, *zdot)
                fh.write(",".join(repr(float(x)) for x in row) + "\n")
        meta = dict(self.metadata)
        meta["counts"] = {
            "train": self.counts[0],
            "validation": self.counts[1],
            "test": self.counts[2],
        }
        with open(sidecar_path(path), "w") as fh:
            json.dump(meta, fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SnapshotDataset":
        path = Path(path)
        try:
            with open(sidecar_path(path)) as fh:
                meta = json.load(fh)
        except FileNotFoundError as exc:
            raise DataError(f"missing metadata sidecar for {path}") from exc
        counts = (
            meta["counts"]["train"],
            meta["counts"]["validation"],
            meta["counts"]["test"],
        )
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        n = (raw.shape[1] - 1) // 4
        if raw.shape[1] != 1 + 4 * n:
            raise DataError(f"unexpected column count {raw.shape[1]} in {path}")
        return cls(
            t=raw[:, 0],
            Z=raw[:, 1:1 + 2 * n],
            Zdot=raw[:, 1 + 2 * n:],
            counts=counts,
            metadata=meta,
        )


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def split_counts(total: int) -> tuple[int, int, int]:
    """70/15/15 partition: round the first two fractions, remainder is test."""
    n_train = int(round(SPLIT_FRACTIONS[0] * total))
    n_val = int(round(SPLIT_FRACTIONS[1] * total))
    return n_train, n_val, total - n_train - n_val


def snapshot_times(horizon: float, rate: float) -> np.ndarray:
    """Grid 0, 1/rate, ..., horizon (both endpoints included)."""
    steps = int(round(horizon * rate))
    return np.arange(steps + 1) / rate


def build_dataset(
    sys: ReferenceSystem,
    initials: list[PhasePoint],
    horizon: float,
    rate: float,
    noise_var: float,
    seed: int | None = None,
    domain: SamplingDomain | None = None,
    rk4_tol: float = 1e-10,
) -> SnapshotDataset:
    """Integrate initial conditions and extract noisy vector-field snapshots.

    Each initial condition is integrated with RK4 (tolerance rk4_tol) over the
    horizon and sampled at the given rate; the exact field at every snapshot
    gets i.i.d. Gaussian noise of the requested per-component variance.
    Trajectories that fail to integrate are dropped with a warning.
    """
    if horizon <= 0 or rate <= 0:
        raise DataError("horizon and rate must be positive")
    rng = np.random.default_rng(seed)
    times = snapshot_times(horizon, rate)
    field = lambda z: vector_field(sys, z)

    all_t, all_z = [], []
    dropped = 0
    for i, z0 in enumerate(initials):
        try:
            traj = rk4(field, z0, times[-1], tol=rk4_tol, sample_times=times)
        except (IntegrationError, DomainError) as exc:
            dropped += 1
            log.warning("dropping trajectory %d: %s", i, exc)
            continue
        all_t.append(traj.times)
        all_z.append(traj.states)
    if not all_z:
        raise DataError("no trajectory could be integrated")

    t = np.concatenate(all_t)
    Z = np.concatenate(all_z)
    Zdot = vector_field(sys, Z)
    if noise_var > 0:
        Zdot = Zdot + rng.normal(0.0, np.sqrt(noise_var), Zdot.shape)

    perm = rng.permutation(len(Z))
    t, Z, Zdot = t[perm], Z[perm], Zdot[perm]
    counts = split_counts(len(Z))

    if domain is None:
        domain = default_domain(sys, Z[: counts[0]])
    metadata = {
        "system": {"name": sys.name, "params": sys.params},
        "n": sys.n,
        "horizon": horizon,
        "rate": rate,
        "noise_var": noise_var,
        "seed": seed,
        "trajectories": len(initials) - dropped,
        "dropped": dropped,
        "domain": domain.to_dict(),
        "loss_reduction": "mean-over-samples of squared euclidean residual",
    }
    return SnapshotDataset(t=t, Z=Z, Zdot=Zdot, counts=counts, metadata=metadata)


def default_domain(sys: ReferenceSystem, train_Z: np.ndarray) -> SamplingDomain:
    """Symmetry-sampling region matching the training data of a system."""
    if sys.name == "cart-pendulum":
        return cart_pendulum_train_domain()
    if sys.name == "two-body":
        # momentum bounds taken from the data, stretched 20 percent
        n = sys.n
        p_extent = 1.2 * np.max(np.abs(train_Z[:, n:]), axis=0)
        p_extent = np.maximum(p_extent, 1e-3)
        mbox = np.stack([-p_extent, p_extent], axis=1)
        return SamplingDomain(
            kind="annulus",
            r_min=TWO_BODY_RADIUS[0],
            r_max=TWO_BODY_RADIUS[1],
            momentum_box=mbox,
        )
    raise DataError(f"no default domain for system {sys.name!r}")
