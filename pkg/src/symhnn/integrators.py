"""Time integration: adaptive RK4 for data generation, implicit midpoint for rollouts.

The RK4 driver controls the local error by step halving (Richardson), which is
enough to hit the 1e-10 tolerance used when sampling training data.  Rollouts
of true and learned fields use the implicit midpoint rule, whose fixed points
are solved by functional iteration with a Newton fallback.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import IntegrationError
from .geometry import PhasePoint

Field = Callable[[np.ndarray], np.ndarray]

_MIN_STEP = 1e-14
_MAX_GROWTH = 5.0
_MIN_SHRINK = 0.2
_SAFETY = 0.9


@dataclass(frozen=True)
class Trajectory:
    """Sampled solution: strictly increasing times and matching states (T, 2n)."""

    times: np.ndarray
    states: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "states", np.asarray(self.states, dtype=float))
        if self.times.ndim != 1 or self.states.ndim != 2:
            raise ValueError("times must be (T,), states (T, 2n)")
        if len(self.times) != len(self.states):
            raise ValueError("times and states length mismatch")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def n(self) -> int:
        return self.states.shape[1] // 2

    def point(self, i: int) -> PhasePoint:
        n = self.n
        return PhasePoint(self.states[i, :n], self.states[i, n:])

    def write_csv(self, path) -> None:
        n = self.n
        header = ["t"] + [f"q{i+1}" for i in range(n)] + [f"p{i+1}" for i in range(n)]
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for t, row in zip(self.times, self.states):
                fh.write(",".join(repr(float(x)) for x in (t, *row)) + "\n")


def _as_state(z0) -> np.ndarray:
    if isinstance(z0, PhasePoint):
        return z0.z
    return np.asarray(z0, dtype=float).copy()


def rk4_step(field: Field, z: np.ndarray, h: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step."""
    k1 = field(z)
    k2 = field(z + 0.5 * h * k1)
    k3 = field(z + 0.5 * h * k2)
    k4 = field(z + h * k3)
    return z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def rk4_fixed(field: Field, z0, t_end: float, h: float, provenance: str = "rk4-fixed") -> Trajectory:
    """Fixed-step RK4 over [0, t_end]; the last step is shortened to land on t_end."""
    z = _as_state(z0)
    times = [0.0]
    states = [z.copy()]
    t = 0.0
    while t < t_end - 1e-12:
        step = min(h, t_end - t)
        z = rk4_step(field, z, step)
        if not np.all(np.isfinite(z)):
            raise IntegrationError("rk4_fixed produced non-finite state", time=t)
        t += step
        times.append(t)
        states.append(z.copy())
    return Trajectory(np.array(times), np.array(states), provenance)


def rk4(
    field: Field,
    z0,
    t_end: float,
    tol: float = 1e-10,
    sample_times: Sequence[float] | None = None,
    provenance: str = "rk4",
) -> Trajectory:
    """Adaptive RK4 with step-halving error control, sampled at requested times.

    Each trial step is compared against two half steps; the Richardson error
    estimate ||z_half - z_full|| / 15 must stay below tol, and the accepted
    state is the extrapolated one.  Steps are clipped so every entry of
    sample_times is hit exactly.  Raises IntegrationError on step underflow.
    """
    z = _as_state(z0)
    if sample_times is None:
        sample_times = [0.0, t_end]
    sample_times = np.asarray(sample_times, dtype=float)
    if sample_times.size == 0 or np.any(np.diff(sample_times) <= 0):
        raise ValueError("sample_times must be nonempty and strictly increasing")
    if sample_times[0] < 0:
        raise ValueError("sample times must start at or after 0")

    out_states = []
    t = 0.0
    h = min(1e-2, max(sample_times[-1], 1e-2))
    for target in sample_times:
        while t < target - 1e-12:
            h = min(h, target - t)
            if h < _MIN_STEP * max(1.0, abs(t)):
                raise IntegrationError(f"rk4 step underflow at t={t:.6g}", time=t)
            z_full = rk4_step(field, z, h)
            z_half = rk4_step(field, rk4_step(field, z, 0.5 * h), 0.5 * h)
            if not (np.all(np.isfinite(z_full)) and np.all(np.isfinite(z_half))):
                h *= _MIN_SHRINK
                continue
            err = np.max(np.abs(z_half - z_full)) / 15.0
            if err <= tol:
                z = z_half + (z_half - z_full) / 15.0
                t += h
                factor = _MAX_GROWTH if err == 0 else min(
                    _MAX_GROWTH, max(_MIN_SHRINK, _SAFETY * (tol / err) ** 0.2)
                )
                h *= factor
            else:
                h *= max(_MIN_SHRINK, _SAFETY * (tol / err) ** 0.2)
        t = target  # clamp accumulated rounding
        out_states.append(z.copy())

    return Trajectory(sample_times, np.array(out_states), provenance)


def implicit_midpoint(
    field: Field,
    z0,
    t_end: float,
    h: float,
    tol: float = 1e-12,
    max_iter: int = 50,
    provenance: str = "implicit-midpoint",
) -> Trajectory:
    """Symplectic midpoint rule z_{k+1} = z_k + h f((z_k + z_{k+1}) / 2).

    The implicit relation is solved by fixed-point iteration from an explicit
    Euler guess; if that fails to contract within max_iter sweeps a damped
    Newton iteration with a finite-difference Jacobian takes over.  Raises
    IntegrationError with the failing step index if neither converges.
    """
    if h <= 0 or t_end <= 0:
        raise ValueError("h and t_end must be positive")
    z = _as_state(z0)
    n_steps = int(np.ceil(t_end / h - 1e-9))
    times = [0.0]
    states = [z.copy()]
    t = 0.0
    for k in range(n_steps):
        step = min(h, t_end - t)
        z = _midpoint_solve(field, z, step, tol, max_iter, k, t)
        t = t_end if k == n_steps - 1 else t + step
        times.append(t)
        states.append(z.copy())
    return Trajectory(np.array(times), np.array(states), provenance)


def _midpoint_solve(field, z, h, tol, max_iter, step_index, t) -> np.ndarray:
    x = z + h * field(z)
    for _ in range(max_iter):
        x_new = z + h * field(0.5 * (z + x))
        if not np.all(np.isfinite(x_new)):
            break
        delta = np.max(np.abs(x_new - x))
        x = x_new
        if delta <= tol:
            return x
    return _midpoint_newton(field, z, h, tol, max_iter, step_index, t, x)


def _midpoint_newton(field, z, h, tol, max_iter, step_index, t, x0) -> np.ndarray:
    dim = z.size
    x = x0 if np.all(np.isfinite(x0)) else z.copy()
    for _ in range(max_iter):
        mid = 0.5 * (z + x)
        residual = x - z - h * field(mid)
        if np.max(np.abs(residual)) <= tol:
            return x
        jac_f = _fd_jacobian(field, mid)
        jac = np.eye(dim) - 0.5 * h * jac_f
        try:
            delta = np.linalg.solve(jac, residual)
        except np.linalg.LinAlgError:
            break
        x = x - delta
        if not np.all(np.isfinite(x)):
            break
    raise IntegrationError(
        f"implicit midpoint failed to converge at step {step_index} (t={t:.6g})",
        step=step_index,
        time=t,
    )


def _fd_jacobian(field: Field, z: np.ndarray) -> np.ndarray:
    dim = z.size
    jac = np.empty((dim, dim))
    for j in range(dim):
        eps = 1e-7 * max(1.0, abs(z[j]))
        zp, zm = z.copy(), z.copy()
        zp[j] += eps
        zm[j] -= eps
        jac[:, j] = (field(zp) - field(zm)) / (2 * eps)
    return jac
