"""Ground-truth reference systems: analytic Hamiltonians, gradients, symmetries.

The gradients are closed-form, independent of any automatic differentiation,
so they double as oracles when testing the learned models.  All callables are
vectorized over a trailing phase-space axis: input shape (..., 2n), Hamiltonian
output shape (...), gradient output shape (..., 2n).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError
from .geometry import AffineGenerator

GRAVITY_DEFAULT = 9.81
KEPLER_K_DEFAULT = 1016.895

# Two-body evaluations closer to the origin than this are rejected; sampled
# orbits never come near it (radius >= 5).
TWO_BODY_MIN_RADIUS = 1e-6


@dataclass(frozen=True)
class ReferenceSystem:
    """A mechanical system with known Hamiltonian, gradient, and symmetries."""

    name: str
    n: int
    params: dict
    hamiltonian: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    true_generators: tuple[AffineGenerator, ...] = field(default_factory=tuple)

    def vector_field(self, z: np.ndarray) -> np.ndarray:
        return vector_field(self, z)


def _as_phase_array(z: np.ndarray, n: int) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != 2 * n:
        raise DomainError(f"phase vector must have {2 * n} components, got {z.shape[-1]}")
    return z


def cart_pendulum(params: dict | None = None) -> ReferenceSystem:
    """Planar pendulum mounted on a cart, coordinates (s, phi, p_s, p_phi).

    The cart position s does not enter the Hamiltonian, so translations of s
    form the true symmetry with generator (0, (1, 0)) and conserved quantity
    -p_s.
    """
    p = {"m": 1.0, "m0": 1.0, "l": 1.0, "g": GRAVITY_DEFAULT}
    p.update(params or {})
    m, m0, l, g = p["m"], p["m0"], p["l"], p["g"]
    if m <= 0 or l <= 0 or m0 < 0:
        raise DomainError(f"degenerate cart-pendulum parameters m={m}, m0={m0}, l={l}")

    a = m * l**2
    b = m * l
    c = m0 + m
    d_const = -m * g * l  # the -D*cos(phi) term in H

    def hamiltonian(z: np.ndarray) -> np.ndarray:
        z = _as_phase_array(z, 2)
        phi, ps, pphi = z[..., 1], z[..., 2], z[..., 3]
        cos = np.cos(phi)
        num = a * ps**2 + 2 * b * ps * pphi * cos + c * pphi**2
        den = 2 * a * c - b**2 * cos**2
        return num / den - d_const * cos

    def gradient(z: np.ndarray) -> np.ndarray:
        z = _as_phase_array(z, 2)
        phi, ps, pphi = z[..., 1], z[..., 2], z[..., 3]
        cos, sin = np.cos(phi), np.sin(phi)
        num = a * ps**2 + 2 * b * ps * pphi * cos + c * pphi**2
        den = 2 * a * c - b**2 * cos**2
        dnum = -2 * b * ps * pphi * sin
        dden = 2 * b**2 * cos * sin
        out = np.zeros_like(z)
        out[..., 1] = (dnum * den - num * dden) / den**2 + d_const * sin
        out[..., 2] = (2 * a * ps + 2 * b * pphi * cos) / den
        out[..., 3] = (2 * b * ps * cos + 2 * c * pphi) / den
        return out

    translation = AffineGenerator(np.zeros((2, 2)), np.array([1.0, 0.0]))
    return ReferenceSystem(
        name="cart-pendulum",
        n=2,
        params=p,
        hamiltonian=hamiltonian,
        gradient=gradient,
        true_generators=(translation,),
    )


def two_body(params: dict | None = None) -> ReferenceSystem:
    """Point mass orbiting a fixed center, coordinates (x, y, p_x, p_y).

    Rotationally invariant, so the rotation generator ([[0,-1],[1,0]], 0)
    spans the symmetry algebra; the conserved quantity is (minus) the angular
    momentum.  Evaluation at the origin is a genuine singularity and raises.
    """
    p = {"m": 1.0, "k": KEPLER_K_DEFAULT}
    p.update(params or {})
    m, k = p["m"], p["k"]
    if m <= 0:
        raise DomainError(f"degenerate two-body mass m={m}")

    def _radius(z: np.ndarray) -> np.ndarray:
        r = np.sqrt(z[..., 0] ** 2 + z[..., 1] ** 2)
        if np.any(r < TWO_BODY_MIN_RADIUS):
            raise DomainError("two-body evaluation too close to the origin")
        return r

    def hamiltonian(z: np.ndarray) -> np.ndarray:
        z = _as_phase_array(z, 2)
        r = _radius(z)
        return (z[..., 2] ** 2 + z[..., 3] ** 2) / (2 * m) - k / r

    def gradient(z: np.ndarray) -> np.ndarray:
        z = _as_phase_array(z, 2)
        r = _radius(z)
        out = np.empty_like(z)
        out[..., :2] = k * z[..., :2] / r[..., None] ** 3
        out[..., 2:] = z[..., 2:] / m
        return out

    rotation = AffineGenerator(np.array([[0.0, -1.0], [1.0, 0.0]]), np.zeros(2))
    return ReferenceSystem(
        name="two-body",
        n=2,
        params=p,
        hamiltonian=hamiltonian,
        gradient=gradient,
        true_generators=(rotation,),
    )


_FACTORIES = {"cart-pendulum": cart_pendulum, "two-body": two_body}


def make_system(name: str, params: dict | None = None) -> ReferenceSystem:
    """Rebind a reference system from (name, params) metadata."""
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise DomainError(f"unknown system {name!r}; choose from {sorted(_FACTORIES)}")
    return factory(params)


def vector_field(sys: ReferenceSystem, z: np.ndarray) -> np.ndarray:
    """Hamiltonian vector field J^{-1} grad H, i.e. (grad_p H, -grad_q H)."""
    g = sys.gradient(z)
    n = sys.n
    return np.concatenate([g[..., n:], -g[..., :n]], axis=-1)
