"""Lie-algebra machinery for the affine group acting on configuration space.

An infinitesimal affine transformation of the configuration space is a pair
(M, b) of an n x n matrix and an n-vector.  Lifting its flow to phase space
gives the vector field (-Mq - b, M^T p), which is the object the symmetry
loss and the conserved quantities are built from.  Everything here is a pure
function on immutable values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionMismatchError, DomainError


@dataclass(frozen=True)
class PhasePoint:
    """A point z = (q, p) of the 2n-dimensional phase space."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        if self.q.ndim != 1 or self.p.ndim != 1:
            raise DimensionMismatchError("q and p must be 1-d vectors")
        if self.q.shape != self.p.shape:
            raise DimensionMismatchError(
                f"q has dimension {self.q.size}, p has dimension {self.p.size}"
            )

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def z(self) -> np.ndarray:
        """The stacked coordinate vector (q, p) of length 2n."""
        return np.concatenate([self.q, self.p])

    @classmethod
    def from_z(cls, z: np.ndarray) -> "PhasePoint":
        z = np.asarray(z, dtype=float)
        if z.ndim != 1 or z.size % 2 != 0:
            raise DimensionMismatchError("phase vector must be 1-d of even length")
        n = z.size // 2
        return cls(z[:n], z[n:])


@dataclass(frozen=True)
class AffineGenerator:
    """A Lie-algebra element v = (M, b): matrix part plus translation part."""

    M: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "M", np.asarray(self.M, dtype=float))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        if self.M.ndim != 2 or self.M.shape[0] != self.M.shape[1]:
            raise DimensionMismatchError("M must be a square matrix")
        if self.b.ndim != 1 or self.b.size != self.M.shape[0]:
            raise DimensionMismatchError(
                f"M is {self.M.shape[0]}x{self.M.shape[1]} but b has dimension {self.b.size}"
            )

    @property
    def n(self) -> int:
        return self.b.size

    def as_flat(self) -> np.ndarray:
        """Flatten to (n*n + n,) with M in row-major order followed by b."""
        return np.concatenate([self.M.ravel(), self.b])

    @classmethod
    def from_flat(cls, flat: np.ndarray, n: int) -> "AffineGenerator":
        flat = np.asarray(flat, dtype=float)
        if flat.size != n * n + n:
            raise DimensionMismatchError(f"expected {n * n + n} entries, got {flat.size}")
        return cls(flat[: n * n].reshape(n, n), flat[n * n:])

    @classmethod
    def zero(cls, n: int) -> "AffineGenerator":
        return cls(np.zeros((n, n)), np.zeros(n))


def _check_same_n(a, b, what: str):
    if a.n != b.n:
        raise DimensionMismatchError(f"{what}: dimensions {a.n} and {b.n} differ")


def symplectic_matrix(n: int) -> np.ndarray:
    """The block matrix J = [[0, -I_n], [I_n, 0]]."""
    J = np.zeros((2 * n, 2 * n))
    J[:n, n:] = -np.eye(n)
    J[n:, :n] = np.eye(n)
    return J


def inner_product(v1: AffineGenerator, v2: AffineGenerator) -> float:
    """Frobenius inner product of the matrix parts plus the Euclidean one of b."""
    _check_same_n(v1, v2, "inner_product")
    return float(np.sum(v1.M * v2.M) + np.dot(v1.b, v2.b))


def norm(v: AffineGenerator) -> float:
    """Induced norm sqrt(<v, v>); zero exactly for the zero generator."""
    return float(np.sqrt(inner_product(v, v)))


def fundamental_vector_field(v: AffineGenerator, z: PhasePoint) -> np.ndarray:
    """Phase-space vector field of the lifted infinitesimal action: (-Mq - b, M^T p)."""
    _check_same_n(v, z, "fundamental_vector_field")
    return np.concatenate([-v.M @ z.q - v.b, v.M.T @ z.p])


def directional_derivative(v: AffineGenerator, grad_h: np.ndarray, z: PhasePoint) -> float:
    """Derivative of a function along the lifted field, from its gradient at z.

    grad_h holds (grad_q H, grad_p H) stacked; the result is
    (-Mq - b) . grad_q H + (M^T p) . grad_p H.  A vanishing value at every z
    means the function is invariant under the one-parameter group of v.
    """
    grad_h = np.asarray(grad_h, dtype=float)
    if grad_h.shape != (2 * z.n,):
        raise DimensionMismatchError(
            f"gradient has shape {grad_h.shape}, expected ({2 * z.n},)"
        )
    return float(fundamental_vector_field(v, z) @ grad_h)


def lie_bracket(v1: AffineGenerator, v2: AffineGenerator) -> AffineGenerator:
    """Commutator of the (n+1)x(n+1) embeddings: (M1 M2 - M2 M1, M1 b2 - M2 b1)."""
    _check_same_n(v1, v2, "lie_bracket")
    return AffineGenerator(
        v1.M @ v2.M - v2.M @ v1.M,
        v1.M @ v2.b - v2.M @ v1.b,
    )


def exp_generator(v: AffineGenerator, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Exponential of t*(M, b) in the affine group, returned as (A, c).

    Computed as the matrix exponential of the (n+1)x(n+1) embedding
    [[M, b], [0, 0]] scaled by t; A is always invertible.
    """
    n = v.n
    emb = np.zeros((n + 1, n + 1))
    emb[:n, :n] = v.M
    emb[:n, n] = v.b
    exp = scipy.linalg.expm(t * emb)
    return exp[:n, :n], exp[:n, n]


def cotangent_lift(A: np.ndarray, c: np.ndarray, z: PhasePoint) -> PhasePoint:
    """Lift the affine map q -> Aq + c to phase space: (A^{-1}(q - c), A^T p)."""
    A = np.asarray(A, dtype=float)
    c = np.asarray(c, dtype=float)
    if A.shape != (z.n, z.n) or c.shape != (z.n,):
        raise DimensionMismatchError("affine map does not match phase-space dimension")
    try:
        q_new = np.linalg.solve(A, z.q - c)
    except np.linalg.LinAlgError as exc:
        raise DomainError("cotangent lift of a singular matrix") from exc
    return PhasePoint(q_new, A.T @ z.p)


def conserved_quantity(v: AffineGenerator, z: PhasePoint) -> float:
    """The momentum-type invariant I(q, p) = p . (-Mq - b) attached to v."""
    _check_same_n(v, z, "conserved_quantity")
    return float(z.p @ (-v.M @ z.q - v.b))
