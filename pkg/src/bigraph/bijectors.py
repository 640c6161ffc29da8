"""Invertible maps between constrained parameters and unconstrained space.

Each bijector maps a constrained value to an unconstrained real (or
vector) via ``to_unconstrained`` and back via ``to_constrained``, and
reports ``log_det_jacobian`` of the constrained -> unconstrained
direction so log densities can be re-expressed in the unconstrained
space: log p_u(u) = log p_c(c(u)) - log|det J(c(u))|.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Affine",
    "BoundedSigmoid",
    "LogAffine",
    "SimplexBijector",
    "fit_affine_to_moments",
]


@dataclass(frozen=True)
class Affine:
    """u = omega * x + phi. Standardizes an unbounded variable."""

    omega: float
    phi: float

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError("omega must be > 0")

    def to_unconstrained(self, x):
        return self.omega * np.asarray(x, dtype=np.float64) + self.phi

    def to_constrained(self, u):
        return (np.asarray(u, dtype=np.float64) - self.phi) / self.omega

    def log_det_jacobian(self, x):
        return np.broadcast_to(np.log(self.omega), np.shape(np.asarray(x))).copy()


@dataclass(frozen=True)
class BoundedSigmoid:
    """Maps (low, high) to the real line with a scaled logit.

    ``to_constrained`` is a sigmoid scaled to the interval, so
    ``to_constrained(0)`` is the interval midpoint.
    """

    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError("low must be < high")

    def to_unconstrained(self, x):
        x = np.asarray(x, dtype=np.float64)
        p = (x - self.low) / (self.high - self.low)
        if np.any(p <= 0) or np.any(p >= 1):
            raise ValueError("value outside the open interval")
        return np.log(p) - np.log1p(-p)

    def to_constrained(self, u):
        u = np.asarray(u, dtype=np.float64)
        p = 1.0 / (1.0 + np.exp(-u))
        return self.low + (self.high - self.low) * p

    def log_det_jacobian(self, x):
        # d/dx logit((x-low)/width) = width / ((x-low)(high-x))
        x = np.asarray(x, dtype=np.float64)
        width = self.high - self.low
        return np.log(width) - np.log(x - self.low) - np.log(self.high - x)


@dataclass(frozen=True)
class LogAffine:
    """u = omega * ln(x) + phi. Maps (0, inf) to the real line."""

    omega: float
    phi: float

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError("omega must be > 0")

    def to_unconstrained(self, x):
        x = np.asarray(x, dtype=np.float64)
        if np.any(x <= 0):
            raise ValueError("value must be > 0")
        return self.omega * np.log(x) + self.phi

    def to_constrained(self, u):
        return np.exp((np.asarray(u, dtype=np.float64) - self.phi) / self.omega)

    def log_det_jacobian(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.log(self.omega) - np.log(x)


class SimplexBijector:
    """Open k-simplex <-> R^(k-1) via softmax with the last logit pinned at 0.

    ``to_unconstrained`` returns log(x_i / x_k) for i < k. The Jacobian
    log-determinant is for the (k-1)-dimensional coordinates (x_1..x_{k-1}).
    """

    def __init__(self, k=3):
        if k < 2:
            raise ValueError("k must be >= 2")
        self.k = k

    def to_unconstrained(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.k:
            raise ValueError("dimension mismatch")
        if np.any(x <= 0) or np.any(np.abs(x.sum(axis=-1) - 1.0) > 1e-9):
            raise ValueError("value must lie on the open simplex")
        return np.log(x[..., :-1]) - np.log(x[..., -1:])

    def to_constrained(self, u):
        u = np.asarray(u, dtype=np.float64)
        if u.shape[-1] != self.k - 1:
            raise ValueError("dimension mismatch")
        z = np.concatenate([u, np.zeros(u.shape[:-1] + (1,))], axis=-1)
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def log_det_jacobian(self, x):
        # determinant of d(u)/d(x_1..x_{k-1}) with x_k = 1 - sum(x_i):
        # |det| = 1 / prod_{i=1}^{k} x_i
        x = np.asarray(x, dtype=np.float64)
        return -np.log(x).sum(axis=-1)


def fit_affine_to_moments(samples):
    """Affine bijector standardizing the sample distribution.

    (omega, phi) = (1/std, -mean/std) is the exact maximizer of the
    standard-normal likelihood of the transformed samples.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    std = float(x.std())
    if std <= 0:
        raise ValueError("samples are degenerate")
    mean = float(x.mean())
    return Affine(omega=1.0 / std, phi=-mean / std)
