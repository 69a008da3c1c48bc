"""Monte-Carlo estimators of the potential energy F(theta) and its gradient.

Every variant estimates F(theta) = functional of the pushed-forward density
and grad F = (1/N) sum_i dT^T(z_i) * field(T(z_i)), where ``field`` is the
pointwise gradient of the functional's first variation. Variants whose first
variation is available pointwise (zero, quadratic, generic linear,
interaction) expose it through drift_field; the entropy variants instead use
the closed forms available for their matching map kinds.

The interaction energy is estimated by the U-statistic with the i = j
diagonal excluded: the diagonal would add a constant 1/(N b) bias to the
value and exactly zero to the gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import maps
from ._chunks import chunked_rows, chunked_sum

PAIR_CHUNK = 512  # pairwise kernels build (chunk, N) temporaries


@dataclass
class PotentialReport:
    value: float
    grad: np.ndarray
    n_used: int


class ZeroPotential:
    """F identically zero (geodesic dynamics)."""

    def value(self, desc, theta, batch) -> float:
        return 0.0

    def grad(self, desc, theta, batch) -> np.ndarray:
        return np.zeros(desc.m)

    def drift_field(self, X) -> np.ndarray:
        return np.zeros_like(np.asarray(X, dtype=np.float64))


@dataclass(frozen=True)
class QuadraticPotential:
    """Linear potential with V(x) = sum_k a_k x_k^2 / 2."""

    a: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=np.float64))
        if not np.all(np.isfinite(a)):
            raise ValueError("quadratic coefficients must be finite")
        object.__setattr__(self, "a", a)

    def value(self, desc, theta, batch) -> float:
        X = maps.forward(desc, theta, batch.points)
        return float(np.mean(0.5 * (X * X) @ self.a))

    def grad(self, desc, theta, batch) -> np.ndarray:
        return _field_grad(self, desc, theta, batch)

    def drift_field(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) * self.a


@dataclass(frozen=True)
class GenericLinearPotential:
    """Linear potential from an arbitrary scalar field with known gradient.

    Both callables act on (N, d) batches: V returns (N,), grad_V (N, d).
    """

    V: Callable[[np.ndarray], np.ndarray]
    grad_V: Callable[[np.ndarray], np.ndarray]

    def value(self, desc, theta, batch) -> float:
        X = maps.forward(desc, theta, batch.points)
        return float(np.mean(self.V(X)))

    def grad(self, desc, theta, batch) -> np.ndarray:
        return _field_grad(self, desc, theta, batch)

    def drift_field(self, X) -> np.ndarray:
        return np.asarray(self.grad_V(np.asarray(X, dtype=np.float64)))


@dataclass(frozen=True)
class InteractionPotential:
    """Pairwise energy with softened inverse-square kernel 1/(b + |x-y|^2)."""

    b: float = 0.1

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError("interaction softening b must be positive")

    def value(self, desc, theta, batch) -> float:
        X = maps.forward(desc, theta, batch.points)
        n = X.shape[0]
        if n < 2:
            raise ValueError("interaction energy needs at least two samples")

        def part(sl):
            sq = _pair_sq_dists(X[sl], X)
            kern = 1.0 / (self.b + sq)
            _zero_self(kern, sl)
            return np.array(kern.sum())

        total = float(chunked_sum(part, n, chunk=PAIR_CHUNK))
        return total / (n * (n - 1))

    def grad(self, desc, theta, batch) -> np.ndarray:
        return _field_grad(self, desc, theta, batch)

    def drift_field(self, X) -> np.ndarray:
        """Mean-field kernel gradient g_i = 2/(N-1) sum_{j!=i} grad_x C_b."""
        X = np.asarray(X, dtype=np.float64)
        n = X.shape[0]
        if n < 2:
            raise ValueError("interaction field needs at least two samples")

        def part(sl):
            diff = X[sl][:, None, :] - X[None, :, :]
            w = -2.0 / (self.b + np.einsum("ijd,ijd->ij", diff, diff)) ** 2
            _zero_self(w, sl)
            return np.einsum("ij,ijd->id", w, diff)

        return chunked_rows(part, n, chunk=PAIR_CHUNK) * (2.0 / (n - 1))


@dataclass(frozen=True)
class EntropyDiagonal:
    """Differential entropy term for diagonal maps, closed form in D."""

    def value(self, desc, theta, batch) -> float:
        _require_kind(desc, "diagonal")
        D = np.asarray(theta, dtype=np.float64)
        if np.any(D <= 0):
            raise ValueError("entropy requires all diagonal entries positive")
        d = desc.d
        return float(-0.5 * d * np.log(2 * np.pi) - np.sum(np.log(D)) - 0.5 * d)

    def grad(self, desc, theta, batch) -> np.ndarray:
        _require_kind(desc, "diagonal")
        D = np.asarray(theta, dtype=np.float64)
        if np.any(D <= 0):
            raise ValueError("entropy requires all diagonal entries positive")
        return -1.0 / D


@dataclass(frozen=True)
class EntropyAffine:
    """Differential entropy term for affine maps, closed form in (G, b)."""

    def value(self, desc, theta, batch) -> float:
        _require_kind(desc, "affine")
        G, _ = maps.affine_views(desc, np.asarray(theta, dtype=np.float64))
        sign, logabsdet = np.linalg.slogdet(G)
        if sign == 0:
            raise ValueError("entropy undefined: affine matrix is singular")
        d = desc.d
        return float(-0.5 * d * np.log(2 * np.pi * np.e) - logabsdet)

    def grad(self, desc, theta, batch) -> np.ndarray:
        _require_kind(desc, "affine")
        G, _ = maps.affine_views(desc, np.asarray(theta, dtype=np.float64))
        try:
            Ginv = np.linalg.inv(G)
        except np.linalg.LinAlgError:
            raise ValueError("entropy undefined: affine matrix is singular")
        return maps.pack_affine(-Ginv.T, np.zeros(desc.d))


Potential = (ZeroPotential | QuadraticPotential | GenericLinearPotential
             | InteractionPotential | EntropyDiagonal | EntropyAffine)


def value(spec, desc, theta, batch) -> float:
    """F(theta) estimated over the batch (exact closed form for entropy)."""
    return spec.value(desc, theta, batch)


def grad(spec, desc, theta, batch) -> np.ndarray:
    """grad_theta F(theta) over the batch."""
    return spec.grad(desc, theta, batch)


def evaluate(spec, desc, theta, batch) -> PotentialReport:
    rep = PotentialReport(value(spec, desc, theta, batch),
                          grad(spec, desc, theta, batch), batch.n)
    if not (np.isfinite(rep.value) and np.all(np.isfinite(rep.grad))):
        raise FloatingPointError("non-finite potential estimate")
    return rep


def has_drift_field(spec) -> bool:
    return hasattr(spec, "drift_field")


def _field_grad(spec, desc, theta, batch) -> np.ndarray:
    Z = batch.points
    X = maps.forward(desc, theta, Z)
    field = spec.drift_field(X)

    def part(sl):
        return maps.vjp_sum(desc, theta, Z[sl], field[sl])

    return chunked_sum(part, Z.shape[0]) / Z.shape[0]


def _require_kind(desc, kind):
    if desc.kind != kind:
        raise ValueError(
            f"this entropy variant pairs only with {kind} maps, got {desc.kind!r};"
            " general log-density terms are out of scope")


def _pair_sq_dists(Xc, X):
    diff = Xc[:, None, :] - X[None, :, :]
    return np.einsum("ijd,ijd->ij", diff, diff)


def _zero_self(mat, sl):
    idx = np.arange(sl.start, sl.stop)
    mat[np.arange(idx.size), idx] = 0.0
