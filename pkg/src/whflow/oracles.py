"""Ground-truth references: closed-form flows and a particle-level simulator.

These are deliberately independent of the solver stack (no metric, no
parameter derivatives): closed forms are evaluated directly and the particle
reference integrates the second-order point dynamics with velocity Verlet,
including its own pairwise force kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuadraticSpec:
    """Oscillator data: V(x) = sum a_k x_k^2 / 2, Phi_0 = sum b_k x_k^2 / 2."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=np.float64))
        b = np.atleast_1d(np.asarray(self.b, dtype=np.float64))
        if a.shape != b.shape:
            raise ValueError("frequency and phase coefficient lengths differ")
        if np.any(a <= 0):
            raise ValueError("potential frequencies a_k must be positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)


@dataclass
class ParticleEnsemble:
    positions: np.ndarray
    velocities: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.velocities = np.asarray(self.velocities, dtype=np.float64)
        if self.positions.shape != self.velocities.shape:
            raise ValueError("positions and velocities must match in shape")
        if not (np.all(np.isfinite(self.positions))
                and np.all(np.isfinite(self.velocities))):
            raise ValueError("ensemble state must be finite")


def geodesic_exact(x, grad_phi0, t: float) -> np.ndarray:
    """Straight-line flow x + t grad Phi_0(x); valid through caustics."""
    x = np.asarray(x, dtype=np.float64)
    return x + t * np.asarray(grad_phi0(x), dtype=np.float64)


def ho_exact(x, spec: QuadraticSpec, t: float):
    """Componentwise oscillator solution and its analytic velocity.

    X_k(t) = sqrt(1 + b_k^2) x_k cos(sqrt(a_k) t - arctan b_k), so the motion
    starts at x with velocity b_k x_k and satisfies X'' = -a X exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    amp = np.sqrt(1.0 + spec.b ** 2) * x
    omega = np.sqrt(spec.a)
    phase = omega * t - np.arctan(spec.b)
    return amp * np.cos(phase), -amp * omega * np.sin(phase)


def entropy_oracle(t_grid, D0: float = 1.0, Ddot0: float = 1.0,
                   step: float = 1e-4) -> np.ndarray:
    """Integrate D'' = 1/D with classical RK4 and return D on the grid.

    Multiplying the equation by D' shows D'^2 / 2 - log D is conserved, so
    with the default initial data D' = sqrt(1 + 2 log D) along the solution;
    tests validate the integration through that invariant. Substeps never
    exceed `step`; each grid interval is subdivided evenly.
    """
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=np.float64))
    if D0 <= 0:
        raise ValueError("D0 must be positive")
    out = np.empty_like(t_grid)
    y = np.array([D0, Ddot0])
    t = 0.0

    def f(y):
        return np.array([y[1], 1.0 / y[0]])

    order = np.argsort(t_grid)
    for idx in order:
        target = t_grid[idx]
        if target < t - 1e-12:
            raise ValueError("t_grid must be nonnegative")
        span = target - t
        if span > 1e-14:
            nsub = max(1, int(np.ceil(span / step)))
            hh = span / nsub
            for _ in range(nsub):
                k1 = f(y)
                k2 = f(y + 0.5 * hh * k1)
                k3 = f(y + 0.5 * hh * k2)
                k4 = f(y + hh * k3)
                y = y + (hh / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t = target
        out[idx] = y[0]
    return out


def entropy_first_integral_gap(t_grid, D0=1.0, Ddot0=1.0, step=1e-4) -> float:
    """Max deviation |D' - sqrt(Ddot0^2 + 2 log(D/D0))| along the oracle."""
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=np.float64))
    gap = 0.0
    y = np.array([D0, Ddot0])
    t = 0.0

    def f(y):
        return np.array([y[1], 1.0 / y[0]])

    for target in np.sort(t_grid):
        span = target - t
        if span > 1e-14:
            nsub = max(1, int(np.ceil(span / step)))
            hh = span / nsub
            for _ in range(nsub):
                k1 = f(y)
                k2 = f(y + 0.5 * hh * k1)
                k3 = f(y + 0.5 * hh * k2)
                k4 = f(y + hh * k3)
                y = y + (hh / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t = target
        expected = np.sqrt(Ddot0 * Ddot0 + 2.0 * np.log(y[0] / D0))
        gap = max(gap, abs(y[1] - expected))
    return gap


# -- particle-level reference dynamics ---------------------------------------


def _pairwise_force(X: np.ndarray, b: float) -> np.ndarray:
    """Softened repulsion: F_i = -(2/(N-1)) sum_{j!=i} grad_x 1/(b+|x_i-x_j|^2).

    Pairwise antisymmetric, so total momentum is conserved; the i-loop order
    is fixed for reproducibility.
    """
    n = X.shape[0]
    out = np.empty_like(X)
    for i0 in range(0, n, 512):
        sl = slice(i0, min(i0 + 512, n))
        diff = X[sl][:, None, :] - X[None, :, :]
        w = -2.0 / (b + np.einsum("ijd,ijd->ij", diff, diff)) ** 2
        idx = np.arange(sl.start, sl.stop)
        w[np.arange(idx.size), idx] = 0.0
        out[sl] = np.einsum("ij,ijd->id", w, diff)
    return out * (-2.0 / (n - 1))


def _force_fn(potential):
    """Acceleration field x'' = -grad dF/drho for the supported variants."""
    kind = type(potential).__name__
    if kind == "ZeroPotential":
        return lambda X: np.zeros_like(X)
    if kind == "QuadraticPotential":
        a = np.asarray(potential.a, dtype=np.float64)
        return lambda X: -X * a
    if kind == "GenericLinearPotential":
        return lambda X: -np.asarray(potential.grad_V(X), dtype=np.float64)
    if kind == "InteractionPotential":
        b = float(potential.b)
        return lambda X: _pairwise_force(X, b)
    raise ValueError(f"no particle-level reference for potential {kind}")


def particle_reference(initial: ParticleEnsemble, potential, h_ref: float,
                       steps: int, store_every: int = 1):
    """Velocity Verlet on the point dynamics x'' = force(x).

    Returns (times, positions, velocities) with positions/velocities of
    shape (n_stored, N, d). Aborts on non-finite states.
    """
    if h_ref <= 0 or steps < 0:
        raise ValueError("need h_ref > 0 and steps >= 0")
    force = _force_fn(potential)
    x = initial.positions.copy()
    v = initial.velocities.copy()
    n_stored = steps // store_every + 1
    times = np.empty(n_stored)
    pos = np.empty((n_stored,) + x.shape)
    vel = np.empty((n_stored,) + v.shape)
    times[0], pos[0], vel[0] = initial.t, x, v
    f = force(x)
    idx = 1
    for step_i in range(1, steps + 1):
        x = x + h_ref * v + 0.5 * h_ref * h_ref * f
        f_new = force(x)
        v = v + 0.5 * h_ref * (f + f_new)
        f = f_new
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise FloatingPointError(
                f"particle reference diverged at step {step_i}")
        if step_i % store_every == 0:
            times[idx] = initial.t + step_i * h_ref
            pos[idx], vel[idx] = x, v
            idx += 1
    return times, pos, vel


def ensemble_energy(positions, velocities, potential) -> float:
    """Empirical Hamiltonian: mean |v|^2 / 2 plus the ensemble potential."""
    v2 = 0.5 * float(np.mean(np.einsum("nd,nd->n", velocities, velocities)))
    kind = type(potential).__name__
    X = np.asarray(positions, dtype=np.float64)
    if kind == "ZeroPotential":
        return v2
    if kind == "QuadraticPotential":
        a = np.asarray(potential.a, dtype=np.float64)
        return v2 + 0.5 * float(np.mean((X * X) @ a))
    if kind == "GenericLinearPotential":
        return v2 + float(np.mean(potential.V(X)))
    if kind == "InteractionPotential":
        n = X.shape[0]
        total = 0.0
        for i0 in range(0, n, 512):
            sl = slice(i0, min(i0 + 512, n))
            diff = X[sl][:, None, :] - X[None, :, :]
            kern = 1.0 / (potential.b + np.einsum("ijd,ijd->ij", diff, diff))
            idx = np.arange(sl.start, sl.stop)
            kern[np.arange(idx.size), idx] = 0.0
            total += float(kern.sum())
        return v2 + total / (n * (n - 1))
    raise ValueError(f"no ensemble energy for potential {kind}")
