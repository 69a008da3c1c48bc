"""Symplectic Euler time stepping for the parameterized Hamiltonian system.

One outer step from (theta_l, p_l) works as follows:

1. xi_0 <- MINRES solve of G_hat(theta_l) xi = p_l (warm-started from the
   previous step's velocity), alpha_0 <- theta_l;
2. n_in inner fixed-point passes: xi_{j+1} = xi_j - gamma (G_hat(alpha_j)
   xi_j - p_l), alpha_{j+1} = theta_l + h xi_{j+1} (or a full re-solve per
   pass in "exact" inner mode);
3. theta_{l+1} = alpha_{n_in}, eta = xi_{n_in};
4. p_{l+1} = p_l + (h/2) [eta^T d_k G_hat(theta_{l+1}) eta]_k
   - h grad F(theta_{l+1}).

With constant metrics (affine and diagonal maps) the quadratic-form gradient
vanishes and the update is exactly textbook symplectic Euler on
H = p^T G_hat^{-1} p / 2 + F(theta). A forward-Euler stepper that evaluates
everything at theta_l is provided as a non-symplectic control.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import diagnostics, maps, metric, potentials

POT_SEED_OFFSET = 1_000_003   # potential batch stream when sizes differ
STEP_SEED_STRIDE = 7_919      # per-step resampling stream
INIT_SEED_OFFSET = 3_000_017  # resnet weight initialization stream


class DivergenceError(RuntimeError):
    """Raised when the state leaves the finite trust region."""


@dataclass
class SolverConfig:
    """Knobs of one solver run; defaults follow the reference experiments."""

    h: float
    steps: int
    n_in: int = 1
    gamma: float = 0.5
    minres_tol: float = metric.DEFAULT_TOL
    minres_max_iter: int | None = None
    n_metric: int = 50000
    n_potential: int | None = None
    resample: str = "frozen"
    seed: int = 0
    stepper: str = "symplectic"
    inner_mode: str = "gd"
    warm_start: bool = True
    diag_every: int = 10
    checkpoint_every: int = 0
    divergence_limit: float = 1e8
    max_minres_failures: int = 25

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("time step h must be positive")
        if self.steps < 0:
            raise ValueError("step count must be nonnegative")
        if self.n_in < 1 or self.gamma <= 0:
            raise ValueError("need n_in >= 1 and gamma > 0")
        if self.n_metric < 1:
            raise ValueError("metric batch size must be >= 1")
        if self.resample not in ("frozen", "per_step"):
            raise ValueError(f"unknown resample policy {self.resample!r}")
        if self.stepper not in ("symplectic", "forward_euler"):
            raise ValueError(f"unknown stepper {self.stepper!r}")
        if self.inner_mode not in ("gd", "exact"):
            raise ValueError(f"unknown inner mode {self.inner_mode!r}")

    def resolved_n_potential(self, potential) -> int:
        if self.n_potential is not None:
            return self.n_potential
        if isinstance(potential, potentials.InteractionPotential):
            return min(12000, self.n_metric)
        return self.n_metric


@dataclass
class ParamState:
    """Phase-space point: parameters, momentum, time, last inner velocity."""

    theta: np.ndarray
    p: np.ndarray
    t: float
    eta: np.ndarray | None = None

    def check_finite(self, limit: float = np.inf):
        for name, vec in (("theta", self.theta), ("p", self.p)):
            if not np.all(np.isfinite(vec)):
                raise DivergenceError(f"non-finite {name} at t={self.t:.6g}")
            peak = float(np.max(np.abs(vec))) if vec.size else 0.0
            if peak > limit:
                raise DivergenceError(
                    f"|{name}| = {peak:.3e} exceeds {limit:.1e} at t={self.t:.6g}")


@dataclass
class StepStats:
    minres_iterations: int
    minres_residual: float
    minres_converged: bool
    minres_stagnated: bool
    fpi_residual: float
    solve_xi: np.ndarray
    next_warm_output: np.ndarray | None


@dataclass
class TrajectoryRecord:
    """Per-step scalars plus the full (theta, p, eta) history of a run."""

    times: np.ndarray
    hamiltonian: np.ndarray
    kinetic: np.ndarray
    potential: np.ndarray
    minres_iterations: np.ndarray
    minres_residual: np.ndarray
    fpi_residual: np.ndarray
    delta: np.ndarray
    thetas: np.ndarray
    ps: np.ndarray
    etas: np.ndarray
    tracked_points: np.ndarray | None = None
    tracked_positions: np.ndarray | None = None
    tracked_velocities: np.ndarray | None = None

    def __len__(self):
        return self.times.shape[0]


def init_p(desc: maps.MapDescriptor, theta0, grad_phi0,
           batch: maps.SampleBatch) -> np.ndarray:
    """Momentum matching an initial velocity field grad Phi_0.

    p_0 = (1/N) sum_i dT^T(z_i) grad Phi_0(T(z_i)); grad_phi0 acts on (N, d).
    """
    Z = batch.points
    X = maps.forward(desc, theta0, Z)
    U = np.asarray(grad_phi0(X), dtype=np.float64)
    if U.shape != Z.shape:
        raise ValueError(f"grad_phi0 returned shape {U.shape}, expected {Z.shape}")
    return maps.vjp_sum(desc, theta0, Z, U) / Z.shape[0]


def step(state: ParamState, config: SolverConfig, op_factory, potential,
         desc: maps.MapDescriptor, pot_batch: maps.SampleBatch,
         warm_output=None) -> tuple[ParamState, StepStats]:
    """Advance (theta, p) by one step of the configured stepper."""
    state.check_finite(config.divergence_limit)
    op = op_factory(state.theta)
    x0 = state.eta if config.warm_start else None
    rep = op.solve(state.p, tol=config.minres_tol, max_iter=config.minres_max_iter,
                   warm_start=x0, warm_start_output=warm_output if x0 is not None else None)
    xi0 = rep.solution

    if config.stepper == "forward_euler":
        qg = op.quadratic_grad(xi0)
        grad_f = potential.grad(desc, state.theta, pot_batch)
        theta_new = state.theta + config.h * xi0
        p_new = state.p + 0.5 * config.h * qg - config.h * grad_f
        new = ParamState(theta_new, p_new, state.t + config.h, xi0)
        new.check_finite(config.divergence_limit)
        return new, StepStats(rep.iterations, rep.residual_norm, rep.converged,
                              rep.stagnated, rep.residual_norm, xi0, None)

    xi = xi0
    alpha = state.theta
    for j in range(config.n_in):
        op_j = op if j == 0 else op_factory(alpha)
        if config.inner_mode == "exact":
            if j > 0:  # at j = 0 the solve over G_hat(theta_l) is xi0 itself
                xi = op_j.solve(state.p, tol=config.minres_tol,
                                max_iter=config.minres_max_iter,
                                warm_start=xi).solution
        else:
            Ax = rep.operator_output if j == 0 else op_j.apply(xi)
            xi = xi - config.gamma * (Ax - state.p)
        alpha = state.theta + config.h * xi

    theta_new = alpha
    eta = xi
    op_new = op_factory(theta_new)
    w = op_new.apply(eta)
    fpi_residual = float(np.linalg.norm(w - state.p))
    qg = op_new.quadratic_grad(eta)
    grad_f = potential.grad(desc, theta_new, pot_batch)
    p_new = state.p + 0.5 * config.h * qg - config.h * grad_f

    new = ParamState(theta_new, p_new, state.t + config.h, eta)
    new.check_finite(config.divergence_limit)
    return new, StepStats(rep.iterations, rep.residual_norm, rep.converged,
                          rep.stagnated, fpi_residual, xi0, w)


def run(desc: maps.MapDescriptor, potential, grad_phi0, config: SolverConfig,
        tracked_points=None, theta0=None) -> TrajectoryRecord:
    """Initialize (theta, p) and advance `steps` outer steps, recording rows.

    theta0 defaults to the identity-map initialization. grad_phi0 maps pushed
    points (N, d) to the initial velocity field; None means zero field.
    """
    m = desc.m
    K = config.steps
    if theta0 is None:
        theta0 = maps.init_identity(desc, seed=config.seed + INIT_SEED_OFFSET)
    theta0 = maps.check_theta(desc, theta0)

    frozen = config.resample == "frozen"
    n_pot = config.resolved_n_potential(potential)
    metric_batch = maps.SampleBatch.standard_normal(config.seed, config.n_metric, desc.d)
    pot_batch = (metric_batch if n_pot == config.n_metric else
                 maps.SampleBatch.standard_normal(config.seed + POT_SEED_OFFSET,
                                                  n_pot, desc.d))

    def batches_for(l):
        if frozen:
            return metric_batch, pot_batch
        mb = maps.SampleBatch.standard_normal(
            config.seed + STEP_SEED_STRIDE * (l + 1), config.n_metric, desc.d)
        pb = (mb if n_pot == config.n_metric else
              maps.SampleBatch.standard_normal(
                  config.seed + POT_SEED_OFFSET + STEP_SEED_STRIDE * (l + 1),
                  n_pot, desc.d))
        return mb, pb

    if grad_phi0 is None:
        p0 = np.zeros(m)
    else:
        p0 = init_p(desc, theta0, grad_phi0, metric_batch)
    state = ParamState(theta0, p0, 0.0, None)
    state.check_finite(config.divergence_limit)

    times = np.arange(K + 1) * config.h
    cols = {name: np.full(K + 1, np.nan) for name in
            ("hamiltonian", "kinetic", "potential", "minres_residual",
             "fpi_residual", "delta")}
    minres_its = np.zeros(K + 1, dtype=np.int64)
    thetas = np.empty((K + 1, m))
    ps = np.empty((K + 1, m))
    etas = np.empty((K + 1, m))

    tracked = None
    if tracked_points is not None and len(tracked_points) > 0:
        tracked = np.atleast_2d(np.asarray(tracked_points, dtype=np.float64))
        if tracked.shape[1] != desc.d:
            raise ValueError("tracked points must live in the map's space")
        tr_pos = np.empty((K + 1, tracked.shape[0], desc.d))
        tr_vel = np.empty((K + 1, tracked.shape[0], desc.d))

    def record_row(l, st, stats, mb, pb):
        thetas[l] = st.theta
        ps[l] = st.p
        etas[l] = stats.solve_xi if st.eta is None else st.eta
        kin = 0.5 * float(st.p @ stats.solve_xi)
        pot = potentials.value(potential, desc, st.theta, pb)
        cols["kinetic"][l] = kin
        cols["potential"][l] = pot
        cols["hamiltonian"][l] = kin + pot
        minres_its[l] = stats.minres_iterations
        cols["minres_residual"][l] = stats.minres_residual
        if l % config.diag_every == 0 and potentials.has_drift_field(potential):
            cols["delta"][l] = diagnostics.delta_theta(
                desc, st.theta, potential, mb, tol=config.minres_tol,
                max_iter=config.minres_max_iter)
        if tracked is not None:
            tr_pos[l] = maps.forward(desc, st.theta, tracked)
            tr_vel[l] = maps.jvp(desc, st.theta, tracked, etas[l])

    consecutive_failures = 0
    warm_output = None
    for l in range(K + 1):
        mb, pb = batches_for(l)
        op_factory = lambda th, _b=mb: metric.MetricOperator(desc, th, _b)
        if l < K:
            new_state, stats = step(state, config, op_factory, potential,
                                    desc, pb, warm_output=warm_output)
        else:
            # final row: one extra solve for the closing energy entry
            op = op_factory(state.theta)
            rep = op.solve(state.p, tol=config.minres_tol,
                           max_iter=config.minres_max_iter,
                           warm_start=state.eta if config.warm_start else None,
                           warm_start_output=warm_output)
            stats = StepStats(rep.iterations, rep.residual_norm, rep.converged,
                              rep.stagnated, np.nan, rep.solution, None)
            new_state = None
        record_row(l, state, stats, mb, pb)
        if l > 0:
            cols["fpi_residual"][l] = stats_prev.fpi_residual
        if not (stats.minres_converged or stats.minres_stagnated):
            consecutive_failures += 1
            warnings.warn(
                f"MINRES hit its iteration cap at step {l} "
                f"(residual {stats.minres_residual:.3e} after "
                f"{stats.minres_iterations} iterations)", RuntimeWarning)
            if consecutive_failures > config.max_minres_failures:
                raise RuntimeError(
                    f"aborting: {consecutive_failures} consecutive MINRES failures")
        else:
            consecutive_failures = 0
        if new_state is not None:
            warm_output = stats.next_warm_output if frozen else None
            stats_prev = stats
            state = new_state

    return TrajectoryRecord(
        times=times, hamiltonian=cols["hamiltonian"], kinetic=cols["kinetic"],
        potential=cols["potential"], minres_iterations=minres_its,
        minres_residual=cols["minres_residual"], fpi_residual=cols["fpi_residual"],
        delta=cols["delta"], thetas=thetas, ps=ps, etas=etas,
        tracked_points=tracked,
        tracked_positions=tr_pos if tracked is not None else None,
        tracked_velocities=tr_vel if tracked is not None else None)
