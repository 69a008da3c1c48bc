"""Conserved quantities and approximation-quality diagnostics.

delta_theta measures how well the potential's driving vector field lies in
the span of the map's parameter-direction fields: with eta solving
G_hat eta = grad F over a common frozen batch, it is the mean squared
residual of the field against dT eta, which is nonnegative by construction
and zero exactly when the field is representable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import maps, metric, potentials


@dataclass
class EnergyReport:
    hamiltonian: float
    kinetic: float
    potential: float
    solve: metric.SolveReport | None = None


@dataclass
class ErrorReport:
    """Trajectory error against an oracle map family.

    eps_hat is the max over time of the per-time mean pointwise error;
    per_time rows are (t, mean error, mean squared error). The coupled-sample
    MSE upper-bounds the squared 2-Wasserstein distance at each time.
    """

    eps_hat: float
    per_time: np.ndarray  # rows (t, mean_err, mse)


@dataclass
class HistProjection:
    counts: np.ndarray        # density-normalized histogram
    edges: np.ndarray
    oracle_variance: float | None = None
    oracle_pdf: np.ndarray | None = None  # at bin centers; None when singular
    singular: bool = False


def energy(desc, theta, p, potential, batch, tol=metric.DEFAULT_TOL,
           max_iter=None, op=None) -> EnergyReport:
    """H = p^T G_hat^+ p / 2 + F(theta); kinetic part via one MINRES solve."""
    theta = maps.check_theta(desc, theta)
    if op is None:
        op = metric.MetricOperator(desc, theta, batch)
    p = np.asarray(p, dtype=np.float64)
    pot = potentials.value(potential, desc, theta, batch)
    if not np.any(p):
        return EnergyReport(pot, 0.0, pot, None)
    rep = op.solve(p, tol=tol, max_iter=max_iter)
    kin = 0.5 * float(p @ rep.solution)
    return EnergyReport(kin + pot, kin, pot, rep)


def delta_theta(desc, theta, potential, batch, tol=metric.DEFAULT_TOL,
                max_iter=None, op=None) -> float:
    """Projection residual of the potential's field onto span{dT/dtheta_k}.

    Requires a potential with a pointwise drift field (zero, quadratic,
    generic linear, interaction). All three ingredients (metric, field
    projection, field norm) use the same batch, which keeps the residual
    nonnegative up to round-off.
    """
    if not potentials.has_drift_field(potential):
        raise ValueError("delta requires a potential with a pointwise field")
    theta = maps.check_theta(desc, theta)
    Z = batch.points
    X = maps.forward(desc, theta, Z)
    field = potential.drift_field(X)
    if not np.any(field):
        return 0.0
    grad_f = maps.vjp_sum(desc, theta, Z, field) / Z.shape[0]
    if op is None:
        op = metric.MetricOperator(desc, theta, batch)
    eta = op.solve(grad_f, tol=tol, max_iter=max_iter).solution
    resid = field - maps.jvp(desc, theta, Z, eta)
    return float(np.mean(np.einsum("nd,nd->n", resid, resid)))


def traj_error(desc, thetas, times, oracle_fn, Z) -> ErrorReport:
    """eps_hat = max_l mean_i |T_theta(l)(z_i) - oracle(z_i, t_l)|.

    oracle_fn(Z, t) returns the ground-truth positions for reference points
    Z at time t. The MSE column is the shared-coupling (same z) squared
    error, an upper bound for W_2^2 at each recorded time.
    """
    thetas = np.asarray(thetas, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    rows = np.empty((times.shape[0], 3))
    for l, t in enumerate(times):
        diff = maps.forward(desc, thetas[l], Z) - oracle_fn(Z, t)
        norms = np.sqrt(np.einsum("nd,nd->n", diff, diff))
        rows[l] = (t, norms.mean(), np.mean(norms * norms))
    return ErrorReport(float(rows[:, 1].max()), rows)


def marginal_variance(spec, axis: int, t: float) -> float:
    """Closed-form marginal variance (1+b_k^2) cos^2(sqrt(a_k) t - arctan b_k)
    of the oscillator push-forward for unit initial variance on that axis."""
    a_k = float(spec.a[axis])
    b_k = float(spec.b[axis])
    c = np.cos(np.sqrt(a_k) * t - np.arctan(b_k))
    return float((1.0 + b_k * b_k) * c * c)


def hist_projection(snapshot, axis: int, bin_edges=None, oracle=None,
                    t: float = 0.0, singular_tol: float = 1e-12) -> HistProjection:
    """Normalized histogram of one coordinate, with the closed-form Gaussian
    marginal curve attached when a quadratic-oscillator oracle is given.

    bin_edges None selects the Freedman-Diaconis policy. At a singularity
    time (vanishing oracle variance) the curve is flagged as a point mass and
    the histogram is still produced.
    """
    snapshot = np.asarray(snapshot, dtype=np.float64)
    if snapshot.ndim != 2 or snapshot.shape[0] == 0:
        raise ValueError("snapshot must be a nonempty N x d matrix")
    x = snapshot[:, axis]
    if bin_edges is None:
        edges = np.histogram_bin_edges(x, bins="fd")
    else:
        edges = np.asarray(bin_edges, dtype=np.float64)
        if edges.size < 2:
            raise ValueError("need at least two bin edges")
    counts, edges = np.histogram(x, bins=edges, density=True)
    if oracle is None:
        return HistProjection(counts, edges)
    var = marginal_variance(oracle, axis, t)
    if var <= singular_tol:
        return HistProjection(counts, edges, oracle_variance=var, singular=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    pdf = np.exp(-0.5 * centers * centers / var) / np.sqrt(2 * np.pi * var)
    return HistProjection(counts, edges, oracle_variance=var, oracle_pdf=pdf)
