"""Matrix-free Gram metric of the push-forward tangent directions.

The operator realized here is the sample average

    G_hat(theta) eta = (1/N) sum_i  dT^T(z_i) dT(z_i) eta,

the Monte-Carlo estimate of the metric tensor over a frozen batch. It is
symmetric positive semi-definite by construction and is only ever used
through matrix-vector products; the full m x m matrix is never materialized
outside of tests. Linear systems G_hat xi = p are solved with MINRES, which
for range-consistent right-hand sides converges to the pseudo-inverse
solution within the Krylov space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, minres

from . import maps
from ._chunks import chunked_sum

DEFAULT_TOL = 3e-4


@dataclass
class SolveReport:
    """Outcome of one MINRES solve.

    ``residual_norm`` is |A xi - p| recomputed with a fresh operator
    application after the solve; ``operator_output`` caches that A xi product
    for callers that can reuse it. ``converged`` strictly means the residual
    met tol * |p|; ``stagnated`` flags the least-squares floor reached when p
    has a component outside range(A) (reported, never silently accepted).
    """

    solution: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    operator_output: np.ndarray | None = None
    stagnated: bool = False


class MetricOperator:
    """G_hat(theta) over a frozen sample batch, applied matrix-free.

    Immutable after construction (theta is copied); safe to share across
    workers. apply() and quadratic_grad() reduce over samples in a fixed
    chunk order, so outputs are bit-reproducible for a given batch.
    """

    def __init__(self, desc: maps.MapDescriptor, theta, batch: maps.SampleBatch):
        if batch.d != desc.d:
            raise ValueError(f"batch dimension {batch.d} != map dimension {desc.d}")
        self.desc = desc
        self.theta = maps.check_theta(desc, theta).copy()
        self.batch = batch

    @property
    def m(self) -> int:
        return self.desc.m

    def apply(self, eta) -> np.ndarray:
        """G_hat(theta) eta estimated over the frozen batch."""
        eta = maps.check_theta(self.desc, eta)
        Z = self.batch.points

        def part(sl):
            Zc = Z[sl]
            return maps.vjp_sum(self.desc, self.theta, Zc,
                                maps.jvp(self.desc, self.theta, Zc, eta))

        return chunked_sum(part, Z.shape[0]) / Z.shape[0]

    def quadratic_grad(self, eta) -> np.ndarray:
        """[eta^T d_k G_hat eta]_k, the theta-gradient of eta^T G_hat eta."""
        eta = maps.check_theta(self.desc, eta)
        Z = self.batch.points

        def part(sl):
            return maps.jvp_sq_grad_sum(self.desc, self.theta, Z[sl], eta)

        return chunked_sum(part, Z.shape[0]) * (2.0 / Z.shape[0])

    def quadratic_form(self, eta) -> float:
        """eta^T G_hat eta = mean |dT eta|^2, computed without vjp."""
        eta = maps.check_theta(self.desc, eta)
        Z = self.batch.points

        def part(sl):
            Y = maps.jvp(self.desc, self.theta, Z[sl], eta)
            return np.array(np.sum(Y * Y))

        return float(chunked_sum(part, Z.shape[0])) / Z.shape[0]

    def solve(self, p, tol: float = DEFAULT_TOL, max_iter: int | None = None,
              warm_start=None, warm_start_output=None) -> SolveReport:
        """MINRES solve of G_hat xi = p; see minres_solve."""
        return minres_solve(self.apply, self.m, p, tol=tol, max_iter=max_iter,
                            x0=warm_start, Ax0=warm_start_output)

    def assemble(self) -> np.ndarray:
        """Dense G_hat for inspection; test-scale m only."""
        return np.column_stack([self.apply(e) for e in np.eye(self.m)])


def minres_solve(apply_fn, m: int, p, tol: float = DEFAULT_TOL,
                 max_iter: int | None = None, x0=None, Ax0=None) -> SolveReport:
    """Solve A xi = p for a symmetric PSD operator given as apply_fn.

    Convergence means |A xi - p| <= tol * |p| on an independently recomputed
    residual; scipy's own success flag is not trusted because MINRES reports
    least-squares convergence for right-hand sides far outside range(A).
    Non-convergence (iteration cap or residual stagnation) returns the best
    iterate with converged=False. x0 warm-starts the iteration; Ax0 may pass
    a precomputed A x0 to save one operator application.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (m,):
        raise ValueError(f"rhs has shape {p.shape}, expected ({m},)")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter is None:
        max_iter = 2 * m

    norm_p = float(np.linalg.norm(p))
    if norm_p == 0.0:
        return SolveReport(np.zeros(m), 0.0, 0, True, np.zeros(m))

    x = np.zeros(m) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    if x0 is not None:
        Ax = np.asarray(Ax0, dtype=np.float64) if Ax0 is not None else apply_fn(x)
        res = float(np.linalg.norm(Ax - p))
        if res <= tol * norm_p:
            return SolveReport(x, res, 0, True, Ax)

    count = {"its": 0}

    def cb(_):
        count["its"] += 1

    op = LinearOperator((m, m), matvec=apply_fn, dtype=np.float64)
    # Exactly one MINRES sweep. Its backward-error stopping doubles as the
    # spectral regularization that makes the pseudo-inverse usable on a
    # rank-deficient operator: retrying with tighter targets drags the
    # iterate into near-null directions (dividing by vanishing eigenvalues)
    # and destabilizes the outer dynamics.
    x, info = minres(op, p, x0=x, rtol=tol, maxiter=max_iter, callback=cb)
    Ax = apply_fn(x)
    res = float(np.linalg.norm(Ax - p))
    converged = res <= tol * norm_p
    # info == 0 with residual above target: MINRES stopped at the
    # least-squares floor, i.e. p holds a component outside range(A).
    stagnated = (not converged) and info == 0
    return SolveReport(x, res, count["its"], converged, Ax, stagnated)
