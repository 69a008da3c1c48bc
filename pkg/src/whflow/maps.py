"""Push-forward map families and their exact parameter derivatives.

Three map kinds are supported:

- ``affine``:   T(z) = G z + b with a dense d x d matrix G and shift b.
- ``diagonal``: T(z) = D * z componentwise, D a positive-allowing diagonal.
- ``resnet``:   T(z) = z + W3 tanh(W2 tanh(W1 z + b1) + b2), a two-hidden-layer
  tanh perceptron residual with no output bias.

Parameter vectors are flat float64 arrays in a fixed order: layer by layer,
each weight block row-major, the layer's bias directly after its weights.

- affine:   [G11, G12, ..., G1d, G21, ..., Gdd, b1, ..., bd]
- diagonal: [D1, ..., Dd]
- resnet:   [W1 (h1*d), b1 (h1), W2 (h2*h1), b2 (h2), W3 (d*h2)]

All derivative operations (jvp, vjp, jvp_sq_grad) are closed-form layer
propagations, never finite differences. Every function is pure; inputs are
not mutated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("affine", "diagonal", "resnet")


@dataclass(frozen=True)
class MapDescriptor:
    """Shape and architecture of one push-forward family."""

    kind: str
    d: int
    hidden: tuple[int, int] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown map kind {self.kind!r}")
        if self.d < 1:
            raise ValueError("space dimension d must be positive")
        if self.kind == "resnet":
            hidden = tuple(int(w) for w in self.hidden)
            if len(hidden) != 2 or min(hidden) < 1:
                raise ValueError("resnet needs two positive hidden widths")
            object.__setattr__(self, "hidden", hidden)
        elif self.hidden:
            raise ValueError(f"hidden widths only apply to resnet maps")

    @property
    def m(self) -> int:
        """Length of the flat parameter vector."""
        d = self.d
        if self.kind == "affine":
            return d * (d + 1)
        if self.kind == "diagonal":
            return d
        h1, h2 = self.hidden
        return h1 * d + h1 + h2 * h1 + h2 + d * h2


def resnet_descriptor(d: int, width: int | None = None) -> MapDescriptor:
    """Resnet descriptor with the default width policy (50 for d<=2, 80 above)."""
    if width is None:
        width = 50 if d <= 2 else 80
    return MapDescriptor("resnet", d, (width, width))


@dataclass(frozen=True)
class SampleBatch:
    """Frozen draws from the standard-normal reference distribution.

    ``seed`` records provenance; batches built from explicit points carry
    seed -1 and are used for controlled tests only.
    """

    points: np.ndarray
    seed: int = -1

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("points must be a nonempty N x d matrix")
        if not np.all(np.isfinite(pts)):
            raise ValueError("sample points must be finite")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @classmethod
    def standard_normal(cls, seed: int, n: int, d: int) -> "SampleBatch":
        rng = np.random.Generator(np.random.PCG64(seed))
        return cls(rng.standard_normal((n, d)), seed=seed)

    @classmethod
    def from_points(cls, points) -> "SampleBatch":
        return cls(np.asarray(points, dtype=np.float64))


# -- parameter vector plumbing ------------------------------------------------


def check_theta(desc: MapDescriptor, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (desc.m,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({desc.m},)")
    return theta


def affine_views(desc: MapDescriptor, theta: np.ndarray):
    """(G, b) views into a flat affine parameter vector."""
    d = desc.d
    return theta[: d * d].reshape(d, d), theta[d * d :]


def resnet_views(desc: MapDescriptor, theta: np.ndarray):
    """(W1, b1, W2, b2, W3) views into a flat resnet parameter vector."""
    d = desc.d
    h1, h2 = desc.hidden
    sizes = (h1 * d, h1, h2 * h1, h2, d * h2)
    offs = np.concatenate(([0], np.cumsum(sizes)))
    W1 = theta[offs[0] : offs[1]].reshape(h1, d)
    b1 = theta[offs[1] : offs[2]]
    W2 = theta[offs[2] : offs[3]].reshape(h2, h1)
    b2 = theta[offs[3] : offs[4]]
    W3 = theta[offs[4] : offs[5]].reshape(d, h2)
    return W1, b1, W2, b2, W3


def pack_affine(G, b) -> np.ndarray:
    return np.concatenate([np.asarray(G, dtype=np.float64).ravel(),
                           np.asarray(b, dtype=np.float64).ravel()])


def pack_resnet(W1, b1, W2, b2, W3) -> np.ndarray:
    return np.concatenate([np.asarray(a, dtype=np.float64).ravel()
                           for a in (W1, b1, W2, b2, W3)])


def _as_batch(desc: MapDescriptor, z) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[None, :]
    if z.ndim != 2 or z.shape[1] != desc.d:
        raise ValueError(f"points have shape {z.shape}, expected (*, {desc.d})")
    return z, single


def _resnet_forward_pass(desc, theta, Z):
    """Shared forward activations: (A1, S1, A2, S2) with Sk = 1 - Ak**2."""
    W1, b1, W2, b2, W3 = resnet_views(desc, theta)
    A1 = np.tanh(Z @ W1.T + b1)
    A2 = np.tanh(A1 @ W2.T + b2)
    return A1, 1.0 - A1 * A1, A2, 1.0 - A2 * A2


# -- operations ---------------------------------------------------------------


def forward(desc: MapDescriptor, theta, z) -> np.ndarray:
    """Evaluate T_theta at a point (d,) or batch (N, d)."""
    theta = check_theta(desc, theta)
    Z, single = _as_batch(desc, z)
    if desc.kind == "affine":
        G, b = affine_views(desc, theta)
        out = Z @ G.T + b
    elif desc.kind == "diagonal":
        out = Z * theta
    else:
        _, _, A2, _ = _resnet_forward_pass(desc, theta, Z)
        _, _, _, _, W3 = resnet_views(desc, theta)
        out = Z + A2 @ W3.T
    return out[0] if single else out


def jvp(desc: MapDescriptor, theta, z, v) -> np.ndarray:
    """Directional parameter derivative dT/dtheta (z) . v, shape of z."""
    theta = check_theta(desc, theta)
    Z, single = _as_batch(desc, z)
    v = check_theta(desc, v)
    if desc.kind == "affine":
        VG, vb = affine_views(desc, v)
        out = Z @ VG.T + vb
    elif desc.kind == "diagonal":
        out = Z * v
    else:
        out = _resnet_jvp(desc, theta, Z, v)[-1]
    return out[0] if single else out


def _resnet_jvp(desc, theta, Z, v):
    """Forward-mode pass; returns intermediates reused by jvp_sq_grad."""
    W1, b1, W2, b2, W3 = resnet_views(desc, theta)
    VW1, vb1, VW2, vb2, VW3 = resnet_views(desc, v)
    A1, S1, A2, S2 = _resnet_forward_pass(desc, theta, Z)
    dU1 = Z @ VW1.T + vb1
    dA1 = S1 * dU1
    dU2 = A1 @ VW2.T + dA1 @ W2.T + vb2
    dA2 = S2 * dU2
    Y = A2 @ VW3.T + dA2 @ W3.T
    return A1, S1, A2, S2, dU1, dA1, dU2, dA2, Y


def vjp(desc: MapDescriptor, theta, z, u) -> np.ndarray:
    """Adjoint derivative dT/dtheta (z)^T u.

    For a single point z (d,) with cotangent u (d,) returns (m,); for a batch
    Z (N, d) with per-sample cotangents U (N, d) returns (N, m). Batched use
    materializes N x m; prefer vjp_mean for large aggregations.
    """
    theta = check_theta(desc, theta)
    Z, single = _as_batch(desc, z)
    U, usingle = _as_batch(desc, u)
    if single != usingle or U.shape[0] != Z.shape[0]:
        raise ValueError("z and u must pair up (same batch shape)")
    n = Z.shape[0]
    if desc.kind == "affine":
        out = np.concatenate(
            [np.einsum("ni,nj->nij", U, Z).reshape(n, -1), U], axis=1)
    elif desc.kind == "diagonal":
        out = U * Z
    else:
        W1, b1, W2, b2, W3 = resnet_views(desc, theta)
        A1, S1, A2, S2 = _resnet_forward_pass(desc, theta, Z)
        dU2b = S2 * (U @ W3)
        dU1b = S1 * (dU2b @ W2)
        out = np.concatenate([
            np.einsum("ni,nj->nij", dU1b, Z).reshape(n, -1),
            dU1b,
            np.einsum("ni,nj->nij", dU2b, A1).reshape(n, -1),
            dU2b,
            np.einsum("ni,nj->nij", U, A2).reshape(n, -1),
        ], axis=1)
    return out[0] if single else out


def vjp_sum(desc: MapDescriptor, theta, Z, U) -> np.ndarray:
    """sum_i dT/dtheta (z_i)^T u_i without materializing per-sample rows."""
    theta = check_theta(desc, theta)
    Z, _ = _as_batch(desc, Z)
    U = np.asarray(U, dtype=np.float64)
    if U.shape != Z.shape:
        raise ValueError(f"cotangents have shape {U.shape}, expected {Z.shape}")
    if desc.kind == "affine":
        return np.concatenate([(U.T @ Z).ravel(), U.sum(axis=0)])
    if desc.kind == "diagonal":
        return (U * Z).sum(axis=0)
    W1, b1, W2, b2, W3 = resnet_views(desc, theta)
    A1, S1, A2, S2 = _resnet_forward_pass(desc, theta, Z)
    dU2b = S2 * (U @ W3)
    dU1b = S1 * (dU2b @ W2)
    return np.concatenate([
        (dU1b.T @ Z).ravel(), dU1b.sum(axis=0),
        (dU2b.T @ A1).ravel(), dU2b.sum(axis=0),
        (U.T @ A2).ravel(),
    ])


def jvp_sq_grad(desc: MapDescriptor, theta, z, v) -> np.ndarray:
    """Gradient in theta of 0.5 * |jvp(theta, z, v)|^2 with v held fixed.

    This is the per-sample kernel behind the metric quadratic-form gradient.
    Identically zero for affine and diagonal maps, whose jvp does not depend
    on theta. Single-point input returns (m,); a batch returns (N, m).
    """
    theta = check_theta(desc, theta)
    Z, single = _as_batch(desc, z)
    check_theta(desc, v)
    if desc.kind in ("affine", "diagonal"):
        out = np.zeros((Z.shape[0], desc.m))
        return out[0] if single else out
    out = _resnet_jvp_sq_grad(desc, theta, Z, v, aggregate=False)
    return out[0] if single else out


def jvp_sq_grad_sum(desc: MapDescriptor, theta, Z, v) -> np.ndarray:
    """sum_i of jvp_sq_grad over a batch, computed with O(m) memory."""
    theta = check_theta(desc, theta)
    Z, _ = _as_batch(desc, Z)
    check_theta(desc, v)
    if desc.kind in ("affine", "diagonal"):
        return np.zeros(desc.m)
    return _resnet_jvp_sq_grad(desc, theta, Z, v, aggregate=True)


def _resnet_jvp_sq_grad(desc, theta, Z, v, aggregate):
    """Reverse pass over the forward-mode jvp computation, seeded with Y."""
    W1, b1, W2, b2, W3 = resnet_views(desc, theta)
    VW1, vb1, VW2, vb2, VW3 = resnet_views(desc, v)
    A1, S1, A2, S2, dU1, dA1, dU2, dA2, Y = _resnet_jvp(desc, theta, Z, v)

    # Y = A2 VW3^T + dA2 W3^T
    A2_bar = Y @ VW3
    dA2_bar = Y @ W3
    gW3_pair = (Y, dA2)
    # dA2 = S2 * dU2
    S2_bar = dA2_bar * dU2
    dU2_bar = dA2_bar * S2
    # dU2 = A1 VW2^T + dA1 W2^T + vb2
    A1_bar = dU2_bar @ VW2
    dA1_bar = dU2_bar @ W2
    gW2_pair1 = (dU2_bar, dA1)
    # S2 = 1 - A2^2, then A2 = tanh(U2)
    A2_bar = A2_bar - 2.0 * A2 * S2_bar
    U2_bar = S2 * A2_bar
    # U2 = W2 A1 + b2
    A1_bar = A1_bar + U2_bar @ W2
    gW2_pair2 = (U2_bar, A1)
    gb2_rows = U2_bar
    # dA1 = S1 * dU1 (dU1 carries no theta dependence)
    S1_bar = dA1_bar * dU1
    # S1 = 1 - A1^2, then A1 = tanh(U1)
    A1_bar = A1_bar - 2.0 * A1 * S1_bar
    U1_bar = S1 * A1_bar
    gW1_pair = (U1_bar, Z)
    gb1_rows = U1_bar

    if aggregate:
        return np.concatenate([
            (gW1_pair[0].T @ gW1_pair[1]).ravel(),
            gb1_rows.sum(axis=0),
            (gW2_pair1[0].T @ gW2_pair1[1] + gW2_pair2[0].T @ gW2_pair2[1]).ravel(),
            gb2_rows.sum(axis=0),
            (gW3_pair[0].T @ gW3_pair[1]).ravel(),
        ])
    n = Z.shape[0]
    return np.concatenate([
        np.einsum("ni,nj->nij", *gW1_pair).reshape(n, -1),
        gb1_rows,
        (np.einsum("ni,nj->nij", *gW2_pair1)
         + np.einsum("ni,nj->nij", *gW2_pair2)).reshape(n, -1),
        gb2_rows,
        np.einsum("ni,nj->nij", *gW3_pair).reshape(n, -1),
    ], axis=1)


def init_identity(desc: MapDescriptor, seed: int = 0) -> np.ndarray:
    """Parameters making T_theta (approximately) the identity map.

    affine: G = I, b = 0. diagonal: D = 1. resnet: biases zero and every
    weight block uniform in +-1/sqrt(fan_in), so the map stays near the
    identity while dT/dtheta has no structurally zero blocks (a zeroed
    output layer would annihilate all inner-layer metric directions, and
    much smaller weights leave the metric so close to singular that the
    momentum dynamics turns stiff at the reference step sizes).
    """
    if desc.kind == "affine":
        return pack_affine(np.eye(desc.d), np.zeros(desc.d))
    if desc.kind == "diagonal":
        return np.ones(desc.d)
    d = desc.d
    h1, h2 = desc.hidden
    rng = np.random.Generator(np.random.PCG64(seed))

    def block(rows, cols, fan_in):
        s = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-s, s, size=(rows, cols))

    return pack_resnet(block(h1, d, d), np.zeros(h1),
                       block(h2, h1, h1), np.zeros(h2),
                       block(d, h2, h2))
