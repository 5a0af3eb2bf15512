"""Pointwise differential geometry of graphs over a k-plane.

Conventions
-----------
The base plane is ``T = span(e_1, ..., e_k)`` inside ``R^n`` and the graph
function takes values in ``T^perp = span(e_{k+1}, ..., e_n)``. A gradient
matrix ``P`` has shape ``(..., codim, k)`` with ``P[..., a, i] = d_i f^a``;
a Hessian ``Q`` has shape ``(..., codim, k, k)``. Every function accepts
arbitrary leading batch dimensions so that whole grid slices can be
processed at once.

Non-canonical base planes are handled by :class:`Frame`, which conjugates
inputs and outputs with an ambient rotation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space


class InvalidFrameError(ValueError):
    """Raised when a basis does not span a k-dimensional subspace."""


def _sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _metric_det(P):
    """det(I + P^T P) without cancellation.

    Cauchy-Binet: the determinant is 1 + |P|^2 + sum of squared 2x2 minors
    + ..., every term non-negative, so nothing cancels for k <= 2.
    """
    k = P.shape[-1]
    det = 1.0 + np.einsum("...ai,...ai->...", P, P)
    if k == 1:
        return det
    if k == 2:
        minors = P[..., :, None, 0] * P[..., None, :, 1] - P[..., :, None, 1] * P[..., None, :, 0]
        return det + 0.5 * np.einsum("...ab,...ab->...", minors, minors)
    g = np.eye(k) + np.einsum("...ai,...aj->...ij", P, P)
    return np.linalg.det(g)


def _metric_eigs(g, det):
    """Ascending eigenvalues of the metric g (all >= 1)."""
    k = g.shape[-1]
    if k == 1:
        return g[..., 0, :].copy()
    if k == 2:
        a, b, d = g[..., 0, 0], g[..., 0, 1], g[..., 1, 1]
        big = 0.5 * (a + d) + np.hypot(0.5 * (a - d), b)
        # small root from the product; the difference form cancels
        return np.stack([det / big, big], axis=-1)
    return None


def _metric_eigs_svd(P):
    # 1 + sigma^2 keeps the unit eigenvalues exact for rank-deficient P
    k = P.shape[-1]
    s = np.linalg.svd(P, compute_uv=False)
    pad = k - s.shape[-1]
    if pad > 0:
        s = np.concatenate([s, np.zeros(s.shape[:-1] + (pad,))], axis=-1)
    return np.sort(1.0 + s * s, axis=-1)


def _inverse_metric_svd(P):
    # g^-1 = I - V diag(s^2 / (1 + s^2)) V^T keeps unit eigenvalues exact,
    # where a plain inverse loses cond(g) * eps on them
    k = P.shape[-1]
    _, s, Vt = np.linalg.svd(P, full_matrices=False)
    shrink = s * s / (1.0 + s * s)
    g_inv = np.eye(k) - np.einsum("...ri,...r,...rj->...ij", Vt, shrink, Vt)
    return _sym(g_inv)


@dataclass(frozen=True)
class MetricPack:
    g: np.ndarray          # g_ij, (..., k, k)
    g_inv: np.ndarray      # g^ij, (..., k, k)
    sqrt_g: np.ndarray     # (...)
    eig_min: np.ndarray    # smallest eigenvalue of g^ij
    eig_max: np.ndarray    # largest eigenvalue of g^ij


def as_hessian(Q):
    """Symmetric Hessian built from the upper triangle of ``Q`` in (i, j)."""
    Q = np.asarray(Q, dtype=float)
    upper = np.triu(np.ones(Q.shape[-2:], dtype=bool))
    Qu = np.where(upper, Q, 0.0)
    diag = np.eye(Q.shape[-1], dtype=bool)
    return Qu + np.swapaxes(Qu, -1, -2) - np.where(diag, Q, 0.0)


def induced_metric(P) -> MetricPack:
    """Metric ``g = I + P^T P``, its inverse, area element and spectral bounds."""
    P = np.asarray(P, dtype=float)
    k = P.shape[-1]
    g = np.eye(k) + np.einsum("...ai,...aj->...ij", P, P)
    det = _metric_det(P)
    if k == 1:
        g_inv = 1.0 / g
    elif k == 2:
        g_inv = np.empty_like(g)
        g_inv[..., 0, 0] = g[..., 1, 1] / det
        g_inv[..., 1, 1] = g[..., 0, 0] / det
        g_inv[..., 0, 1] = g_inv[..., 1, 0] = -g[..., 0, 1] / det
    else:
        g_inv = _inverse_metric_svd(P)
    eig_g = _metric_eigs(g, det) if k <= 2 else _metric_eigs_svd(P)
    # eigenvalues of g^ij are reciprocals of those of g_ij
    return MetricPack(
        g=g,
        g_inv=g_inv,
        sqrt_g=np.sqrt(det),
        eig_min=1.0 / eig_g[..., -1],
        eig_max=1.0 / eig_g[..., 0],
    )


def embed_gradient(P):
    """n x n matrix E(P) mapping e_i (i < k) to (0, P e_i); zero elsewhere."""
    P = np.asarray(P, dtype=float)
    codim, k = P.shape[-2:]
    n = k + codim
    E = np.zeros(P.shape[:-2] + (n, n))
    E[..., k:, :k] = P
    return E


def tangent_projection(P, metric: MetricPack | None = None):
    """Orthogonal projection S onto the graph tangent plane Im(T + P).

    With tangent frame A = [I; P] (n x k), S = A g^{-1} A^T.
    """
    P = np.asarray(P, dtype=float)
    codim, k = P.shape[-2:]
    if metric is None:
        metric = induced_metric(P)
    A = np.concatenate([np.broadcast_to(np.eye(k), P.shape[:-2] + (k, k)), P], axis=-2)
    S = np.einsum("...pi,...ij,...qj->...pq", A, metric.g_inv, A)
    return _sym(S)


@dataclass(frozen=True)
class ProjectionPair:
    T: np.ndarray
    S: np.ndarray

    @property
    def T_perp(self):
        return np.eye(self.T.shape[-1]) - self.T

    @property
    def S_perp(self):
        return np.eye(self.S.shape[-1]) - self.S


class Frame:
    """Orthonormal ambient frame whose first k columns span the base plane.

    ``R`` maps canonical coordinates to ambient ones: ambient = R @ canonical.
    """

    def __init__(self, basis, n=None):
        B = np.atleast_2d(np.asarray(basis, dtype=float))
        if n is not None and B.shape[0] != n:
            B = B.T
        n, k = B.shape
        if k >= n:
            raise InvalidFrameError(f"basis of {k} vectors in R^{n} leaves no normal space")
        s = np.linalg.svd(B, compute_uv=False)
        if s[-1] <= 1e-12 * max(1.0, s[0]):
            raise InvalidFrameError("tangent basis is rank deficient")
        Qk, Rk = np.linalg.qr(B)
        signs = np.sign(np.diag(Rk))
        signs[signs == 0] = 1.0
        Qk = Qk * signs
        comp = null_space(Qk.T)
        self.R = np.concatenate([Qk, comp], axis=1)
        self.k = k
        self.n = n

    @classmethod
    def canonical(cls, n, k):
        return cls(np.eye(n)[:, :k])

    @property
    def T(self):
        Bk = self.R[:, : self.k]
        return Bk @ Bk.T

    def to_canonical(self, vec):
        return np.einsum("ji,...j->...i", self.R, vec)

    def from_canonical(self, vec):
        return np.einsum("ij,...j->...i", self.R, vec)

    def conjugate(self, M):
        """Ambient operator for a canonical-coordinate operator M."""
        return np.einsum("ip,...pq,jq->...ij", self.R, M, self.R)


def graph_tangent_plane(T_basis, P) -> ProjectionPair:
    """Projection pair (T, S) for a graph with gradient P over span(T_basis).

    ``P`` is expressed in the frame coordinates: columns index the given
    tangent basis, rows index the orthonormal completion of that basis.
    """
    P = np.asarray(P, dtype=float)
    B = np.atleast_2d(np.asarray(T_basis, dtype=float))
    k = P.shape[-1]
    if B.shape[1] != k:
        B = B.T
    frame = Frame(B)
    S = frame.conjugate(tangent_projection(P))
    T = np.broadcast_to(frame.T, S.shape).copy()
    return ProjectionPair(T=T, S=S)


def project_normal(u, S):
    """(I - S) u for stacks of ambient vectors and projections."""
    u = np.asarray(u, dtype=float)
    S = S.S if isinstance(S, ProjectionPair) else np.asarray(S, dtype=float)
    return u - np.einsum("...ij,...j->...i", S, u)


def metric_derivatives(P, metric: MetricPack | None = None):
    """Exact derivatives of sqrt(g) and g^{ij} with respect to P[b, m].

    With dg_pq / dP[b,m] = delta_pm P[b,q] + P[b,p] delta_qm:

        d sqrt(g) / dP[b,m]  = sqrt(g) (P g^{-1})[b, m]
        d g^{ij} / dP[b,m]   = -(g^{im} (P g^{-1})[b, j] + (P g^{-1})[b, i] g^{mj})

    Returns ``(d_sqrt_g, d_g_inv)`` of shapes (..., codim, k) and
    (..., k, k, codim, k), the last two axes being (b, m).
    """
    P = np.asarray(P, dtype=float)
    if metric is None:
        metric = induced_metric(P)
    Pg = np.einsum("...bq,...qm->...bm", P, metric.g_inv)
    d_sqrt_g = metric.sqrt_g[..., None, None] * Pg
    d_g_inv = -(
        np.einsum("...im,...bj->...ijbm", metric.g_inv, Pg)
        + np.einsum("...bi,...mj->...ijbm", Pg, metric.g_inv)
    )
    return d_sqrt_g, d_g_inv


def flux_derivative(P, metric: MetricPack | None = None):
    """d/dP[b,j] of the flux A^{ia} = sqrt(g) g^{il} P[a,l].

    Product rule on the three factors:

        dA^{ia}/dP[b,j] = d sqrt(g)/dP[b,j] g^{il} P[a,l]
                          + sqrt(g) dg^{il}/dP[b,j] P[a,l]
                          + sqrt(g) g^{ij} delta_ab

    Shape (..., k, codim, codim, k) indexed (i, a, b, j).
    """
    P = np.asarray(P, dtype=float)
    if metric is None:
        metric = induced_metric(P)
    codim = P.shape[-2]
    d_sqrt_g, d_g_inv = metric_derivatives(P, metric)
    gP = np.einsum("...il,...al->...ia", metric.g_inv, P)
    term1 = np.einsum("...bj,...ia->...iabj", d_sqrt_g, gP)
    term2 = metric.sqrt_g[..., None, None, None, None] * np.einsum(
        "...ilbj,...al->...iabj", d_g_inv, P
    )
    term3 = np.einsum(
        "...,...ij,ab->...iabj", metric.sqrt_g, metric.g_inv, np.eye(codim)
    )
    return term1 + term2 + term3


def legendre_hadamard(P, xi, eta):
    """Both sides of the rank-one ellipticity bound of the graph system.

    lhs = sum dA^{ia}/dP[b,j] xi_i xi_j eta^a eta^b,
    rhs = sqrt(g) |xi|^2 |eta|^2 / (1 + |P|^2)^2.
    """
    P = np.asarray(P, dtype=float)
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    metric = induced_metric(P)
    dA = flux_derivative(P, metric)
    lhs = np.einsum("...iabj,...i,...j,...a,...b->...", dA, xi, xi, eta, eta)
    norm2 = np.einsum("...ai,...ai->...", P, P)
    rhs = (
        metric.sqrt_g
        * np.einsum("...i,...i->...", xi, xi)
        * np.einsum("...a,...a->...", eta, eta)
        / (1.0 + norm2) ** 2
    )
    return lhs, rhs


def mean_curvature_of_graph(P, Q, metric: MetricPack | None = None):
    """Mean curvature vector h in R^n at a graph point, from P and Q only.

    Chain-rule expansion of the divergence forms
        h^j = g^{-1/2} d_i(sqrt(g) g^{ij}),
        h^a = g^{-1/2} d_i(sqrt(g) g^{ij} d_j f^a),
    with d_i P[b,m] = Q[b,m,i].
    """
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if metric is None:
        metric = induced_metric(P)
    d_sqrt_g, d_g_inv = metric_derivatives(P, metric)
    # d_i(sqrt(g) g^{ij}) summed over i
    tang = np.einsum("...bm,...ij,...bmi->...j", d_sqrt_g, metric.g_inv, Q)
    tang = tang + metric.sqrt_g[..., None] * np.einsum("...ijbm,...bmi->...j", d_g_inv, Q)
    dA = flux_derivative(P, metric)
    norm = np.einsum("...iabj,...bji->...a", dA, Q)
    h = np.concatenate([tang, norm], axis=-1)
    return h / metric.sqrt_g[..., None]


def mean_curvature_by_projection(P, Q, metric: MetricPack | None = None):
    """Independent route: h = S_perp (0, g^{ij} Q_ij)."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if metric is None:
        metric = induced_metric(P)
    k = P.shape[-1]
    w = np.einsum("...ij,...aij->...a", metric.g_inv, Q)
    vec = np.concatenate([np.zeros(w.shape[:-1] + (k,)), w], axis=-1)
    return project_normal(vec, tangent_projection(P, metric))
