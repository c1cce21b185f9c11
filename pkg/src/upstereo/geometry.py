"""Differential operators on the masked grid and the depth-to-shading chain.

The map from depth to unnormalized normals is linear; harmonic images are
second-order polynomials of the normal.  All functions here are pure and
safe for data-parallel evaluation.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse

THETA_FLOOR = 1e-9


@dataclass(frozen=True)
class GradientOperator:
    """Sparse horizontal/vertical difference maps on masked pixel vectors."""

    d_u: sparse.csr_matrix
    d_v: sparse.csr_matrix
    domain: object

    def apply(self, values):
        return self.d_u @ values, self.d_v @ values

    def divergence(self, g_u, g_v):
        """Adjoint accumulation D_u^T g_u + D_v^T g_v."""
        return self.d_u.T @ g_u + self.d_v.T @ g_v

    def gradient_magnitude(self, values):
        g_u, g_v = self.apply(values)
        return np.sqrt(g_u**2 + g_v**2)


def _difference_matrix(domain, axis):
    """Forward difference toward the masked +1 neighbor along ``axis``;
    one-sided backward difference where only the -1 neighbor is masked;
    zero row where neither neighbor exists."""
    mask = domain.mask
    idx = domain.index_grid
    n = domain.num_pixels
    plus = np.zeros_like(mask)
    minus = np.zeros_like(mask)
    idx_plus = np.full_like(idx, -1)
    idx_minus = np.full_like(idx, -1)
    if axis == "u":
        plus[:, :-1] = mask[:, :-1] & mask[:, 1:]
        minus[:, 1:] = mask[:, 1:] & mask[:, :-1]
        idx_plus[:, :-1] = idx[:, 1:]
        idx_minus[:, 1:] = idx[:, :-1]
    else:
        plus[:-1, :] = mask[:-1, :] & mask[1:, :]
        minus[1:, :] = mask[1:, :] & mask[:-1, :]
        idx_plus[:-1, :] = idx[1:, :]
        idx_minus[1:, :] = idx[:-1, :]
    fwd = mask & plus
    bwd = mask & ~plus & minus
    rows = np.concatenate([idx[fwd], idx[fwd], idx[bwd], idx[bwd]])
    cols = np.concatenate([idx_plus[fwd], idx[fwd], idx[bwd], idx_minus[bwd]])
    vals = np.concatenate(
        [
            np.ones(fwd.sum()),
            -np.ones(fwd.sum()),
            np.ones(bwd.sum()),
            -np.ones(bwd.sum()),
        ]
    )
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def build_gradient_operator(domain):
    """Assemble the masked forward/backward difference operator pair."""
    return GradientOperator(
        d_u=_difference_matrix(domain, "u"),
        d_v=_difference_matrix(domain, "v"),
        domain=domain,
    )


@dataclass(frozen=True)
class NormalField:
    """Unit normals ``n`` with norms ``theta`` of the unnormalized field ``ntilde``.

    ``degenerate`` marks pixels whose norm fell below the floor and was clamped.
    """

    n: np.ndarray
    theta: np.ndarray
    ntilde: np.ndarray
    degenerate: np.ndarray

    @classmethod
    def from_unit(cls, n):
        n = np.asarray(n, dtype=np.float64)
        ones = np.ones(n.shape[0])
        return cls(n=n, theta=ones, ntilde=n.copy(), degenerate=np.zeros(n.shape[0], dtype=bool))


def unnormalized_normal(z, intrinsics, grad_op):
    """Unnormalized camera-facing normals from a perspective depth, (N, 3).

    Components: (f_u d_u z, f_v d_v z, -z - (u-u0) d_u z - (v-v0) d_v z).
    Linear in z.
    """
    zv = z.values if hasattr(z, "values") else np.asarray(z, dtype=np.float64)
    domain = grad_op.domain
    du, dv = grad_op.apply(zv)
    ut = domain.cols - intrinsics.u_0
    vt = domain.rows - intrinsics.v_0
    n1 = intrinsics.f_u * du
    n2 = intrinsics.f_v * dv
    n3 = -zv - ut * du - vt * dv
    return np.stack([n1, n2, n3], axis=1)


def normalize_field(ntilde, floor=THETA_FLOOR):
    """Split an unnormalized field into unit directions and positive norms."""
    ntilde = np.asarray(ntilde, dtype=np.float64)
    theta = np.linalg.norm(ntilde, axis=1)
    degenerate = theta < floor
    theta = np.maximum(theta, floor)
    return NormalField(n=ntilde / theta[:, None], theta=theta, ntilde=ntilde, degenerate=degenerate)


def harmonic_images(n):
    """Second-order harmonic images of (possibly non-unit) directions, (N, 9).

    Column order: [1, n1, n2, n3, n1 n2, n1 n3, n2 n3, n1^2 - n2^2, 3 n3^2 - 1].
    """
    if isinstance(n, NormalField):
        n = n.n
    n = np.asarray(n, dtype=np.float64)
    n1, n2, n3 = n[:, 0], n[:, 1], n[:, 2]
    return np.stack(
        [
            np.ones_like(n1),
            n1,
            n2,
            n3,
            n1 * n2,
            n1 * n3,
            n2 * n3,
            n1**2 - n2**2,
            3.0 * n3**2 - 1.0,
        ],
        axis=1,
    )


def harmonic_images_jacobian(n):
    """Derivative of the harmonic images w.r.t. the direction, (N, 9, 3)."""
    if isinstance(n, NormalField):
        n = n.n
    n = np.asarray(n, dtype=np.float64)
    count = n.shape[0]
    n1, n2, n3 = n[:, 0], n[:, 1], n[:, 2]
    jac = np.zeros((count, 9, 3))
    jac[:, 1, 0] = 1.0
    jac[:, 2, 1] = 1.0
    jac[:, 3, 2] = 1.0
    jac[:, 4, 0] = n2
    jac[:, 4, 1] = n1
    jac[:, 5, 0] = n3
    jac[:, 5, 2] = n1
    jac[:, 6, 1] = n3
    jac[:, 6, 2] = n2
    jac[:, 7, 0] = 2.0 * n1
    jac[:, 7, 1] = -2.0 * n2
    jac[:, 8, 2] = 6.0 * n3
    return jac


def shading(lighting_vector, h):
    """Per-pixel dot product of one 9-vector with the harmonic images."""
    return h @ np.asarray(lighting_vector, dtype=np.float64)


def _ntilde_z_coefficients(intrinsics, grad_op, directional):
    """Row coefficients of d(ntilde_j)/dz for each per-pixel 3-vector weight.

    Given per-pixel weights g = (g1, g2, g3), the z-derivative row at pixel j is
    (g1 f_u - g3 ut_j) D_u[j, :] + (g2 f_v - g3 vt_j) D_v[j, :] - g3 e_j.
    """
    domain = grad_op.domain
    ut = domain.cols - intrinsics.u_0
    vt = domain.rows - intrinsics.v_0
    g1, g2, g3 = directional[..., 0], directional[..., 1], directional[..., 2]
    coef_u = g1 * intrinsics.f_u - g3 * ut
    coef_v = g2 * intrinsics.f_v - g3 * vt
    coef_0 = -g3
    return coef_u, coef_v, coef_0


def residual_jacobian_z(rho, lighting, z, theta, intrinsics, grad_op, degenerate=None, differentiate_norm=False):
    """Sparse Jacobian of the shading residuals w.r.t. depth, shape (M*C*N, N).

    By default the norms ``theta`` are held fixed (lagged), so each row only
    differentiates through the linear map z -> ntilde and the harmonic
    polynomials; it touches at most the stencil pixels of its own pixel.
    Rows are ordered (i, c, j) with j fastest.

    With ``differentiate_norm`` the unit-normalization Jacobian
    (I - n n^T) / theta is inserted, giving the exact derivative of the
    residual with theta = |ntilde[z]| followed through.
    """
    rho = np.asarray(rho, dtype=np.float64)
    lighting = np.asarray(lighting, dtype=np.float64)
    zv = z.values if hasattr(z, "values") else np.asarray(z, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    num_images, num_channels = lighting.shape[0], lighting.shape[1]
    if rho.shape[0] != num_channels:
        raise ValueError("albedo and lighting channel counts differ")
    n = zv.shape[0]
    ntilde = unnormalized_normal(zv, intrinsics, grad_op)
    direction = ntilde / theta[:, None]
    dh = harmonic_images_jacobian(direction)  # (N, 9, 3)
    # dr/d(ntilde) per (i, c, j): rho_cj / theta_j * (l_ic^T dh_j)
    lh = np.einsum("mcq,nqk->mcnk", lighting, dh)
    if differentiate_norm:
        proj = np.eye(3)[None, :, :] - direction[:, :, None] * direction[:, None, :]
        lh = np.einsum("mcnk,nkj->mcnj", lh, proj)
    g = lh * (rho[None, :, :] / theta[None, None, :])[..., None]
    if degenerate is not None and np.any(degenerate):
        g[:, :, degenerate, :] = 0.0
    coef_u, coef_v, coef_0 = _ntilde_z_coefficients(intrinsics, grad_op, g)
    num_rows = num_images * num_channels * n
    row_idx = np.arange(num_rows)
    col_idx = np.tile(np.arange(n), num_images * num_channels)
    p_u = sparse.csr_matrix((coef_u.ravel(), (row_idx, col_idx)), shape=(num_rows, n))
    p_v = sparse.csr_matrix((coef_v.ravel(), (row_idx, col_idx)), shape=(num_rows, n))
    p_0 = sparse.csr_matrix((coef_0.ravel(), (row_idx, col_idx)), shape=(num_rows, n))
    jac = p_u @ grad_op.d_u + p_v @ grad_op.d_v + p_0
    jac.sum_duplicates()
    return jac.tocsr()
