"""Two-phase depth initialization.

Phase 1 inflates a volume-constrained minimal surface under orthographic
projection with projected gradient steps; the surface is pinned to zero
just outside the mask, which is what makes the inflation non-trivial.
Phase 2 converts the orthographic depth to a perspective one by integrating
the log-perspective depth gradient implied by the (projection-invariant)
normals.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg

from upstereo.geometry import GradientOperator, NormalField, build_gradient_operator
from upstereo.scene import DepthMap

logger = logging.getLogger(__name__)

GRAZING_EPS = 1e-6


def spectral_norm_gradient(grad_op, tol=1e-6, max_iters=10000, seed=0):
    """Spectral norm of the stacked difference operator via power iteration."""
    a_u, a_v = grad_op.d_u, grad_op.d_v
    n = a_u.shape[1]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    sigma_sq = 0.0
    for _ in range(max_iters):
        w = a_u.T @ (a_u @ v) + a_v.T @ (a_v @ v)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0
        new_sigma_sq = float(v @ w)
        v = w / norm_w
        if abs(new_sigma_sq - sigma_sq) <= tol * max(abs(new_sigma_sq), 1e-300):
            sigma_sq = new_sigma_sq
            break
        sigma_sq = new_sigma_sq
    return float(np.sqrt(max(sigma_sq, 0.0)))


def build_balloon_operator(domain):
    """Forward differences on the full grid applied to the zero-extended mask field.

    Differences that step across the mask boundary see the fixed zero outside,
    which pins the inflating surface at the silhouette.  Rows live on the full
    grid, columns on masked pixels.
    """
    h, w = domain.mask.shape
    p = h * w
    grid_idx = np.arange(p).reshape(h, w)
    masked_flat = np.flatnonzero(domain.mask.ravel())
    select = sparse.csr_matrix(
        (np.ones(domain.num_pixels), (masked_flat, np.arange(domain.num_pixels))),
        shape=(p, domain.num_pixels),
    )

    def full_forward(axis):
        if axis == "u":
            rows = np.concatenate([grid_idx[:, :-1].ravel()] * 2)
            cols = np.concatenate([grid_idx[:, 1:].ravel(), grid_idx[:, :-1].ravel()])
        else:
            rows = np.concatenate([grid_idx[:-1, :].ravel()] * 2)
            cols = np.concatenate([grid_idx[1:, :].ravel(), grid_idx[:-1, :].ravel()])
        vals = np.concatenate([np.ones(rows.size // 2), -np.ones(rows.size // 2)])
        return sparse.csr_matrix((vals, (rows, cols)), shape=(p, p))

    d_u = (full_forward("u") @ select).tocsr()
    d_v = (full_forward("v") @ select).tocsr()
    return GradientOperator(d_u=d_u, d_v=d_v, domain=domain)


def balloon_surface_area(z, balloon_op):
    """Discrete area sum sqrt(1 + |grad z|^2) over stencils touching the mask."""
    g_u, g_v = balloon_op.apply(z)
    active = np.asarray(
        (abs(balloon_op.d_u).sum(axis=1) + abs(balloon_op.d_v).sum(axis=1))
    ).ravel() > 0
    return float(np.sum(np.sqrt(1.0 + g_u[active] ** 2 + g_v[active] ** 2)))


@dataclass
class BalloonInfo:
    iterations: int = 0
    converged: bool = False
    step: float = 0.0
    area_history: list = field(default_factory=list)
    max_volume_error: float = 0.0


def balloon(domain, volume, tol=1e-6, max_iters=2000):
    """Volume-constrained minimal surface by projected gradient iterations.

    Starts from the flat field V/N; each half-step descends the surface area,
    each projection restores the volume sum exactly.  The step starts at
    0.8 / |grad|_spec and is halved whenever the area would increase, which
    keeps the area non-increasing (the nominal step sits just above the
    descent stability limit of the discrete area Hessian).  Returns the
    orthographic depth and iteration info (non-convergence sets a flag).
    """
    if volume <= 0:
        raise ValueError("volume must be positive")
    op = build_balloon_operator(domain)
    tau = 0.8 / spectral_norm_gradient(op)
    n = domain.num_pixels
    z = np.full(n, volume / n)
    info = BalloonInfo(step=tau)
    area = balloon_surface_area(z, op)
    info.area_history.append(area)
    for k in range(max_iters):
        g_u, g_v = op.apply(z)
        inv_len = 1.0 / np.sqrt(1.0 + g_u**2 + g_v**2)
        grad = op.divergence(inv_len * g_u, inv_len * g_v)
        while True:
            z_half = z - tau * grad
            z_new = z_half + (volume - z_half.sum()) / n
            new_area = balloon_surface_area(z_new, op)
            if new_area <= area or tau < 1e-12:
                break
            tau *= 0.5
        change = np.linalg.norm(z_new - z) / max(np.linalg.norm(z), 1e-300)
        z = z_new
        area = new_area
        info.iterations = k + 1
        info.step = tau
        info.area_history.append(area)
        info.max_volume_error = max(info.max_volume_error, abs(float(z.sum()) - volume))
        if change < tol:
            info.converged = True
            break
    if not info.converged:
        logger.warning("balloon did not converge in %d iterations", max_iters)
    return DepthMap(projection="orthographic", values=z), info


def orthographic_normals(z_o, grad_op):
    """Unit normals of an orthographic depth map, oriented toward the camera."""
    zv = z_o.values if hasattr(z_o, "values") else np.asarray(z_o, dtype=np.float64)
    g_u, g_v = grad_op.apply(zv)
    norm = np.sqrt(g_u**2 + g_v**2 + 1.0)
    n = np.stack([g_u / norm, g_v / norm, -1.0 / norm], axis=1)
    ntilde = np.stack([g_u, g_v, -np.ones_like(g_u)], axis=1)
    return NormalField(n=n, theta=norm, ntilde=ntilde, degenerate=np.zeros(zv.shape[0], dtype=bool))


def log_perspective_gradient(normals, intrinsics, domain, grazing_eps=GRAZING_EPS):
    """Gradient of the log-perspective depth implied by a normal field, (N, 2).

    Pixels where the projective denominator vanishes (grazing view) are
    flagged and get a zero gradient.
    """
    n = normals.n if hasattr(normals, "n") else np.asarray(normals, dtype=np.float64)
    ut = domain.cols - intrinsics.u_0
    vt = domain.rows - intrinsics.v_0
    denom = ut * n[:, 0] / intrinsics.f_u + vt * n[:, 1] / intrinsics.f_v + n[:, 2]
    grazing = np.abs(denom) < grazing_eps
    safe = np.where(grazing, 1.0, denom)
    g = np.stack([-n[:, 0] / (intrinsics.f_u * safe), -n[:, 1] / (intrinsics.f_v * safe)], axis=1)
    g[grazing] = 0.0
    if np.any(grazing):
        logger.warning("%d grazing pixels flagged during log-gradient conversion", int(grazing.sum()))
    return g, grazing


def integrate_gradient(g, domain, grad_op=None, cg_tol=1e-10, cg_max_iters=5000):
    """Least-squares integration of a masked gradient field, zero-mean gauge.

    Solves the normal equations of min ||grad z - g||^2 with conjugate
    gradient; the constant null space is handled by the gauge fix.
    """
    if grad_op is None:
        grad_op = build_gradient_operator(domain)
    g = np.asarray(g, dtype=np.float64)
    a = (grad_op.d_u.T @ grad_op.d_u + grad_op.d_v.T @ grad_op.d_v).tocsr()
    b = grad_op.d_u.T @ g[:, 0] + grad_op.d_v.T @ g[:, 1]
    x, cg_info = cg(a, b, rtol=cg_tol, atol=0.0, maxiter=cg_max_iters)
    if cg_info != 0:
        logger.warning("gradient integration CG did not converge (info=%d)", cg_info)
    return x - x.mean()


def init_depth_balloon(domain, intrinsics, kappa, tol=1e-6, max_iters=2000, cg_tol=1e-10):
    """Balloon pipeline: inflate, convert normals, integrate, exponentiate.

    The inflated height is the relief toward the camera, so the orthographic
    depth fed to the normal conversion is its negation (up to the irrelevant
    base-plane constant); this makes the initial surface bulge toward the
    camera, matching the convex-scene rationale of the initializer.  The log
    constant is fixed so the mean perspective depth equals kappa, the
    per-pixel volume ratio V/N.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    volume = kappa * domain.num_pixels
    z_o, info = balloon(domain, volume, tol=tol, max_iters=max_iters)
    grad_op = build_gradient_operator(domain)
    normals = orthographic_normals(-z_o.values, grad_op)
    g, _ = log_perspective_gradient(normals, intrinsics, domain)
    log_z = integrate_gradient(g, domain, grad_op, cg_tol=cg_tol)
    z = np.exp(log_z)
    z *= kappa / z.mean()
    return DepthMap(projection="perspective", values=z), info


def init_depth_hemisphere(domain, intrinsics, radius_scale=1.0):
    """Near hemisphere over the mask's bounding disk in the image plane.

    The sphere circumscribes the bounding circle of the masked pixels;
    depths are in pixel units and clamped positive outside the disk.
    """
    if radius_scale <= 0:
        raise ValueError("radius_scale must be positive")
    r0 = 0.5 * (domain.rows.min() + domain.rows.max())
    c0 = 0.5 * (domain.cols.min() + domain.cols.max())
    dist2 = (domain.rows - r0) ** 2 + (domain.cols - c0) ** 2
    bound = float(np.sqrt(dist2.max()))
    radius = radius_scale * max(bound, 1.0)
    offset = np.sqrt(np.clip(radius**2 - dist2, 0.0, None))
    z = 1.1 * radius - offset
    return DepthMap(projection="perspective", values=z)
