"""Synthetic data generation: exact Lambertian environment rendering,
harmonic-model rendering and least-squares lighting fits.

The environment integral is evaluated with an equal-area Fibonacci sphere
quadrature, which serves as the brute-force oracle for the harmonic model.
"""

import logging

import numpy as np

from upstereo.geometry import build_gradient_operator, harmonic_images, normalize_field, unnormalized_normal
from upstereo.scene import AlbedoMaps, EnvironmentMap, ImageStack, LightingSet

logger = logging.getLogger(__name__)

DEFAULT_SAMPLES_PER_GREAT_CIRCLE = 200


def fibonacci_directions(count):
    """Equal-area Fibonacci lattice on the unit sphere, (count, 3)."""
    i = np.arange(count)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    zc = 1.0 - (2.0 * i + 1.0) / count
    r = np.sqrt(np.clip(1.0 - zc**2, 0.0, None))
    phi = golden * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), zc], axis=1)


def quadrature_points(samples_per_great_circle):
    """Directions and equal weights summing to 4*pi for the sphere integral."""
    if samples_per_great_circle < 16:
        raise ValueError("need at least 16 samples per great circle")
    count = max(int(np.ceil(samples_per_great_circle**2 / np.pi)), 16)
    dirs = fibonacci_directions(count)
    weights = np.full(count, 4.0 * np.pi / count)
    return dirs, weights


def render_environment(normals, albedo, env, samples_per_great_circle=DEFAULT_SAMPLES_PER_GREAT_CIRCLE):
    """Render one image from an environment map via sphere quadrature.

    I_c(p) = rho_c(p) * sum_k w_k l_c(w_k) max(w_k . n(p), 0), (C, N).
    """
    n = normals.n if hasattr(normals, "n") else np.asarray(normals, dtype=np.float64)
    rho = albedo.values if isinstance(albedo, AlbedoMaps) else np.asarray(albedo, dtype=np.float64)
    dirs, weights = quadrature_points(samples_per_great_circle)
    radiance = env.sample(dirs) * weights[:, None]  # (K, C)
    out = np.empty((rho.shape[0], n.shape[0]))
    chunk = max(1, int(4e7) // max(dirs.shape[0], 1))
    for start in range(0, n.shape[0], chunk):
        stop = min(start + chunk, n.shape[0])
        cosines = np.clip(n[start:stop] @ dirs.T, 0.0, None)  # (n_chunk, K)
        out[:, start:stop] = (cosines @ radiance).T
    return rho * out


def render_sh(albedo, lighting, normals):
    """Harmonic-model images rho_c * (l_ic . h[n]), shape (M, C, N); no clamping."""
    rho = albedo.values if isinstance(albedo, AlbedoMaps) else np.asarray(albedo, dtype=np.float64)
    vectors = lighting.values if isinstance(lighting, LightingSet) else np.asarray(lighting, dtype=np.float64)
    h = harmonic_images(normals)
    s = np.einsum("nq,mcq->mcn", h, vectors)
    return rho[None, :, :] * s


def fit_sh_lighting(rendered, normals, albedo, order=2, cond_limit=1e12):
    """Least-squares harmonic lighting vectors from rendered intensities.

    Order 1 constrains the five second-order entries to zero.  A
    rank-deficient normal set is flagged via a warning.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    images = rendered.values if isinstance(rendered, ImageStack) else np.asarray(rendered, dtype=np.float64)
    if images.ndim == 2:
        images = images[None]
    rho = albedo.values if isinstance(albedo, AlbedoMaps) else np.asarray(albedo, dtype=np.float64)
    h = harmonic_images(normals)
    size = 4 if order == 1 else 9
    basis = h[:, :size]
    num_images, num_channels = images.shape[0], images.shape[1]
    out = np.zeros((num_images, num_channels, 9))
    for i in range(num_images):
        for c in range(num_channels):
            design = rho[c][:, None] * basis
            gram = design.T @ design
            cond = np.linalg.cond(gram)
            if not np.isfinite(cond) or cond > cond_limit:
                logger.warning(
                    "ill-conditioned lighting fit (image %d, channel %d): cond=%.3g", i, c, cond
                )
            rhs = design.T @ images[i, c]
            out[i, c, :size] = np.linalg.lstsq(gram, rhs, rcond=None)[0]
    return LightingSet(values=out)


def perspective_normals(depth, intrinsics, domain):
    """Unit normals of a perspective depth map via the depth parameterization."""
    grad_op = build_gradient_operator(domain)
    return normalize_field(unnormalized_normal(depth, intrinsics, grad_op))


def make_synthetic_dataset(
    shape,
    albedo,
    lightings,
    intrinsics,
    domain,
    samples_per_great_circle=DEFAULT_SAMPLES_PER_GREAT_CIRCLE,
):
    """Render M images of a depth map plus its ground-truth normal field.

    ``lightings`` is either a LightingSet (harmonic-model rendering) or a
    list of EnvironmentMap (quadrature rendering, one image each).
    """
    normals = perspective_normals(shape, intrinsics, domain)
    if isinstance(lightings, LightingSet):
        values = render_sh(albedo, lightings, normals)
        values = np.clip(values, 0.0, None)
    else:
        frames = [
            render_environment(normals, albedo, env, samples_per_great_circle)
            for env in lightings
        ]
        values = np.stack(frames, axis=0)
    return ImageStack(values=values, domain=domain), normals


def random_environment(rng, channels=3, height=64, width=128, lobes=3, concentration=3.0):
    """Smooth random nonnegative environment: ambient plus a few cosine-power lobes."""
    rr = (np.arange(height) + 0.5) / height * np.pi
    cc = (np.arange(width) + 0.5) / width * 2.0 * np.pi
    theta, phi = np.meshgrid(rr, cc, indexing="ij")
    dirs = np.stack(
        [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1
    )
    values = np.full((height, width, channels), 0.0)
    for c in range(channels):
        values[:, :, c] += rng.uniform(0.05, 0.3)
        for _ in range(lobes):
            axis = rng.standard_normal(3)
            axis /= np.linalg.norm(axis)
            weight = rng.uniform(0.3, 1.0)
            sharp = rng.uniform(1.0, concentration)
            values[:, :, c] += weight * np.exp(sharp * (dirs @ axis - 1.0))
    return EnvironmentMap(values=values)
