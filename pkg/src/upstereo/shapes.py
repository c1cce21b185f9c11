"""Synthetic masks, depth maps, albedo patterns and lighting samplers."""

import numpy as np

from upstereo.scene import DepthMap, PixelDomain


def disk_mask(size, radius=None, center=None):
    """Boolean disk mask on a size x size grid."""
    if radius is None:
        radius = 0.42 * size
    if center is None:
        center = ((size - 1) / 2.0, (size - 1) / 2.0)
    rr, cc = np.mgrid[0:size, 0:size]
    return (rr - center[0]) ** 2 + (cc - center[1]) ** 2 <= radius**2


def gaussian_bump_depth(domain, base=2.0, amplitude=0.5, sigma_frac=0.25):
    """Smooth bump toward the camera: depth dips by ``amplitude`` at the center."""
    if amplitude >= base:
        raise ValueError("amplitude must stay below the base depth")
    r0 = (domain.height - 1) / 2.0
    c0 = (domain.width - 1) / 2.0
    sigma = sigma_frac * min(domain.height, domain.width)
    d2 = (domain.rows - r0) ** 2 + (domain.cols - c0) ** 2
    z = base - amplitude * np.exp(-d2 / (2.0 * sigma**2))
    return DepthMap(projection="perspective", values=z)


def hemisphere_depth(domain, base=2.0, amplitude=0.5, radius_frac=0.48):
    """Spherical cap toward the camera over the mask center, positive everywhere."""
    if amplitude >= base:
        raise ValueError("amplitude must stay below the base depth")
    r0 = (domain.height - 1) / 2.0
    c0 = (domain.width - 1) / 2.0
    radius = radius_frac * min(domain.height, domain.width)
    d2 = (domain.rows - r0) ** 2 + (domain.cols - c0) ** 2
    bump = np.sqrt(np.clip(radius**2 - d2, 0.0, None)) / radius
    z = base - amplitude * bump
    return DepthMap(projection="perspective", values=z)


SHAPES = {"gaussian-bump": gaussian_bump_depth, "hemisphere": hemisphere_depth}


def albedo_pattern(name, domain, channels=1):
    """Deterministic reflectance patterns in [0.2, 1], values (C, N)."""
    rows = domain.rows
    cols = domain.cols
    out = np.zeros((channels, domain.num_pixels))
    for c in range(channels):
        if name == "constant":
            out[c] = 0.75
        elif name == "stripes":
            period = max(8, domain.width // 8)
            phase = c * period / 3.0
            out[c] = np.where(((cols + phase) // (period // 2)) % 2 == 0, 0.9, 0.35)
        elif name == "checker":
            cell = max(8, domain.width // 8)
            out[c] = np.where(((rows // cell) + (cols // cell) + c) % 2 == 0, 0.85, 0.3)
        else:
            raise ValueError(f"unknown albedo pattern {name!r}")
    return out


ALBEDO_PATTERNS = ("constant", "stripes", "checker")


def random_lighting(num_images, num_channels, rng, second_order_scale=0.15, first_order_only=False):
    """Random frontal-biased harmonic lighting vectors, (M, C, 9)."""
    vectors = np.zeros((num_images, num_channels, 9))
    vectors[:, :, 0] = rng.uniform(0.25, 0.5, size=(num_images, num_channels))
    vectors[:, :, 1:3] = 0.3 * rng.standard_normal((num_images, num_channels, 2))
    vectors[:, :, 3] = -rng.uniform(0.6, 1.1, size=(num_images, num_channels))
    if not first_order_only:
        vectors[:, :, 4:] = second_order_scale * rng.standard_normal((num_images, num_channels, 5))
    return vectors


def ensure_positive_shading(vectors, h, floor=0.05):
    """Raise the ambient coefficient so min shading over ``h`` is at least ``floor``."""
    vectors = np.array(vectors, dtype=np.float64)
    for i in range(vectors.shape[0]):
        for c in range(vectors.shape[1]):
            lo = float(np.min(h @ vectors[i, c]))
            if lo < floor:
                vectors[i, c, 0] += floor - lo
    return vectors


def make_domain(size, shape="disk"):
    if shape == "disk":
        return PixelDomain(disk_mask(size))
    if shape == "full":
        return PixelDomain(np.ones((size, size), dtype=bool))
    raise ValueError(f"unknown domain shape {shape!r}")
