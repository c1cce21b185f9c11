"""Core scene types, masked-pixel indexing and file I/O.

Conventions: pixel coordinate u increases along columns (x-right), v along
rows (y-down); the camera looks down +z, so perspective depths are strictly
positive.  Intensities are normalized to [0, 1] at load time by the file
format's white level.  All types are immutable after construction and safe
to share read-only across threads.
"""

import json
import os
from dataclasses import dataclass

import cv2
import numpy as np

from upstereo.pfm import read_pfm, write_pfm


def _frozen(arr, dtype=None):
    out = np.array(arr, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal lengths and principal point, in pixels."""

    f_u: float
    f_v: float
    u_0: float
    v_0: float

    def __post_init__(self):
        if not (self.f_u > 0 and self.f_v > 0):
            raise ValueError("focal lengths must be positive")
        if not (np.isfinite(self.u_0) and np.isfinite(self.v_0)):
            raise ValueError("principal point must be finite")

    def matrix(self):
        return np.array(
            [[self.f_u, 0.0, self.u_0], [0.0, self.f_v, self.v_0], [0.0, 0.0, 1.0]]
        )

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump({"f_u": self.f_u, "f_v": self.f_v, "u_0": self.u_0, "v_0": self.v_0}, fh, indent=2)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        return cls(f_u=float(d["f_u"]), f_v=float(d["f_v"]), u_0=float(d["u_0"]), v_0=float(d["v_0"]))


class PixelDomain:
    """Masked pixel domain with a bijection between grid and linear indices.

    Masked pixels are enumerated row-major; ``index_grid`` holds the linear
    index at each masked pixel and -1 elsewhere.
    """

    def __init__(self, mask):
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError("mask must be a 2D boolean grid")
        n = int(mask.sum())
        if n < 1:
            raise ValueError("empty mask")
        self.mask = _frozen(mask)
        self.height, self.width = mask.shape
        self.num_pixels = n
        index_grid = np.full(mask.shape, -1, dtype=np.int64)
        index_grid[mask] = np.arange(n)
        self.index_grid = _frozen(index_grid)
        rows, cols = np.nonzero(mask)
        self.rows = _frozen(rows.astype(np.int64))
        self.cols = _frozen(cols.astype(np.int64))

    def linear_index(self, row, col):
        j = self.index_grid[row, col]
        if np.any(j < 0):
            raise IndexError("pixel outside the mask")
        return j

    def pixel(self, j):
        return self.rows[j], self.cols[j]

    def to_grid(self, values, fill=0.0):
        """Scatter per-pixel values onto the full (H, W) grid."""
        values = np.asarray(values)
        grid = np.full(self.mask.shape + values.shape[1:], fill, dtype=values.dtype)
        grid[self.mask] = values
        return grid

    def from_grid(self, grid):
        """Gather values at masked pixels into a length-N vector."""
        return np.asarray(grid)[self.mask]


@dataclass(frozen=True)
class ImageStack:
    """M images, C channels, values (M, C, N) over one shared PixelDomain."""

    values: np.ndarray
    domain: PixelDomain

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ValueError("image stack must have shape (M, C, N)")
        if v.shape[2] != self.domain.num_pixels:
            raise ValueError("image stack does not match the pixel domain")
        if np.any(v < 0):
            raise ValueError("intensities must be nonnegative")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def num_images(self):
        return self.values.shape[0]

    @property
    def num_channels(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel depth; perspective depths must be strictly positive."""

    projection: str
    values: np.ndarray

    def __post_init__(self):
        if self.projection not in ("orthographic", "perspective"):
            raise ValueError(f"unknown projection {self.projection!r}")
        v = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise ValueError("depth values must be finite")
        if self.projection == "perspective" and np.any(v <= 0):
            raise ValueError("perspective depth must be strictly positive")
        object.__setattr__(self, "values", _frozen(v))


@dataclass(frozen=True)
class AlbedoMaps:
    """Per-channel nonnegative reflectance, values (C, N)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("albedo must have shape (C, N)")
        if np.any(v < 0):
            raise ValueError("albedo must be nonnegative")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def num_channels(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class LightingSet:
    """Per image and channel one 9-vector of harmonic lighting coefficients.

    Basis order: [1, n1, n2, n3, n1*n2, n1*n3, n2*n3, n1^2-n2^2, 3*n3^2-1].
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 9:
            raise ValueError("lighting set must have shape (M, C, 9)")
        if not np.all(np.isfinite(v)):
            raise ValueError("lighting coefficients must be finite")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def num_images(self):
        return self.values.shape[0]

    @property
    def num_channels(self):
        return self.values.shape[1]

    def is_first_order(self):
        return bool(np.all(self.values[:, :, 4:] == 0.0))

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(
                {
                    "num_images": int(self.values.shape[0]),
                    "num_channels": int(self.values.shape[1]),
                    "vectors": self.values.tolist(),
                },
                fh,
            )

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        return cls(values=np.asarray(d["vectors"], dtype=np.float64))


@dataclass(frozen=True)
class EnvironmentMap:
    """Latitude-longitude grid of nonnegative radiance, values (H, W, C).

    Rows span polar angle [0, pi] top to bottom, columns span azimuth
    [0, 2*pi) left to right; the grid covers the full sphere.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3:
            raise ValueError("environment map must have shape (H, W, C)")
        if np.any(v < 0):
            raise ValueError("environment radiance must be nonnegative")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def num_channels(self):
        return self.values.shape[2]

    def sample(self, directions):
        """Bilinearly sample radiance at unit directions, returns (K, C)."""
        d = np.asarray(directions, dtype=np.float64)
        h, w, _ = self.values.shape
        theta = np.arccos(np.clip(d[:, 2], -1.0, 1.0))
        phi = np.mod(np.arctan2(d[:, 1], d[:, 0]), 2.0 * np.pi)
        r = theta / np.pi * h - 0.5
        c = phi / (2.0 * np.pi) * w - 0.5
        r0 = np.floor(r).astype(np.int64)
        c0 = np.floor(c).astype(np.int64)
        fr = r - r0
        fc = c - c0
        r0c = np.clip(r0, 0, h - 1)
        r1c = np.clip(r0 + 1, 0, h - 1)
        c0w = np.mod(c0, w)
        c1w = np.mod(c0 + 1, w)
        v = self.values
        top = v[r0c, c0w] * (1 - fc)[:, None] + v[r0c, c1w] * fc[:, None]
        bot = v[r1c, c0w] * (1 - fc)[:, None] + v[r1c, c1w] * fc[:, None]
        return top * (1 - fr)[:, None] + bot * fr[:, None]

    def to_pfm(self, path):
        v = self.values
        if v.shape[2] == 1:
            write_pfm(path, v[:, :, 0])
        elif v.shape[2] == 3:
            write_pfm(path, v)
        else:
            raise ValueError("PFM export supports 1- or 3-channel maps")

    @classmethod
    def from_pfm(cls, path):
        return cls(values=read_pfm(path).astype(np.float64))


# ---------------------------------------------------------------------------
# image / mask files


def _white_level(arr):
    if arr.dtype == np.uint8:
        return 255.0
    if arr.dtype == np.uint16:
        return 65535.0
    return 1.0


def read_image(path):
    """Read a PNG (8/16-bit) or PFM image as float64 in [0, 1], shape (H, W, C)."""
    if str(path).lower().endswith(".pfm"):
        arr = read_pfm(path).astype(np.float64)
        return arr[:, :, None] if arr.ndim == 2 else arr
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"unreadable image file: {path}")
    scale = _white_level(raw)
    arr = raw.astype(np.float64) / scale
    if arr.ndim == 2:
        return arr[:, :, None]
    if arr.shape[2] == 4:
        arr = arr[:, :, :3]
    return arr[:, :, ::-1].copy()  # BGR -> RGB


def write_image(path, arr, bit_depth=16):
    """Write a [0, 1] float image (H, W) or (H, W, C) as an 8/16-bit PNG."""
    arr = np.asarray(arr, dtype=np.float64)
    if bit_depth == 16:
        quant = np.clip(np.round(arr * 65535.0), 0, 65535).astype(np.uint16)
    elif bit_depth == 8:
        quant = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    else:
        raise ValueError("bit_depth must be 8 or 16")
    if quant.ndim == 3 and quant.shape[2] == 3:
        quant = quant[:, :, ::-1]  # RGB -> BGR
    elif quant.ndim == 3 and quant.shape[2] == 1:
        quant = quant[:, :, 0]
    if not cv2.imwrite(str(path), quant):
        raise IOError(f"could not write image: {path}")


def read_mask(path):
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"unreadable mask file: {path}")
    if raw.ndim == 3:
        raw = raw[:, :, 0]
    return raw > 0


def write_mask(path, mask):
    mask = np.asarray(mask, dtype=bool)
    if not cv2.imwrite(str(path), (mask * np.uint8(255))):
        raise IOError(f"could not write mask: {path}")


def load_scene(image_paths, mask_path, intrinsics_path):
    """Load images, mask and intrinsics into (ImageStack, PixelDomain, CameraIntrinsics)."""
    mask = read_mask(mask_path)
    domain = PixelDomain(mask)
    intrinsics = CameraIntrinsics.from_json(intrinsics_path)
    stacks = []
    channels = None
    for path in image_paths:
        img = read_image(path)
        if img.shape[:2] != mask.shape:
            raise ValueError(
                f"dimension mismatch: image {path} is {img.shape[:2]}, mask is {mask.shape}"
            )
        if channels is None:
            channels = img.shape[2]
        elif img.shape[2] != channels:
            raise ValueError(f"channel mismatch: image {path} has {img.shape[2]} channels, expected {channels}")
        stacks.append(img[mask].T)  # (C, N)
    if not stacks:
        raise ValueError("no images given")
    values = np.stack(stacks, axis=0)
    return ImageStack(values=values, domain=domain), domain, intrinsics


# ---------------------------------------------------------------------------
# mesh + result export


def mesh_vertices(z, domain, intrinsics):
    """Back-project masked pixels to 3D via x = z * K^{-1} [u, v, 1]^T, returns (N, 3)."""
    zv = np.asarray(z, dtype=np.float64)
    x = zv * (domain.cols - intrinsics.u_0) / intrinsics.f_u
    y = zv * (domain.rows - intrinsics.v_0) / intrinsics.f_v
    return np.stack([x, y, zv], axis=1)


def mesh_faces(domain):
    """Triangulate each 2x2 block of masked pixels; 3-of-4 blocks give one triangle."""
    idx = domain.index_grid
    j00 = idx[:-1, :-1]
    j01 = idx[:-1, 1:]
    j10 = idx[1:, :-1]
    j11 = idx[1:, 1:]
    faces = []
    all4 = (j00 >= 0) & (j01 >= 0) & (j10 >= 0) & (j11 >= 0)
    faces.append(np.stack([j00[all4], j10[all4], j01[all4]], axis=1))
    faces.append(np.stack([j01[all4], j10[all4], j11[all4]], axis=1))
    only3 = [
        ((j00 >= 0) & (j01 >= 0) & (j10 >= 0) & (j11 < 0), (j00, j10, j01)),
        ((j00 >= 0) & (j01 >= 0) & (j11 >= 0) & (j10 < 0), (j00, j11, j01)),
        ((j00 >= 0) & (j10 >= 0) & (j11 >= 0) & (j01 < 0), (j00, j10, j11)),
        ((j01 >= 0) & (j10 >= 0) & (j11 >= 0) & (j00 < 0), (j01, j10, j11)),
    ]
    for sel, (a, b, c) in only3:
        faces.append(np.stack([a[sel], b[sel], c[sel]], axis=1))
    return np.concatenate(faces, axis=0) if faces else np.zeros((0, 3), dtype=np.int64)


def write_obj(path, vertices, faces, colors=None):
    """Write an OBJ mesh, optionally with per-vertex colors (v x y z r g b)."""
    with open(path, "w") as fh:
        for i, v in enumerate(vertices):
            if colors is not None:
                c = colors[i]
                fh.write(f"v {v[0]:.8g} {v[1]:.8g} {v[2]:.8g} {c[0]:.6g} {c[1]:.6g} {c[2]:.6g}\n")
            else:
                fh.write(f"v {v[0]:.8g} {v[1]:.8g} {v[2]:.8g}\n")
        for f in faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def _albedo_colors(albedo_values):
    c = albedo_values.shape[0]
    if c >= 3:
        rgb = albedo_values[:3].T
    else:
        rgb = np.repeat(albedo_values[:1].T, 3, axis=1)
    return np.clip(rgb, 0.0, 1.0)


def save_outputs(z, albedo, lighting, domain, intrinsics, out_dir):
    """Write depth (PFM), per-channel albedo (PFM), lighting (JSON) and a mesh (OBJ).

    Validates all inputs against the shared domain before writing anything.
    """
    if not isinstance(z, DepthMap):
        z = DepthMap(projection="perspective", values=z)
    if z.projection == "perspective" and np.any(z.values <= 0):
        raise ValueError("perspective depth must be strictly positive")
    if not isinstance(albedo, AlbedoMaps):
        albedo = AlbedoMaps(values=albedo)
    if not isinstance(lighting, LightingSet):
        lighting = LightingSet(values=lighting)
    if z.values.shape[0] != domain.num_pixels or albedo.values.shape[1] != domain.num_pixels:
        raise ValueError("outputs do not share the given pixel domain")
    os.makedirs(out_dir, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise IOError(f"unwritable directory: {out_dir}")
    write_pfm(os.path.join(out_dir, "depth.pfm"), domain.to_grid(z.values.astype(np.float32)))
    for c in range(albedo.num_channels):
        write_pfm(
            os.path.join(out_dir, f"albedo_{c:02d}.pfm"),
            domain.to_grid(albedo.values[c].astype(np.float32)),
        )
    lighting.to_json(os.path.join(out_dir, "lighting.json"))
    verts = mesh_vertices(z.values, domain, intrinsics)
    faces = mesh_faces(domain)
    write_obj(os.path.join(out_dir, "mesh.obj"), verts, faces, colors=_albedo_colors(albedo.values))


def save_normals(path, normals_xyz, domain):
    """Write an (N, 3) normal field as a 3-channel PFM over the grid."""
    grid = domain.to_grid(np.asarray(normals_xyz, dtype=np.float32))
    write_pfm(path, grid)


def load_normals(path, domain):
    grid = read_pfm(path)
    if grid.ndim != 3 or grid.shape[2] != 3:
        raise ValueError("normal maps must be 3-channel PFM files")
    return domain.from_grid(grid.astype(np.float64))


def load_depth(path, domain, projection="perspective"):
    grid = read_pfm(path)
    if grid.ndim != 2:
        raise ValueError("depth maps must be grayscale PFM files")
    return DepthMap(projection=projection, values=domain.from_grid(grid.astype(np.float64)))
