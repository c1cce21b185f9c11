"""Portable float map (PFM) reading and writing.

Grayscale maps use the ``Pf`` header, three-channel maps ``PF``.  Scanlines
are stored bottom-to-top per the format convention; a negative scale marks
little-endian data.
"""

import numpy as np


def write_pfm(path, data, little_endian=True):
    """Write a float32 array of shape (H, W) or (H, W, 3) to ``path``."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    else:
        raise ValueError(f"PFM stores (H, W) or (H, W, 3) arrays, got shape {data.shape}")
    height, width = data.shape[:2]
    scale = -1.0 if little_endian else 1.0
    body = np.flipud(data).astype("<f4" if little_endian else ">f4")
    with open(path, "wb") as fh:
        fh.write(header + b"\n")
        fh.write(f"{width} {height}\n".encode("ascii"))
        fh.write(f"{scale:.1f}\n".encode("ascii"))
        fh.write(body.tobytes())


def read_pfm(path):
    """Read a PFM file into a float32 array of shape (H, W) or (H, W, 3)."""
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise ValueError(f"not a PFM file: bad header {header!r}")
        width, height = (int(tok) for tok in fh.readline().split())
        scale = float(fh.readline())
        if scale == 0.0:
            raise ValueError("PFM scale must be nonzero")
        dtype = "<f4" if scale < 0 else ">f4"
        count = width * height * channels
        raw = fh.read(count * 4)
        if len(raw) != count * 4:
            raise ValueError("truncated PFM data")
        data = np.frombuffer(raw, dtype=dtype, count=count)
    shape = (height, width, 3) if channels == 3 else (height, width)
    data = np.flipud(data.reshape(shape)).astype(np.float32)
    if abs(scale) != 1.0:
        data = data * np.float32(abs(scale))
    return data
