"""Binary PGM/PPM image files.

Masks and alpha maps are written as P5 (maxval 255, foreground = 255),
color renders as P6.  Float inputs are expected in [0, 1] and are scaled
and rounded; readers return float arrays back in [0, 1].
"""

from __future__ import annotations

import numpy as np


def _to_u8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, img) -> None:
    """Write a single-channel image in [0, 1] as binary PGM (P5)."""
    data = _to_u8(img)
    if data.ndim != 2:
        raise ValueError(f"PGM wants a 2-D array, got shape {data.shape}")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def write_ppm(path, img) -> None:
    """Write an H×W×3 color image in [0, 1] as binary PPM (P6)."""
    data = _to_u8(img)
    if data.ndim != 3 or data.shape[2] != 3:
        raise ValueError(f"PPM wants an H×W×3 array, got shape {data.shape}")
    h, w, _ = data.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def _read_header(f, magic: bytes):
    if f.read(2) != magic:
        raise ValueError(f"not a {magic.decode()} file")
    fields = []
    while len(fields) < 3:
        line = f.readline()
        if not line:
            raise ValueError("truncated header")
        body = line.split(b"#", 1)[0]
        fields.extend(int(tok) for tok in body.split())
    w, h, maxval = fields[:3]
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    return w, h


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM file into a float array in [0, 1]."""
    with open(path, "rb") as f:
        w, h = _read_header(f, b"P5")
        data = np.frombuffer(f.read(w * h), dtype=np.uint8)
    return data.reshape(h, w).astype(np.float64) / 255.0


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM file into an H×W×3 float array in [0, 1]."""
    with open(path, "rb") as f:
        w, h = _read_header(f, b"P6")
        data = np.frombuffer(f.read(w * h * 3), dtype=np.uint8)
    return data.reshape(h, w, 3).astype(np.float64) / 255.0
