"""Image files: 8-bit PNG/PGM through Pillow, single-channel PFM by hand."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

MASK_THRESHOLD = 128
IMAGE_SUFFIXES = (".png", ".pgm", ".ppm", ".jpg", ".jpeg", ".bmp")


class ImageReadError(ValueError):
    pass


def _open(path) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
    except (OSError, ValueError) as exc:
        raise ImageReadError(f"{path}: cannot read image ({exc})") from exc
    return img


def read_gray(path) -> np.ndarray:
    """8-bit grayscale as float64 in [0, 1]."""
    return np.asarray(_open(path).convert("L"), dtype=np.float64) / 255.0


def read_rgb(path) -> np.ndarray:
    """``(H, W, 3)`` float64 in [0, 1]; grayscale files are replicated."""
    return np.asarray(_open(path).convert("RGB"), dtype=np.float64) / 255.0


def read_mask(path, threshold: int = MASK_THRESHOLD) -> np.ndarray:
    """Binary mask: 8-bit values ``>= threshold`` are foreground."""
    return np.asarray(_open(path).convert("L")) >= threshold


def to_uint8(arr: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, arr: np.ndarray) -> None:
    """Write a [0, 1] map (``(H, W)``, ``(H, W, 1)`` or ``(H, W, 3)``) as 8-bit PNG."""
    a = np.asarray(arr)
    if a.ndim == 3 and a.shape[-1] == 1:
        a = a[..., 0]
    Image.fromarray(to_uint8(a)).save(path, format="PNG")


def resize(arr: np.ndarray, size: int, kind: str = "image") -> np.ndarray:
    """Square resize: bilinear for images, nearest for masks (keeps them binary)."""
    a = np.asarray(arr)
    if a.shape[:2] == (size, size):
        return a.copy()
    if kind == "mask":
        img = Image.fromarray(a.astype(np.uint8) * 255)
        return np.asarray(img.resize((size, size), Image.NEAREST)) >= MASK_THRESHOLD
    if kind != "image":
        raise ValueError(f"resize kind must be 'image' or 'mask', got {kind!r}")
    planes = a[..., None] if a.ndim == 2 else a
    out = np.stack(
        [np.asarray(Image.fromarray(planes[..., i].astype(np.float32), mode="F").resize((size, size), Image.BILINEAR)) for i in range(planes.shape[-1])],
        axis=-1,
    ).astype(np.float64)
    return out[..., 0] if a.ndim == 2 else out


# -- PFM -------------------------------------------------------------------------

_PFM_HEADER = re.compile(rb"^(PF|Pf)\s+(\d+)\s+(\d+)\s+(\S+)\s")


def write_pfm(path, arr: np.ndarray) -> None:
    """Single-channel little-endian PFM (rows stored bottom to top)."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 3 and a.shape[-1] == 1:
        a = a[..., 0]
    if a.ndim != 2:
        raise ValueError(f"PFM writer takes a 2-D map, got shape {a.shape}")
    H, W = a.shape
    body = np.ascontiguousarray(a[::-1].astype("<f4")).tobytes()
    Path(path).write_bytes(f"Pf\n{W} {H}\n-1.0\n".encode("ascii") + body)


def read_pfm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    m = _PFM_HEADER.match(buf)
    if not m:
        raise ImageReadError(f"{path}: not a PFM file")
    color = m.group(1) == b"PF"
    W, H = int(m.group(2)), int(m.group(3))
    scale = float(m.group(4))
    dtype = "<f4" if scale < 0 else ">f4"
    ch = 3 if color else 1
    data = np.frombuffer(buf, dtype=dtype, count=W * H * ch, offset=m.end())
    arr = data.reshape(H, W, ch)[::-1].astype(np.float64)
    return arr if color else arr[..., 0]


def list_images(directory) -> dict[str, Path]:
    """Map file stem to path for every image file in ``directory``."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"{d}: not a directory")
    out: dict[str, Path] = {}
    for p in sorted(d.iterdir()):
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES:
            if p.stem in out:
                raise ValueError(f"{d}: two images share the stem {p.stem!r}")
            out[p.stem] = p
    return out
