"""Image writers/readers: 8-bit PNG for viewing, float32 PFM for numeric comparison."""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import FormatError


def to_uint8(image: np.ndarray) -> np.ndarray:
    return (np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_png(path: str, image: np.ndarray) -> None:
    """image: (H, W, 3) float in [0, 1] or uint8."""
    arr = image if image.dtype == np.uint8 else to_uint8(image)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def encode_png(image: np.ndarray) -> bytes:
    import io

    arr = image if image.dtype == np.uint8 else to_uint8(image)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def load_png(path: str) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)


def save_pfm(path: str, image: np.ndarray) -> None:
    """Little-endian PFM; rows stored bottom-up per the format."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        image = image[:, :, None]
    header = b"PF\n" if image.shape[2] == 3 else b"Pf\n"
    if image.shape[2] not in (1, 3):
        raise FormatError(f"PFM supports 1 or 3 channels, got {image.shape[2]}")
    with open(path, "wb") as f:
        f.write(header)
        f.write(f"{image.shape[1]} {image.shape[0]}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(image[::-1], dtype="<f4").tobytes())


def load_pfm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"PF", b"Pf"):
            raise FormatError(f"not a PFM file (header {kind!r})")
        w, h = (int(x) for x in f.readline().split())
        scale = float(f.readline())
        count = w * h * (3 if kind == b"PF" else 1)
        data = np.frombuffer(f.read(count * 4), dtype="<f4" if scale < 0 else ">f4")
        if data.size != count:
            raise FormatError("PFM truncated")
    img = data.reshape(h, w, -1)[::-1]
    return np.ascontiguousarray(img if kind == b"PF" else img[:, :, 0])
