"""Binary PPM (P6) and PFM image files."""

from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = ["to_bytes", "write_ppm", "read_ppm", "write_pfm", "read_pfm", "read_image"]


def to_bytes(img) -> np.ndarray:
    """Linear [0, 1] to 8 bits, rounding half up."""
    x = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(x * 255.0 + 0.5).astype(np.uint8)


def _rgb(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    return img[..., :3]


def write_ppm(path, img) -> None:
    data = to_bytes(_rgb(img))
    h, w, _ = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _tokens(buf: bytes, count: int):
    out, pos = [], 0
    while len(out) < count:
        while buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        end = pos
        while not buf[end:end + 1].isspace():
            end += 1
        out.append(buf[pos:end])
        pos = end
    return out, pos + 1


def read_ppm(path) -> np.ndarray:
    """(H, W, 3) float image in [0, 1]."""
    buf = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _tokens(buf, 4)
    if magic != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h * 3, offset=pos)
    return data.reshape(h, w, 3) / 255.0


def write_pfm(path, img) -> None:
    """Little-endian float32 PFM; rows stored bottom to top."""
    img = np.asarray(img, dtype=np.float64)
    color = img.ndim == 3
    data = img[..., :3] if color else img
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"{'PF' if color else 'Pf'}\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(data[::-1], dtype="<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    (magic, w, h, scale), pos = _tokens(buf, 4)
    if magic not in (b"PF", b"Pf"):
        raise ValueError(f"{path}: not a PFM file")
    w, h, scale = int(w), int(h), float(scale)
    ch = 3 if magic == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(buf, dtype=dtype, count=w * h * ch, offset=pos).astype(np.float64)
    data = data.reshape((h, w, 3) if ch == 3 else (h, w))
    return data[::-1].copy()


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"P6":
        return read_ppm(path)
    if magic in (b"PF", b"Pf"):
        return read_pfm(path)
    raise ValueError(f"{path}: unsupported image format")
