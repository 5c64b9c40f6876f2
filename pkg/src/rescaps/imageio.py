"""Binary PPM (P6) reading and writing; PNG through Pillow.

Images are float64 arrays of shape (H, W, 3) with channels in [0, 1].
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

IMAGE_SUFFIXES = (".ppm", ".png")


class ImageFormatError(ValueError):
    pass


def _tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping # comments."""
    out, i, n = [], 0, len(buf)
    while len(out) < count:
        while i < n and buf[i:i + 1].isspace():
            i += 1
        if i < n and buf[i:i + 1] == b"#":
            while i < n and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not buf[i:i + 1].isspace() and buf[i:i + 1] != b"#":
            i += 1
        if start == i:
            raise ImageFormatError("truncated PPM header")
        out.append(buf[start:i])
    # exactly one whitespace byte separates the header from the raster
    return out, i + 1


def decode_ppm(buf: bytes) -> np.ndarray:
    toks, offset = _tokens(buf, 4)
    if toks[0] != b"P6":
        raise ImageFormatError(f"not a binary PPM (magic {toks[0]!r})")
    try:
        width, height, maxval = (int(t) for t in toks[1:])
    except ValueError as exc:
        raise ImageFormatError(f"bad PPM header values {toks[1:]}") from exc
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ImageFormatError(f"bad PPM dimensions {width}x{height} maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    need = width * height * 3 * dtype.itemsize
    raster = buf[offset:offset + need]
    if len(raster) != need:
        raise ImageFormatError(f"PPM raster truncated: {len(raster)} of {need} bytes")
    arr = np.frombuffer(raster, dtype=dtype).reshape(height, width, 3)
    return arr.astype(np.float64) / maxval


def encode_ppm(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageFormatError(f"expected an (H, W, 3) image, got shape {img.shape}")
    h, w, _ = img.shape
    raster = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + raster.tobytes()


def read_image(path) -> np.ndarray:
    path = Path(path)
    try:
        if path.suffix.lower() == ".png":
            from PIL import Image

            with Image.open(path) as im:
                return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        return decode_ppm(path.read_bytes())
    except OSError as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc


def write_image(path, img: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        raster = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
        Image.fromarray(raster, "RGB").save(path)
        return
    path.write_bytes(encode_ppm(img))
