"""Binary 8-bit PGM (P5) reading and writing."""
from pathlib import Path

import numpy as np


class PGMError(ValueError):
    pass


def encode_pgm(image):
    img = np.asarray(image)
    if img.ndim != 2:
        raise PGMError(f"expected a 2-D image, got shape {img.shape}")
    if img.dtype != np.uint8:
        if img.min(initial=0) < 0 or img.max(initial=0) > 255:
            raise PGMError("pixel values outside 0..255")
        img = img.astype(np.uint8)
    h, w = img.shape
    return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


def decode_pgm(data):
    """Parse P5 bytes into a (height, width) uint8 array."""
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < 4:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PGMError("truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    if tokens[0] != b"P5":
        raise PGMError(f"not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise PGMError("malformed PGM header") from exc
    if maxval != 255:
        raise PGMError(f"only 8-bit PGM supported (maxval {maxval})")
    body = data[pos:pos + w * h]
    if len(body) != w * h:
        raise PGMError(f"PGM body has {len(body)} bytes, expected {w * h}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()


def write_pgm(path, image):
    Path(path).write_bytes(encode_pgm(image))


def read_pgm(path):
    return decode_pgm(Path(path).read_bytes())


def to_luma(rgb):
    """Reduce an (H, W, 3) colour image to 8-bit grey as round((r + g + b) / 3)."""
    rgb = np.asarray(rgb, dtype=np.int32)
    # sum/3 never lands on .5, so integer rounding is unambiguous
    return ((rgb.sum(axis=-1) + 1) // 3).astype(np.uint8)
