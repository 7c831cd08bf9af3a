"""Binary PPM (P6) image input/output and box annotation.

PPM is the only supported format: dependency-free and byte-exact, which
keeps the predict path reproducible down to the bit. Pixels are kept as
(h, w, 3) uint8 in RGB order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class Image:
    pixels: np.ndarray  # (h, w, 3) uint8 RGB

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3:
            raise InputError(f"image must be (h, w, 3), got {p.shape}")
        if p.shape[0] == 0 or p.shape[1] == 0:
            raise InputError("image has zero extent")
        if p.dtype != np.uint8:
            raise InputError(f"image must be uint8, got {p.dtype}")

    @property
    def h(self) -> int:
        return self.pixels.shape[0]

    @property
    def w(self) -> int:
        return self.pixels.shape[1]


def _read_header_token(data: bytes, pos: int) -> Tuple[bytes, int]:
    # skip whitespace and '#' comments, then take one token
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and data[pos : pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise InputError("truncated PPM header")
    return data[start:pos], pos


def read_ppm(path: str) -> Image:
    """Parse a binary (P6) PPM file with maxval 255."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise InputError(f"cannot read image {path}: {e.strerror}") from e
    magic, pos = _read_header_token(data, 0)
    if magic != b"P6":
        raise InputError(f"{path}: not a binary PPM (P6) file")
    fields = []
    for _ in range(3):
        tok, pos = _read_header_token(data, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise InputError(f"{path}: bad PPM header token {tok!r}") from None
    w, h, maxval = fields
    if w <= 0 or h <= 0:
        raise InputError(f"{path}: zero-sized image {w}x{h}")
    if maxval != 255:
        raise InputError(f"{path}: only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    body = data[pos : pos + h * w * 3]
    if len(body) != h * w * 3:
        raise InputError(f"{path}: pixel data truncated")
    return Image(np.frombuffer(body, np.uint8).reshape(h, w, 3).copy())


def write_ppm(image: Image, path: str) -> None:
    try:
        with open(path, "wb") as f:
            f.write(b"P6\n%d %d\n255\n" % (image.w, image.h))
            f.write(np.ascontiguousarray(image.pixels).tobytes())
    except OSError as e:
        raise InputError(f"cannot write image {path}: {e.strerror}") from e


_PALETTE = (
    (230, 57, 70),
    (29, 53, 87),
    (42, 157, 143),
    (233, 196, 106),
    (244, 162, 97),
    (38, 70, 83),
    (143, 45, 86),
    (0, 109, 119),
    (131, 197, 190),
    (255, 183, 3),
)

BOX_THICKNESS = 2


def annotate(image: Image, detections: Sequence) -> Image:
    """Copy of the image with each detection outlined by a 2-px rectangle."""
    canvas = image.pixels.copy()
    h, w = canvas.shape[:2]

    def clamp(v, hi):
        return max(0, min(int(round(v)), hi))

    for d in detections:
        x1, y1, x2, y2 = d.box
        x1, x2 = clamp(x1, w - 1), clamp(x2, w - 1)
        y1, y2 = clamp(y1, h - 1), clamp(y2, h - 1)
        color = np.array(_PALETTE[d.class_id % len(_PALETTE)], np.uint8)
        t = BOX_THICKNESS
        canvas[y1 : min(y1 + t, h), x1 : x2 + 1] = color
        canvas[max(y2 - t + 1, 0) : y2 + 1, x1 : x2 + 1] = color
        canvas[y1 : y2 + 1, x1 : min(x1 + t, w)] = color
        canvas[y1 : y2 + 1, max(x2 - t + 1, 0) : x2 + 1] = color
    return Image(canvas)
