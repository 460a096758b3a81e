"""Image decoding, style-image encoding, and bit-exact PPM file I/O.

The decoder is a fixed seeded linear map from feature channels to RGB
followed by a logistic squash and round-half-up 8-bit quantization. The
style encoder inverts it analytically: pool the image to each step's
resolution, apply the logit, and project back through the decoder
matrix's pseudo-inverse. Files use binary PPM (P6, maxval 255), which
round-trips bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import Model
from .numerics import FeatureMap, average_pool, matmul, resample_bilinear

LOGIT_CLAMP = 1.0 / 512.0


class FormatError(ValueError):
    """Malformed, truncated, or unsupported image file."""


@dataclass(frozen=True, eq=False)
class Image:
    """H x W x 3 uint8 pixel grid."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.ascontiguousarray(self.pixels)
        if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
            raise ValueError("pixels must be (H, W, 3) uint8")
        object.__setattr__(self, "pixels", p)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def decode(f: FeatureMap, model: Model) -> Image:
    """Project accumulated features to RGB and quantize to 8 bits.

    Intensity = floor(sigmoid(feature . dec) * 255 + 0.5), i.e. values
    round half up, so an all-zero map decodes to uniform 128.
    """
    fh, fw = model.cfg.schedule.final_hw
    if f.channels != model.cfg.c:
        raise ValueError(f"expected {model.cfg.c} channels, got {f.channels}")
    if (f.height, f.width) != (fh, fw):
        raise ValueError(f"expected final resolution {fh}x{fw}, got {f.height}x{f.width}")
    sites = np.ascontiguousarray(f.data.transpose(1, 2, 0).reshape(fh * fw, f.channels))
    rgb_logits = matmul(sites, model.dec).astype(np.float64)
    squashed = 1.0 / (1.0 + np.exp(-rgb_logits))
    pixels = np.floor(squashed * 255.0 + 0.5).astype(np.uint8)
    return Image(pixels.reshape(fh, fw, 3))


def encode_style(img: Image, model: Model) -> list[FeatureMap]:
    """Per-step feature maps carrying the image's pooled color statistics.

    For each schedule step: pool normalized RGB to the step resolution,
    clamp away from 0/1, apply the logit, and project 3 -> c channels
    through the decoder's pseudo-inverse.
    """
    fh, fw = model.cfg.schedule.final_hw
    if (img.height, img.width) != (fh, fw):
        raise ValueError(
            f"style image must be {fh}x{fw} (resample first), got {img.height}x{img.width}"
        )
    channels_first = img.pixels.transpose(2, 0, 1).astype(np.float64) / 255.0
    maps = []
    for h, w in model.cfg.schedule.steps:
        pooled = average_pool(channels_first, h, w)
        clamped = np.clip(pooled.astype(np.float64), LOGIT_CLAMP, 1.0 - LOGIT_CLAMP)
        z = np.log(clamped / (1.0 - clamped)).astype(np.float32)
        sites = np.ascontiguousarray(z.transpose(1, 2, 0).reshape(h * w, 3))
        feats = matmul(sites, model.dec_pinv)
        maps.append(FeatureMap(feats.reshape(h, w, model.cfg.c).transpose(2, 0, 1)))
    return maps


def resample_image(img: Image, h: int, w: int) -> Image:
    """Bilinearly resample to any size, rounding half up to 8 bits."""
    if h < 1 or w < 1:
        raise ValueError("target size must be positive")
    if (h, w) == (img.height, img.width):
        return Image(img.pixels.copy())
    data = img.pixels.transpose(2, 0, 1).astype(np.float32)
    out = resample_bilinear(data, h, w).astype(np.float64)
    pixels = np.floor(np.clip(out, 0.0, 255.0) + 0.5).astype(np.uint8)
    return Image(pixels.transpose(1, 2, 0))


def write_ppm(img: Image, path) -> None:
    """Write binary PPM: b"P6\\n<w> <h>\\n255\\n" followed by raw RGB rows."""
    header = b"P6\n%d %d\n255\n" % (img.width, img.height)
    Path(path).write_bytes(header + np.ascontiguousarray(img.pixels).tobytes())


def read_ppm(path) -> Image:
    """Read binary PPM (P6, maxval 255 only); bit-exact with write_ppm."""
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P6"):
        raise FormatError("not a binary PPM (P6) file")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("malformed PPM header")
        try:
            fields.append(int(raw[start:pos]))
        except ValueError as exc:
            raise FormatError("malformed PPM header") from exc
    if pos >= len(raw):
        raise FormatError("missing payload")
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError("bad image dimensions")
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval} (only 255)")
    payload = raw[pos:]
    expected = width * height * 3
    if len(payload) < expected:
        raise FormatError("truncated payload")
    if len(payload) > expected:
        raise FormatError("trailing data after payload")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return Image(pixels.copy())
