"""Synthetic nested-shape images: background, disk, ring around it, offset blob.

The layout mimics a short-axis cardiac slice: a bright disk (class 1) wrapped
in a darker ring (class 2), and a second bright region (class 3) beside the
ring. A fourth-class-free variant (``m = 3``) drops the blob, ``m = 2`` keeps
only the disk.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Image, LabelMap, ScribbleSegError, make_rng

DEFAULT_INTENSITIES = (0.0, 1.0, 0.45, 0.75)


@dataclass(frozen=True)
class SynthSpec:
    side: int = 64
    m: int = 4
    noise: float = 0.2
    count: int = 15
    seed: int = 0
    channels: int = 1
    intensities: tuple = DEFAULT_INTENSITIES
    texture: float = 0.1  # amplitude of the smooth background texture

    def __post_init__(self):
        if self.side < 32:
            raise ScribbleSegError("side must be >= 32")
        if not 2 <= self.m <= 4:
            raise ScribbleSegError("synthetic images support 2 to 4 classes")
        if len(self.intensities) < self.m:
            raise ScribbleSegError("need one base intensity per class")
        if self.noise < 0 or self.count < 1 or self.channels < 1:
            raise ScribbleSegError("invalid noise, count or channels")

    # geometric ranges as fractions of the side; area_bounds relies on them
    @property
    def disk_radius(self) -> tuple:
        return (0.09 * self.side, 0.14 * self.side)

    @property
    def ring_width(self) -> tuple:
        return (0.05 * self.side, 0.08 * self.side)

    @property
    def blob_radii(self) -> tuple:
        return (0.08 * self.side, 0.13 * self.side)


def _layout(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    s = spec.side
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    cy = s / 2 + rng.uniform(-s / 16, s / 16)
    cx = s / 2 + rng.uniform(-s / 16, s / 16) + (s / 12 if spec.m >= 4 else 0.0)
    r_disk = rng.uniform(*spec.disk_radius)
    r_ring = r_disk + rng.uniform(*spec.ring_width)
    gt = np.zeros((s, s), dtype=np.uint8)
    if spec.m >= 4:
        ry, rx = rng.uniform(*spec.blob_radii), rng.uniform(*spec.blob_radii)
        by = cy + rng.uniform(-s / 16, s / 16)
        bx = cx - r_ring - 0.6 * rx
        gt[((yy - by) / ry) ** 2 + ((xx - bx) / rx) ** 2 <= 1.0] = 3
    d = np.hypot(yy - cy, xx - cx)
    if spec.m >= 3:
        gt[d <= r_ring] = 2
    gt[d <= r_disk] = 1
    return gt


def _texture(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    s = spec.side
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64) / s
    t = np.zeros((s, s))
    for _ in range(3):
        fy, fx = rng.uniform(0.5, 2.0, size=2)
        ph = rng.uniform(0, 2 * np.pi, size=2)
        t += np.sin(2 * np.pi * fy * yy + ph[0]) * np.sin(2 * np.pi * fx * xx + ph[1])
    return spec.texture * t / 3.0


def synth_image(spec: SynthSpec, rng: np.random.Generator) -> tuple[Image, LabelMap]:
    gt = _layout(spec, rng)
    base = np.asarray(spec.intensities, dtype=np.float64)[gt]
    if spec.texture > 0:
        base = base + np.where(gt == 0, _texture(spec, rng), 0.0)
    img = np.repeat(base[..., None], spec.channels, axis=2)
    if spec.noise > 0:
        img = img + rng.normal(0.0, spec.noise, size=img.shape)
    return Image(img), LabelMap(gt)


def synth_dataset(spec: SynthSpec) -> list[tuple[Image, LabelMap]]:
    rng = make_rng(spec.seed)
    return [synth_image(spec, rng) for _ in range(spec.count)]


def area_bounds(spec: SynthSpec) -> dict:
    """Loose per-class pixel-count bounds implied by the geometric ranges."""
    (r0, r1), (w0, w1), (b0, b1) = spec.disk_radius, spec.ring_width, spec.blob_radii
    slack = 2 * np.pi  # rasterization of a circle of radius r is within ~2*pi*r of pi r^2
    out = {1: (np.pi * r0 ** 2 - slack * r0, np.pi * r1 ** 2 + slack * r1)}
    if spec.m >= 3:
        lo = np.pi * ((r0 + w0) ** 2 - r0 ** 2) - slack * (2 * r0 + w0)
        hi = np.pi * ((r1 + w1) ** 2 - r1 ** 2) + slack * (2 * r1 + w1)
        out[2] = (lo, hi)
    if spec.m >= 4:
        # the blob is partly covered by the ring, never by more than half
        out[3] = (0.5 * np.pi * b0 * b0 - slack * b1, np.pi * b1 * b1 + slack * b1)
    return out
