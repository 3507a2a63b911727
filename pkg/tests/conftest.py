"""Shared fixtures: desk-scale optical configs and deterministic images.

Distances are chosen inside the band-limit plateau of each grid (see
propagation.full_band_distance) so round-trip and energy identities hold
to within float64 accuracy.
"""
from __future__ import annotations

import numpy as np
import pytest

from holotile.optimize import PipelineConfig
from holotile.wavefield import OpticalConfig


def make_optical(n: int, distance: float = 1.5e-3) -> OpticalConfig:
    return OpticalConfig(height=n, width=n, distance=distance)


def synth_image(seed: int, n: int, m: int | None = None) -> np.ndarray:
    """Deterministic smooth-plus-texture test image in [0, 1].

    Gradient base, a few Gaussian blobs, and a square-wave grating — enough
    structure for PSNR/SSIM and training to be non-degenerate, with no
    binary assets checked in.
    """
    m = n if m is None else m
    rng = np.random.default_rng([seed, n, m])
    y, x = np.mgrid[0:n, 0:m].astype(float)
    y /= max(n - 1, 1)
    x /= max(m - 1, 1)
    img = 0.25 + 0.3 * (0.6 * x + 0.4 * y)
    for _ in range(6):
        cy, cx = rng.uniform(0.15, 0.85, 2)
        s = rng.uniform(0.05, 0.22)
        a = rng.uniform(-0.35, 0.5)
        img += a * np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2 * s * s))
    img += 0.08 * np.sign(np.sin(2 * np.pi * (3.5 * x + 1.5 * y)))
    lo, hi = img.min(), img.max()
    return (img - lo) / (hi - lo)


def random_field_arrays(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def cfg64() -> OpticalConfig:
    return make_optical(64)


@pytest.fixture
def cfg16() -> OpticalConfig:
    return make_optical(16, distance=0.5e-3)


def small_pipeline(n: int = 16, scale: int = 2, **kw) -> PipelineConfig:
    defaults = dict(
        optical=make_optical(n, distance=0.5e-3),
        scale=scale,
        lfmn_features=4,
        lfmn_blocks=1,
        backbone_width=4,
        pad_factor=2,
    )
    defaults.update(kw)
    return PipelineConfig(**defaults)


# The 8-image desk training set: distinct 128x128 synthetic scenes.
def fixture_dataset(n: int = 128, count: int = 8) -> list[np.ndarray]:
    return [synth_image(s, n) for s in range(count)]
