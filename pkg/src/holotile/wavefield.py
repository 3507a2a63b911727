"""Core optical field representation and amplitude/phase algebra.

A scalar, single-polarization wave model: each color channel is handled as an
independent 2-D complex field carrying its own wavelength. Fields are
immutable after construction and all operations are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError

# HOLOEYE GAEA-2 class device constants used as defaults throughout.
DEFAULT_PITCH = 3.74e-6
DEFAULT_WAVELENGTHS = (680e-9, 520e-9, 450e-9)
DEFAULT_GRID = (2160, 3840)  # (height, width) in samples
DEFAULT_DISTANCE = 0.1


@dataclass(frozen=True)
class OpticalConfig:
    """Physical constants of the display system.

    Attributes
    ----------
    pitch : float
        Sample spacing in meters, isotropic.
    wavelengths : tuple of float
        One wavelength in meters per color channel.
    distance : float
        Target-to-SLM propagation distance in meters. May be negative
        (back-propagation) but must be finite.
    height, width : int
        Grid size in samples.
    """

    pitch: float = DEFAULT_PITCH
    wavelengths: tuple[float, ...] = DEFAULT_WAVELENGTHS
    distance: float = DEFAULT_DISTANCE
    height: int = DEFAULT_GRID[0]
    width: int = DEFAULT_GRID[1]

    def __post_init__(self):
        if not self.pitch > 0:
            raise DomainError(f"pitch must be positive, got {self.pitch}")
        if not self.wavelengths:
            raise DomainError("at least one wavelength is required")
        for w in self.wavelengths:
            if not w > 0:
                raise DomainError(f"wavelengths must be positive, got {w}")
        if not np.isfinite(self.distance):
            raise DomainError(f"distance must be finite, got {self.distance}")
        if self.height < 1 or self.width < 1:
            raise DimensionError(
                f"grid must be at least 1x1, got {self.height}x{self.width}"
            )


@dataclass(frozen=True)
class ComplexField:
    """2-D complex optical wavefield with physical metadata.

    ``data`` is a (height, width) complex array; amplitude is dimensionless.
    The array is marked read-only so a constructed field cannot be mutated.
    """

    data: np.ndarray
    pitch: float
    wavelength: float

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 2 or d.shape[0] < 1 or d.shape[1] < 1:
            raise DimensionError(f"field data must be 2-D, got shape {d.shape}")
        if not self.pitch > 0:
            raise DomainError(f"pitch must be positive, got {self.pitch}")
        if not self.wavelength > 0:
            raise DomainError(f"wavelength must be positive, got {self.wavelength}")
        d = np.array(d, dtype=complex, order="C")  # private copy
        if not np.all(np.isfinite(d.view(float))):
            raise DomainError("field contains non-finite samples")
        d.flags.writeable = False
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def from_amplitude_phase(
    amplitude: np.ndarray,
    phase: np.ndarray,
    cfg: OpticalConfig,
    channel: int = 0,
) -> ComplexField:
    """Build a field with samples ``amplitude * exp(1j * phase)``.

    Parameters
    ----------
    amplitude : ndarray
        Non-negative 2-D array.
    phase : ndarray
        2-D array of phases in radians, same shape as ``amplitude``.
    cfg : OpticalConfig
        Supplies pitch and the per-channel wavelength.
    channel : int
        Index into ``cfg.wavelengths``.
    """
    amplitude = np.asarray(amplitude, dtype=float)
    phase = np.asarray(phase, dtype=float)
    if amplitude.shape != phase.shape:
        raise DimensionError(
            f"amplitude shape {amplitude.shape} != phase shape {phase.shape}"
        )
    if np.any(amplitude < 0):
        raise DomainError("amplitude must be non-negative everywhere")
    data = amplitude * np.exp(1j * phase)
    return ComplexField(data, pitch=cfg.pitch, wavelength=cfg.wavelengths[channel])


def amplitude(f: ComplexField) -> np.ndarray:
    """Elementwise modulus of the field."""
    return np.abs(f.data)


def phase(f: ComplexField) -> np.ndarray:
    """Principal-value argument in (-pi, pi]; zero samples map to 0 by convention."""
    p = np.angle(f.data)
    # np.angle can return -pi for arguments with a negative-zero imaginary
    # part; fold onto the +pi branch so the range is exactly (-pi, pi].
    p[p == -np.pi] = np.pi
    p[f.data == 0] = 0.0
    return p


def wrap_phase(p: np.ndarray) -> np.ndarray:
    """Wrap arbitrary phases into the principal range (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(p, dtype=float), 2 * np.pi)
