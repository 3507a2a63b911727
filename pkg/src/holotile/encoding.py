"""Non-learned phase-only encoding (double-phase) and SLM quantization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError
from .wavefield import ComplexField, wrap_phase


@dataclass(frozen=True)
class PhaseMap:
    """A 2-D phase pattern in radians, principal range (-pi, pi]."""

    phase: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.phase, dtype=float)
        if p.ndim != 2:
            raise DimensionError(f"phase map must be 2-D, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise DomainError("phase map contains non-finite values")
        if p.min() <= -np.pi or p.max() > np.pi:
            raise DomainError("phase values must lie in (-pi, pi]")
        object.__setattr__(self, "phase", np.array(p, dtype=float, order="C"))
        self.phase.flags.writeable = False

    @property
    def height(self) -> int:
        return self.phase.shape[0]

    @property
    def width(self) -> int:
        return self.phase.shape[1]

    def to_uint8(self) -> np.ndarray:
        """8-bit SLM view: (-pi, pi] -> {0..255}, level 0 adjacent to -pi."""
        return quantize_phase(self, 256).astype(np.uint8)


def as_phase_map(values: np.ndarray) -> PhaseMap:
    """Wrap arbitrary radian values into a principal-range PhaseMap."""
    return PhaseMap(wrap_phase(np.asarray(values, dtype=float)))


def dpac_encode(field: ComplexField, normalize: bool = True) -> PhaseMap:
    """Double-phase encoding of a complex field into a single phase map.

    Each sample a*exp(j phi) with a <= 1 becomes two phases phi +/- arccos(a)
    laid out in a checkerboard: cells where (row + col) is even carry
    phi + arccos(a), odd cells carry phi - arccos(a). Averaging a
    checkerboard pair of unit phasors recovers the sample exactly:
    (e^{j(phi+t)} + e^{j(phi-t)}) / 2 = cos(t) e^{j phi} = a e^{j phi}.

    With ``normalize`` the amplitude is divided by its global maximum first;
    otherwise amplitudes above 1 are a domain error.
    """
    a = np.abs(field.data)
    if normalize:
        peak = a.max()
        if peak > 0:
            a = a / peak
    if a.max() > 1.0 + 1e-12:
        raise DomainError(f"amplitude must be <= 1 after normalization, got {a.max()}")
    a = np.clip(a, 0.0, 1.0)
    phi = np.angle(field.data)
    theta = np.arccos(a)
    rows, cols = np.indices(a.shape)
    even = (rows + cols) % 2 == 0
    out = np.where(even, phi + theta, phi - theta)
    return as_phase_map(out)


def quantize_phase(pm: PhaseMap, levels: int = 256) -> np.ndarray:
    """Uniformly quantize (-pi, pi] into integer levels {0 .. levels-1}.

    Phases just above -pi map to level 0 and +pi maps to the top level.
    """
    if not 2 <= levels <= 65536:
        raise DomainError(f"levels must be in [2, 65536], got {levels}")
    t = (pm.phase + np.pi) / (2.0 * np.pi)  # in (0, 1]
    q = np.ceil(t * levels).astype(np.int64) - 1
    return np.clip(q, 0, levels - 1)


def dequantize_phase(q: np.ndarray, levels: int = 256) -> PhaseMap:
    """Map quantization levels back to their bin-center phases."""
    if not 2 <= levels <= 65536:
        raise DomainError(f"levels must be in [2, 65536], got {levels}")
    q = np.asarray(q)
    if q.min() < 0 or q.max() > levels - 1:
        raise DomainError("quantized values out of range for the level count")
    phase = -np.pi + (q.astype(float) + 0.5) * (2.0 * np.pi / levels)
    return PhaseMap(phase)
