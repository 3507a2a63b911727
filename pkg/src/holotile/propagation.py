"""Band-limited angular-spectrum propagation between target and SLM planes.

The transfer function is the exact free-space kernel
``H(fx, fy) = exp(j 2 pi d sqrt(1/lambda^2 - fx^2 - fy^2))`` evaluated on the
FFT frequency grid of the (optionally padded) aperture, zeroed for evanescent
components and outside the band limit ``f_lim = 1 / (lambda sqrt((2 d / S)^2 + 1))``
per axis, where S is the padded aperture extent. The limit keeps the sampled
kernel alias-free: frequencies above it would wrap around on the finite grid.

``propagate`` applies H through an FFT; ``dft_oracle`` evaluates the identical
operator by direct O(N^4) summation and exists purely to cross-check the FFT
path. ``propagate_adjoint`` applies the exact adjoint (conjugate kernel with
matching pad/crop), which is what reverse-mode gradients of any loss on the
propagated field require.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

import threading

from .errors import ConfigurationError, DimensionError, DomainError, GridTooLargeError
from .wavefield import ComplexField, OpticalConfig

# dft_oracle refuses padded grids above this edge length.
_ORACLE_MAX_EDGE = 128

# Test-only mutation hook: when set, apply_transfer perturbs one kernel bin so
# the FFT path disagrees with dft_oracle; used to prove the oracle can fail.
_inject_kernel_bug = False

_local = threading.local()


class count_buffer_bytes:
    """Context manager routing apply_transfer's buffer allocations to a sink.

    The sink receives one integer per call: total bytes of the transient
    complex buffers (pad, FFT, product, IFFT, crop) that call allocated. The
    memory ledger uses this for its propagation stage.
    """

    def __init__(self, sink):
        self._sink = sink

    def __enter__(self):
        self._prev = getattr(_local, "byte_sink", None)
        _local.byte_sink = self._sink
        return self

    def __exit__(self, *exc):
        _local.byte_sink = self._prev
        return False


@dataclass(frozen=True)
class TransferFunction:
    """Frequency-domain propagation kernel on a padded grid.

    ``values`` lie on the unshifted FFT grid (DC at [0, 0]); ``band_mask`` is
    True exactly where |values| = 1, i.e. propagating frequencies inside the
    band limit. ``base_height``/``base_width`` record the unpadded field size
    the kernel was built for.
    """

    values: np.ndarray
    band_mask: np.ndarray
    distance: float
    wavelength: float
    pitch: float
    base_height: int
    base_width: int
    pad_factor: int

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def build_transfer(
    cfg: OpticalConfig,
    distance: float | None = None,
    pad_factor: int = 2,
    channel: int = 0,
) -> TransferFunction:
    """Build the band-limited transfer function for one color channel.

    Parameters
    ----------
    cfg : OpticalConfig
        Grid size, pitch and wavelengths.
    distance : float, optional
        Propagation distance in meters; defaults to ``cfg.distance``.
        Negative distances propagate backwards.
    pad_factor : int
        1 for in-place (circular) propagation, 2 for linear-convolution
        padding that avoids wrap-around at the borders.
    channel : int
        Index into ``cfg.wavelengths``.
    """
    if pad_factor not in (1, 2):
        raise ConfigurationError(f"pad_factor must be 1 or 2, got {pad_factor}")
    if distance is None:
        distance = cfg.distance
    wavelength = cfg.wavelengths[channel]
    if not cfg.pitch > 0 or not wavelength > 0:
        raise DomainError("pitch and wavelength must be positive")

    hp, wp = cfg.height * pad_factor, cfg.width * pad_factor
    fy = np.fft.fftfreq(hp, d=cfg.pitch)
    fx = np.fft.fftfreq(wp, d=cfg.pitch)
    fyy, fxx = np.meshgrid(fy, fx, indexing="ij")

    inv_wl2 = 1.0 / wavelength**2
    arg = inv_wl2 - fxx**2 - fyy**2
    propagating = arg > 0.0

    # Per-axis band limit from the padded aperture extent.
    sy = hp * cfg.pitch
    sx = wp * cfg.pitch
    fy_lim = 1.0 / (wavelength * np.sqrt((2.0 * distance / sy) ** 2 + 1.0))
    fx_lim = 1.0 / (wavelength * np.sqrt((2.0 * distance / sx) ** 2 + 1.0))
    band = (np.abs(fyy) <= fy_lim) & (np.abs(fxx) <= fx_lim) & propagating

    values = np.zeros((hp, wp), dtype=complex)
    kz = np.sqrt(arg, where=propagating, out=np.zeros_like(arg))
    values[band] = np.exp(1j * 2.0 * np.pi * distance * kz[band])

    return TransferFunction(
        values=values,
        band_mask=band,
        distance=float(distance),
        wavelength=wavelength,
        pitch=cfg.pitch,
        base_height=cfg.height,
        base_width=cfg.width,
        pad_factor=pad_factor,
    )


def _pad_offsets(tf: TransferFunction) -> tuple[int, int]:
    return (tf.height - tf.base_height) // 2, (tf.width - tf.base_width) // 2


def _embed(u: np.ndarray, tf: TransferFunction) -> np.ndarray:
    if tf.pad_factor == 1:
        return u
    oy, ox = _pad_offsets(tf)
    out = np.zeros((tf.height, tf.width), dtype=complex)
    out[oy : oy + tf.base_height, ox : ox + tf.base_width] = u
    return out


def _crop(u: np.ndarray, tf: TransferFunction) -> np.ndarray:
    if tf.pad_factor == 1:
        return u
    oy, ox = _pad_offsets(tf)
    return u[oy : oy + tf.base_height, ox : ox + tf.base_width]


def apply_transfer(u: np.ndarray, tf: TransferFunction, adjoint: bool = False) -> np.ndarray:
    """Apply the kernel (or its adjoint) to a raw complex array.

    The adjoint applies conj(values) with identical pad/crop; because embed
    and crop are mutually adjoint and the FFT normalization cancels, this is
    the exact adjoint of the forward map under the standard inner product.
    """
    u = np.asarray(u, dtype=complex)
    if u.shape != (tf.base_height, tf.base_width):
        raise ConfigurationError(
            f"field shape {u.shape} does not match transfer grid "
            f"({tf.base_height}, {tf.base_width})"
        )
    kernel = np.conj(tf.values) if adjoint else tf.values
    if _inject_kernel_bug:
        kernel = kernel.copy()
        kernel[0, 0] *= 1.0 + 1e-3
    spectrum = np.fft.fft2(_embed(u, tf))
    out = _crop(np.fft.ifft2(spectrum * kernel), tf)
    sink = getattr(_local, "byte_sink", None)
    if sink is not None:
        # pad + spectrum + product + ifft at padded size, plus the crop copy
        itemsize = 16
        sink(4 * tf.height * tf.width * itemsize + out.shape[0] * out.shape[1] * itemsize)
    return out


def _check_metadata(field: ComplexField, tf: TransferFunction) -> None:
    if (field.height, field.width) != (tf.base_height, tf.base_width):
        raise ConfigurationError(
            f"field grid {field.height}x{field.width} does not match transfer "
            f"grid {tf.base_height}x{tf.base_width}"
        )
    if field.pitch != tf.pitch or field.wavelength != tf.wavelength:
        raise ConfigurationError(
            "field pitch/wavelength do not match the transfer function"
        )


def propagate(field: ComplexField, tf: TransferFunction) -> ComplexField:
    """Propagate a field: crop(IFFT(FFT(pad(field)) * H))."""
    _check_metadata(field, tf)
    out = apply_transfer(field.data, tf)
    return ComplexField(out, pitch=field.pitch, wavelength=field.wavelength)


def propagate_adjoint(grad_out: ComplexField, tf: TransferFunction) -> ComplexField:
    """Adjoint of :func:`propagate`: satisfies <Ax, y> = <x, A*y> exactly."""
    _check_metadata(grad_out, tf)
    out = apply_transfer(grad_out.data, tf, adjoint=True)
    return ComplexField(out, pitch=grad_out.pitch, wavelength=grad_out.wavelength)


def _dft2(u: np.ndarray, sign: float) -> np.ndarray:
    """Direct 2-D DFT by per-output-pixel summation (no FFT anywhere)."""
    m, n = u.shape
    iy = np.arange(m)
    ix = np.arange(n)
    out = np.empty((m, n), dtype=complex)
    for a in range(m):
        row_kernel = np.exp(sign * 2j * np.pi * a * iy / m)[:, None]
        for b in range(n):
            col_kernel = np.exp(sign * 2j * np.pi * b * ix / n)[None, :]
            out[a, b] = np.sum(u * row_kernel * col_kernel)
    return out


def dft_oracle(field: ComplexField, tf: TransferFunction) -> ComplexField:
    """Brute-force evaluation of the identical propagation operator.

    Mathematically equal to :func:`propagate` but computed by direct O(N^4)
    DFT summation; refuses padded grids larger than 128x128.
    """
    _check_metadata(field, tf)
    if max(tf.height, tf.width) > _ORACLE_MAX_EDGE:
        raise GridTooLargeError(
            f"oracle refuses padded grids above {_ORACLE_MAX_EDGE} "
            f"(got {tf.height}x{tf.width})"
        )
    spectrum = _dft2(_embed(field.data, tf), sign=-1.0)
    back = _dft2(spectrum * tf.values, sign=+1.0) / (tf.height * tf.width)
    return ComplexField(_crop(back, tf), pitch=field.pitch, wavelength=field.wavelength)


def full_band_distance(cfg: OpticalConfig, pad_factor: int = 1, channel: int = 0) -> float:
    """Largest distance whose band limit still covers the whole Nyquist box.

    Useful for choosing desk-scale test configurations where propagation must
    stay unitary on the sampled grid.
    """
    wavelength = cfg.wavelengths[channel]
    # Need 1/(wl * sqrt((2d/S)^2+1)) >= 1/(2 pitch) on the shorter axis.
    ratio = 2.0 * cfg.pitch / wavelength
    if ratio <= 1.0:
        raise DomainError("grid cannot be full-band at any distance")
    s_min = min(cfg.height, cfg.width) * pad_factor * cfg.pitch
    return float(np.sqrt(ratio**2 - 1.0) * s_min / 2.0)
