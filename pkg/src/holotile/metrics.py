"""Image quality metrics, wall-clock timing, and the per-stage memory ledger."""

from __future__ import annotations

import math
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, DimensionError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give +inf."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Single-scale SSIM, Gaussian 11x11 window (sigma 1.5), valid positions only.

    Window statistics are Gaussian-weighted means/variances; the per-window
    scores are averaged uniformly. K1 = 0.01, K2 = 0.03, dynamic range
    ``peak``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"ssim shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise DimensionError(
            f"ssim needs 2-D images at least {SSIM_WINDOW} px per side, got {a.shape}"
        )
    w = _gaussian_window()
    wa = np.lib.stride_tricks.sliding_window_view(a, (SSIM_WINDOW, SSIM_WINDOW))
    wb = np.lib.stride_tricks.sliding_window_view(b, (SSIM_WINDOW, SSIM_WINDOW))
    mu_a = np.einsum("ijab,ab->ij", wa, w, optimize=True)
    mu_b = np.einsum("ijab,ab->ij", wb, w, optimize=True)
    aa = np.einsum("ijab,ab->ij", wa * wa, w, optimize=True)
    bb = np.einsum("ijab,ab->ij", wb * wb, w, optimize=True)
    abm = np.einsum("ijab,ab->ij", wa * wb, w, optimize=True)
    var_a = aa - mu_a**2
    var_b = bb - mu_b**2
    cov = abm - mu_a * mu_b
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    return float(score.mean())


# ---------------------------------------------------------------------------
# memory ledger

LEDGER_STAGES = ("asm", "generator", "encoder", "merge_sr", "autodiff_tape")


class MemoryLedger:
    """Peak bytes of numeric buffers attributed to each pipeline stage.

    Network stages are measured as the tensor bytes allocated while the stage
    runs (autodiff's per-thread counter); the propagation stage reports its
    transient complex buffers directly. ``record`` keeps the per-stage peak;
    recording is internally locked so concurrent workers may share a ledger.
    """

    def __init__(self, grid: tuple[int, int] | None = None, scale: int | None = None):
        self.grid = grid
        self.scale = scale
        self._peaks = {s: 0 for s in LEDGER_STAGES}
        self._lock = threading.Lock()

    def record(self, stage: str, nbytes: int) -> None:
        if stage not in self._peaks:
            raise ConfigurationError(
                f"unknown ledger stage {stage!r}; expected one of {LEDGER_STAGES}"
            )
        if nbytes < 0:
            raise ConfigurationError("ledger bytes must be >= 0")
        with self._lock:
            if nbytes > self._peaks[stage]:
                self._peaks[stage] = int(nbytes)

    def peak(self, stage: str) -> int:
        if stage not in self._peaks:
            raise ConfigurationError(f"unknown ledger stage {stage!r}")
        return self._peaks[stage]

    @contextmanager
    def measure(self, stage: str):
        """Attribute tensor bytes created inside the block to ``stage``."""
        start = ad.bytes_created()
        try:
            yield self
        finally:
            self.record(stage, ad.bytes_created() - start)

    def as_dict(self) -> dict:
        out = {"grid": self.grid, "scale": self.scale}
        out["stages"] = {s: self._peaks[s] for s in LEDGER_STAGES}
        out["total"] = int(sum(self._peaks.values()))
        return out

    def as_csv(self) -> str:
        lines = ["stage,peak_bytes"]
        for s in LEDGER_STAGES:
            lines.append(f"{s},{self._peaks[s]}")
        lines.append(f"total,{sum(self._peaks.values())}")
        return "\n".join(lines) + "\n"

    def report(self) -> str:
        """Aligned text table: one row per stage plus a total row."""
        head = []
        if self.grid is not None:
            head.append(f"grid {self.grid[0]}x{self.grid[1]}")
        if self.scale is not None:
            head.append(f"scale {self.scale}")
        width = max(len(s) for s in LEDGER_STAGES + ("total",))
        rows = [f"{'  '.join(head)}".rstrip()] if head else []
        rows.append(f"{'stage'.ljust(width)}  peak_bytes")
        for s in LEDGER_STAGES:
            rows.append(f"{s.ljust(width)}  {self._peaks[s]:>12d}")
        rows.append(f"{'total'.ljust(width)}  {sum(self._peaks.values()):>12d}")
        return "\n".join(rows) + "\n"


# ---------------------------------------------------------------------------
# timing


@dataclass(frozen=True)
class Timing:
    seconds: float
    fps: float


def stopwatch(op) -> Timing:
    """Wall-clock one call of ``op`` on the monotonic clock.

    numpy work completes synchronously, so returning from ``op`` is the
    completion barrier; the result is read only after that point.
    """
    t0 = time.perf_counter()
    op()
    dt = time.perf_counter() - t0
    return Timing(seconds=dt, fps=(math.inf if dt == 0 else 1.0 / dt))


def stopwatch_median(op, repeats: int = 5) -> Timing:
    """Median-of-``repeats`` timing; the reporting policy for all benchmarks."""
    times = sorted(stopwatch(op).seconds for _ in range(max(1, repeats)))
    mid = times[len(times) // 2] if len(times) % 2 else 0.5 * (
        times[len(times) // 2 - 1] + times[len(times) // 2]
    )
    return Timing(seconds=mid, fps=(math.inf if mid == 0 else 1.0 / mid))
