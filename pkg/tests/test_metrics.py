"""PSNR/SSIM against loop-based references, memory ledger, stopwatch."""
import math
import threading

import numpy as np
import pytest

from holotile import autodiff as ad
from holotile.errors import ConfigurationError, DimensionError
from holotile.metrics import (
    LEDGER_STAGES,
    MemoryLedger,
    psnr,
    ssim,
    stopwatch,
    stopwatch_median,
)

from naive_refs import naive_psnr, naive_ssim


class TestPsnr:
    def test_known_value(self):
        # mse 0.25 against peak 1 -> 10 log10(4)
        a = np.zeros((4, 4))
        b = np.full((4, 4), 0.5)
        assert psnr(a, b) == pytest.approx(6.020599913279624, abs=1e-12)

    def test_identical_is_infinite(self, rng):
        x = rng.uniform(0, 1, (8, 8))
        assert psnr(x, x) == math.inf

    def test_peak_shifts_by_constant(self, rng):
        a = rng.uniform(0, 1, (8, 8))
        b = rng.uniform(0, 1, (8, 8))
        # doubling the dynamic range adds 20 log10(2) dB
        assert psnr(a, b, peak=2.0) - psnr(a, b) == pytest.approx(
            6.020599913279624, abs=1e-12
        )

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))

    def test_matches_loop_reference_on_50_pairs(self):
        rng = np.random.default_rng(2026)
        for _ in range(50):
            a = rng.uniform(0.0, 1.0, (16, 16))
            b = np.clip(a + rng.normal(0.0, 0.1, (16, 16)), 0.0, 1.0)
            assert abs(psnr(a, b) - naive_psnr(a, b)) < 1e-9


class TestSsim:
    def test_self_similarity_is_exactly_one(self, rng):
        x = rng.uniform(0, 1, (16, 16))
        assert ssim(x, x) == 1.0
        assert ssim(np.full((12, 12), 0.4), np.full((12, 12), 0.4)) == 1.0

    def test_constant_images_closed_form(self):
        # zero variance leaves only the luminance term:
        # (2 m1 m2 + c1) / (m1^2 + m2^2 + c1)
        a = np.full((11, 11), 0.3)
        b = np.full((11, 11), 0.7)
        assert ssim(a, b) == pytest.approx(0.7241854852611619, abs=1e-9)

    def test_matches_loop_reference_on_50_pairs(self):
        rng = np.random.default_rng(77)
        for _ in range(50):
            a = rng.uniform(0.0, 1.0, (13, 13))
            b = np.clip(a + rng.normal(0.0, rng.uniform(0.02, 0.3), (13, 13)), 0, 1)
            assert abs(ssim(a, b) - naive_ssim(a, b)) < 1e-9

    def test_symmetric(self, rng):
        a = rng.uniform(0, 1, (14, 14))
        b = rng.uniform(0, 1, (14, 14))
        assert ssim(a, b) == ssim(b, a)

    def test_luminance_shift_lowers_score(self, rng):
        x = 0.25 + 0.5 * rng.uniform(0, 1, (16, 16))
        s = ssim(x, x + 0.1)
        assert 0.0 < s < 1.0

    def test_noise_strictly_degrades(self, rng):
        base = 0.25 + 0.5 * rng.uniform(0, 1, (16, 16))
        noise = rng.standard_normal((16, 16))
        noise /= np.abs(noise).max()
        scores = [ssim(base, base + 0.25 * a * noise) for a in (0.05, 0.2, 0.8)]
        assert scores[0] > scores[1] > scores[2]

    def test_peak_rescaling_invariance(self, rng):
        a = rng.uniform(0, 1, (13, 13))
        b = rng.uniform(0, 1, (13, 13))
        assert ssim(2 * a, 2 * b, peak=2.0) == pytest.approx(ssim(a, b), abs=1e-12)

    def test_dimension_errors(self):
        with pytest.raises(DimensionError):
            ssim(np.zeros((16, 16)), np.zeros((16, 15)))
        with pytest.raises(DimensionError):
            ssim(np.zeros(16), np.zeros(16))
        with pytest.raises(DimensionError):
            ssim(np.zeros((10, 10)), np.zeros((10, 10)))  # below the window size


class TestMemoryLedger:
    def test_record_keeps_peak(self):
        led = MemoryLedger()
        led.record("asm", 100)
        led.record("asm", 40)
        led.record("asm", 250)
        assert led.peak("asm") == 250

    def test_unknown_stage_rejected(self):
        led = MemoryLedger()
        with pytest.raises(ConfigurationError):
            led.record("warp", 1)
        with pytest.raises(ConfigurationError):
            led.peak("warp")

    def test_negative_bytes_rejected(self):
        with pytest.raises(ConfigurationError):
            MemoryLedger().record("asm", -1)

    def test_as_dict_totals(self):
        led = MemoryLedger(grid=(32, 32), scale=2)
        led.record("asm", 10)
        led.record("generator", 5)
        d = led.as_dict()
        assert d["grid"] == (32, 32)
        assert d["scale"] == 2
        assert set(d["stages"]) == set(LEDGER_STAGES)
        assert d["total"] == 15

    def test_csv_layout(self):
        led = MemoryLedger()
        led.record("asm", 10)
        led.record("generator", 5)
        assert led.as_csv() == (
            "stage,peak_bytes\n"
            "asm,10\n"
            "generator,5\n"
            "encoder,0\n"
            "merge_sr,0\n"
            "autodiff_tape,0\n"
            "total,15\n"
        )

    def test_report_lists_every_stage(self):
        led = MemoryLedger(grid=(64, 64), scale=4)
        text = led.report()
        for stage in LEDGER_STAGES + ("total", "grid 64x64", "scale 4"):
            assert stage in text

    def test_measure_attributes_tensor_bytes(self):
        led = MemoryLedger()
        ad.Tensor(np.zeros((8, 8)))  # outside the block: not attributed
        with led.measure("generator"):
            ad.Tensor(np.zeros((64, 64)))
        assert led.peak("generator") >= 64 * 64 * 8
        assert led.peak("encoder") == 0

    def test_measure_records_despite_exception(self):
        led = MemoryLedger()
        with pytest.raises(RuntimeError):
            with led.measure("merge_sr"):
                ad.Tensor(np.zeros((32, 32)))
                raise RuntimeError("boom")
        assert led.peak("merge_sr") >= 32 * 32 * 8

    def test_concurrent_records_keep_global_max(self):
        led = MemoryLedger()
        values = [[(t * 997 + i * 13) % 5000 for i in range(200)] for t in range(8)]

        def worker(vals):
            for v in vals:
                led.record("asm", v)

        threads = [threading.Thread(target=worker, args=(v,)) for v in values]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert led.peak("asm") == max(max(v) for v in values)


class TestStopwatch:
    def test_measures_wall_time(self):
        import time

        t = stopwatch(lambda: time.sleep(0.03))
        assert 0.025 <= t.seconds < 0.5
        assert t.fps == pytest.approx(1.0 / t.seconds)

    def test_median_of_odd_repeats(self):
        import time

        sleeps = iter([0.12, 0.001, 0.03])
        t = stopwatch_median(lambda: time.sleep(next(sleeps)), repeats=3)
        # the middle sample is the 30 ms one
        assert 0.025 <= t.seconds < 0.1

    def test_median_of_even_repeats_averages(self):
        import time

        sleeps = iter([0.001, 0.04])
        t = stopwatch_median(lambda: time.sleep(next(sleeps)), repeats=2)
        # mean of the two middle samples: at least (0.001 + 0.04) / 2
        assert 0.0195 <= t.seconds < 0.08
