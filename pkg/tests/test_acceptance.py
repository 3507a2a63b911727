"""Release acceptance: twelve numbered checks, one test (and one -v line) each.

The checks span the numerical oracles (direct-DFT propagation, adjoints,
finite differences), physical invariants (unitarity, reciprocity, tiling
bijectivity), structural degeneracies, optimization quality directions,
training convergence and determinism on the frozen desk-scale fixture,
memory and throughput scaling directions, and the metric oracles.

Frozen constants below were measured at first implementation on the
reference platform and are regression-tested with the stated windows —
they are recorded results, not tuning targets.
"""
import json
import time

import numpy as np
import pytest

from holotile import autodiff as ad
from holotile import cli, encoding, metrics, nnets, optimize, propagation, tiling
from holotile.autodiff import Tensor
from holotile.optimize import PipelineConfig
from holotile.wavefield import ComplexField, OpticalConfig, wrap_phase

from conftest import fixture_dataset, make_optical, synth_image
from naive_refs import naive_psnr, naive_ssim

# ---------------------------------------------------------------------------
# frozen fixture protocol and measured reference values

FIXTURE_GRID = 128
FIXTURE_STEPS = 200
FIXTURE_SEED = 42
FIXTURE_LR = 2e-3

# 64x64 single-image quality gap, iterative phase retrieval (1000 iterations)
# over the non-learned double-phase encoding; regression window +/- 0.5 dB.
SGD_OVER_DPAC_DB = 25.108
SGD_OVER_DPAC_TOL = 0.5


def fixture_pipeline_config(n: int = FIXTURE_GRID, scale: int = 2) -> PipelineConfig:
    return PipelineConfig(
        optical=make_optical(n, distance=2e-3),
        scale=scale,
        lfmn_features=8,
        lfmn_blocks=1,
        backbone_width=12,
        pad_factor=2,
    )


@pytest.fixture(scope="session")
def fixture_images() -> list[np.ndarray]:
    return fixture_dataset(FIXTURE_GRID)


@pytest.fixture(scope="session")
def trained_full(fixture_images):
    """One 200-step training run on the fixture set; shared across checks."""
    pcfg = fixture_pipeline_config()
    t0 = time.perf_counter()
    res = optimize.train(
        fixture_images, pcfg, FIXTURE_STEPS, FIXTURE_SEED, lr=FIXTURE_LR
    )
    return res, pcfg, time.perf_counter() - t0


def train_variant(fixture_images, variant: str):
    pcfg = fixture_pipeline_config()
    return optimize.train(
        fixture_images, pcfg, FIXTURE_STEPS, FIXTURE_SEED, lr=FIXTURE_LR,
        variant=variant,
    ), pcfg


def full_definition_psnr(images, params, pcfg, variant: str) -> float:
    """Judge a variant's holograms under the true full-definition physics."""
    vals = []
    for img in images:
        with ad.no_grad():
            out = optimize.forward_pipeline(img, params, pcfg, variant=variant)
        recon = optimize.reconstruct_from_phase(out.slm_phase, pcfg, img)
        vals.append(metrics.psnr(recon, img))
    return float(np.mean(vals))


def native_psnr(images, params, pcfg, variant: str) -> float:
    vals = []
    for img in images:
        with ad.no_grad():
            out = optimize.forward_pipeline(img, params, pcfg, variant=variant)
        vals.append(metrics.psnr(out.reconstruction, img))
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# 1. propagation oracle


def test_01_fft_asm_matches_direct_dft():
    cfg = OpticalConfig(height=32, width=32, distance=1e-3)
    tf = propagation.build_transfer(cfg, pad_factor=2)
    rng = np.random.default_rng(7)
    u = rng.standard_normal((32, 32)) + 1j * rng.standard_normal((32, 32))
    field = ComplexField(u, pitch=cfg.pitch, wavelength=cfg.wavelengths[0])
    t0 = time.perf_counter()
    fast = propagation.propagate(field, tf).data
    slow = propagation.dft_oracle(field, tf).data
    elapsed = time.perf_counter() - t0
    err = float(np.abs(fast - slow).max())
    print(f"check 1: fft-vs-dft max abs {err:.3e} in {elapsed:.2f}s")
    assert err < 1e-10
    assert elapsed < 10.0


# ---------------------------------------------------------------------------
# 2. unitarity and reciprocity


def test_02_energy_conservation_and_round_trip():
    cfg = make_optical(64)
    rng = np.random.default_rng(13)

    # in-band spectra propagate unitarily at pad_factor 1
    tf = propagation.build_transfer(cfg, cfg.distance, 1, 0)
    band = np.abs(tf.values) > 0.5
    spectrum = (rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64)))
    spectrum[~band] = 0.0
    u = np.fft.ifft2(spectrum)
    before = float(np.sum(np.abs(u) ** 2))
    after = float(np.sum(np.abs(propagation.apply_transfer(u, tf)) ** 2))
    rel = abs(after - before) / before
    assert rel < 1e-10

    # z then -z returns the field when z sits inside the full-band plateau
    d = 0.9 * propagation.full_band_distance(cfg, pad_factor=1)
    fwd = propagation.build_transfer(cfg, d, 1, 0)
    back = propagation.build_transfer(cfg, -d, 1, 0)
    v = rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64))
    rt = propagation.apply_transfer(propagation.apply_transfer(v, fwd), back)
    rt_err = float(np.abs(rt - v).max())
    print(f"check 2: energy rel {rel:.3e}, round trip max abs {rt_err:.3e}")
    assert rt_err < 1e-8


# ---------------------------------------------------------------------------
# 3. adjoint correctness


def test_03_adjoint_identity():
    cfg = make_optical(16, distance=2e-3)
    tf = propagation.build_transfer(cfg, cfg.distance, 2, 0)
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(10):
        x = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
        y = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
        lhs = np.vdot(propagation.apply_transfer(x, tf), y)
        rhs = np.vdot(x, propagation.apply_transfer(y, tf, adjoint=True))
        worst = max(worst, abs(lhs - rhs) / abs(lhs))
    print(f"check 3: adjoint worst rel {worst:.3e}")
    assert worst < 1e-10


# ---------------------------------------------------------------------------
# 4. tiling bijectivity


def test_04_tiling_bijective_and_pyramid_composition():
    rng = np.random.default_rng(23)
    for r in (1, 2, 3, 4):
        h = r * int(rng.integers(2, 7))
        w = r * int(rng.integers(2, 7))
        x = rng.standard_normal((h, w))
        assert np.array_equal(tiling.pixel_shuffle(tiling.pixel_unshuffle(x, r)), x)

    # two chained scale-2 assemblies equal one scale-4 assembly exactly
    x = rng.standard_normal((12, 16))
    stack16 = tiling.pixel_unshuffle(x, 4)
    halves = [tiling.pixel_shuffle(g) for g in tiling.group_tiles(stack16)]
    two_stage = tiling.pixel_shuffle(tiling.TileStack(np.stack(halves), scale=2))
    assert np.array_equal(two_stage, x)
    print("check 4: shuffle/unshuffle identities and 2+2 = 4 composition exact")


# ---------------------------------------------------------------------------
# 5. gradient suite


def _fd(loss, arr: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        fp = loss()
        flat[i] = keep - h
        fm = loss()
        flat[i] = keep
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def _check_op_grads(build, tensors: list[Tensor], rtol: float) -> float:
    out = build()
    weights = np.linspace(0.3, 1.7, out.data.size).reshape(out.data.shape)
    loss = ad.tsum(out * Tensor(weights))
    for t in tensors:
        t.grad = None
    ad.backward(loss)

    def scalar() -> float:
        with ad.no_grad():
            return float((build().data * weights).sum())

    worst = 0.0
    for t in tensors:
        fd = _fd(scalar, t.data)
        denom = max(float(np.abs(fd).max()), 1e-10)
        rel = float(np.abs((t.grad if t.grad is not None else 0.0) - fd).max()) / denom
        worst = max(worst, rel)
        assert rel < rtol, f"gradient mismatch rel {rel:.2e}"
    return worst


def test_05_gradient_suite_all_ops_and_pipeline():
    t_start = time.perf_counter()
    worst_op = 0.0
    for seed in range(20):
        rng = np.random.default_rng([5, seed])

        def tens(*shape, lo=-1.0, hi=1.0, offset=0.0):
            return Tensor(offset + rng.uniform(lo, hi, shape), requires_grad=True)

        a, b = tens(2, 3), tens(2, 3)
        pos = tens(2, 3, lo=0.5, hi=1.5)
        away = Tensor(np.where(np.abs(a.data) < 0.1, 0.3, a.data),
                      requires_grad=True)
        x4 = tens(1, 4, 4, 4)
        g4, b4 = tens(4, 1, 1), tens(4, 1, 1)
        xc = tens(1, 2, 5, 5)
        w = tens(3, 2, 3, 3)
        wb = tens(3)
        wt = tens(4, 2, 4, 4)
        re, im = tens(2, 3, offset=2.0), tens(2, 3, offset=2.0)

        cases = [
            (lambda: a + b, [a, b]),
            (lambda: a - b, [a, b]),
            (lambda: a * b, [a, b]),
            (lambda: a / pos, [a, pos]),
            (lambda: -a, [a]),
            (lambda: ad.square(a), [a]),
            (lambda: ad.cos(a), [a]),
            (lambda: ad.sin(a), [a]),
            (lambda: ad.sigmoid(a), [a]),
            (lambda: ad.leaky_relu(away), [away]),
            (lambda: ad.tsum(ad.square(a)), [a]),
            (lambda: ad.tmean(ad.square(a)), [a]),
            (lambda: ad.complex_modulus(re, im), [re, im]),
            (lambda: ad.channel_l2(x4), [x4]),
            (lambda: ad.channel_mean(x4), [x4]),
            (lambda: ad.concat_c([x4, x4]), [x4]),
            (lambda: ad.slice_c(x4, 1, 3), [x4]),
            (lambda: ad.gather_c(x4, [0, 2, 2, 3]), [x4]),
            (lambda: ad.pixel_shuffle_t(x4, 2), [x4]),
            (lambda: ad.pixel_unshuffle_t(ad.pixel_shuffle_t(x4, 2), 2), [x4]),
            (lambda: ad.conv2d(xc, w, wb), [xc, w, wb]),
            (lambda: ad.conv2d(xc, w, wb, stride=2), [xc, w, wb]),
            (lambda: ad.conv_transpose2d(x4, wt, stride=2), [x4, wt]),
            (lambda: ad.grn(x4, g4, b4), [x4, g4, b4]),
        ]
        for build, tensors in cases:
            worst_op = max(worst_op, _check_op_grads(build, tensors, rtol=1e-5))

    # full 16x16 r=2 pipeline: analytic directional derivative vs central FD
    worst_pipe = 0.0
    for seed in range(20):
        rng = np.random.default_rng([6, seed])
        pcfg = PipelineConfig(
            optical=make_optical(16, distance=0.5e-3), scale=2,
            lfmn_features=4, lfmn_blocks=1, backbone_width=4, pad_factor=2,
        )
        params = optimize.init_pipeline(pcfg, seed=seed)
        img = np.clip(0.5 + 0.2 * rng.standard_normal((16, 16)), 0.0, 1.0)
        pairs = optimize.pipeline_named_tensors(params)
        for _, p in pairs:
            p.grad = None
        out = optimize.forward_pipeline(img, params, pcfg)
        ad.backward(optimize.loss_l2_scaled(out.amp_tensor, img))
        direction = [np.sign(rng.standard_normal(p.data.shape)) for _, p in pairs]
        analytic = sum(
            float((p.grad * d).sum())
            for (_, p), d in zip(pairs, direction) if p.grad is not None
        )

        def loss_at(eps: float) -> float:
            for (_, p), d in zip(pairs, direction):
                p.data = p.data + eps * d
            with ad.no_grad():
                o = optimize.forward_pipeline(img, params, pcfg)
                val = optimize.loss_l2_scaled(o.amp_tensor, img).item()
            for (_, p), d in zip(pairs, direction):
                p.data = p.data - eps * d
            return val

        h = 1e-6
        fd = (loss_at(h) - loss_at(-h)) / (2.0 * h)
        rel = abs(analytic - fd) / max(abs(fd), 1e-12)
        worst_pipe = max(worst_pipe, rel)
        assert rel < 1e-4, f"pipeline gradient mismatch rel {rel:.2e} (seed {seed})"

    elapsed = time.perf_counter() - t_start
    print(f"check 5: worst op rel {worst_op:.2e}, worst pipeline rel "
          f"{worst_pipe:.2e}, {elapsed:.1f}s")
    assert elapsed < 60.0


# ---------------------------------------------------------------------------
# 6. structural degeneracies


def test_06_structural_degeneracies_exact():
    rng = np.random.default_rng(31)

    # zero-initialized merge network == plain pixel shuffle, bit for bit
    for scale in (2, 4):
        p = nnets.zero_lfmn(scale, features=4, blocks=2)
        x = Tensor(rng.standard_normal((1, scale * scale, 8, 8)))
        assert np.array_equal(
            nnets.lfmn_forward(x, p).data, ad.pixel_shuffle_t(x, scale).data
        )

    # normalization with zero gain and offset is the identity, bit for bit
    x = Tensor(rng.standard_normal((1, 6, 5, 5)))
    zeros = Tensor(np.zeros((6, 1, 1)))
    assert np.array_equal(ad.grn(x, zeros, zeros).data, x.data)

    # r=1 pipeline == hand-assembled untiled baseline (independent numpy
    # field math around the same networks), bit for bit
    cfg = make_optical(16, distance=0.5e-3)
    pcfg = PipelineConfig(optical=cfg, scale=1, lfmn_features=4,
                          lfmn_blocks=1, backbone_width=4, pad_factor=2)
    params = optimize.init_pipeline(pcfg, seed=5)
    img = synth_image(3, 16)
    out = optimize.forward_pipeline(img, params, pcfg)

    with ad.no_grad():
        phi_g = nnets.generator_forward(Tensor(img[None, None]),
                                        params.generator).data[0, 0]
        tf_fwd = propagation.build_transfer(cfg, cfg.distance, 2, 0)
        tf_back = propagation.build_transfer(cfg, -cfg.distance, 2, 0)
        u = img * np.cos(phi_g) + 1j * (img * np.sin(phi_g))
        u_slm = propagation.apply_transfer(u, tf_fwd)
        enc_in = Tensor(np.stack([u_slm.real, u_slm.imag])[None])
        phi_s = nnets.encoder_forward(enc_in, params.encoder).data[0, 0]
        u_rec = propagation.apply_transfer(np.cos(phi_s) + 1j * np.sin(phi_s),
                                           tf_back)
        amp = np.hypot(u_rec.real, u_rec.imag)
        s = (amp * img).sum() / (amp * amp).sum()
    assert np.array_equal(out.slm_phase, wrap_phase(phi_s))
    assert np.array_equal(out.reconstruction, s * amp)
    print("check 6: zero-merge, zero-normalization, untiled-r1 all bitwise")


# ---------------------------------------------------------------------------
# 7. optimization sanity: iterative phase retrieval over direct encoding


def test_07_sgd_beats_dpac_by_frozen_margin():
    t0 = time.perf_counter()
    cfg = make_optical(64)
    pcfg = PipelineConfig(optical=cfg, scale=1, pad_factor=2)
    img = synth_image(0, 64)

    tf_fwd = propagation.build_transfer(cfg, cfg.distance, 2, 0)
    u_slm = propagation.apply_transfer(img.astype(complex), tf_fwd)
    pm_d = encoding.dpac_encode(
        ComplexField(u_slm, pitch=cfg.pitch, wavelength=cfg.wavelengths[0])
    )
    p_dpac = metrics.psnr(optimize.reconstruct_from_phase(pm_d.phase, pcfg, img), img)

    pm_s = optimize.sgd_hologram(img, pcfg, iters=1000, seed=0)
    p_sgd = metrics.psnr(optimize.reconstruct_from_phase(pm_s.phase, pcfg, img), img)

    elapsed = time.perf_counter() - t0
    margin = p_sgd - p_dpac
    print(f"check 7: sgd {p_sgd:.3f} dB vs dpac {p_dpac:.3f} dB, margin "
          f"{margin:.3f} (window {SGD_OVER_DPAC_DB}+/-{SGD_OVER_DPAC_TOL}), "
          f"{elapsed:.1f}s")
    assert p_sgd > p_dpac
    assert abs(margin - SGD_OVER_DPAC_DB) <= SGD_OVER_DPAC_TOL
    assert elapsed < 120.0


# ---------------------------------------------------------------------------
# 8. training convergence and determinism on the frozen fixture


def test_08_training_converges_deterministically(fixture_images, trained_full):
    res, pcfg, elapsed = trained_full
    ratio = res.losses[-1] / res.losses[0]
    print(f"check 8: loss {res.losses[0]:.6f} -> {res.losses[-1]:.6f} "
          f"(ratio {ratio:.4f}) in {elapsed:.0f}s")
    assert len(res.losses) == FIXTURE_STEPS
    assert res.losses[-1] <= 0.5 * res.losses[0]
    assert elapsed < 600.0

    repeat = optimize.train(
        fixture_images, pcfg, FIXTURE_STEPS, FIXTURE_SEED, lr=FIXTURE_LR
    )
    assert repeat.losses == res.losses  # bit-identical curve


# ---------------------------------------------------------------------------
# 9. memory direction across tile factors


def test_09_network_stage_memory_shrinks_with_scale():
    n = 256
    img = synth_image(0, n)
    peaks = {}
    ledgers = {}
    for r in (1, 2, 4):
        pcfg = PipelineConfig(
            optical=make_optical(n, distance=2e-3), scale=r,
            lfmn_features=8, lfmn_blocks=1, backbone_width=16, pad_factor=2,
        )
        params = optimize.init_pipeline(pcfg, seed=0)
        led = metrics.MemoryLedger(grid=(n, n), scale=r)
        with ad.no_grad():
            optimize.forward_pipeline(img, params, pcfg, ledger=led)
        stages = led.as_dict()["stages"]
        peaks[r] = stages["generator"] + stages["encoder"]
        ledgers[r] = led

    print(f"check 9: generator+encoder peak bytes r1 {peaks[1]}, "
          f"r2 {peaks[2]} ({peaks[2] / peaks[1]:.3f}x), "
          f"r4 {peaks[4]} ({peaks[4] / peaks[2]:.3f}x of r2)")
    for r in (1, 2, 4):
        report = ledgers[r].report()
        for stage in ("asm", "merge_sr", "generator", "encoder"):
            assert stage in report
        print(report)
    assert peaks[2] < peaks[1]
    assert peaks[4] < peaks[2]


# ---------------------------------------------------------------------------
# 10. ablation directions on the fixture set


def test_10_ablation_ordering(fixture_images, trained_full):
    res, pcfg, _ = trained_full
    p_full = native_psnr(fixture_images, res.params, pcfg, "full")

    # component removals are inference-time toggles of the trained merge
    # network; each must cost quality (up to 0.1 dB measurement noise)
    removals = {}
    for variant in ("no-grn", "no-lfm", "no-eccm"):
        removals[variant] = native_psnr(fixture_images, res.params, pcfg, variant)
        assert removals[variant] <= p_full + 0.1, variant

    # structural rows retrain under each forward model, then every variant's
    # hologram is judged by the same true full-definition reconstruction
    res_sr, pcfg_sr = train_variant(fixture_images, "sr-none")
    p_sr = full_definition_psnr(fixture_images, res_sr.params, pcfg_sr, "sr-none")
    res_low, pcfg_low = train_variant(fixture_images, "asm-low-def")
    p_low = full_definition_psnr(fixture_images, res_low.params, pcfg_low,
                                 "asm-low-def")

    print(f"check 10: full {p_full:.3f} > sr-none {p_sr:.3f} > "
          f"asm-low-def {p_low:.3f} dB; removals "
          + ", ".join(f"{k} {v:.3f}" for k, v in removals.items()))
    assert p_full > p_sr > p_low


# ---------------------------------------------------------------------------
# 11. metric oracles


def test_11_metric_oracles():
    rng = np.random.default_rng(2027)
    worst_p = worst_s = 0.0
    for _ in range(50):
        a = rng.uniform(0.0, 1.0, (13, 13))
        b = np.clip(a + rng.normal(0.0, rng.uniform(0.02, 0.3), (13, 13)), 0, 1)
        worst_p = max(worst_p, abs(metrics.psnr(a, b) - naive_psnr(a, b)))
        worst_s = max(worst_s, abs(metrics.ssim(a, b) - naive_ssim(a, b)))
    x = rng.uniform(0, 1, (16, 16))
    print(f"check 11: worst psnr diff {worst_p:.2e}, worst ssim diff {worst_s:.2e}")
    assert worst_p < 1e-9
    assert worst_s < 1e-9
    assert metrics.ssim(x, x) == 1.0


# ---------------------------------------------------------------------------
# 12. throughput scaling direction


def test_12_network_stage_time_shrinks_with_scale(capsys):
    rc = cli.main([
        "bench", "--sizes", "256", "--scales", "1,4", "--repeats", "5", "--json",
    ])
    out = capsys.readouterr().out
    assert rc == 0
    rows = {r["scale"]: r for r in json.loads(out)}
    net1 = rows[1]["net_seconds"]
    net4 = rows[4]["net_seconds"]
    print(f"check 12: net-stage median {net1 * 1e3:.1f} ms at r=1 vs "
          f"{net4 * 1e3:.1f} ms at r=4")
    assert net4 <= net1
