"""Command-line entry point: synthesis, training, ablations, benchmarks, and
the built-in numerical oracle suite.

Every command is deterministic under a fixed seed. Failures exit nonzero with
a single-line ``holotile: error: <category>: <message>`` on stderr; exit code
2 flags configuration problems, 3 flags I/O problems, 1 anything else.
"""

from __future__ import annotations

import argparse
import concurrent.futures as cf
import dataclasses
import json
import os
import sys
from pathlib import Path
from time import perf_counter

import numpy as np

from . import autodiff as ad
from . import encoding, io, metrics, optimize, propagation
from .errors import ConfigurationError, DataFileError, HolotileError
from .propagation import full_band_distance
from .wavefield import ComplexField, OpticalConfig

CHANNEL_WAVELENGTH = {"r": 0, "g": 1, "b": 2}


def _max_workers() -> int:
    """Worker-thread cap from HOLOTILE_THREADS (default: up to 4)."""
    raw = os.environ.get("HOLOTILE_THREADS", "")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ConfigurationError(f"HOLOTILE_THREADS must be an integer, got {raw!r}")
        if n < 1:
            raise ConfigurationError(f"HOLOTILE_THREADS must be >= 1, got {n}")
        return n
    return min(4, os.cpu_count() or 1)


def _error_line(category: str, exc: Exception) -> None:
    msg = " ".join(str(exc).split()) or exc.__class__.__name__
    print(f"holotile: error: {category}: {msg}", file=sys.stderr)


def _run_config(args) -> io.RunConfig:
    if getattr(args, "config", None):
        return io.load_config(args.config)
    return io.parse_config(None)


def _wavelength_channel(image_channel: str, cfg: io.RunConfig) -> int:
    return CHANNEL_WAVELENGTH.get(image_channel, cfg.pipeline.channel)


def _pcfg_with_meta(pcfg: optimize.PipelineConfig, meta: dict) -> optimize.PipelineConfig:
    return dataclasses.replace(
        pcfg,
        scale=meta["scale"],
        use_pyramid=meta["use_pyramid"],
        lfmn_features=meta["lfmn_features"],
        lfmn_blocks=meta["lfmn_blocks"],
        backbone_width=meta["backbone_width"],
    )


def _test_pattern(n: int) -> np.ndarray:
    """Deterministic smooth benchmark target in [0, 1]."""
    y, x = np.mgrid[0:n, 0:n].astype(float)
    return 0.5 + 0.25 * np.sin(6.0 * np.pi * x / n) * np.cos(4.0 * np.pi * y / n) \
        + 0.25 * (x + y) / (2.0 * n - 2.0)


# ---------------------------------------------------------------------------
# synthesize


def _synthesize_channel(
    image_channel: str,
    args,
    cfg: io.RunConfig,
) -> dict:
    multiple = max(cfg.crop_multiple, 1)
    img = io.load_image(args.image, image_channel, multiple=multiple)
    h, w = img.shape
    pcfg = cfg.pipeline_config(h, w)
    pcfg = dataclasses.replace(pcfg, channel=_wavelength_channel(image_channel, cfg))
    seed = args.seed if args.seed is not None else cfg.trainer.seed

    if args.method == "pipeline":
        if args.checkpoint:
            params, meta, _ = optimize.load_checkpoint(args.checkpoint)
            pcfg = _pcfg_with_meta(pcfg, meta)
            if h % (4 * pcfg.scale) or w % (4 * pcfg.scale):
                raise ConfigurationError(
                    f"image {h}x{w} not divisible by 4 x scale {pcfg.scale} "
                    "from the checkpoint"
                )
        else:
            params = optimize.init_pipeline(pcfg, seed)
        with ad.no_grad():
            out = optimize.forward_pipeline(img, params, pcfg)
        pm, recon = out.phase_map, out.reconstruction
    elif args.method == "sgd":
        pm = optimize.sgd_hologram(img, pcfg, args.iters, seed=seed)
        recon = optimize.reconstruct_from_phase(pm.phase, pcfg, img)
    elif args.method == "gs":
        pm = optimize.gs_iterate(img, pcfg, args.iters, seed=seed)
        recon = optimize.reconstruct_from_phase(pm.phase, pcfg, img)
    else:  # dpac
        tf_fwd = propagation.build_transfer(
            pcfg.optical, pcfg.optical.distance, pcfg.pad_factor, pcfg.channel
        )
        u_slm = propagation.apply_transfer(img.astype(complex), tf_fwd)
        field = ComplexField(
            u_slm, pitch=pcfg.optical.pitch,
            wavelength=pcfg.optical.wavelengths[pcfg.channel],
        )
        pm = encoding.dpac_encode(field)
        recon = optimize.reconstruct_from_phase(pm.phase, pcfg, img)

    return {
        "channel": image_channel,
        "method": args.method,
        "psnr_db": metrics.psnr(recon, img),
        "ssim": metrics.ssim(recon, img),
        "phase_map": pm,
        "reconstruction": recon,
    }


def cmd_synthesize(args) -> int:
    cfg = _run_config(args)
    channels = [c.strip() for c in (args.channels or cfg.image_channel).split(",")]
    for c in channels:
        if c not in io.IMAGE_CHANNELS:
            raise ConfigurationError(
                f"channels: {c!r} is not one of {io.IMAGE_CHANNELS}"
            )
    out_dir = Path(args.out_dir or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.parallel_channels and len(channels) > 1:
        workers = min(_max_workers(), len(channels))
        with cf.ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda c: _synthesize_channel(c, args, cfg), channels))
    else:
        results = [_synthesize_channel(c, args, cfg) for c in channels]

    csv_lines = ["channel,method,psnr_db,ssim"]
    for res in results:
        ch = res["channel"]
        io.save_phase(out_dir / f"hologram_{ch}.png", res["phase_map"])
        io.save_image(out_dir / f"reconstruction_{ch}.png", res["reconstruction"])
        csv_lines.append(
            f"{ch},{res['method']},{res['psnr_db']:.6f},{res['ssim']:.8f}"
        )
    (out_dir / "metrics.csv").write_text("\n".join(csv_lines) + "\n")

    if args.json:
        doc = [
            {k: res[k] for k in ("channel", "method", "psnr_db", "ssim")}
            for res in results
        ]
        print(json.dumps(doc, sort_keys=True))
    else:
        for res in results:
            print(
                f"method={res['method']} channel={res['channel']} "
                f"psnr_db={res['psnr_db']:.4f} ssim={res['ssim']:.6f}"
            )
    return 0


# ---------------------------------------------------------------------------
# train


def _load_dataset(directory, channel: str, multiple: int) -> list[np.ndarray]:
    paths = io.list_images(directory)
    if not paths:
        raise ConfigurationError(f"dataset {directory}: no .png/.pgm images found")
    imgs = [io.load_image(p, channel, multiple=multiple) for p in paths]
    shapes = {im.shape for im in imgs}
    if len(shapes) != 1:
        raise ConfigurationError(
            f"dataset {directory}: images disagree in cropped size: {sorted(shapes)}"
        )
    return imgs


def cmd_train(args) -> int:
    cfg = _run_config(args)
    seed = args.seed if args.seed is not None else cfg.trainer.seed
    steps = args.steps if args.steps is not None else cfg.trainer.steps

    params = adam = None
    start_step = 0
    meta = None
    if args.resume_from:
        params, meta, adam = optimize.load_checkpoint(args.resume_from)
        start_step = meta["step"]
    multiple = 4 * (meta["scale"] if meta else cfg.pipeline.scale)
    dataset = _load_dataset(args.dataset_dir, cfg.image_channel, multiple)
    h, w = dataset[0].shape
    pcfg = cfg.pipeline_config(h, w)
    if meta:
        pcfg = _pcfg_with_meta(pcfg, meta)

    result = optimize.train(
        dataset, pcfg, steps, seed,
        params=params, adam=adam, start_step=start_step,
        lr=cfg.trainer.lr, beta1=cfg.trainer.beta1, beta2=cfg.trainer.beta2,
    )
    out_dir = Path(args.out_dir or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = Path(args.checkpoint_out) if args.checkpoint_out else out_dir / "checkpoint.htc"
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    optimize.save_checkpoint(ckpt, result.params, pcfg, result.adam, step=result.next_step)

    loss_csv = Path(args.loss_csv) if args.loss_csv else out_dir / "loss.csv"
    rows = ["step,loss"]
    rows += [f"{start_step + i},{v!r}" for i, v in enumerate(result.losses)]
    loss_csv.write_text("\n".join(rows) + "\n")

    summary = {
        "steps": steps,
        "start_step": start_step,
        "seed": seed,
        "checkpoint": str(ckpt),
        "initial_loss": result.losses[0] if result.losses else None,
        "final_loss": result.losses[-1] if result.losses else None,
    }
    if args.json:
        print(json.dumps(summary, sort_keys=True))
    else:
        print(
            f"trained steps={steps} start_step={start_step} "
            f"final_loss={summary['final_loss']} checkpoint={ckpt}"
        )
    return 0


# ---------------------------------------------------------------------------
# ablate

ABLATION_SCENARIOS = ("sr-none", "asm-low-def", "no-grn", "no-lfm", "no-eccm")


def cmd_ablate(args) -> int:
    if args.scenario != "all" and args.scenario not in ABLATION_SCENARIOS:
        raise ConfigurationError(
            f"scenario: {args.scenario!r} is not one of {('all',) + ABLATION_SCENARIOS}"
        )
    scenarios = ABLATION_SCENARIOS if args.scenario == "all" else (args.scenario,)
    cfg = _run_config(args)
    params, meta, _ = optimize.load_checkpoint(args.checkpoint)

    if args.image:
        image_paths = [Path(args.image)]
    elif args.dataset_dir:
        image_paths = io.list_images(args.dataset_dir)
        if not image_paths:
            raise ConfigurationError(f"dataset {args.dataset_dir}: no images found")
    else:
        raise ConfigurationError("ablate needs --image or --dataset-dir")
    multiple = 4 * meta["scale"]
    images = [io.load_image(p, cfg.image_channel, multiple=multiple) for p in image_paths]
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ConfigurationError(f"ablation images disagree in cropped size: {sorted(shapes)}")
    h, w = images[0].shape
    pcfg = _pcfg_with_meta(cfg.pipeline_config(h, w), meta)

    def evaluate(variant: str) -> dict:
        ps, ss = [], []
        for img in images:
            with ad.no_grad():
                out = optimize.forward_pipeline(img, params, pcfg, variant=variant)
            ps.append(metrics.psnr(out.reconstruction, img))
            ss.append(metrics.ssim(out.reconstruction, img))
        return {
            "scenario": variant,
            "psnr_db": float(np.mean(ps)),
            "ssim": float(np.mean(ss)),
        }

    rows = [evaluate("full")] + [evaluate(s) for s in scenarios]

    if args.csv_out:
        lines = ["scenario,psnr_db,ssim"]
        lines += [f"{r['scenario']},{r['psnr_db']:.6f},{r['ssim']:.8f}" for r in rows]
        Path(args.csv_out).write_text("\n".join(lines) + "\n")
    if args.json:
        print(json.dumps(rows, sort_keys=True))
    else:
        width = max(len(r["scenario"]) for r in rows)
        print(f"{'scenario'.ljust(width)}  {'psnr_db':>9}  {'ssim':>7}")
        for r in rows:
            print(f"{r['scenario'].ljust(width)}  {r['psnr_db']:9.4f}  {r['ssim']:7.4f}")
    return 0


# ---------------------------------------------------------------------------
# bench

BENCH_CSV_HEADER = (
    "size,scale,seconds,fps,net_seconds,asm_bytes,generator_bytes,"
    "encoder_bytes,merge_sr_bytes,autodiff_tape_bytes"
)


def cmd_bench(args) -> int:
    cfg = _run_config(args)
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    scales = [int(s) for s in args.scales.split(",") if s.strip()]
    for r in scales:
        if r not in (1, 2, 4):
            raise ConfigurationError(f"scales: {r} is not one of (1, 2, 4)")
    for n in sizes:
        for r in scales:
            if n % (4 * r):
                raise ConfigurationError(f"sizes: {n} not divisible by 4 x scale {r}")

    rows = []
    for n in sizes:
        img = _test_pattern(n)
        for r in scales:
            pcfg = dataclasses.replace(
                cfg.pipeline_config(n, n), scale=r,
                use_pyramid=(cfg.pipeline.use_pyramid and r == 4),
            )
            params = optimize.init_pipeline(pcfg, cfg.trainer.seed)
            ledger = metrics.MemoryLedger(grid=(n, n), scale=r)

            def run_once() -> tuple[float, float]:
                timings: dict[str, float] = {}
                t0 = perf_counter()
                with ad.no_grad():
                    optimize.forward_pipeline(
                        img, params, pcfg, ledger=ledger, timings=timings
                    )
                total = perf_counter() - t0
                net = (
                    timings.get("generator", 0.0)
                    + timings.get("encoder", 0.0)
                    + timings.get("merge_sr", 0.0)
                )
                return total, net

            run_once()  # warm up caches and einsum paths
            samples = [run_once() for _ in range(max(1, args.repeats))]
            totals = sorted(t for t, _ in samples)
            nets = sorted(t for _, t in samples)
            mid = len(samples) // 2
            if len(samples) % 2:
                med_total, med_net = totals[mid], nets[mid]
            else:
                med_total = 0.5 * (totals[mid - 1] + totals[mid])
                med_net = 0.5 * (nets[mid - 1] + nets[mid])
            led = ledger.as_dict()["stages"]
            rows.append({
                "size": n,
                "scale": r,
                "seconds": med_total,
                "fps": (float("inf") if med_total == 0 else 1.0 / med_total),
                "net_seconds": med_net,
                **{f"{s}_bytes": led[s] for s in metrics.LEDGER_STAGES},
            })

    csv_lines = [BENCH_CSV_HEADER]
    for row in rows:
        csv_lines.append(
            f"{row['size']},{row['scale']},{row['seconds']:.6f},{row['fps']:.4f},"
            f"{row['net_seconds']:.6f},{row['asm_bytes']},{row['generator_bytes']},"
            f"{row['encoder_bytes']},{row['merge_sr_bytes']},{row['autodiff_tape_bytes']}"
        )
    text = "\n".join(csv_lines) + "\n"
    if args.csv_out:
        Path(args.csv_out).write_text(text)
    if args.json:
        print(json.dumps(rows, sort_keys=True))
    else:
        print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# oracle-check


def _fd_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function, coordinate by coordinate."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        fp = f()
        flat[i] = keep - h
        fm = f()
        flat[i] = keep
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def _check_dft_oracle() -> None:
    cfg = OpticalConfig(height=32, width=32, distance=1e-3)
    tf = propagation.build_transfer(cfg, pad_factor=2)
    rng = np.random.default_rng(7)
    u = rng.standard_normal((32, 32)) + 1j * rng.standard_normal((32, 32))
    field = ComplexField(u, pitch=cfg.pitch, wavelength=cfg.wavelengths[0])
    fast = propagation.propagate(field, tf).data
    slow = propagation.dft_oracle(field, tf).data
    err = float(np.abs(fast - slow).max())
    if not err < 1e-10:
        raise AssertionError(f"FFT vs direct DFT max abs error {err:.3e} >= 1e-10")


def _check_adjoint() -> None:
    cfg = OpticalConfig(height=16, width=16, distance=2e-3)
    tf = propagation.build_transfer(cfg, pad_factor=2)
    rng = np.random.default_rng(11)
    for _ in range(10):
        x = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
        y = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
        ax = propagation.apply_transfer(x, tf)
        aty = propagation.apply_transfer(y, tf, adjoint=True)
        lhs = np.vdot(ax, y)
        rhs = np.vdot(x, aty)
        rel = abs(lhs - rhs) / max(abs(lhs), 1e-300)
        if not rel < 1e-10:
            raise AssertionError(f"adjoint identity rel error {rel:.3e} >= 1e-10")


def _check_round_trip() -> None:
    cfg = OpticalConfig(height=64, width=64)
    d = 0.9 * full_band_distance(cfg, pad_factor=1)
    rng = np.random.default_rng(13)
    u = rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64))
    fwd = propagation.build_transfer(cfg, d, pad_factor=1)
    back = propagation.build_transfer(cfg, -d, pad_factor=1)
    round_trip = propagation.apply_transfer(propagation.apply_transfer(u, fwd), back)
    err = float(np.abs(round_trip - u).max())
    if not err < 1e-8:
        raise AssertionError(f"round trip max abs error {err:.3e} >= 1e-8")


def _check_grad_ops() -> None:
    rng = np.random.default_rng(17)
    x = ad.Tensor(rng.standard_normal((1, 2, 5, 5)), requires_grad=True)
    w = ad.Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.3, requires_grad=True)
    b = ad.Tensor(rng.standard_normal(3) * 0.1, requires_grad=True)

    def loss() -> float:
        return ad.tsum(ad.square(ad.sigmoid(ad.conv2d(x, w, b)))).item()

    out = ad.tsum(ad.square(ad.sigmoid(ad.conv2d(x, w, b))))
    ad.backward(out)
    for t in (x, w, b):
        fd = _fd_grad(loss, t.data)
        denom = max(float(np.abs(fd).max()), 1e-12)
        rel = float(np.abs(t.grad - fd).max()) / denom
        if not rel < 1e-5:
            raise AssertionError(f"conv2d chain gradient rel error {rel:.3e} >= 1e-5")


def _check_grad_pipeline() -> None:
    cfg = OpticalConfig(height=16, width=16, distance=5e-4)
    pcfg = optimize.PipelineConfig(
        optical=cfg, scale=2, lfmn_features=4, lfmn_blocks=1,
        backbone_width=2, pad_factor=1,
    )
    params = optimize.init_pipeline(pcfg, seed=3)
    rng = np.random.default_rng(19)
    img = np.clip(0.5 + 0.2 * rng.standard_normal((16, 16)), 0.0, 1.0)
    pairs = optimize.pipeline_named_tensors(params)

    def loss_value() -> float:
        with ad.no_grad():
            out = optimize.forward_pipeline(img, params, pcfg)
            return optimize.loss_l2_scaled(out.amp_tensor, img).item()

    for _, p in pairs:
        p.grad = None
    out = optimize.forward_pipeline(img, params, pcfg)
    ad.backward(optimize.loss_l2_scaled(out.amp_tensor, img))

    direction = [np.sign(rng.standard_normal(p.data.shape)) for _, p in pairs]
    h = 1e-6
    analytic = sum(
        float((p.grad * d).sum()) for (_, p), d in zip(pairs, direction) if p.grad is not None
    )
    for (_, p), d in zip(pairs, direction):
        p.data = p.data + h * d
    fp = loss_value()
    for (_, p), d in zip(pairs, direction):
        p.data = p.data - 2.0 * h * d
    fm = loss_value()
    for (_, p), d in zip(pairs, direction):
        p.data = p.data + h * d
    fd = (fp - fm) / (2.0 * h)
    rel = abs(analytic - fd) / max(abs(fd), 1e-12)
    if not rel < 1e-4:
        raise AssertionError(f"pipeline directional gradient rel error {rel:.3e} >= 1e-4")


ORACLE_CHECKS = (
    ("asm-fft-vs-direct-dft", _check_dft_oracle),
    ("asm-adjoint-identity", _check_adjoint),
    ("asm-round-trip", _check_round_trip),
    ("autodiff-op-gradients", _check_grad_ops),
    ("pipeline-gradient", _check_grad_pipeline),
)


def cmd_oracle_check(args) -> int:
    failures = 0
    if args.inject_bug:
        propagation._inject_kernel_bug = True
    try:
        for name, check in ORACLE_CHECKS:
            try:
                check()
            except AssertionError as e:
                failures += 1
                print(f"[FAIL] {name}: {e}")
            else:
                print(f"[ok]   {name}")
    finally:
        propagation._inject_kernel_bug = False
    if failures:
        print(f"{failures} of {len(ORACLE_CHECKS)} oracle checks failed")
        return 1
    print(f"all {len(ORACLE_CHECKS)} oracle checks passed")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="holotile",
        description="Tiled phase-hologram synthesis around full-definition "
        "angular-spectrum propagation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    syn = sub.add_parser("synthesize", help="encode one image into a phase hologram")
    syn.add_argument("--image", required=True, help="input PNG/PGM")
    syn.add_argument("--config", help="YAML run configuration")
    syn.add_argument(
        "--method", default="pipeline", choices=("pipeline", "sgd", "gs", "dpac")
    )
    syn.add_argument("--checkpoint", help="trained parameters for --method pipeline")
    syn.add_argument("--iters", type=int, default=1000,
                     help="iterations for sgd/gs methods")
    syn.add_argument("--channels", help="comma list from r,g,b,gray (default: config)")
    syn.add_argument("--parallel-channels", action="store_true",
                     help="run color channels on worker threads")
    syn.add_argument("--out-dir")
    syn.add_argument("--seed", type=int)
    syn.add_argument("--json", action="store_true")
    syn.set_defaults(func=cmd_synthesize)

    tr = sub.add_parser("train", help="train pipeline parameters on an image folder")
    tr.add_argument("--dataset-dir", required=True)
    tr.add_argument("--config")
    tr.add_argument("--steps", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--checkpoint-out")
    tr.add_argument("--resume-from", help="checkpoint to continue from")
    tr.add_argument("--loss-csv")
    tr.add_argument("--out-dir")
    tr.add_argument("--json", action="store_true")
    tr.set_defaults(func=cmd_train)

    ab = sub.add_parser("ablate", help="compare merge/propagation ablations")
    ab.add_argument("--scenario", required=True,
                    help="one of %s or 'all'" % (ABLATION_SCENARIOS,))
    ab.add_argument("--checkpoint", required=True)
    ab.add_argument("--image")
    ab.add_argument("--dataset-dir")
    ab.add_argument("--config")
    ab.add_argument("--csv-out")
    ab.add_argument("--json", action="store_true")
    ab.set_defaults(func=cmd_ablate)

    be = sub.add_parser("bench", help="time the pipeline across sizes and scales")
    be.add_argument("--sizes", default="128,256")
    be.add_argument("--scales", default="1,2,4")
    be.add_argument("--repeats", type=int, default=5)
    be.add_argument("--config")
    be.add_argument("--csv-out")
    be.add_argument("--json", action="store_true")
    be.set_defaults(func=cmd_bench)

    oc = sub.add_parser("oracle-check", help="run the numerical oracle suite")
    oc.add_argument("--inject-bug", action="store_true", help=argparse.SUPPRESS)
    oc.set_defaults(func=cmd_oracle_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as e:
        _error_line("config", e)
        return 2
    except (DataFileError, OSError) as e:
        _error_line("io", e)
        return 3
    except HolotileError as e:
        _error_line("runtime", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
