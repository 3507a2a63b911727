"""End-to-end hologram pipeline, losses, Adam, the desk-scale trainer, and
iterative baselines (direct phase optimization and alternating projection).

The pipeline instantiates the tile-then-merge strategy around full-definition
propagation: the image is unshuffled into r^2 tiles, the generator predicts
per-tile target phases, the assembled complex field is propagated to the SLM
plane at full definition, the encoder turns the unshuffled field tiles into
phase sub-holograms, and the merge network combines them into one SLM phase
map whose back-propagated amplitude is compared against the target.
"""

from __future__ import annotations

import math
from contextlib import contextmanager, nullcontext
from dataclasses import dataclass, field
from time import perf_counter

import numpy as np

from . import autodiff as ad
from . import nnets, propagation
from .autodiff import Tensor
from .encoding import PhaseMap, as_phase_map
from .errors import ConfigurationError, DimensionError, DomainError
from .metrics import MemoryLedger
from .nnets import BackboneParams, LfmnParams, PyramidParams, named_tensors
from .wavefield import OpticalConfig, wrap_phase

VARIANTS = ("full", "sr-none", "no-grn", "no-lfm", "no-eccm", "asm-low-def")

LOSSES = ("mse", "l2_scaled")


@dataclass(frozen=True)
class PipelineConfig:
    """Static configuration of one pipeline instance."""

    optical: OpticalConfig
    scale: int = 2
    use_pyramid: bool = False
    loss: str = "l2_scaled"
    lfmn_features: int = 32
    lfmn_blocks: int = 4
    backbone_width: int = 32
    pad_factor: int = 2
    channel: int = 0

    def __post_init__(self):
        if self.scale not in (1, 2, 4):
            raise ConfigurationError(f"scale must be 1, 2 or 4, got {self.scale}")
        if self.use_pyramid and self.scale != 4:
            raise ConfigurationError("pyramid merge requires scale 4")
        if self.loss not in LOSSES:
            raise ConfigurationError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.pad_factor not in (1, 2):
            raise ConfigurationError(f"pad_factor must be 1 or 2, got {self.pad_factor}")
        if self.lfmn_features < 2 or self.lfmn_features % 2:
            raise ConfigurationError("lfmn_features must be an even count >= 2")
        if self.lfmn_blocks < 0:
            raise ConfigurationError("lfmn_blocks must be >= 0")
        if self.backbone_width < 1:
            raise ConfigurationError("backbone_width must be >= 1")
        if not 0 <= self.channel < len(self.optical.wavelengths):
            raise ConfigurationError(
                f"channel {self.channel} out of range for "
                f"{len(self.optical.wavelengths)} wavelengths"
            )


@dataclass
class PipelineParams:
    generator: BackboneParams
    encoder: BackboneParams
    merge: LfmnParams | PyramidParams | None


def init_pipeline(cfg: PipelineConfig, seed: int = 0) -> PipelineParams:
    rng = np.random.default_rng(seed)
    r2 = cfg.scale * cfg.scale
    generator = nnets.init_backbone(rng, r2, r2, cfg.backbone_width)
    encoder = nnets.init_backbone(rng, 2 * r2, r2, cfg.backbone_width)
    if cfg.scale == 1:
        merge = None
    elif cfg.use_pyramid:
        merge = nnets.init_pyramid(rng, cfg.lfmn_features, cfg.lfmn_blocks)
    else:
        merge = nnets.init_lfmn(rng, cfg.scale, cfg.lfmn_features, cfg.lfmn_blocks)
    return PipelineParams(generator, encoder, merge)


def pipeline_named_tensors(params: PipelineParams) -> list[tuple[str, Tensor]]:
    pairs = named_tensors(params.generator, "generator")
    pairs += named_tensors(params.encoder, "encoder")
    if params.merge is not None:
        pairs += named_tensors(params.merge, "merge")
    return pairs


def zero_params(params: PipelineParams) -> PipelineParams:
    """Zero every learnable value in place (structural-degeneracy helper)."""
    for _, t in pipeline_named_tensors(params):
        t.data = np.zeros_like(t.data)
    return params


# ---------------------------------------------------------------------------
# complex-field plumbing on the tape
#
# Complex fields ride through autodiff as (N, 2, H, W) real tensors with
# channel 0 = real part, channel 1 = imaginary part.


def propagate_t(x: Tensor, tf: propagation.TransferFunction) -> Tensor:
    """Bridge the propagation operator onto the tape.

    The map is complex-linear, so the vector-Jacobian product of its
    realified form is exactly the realified adjoint operator (conjugate
    kernel); no finite differences or approximations are involved.
    """
    if x.data.ndim != 4 or x.data.shape[1] != 2:
        raise DimensionError(f"expected a (N, 2, H, W) field tensor, got {x.data.shape}")

    def through(data: np.ndarray, adjoint: bool) -> np.ndarray:
        out = np.empty_like(data)
        for n in range(data.shape[0]):
            u = data[n, 0] + 1j * data[n, 1]
            v = propagation.apply_transfer(u, tf, adjoint=adjoint)
            out[n, 0] = v.real
            out[n, 1] = v.imag
        return out

    return ad.custom_op(
        through(x.data, False), (x,), lambda g: (through(g, True),)
    )


def phase_to_field(phi: Tensor, amplitude: Tensor | None = None) -> Tensor:
    """exp(j phi) as a (N, 2, H, W) tensor, optionally amplitude-modulated."""
    re = ad.cos(phi)
    im = ad.sin(phi)
    if amplitude is not None:
        re = amplitude * re
        im = amplitude * im
    return ad.concat_c([re, im])


def field_modulus(u: Tensor) -> Tensor:
    return ad.complex_modulus(ad.slice_c(u, 0, 1), ad.slice_c(u, 1, 2))


# ---------------------------------------------------------------------------
# losses


def _as_target(target, like: Tensor) -> Tensor:
    if isinstance(target, Tensor):
        t = target
    else:
        t = Tensor(np.asarray(target, dtype=float))
    if t.data.shape != like.data.shape:
        if t.data.size != like.data.size:
            raise DimensionError(
                f"target shape {t.data.shape} incompatible with {like.data.shape}"
            )
        t = Tensor(t.data.reshape(like.data.shape))
    return t


def loss_mse(recon: Tensor, target) -> Tensor:
    t = _as_target(target, recon)
    return ad.tmean(ad.square(recon - t))


def scale_factor(amp: Tensor, target) -> Tensor:
    """Closed-form scalar s minimizing ||s * amp - target||^2."""
    t = _as_target(target, amp)
    return ad.tsum(amp * t) / ad.tsum(ad.square(amp))


def loss_l2_scaled(amp: Tensor, target) -> Tensor:
    """Scale-invariant L2: MSE after the optimal global scale."""
    t = _as_target(target, amp)
    return loss_mse(amp * scale_factor(amp, t), t)


# ---------------------------------------------------------------------------
# forward pipeline


@dataclass
class PipelineResult:
    slm_phase: np.ndarray       # (H, W), wrapped to (-pi, pi]
    reconstruction: np.ndarray  # (H, W), scale-optimal amplitude
    scale: float
    amp_tensor: Tensor          # (1, 1, H, W) unscaled amplitude, on-tape
    recon_tensor: Tensor        # (1, 1, H, W) scaled amplitude, on-tape

    @property
    def phase_map(self) -> PhaseMap:
        return PhaseMap(self.slm_phase)


@contextmanager
def _asm_section(ledger: MemoryLedger | None):
    if ledger is None:
        yield
        return
    start = ad.bytes_created()
    extra = [0]
    with propagation.count_buffer_bytes(lambda n: extra.__setitem__(0, extra[0] + n)):
        yield
    ledger.record("asm", ad.bytes_created() - start + extra[0])


@contextmanager
def _timed(timings: dict | None, stage: str):
    if timings is None:
        yield
        return
    t0 = perf_counter()
    try:
        yield
    finally:
        timings[stage] = timings.get(stage, 0.0) + (perf_counter() - t0)


def forward_pipeline(
    image: np.ndarray,
    params: PipelineParams,
    cfg: PipelineConfig,
    *,
    variant: str = "full",
    ledger: MemoryLedger | None = None,
    timings: dict | None = None,
) -> PipelineResult:
    """Run the tile/propagate/merge pipeline on one image.

    ``variant`` selects evaluation-time ablations: "sr-none" bypasses the
    merge network with a plain pixel shuffle; "no-grn"/"no-lfm"/"no-eccm"
    drop one merge component; "asm-low-def" propagates each sub-hologram
    separately on the coarse grid (pitch scaled by r) and shuffles the
    resulting amplitudes instead of merging before propagation.
    """
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise DimensionError(f"image must be 2-D, got shape {img.shape}")
    opt = cfg.optical
    if img.shape != (opt.height, opt.width):
        raise ConfigurationError(
            f"image shape {img.shape} does not match optical grid "
            f"{(opt.height, opt.width)}"
        )
    r = cfg.scale
    if img.shape[0] % r or img.shape[1] % r:
        raise DimensionError(f"image dims {img.shape} not divisible by scale {r}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise DomainError("image values must lie in [0, 1]")

    tf_fwd = propagation.build_transfer(opt, opt.distance, cfg.pad_factor, cfg.channel)
    tf_back = propagation.build_transfer(opt, -opt.distance, cfg.pad_factor, cfg.channel)

    measure = ledger.measure if ledger is not None else (lambda stage: nullcontext())
    target_t = Tensor(img[None, None])

    # target-plane phase prediction on tiles
    with _timed(timings, "generator"), measure("generator"):
        tiles = ad.pixel_unshuffle_t(target_t, r)
        gen_phases = nnets.generator_forward(tiles, params.generator)
    with _timed(timings, "asm"), _asm_section(ledger):
        phi_full = ad.pixel_shuffle_t(gen_phases, r)
        u_target = phase_to_field(phi_full, amplitude=target_t)
        u_slm = propagate_t(u_target, tf_fwd)

    # phase-only encoding on tiles
    with _timed(timings, "encoder"), measure("encoder"):
        slm_tiles = ad.pixel_unshuffle_t(u_slm, r)
        enc_phases = nnets.encoder_forward(slm_tiles, params.encoder)

    if variant == "asm-low-def":
        # propagate every sub-hologram on its own coarse grid, then shuffle
        # the reconstructed amplitudes; no merge, no full-definition pass.
        low = OpticalConfig(
            pitch=opt.pitch * r,
            wavelengths=opt.wavelengths,
            distance=opt.distance,
            height=opt.height // r,
            width=opt.width // r,
        )
        tf_low = propagation.build_transfer(low, -opt.distance, cfg.pad_factor, cfg.channel)
        with _timed(timings, "asm"), _asm_section(ledger):
            amps = []
            for c in range(r * r):
                phi_c = ad.slice_c(enc_phases, c, c + 1)
                u_c = propagate_t(phase_to_field(phi_c), tf_low)
                amps.append(field_modulus(u_c))
            amp = ad.pixel_shuffle_t(ad.concat_c(amps), r)
        phi_slm = ad.pixel_shuffle_t(enc_phases, r)
    else:
        skip = {
            "skip_grn": variant == "no-grn",
            "skip_lfm": variant == "no-lfm",
            "skip_eccm": variant == "no-eccm",
        }
        with _timed(timings, "merge_sr"), measure("merge_sr"):
            if r == 1 or variant == "sr-none" or params.merge is None:
                phi_slm = ad.pixel_shuffle_t(enc_phases, r)
            elif isinstance(params.merge, PyramidParams):
                phi_slm = nnets.pyramid_merge(enc_phases, params.merge, **skip)
            else:
                phi_slm = nnets.lfmn_forward(enc_phases, params.merge, **skip)
        with _timed(timings, "asm"), _asm_section(ledger):
            u_rec = propagate_t(phase_to_field(phi_slm), tf_back)
            amp = field_modulus(u_rec)

    s = scale_factor(amp, target_t)
    recon = amp * s
    return PipelineResult(
        slm_phase=wrap_phase(phi_slm.data[0, 0].copy()),
        reconstruction=recon.data[0, 0].copy(),
        scale=s.item(),
        amp_tensor=amp,
        recon_tensor=recon,
    )


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(pairs: list[tuple[str, Tensor]], state: AdamState) -> AdamState:
    """One bias-corrected Adam update over named parameters (in place)."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in pairs:
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise DimensionError(
                f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name}"
            )
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    params: PipelineParams
    losses: list[float]
    adam: AdamState
    next_step: int


def train(
    dataset: list[np.ndarray],
    cfg: PipelineConfig,
    steps: int,
    seed: int = 0,
    *,
    params: PipelineParams | None = None,
    adam: AdamState | None = None,
    start_step: int = 0,
    lr: float = 5e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    variant: str = "full",
    ledger: MemoryLedger | None = None,
) -> TrainResult:
    """Deterministic full-dataset training loop.

    Each step sweeps the whole dataset once — independent 50% horizontal and
    vertical flips per image, forward, loss, backward — and takes a single
    Adam step on the dataset-mean gradient. Averaging matters: per-image
    gradients of the phase-retrieval loss are close to orthogonal across
    images, so one-image-at-a-time updates at this scale wander without
    making net progress, while the averaged direction descends steadily.

    The flip stream for step k is drawn from ``default_rng([seed, k])`` in
    dataset order, so it depends only on the absolute step index. Together
    with the Adam moments living in the state object this makes resuming
    from a checkpoint at step k reproduce the uninterrupted run bit for bit.
    """
    if not dataset:
        raise ConfigurationError("training dataset is empty")
    if params is None:
        params = init_pipeline(cfg, seed)
    if adam is None:
        adam = AdamState(lr=lr, beta1=beta1, beta2=beta2)
    pairs = pipeline_named_tensors(params)
    losses: list[float] = []
    for step in range(start_step, start_step + steps):
        rng = np.random.default_rng([seed, step])
        grad_sum = [np.zeros_like(p.data) for _, p in pairs]
        loss_sum = 0.0
        for img in dataset:
            if rng.random() < 0.5:
                img = img[:, ::-1]
            if rng.random() < 0.5:
                img = img[::-1, :]
            img = np.ascontiguousarray(img)
            for _, p in pairs:
                p.grad = None
            out = forward_pipeline(img, params, cfg, variant=variant, ledger=ledger)
            if cfg.loss == "mse":
                loss = loss_mse(out.recon_tensor, img)
            else:
                loss = loss_l2_scaled(out.amp_tensor, img)
            tape_ctx = ledger.measure("autodiff_tape") if ledger is not None else nullcontext()
            with tape_ctx:
                ad.backward(loss)
            loss_sum += loss.item()
            for acc, (_, p) in zip(grad_sum, pairs):
                if p.grad is not None:
                    acc += p.grad
        inv = 1.0 / len(dataset)
        for acc, (_, p) in zip(grad_sum, pairs):
            p.grad = acc * inv
        adam_step(pairs, adam)
        losses.append(loss_sum * inv)
    return TrainResult(params, losses, adam, start_step + steps)


# ---------------------------------------------------------------------------
# checkpoints (parameters + optimizer state + shape metadata in one container)


def save_checkpoint(
    path,
    params: PipelineParams,
    cfg: PipelineConfig,
    adam: AdamState | None = None,
    step: int = 0,
) -> None:
    arrays: dict[str, np.ndarray] = {
        name: t.data for name, t in pipeline_named_tensors(params)
    }
    arrays["meta.scale"] = np.array([cfg.scale], dtype=float)
    arrays["meta.use_pyramid"] = np.array([1.0 if cfg.use_pyramid else 0.0])
    arrays["meta.lfmn_features"] = np.array([cfg.lfmn_features], dtype=float)
    arrays["meta.lfmn_blocks"] = np.array([cfg.lfmn_blocks], dtype=float)
    arrays["meta.backbone_width"] = np.array([cfg.backbone_width], dtype=float)
    arrays["meta.step"] = np.array([step], dtype=float)
    if adam is not None:
        arrays["adam.step"] = np.array([adam.step], dtype=float)
        arrays["adam.hyper"] = np.array([adam.lr, adam.beta1, adam.beta2, adam.eps])
        for name, _ in pipeline_named_tensors(params):
            if name in adam.m:
                arrays[f"adam.m.{name}"] = adam.m[name]
                arrays[f"adam.v.{name}"] = adam.v[name]
    nnets.save_arrays(path, arrays)


def load_checkpoint(path) -> tuple[PipelineParams, dict, AdamState | None]:
    """Rebuild parameters (and optimizer state, if present) from a container.

    Returns (params, meta, adam) where meta holds the architecture numbers
    needed to reconstruct a matching PipelineConfig.
    """
    arrays = nnets.load_arrays(path)
    try:
        meta = {
            "scale": int(arrays["meta.scale"][0]),
            "use_pyramid": bool(arrays["meta.use_pyramid"][0]),
            "lfmn_features": int(arrays["meta.lfmn_features"][0]),
            "lfmn_blocks": int(arrays["meta.lfmn_blocks"][0]),
            "backbone_width": int(arrays["meta.backbone_width"][0]),
            "step": int(arrays["meta.step"][0]),
        }
    except KeyError as e:
        raise ConfigurationError(f"checkpoint missing metadata entry {e}") from None
    rng = np.random.default_rng(0)
    r = meta["scale"]
    r2 = r * r
    params = PipelineParams(
        generator=nnets.init_backbone(rng, r2, r2, meta["backbone_width"]),
        encoder=nnets.init_backbone(rng, 2 * r2, r2, meta["backbone_width"]),
        merge=(
            None
            if r == 1
            else nnets.init_pyramid(rng, meta["lfmn_features"], meta["lfmn_blocks"])
            if meta["use_pyramid"]
            else nnets.init_lfmn(rng, r, meta["lfmn_features"], meta["lfmn_blocks"])
        ),
    )
    nnets.load_into(params.generator, arrays, "generator")
    nnets.load_into(params.encoder, arrays, "encoder")
    if params.merge is not None:
        nnets.load_into(params.merge, arrays, "merge")
    adam = None
    if "adam.step" in arrays:
        hyper = arrays["adam.hyper"]
        adam = AdamState(
            lr=float(hyper[0]),
            beta1=float(hyper[1]),
            beta2=float(hyper[2]),
            eps=float(hyper[3]),
            step=int(arrays["adam.step"][0]),
        )
        for name, t in pipeline_named_tensors(params):
            mk = f"adam.m.{name}"
            if mk in arrays:
                adam.m[name] = np.ascontiguousarray(arrays[mk], dtype=t.data.dtype)
                adam.v[name] = np.ascontiguousarray(arrays[f"adam.v.{name}"], dtype=t.data.dtype)
    return params, meta, adam


# ---------------------------------------------------------------------------
# iterative baselines


def _validate_target(target: np.ndarray, opt: OpticalConfig) -> np.ndarray:
    t = np.asarray(target, dtype=float)
    if t.shape != (opt.height, opt.width):
        raise ConfigurationError(
            f"target shape {t.shape} does not match optical grid "
            f"{(opt.height, opt.width)}"
        )
    if t.min() < 0.0 or t.max() > 1.0:
        raise DomainError("target values must lie in [0, 1]")
    return t


def _seeded_phase(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    # uniform over (-pi, pi]
    return np.pi - rng.uniform(0.0, 2.0 * np.pi, size=shape)


def phase_loss_and_grad(
    phi: np.ndarray, target: np.ndarray, tf: propagation.TransferFunction
) -> tuple[float, np.ndarray]:
    """Scale-invariant L2 loss of |P exp(j phi)| against ``target`` and its
    exact gradient with respect to phi.

    With u = exp(j phi), u_t = P u, A = |u_t| and the optimal scale s held
    fixed (it is stationary, so its derivative contributes nothing), the
    chain is: g_A = 2 s (s A - T) / N; the Wirtinger gradient at the target
    plane is W_t = g_A * u_t / (2 A); pulling back through the linear
    propagator gives W = P^H W_t; and d loss / d phi = 2 Im(conj(u) * W).
    """
    u = np.exp(1j * phi)
    ut = propagation.apply_transfer(u, tf)
    amp = np.abs(ut)
    den = float((amp * amp).sum())
    s = float((amp * target).sum() / den) if den > 0 else 1.0
    resid = s * amp - target
    loss = float(np.mean(resid**2))
    g_amp = (2.0 * s / target.size) * resid
    safe = np.where(amp > 0, amp, 1.0)
    wt = g_amp * ut / (2.0 * safe)
    w = propagation.apply_transfer(wt, tf, adjoint=True)
    grad = 2.0 * np.imag(np.conj(u) * w)
    return loss, grad


def sgd_hologram(
    target: np.ndarray,
    cfg: PipelineConfig,
    iters: int,
    seed: int = 0,
    lr: float = 0.05,
) -> PhaseMap:
    """Directly optimize an unconstrained SLM phase map with Adam.

    The backbone-free baseline: the hologram exp(j phi) is propagated back to
    the target plane and phi follows the exact scale-invariant L2 gradient.
    ``lr`` defaults to a phase-scale step size; the network-weight default
    of 5e-4 is far too small for raw radians.
    """
    opt = cfg.optical
    t = _validate_target(target, opt)
    tf = propagation.build_transfer(opt, -opt.distance, cfg.pad_factor, cfg.channel)
    rng = np.random.default_rng(seed)
    phi = _seeded_phase(rng, t.shape)
    m = np.zeros_like(phi)
    v = np.zeros_like(phi)
    b1, b2, eps = 0.9, 0.999, 1e-8
    for it in range(1, iters + 1):
        _, g = phase_loss_and_grad(phi, t, tf)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        phi = phi - lr * (m / (1.0 - b1**it)) / (np.sqrt(v / (1.0 - b2**it)) + eps)
    return as_phase_map(phi)


def gs_iterate(
    target: np.ndarray,
    cfg: PipelineConfig,
    iters: int,
    seed: int = 0,
) -> PhaseMap:
    """Alternating projections between the amplitude constraints.

    Target plane: impose the target amplitude, keep phase. SLM plane: impose
    unit amplitude, keep phase. The returned map is the SLM phase.
    """
    opt = cfg.optical
    t = _validate_target(target, opt)
    tf_back = propagation.build_transfer(opt, -opt.distance, cfg.pad_factor, cfg.channel)
    tf_fwd = propagation.build_transfer(opt, opt.distance, cfg.pad_factor, cfg.channel)
    rng = np.random.default_rng(seed)
    phi = _seeded_phase(rng, t.shape)
    for _ in range(iters):
        u_t = propagation.apply_transfer(np.exp(1j * phi), tf_back)
        u_t = t * np.exp(1j * np.angle(u_t))
        u_s = propagation.apply_transfer(u_t, tf_fwd)
        phi = np.angle(u_s)
    return as_phase_map(phi)


def reconstruct_from_phase(
    phase: np.ndarray,
    cfg: PipelineConfig,
    target: np.ndarray | None = None,
) -> np.ndarray:
    """Back-propagate exp(j phase) and return the (optionally scale-fitted)
    reconstruction amplitude."""
    opt = cfg.optical
    phase = np.asarray(phase, dtype=float)
    if phase.shape != (opt.height, opt.width):
        raise ConfigurationError(
            f"phase shape {phase.shape} does not match optical grid "
            f"{(opt.height, opt.width)}"
        )
    tf = propagation.build_transfer(opt, -opt.distance, cfg.pad_factor, cfg.channel)
    amp = np.abs(propagation.apply_transfer(np.exp(1j * phase), tf))
    if target is None:
        return amp
    den = float((amp * amp).sum())
    s = float((amp * np.asarray(target, dtype=float)).sum() / den) if den > 0 else 1.0
    return s * amp
