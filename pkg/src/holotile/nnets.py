"""Network components: phase generator/encoder backbones, the LFMN merge
network, and the two-stage pyramid merge.

All forwards are pure functions of (input tensor, parameter container); the
containers are plain dataclasses of :class:`~holotile.autodiff.Tensor` leaves,
walked generically for checkpointing and optimizer state. Initialization is
Kaiming-uniform (fan-in) for conv weights, zeros for biases, and zeros for the
GRN gain/offset so that normalization starts as an exact identity — with every
learnable value zero the whole merge network collapses to a plain pixel
shuffle, which several tests rely on.
"""

from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import tiling
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError

LEAKY_SLOPE = 0.1


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class ConvParams:
    """One convolution layer; ``w`` is (out, in, k, k), or (in, out, k, k) when
    ``transposed``."""

    w: Tensor
    b: Tensor
    transposed: bool = False


@dataclass
class LfmParams:
    reduce: ConvParams   # C -> C/2
    mix: ConvParams      # C/2 -> C/2
    expand: ConvParams   # C/2 -> C


@dataclass
class EccmParams:
    expand: ConvParams   # C -> floor(1.25 C)
    project: ConvParams  # floor(1.25 C) -> C


@dataclass
class LfmmParams:
    lfm: LfmParams
    eccm: EccmParams


@dataclass
class LfmnParams:
    """Merge network turning r^2 sub-maps into one full-definition map."""

    scale: int
    head: ConvParams          # r^2 -> C
    grn_gamma: Tensor         # (C, 1, 1)
    grn_beta: Tensor          # (C, 1, 1)
    blocks: list[LfmmParams] = field(default_factory=list)
    tail: ConvParams = None   # C -> r^2

    @property
    def features(self) -> int:
        return self.head.w.data.shape[0]


@dataclass
class BackboneParams:
    """Small encoder-decoder with stride-2 downs, transposed-conv ups and
    additive skip connections; used for both the phase generator and the
    phase encoder (they differ only in channel counts)."""

    stem: ConvParams   # cin -> w
    down1: ConvParams  # w -> 2w, stride 2
    down2: ConvParams  # 2w -> 4w, stride 2
    up1: ConvParams    # 4w -> 2w, transposed x2
    up2: ConvParams    # 2w -> w, transposed x2
    head: ConvParams   # w -> cout

    @property
    def width(self) -> int:
        return self.stem.w.data.shape[0]


@dataclass
class PyramidParams:
    """Two-stage x2/x2 merge for r = 4: stage 1 is one parameter set applied
    to all four tile groups; stage 2 is an independent network."""

    stage1: LfmnParams
    stage2: LfmnParams


# ---------------------------------------------------------------------------
# initialization


def _kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_conv(
    rng: np.random.Generator, cin: int, cout: int, k: int, transposed: bool = False
) -> ConvParams:
    fan_in = cin * k * k
    shape = (cin, cout, k, k) if transposed else (cout, cin, k, k)
    w = Tensor(_kaiming_uniform(rng, shape, fan_in), requires_grad=True)
    b = Tensor(np.zeros(cout), requires_grad=True)
    return ConvParams(w, b, transposed)


def _zero_conv(cin: int, cout: int, k: int, transposed: bool = False) -> ConvParams:
    shape = (cin, cout, k, k) if transposed else (cout, cin, k, k)
    return ConvParams(
        Tensor(np.zeros(shape), requires_grad=True),
        Tensor(np.zeros(cout), requires_grad=True),
        transposed,
    )


def init_lfmn(
    rng: np.random.Generator, scale: int, features: int = 32, blocks: int = 4
) -> LfmnParams:
    if features % 2:
        raise ConfigurationError(f"LFMN feature count must be even, got {features}")
    r2 = scale * scale
    half = features // 2
    wide = int(1.25 * features)
    blks = [
        LfmmParams(
            lfm=LfmParams(
                reduce=init_conv(rng, features, half, 3),
                mix=init_conv(rng, half, half, 3),
                expand=init_conv(rng, half, features, 3),
            ),
            eccm=EccmParams(
                expand=init_conv(rng, features, wide, 3),
                project=init_conv(rng, wide, features, 3),
            ),
        )
        for _ in range(blocks)
    ]
    return LfmnParams(
        scale=scale,
        head=init_conv(rng, r2, features, 3),
        grn_gamma=Tensor(np.zeros((features, 1, 1)), requires_grad=True),
        grn_beta=Tensor(np.zeros((features, 1, 1)), requires_grad=True),
        blocks=blks,
        tail=init_conv(rng, features, r2, 3),
    )


def zero_lfmn(scale: int, features: int = 32, blocks: int = 4) -> LfmnParams:
    """All-zero merge network: forward is exactly a pixel shuffle."""
    if features % 2:
        raise ConfigurationError(f"LFMN feature count must be even, got {features}")
    r2 = scale * scale
    half = features // 2
    wide = int(1.25 * features)
    blks = [
        LfmmParams(
            lfm=LfmParams(
                reduce=_zero_conv(features, half, 3),
                mix=_zero_conv(half, half, 3),
                expand=_zero_conv(half, features, 3),
            ),
            eccm=EccmParams(
                expand=_zero_conv(features, wide, 3),
                project=_zero_conv(wide, features, 3),
            ),
        )
        for _ in range(blocks)
    ]
    return LfmnParams(
        scale=scale,
        head=_zero_conv(r2, features, 3),
        grn_gamma=Tensor(np.zeros((features, 1, 1)), requires_grad=True),
        grn_beta=Tensor(np.zeros((features, 1, 1)), requires_grad=True),
        blocks=blks,
        tail=_zero_conv(features, r2, 3),
    )


def init_backbone(
    rng: np.random.Generator, cin: int, cout: int, width: int = 32
) -> BackboneParams:
    w = width
    return BackboneParams(
        stem=init_conv(rng, cin, w, 3),
        down1=init_conv(rng, w, 2 * w, 3),
        down2=init_conv(rng, 2 * w, 4 * w, 3),
        up1=init_conv(rng, 4 * w, 2 * w, 4, transposed=True),
        up2=init_conv(rng, 2 * w, w, 4, transposed=True),
        head=init_conv(rng, w, cout, 3),
    )


def init_pyramid(rng: np.random.Generator, features: int = 32, blocks: int = 4) -> PyramidParams:
    return PyramidParams(
        stage1=init_lfmn(rng, 2, features, blocks),
        stage2=init_lfmn(rng, 2, features, blocks),
    )


# ---------------------------------------------------------------------------
# forwards


def _conv(x: Tensor, p: ConvParams, stride: int = 1) -> Tensor:
    if p.transposed:
        return ad.conv_transpose2d(x, p.w, p.b, stride=stride, padding=1)
    return ad.conv2d(x, p.w, p.b, stride=stride)


def lfm_forward(x: Tensor, p: LfmParams) -> Tensor:
    """Sigmoid-gated attention product; the caller adds the residual."""
    c = x.data.shape[1]
    if c % 2:
        raise ConfigurationError(f"LFM needs an even channel count, got {c}")
    a = ad.leaky_relu(_conv(x, p.reduce), LEAKY_SLOPE)
    a = ad.leaky_relu(_conv(a, p.mix), LEAKY_SLOPE)
    att = ad.sigmoid(_conv(a, p.expand))
    return x * att


def eccm_forward(x: Tensor, p: EccmParams) -> Tensor:
    """Channel mixer with 1.25x expansion; the caller adds the residual."""
    h = ad.leaky_relu(_conv(x, p.expand), LEAKY_SLOPE)
    return _conv(h, p.project)


def lfmm_forward(x: Tensor, p: LfmmParams) -> Tensor:
    x = lfm_forward(x, p.lfm) + x
    return eccm_forward(x, p.eccm) + x


def lfmn_forward(
    x: Tensor,
    p: LfmnParams,
    *,
    skip_grn: bool = False,
    skip_lfm: bool = False,
    skip_eccm: bool = False,
) -> Tensor:
    """Merge r^2 sub-maps (N, r^2, h, w) into one (N, 1, h r, w r) map.

    The tail output is added to the input stack before the final pixel
    shuffle, so the all-zero-parameter network is exactly a pixel shuffle.
    The ``skip_*`` switches disable individual components at evaluation time
    for ablations; they change the forward graph only.
    """
    r = p.scale
    if x.data.shape[1] != r * r:
        raise DimensionError(
            f"merge expects {r * r} channels for scale {r}, got {x.data.shape[1]}"
        )
    f = _conv(x, p.head)
    if not skip_grn:
        f = ad.grn(f, p.grn_gamma, p.grn_beta)
    for blk in p.blocks:
        if not skip_lfm:
            f = lfm_forward(f, blk.lfm) + f
        if not skip_eccm:
            f = eccm_forward(f, blk.eccm) + f
    pre = _conv(f, p.tail) + x
    return ad.pixel_shuffle_t(pre, r)


def backbone_forward(x: Tensor, p: BackboneParams) -> Tensor:
    """Encoder-decoder forward; spatial dims must be divisible by 4."""
    h, w = x.data.shape[2], x.data.shape[3]
    if h % 4 or w % 4:
        raise DimensionError(f"backbone needs dims divisible by 4, got {(h, w)}")
    s = ad.leaky_relu(_conv(x, p.stem), LEAKY_SLOPE)
    d1 = ad.leaky_relu(_conv(s, p.down1, stride=2), LEAKY_SLOPE)
    d2 = ad.leaky_relu(_conv(d1, p.down2, stride=2), LEAKY_SLOPE)
    u1 = ad.leaky_relu(_conv(d2, p.up1, stride=2), LEAKY_SLOPE) + d1
    u2 = ad.leaky_relu(_conv(u1, p.up2, stride=2), LEAKY_SLOPE) + s
    return _conv(u2, p.head)


generator_forward = backbone_forward
encoder_forward = backbone_forward


def pyramid_merge(
    x: Tensor,
    p: PyramidParams,
    *,
    skip_grn: bool = False,
    skip_lfm: bool = False,
    skip_eccm: bool = False,
) -> Tensor:
    """Merge 16 sub-maps (N, 16, h, w) into (N, 1, 4h, 4w) in two x2 stages.

    Stage 1 applies one shared parameter set to each of the four tile groups;
    stage 2 merges the four stage-1 maps. With all parameters zero this
    reduces to two nested pixel shuffles, which equals the direct x4 shuffle.
    """
    if x.data.shape[1] != 16:
        raise DimensionError(f"pyramid merge expects 16 channels, got {x.data.shape[1]}")
    kw = dict(skip_grn=skip_grn, skip_lfm=skip_lfm, skip_eccm=skip_eccm)
    groups = tiling.pyramid_group_indices()
    stage1 = [lfmn_forward(ad.gather_c(x, g), p.stage1, **kw) for g in groups]
    stacked = ad.concat_c(stage1)
    return lfmn_forward(stacked, p.stage2, **kw)


# ---------------------------------------------------------------------------
# parameter tree walking


def named_tensors(obj, prefix: str = "") -> list[tuple[str, Tensor]]:
    """Flatten a parameter container into (name, tensor) pairs, depth-first in
    field order — a fixed, deterministic ordering shared by the optimizer and
    the checkpoint format."""
    out: list[tuple[str, Tensor]] = []
    if isinstance(obj, Tensor):
        out.append((prefix, obj))
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, (Tensor, list)) or dataclasses.is_dataclass(v):
                out.extend(named_tensors(v, f"{prefix}.{f.name}" if prefix else f.name))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            out.extend(named_tensors(v, f"{prefix}.{i}"))
    return out


def load_into(obj, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
    """Copy named arrays into an existing parameter container (shape-checked)."""
    pairs = named_tensors(obj, prefix)
    names = {n for n, _ in pairs}
    missing = names - set(arrays)
    if missing:
        raise ConfigurationError(f"checkpoint missing arrays: {sorted(missing)[:4]} ...")
    for name, t in pairs:
        a = arrays[name]
        if a.shape != t.data.shape:
            raise ConfigurationError(
                f"checkpoint array {name!r} has shape {a.shape}, expected {t.data.shape}"
            )
        t.data = np.ascontiguousarray(a, dtype=t.data.dtype)


# ---------------------------------------------------------------------------
# checkpoint container
#
# Flat little-endian binary layout:
#   magic     9 bytes  b"HOLOTILE1"
#   count     uint32   number of named arrays
# then per array, in order:
#   name_len  uint16
#   name      utf-8 bytes
#   dtype     uint8    0 = float32, 1 = float64
#   ndim      uint8
#   dims      uint32 x ndim
#   data      raw C-order little-endian values

CHECKPOINT_MAGIC = b"HOLOTILE1"
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(arrays)))
        # sorted entries make the byte stream independent of dict order
        for name in sorted(arrays):
            # asarray keeps 0-d arrays 0-d (ascontiguousarray would not)
            a = np.asarray(arrays[name], order="C")
            if a.dtype == np.float32:
                code, a = 0, a.astype("<f4", copy=False)
            else:
                code, a = 1, a.astype("<f8", copy=False)
            enc = name.encode("utf-8")
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<BB", code, a.ndim))
            fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
            fh.write(a.tobytes())


def load_arrays(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ConfigurationError(
                f"not a parameter checkpoint (bad magic {magic!r}) in {path}"
            )
        (count,) = struct.unpack("<I", fh.read(4))
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            code, ndim = struct.unpack("<BB", fh.read(2))
            if code not in _DTYPE_CODES:
                raise ConfigurationError(f"unknown dtype code {code} in {path}")
            dims = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            dt = _DTYPE_CODES[code]
            n = int(np.prod(dims)) if ndim else 1
            buf = fh.read(n * dt.itemsize)
            if len(buf) != n * dt.itemsize:
                raise ConfigurationError(f"truncated checkpoint {path}")
            out[name] = np.frombuffer(buf, dtype=dt).reshape(dims).copy()
        return out
