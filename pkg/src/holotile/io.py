"""Image and configuration ingestion/egress.

Images: 8/16-bit grayscale or color PNG and PGM in, 8-bit PNG/PGM out.
Configuration: a YAML key-value tree validated field by field; every
violation names the offending path (e.g. ``optical.pitch``). Color work is
three independent single-channel runs, so all image APIs hand out one 2-D
[0, 1] array at a time.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from .encoding import PhaseMap
from .errors import ConfigurationError, DataFileError, DomainError
from .optimize import LOSSES, PipelineConfig
from .wavefield import (
    DEFAULT_PITCH,
    DEFAULT_WAVELENGTHS,
    OpticalConfig,
)

IMAGE_SUFFIXES = (".png", ".pgm")
IMAGE_CHANNELS = ("r", "g", "b", "gray")


# ---------------------------------------------------------------------------
# images


def _to_unit(arr: np.ndarray, mode: str) -> np.ndarray:
    if mode == "L":
        return arr.astype(float) / 255.0
    # 16-bit grayscale loads as I;16 or I depending on the codec
    return arr.astype(float) / 65535.0


def load_image(path, channel: str = "gray", multiple: int = 1) -> np.ndarray:
    """Load one channel of a PNG/PGM image as a float array in [0, 1].

    ``channel`` picks "r"/"g"/"b" from color inputs or "gray" (color inputs
    are converted by the usual luma weighting). ``multiple`` center-crops
    both dimensions down to the nearest multiple, for grids that must divide
    by the tile factor.
    """
    if channel not in IMAGE_CHANNELS:
        raise ConfigurationError(
            f"channel must be one of {IMAGE_CHANNELS}, got {channel!r}"
        )
    if multiple < 1:
        raise ConfigurationError(f"multiple must be >= 1, got {multiple}")
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("L", "I;16", "I"):
                # gray source: every channel request serves the same plane
                data = _to_unit(np.asarray(im), mode)
            elif mode in ("RGB", "RGBA", "P", "LA"):
                rgb = im.convert("RGB")
                if channel == "gray":
                    data = np.asarray(rgb.convert("L")).astype(float) / 255.0
                else:
                    idx = {"r": 0, "g": 1, "b": 2}[channel]
                    data = np.asarray(rgb).astype(float)[:, :, idx] / 255.0
            else:
                raise DataFileError(f"unsupported image mode {mode!r} in {path}")
    except (OSError, Image.DecompressionBombError) as e:
        raise DataFileError(f"cannot read image {path}: {e}") from e
    if data.ndim != 2:
        raise DataFileError(f"expected a single-plane image in {path}")
    if multiple > 1:
        h, w = data.shape
        h2 = (h // multiple) * multiple
        w2 = (w // multiple) * multiple
        if h2 == 0 or w2 == 0:
            raise DataFileError(
                f"image {path} ({h}x{w}) smaller than required multiple {multiple}"
            )
        oy, ox = (h - h2) // 2, (w - w2) // 2
        data = data[oy : oy + h2, ox : ox + w2]
    return np.ascontiguousarray(data)


def save_image(path, data: np.ndarray) -> None:
    """Write a [0, 1] array as an 8-bit grayscale PNG or PGM (clamped)."""
    p = Path(path)
    if p.suffix.lower() not in IMAGE_SUFFIXES:
        raise DataFileError(f"unsupported image suffix {p.suffix!r} (use .png or .pgm)")
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2:
        raise DataFileError(f"image data must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("image data contains non-finite values")
    u8 = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    try:
        Image.fromarray(u8, mode="L").save(p)
    except OSError as e:
        raise DataFileError(f"cannot write image {p}: {e}") from e


def save_phase(path, pm: PhaseMap) -> None:
    """Write a phase map in the 8-bit SLM convention (level 0 next to -pi)."""
    p = Path(path)
    if p.suffix.lower() not in IMAGE_SUFFIXES:
        raise DataFileError(f"unsupported image suffix {p.suffix!r} (use .png or .pgm)")
    try:
        Image.fromarray(pm.to_uint8(), mode="L").save(p)
    except OSError as e:
        raise DataFileError(f"cannot write image {p}: {e}") from e


def list_images(directory) -> list[Path]:
    """Deterministically ordered image paths directly inside ``directory``."""
    d = Path(directory)
    if not d.is_dir():
        raise DataFileError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class OpticalSettings:
    pitch: float = DEFAULT_PITCH
    wavelengths: tuple[float, ...] = DEFAULT_WAVELENGTHS
    distance: float = 0.002


@dataclass(frozen=True)
class PipelineSettings:
    scale: int = 2
    use_pyramid: bool = False
    loss: str = "l2_scaled"
    lfmn_features: int = 32
    lfmn_blocks: int = 4
    backbone_width: int = 32
    pad_factor: int = 2
    channel: int = 0


@dataclass(frozen=True)
class TrainerSettings:
    steps: int = 200
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    """Validated, fully defaulted run description."""

    optical: OpticalSettings = OpticalSettings()
    pipeline: PipelineSettings = PipelineSettings()
    trainer: TrainerSettings = TrainerSettings()
    out_dir: str = "out"
    image_channel: str = "gray"

    def pipeline_config(self, height: int, width: int) -> PipelineConfig:
        """Bind the declarative settings to a concrete grid size."""
        opt = OpticalConfig(
            pitch=self.optical.pitch,
            wavelengths=self.optical.wavelengths,
            distance=self.optical.distance,
            height=height,
            width=width,
        )
        p = self.pipeline
        return PipelineConfig(
            optical=opt,
            scale=p.scale,
            use_pyramid=p.use_pyramid,
            loss=p.loss,
            lfmn_features=p.lfmn_features,
            lfmn_blocks=p.lfmn_blocks,
            backbone_width=p.backbone_width,
            pad_factor=p.pad_factor,
            channel=p.channel,
        )

    @property
    def crop_multiple(self) -> int:
        # sub-images pass through two stride-2 levels, so dims must divide
        # by 4 * scale
        return 4 * self.pipeline.scale


def _fail(path: str, why: str):
    raise ConfigurationError(f"{path}: {why}")


def _section(doc: dict, name: str, allowed: set[str]) -> dict:
    sec = doc.get(name, {})
    if sec is None:
        sec = {}
    if not isinstance(sec, dict):
        _fail(name, "must be a mapping")
    for key in sec:
        if key not in allowed:
            _fail(f"{name}.{key}", "unknown field")
    return sec


def _number(sec: dict, name: str, path: str, default, *, positive=False, unit=False):
    v = sec.get(name, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(f"{path}.{name}", "must be a number")
    v = float(v)
    if positive and not v > 0:
        _fail(f"{path}.{name}", "must be a positive number")
    if unit and not 0.0 < v < 1.0:
        _fail(f"{path}.{name}", "must lie strictly between 0 and 1")
    return v


def _integer(sec: dict, name: str, path: str, default, *, minimum=None, choices=None):
    v = sec.get(name, default)
    if isinstance(v, bool) or not isinstance(v, int):
        _fail(f"{path}.{name}", "must be an integer")
    if minimum is not None and v < minimum:
        _fail(f"{path}.{name}", f"must be >= {minimum}")
    if choices is not None and v not in choices:
        _fail(f"{path}.{name}", f"must be one of {sorted(choices)}")
    return v


def parse_config(doc: dict | None) -> RunConfig:
    """Validate a parsed key-value tree into a RunConfig (defaults applied)."""
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigurationError("config root must be a mapping")
    for key in doc:
        if key not in {"optical", "pipeline", "trainer", "paths", "image_channel"}:
            _fail(key, "unknown section")

    o = _section(doc, "optical", {"pitch", "wavelengths", "distance"})
    pitch = _number(o, "pitch", "optical", DEFAULT_PITCH, positive=True)
    wl = o.get("wavelengths", list(DEFAULT_WAVELENGTHS))
    if not isinstance(wl, (list, tuple)) or not wl:
        _fail("optical.wavelengths", "must be a non-empty list of numbers")
    for i, w in enumerate(wl):
        if isinstance(w, bool) or not isinstance(w, (int, float)) or not w > 0:
            _fail(f"optical.wavelengths[{i}]", "must be a positive number")
    distance = _number(o, "distance", "optical", 0.002, positive=True)
    optical = OpticalSettings(pitch=pitch, wavelengths=tuple(float(w) for w in wl),
                              distance=distance)

    p = _section(
        doc,
        "pipeline",
        {"scale", "use_pyramid", "loss", "lfmn_features", "lfmn_blocks",
         "backbone_width", "pad_factor", "channel"},
    )
    scale = _integer(p, "scale", "pipeline", 2, choices={1, 2, 4})
    use_pyramid = p.get("use_pyramid", False)
    if not isinstance(use_pyramid, bool):
        _fail("pipeline.use_pyramid", "must be true or false")
    if use_pyramid and scale != 4:
        _fail("pipeline.use_pyramid", "requires scale 4")
    loss = p.get("loss", "l2_scaled")
    if loss not in LOSSES:
        _fail("pipeline.loss", f"must be one of {list(LOSSES)}")
    features = _integer(p, "lfmn_features", "pipeline", 32, minimum=2)
    if features % 2:
        _fail("pipeline.lfmn_features", "must be even")
    blocks = _integer(p, "lfmn_blocks", "pipeline", 4, minimum=0)
    width = _integer(p, "backbone_width", "pipeline", 32, minimum=1)
    pad_factor = _integer(p, "pad_factor", "pipeline", 2, choices={1, 2})
    channel = _integer(p, "channel", "pipeline", 0, minimum=0)
    if channel >= len(optical.wavelengths):
        _fail("pipeline.channel", f"out of range for {len(optical.wavelengths)} wavelengths")
    pipeline = PipelineSettings(
        scale=scale, use_pyramid=use_pyramid, loss=loss, lfmn_features=features,
        lfmn_blocks=blocks, backbone_width=width, pad_factor=pad_factor,
        channel=channel,
    )

    t = _section(doc, "trainer", {"steps", "lr", "beta1", "beta2", "seed"})
    trainer = TrainerSettings(
        steps=_integer(t, "steps", "trainer", 200, minimum=0),
        lr=_number(t, "lr", "trainer", 5e-4, positive=True),
        beta1=_number(t, "beta1", "trainer", 0.9, unit=True),
        beta2=_number(t, "beta2", "trainer", 0.999, unit=True),
        seed=_integer(t, "seed", "trainer", 0, minimum=0),
    )

    paths = _section(doc, "paths", {"out_dir"})
    out_dir = paths.get("out_dir", "out")
    if not isinstance(out_dir, str) or not out_dir:
        _fail("paths.out_dir", "must be a non-empty string")

    image_channel = doc.get("image_channel", "gray")
    if image_channel not in IMAGE_CHANNELS:
        _fail("image_channel", f"must be one of {list(IMAGE_CHANNELS)}")

    return RunConfig(
        optical=optical,
        pipeline=pipeline,
        trainer=trainer,
        out_dir=out_dir,
        image_channel=image_channel,
    )


def load_config(path) -> RunConfig:
    """Parse and validate a YAML config file; an empty file is all defaults."""
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"malformed config {path}: {e}") from e
    return parse_config(doc)
