"""holotile: tiled phase-only hologram synthesis around full-definition
angular-spectrum propagation, with a lightweight learned merge network,
iterative baselines, and desk-scale training — all on plain numpy.
"""

from .encoding import PhaseMap, dequantize_phase, dpac_encode, quantize_phase
from .errors import (
    ConfigurationError,
    DataFileError,
    DimensionError,
    DomainError,
    GridTooLargeError,
    HolotileError,
    UsageError,
)
from .metrics import MemoryLedger, psnr, ssim
from .optimize import (
    AdamState,
    PipelineConfig,
    PipelineParams,
    forward_pipeline,
    gs_iterate,
    init_pipeline,
    load_checkpoint,
    save_checkpoint,
    sgd_hologram,
    train,
)
from .propagation import TransferFunction, build_transfer, propagate, propagate_adjoint
from .wavefield import ComplexField, OpticalConfig, from_amplitude_phase, wrap_phase

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "ComplexField",
    "ConfigurationError",
    "DataFileError",
    "DimensionError",
    "DomainError",
    "GridTooLargeError",
    "HolotileError",
    "MemoryLedger",
    "OpticalConfig",
    "PhaseMap",
    "PipelineConfig",
    "PipelineParams",
    "TransferFunction",
    "UsageError",
    "build_transfer",
    "dequantize_phase",
    "dpac_encode",
    "forward_pipeline",
    "from_amplitude_phase",
    "gs_iterate",
    "init_pipeline",
    "load_checkpoint",
    "propagate",
    "propagate_adjoint",
    "psnr",
    "quantize_phase",
    "save_checkpoint",
    "sgd_hologram",
    "ssim",
    "train",
    "wrap_phase",
]
