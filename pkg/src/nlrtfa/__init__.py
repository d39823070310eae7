"""Nonlocal low-rank tensor factor analysis for compressive-sensing image
reconstruction."""
from .metrics import psnr, ssim
from .patch_ops import GroupingConfig, aggregate, extract_patch_groups, form_tensors
from .sensing import DenseGaussian, PartialFourier, make_radial_mask, measure_noisy
from .solver import SolverConfig, reconstruct
from .tensor_cp import CpFactors, jenrich_decompose, reconstruct_cp, truncate_rank

__all__ = [
    "CpFactors",
    "DenseGaussian",
    "GroupingConfig",
    "PartialFourier",
    "SolverConfig",
    "aggregate",
    "extract_patch_groups",
    "form_tensors",
    "jenrich_decompose",
    "make_radial_mask",
    "measure_noisy",
    "psnr",
    "reconstruct",
    "reconstruct_cp",
    "ssim",
    "truncate_rank",
]

__version__ = "0.1.0"
