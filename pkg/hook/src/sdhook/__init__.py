"""Denoising-loop client for the feature transfer engine."""

from .backend import psnr
from .config import HookConfig
from .pipeline import TransferObject, TransferResult, dump_features, reconstruct, run_transfer
from .synthetic import SyntheticBackend
from .wireclient import EngineSession

__all__ = [
    "EngineSession",
    "HookConfig",
    "SyntheticBackend",
    "TransferObject",
    "TransferResult",
    "dump_features",
    "psnr",
    "reconstruct",
    "run_transfer",
]

__version__ = "0.1.0"
