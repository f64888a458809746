"""Low-precision AdamW with multi-component float parameters and moments."""

from .formats import BF16, FP8_E4M3, FP8_E5M2, FP16, FP32, FloatFormat, LpTensor, get_format
from .expansion import Expansion
from .optim import HyperParams, Strategy, adamw_step, init_state, memory_bytes_per_param

__version__ = "0.1.0"

__all__ = [
    "BF16",
    "FP16",
    "FP32",
    "FP8_E4M3",
    "FP8_E5M2",
    "FloatFormat",
    "LpTensor",
    "get_format",
    "Expansion",
    "HyperParams",
    "Strategy",
    "adamw_step",
    "init_state",
    "memory_bytes_per_param",
]
