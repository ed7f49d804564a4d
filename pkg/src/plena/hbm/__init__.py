"""HBM: functional image (regions, packed rows, scales) and timing model."""

from .engine import ENGINES, Hbm, HbmConfig, Transfer
from .image import ALIGN, FP_ROW_FMT, HbmImage, Region, pack_rows, unpack_rows

__all__ = [
    "ENGINES",
    "Hbm",
    "HbmConfig",
    "Transfer",
    "ALIGN",
    "FP_ROW_FMT",
    "HbmImage",
    "Region",
    "pack_rows",
    "unpack_rows",
]
