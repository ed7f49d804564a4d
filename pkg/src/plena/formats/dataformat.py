"""Format descriptors for the three datapath element families."""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import IntEnum

from .minifloat import minifloat_max


class FormatKind(IntEnum):
    MXINT = 0
    MXFP = 1
    MINIFLOAT = 2


@dataclass(frozen=True)
class DataFormat:
    """A block-quantized (MXINT/MXFP) or scalar (MINIFLOAT) number format.

    MXINT elements are symmetric two's-complement codes in
    [-(2^(b-1)-1), +(2^(b-1)-1)] (zero point 0); MXFP elements are ExMy
    minifloats. Block kinds share one power-of-two scale per `block_size`
    elements, stored as a signed `scale_bits`-bit exponent.
    """

    kind: FormatKind
    element_bits: int
    exponent_bits: int = 0
    mantissa_bits: int = 0
    block_size: int = 0
    scale_bits: int = 8

    def __post_init__(self):
        if self.kind == FormatKind.MXINT:
            if not 2 <= self.element_bits <= 16:
                raise ValueError(f"mxint width {self.element_bits} out of range")
            if self.block_size < 1:
                raise ValueError("mxint requires a block size")
        else:
            if self.element_bits != 1 + self.exponent_bits + self.mantissa_bits:
                raise ValueError("element_bits must equal 1 + exponent + mantissa bits")
            if self.element_bits > 16:
                raise ValueError("element formats wider than 16 bits are unsupported")
            if self.exponent_bits < 1:
                raise ValueError("need at least one exponent bit")
            if self.kind == FormatKind.MINIFLOAT and self.block_size != 0:
                raise ValueError("minifloat is a scalar format")
            if self.kind == FormatKind.MXFP and self.block_size < 1:
                raise ValueError("mxfp requires a block size")
        if not 2 <= self.scale_bits <= 8:
            raise ValueError("scale_bits out of range")

    @classmethod
    def mxint(cls, bits: int, block_size: int = 16) -> "DataFormat":
        return cls(FormatKind.MXINT, bits, block_size=block_size)

    @classmethod
    def mxfp(cls, exp_bits: int, man_bits: int, block_size: int = 16) -> "DataFormat":
        return cls(FormatKind.MXFP, 1 + exp_bits + man_bits, exp_bits, man_bits, block_size)

    @classmethod
    def minifloat(cls, exp_bits: int, man_bits: int) -> "DataFormat":
        return cls(FormatKind.MINIFLOAT, 1 + exp_bits + man_bits, exp_bits, man_bits)

    @property
    def is_block(self) -> bool:
        return self.kind != FormatKind.MINIFLOAT

    @property
    def max_code(self) -> int:
        if self.kind != FormatKind.MXINT:
            raise ValueError("max_code is an MXINT property")
        return (1 << (self.element_bits - 1)) - 1

    @property
    def max_value(self) -> float:
        """Largest element magnitude (scale 1 for block kinds)."""
        if self.kind == FormatKind.MXINT:
            return float(self.max_code)
        return minifloat_max(self.exponent_bits, self.mantissa_bits)

    @property
    def scale_min(self) -> int:
        return -(1 << (self.scale_bits - 1))

    @property
    def scale_max(self) -> int:
        return (1 << (self.scale_bits - 1)) - 1

    @property
    def name(self) -> str:
        if self.kind == FormatKind.MXINT:
            base = f"mxint{self.element_bits}"
        elif self.kind == FormatKind.MXFP:
            base = f"mxfp_e{self.exponent_bits}m{self.mantissa_bits}"
        else:
            return f"fp_e{self.exponent_bits}m{self.mantissa_bits}"
        if self.block_size != 16:
            base += f"b{self.block_size}"
        return base

    @classmethod
    def parse(cls, name: str) -> "DataFormat":
        m = re.fullmatch(r"mxint(\d+)(?:b(\d+))?", name)
        if m:
            return cls.mxint(int(m.group(1)), int(m.group(2) or 16))
        m = re.fullmatch(r"mxfp_e(\d+)m(\d+)(?:b(\d+))?", name)
        if m:
            return cls.mxfp(int(m.group(1)), int(m.group(2)), int(m.group(3) or 16))
        m = re.fullmatch(r"fp_e(\d+)m(\d+)", name)
        if m:
            return cls.minifloat(int(m.group(1)), int(m.group(2)))
        raise ValueError(f"unknown format name {name!r}")


# The FP datapath settings the hardware generator exposes.
FP_SETTINGS = {
    name: DataFormat.parse(name)
    for name in ("fp_e3m2", "fp_e2m3", "fp_e6m5", "fp_e5m6", "fp_e4m7", "fp_e8m5")
}
