"""Architecture configuration for the emulated core."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..formats import FP_SETTINGS, DataFormat


def _pow2(name: str, v: int) -> None:
    if v < 1 or v & (v - 1):
        raise ValueError(f"{name} must be a power of two, got {v}")


@dataclass(frozen=True)
class ArchConfig:
    """Flattened matrix unit of blen x mlen PEs plus vector/scalar pipes.

    The matrix unit multiplies a pass group of blen activation rows against
    blen weight rows, mlen lanes at a time, into a blen x blen accumulator;
    mlen/blen sub-arrays feed a write-out adder tree.
    """

    blen: int = 8
    mlen: int = 512
    vlen: int = 512
    m_rows: int = 8192
    v_rows: int = 2048
    fp_words: int = 4096
    int_mem_words: int = 4096
    int_width: int = 32
    vector_latency: int = 2
    act_fmt: DataFormat = field(default_factory=lambda: DataFormat.mxint(8, 16))
    kv_fmt: DataFormat = field(default_factory=lambda: DataFormat.mxint(8, 16))
    fp_setting: DataFormat = field(default_factory=lambda: FP_SETTINGS["fp_e6m5"])

    def __post_init__(self):
        _pow2("blen", self.blen)
        _pow2("mlen", self.mlen)
        _pow2("vlen", self.vlen)
        if self.blen > self.mlen:
            raise ValueError("blen cannot exceed mlen")
        if self.int_width not in (16, 32, 64):
            raise ValueError("int_width must be 16, 32 or 64")
        if self.vector_latency < 1:
            raise ValueError("vector_latency must be >= 1")
        if not self.act_fmt.is_block:
            raise ValueError("act_fmt must be a block format")
        if self.vlen % self.act_fmt.block_size:
            raise ValueError("vlen must be a multiple of the activation block")
        if self.fp_setting.is_block:
            raise ValueError("fp_setting must be a scalar minifloat format")

    @property
    def sub_arrays(self) -> int:
        return self.mlen // self.blen

    @property
    def wo_latency(self) -> int:
        # adder tree over mlen/blen partials, plus cast and writeback stages
        return (self.sub_arrays - 1).bit_length() + 2

    @property
    def pe_count(self) -> int:
        return self.mlen * self.blen


def square_array_model(m: int, k: int, n: int, dim: int = 64) -> dict:
    """Analytic cost of a weight-stationary dim x dim square array on an
    (m, k) x (k, n) GEMM: each weight tile costs dim load cycles, then the m
    activation rows stream through one per cycle."""
    if min(m, k, n, dim) < 1:
        raise ValueError("dimensions must be positive")
    tiles = -(-k // dim) * (-(-n // dim))
    cycles = tiles * (dim + m)
    macs = m * k * n
    return {
        "cycles": cycles,
        "mac_ops": macs,
        "utilization": macs / (cycles * dim * dim),
    }
