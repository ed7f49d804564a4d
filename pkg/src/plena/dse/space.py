"""Co-design search space: candidate points, constraints, sampling moves."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from ..formats import FP_SETTINGS, DataFormat, FormatKind

# One HBM port delivers a packed SRAM row per cycle, so a row's element
# bits plus its per-block scale bits must fit under the port width. The
# same threshold applies at both provisioned bandwidth grades, so a
# single constant covers both checks.
PORT_BIT_LIMIT = 1510
ACT_SCALE_WIDTH = 8

# Fixed memory depths of the generated core (rows / words); candidates
# must fit their working set inside them.
MATRIX_SRAM_DEPTH = 8192
VECTOR_SRAM_DEPTH = 2048
INT_SRAM_DEPTH = 4096
FP_SRAM_DEPTH = 4096
FP_CONSTANT_NUM = 8

BLEN_RANGE = (2, 4, 8, 16, 32)
MLEN_RANGE = (2, 4, 8, 16, 32, 64, 128, 256, 512)
VLEN_RANGE = (2, 4, 8, 16, 32, 64, 128, 256, 512, 1024)
PREFETCH_RANGE = (2, 4, 8, 16, 32, 64, 128, 256)
ELEMENT_CHOICES = (
    "mxint2",
    "mxint3",
    "mxint4",
    "mxint8",
    "mxfp_e1m2",
    "mxfp_e2m1",
    "mxfp_e3m4",
    "mxfp_e4m3",
    "mxfp_e5m2",
)
FP_CHOICES = tuple(FP_SETTINGS)
INT_WIDTH_CHOICES = (16, 32, 64)


@dataclass(frozen=True)
class DesignPoint:
    """One hardware + quantization candidate.

    Element formats are named ("mxint4", "mxfp_e4m3"); their block size is
    blen, the group of elements the block unit carries per shared scale.
    """

    blen: int = 8
    mlen: int = 128
    vlen: int = 64
    hbm_m_prefetch: int = 32
    hbm_v_prefetch: int = 32
    hbm_v_writeback: int = 32
    act_width: str = "mxint8"
    kv_width: str = "mxint8"
    fp_setting: str = "fp_e6m5"
    int_data_width: int = 32

    def __post_init__(self):
        for name, value in self.as_dict().items():
            if value not in _RANGES[name]:
                raise ValueError(f"{name}={value!r} outside the search range")

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def act_format(self) -> DataFormat:
        return _element_format(self.act_width, self.blen)

    @property
    def kv_format(self) -> DataFormat:
        return _element_format(self.kv_width, self.blen)

    @property
    def fp_format(self) -> DataFormat:
        return FP_SETTINGS[self.fp_setting]


_RANGES = {
    "blen": BLEN_RANGE,
    "mlen": MLEN_RANGE,
    "vlen": VLEN_RANGE,
    "hbm_m_prefetch": PREFETCH_RANGE,
    "hbm_v_prefetch": PREFETCH_RANGE,
    "hbm_v_writeback": PREFETCH_RANGE,
    "act_width": ELEMENT_CHOICES,
    "kv_width": ELEMENT_CHOICES,
    "fp_setting": FP_CHOICES,
    "int_data_width": INT_WIDTH_CHOICES,
}
FIELD_NAMES = tuple(_RANGES)


def _element_format(name: str, blen: int) -> DataFormat:
    base = DataFormat.parse(name)
    if base.kind == FormatKind.MXINT:
        return DataFormat.mxint(base.element_bits, blen)
    return DataFormat.mxfp(base.exponent_bits, base.mantissa_bits, blen)


def port_bits(length: int, element_bits: int, blen: int) -> int:
    """Row bits crossing an HBM port: elements plus per-block scales."""
    return length * element_bits + (length // blen) * ACT_SCALE_WIDTH


def check_constraints(p: DesignPoint, *, head_dim: int = 128, hidden_dim: int = 4096) -> list:
    """Violated-rule descriptions; an empty list means feasible.

    head_dim / hidden_dim size the vector SRAM working set for the target
    workload. The port rule divides VLEN by BLEN, so vector rows must hold
    whole blocks: VLEN >= BLEN and VLEN mod BLEN = 0 are required too.
    """
    bad = []
    if p.mlen < p.blen:
        bad.append(f"MLEN {p.mlen} < BLEN {p.blen}")
    elif p.mlen % p.blen:
        bad.append(f"MLEN {p.mlen} not a multiple of BLEN {p.blen}")
    if p.vlen < p.blen:
        bad.append(f"VLEN {p.vlen} < BLEN {p.blen}")
    elif p.vlen % p.blen:
        bad.append(f"VLEN {p.vlen} not a multiple of BLEN {p.blen}")
    if MATRIX_SRAM_DEPTH < 2 * p.mlen:
        bad.append(f"matrix SRAM depth {MATRIX_SRAM_DEPTH} < 2*MLEN {2 * p.mlen}")
    v_need = 2 * head_dim + -(-hidden_dim // p.vlen)
    if VECTOR_SRAM_DEPTH < v_need:
        bad.append(f"vector SRAM depth {VECTOR_SRAM_DEPTH} < working set {v_need}")
    if INT_SRAM_DEPTH < 16:
        bad.append(f"int SRAM depth {INT_SRAM_DEPTH} < 16")
    if FP_SRAM_DEPTH < 3 * p.mlen + FP_CONSTANT_NUM:
        bad.append(f"fp SRAM depth {FP_SRAM_DEPTH} < {3 * p.mlen + FP_CONSTANT_NUM}")
    act_bits = DataFormat.parse(p.act_width).element_bits
    for label, length in (("MLEN", p.mlen), ("VLEN", p.vlen)):
        bits = port_bits(length, act_bits, p.blen)
        if bits >= PORT_BIT_LIMIT:
            bad.append(f"{label} row {bits} bits >= port limit {PORT_BIT_LIMIT}")
    return bad


def random_point(rng: np.random.Generator) -> DesignPoint:
    """Uniform draw over the raw ranges; may be infeasible."""
    values = {name: opts[int(rng.integers(len(opts)))] for name, opts in _RANGES.items()}
    return DesignPoint(**values)


def mutate(
    p: DesignPoint,
    rng: np.random.Generator,
    rate: float = 0.0,
    field: str | None = None,
    direction: int = 0,
) -> DesignPoint:
    """Step one primary field along its ordered range (usually 1 position,
    sometimes 2); every other field steps too with probability `rate`.
    The primary field and its direction default to random draws; at a
    range edge the step folds back inward."""
    picked = FIELD_NAMES.index(field) if field else int(rng.integers(len(FIELD_NAMES)))
    changes = {}
    for fi, name in enumerate(FIELD_NAMES):
        if fi != picked and rng.random() >= rate:
            continue
        opts = _RANGES[name]
        i = opts.index(getattr(p, name))
        step = 1 if rng.random() < 0.75 else 2
        d = direction if fi == picked and direction else (1 if rng.random() < 0.5 else -1)
        j = min(max(i + d * step, 0), len(opts) - 1)
        if j == i:
            j = min(max(i - d * step, 0), len(opts) - 1)
        changes[name] = opts[j]
    return replace(p, **changes)
