"""Binary tensor container.

Layout (little endian):
  magic  "PLXT"
  u32    version (1)
  u8     kind (0 mxint, 1 mxfp, 2 minifloat)
  u8     element_bits
  u8     exponent_bits
  u8     mantissa_bits
  u32    block_size (0 for minifloat)
  u32    ndim
  u64[ndim] dims
  bytes  element codes, bit-packed LSB-first at element_bits per code
         (two's complement for mxint, raw minifloat patterns otherwise)
  i8[n_blocks] scale exponents (block kinds only)

Code and scale counts are derived from the dims and the block padding rule,
so the format needs no explicit lengths.
"""

import struct
from pathlib import Path

import numpy as np

from .dataformat import DataFormat, FormatKind
from .mx import MXTensor

MAGIC = b"PLXT"
VERSION = 1
_HEADER = struct.Struct("<4sIBBBBII")


def pack_bits(values: np.ndarray, bits: int) -> bytes:
    """Bit-pack unsigned integer values, LSB-first, little-endian bit order."""
    v = np.asarray(values, dtype=np.uint16).reshape(-1)
    if bits < 1 or bits > 16:
        raise ValueError("1..16 bit codes only")
    lanes = ((v[:, None] >> np.arange(bits, dtype=np.uint16)) & 1).astype(np.uint8)
    return np.packbits(lanes.reshape(-1), bitorder="little").tobytes()


def unpack_bits(data: bytes, bits: int, count: int) -> np.ndarray:
    raw = np.frombuffer(data, dtype=np.uint8)
    lanes = np.unpackbits(raw, bitorder="little")[: count * bits]
    if lanes.size < count * bits:
        raise ValueError("truncated bit stream")
    lanes = lanes.reshape(count, bits).astype(np.uint16)
    return (lanes << np.arange(bits, dtype=np.uint16)).sum(axis=1, dtype=np.uint16)


def _counts(fmt: DataFormat, shape: tuple) -> tuple:
    """(n_codes, n_blocks) implied by shape under the padding rule."""
    if fmt.kind == FormatKind.MINIFLOAT:
        return int(np.prod(shape, dtype=np.int64)), 0
    last = shape[-1]
    padded = last + (-last) % fmt.block_size
    rows = int(np.prod(shape[:-1], dtype=np.int64)) if len(shape) > 1 else 1
    n_codes = rows * padded
    return n_codes, n_codes // fmt.block_size


def save_mx_tensor(path, t: MXTensor) -> None:
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        int(t.fmt.kind),
        t.fmt.element_bits,
        t.fmt.exponent_bits,
        t.fmt.mantissa_bits,
        t.fmt.block_size,
        len(t.shape),
    )
    dims = struct.pack(f"<{len(t.shape)}Q", *t.shape)
    if t.fmt.kind == FormatKind.MXINT:
        unsigned = t.codes.astype(np.int32) & ((1 << t.fmt.element_bits) - 1)
    else:
        unsigned = t.codes
    payload = pack_bits(unsigned, t.fmt.element_bits)
    scales = t.exps.astype(np.int8).tobytes()
    Path(path).write_bytes(header + dims + payload + scales)


def load_mx_tensor(path) -> MXTensor:
    data = Path(path).read_bytes()
    magic, version, kind, ebits, xbits, mbits, bsize, ndim = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ValueError("not a PLXT file")
    if version != VERSION:
        raise ValueError(f"unsupported PLXT version {version}")
    off = _HEADER.size
    dims = struct.unpack_from(f"<{ndim}Q", data, off)
    off += 8 * ndim
    kind = FormatKind(kind)
    if kind == FormatKind.MXINT:
        fmt = DataFormat.mxint(ebits, bsize)
    elif kind == FormatKind.MXFP:
        fmt = DataFormat.mxfp(xbits, mbits, bsize)
    else:
        fmt = DataFormat.minifloat(xbits, mbits)
    n_codes, n_blocks = _counts(fmt, tuple(dims))
    payload_len = (n_codes * fmt.element_bits + 7) // 8
    codes = unpack_bits(data[off : off + payload_len], fmt.element_bits, n_codes)
    off += payload_len
    if kind == FormatKind.MXINT:
        signed = codes.astype(np.int32)
        signed[signed >= 1 << (ebits - 1)] -= 1 << ebits
        codes = signed.astype(np.int16).reshape(-1, bsize)
    elif kind == FormatKind.MXFP:
        codes = codes.reshape(-1, bsize)
    exps = np.frombuffer(data[off : off + n_blocks], dtype=np.int8).copy()
    if exps.size != n_blocks:
        raise ValueError("truncated scale area")
    return MXTensor(fmt, tuple(int(d) for d in dims), codes, exps)
