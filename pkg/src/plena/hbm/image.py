"""HBM image: named regions of packed quantized rows plus a raw blob.

A region holds a 2-D tensor, one row per SRAM-row-sized transfer unit:

    [ element area: rows * row_bytes ][ scale area: rows * scales_per_row ]

Element payloads are bit-packed codes (LSB-first within the row), scales are
one int8 exponent per block. The scale area sits immediately after the
element area of the *current* row count, so appending rows (KV cache growth)
relocates it; the mover reports the bytes it had to shift.

Raw FP regions (fmt "fp64") store float64 rows with no scale area; they feed
the scalar FP register file, whose values can exceed the float32 range.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..formats import DataFormat, FormatKind, dequantize_blocks, quantize_blocks

ALIGN = 64
FP_ROW_FMT = "fp64"


def pack_rows(codes: np.ndarray, bits: int) -> np.ndarray:
    """Bit-pack (rows, cols) integer codes to (rows, row_bytes) uint8."""
    mask = (1 << bits) - 1
    u = (codes.astype(np.int32) & mask).astype(np.uint8)
    bitcols = np.unpackbits(u[:, :, None], axis=2, count=8, bitorder="little")[:, :, :bits]
    return np.packbits(bitcols.reshape(len(codes), -1), axis=1, bitorder="little")


def unpack_rows(buf: np.ndarray, cols: int, bits: int, signed: bool) -> np.ndarray:
    """Inverse of pack_rows; returns (rows, cols) int16/uint16 codes."""
    rows = len(buf)
    bitcols = np.unpackbits(buf, axis=1, count=cols * bits, bitorder="little")
    bitcols = bitcols.reshape(rows, cols, bits)
    padded = np.zeros((rows, cols, 8), np.uint8)
    padded[:, :, :bits] = bitcols
    u = np.packbits(padded, axis=2, bitorder="little")[:, :, 0].astype(np.int32)
    if signed:
        u = np.where(u >= (1 << (bits - 1)), u - (1 << bits), u)
        return u.astype(np.int16)
    return u.astype(np.uint16)


@dataclass
class Region:
    name: str
    index: int
    offset: int
    fmt: str
    rows: int
    cols: int
    capacity_rows: int
    row_bytes: int
    scales_per_row: int
    scale_offset: int
    nbytes: int

    @property
    def bytes_per_row(self) -> int:
        """Transfer bytes for one row: packed elements plus its scales."""
        return self.row_bytes + self.scales_per_row

    def fmt_obj(self) -> DataFormat | None:
        return None if self.fmt == FP_ROW_FMT else DataFormat.parse(self.fmt)


class HbmImage:
    def __init__(self, size_bytes: int):
        if size_bytes <= 0:
            raise ValueError("image size must be positive")
        self.size = int(size_bytes)
        self.blob = bytearray(self.size)
        self.regions: dict = {}
        self.region_list: list = []
        self._top = 0

    # -- allocation ---------------------------------------------------------

    def _alloc(self, nbytes: int) -> int:
        offset = -(-self._top // ALIGN) * ALIGN
        if offset + nbytes > self.size:
            raise MemoryError(
                f"image overflow: need {nbytes} bytes at {offset}, size {self.size}"
            )
        self._top = offset + nbytes
        return offset

    def _register(self, region: Region) -> Region:
        if region.name in self.regions:
            raise ValueError(f"duplicate region {region.name!r}")
        self.regions[region.name] = region
        self.region_list.append(region)
        return region

    def add_tensor(
        self,
        name: str,
        values: np.ndarray,
        fmt: DataFormat,
        clip_fraction: float = 1.0,
        capacity_rows: int | None = None,
    ) -> Region:
        """Quantize a 2-D tensor into a new region, one row per matrix row."""
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("regions hold 2-D tensors")
        rows, cols = values.shape
        if not fmt.is_block:
            raise ValueError("HBM tensors use block formats")
        if cols % fmt.block_size:
            raise ValueError(f"cols {cols} not a multiple of block {fmt.block_size}")
        cap = rows if capacity_rows is None else int(capacity_rows)
        if cap < rows:
            raise ValueError("capacity_rows below initial rows")
        row_bytes = cols * fmt.element_bits // 8
        if cols * fmt.element_bits % 8:
            raise ValueError("row payload must be byte-aligned")
        spr = cols // fmt.block_size
        nbytes = cap * row_bytes + cap * spr
        offset = self._alloc(nbytes)
        region = self._register(
            Region(
                name=name,
                index=len(self.region_list),
                offset=offset,
                fmt=fmt.name,
                rows=0,
                cols=cols,
                capacity_rows=cap,
                row_bytes=row_bytes,
                scales_per_row=spr,
                scale_offset=offset,
                nbytes=nbytes,
            )
        )
        if rows:
            self.write_rows(name, 0, values, clip_fraction=clip_fraction)
        return region

    def add_fp_rows(self, name: str, values: np.ndarray) -> Region:
        """Raw float64 rows (scalar FP constants and spilled wide rows)."""
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("regions hold 2-D tensors")
        rows, cols = values.shape
        row_bytes = cols * 8
        nbytes = rows * row_bytes
        offset = self._alloc(nbytes)
        region = self._register(
            Region(
                name=name,
                index=len(self.region_list),
                offset=offset,
                fmt=FP_ROW_FMT,
                rows=rows,
                cols=cols,
                capacity_rows=rows,
                row_bytes=row_bytes,
                scales_per_row=0,
                scale_offset=offset + nbytes,
                nbytes=nbytes,
            )
        )
        self.blob[offset : offset + nbytes] = values.astype("<f8").tobytes()
        return region

    # -- row access ---------------------------------------------------------

    def region(self, name_or_index) -> Region:
        if isinstance(name_or_index, str):
            return self.regions[name_or_index]
        return self.region_list[name_or_index]

    def _row_indices(self, region: Region, start: int, n: int, stride: int) -> np.ndarray:
        idx = start + stride * np.arange(n)
        if len(idx) and (idx.min() < 0 or idx.max() >= region.rows):
            raise IndexError(
                f"{region.name}: rows {start}:+{n}*{stride} outside 0..{region.rows}"
            )
        return idx

    def read_rows(self, name, start: int, n: int, stride: int = 1) -> np.ndarray:
        """Dequantized float64 rows (n, cols)."""
        r = self.region(name)
        idx = self._row_indices(r, start, n, stride)
        if r.fmt == FP_ROW_FMT:
            flat = np.frombuffer(self.blob, dtype="<f8", count=r.rows * r.cols, offset=r.offset)
            return flat.reshape(r.rows, r.cols)[idx].astype(np.float64)
        fmt = r.fmt_obj()
        payload = np.empty((n, r.row_bytes), np.uint8)
        scales = np.empty((n, r.scales_per_row), np.int8)
        for k, row in enumerate(idx):
            o = r.offset + int(row) * r.row_bytes
            payload[k] = np.frombuffer(self.blob, np.uint8, r.row_bytes, o)
            so = r.scale_offset + int(row) * r.scales_per_row
            scales[k] = np.frombuffer(self.blob, np.int8, r.scales_per_row, so)
        signed = fmt.kind == FormatKind.MXINT
        codes = unpack_rows(payload, r.cols, fmt.element_bits, signed)
        blocks = codes.reshape(-1, fmt.block_size)
        vals = dequantize_blocks(blocks, scales.reshape(-1), fmt)
        return vals.reshape(n, r.cols)

    def write_rows(
        self, name, start: int, values: np.ndarray, clip_fraction: float = 1.0
    ) -> tuple:
        """Quantize and store rows at [start, start+n). Appending past the
        current end grows the region and relocates the scale area.

        Returns (bytes_written, relocated_bytes)."""
        r = self.region(name)
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != r.cols:
            raise ValueError(f"{r.name}: expected (n, {r.cols}) rows")
        n = len(values)
        if start < 0 or start > r.rows:
            raise IndexError(f"{r.name}: write at {start} past end {r.rows}")
        end = start + n
        if end > r.capacity_rows:
            raise MemoryError(f"{r.name}: {end} rows exceed capacity {r.capacity_rows}")
        relocated = 0
        if r.fmt == FP_ROW_FMT:
            o = r.offset + start * r.row_bytes
            self.blob[o : o + n * r.row_bytes] = values.astype("<f8").tobytes()
            return n * r.row_bytes, relocated
        fmt = r.fmt_obj()
        if end > r.rows:
            # scale area moves out of the way of the new element rows
            old = bytes(
                self.blob[r.scale_offset : r.scale_offset + r.rows * r.scales_per_row]
            )
            new_scale_offset = r.offset + end * r.row_bytes
            self.blob[new_scale_offset : new_scale_offset + len(old)] = old
            relocated = len(old)
            r.scale_offset = new_scale_offset
            r.rows = end
        codes, exps = quantize_blocks(
            values.reshape(-1, fmt.block_size), fmt, clip_fraction=clip_fraction
        )
        payload = pack_rows(codes.reshape(n, r.cols), fmt.element_bits)
        scales = exps.reshape(n, r.scales_per_row)
        for k in range(n):
            row = start + k
            o = r.offset + row * r.row_bytes
            self.blob[o : o + r.row_bytes] = payload[k].tobytes()
            so = r.scale_offset + row * r.scales_per_row
            self.blob[so : so + r.scales_per_row] = scales[k].astype("<i1").tobytes()
        written = n * (r.row_bytes + r.scales_per_row)
        return written, relocated

    # -- persistence --------------------------------------------------------

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        manifest = {
            "size": self.size,
            "top": self._top,
            "regions": [asdict(r) for r in self.region_list],
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        (d / "hbm.bin").write_bytes(bytes(self.blob[: self._top]))

    @classmethod
    def load(cls, directory) -> "HbmImage":
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        img = cls(manifest["size"])
        img._top = manifest["top"]
        data = (d / "hbm.bin").read_bytes()
        img.blob[: len(data)] = data
        for rd in manifest["regions"]:
            img._register(Region(**rd))
        return img
