"""Cycle-emulated in-order core.

One instruction decodes per cycle; stalls push the clock forward. The
timing model tracks three stall classes:

  mem     operand SRAM row still in flight from HBM
  raw     operand row still busy from a vector or write-out producer
  matrix  write-out adder tree occupied by the previous write-out

Functional state is exact: matrix SRAM rows hold dequantized float64 on the
grid of the region they were fetched from, vector SRAM rows hold values on
the scalar FP grid, and the matrix accumulator is float64. Activations are
requantized to the activation format every time the matrix unit reads them.

Data moves eagerly at issue while readiness is tracked per row, which is
equivalent to delayed delivery because every consumer (and every later
writer) stalls on the row's ready cycle first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..formats import cast_minifloat, dequantize_blocks, fwht, quantize_blocks
from ..hbm import Hbm, HbmConfig, HbmImage
from ..isa import (
    LUT_EXP,
    LUT_RECIP,
    LUT_RSQRT,
    Opcode,
    PREC_FP,
    Program,
    unpack_mem_imm,
)
from .config import ArchConfig

_ENGINE_OF = {
    Opcode.H_PREFETCH_M: "prefetch_m",
    Opcode.H_PREFETCH_V: "prefetch_v",
    Opcode.H_STORE_V: "store_v",
}


class MachineError(RuntimeError):
    pass


@dataclass
class ExecutionReport:
    cycles: int = 0
    instructions: int = 0
    stall_mem: int = 0
    stall_raw: int = 0
    stall_matrix: int = 0
    mac_ops: int = 0
    matrix_issue_cycles: int = 0
    matrix_stall_cycles: int = 0
    poison_reads: int = 0
    relocation_bytes: int = 0
    hbm_traffic: dict = field(default_factory=dict)
    region_traffic: dict = field(default_factory=dict)
    hbm_drain_cycle: int = 0
    halted: bool = False
    pe_count: int = 1

    @property
    def stalls(self) -> int:
        return self.stall_mem + self.stall_raw + self.stall_matrix

    @property
    def utilization_streaming(self) -> float:
        """MAC efficiency over cycles the matrix pipe was issuing or stalled."""
        denom = self.matrix_issue_cycles + self.matrix_stall_cycles
        return 0.0 if denom == 0 else self.mac_ops / (denom * self.pe_count)

    @property
    def utilization_total(self) -> float:
        return 0.0 if self.cycles == 0 else self.mac_ops / (self.cycles * self.pe_count)


class _Sram:
    """Row-organized scratch with per-row readiness and validity."""

    def __init__(self, depth: int, width: int):
        self.depth = depth
        self.width = width
        self.data = np.zeros((depth, width), np.float64)
        self.valid = np.zeros(depth, bool)
        self.ready = np.zeros(depth, np.int64)
        self.in_flight = np.zeros(depth, bool)
        self.pending: dict = {}  # row -> (Transfer, transfer_row)
        self.gen = np.zeros(depth, np.int64)

    def check(self, row: int) -> None:
        if not 0 <= row < self.depth:
            raise MachineError(f"SRAM row {row} outside depth {self.depth}")


class Machine:
    def __init__(
        self,
        config: ArchConfig | None = None,
        image: HbmImage | None = None,
        hbm_config: HbmConfig | None = None,
        strict: bool = True,
    ):
        self.config = config or ArchConfig()
        if self.config.vlen != self.config.mlen:
            raise MachineError("the lowering contract requires vlen == mlen")
        self.image = image
        self.hbm = Hbm(hbm_config)
        self.strict = strict
        c = self.config
        self.m_sram = _Sram(c.m_rows, c.mlen)
        self.v_sram = _Sram(c.v_rows, c.vlen)
        self.fp_mem = np.zeros(c.fp_words, np.float64)
        self.fp_pending: dict = {}  # word -> (transfer, row)
        self.int_mem = np.zeros(c.int_mem_words, np.int64)
        self.x = [0] * 32
        self.f = [0.0] * 32
        self.a = [(0, 0)] * 32  # (region index, row offset)
        self.scale_base = [0] * 32
        self.active_lut = LUT_EXP
        # matrix unit
        self.pass_buf: list = []  # (act_vec, weight_vec)
        self.pass_kind: str | None = None
        self.acc = np.zeros((c.blen, c.blen), np.float64)
        self.wo_busy_until = 0
        self._act_cache: dict = {}
        # timing
        self.cycle = 0
        self.report = ExecutionReport(pe_count=c.pe_count)
        self._fe, self._fm = c.fp_setting.exponent_bits, c.fp_setting.mantissa_bits

    # -- helpers --------------------------------------------------------------

    def _grid(self, value):
        out = cast_minifloat(value, self._fe, self._fm)
        return float(out) if np.ndim(out) == 0 else out

    def _wrap_int(self, v: int) -> int:
        w = self.config.int_width
        return ((int(v) + (1 << (w - 1))) & ((1 << w) - 1)) - (1 << (w - 1))

    def _set_x(self, rd: int, v: int) -> None:
        if rd:
            self.x[rd] = self._wrap_int(v)

    def _stall(self, until: int, bucket: str, matrix: bool = False) -> None:
        gap = int(until) - self.cycle
        if gap <= 0:
            return
        setattr(self.report, bucket, getattr(self.report, bucket) + gap)
        if matrix:
            self.report.matrix_stall_cycles += gap
        self.cycle = int(until)

    def _wait_rows(self, sram: _Sram, base: int, n: int, matrix: bool = False) -> None:
        sram.check(base)
        sram.check(base + n - 1)
        if sram.in_flight[base : base + n].any():
            for row in range(base, base + n):
                if sram.in_flight[row]:
                    t, i = sram.pending.pop(row)
                    sram.ready[row] = self.hbm.ready_at(t, i)
                    sram.in_flight[row] = False
            self._stall(sram.ready[base : base + n].max(), "stall_mem", matrix)
        else:
            self._stall(sram.ready[base : base + n].max(), "stall_raw", matrix)

    def _read_row(self, sram: _Sram, row: int, matrix: bool = False) -> np.ndarray:
        self._wait_rows(sram, row, 1, matrix)
        if not sram.valid[row]:
            self.report.poison_reads += 1
            if self.strict:
                raise MachineError(f"read of uninitialized SRAM row {row}")
        return sram.data[row]

    def _write_row(self, sram: _Sram, row: int, values, ready, pending=None) -> None:
        # writers drain any in-flight producer so eager data movement stays
        # equivalent to delayed delivery
        self._wait_rows(sram, row, 1)
        sram.data[row] = values
        sram.valid[row] = True
        sram.ready[row] = ready
        if pending is not None:
            sram.pending[row] = pending
            sram.in_flight[row] = True
        sram.gen[row] += 1

    def _act_row(self, row: int) -> np.ndarray:
        """Vector SRAM row requantized to the activation format."""
        vals = self._read_row(self.v_sram, row, matrix=True)
        key = (row, int(self.v_sram.gen[row]))
        hit = self._act_cache.get(key)
        if hit is not None:
            return hit
        fmt = self.config.act_fmt
        codes, exps = quantize_blocks(vals.reshape(-1, fmt.block_size), fmt)
        q = dequantize_blocks(codes, exps, fmt).reshape(-1)
        if len(self._act_cache) > 1 << 16:
            self._act_cache.clear()
        self._act_cache[key] = q
        return q

    def _weight_row(self, row: int, transposed: bool) -> np.ndarray:
        if not transposed:
            return self._read_row(self.m_sram, row, matrix=True).copy()
        mlen = self.config.mlen
        base = (row // mlen) * mlen
        self._wait_rows(self.m_sram, base, mlen, matrix=True)
        if not self.m_sram.valid[base : base + mlen].all():
            self.report.poison_reads += 1
            if self.strict:
                raise MachineError(f"transposed read of partially valid tile at {base}")
        return self.m_sram.data[base : base + mlen, row % mlen].copy()

    # -- matrix unit ----------------------------------------------------------

    def _flush_group(self) -> None:
        acts = np.stack([a for a, _ in self.pass_buf])
        wts = np.stack([w for _, w in self.pass_buf])
        if self.pass_kind == "mm":
            self.acc += acts @ wts.T
        else:  # mv: one live activation row, results land in accumulator row 0
            self.acc[0] += wts @ acts[0]
        self.pass_buf.clear()

    def _op_matrix(self, ins) -> None:
        kind = "mm" if ins.opcode in (Opcode.M_MM, Opcode.M_TMM) else "mv"
        if self.pass_buf and self.pass_kind != kind:
            raise MachineError("mixed mm/mv issues within one pass group")
        self.pass_kind = kind
        transposed = ins.opcode in (Opcode.M_TMM, Opcode.M_TMV)
        act = self._act_row(self.x[ins.rs1] + ins.imm)
        wt = self._weight_row(self.x[ins.rs2] + ins.imm, transposed)
        self.pass_buf.append((act, wt))
        self.report.mac_ops += (
            self.config.mlen * self.config.blen if kind == "mm" else self.config.mlen
        )
        if len(self.pass_buf) == self.config.blen:
            self._flush_group()

    def _op_write_out(self, ins) -> None:
        if self.pass_buf:
            raise MachineError("write-out with a partial pass group in flight")
        self._stall(self.wo_busy_until, "stall_matrix", matrix=True)
        c = self.config
        done = self.cycle + c.wo_latency
        lane0 = self.x[ins.rs1] * c.blen
        if lane0 < 0 or lane0 + c.blen > c.vlen:
            raise MachineError(f"write-out lane block at {lane0} outside row width")
        n_rows = c.blen if ins.opcode == Opcode.M_MM_WO else 1
        vals = self._grid(self.acc[:n_rows])
        base = self.x[ins.rd] + ins.imm
        for i in range(n_rows):
            row = base + i
            self.v_sram.check(row)
            self._wait_rows(self.v_sram, row, 1)
            if not self.v_sram.valid[row]:
                self.v_sram.data[row] = 0.0  # fresh rows: untouched lanes read 0
            self.v_sram.data[row, lane0 : lane0 + c.blen] = vals[i]
            self.v_sram.valid[row] = True
            self.v_sram.ready[row] = done
            self.v_sram.gen[row] += 1
        self.acc[:] = 0.0
        self.pass_kind = None
        self.wo_busy_until = done

    # -- vector unit ------------------------------------------------------------

    def _op_vector(self, ins) -> None:
        op = ins.opcode
        if op in (Opcode.V_RED_SUM, Opcode.V_RED_MAX):
            src = self._read_row(self.v_sram, self.x[ins.rs1])
            val = src.sum() if op == Opcode.V_RED_SUM else src.max()
            self.f[ins.rd] = self._grid(float(val))
            return
        if op == Opcode.V_LD_F:
            fill = np.full(self.config.vlen, self.f[ins.rs1])
            self._write_row(
                self.v_sram, self.x[ins.rd], fill, self.cycle + self.config.vector_latency
            )
            return
        a = self._read_row(self.v_sram, self.x[ins.rs1])
        if op == Opcode.V_ADD_VV:
            out = a + self._read_row(self.v_sram, self.x[ins.rs2])
        elif op == Opcode.V_SUB_VV:
            out = a - self._read_row(self.v_sram, self.x[ins.rs2])
        elif op == Opcode.V_MUL_VV:
            out = a * self._read_row(self.v_sram, self.x[ins.rs2])
        elif op == Opcode.V_ADD_VF:
            out = a + self.f[ins.rs2]
        elif op == Opcode.V_SUB_VF:
            out = a - self.f[ins.rs2]
        elif op == Opcode.V_MUL_VF:
            out = a * self.f[ins.rs2]
        elif op == Opcode.V_EXP_V:
            with np.errstate(over="ignore"):
                out = np.exp(a)
        elif op == Opcode.V_REC_V:
            with np.errstate(divide="ignore"):
                out = 1.0 / a
        elif op in (Opcode.V_ROTATION_EN, Opcode.V_INV_ROTATION_EN):
            out = fwht(a)
        else:  # pragma: no cover
            raise MachineError(f"unhandled vector op {op.name}")
        self._write_row(
            self.v_sram,
            self.x[ins.rd],
            self._grid(out),
            self.cycle + self.config.vector_latency,
        )

    # -- scalar unit ---------------------------------------------------------------

    def _op_scalar(self, ins) -> None:
        op = ins.opcode
        x, f = self.x, self.f
        if op == Opcode.S_ADD_INT:
            self._set_x(ins.rd, x[ins.rs1] + x[ins.rs2])
        elif op == Opcode.S_ADDI_INT:
            self._set_x(ins.rd, x[ins.rs1] + ins.imm)
        elif op == Opcode.S_SUB_INT:
            self._set_x(ins.rd, x[ins.rs1] - x[ins.rs2])
        elif op == Opcode.S_LUI_INT:
            self._set_x(ins.rd, ins.imm << 11)
        elif op == Opcode.S_MUL_INT:
            self._set_x(ins.rd, x[ins.rs1] * x[ins.rs2])
        elif op == Opcode.S_DIV_INT:
            if x[ins.rs2] == 0:
                raise MachineError("integer division by zero")
            q = abs(x[ins.rs1]) // abs(x[ins.rs2])
            self._set_x(ins.rd, q if (x[ins.rs1] < 0) == (x[ins.rs2] < 0) else -q)
        elif op in (Opcode.S_LD_INT, Opcode.S_ST_INT):
            addr = x[ins.rs1] + ins.imm
            if not 0 <= addr < self.config.int_mem_words:
                raise MachineError(f"int scratch address {addr} out of range")
            if op == Opcode.S_LD_INT:
                self._set_x(ins.rd, int(self.int_mem[addr]))
            else:
                self.int_mem[addr] = x[ins.rd]
        elif op == Opcode.S_ADD_FP:
            f[ins.rd] = self._grid(f[ins.rs1] + f[ins.rs2])
        elif op == Opcode.S_SUB_FP:
            f[ins.rd] = self._grid(f[ins.rs1] - f[ins.rs2])
        elif op == Opcode.S_MUL_FP:
            f[ins.rd] = self._grid(f[ins.rs1] * f[ins.rs2])
        elif op == Opcode.S_MAX_FP:
            f[ins.rd] = self._grid(max(f[ins.rs1], f[ins.rs2]))
        elif op == Opcode.S_EXP_FP:
            with np.errstate(over="ignore"):
                f[ins.rd] = self._grid(np.exp(f[ins.rs1]))
        elif op == Opcode.S_LUT_FP:
            f[ins.rd] = self._lut(f[ins.rs1])
        elif op in (Opcode.S_LD_FP, Opcode.S_ST_FP):
            addr = x[ins.rs1] + ins.imm
            if not 0 <= addr < self.config.fp_words:
                raise MachineError(f"fp scratch address {addr} out of range")
            pend = self.fp_pending.pop(addr, None)
            if op == Opcode.S_LD_FP:
                if pend is not None:
                    self._stall(self.hbm.ready_at(*pend), "stall_mem")
                f[ins.rd] = self._grid(self.fp_mem[addr])
            else:
                self.fp_mem[addr] = f[ins.rd]
        elif op != Opcode.S_NOP:  # pragma: no cover
            raise MachineError(f"unhandled scalar op {op.name}")

    def _lut(self, v: float) -> float:
        if self.active_lut == LUT_EXP:
            with np.errstate(over="ignore"):
                return self._grid(np.exp(v))
        if self.active_lut == LUT_RECIP:
            return self._grid(np.inf if v == 0.0 else 1.0 / v)
        if v <= 0.0:
            raise MachineError("rsqrt of a non-positive value")
        return self._grid(1.0 / np.sqrt(v))

    # -- memory engines ----------------------------------------------------------

    def _region_for(self, areg: int):
        if self.image is None:
            raise MachineError("no HBM image attached")
        idx, row_off = self.a[areg]
        if not 0 <= idx < len(self.image.region_list):
            raise MachineError(f"address register names unknown region {idx}")
        return self.image.region(idx), row_off

    def _op_memory(self, ins) -> None:
        engine = _ENGINE_OF[ins.opcode]
        region, row_off = self._region_for(ins.rs1)
        n = self.x[ins.rs2]
        if n <= 0:
            raise MachineError("transfer row count must be positive")
        stride, prec = unpack_mem_imm(ins.imm)
        base = self.x[ins.rd]
        if ins.opcode == Opcode.H_STORE_V:
            rows = np.stack(
                [self._read_row(self.v_sram, base + i).copy() for i in range(n)]
            )
            written, relocated = self.image.write_rows(region.name, row_off, rows)
            self.report.relocation_bytes += relocated
            row_bytes = [region.bytes_per_row] * n
            if relocated:
                row_bytes.append(relocated)
            self.hbm.enqueue(engine, self.cycle, row_bytes, region.name)
            return
        vals = self.image.read_rows(region.name, row_off, n, stride)
        t = self.hbm.enqueue(engine, self.cycle, [region.bytes_per_row] * n, region.name)
        if ins.opcode == Opcode.H_PREFETCH_V and prec == PREC_FP:
            cols = region.cols
            for i in range(n):
                word = base + i * cols
                if word < 0 or word + cols > self.config.fp_words:
                    raise MachineError("fp scratch prefetch out of range")
                self.fp_mem[word : word + cols] = vals[i]
                for w in range(word, word + cols):
                    self.fp_pending[w] = (t, i)
            return
        sram = self.m_sram if ins.opcode == Opcode.H_PREFETCH_M else self.v_sram
        if region.cols != sram.width:
            raise MachineError(
                f"region {region.name} rows are {region.cols} wide, SRAM is {sram.width}"
            )
        for i in range(n):
            self._write_row(sram, base + i, vals[i], 0, pending=(t, i))

    # -- control -------------------------------------------------------------------

    def _op_control(self, ins) -> None:
        if ins.opcode == Opcode.C_SET_ADDR_REG:
            self.a[ins.rd] = (self.x[ins.rs1], self.x[ins.rs2])
        elif ins.opcode == Opcode.C_SET_SCALE_REG:
            # scale areas are self-describing in the image manifest; the
            # register is kept for program realism and inspection
            self.scale_base[ins.rd] = self.x[ins.rs1]
        elif ins.opcode == Opcode.C_SET_LUT_REG:
            if ins.imm not in (LUT_EXP, LUT_RECIP, LUT_RSQRT):
                raise MachineError(f"unknown LUT selector {ins.imm}")
            self.active_lut = ins.imm

    # -- main loop --------------------------------------------------------------------

    def run(self, program: Program, max_cycles: int = 10_000_000) -> ExecutionReport:
        halted = False
        for ins in program:
            op = ins.opcode
            if op == Opcode.C_BREAK:
                self.cycle += 1
                self.report.instructions += 1
                halted = True
                break
            if op in (Opcode.M_MM, Opcode.M_TMM, Opcode.M_MV, Opcode.M_TMV):
                self._op_matrix(ins)
                self.report.matrix_issue_cycles += 1
            elif op in (Opcode.M_MV_WO, Opcode.M_MM_WO):
                self._op_write_out(ins)
                self.report.matrix_issue_cycles += 1
            elif op.name.startswith("V_"):
                self._op_vector(ins)
            elif op.name.startswith("S_"):
                self._op_scalar(ins)
            elif op.name.startswith("H_"):
                self._op_memory(ins)
            else:
                self._op_control(ins)
            self.cycle += 1
            self.report.instructions += 1
            if self.cycle > max_cycles:
                raise MachineError(f"exceeded max_cycles={max_cycles}")
        if not halted:
            raise MachineError("program ran off the end without C_BREAK")
        self.report.cycles = self.cycle
        self.report.halted = True
        self.report.hbm_drain_cycle = self.hbm.drain()
        self.report.hbm_traffic = dict(self.hbm.traffic)
        self.report.region_traffic = dict(self.hbm.region_traffic)
        return self.report

    # -- inspection helpers --------------------------------------------------------------

    def vrow(self, row: int) -> np.ndarray:
        return self.v_sram.data[row].copy()

    def mrow(self, row: int) -> np.ndarray:
        return self.m_sram.data[row].copy()
