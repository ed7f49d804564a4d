"""Lowering of GEMM, FlashAttention, and the decoder graph to ISA programs.

Conventions shared by every kernel here:

- Within a pass group the immediate walks the lane index i = 0..BLEN-1,
  so both operand row sets must be consecutive. Multi-chunk tensors are
  laid out chunk-major (chunk c of logical row m at base + c*stride + m),
  which is exactly what write-outs produce. Between pass groups the two
  base registers advance by the chunk strides.
- Weight regions are tile-major: region row ((q*KM + p)*BLEN + i) holds
  the p-th MLEN chunk of output row q*BLEN + i, so one tile is one
  contiguous prefetch.
- Scratch vector rows keep a fixed lane footprint for their lifetime;
  fresh-row zero fill then keeps unwritten lanes at exactly zero. The one
  operation that breaks zeros is exp, so attention score rows are masked
  (multiply by a 0/1 row) whenever the KV tile is narrower than VLEN.
"""

from dataclasses import dataclass

import numpy as np

from ..formats import DataFormat
from ..hbm import HbmImage
from ..isa import (
    LUT_RECIP,
    LUT_RSQRT,
    PREC_ACT,
    PREC_FP,
    PREC_KV,
    PREC_WEIGHT,
    Instruction,
    Opcode,
    Program,
    pack_mem_imm,
)
from ..machine.config import ArchConfig
from .model import ModelSpec, rope_rotation_matrix, rope_tables
from .reference import RMS_EPS

# scratch integer registers (x0 is hardwired zero)
X_ACT, X_W, X_DST, X_LANE = 1, 2, 3, 4
X_CNT, X_MEM, X_RA, X_RB = 5, 6, 7, 8
X_VD, X_VA, X_VB = 9, 10, 11

# float registers: consts in f1..f6, per-query running state above
F_ZERO, F_ONE, F_NEG1, F_SCALE, F_EPS, F_INVD = 1, 2, 3, 4, 5, 6
F_M, F_L = 8, 16  # running max / running sum, one per query row (BLEN <= 8)
F_T, F_MN, F_C = 24, 25, 26

NEG_BIG = -1.0e9
TRIG_FMT = DataFormat.mxint(8)
TABLE_FMT = DataFormat.mxint(8)  # identity / rotation tiles; 0 and +-1 are exact
LOGITS_FMT = DataFormat.mxint(8)


class LoweringError(ValueError):
    pass


class CodeBuilder:
    """Instruction emitter with tracked register values and SRAM allocators."""

    def __init__(self, arch: ArchConfig, image: HbmImage):
        self.arch = arch
        self.image = image
        self.ins: list = []
        self._xval = [None] * 32
        self._xval[0] = 0
        self._v_top = 0
        self._m_top = 0
        self._fp_consts: list = []

    # -- allocators -----------------------------------------------------

    def alloc_v(self, rows: int, name: str = "") -> int:
        base = self._v_top
        self._v_top += rows
        if self._v_top > self.arch.v_rows:
            raise LoweringError(
                f"vector SRAM overflow allocating {rows} rows for {name or 'scratch'}"
            )
        return base

    def alloc_m(self, rows: int, name: str = "", align: int = 1) -> int:
        base = -(-self._m_top // align) * align
        self._m_top = base + rows
        if self._m_top > self.arch.m_rows:
            raise LoweringError(
                f"matrix SRAM overflow allocating {rows} rows for {name or 'weights'}"
            )
        return base

    def fp_const(self, value: float) -> int:
        """Slot of a float constant in the preloaded fp scratch words."""
        value = float(value)
        for i, v in enumerate(self._fp_consts):
            if v == value:
                return i
        self._fp_consts.append(value)
        return len(self._fp_consts) - 1

    # -- emission ---------------------------------------------------------

    def emit(self, opcode, rd=0, rs1=0, rs2=0, imm=0):
        self.ins.append(Instruction(opcode, rd=rd, rs1=rs1, rs2=rs2, imm=imm))

    def li(self, reg: int, value: int) -> None:
        """Load an integer register, skipping or stepping when possible."""
        cur = self._xval[reg]
        if cur == value:
            return
        if cur is not None and abs(value - cur) <= 1023:
            self.emit(Opcode.S_ADDI_INT, rd=reg, rs1=reg, imm=value - cur)
        elif 0 <= value <= 1023:
            self.emit(Opcode.S_ADDI_INT, rd=reg, rs1=0, imm=value)
        else:
            hi, lo = divmod(value, 1 << 11)
            self.emit(Opcode.S_LUI_INT, rd=reg, imm=hi)
            while lo:
                step = min(lo, 1023)
                self.emit(Opcode.S_ADDI_INT, rd=reg, rs1=reg, imm=step)
                lo -= step
        self._xval[reg] = value

    def vv(self, opcode, dst: int, a: int, b: int) -> None:
        self.li(X_VD, dst)
        self.li(X_VA, a)
        self.li(X_VB, b)
        self.emit(opcode, rd=X_VD, rs1=X_VA, rs2=X_VB)

    def vf(self, opcode, dst: int, a: int, freg: int) -> None:
        self.li(X_VD, dst)
        self.li(X_VA, a)
        self.emit(opcode, rd=X_VD, rs1=X_VA, rs2=freg)

    def v1(self, opcode, dst: int, a: int) -> None:
        self.li(X_VD, dst)
        self.li(X_VA, a)
        self.emit(opcode, rd=X_VD, rs1=X_VA)

    def red(self, opcode, freg: int, row: int) -> None:
        self.li(X_VA, row)
        self.emit(opcode, rd=freg, rs1=X_VA)

    def ld_f(self, row: int, freg: int) -> None:
        self.li(X_VD, row)
        self.emit(Opcode.V_LD_F, rd=X_VD, rs1=freg)

    def load_const(self, freg: int, value: float) -> None:
        """f[freg] <- constant (from the fp scratch words at offset 0)."""
        self.emit(Opcode.S_LD_FP, rd=freg, rs1=0, imm=self.fp_const(value))

    # -- memory -------------------------------------------------------------

    def _mem(self, opcode, region_name: str, row_off: int, base: int, n: int, prec: int):
        region = self.image.region(region_name)
        self.li(X_RA, region.index)
        self.li(X_RB, row_off)
        self.emit(Opcode.C_SET_ADDR_REG, rd=1, rs1=X_RA, rs2=X_RB)
        self.li(X_MEM, base)
        self.li(X_CNT, n)
        self.emit(opcode, rd=X_MEM, rs1=1, rs2=X_CNT, imm=pack_mem_imm(1, prec))

    def prefetch_m(self, region: str, row_off: int, dest: int, n: int, prec=PREC_WEIGHT):
        self._mem(Opcode.H_PREFETCH_M, region, row_off, dest, n, prec)

    def prefetch_v(self, region: str, row_off: int, dest: int, n: int, prec=PREC_ACT):
        self._mem(Opcode.H_PREFETCH_V, region, row_off, dest, n, prec)

    def store_v(self, region: str, row_off: int, src: int, n: int, prec=PREC_ACT):
        self._mem(Opcode.H_STORE_V, region, row_off, src, n, prec)

    # -- matrix unit ----------------------------------------------------------

    def matrix_group(self, opcode, act_base: int, w_base: int) -> None:
        self.li(X_ACT, act_base)
        self.li(X_W, w_base)
        for i in range(self.arch.blen):
            self.emit(opcode, rd=0, rs1=X_ACT, rs2=X_W, imm=i)

    def write_out(self, dest_row: int, lane_block: int, mv: bool = False) -> None:
        self.li(X_DST, dest_row)
        self.li(X_LANE, lane_block)
        self.emit(Opcode.M_MV_WO if mv else Opcode.M_MM_WO, rd=X_DST, rs1=X_LANE)

    def finish(self) -> Program:
        """Prepend the fp-constant preload and seal the program."""
        body = self.ins
        if self._fp_consts:
            self.image.add_fp_rows("fpconst", np.array([self._fp_consts]))
            self.ins = []
            self._xval = [None] * 32
            self._xval[0] = 0
            self._mem(Opcode.H_PREFETCH_V, "fpconst", 0, 0, 1, PREC_FP)
            body = self.ins + body
        body.append(Instruction(Opcode.C_BREAK))
        return Program(body)


# -- helpers --------------------------------------------------------------------


def pack_gemm_weights(w: np.ndarray, blen: int, mlen: int) -> np.ndarray:
    """Tile-major weight rows for lower_gemm; w is (out, in)."""
    n, k = w.shape
    if n % blen or k % mlen:
        raise LoweringError(f"weight {w.shape} not tileable by BLEN={blen}, MLEN={mlen}")
    km = k // mlen
    # row ((q*km + p)*blen + i) = w[q*blen + i, p*mlen:(p+1)*mlen]
    tiles = w.reshape(n // blen, blen, km, mlen)
    return np.ascontiguousarray(tiles.transpose(0, 2, 1, 3)).reshape(n * km, mlen)


def pad_cols(x: np.ndarray, width: int) -> np.ndarray:
    if x.shape[1] > width:
        raise LoweringError(f"rows of width {x.shape[1]} exceed {width}")
    if x.shape[1] == width:
        return x
    return np.pad(x, ((0, 0), (0, width - x.shape[1])))


# -- GEMM -----------------------------------------------------------------------


def lower_gemm(
    b: CodeBuilder,
    *,
    m: int,
    k: int,
    n: int,
    act_base: int,
    act_stride: int,
    out_base: int,
    out_stride: int,
    weight_region: str | None = None,
    w_area: int = 0,
    w_resident_base: int | None = None,
    prefetch_distance: int = 4,
    lane_base: int = 0,
    warmup_nops: int = 0,
) -> None:
    """Emit Y(m, n) = X(m, k) @ W(n, k)^T.

    Activations are resident chunk-major v_sram rows (chunk p of row m at
    act_base + p*act_stride + m). Weights either stream from
    `weight_region` (tile-major) through a ring at m_sram `w_area`, or
    sit resident at `w_resident_base`. Outputs land chunk-major at
    out_base with the lane block offset by `lane_base` (callers passing a
    nonzero lane_base keep n <= VLEN and place results inside wider rows).
    """
    arch = b.arch
    blen, mlen, vlen = arch.blen, arch.mlen, arch.vlen
    if m % blen or n % blen or k % mlen:
        raise LoweringError(f"GEMM {m}x{k}x{n} not tileable at BLEN={blen}, MLEN={mlen}")
    km = k // mlen
    n_tiles, m_tiles = n // blen, m // blen
    tile_rows = km * blen
    lanes_per_row = vlen // blen

    stream = w_resident_base is None
    if stream:
        slots = max(prefetch_distance, 0) + 1
        for j in range(min(prefetch_distance, n_tiles)):
            b.prefetch_m(weight_region, j * tile_rows, w_area + (j % slots) * tile_rows, tile_rows)
    for _ in range(warmup_nops):
        b.emit(Opcode.S_NOP)

    for q in range(n_tiles):
        if stream:
            fetch = q if prefetch_distance == 0 else q + prefetch_distance
            if fetch == q or fetch < n_tiles:
                b.prefetch_m(
                    weight_region,
                    fetch * tile_rows,
                    w_area + (fetch % slots) * tile_rows,
                    tile_rows,
                )
            w_tile = w_area + (q % slots) * tile_rows
        else:
            w_tile = w_resident_base + q * tile_rows
        chunk, lane = divmod(q, lanes_per_row)
        for t in range(m_tiles):
            for p in range(km):
                b.matrix_group(Opcode.M_MM, act_base + p * act_stride + t * blen, w_tile + p * blen)
            b.write_out(out_base + chunk * out_stride + t * blen, lane_base + lane)


@dataclass
class GemmArtifact:
    program: Program
    image: HbmImage
    m: int
    n: int
    out_base: int
    out_stride: int


def row_bytes(fmt: DataFormat, cols: int) -> int:
    return cols * fmt.element_bits // 8 + cols // fmt.block_size


def build_gemm_program(
    arch: ArchConfig,
    x: np.ndarray,
    w: np.ndarray,
    *,
    weight_fmt=None,
    prefetch_distance: int = 4,
    hbm_config=None,
) -> GemmArtifact:
    """Standalone weight-streaming GEMM kernel: y = x @ w.T.

    A computed warm-up wait covers the initial activation fill and ring
    priming, so a sufficient prefetch distance leaves zero memory stalls.
    """
    from ..hbm import HbmConfig

    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    (m, k), n = x.shape, w.shape[0]
    if w.shape[1] != k:
        raise LoweringError("x and w inner dimensions differ")
    act_fmt = arch.act_fmt
    weight_fmt = weight_fmt or act_fmt
    hbm = hbm_config or HbmConfig()
    km = k // arch.mlen

    w_rows = pack_gemm_weights(w, arch.blen, arch.mlen)
    x_rows = x.reshape(m, km, arch.mlen).transpose(1, 0, 2).reshape(m * km, arch.mlen)
    size = (1 << 15) + (w_rows.shape[0] + x_rows.shape[0]) * (arch.mlen + 64) * 2
    image = HbmImage(size)
    image.add_tensor("w", w_rows, weight_fmt)
    image.add_tensor("x", x_rows, act_fmt)

    b = CodeBuilder(arch, image)
    act_base = b.alloc_v(m * km, "acts")
    out_base = b.alloc_v(m * max(n // arch.vlen, 1), "out")
    tile_rows = km * arch.blen
    slots = max(prefetch_distance, 0) + 1
    w_area = b.alloc_m(slots * tile_rows, "w ring")
    b.prefetch_v("x", 0, act_base, m * km)
    fill = m * km * row_bytes(act_fmt, arch.vlen)
    fill += min(prefetch_distance, n // arch.blen) * tile_rows * row_bytes(weight_fmt, arch.mlen)
    warmup = hbm.fixed_latency + -(-fill // hbm.bytes_per_cycle) + 32
    lower_gemm(
        b,
        m=m,
        k=k,
        n=n,
        act_base=act_base,
        act_stride=m,
        out_base=out_base,
        out_stride=m,
        weight_region="w",
        w_area=w_area,
        prefetch_distance=prefetch_distance,
        warmup_nops=warmup,
    )
    return GemmArtifact(b.finish(), image, m, n, out_base, m)


def read_gemm_result(machine, art: GemmArtifact) -> np.ndarray:
    """Collect the chunk-major GEMM output rows back into an (m, n) array."""
    vlen = machine.config.vlen
    y = np.empty((art.m, art.n))
    for c in range(-(-art.n // vlen)):
        w = min(vlen, art.n - c * vlen)
        for row in range(art.m):
            y[row, c * vlen : c * vlen + w] = machine.vrow(
                art.out_base + c * art.out_stride + row
            )[:w]
    return y


# -- FlashAttention ---------------------------------------------------------------


@dataclass
class AttnScratch:
    """v_sram rows used by one flash-attention query tile."""

    s_rows: int  # BLEN score/probability rows
    o_rows: int  # BLEN output accumulator rows (fixed head_dim footprint)
    pv_rows: int  # BLEN PV-tile landing rows
    mask_row: int | None  # 0/1 row for KV tiles narrower than VLEN


def emit_flash_tile(
    b: CodeBuilder,
    *,
    seq: int,
    head_dim: int,
    q_tile_base: int,
    k_area: int,
    v_area: int,
    scratch: AttnScratch,
    v_col_base: int = 0,
) -> None:
    """Online-softmax attention for one BLEN-query tile.

    Q rows (pre-scaled by 1/sqrt(head_dim)) sit at q_tile_base, K rows at
    m_sram k_area, V at an MLEN-aligned m_sram v_area whose rows past seq
    are zero (transposed reads need fully valid tiles). Leaves the
    unnormalized accumulator in scratch.o_rows and the softmax
    denominators in f[F_L..]; callers normalize and consume.
    """
    arch = b.arch
    blen, mlen, vlen = arch.blen, arch.mlen, arch.vlen
    if blen > 8:
        raise LoweringError("flash attention keeps running state in f8..f23; BLEN <= 8")
    if seq % blen or head_dim % blen:
        raise LoweringError("seq and head_dim must be BLEN multiples")
    tile = min(seq, mlen)
    for i in range(blen):
        b.load_const(F_M + i, NEG_BIG)
        b.load_const(F_L + i, 0.0)
    for u in range(-(-seq // tile)):
        j0 = u * tile
        width = min(tile, seq - j0)
        for qq in range(width // blen):
            b.matrix_group(Opcode.M_MM, q_tile_base, k_area + j0 + qq * blen)
            b.write_out(scratch.s_rows, qq)
        for i in range(blen):
            s_row = scratch.s_rows + i
            b.red(Opcode.V_RED_MAX, F_T, s_row)
            b.emit(Opcode.S_MAX_FP, rd=F_MN, rs1=F_M + i, rs2=F_T)
            b.emit(Opcode.S_SUB_FP, rd=F_C, rs1=F_M + i, rs2=F_MN)
            b.emit(Opcode.S_EXP_FP, rd=F_C, rs1=F_C)
            b.emit(Opcode.S_MUL_FP, rd=F_L + i, rs1=F_L + i, rs2=F_C)
            b.vf(Opcode.V_MUL_VF, scratch.o_rows + i, scratch.o_rows + i, F_C)
            b.vf(Opcode.V_SUB_VF, s_row, s_row, F_MN)
            b.v1(Opcode.V_EXP_V, s_row, s_row)
            if width < vlen:
                b.vv(Opcode.V_MUL_VV, s_row, s_row, scratch.mask_row)
            b.red(Opcode.V_RED_SUM, F_T, s_row)
            b.emit(Opcode.S_ADD_FP, rd=F_L + i, rs1=F_L + i, rs2=F_T)
            b.emit(Opcode.S_MAX_FP, rd=F_M + i, rs1=F_MN, rs2=F_MN)
        for n0 in range(head_dim // blen):
            b.matrix_group(Opcode.M_TMM, scratch.s_rows, v_area + j0 + v_col_base + n0 * blen)
            b.write_out(scratch.pv_rows, n0)
        for i in range(blen):
            b.vv(Opcode.V_ADD_VV, scratch.o_rows + i, scratch.o_rows + i, scratch.pv_rows + i)


@dataclass
class AttnArtifact:
    program: Program
    image: HbmImage
    seq: int
    head_dim: int


def build_attention_program(
    arch: ArchConfig,
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    *,
    out_fmt=None,
) -> AttnArtifact:
    """Standalone single-head attention kernel; output stored to "out"."""
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    seq, head_dim = q.shape
    if k.shape != (seq, head_dim) or v.shape != (seq, head_dim):
        raise LoweringError("q, k, v must share (seq, head_dim)")
    mlen, vlen, blen = arch.mlen, arch.vlen, arch.blen
    if head_dim > vlen:
        raise LoweringError(f"head_dim {head_dim} exceeds VLEN {vlen}")
    if seq % blen:
        raise LoweringError("seq must be a BLEN multiple")
    act_fmt, kv_fmt = arch.act_fmt, arch.kv_fmt
    out_fmt = out_fmt or act_fmt

    v_pad_rows = -(-seq // mlen) * mlen
    size = (1 << 16) + (2 * seq + v_pad_rows + seq + 4) * (max(mlen, vlen) + 64) * 2
    image = HbmImage(size)
    image.add_tensor("q", pad_cols(q, vlen), act_fmt)
    image.add_tensor("k", pad_cols(k, mlen), kv_fmt)
    image.add_tensor("v", pad_cols(np.pad(v, ((0, v_pad_rows - seq), (0, 0))), mlen), kv_fmt)
    image.add_tensor("out", np.zeros((seq, vlen)), out_fmt)
    tile = min(seq, mlen)
    if tile < vlen:
        mask = np.zeros((1, vlen))
        mask[0, :tile] = 1.0
        image.add_tensor("mask", mask, act_fmt)

    b = CodeBuilder(arch, image)
    q_base = b.alloc_v(seq, "q")
    s_rows = b.alloc_v(blen, "scores")
    o_rows = b.alloc_v(blen, "out acc")
    pv_rows = b.alloc_v(blen, "pv")
    mask_row = b.alloc_v(1, "mask") if tile < vlen else None
    k_area = b.alloc_m(seq, "k")
    v_area = b.alloc_m(v_pad_rows, "v", align=mlen)

    b.load_const(F_ZERO, 0.0)
    b.load_const(F_SCALE, 1.0 / np.sqrt(head_dim))
    b.prefetch_v("q", 0, q_base, seq)
    b.prefetch_m("k", 0, k_area, seq, PREC_KV)
    b.prefetch_m("v", 0, v_area, v_pad_rows, PREC_KV)
    if mask_row is not None:
        b.prefetch_v("mask", 0, mask_row, 1)
    for row in range(seq):
        b.vf(Opcode.V_MUL_VF, q_base + row, q_base + row, F_SCALE)
    for i in range(blen):
        b.ld_f(o_rows + i, F_ZERO)

    b.emit(Opcode.C_SET_LUT_REG, imm=LUT_RECIP)
    scratch = AttnScratch(s_rows, o_rows, pv_rows, mask_row)
    for t in range(seq // blen):
        emit_flash_tile(
            b,
            seq=seq,
            head_dim=head_dim,
            q_tile_base=q_base + t * blen,
            k_area=k_area,
            v_area=v_area,
            scratch=scratch,
        )
        for i in range(blen):
            b.emit(Opcode.S_LUT_FP, rd=F_T, rs1=F_L + i)
            b.vf(Opcode.V_MUL_VF, o_rows + i, o_rows + i, F_T)
        b.store_v("out", t * blen, o_rows, blen)
        for i in range(blen):
            b.ld_f(o_rows + i, F_ZERO)
    return AttnArtifact(b.finish(), image, seq, head_dim)


def read_attention_result(art: AttnArtifact) -> np.ndarray:
    return art.image.read_rows("out", 0, art.seq)[:, : art.head_dim]


# -- decoder ----------------------------------------------------------------------


@dataclass
class DecoderArtifact:
    program: Program
    image: HbmImage
    spec: ModelSpec
    arch: ArchConfig
    weight_fmt: DataFormat
    tokens: np.ndarray
    kv_tile: int
    logits_region: str = "logits"

    def read_logits(self) -> np.ndarray:
        """Chunk-major logits rows back to (seq, vocab)."""
        seq, vocab, vlen = len(self.tokens), self.spec.vocab, self.arch.vlen
        rows = self.image.read_rows(self.logits_region, 0, (vocab // vlen) * seq)
        return rows.reshape(vocab // vlen, seq, vlen).transpose(1, 0, 2).reshape(seq, vocab)


def _decoder_checks(spec: ModelSpec, arch: ArchConfig, seq: int) -> None:
    d, dh = spec.d, spec.head_dim
    if d != arch.vlen or d != arch.mlen:
        raise LoweringError("decoder lowering requires HIDDEN_DIM == VLEN == MLEN")
    if spec.ffn % d or spec.vocab % d:
        raise LoweringError("FFN and vocab sizes must be HIDDEN_DIM multiples")
    if dh % arch.blen or seq % arch.blen or arch.blen > 8:
        raise LoweringError("head_dim and seq must be BLEN multiples with BLEN <= 8")
    if spec.d_kv > arch.vlen:
        raise LoweringError("KV heads must fit one vector row")


def compile_model(
    spec: ModelSpec,
    weights: dict,
    tokens: np.ndarray,
    arch: ArchConfig,
    *,
    weight_fmt: DataFormat | None = None,
) -> DecoderArtifact:
    """Lower a full decoder forward pass (prefill) to one program.

    Weight regions are tile-major per projection; K/V pass through the KV
    cache regions at kv_fmt; logits are stored chunk-major to "logits".
    """
    tokens = np.asarray(tokens)
    seq = len(tokens)
    _decoder_checks(spec, arch, seq)
    weight_fmt = weight_fmt or DataFormat.mxint(4, 32)
    d, dh, heads = spec.d, spec.head_dim, spec.heads
    blen, vlen, mlen = arch.blen, arch.vlen, arch.mlen
    ffn_c, voc_c = spec.ffn // d, spec.vocab // d
    kv_tile = min(seq, mlen)
    v_pad = -(-seq // mlen) * mlen

    # image: embed, per-layer weights, KV cache, tables, logits
    km_rows = d // mlen
    layer_rows = 2 + (2 * d + 2 * spec.d_kv + 2 * spec.ffn) * km_rows
    layer_rows += d * (spec.ffn // mlen) + seq + v_pad
    est_rows = spec.vocab * (1 + km_rows) + spec.layers * layer_rows
    est_rows += 3 * mlen + 2 * seq + voc_c * seq + 1
    size = (1 << 17) + est_rows * (2 * mlen + 128)
    image = HbmImage(size)
    image.add_tensor("embed", weights["embed"], weight_fmt)
    for li in range(spec.layers):
        L = f"L{li}"
        image.add_tensor(f"{L}.rms1", weights[f"{L}.rms1"][None, :], weight_fmt)
        image.add_tensor(f"{L}.rms2", weights[f"{L}.rms2"][None, :], weight_fmt)
        for wn in ("wq", "wk", "wv", "wo", "w_up", "w_gate", "w_down"):
            image.add_tensor(
                f"{L}.{wn}", pack_gemm_weights(weights[f"{L}.{wn}"], blen, mlen), weight_fmt
            )
        image.add_tensor(f"{L}.kc", np.zeros((seq, mlen)), arch.kv_fmt)
        image.add_tensor(f"{L}.vc", np.zeros((v_pad, mlen)), arch.kv_fmt)
    image.add_tensor("lm_head", pack_gemm_weights(weights["lm_head"], blen, mlen), weight_fmt)
    image.add_tensor("ident", np.eye(mlen), TABLE_FMT)
    image.add_tensor("rope_r", np.kron(np.eye(d // dh), rope_rotation_matrix(dh)), TABLE_FMT)
    cos, sin = rope_tables(seq, dh)
    image.add_tensor("trig", np.concatenate([np.tile(cos, d // dh), np.tile(sin, d // dh)]), TRIG_FMT)
    if kv_tile < vlen:
        mask = np.zeros((1, vlen))
        mask[0, :kv_tile] = 1.0
        image.add_tensor("mask", mask, arch.act_fmt)
    image.add_tensor("logits", np.zeros((voc_c * seq, vlen)), LOGITS_FMT)

    b = CodeBuilder(arch, image)
    vx = b.alloc_v(seq, "x")
    vxn = b.alloc_v(seq, "xn")
    vq = [b.alloc_v(seq, f"q slice g{g}") for g in range(spec.kv_heads)]
    vk = b.alloc_v(seq, "k rows")
    vv_ = b.alloc_v(seq, "v rows")
    vattn = b.alloc_v(seq, "attn out")
    vup = b.alloc_v(ffn_c * seq, "up")
    vgate = b.alloc_v(ffn_c * seq, "gate")
    vlog = b.alloc_v(voc_c * seq, "logits")
    vtrig = b.alloc_v(2 * seq, "trig")
    vwrow = b.alloc_v(1, "norm weight")
    vmask = b.alloc_v(1, "mask") if kv_tile < vlen else None
    vs = b.alloc_v(blen, "scores")
    vo = b.alloc_v(blen, "o acc")
    vpv = b.alloc_v(blen, "pv")
    vscr = b.alloc_v(1, "elementwise scratch")
    vtmp_k = b.alloc_v(blen, "rope tmp k")
    vtmp_g = [b.alloc_v(blen, f"rope tmp g{g}") for g in range(spec.kv_heads)]
    vopr = vq[0]  # o/down projection outputs reuse the q slices (full-width WOs)

    km_d = d // mlen
    w_rows_max = max(
        d * km_d, spec.ffn * km_d, d * (spec.ffn // mlen), spec.vocab * km_d
    )
    m_ident = b.alloc_m(mlen, "ident")
    m_rope = b.alloc_m(mlen, "rope")
    m_w = b.alloc_m(w_rows_max, "weights")
    m_k = b.alloc_m(seq, "k cache")
    m_v = b.alloc_m(v_pad, "v cache", align=mlen)

    b.load_const(F_ZERO, 0.0)
    b.prefetch_m("ident", 0, m_ident, mlen)
    b.prefetch_m("rope_r", 0, m_rope, mlen)
    b.prefetch_v("trig", 0, vtrig, 2 * seq)
    if vmask is not None:
        b.prefetch_v("mask", 0, vmask, 1)
    for t, tok in enumerate(tokens):
        b.prefetch_v("embed", int(tok), vx + t, 1)
    for i in range(blen):
        b.ld_f(vo + i, F_ZERO)

    def rmsnorm(w_region: str) -> None:
        b.prefetch_v(w_region, 0, vwrow, 1)
        b.emit(Opcode.C_SET_LUT_REG, imm=LUT_RSQRT)
        b.load_const(F_INVD, 1.0 / d)
        b.load_const(F_EPS, RMS_EPS)
        for r in range(seq):
            b.vv(Opcode.V_MUL_VV, vscr, vx + r, vx + r)
            b.red(Opcode.V_RED_SUM, F_T, vscr)
            b.emit(Opcode.S_MUL_FP, rd=F_T, rs1=F_T, rs2=F_INVD)
            b.emit(Opcode.S_ADD_FP, rd=F_T, rs1=F_T, rs2=F_EPS)
            b.emit(Opcode.S_LUT_FP, rd=F_T, rs1=F_T)
            b.vf(Opcode.V_MUL_VF, vxn + r, vx + r, F_T)
            b.vv(Opcode.V_MUL_VV, vxn + r, vxn + r, vwrow)

    def rope(rows_base: int, tmp: int, lane_lo: int, lane_hi: int) -> None:
        """In-place rotary embedding on seq consecutive rows."""
        for t in range(seq // blen):
            for n0 in range(lane_lo // blen, lane_hi // blen):
                b.matrix_group(Opcode.M_MM, rows_base + t * blen, m_rope + n0 * blen)
                b.write_out(tmp, n0)
            for i in range(blen):
                pos = t * blen + i
                b.vv(Opcode.V_MUL_VV, rows_base + pos, rows_base + pos, vtrig + pos)
                b.vv(Opcode.V_MUL_VV, tmp + i, tmp + i, vtrig + seq + pos)
                b.vv(Opcode.V_ADD_VV, rows_base + pos, rows_base + pos, tmp + i)

    def gemm(region: str, m: int, k: int, n: int, act: int, out: int, lane_base: int = 0,
             w_off_rows: int = 0, n_rows: int | None = None) -> None:
        rows = n_rows if n_rows is not None else n * (k // mlen)
        b.prefetch_m(region, w_off_rows, m_w, rows)
        lower_gemm(
            b, m=m, k=k, n=n, act_base=act, act_stride=seq, out_base=out, out_stride=seq,
            w_resident_base=m_w, lane_base=lane_base,
        )

    for li in range(spec.layers):
        L = f"L{li}"
        rmsnorm(f"{L}.rms1")
        gemm(f"{L}.wk", seq, d, spec.d_kv, vxn, vk)
        gemm(f"{L}.wv", seq, d, spec.d_kv, vxn, vv_)
        rope(vk, vtmp_k, 0, spec.d_kv)
        b.store_v(f"{L}.kc", 0, vk, seq, PREC_KV)
        b.store_v(f"{L}.vc", 0, vv_, seq, PREC_KV)
        b.prefetch_m(f"{L}.kc", 0, m_k, seq, PREC_KV)
        b.prefetch_m(f"{L}.vc", 0, m_v, v_pad, PREC_KV)
        # whole wq resident once; per-head tiles are dh*KM-row slices
        b.prefetch_m(f"{L}.wq", 0, m_w, d * (d // mlen))
        b.load_const(F_SCALE, 1.0 / np.sqrt(dh))
        scratch = AttnScratch(vs, vo, vpv, vmask)
        for h in range(heads):
            g = h // spec.group_size
            lower_gemm(
                b, m=seq, k=d, n=dh, act_base=vxn, act_stride=seq,
                out_base=vq[g], out_stride=seq,
                w_resident_base=m_w + h * dh * (d // mlen), lane_base=g * (dh // blen),
            )
            for r in range(seq):
                b.vf(Opcode.V_MUL_VF, vq[g] + r, vq[g] + r, F_SCALE)
            rope(vq[g], vtmp_g[g], g * dh, (g + 1) * dh)
            b.emit(Opcode.C_SET_LUT_REG, imm=LUT_RECIP)
            for t in range(seq // blen):
                emit_flash_tile(
                    b, seq=seq, head_dim=dh, q_tile_base=vq[g] + t * blen,
                    k_area=m_k, v_area=m_v, scratch=scratch, v_col_base=g * dh,
                )
                for i in range(blen):
                    b.emit(Opcode.S_LUT_FP, rd=F_T, rs1=F_L + i)
                    b.vf(Opcode.V_MUL_VF, vo + i, vo + i, F_T)
                for n0 in range(dh // blen):
                    b.matrix_group(Opcode.M_MM, vo, m_ident + n0 * blen)
                    b.write_out(vattn + t * blen, h * (dh // blen) + n0)
                for i in range(blen):
                    b.ld_f(vo + i, F_ZERO)
        gemm(f"{L}.wo", seq, d, d, vattn, vopr)
        for r in range(seq):
            b.vv(Opcode.V_ADD_VV, vx + r, vx + r, vopr + r)
        rmsnorm(f"{L}.rms2")
        gemm(f"{L}.w_up", seq, d, spec.ffn, vxn, vup)
        b.load_const(F_ONE, 1.0)
        b.load_const(F_NEG1, -1.0)
        for r in range(ffn_c * seq):
            b.vf(Opcode.V_MUL_VF, vscr, vup + r, F_NEG1)
            b.v1(Opcode.V_EXP_V, vscr, vscr)
            b.vf(Opcode.V_ADD_VF, vscr, vscr, F_ONE)
            b.v1(Opcode.V_REC_V, vscr, vscr)
            b.vv(Opcode.V_MUL_VV, vup + r, vup + r, vscr)
        gemm(f"{L}.w_gate", seq, d, spec.ffn, vxn, vgate)
        for r in range(ffn_c * seq):
            b.vv(Opcode.V_MUL_VV, vup + r, vup + r, vgate + r)
        gemm(f"{L}.w_down", seq, spec.ffn, d, vup, vopr)
        for r in range(seq):
            b.vv(Opcode.V_ADD_VV, vx + r, vx + r, vopr + r)
        if li < spec.layers - 1:
            # vopr aliases the group-0 q rows; the full-width o/down write-outs
            # left values in lanes the next layer's partial-lane q write-outs
            # will not cover, so clear the rows back to the fresh state
            for r in range(seq):
                b.ld_f(vopr + r, F_ZERO)
    gemm("lm_head", seq, d, spec.vocab, vx, vlog)
    for c in range(voc_c):
        b.store_v("logits", c * seq, vlog + c * seq, seq)
    return DecoderArtifact(b.finish(), image, spec, arch, weight_fmt, tokens, kv_tile)
