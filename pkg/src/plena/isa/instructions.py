"""The 43-instruction ISA: opcode table, operand signatures, word codec.

Word layout (32 bits, little-endian storage):

    [31:26] opcode   [25:21] rd   [20:16] rs1   [15:11] rs2   [10:0] imm

Opcode 0 is reserved and always illegal. Fields a mnemonic does not use are
reserved-must-be-zero, so decode(word) -> encode is a strict identity on
every accepted word.

Register conventions (enforced by the assembler, interpreted by the machine):
  xN  integer registers; matrix/vector/memory instructions resolve SRAM rows
      register-indirectly (row = x[rs] + imm where the signature has an imm)
  fN  FP registers (direct)
  aN  HBM address registers (region handle + row offset)

Memory-class imm packs [10:3] = row stride (0 means 1), [2:0] = precision
selector (0 weight, 1 activation, 2 kv, 3 raw fp rows).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum


class IllegalInstruction(ValueError):
    pass


class Opcode(IntEnum):
    # matrix
    M_MM = 1
    M_TMM = 2
    M_MV = 3
    M_TMV = 4
    M_MV_WO = 5
    M_MM_WO = 6
    # vector
    V_ADD_VV = 8
    V_ADD_VF = 9
    V_SUB_VV = 10
    V_SUB_VF = 11
    V_MUL_VV = 12
    V_MUL_VF = 13
    V_EXP_V = 14
    V_REC_V = 15
    V_LD_F = 16
    V_RED_SUM = 17
    V_RED_MAX = 18
    V_ROTATION_EN = 19
    V_INV_ROTATION_EN = 20
    # scalar
    S_ADD_INT = 21
    S_ADDI_INT = 22
    S_SUB_INT = 23
    S_LUI_INT = 24
    S_MUL_INT = 25
    S_DIV_INT = 26
    S_LD_INT = 27
    S_ST_INT = 28
    S_ADD_FP = 29
    S_SUB_FP = 30
    S_MUL_FP = 31
    S_EXP_FP = 32
    S_MAX_FP = 33
    S_LD_FP = 34
    S_ST_FP = 35
    S_LUT_FP = 36
    S_NOP = 37
    # memory
    H_PREFETCH_M = 40
    H_PREFETCH_V = 41
    H_STORE_V = 42
    # control
    C_SET_ADDR_REG = 44
    C_SET_SCALE_REG = 45
    C_SET_LUT_REG = 46
    C_BREAK = 47


# Operand signature: ordered (field, kind) pairs. Kinds: x/f/a register
# classes, "imm" (unsigned 11-bit), "simm" (signed 11-bit, two's complement).
_R3 = (("rd", "x"), ("rs1", "x"), ("rs2", "x"))
_F3 = (("rd", "f"), ("rs1", "f"), ("rs2", "f"))

SIGNATURES: dict[Opcode, tuple] = {
    Opcode.M_MM: (("rd", "x"), ("rs1", "x"), ("rs2", "x"), ("imm", "imm")),
    Opcode.M_TMM: (("rd", "x"), ("rs1", "x"), ("rs2", "x"), ("imm", "imm")),
    Opcode.M_MV: (("rd", "x"), ("rs1", "x"), ("rs2", "x"), ("imm", "imm")),
    Opcode.M_TMV: (("rd", "x"), ("rs1", "x"), ("rs2", "x"), ("imm", "imm")),
    Opcode.M_MV_WO: (("rd", "x"), ("rs1", "x"), ("imm", "imm")),
    Opcode.M_MM_WO: (("rd", "x"), ("rs1", "x"), ("imm", "imm")),
    Opcode.V_ADD_VV: _R3,
    Opcode.V_ADD_VF: (("rd", "x"), ("rs1", "x"), ("rs2", "f")),
    Opcode.V_SUB_VV: _R3,
    Opcode.V_SUB_VF: (("rd", "x"), ("rs1", "x"), ("rs2", "f")),
    Opcode.V_MUL_VV: _R3,
    Opcode.V_MUL_VF: (("rd", "x"), ("rs1", "x"), ("rs2", "f")),
    Opcode.V_EXP_V: (("rd", "x"), ("rs1", "x")),
    Opcode.V_REC_V: (("rd", "x"), ("rs1", "x")),
    Opcode.V_LD_F: (("rd", "x"), ("rs1", "f")),
    Opcode.V_RED_SUM: (("rd", "f"), ("rs1", "x")),
    Opcode.V_RED_MAX: (("rd", "f"), ("rs1", "x")),
    Opcode.V_ROTATION_EN: (("rd", "x"), ("rs1", "x")),
    Opcode.V_INV_ROTATION_EN: (("rd", "x"), ("rs1", "x")),
    Opcode.S_ADD_INT: _R3,
    Opcode.S_ADDI_INT: (("rd", "x"), ("rs1", "x"), ("imm", "simm")),
    Opcode.S_SUB_INT: _R3,
    Opcode.S_LUI_INT: (("rd", "x"), ("imm", "imm")),
    Opcode.S_MUL_INT: _R3,
    Opcode.S_DIV_INT: _R3,
    Opcode.S_LD_INT: (("rd", "x"), ("rs1", "x"), ("imm", "simm")),
    Opcode.S_ST_INT: (("rd", "x"), ("rs1", "x"), ("imm", "simm")),
    Opcode.S_ADD_FP: _F3,
    Opcode.S_SUB_FP: _F3,
    Opcode.S_MUL_FP: _F3,
    Opcode.S_EXP_FP: (("rd", "f"), ("rs1", "f")),
    Opcode.S_MAX_FP: _F3,
    Opcode.S_LD_FP: (("rd", "f"), ("rs1", "x"), ("imm", "simm")),
    Opcode.S_ST_FP: (("rd", "f"), ("rs1", "x"), ("imm", "simm")),
    Opcode.S_LUT_FP: (("rd", "f"), ("rs1", "f")),
    Opcode.S_NOP: (),
    Opcode.H_PREFETCH_M: (("rd", "x"), ("rs1", "a"), ("rs2", "x"), ("imm", "imm")),
    Opcode.H_PREFETCH_V: (("rd", "x"), ("rs1", "a"), ("rs2", "x"), ("imm", "imm")),
    Opcode.H_STORE_V: (("rd", "x"), ("rs1", "a"), ("rs2", "x"), ("imm", "imm")),
    Opcode.C_SET_ADDR_REG: (("rd", "a"), ("rs1", "x"), ("rs2", "x")),
    Opcode.C_SET_SCALE_REG: (("rd", "a"), ("rs1", "x")),
    Opcode.C_SET_LUT_REG: (("imm", "imm"),),
    Opcode.C_BREAK: (),
}

CLASS_OF = {
    op: op.name[0] for op in Opcode
}  # 'M' matrix, 'V' vector, 'S' scalar, 'H' memory, 'C' control

IMM_MAX = (1 << 11) - 1
SIMM_MIN, SIMM_MAX = -(1 << 10), (1 << 10) - 1

# LUT function selectors for C_SET_LUT_REG.
LUT_EXP, LUT_RECIP, LUT_RSQRT = 0, 1, 2

# Precision selectors in the memory-class imm.
PREC_WEIGHT, PREC_ACT, PREC_KV, PREC_FP = 0, 1, 2, 3


def pack_mem_imm(stride: int = 1, prec: int = 0) -> int:
    if not 1 <= stride <= 255:
        raise ValueError("stride must be in [1, 255]")
    if not 0 <= prec <= 7:
        raise ValueError("prec selector must fit 3 bits")
    return (stride << 3) | prec


def unpack_mem_imm(imm: int) -> tuple:
    stride = (imm >> 3) & 0xFF
    return (stride if stride else 1, imm & 0x7)


@dataclass(frozen=True)
class Instruction:
    opcode: Opcode
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    imm: int = 0

    def _check(self):
        sig = dict(SIGNATURES[self.opcode])
        for field in ("rd", "rs1", "rs2"):
            val = getattr(self, field)
            if field in sig:
                if not 0 <= val < 32:
                    raise IllegalInstruction(f"{self.opcode.name}: {field}={val} out of range")
            elif val != 0:
                raise IllegalInstruction(f"{self.opcode.name}: reserved field {field} must be 0")
        if "imm" in sig:
            lo, hi = (SIMM_MIN, SIMM_MAX) if sig["imm"] == "simm" else (0, IMM_MAX)
            if not lo <= self.imm <= hi:
                raise IllegalInstruction(f"{self.opcode.name}: imm={self.imm} out of range")
        elif self.imm != 0:
            raise IllegalInstruction(f"{self.opcode.name}: reserved imm must be 0")

    def encode(self) -> int:
        self._check()
        return (
            (int(self.opcode) << 26)
            | (self.rd << 21)
            | (self.rs1 << 16)
            | (self.rs2 << 11)
            | (self.imm & 0x7FF)
        )

    @classmethod
    def decode(cls, word: int) -> "Instruction":
        if not 0 <= word < (1 << 32):
            raise IllegalInstruction(f"word {word:#x} is not a u32")
        opnum = word >> 26
        try:
            opcode = Opcode(opnum)
        except ValueError:
            raise IllegalInstruction(f"reserved opcode {opnum}") from None
        rd = (word >> 21) & 0x1F
        rs1 = (word >> 16) & 0x1F
        rs2 = (word >> 11) & 0x1F
        imm = word & 0x7FF
        sig = dict(SIGNATURES[opcode])
        if sig.get("imm") == "simm" and imm > SIMM_MAX:
            imm -= 1 << 11
        instr = cls(opcode, rd, rs1, rs2, imm)
        instr._check()
        return instr

    def operands(self) -> list:
        """(kind, value) pairs in signature order."""
        return [(kind, getattr(self, field)) for field, kind in SIGNATURES[self.opcode]]

    def __str__(self) -> str:
        parts = []
        for kind, val in self.operands():
            parts.append(str(val) if kind in ("imm", "simm") else f"{kind}{val}")
        return self.opcode.name if not parts else f"{self.opcode.name} {', '.join(parts)}"


def class_counts() -> dict:
    counts: dict = {}
    for op in Opcode:
        counts[CLASS_OF[op]] = counts.get(CLASS_OF[op], 0) + 1
    return counts
