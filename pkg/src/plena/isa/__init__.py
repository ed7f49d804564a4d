"""Instruction set: opcode table, word codec, assembler, program files."""

from .assembler import PLSM_MAGIC, AsmError, Program, assemble, disassemble
from .instructions import (
    CLASS_OF,
    IMM_MAX,
    LUT_EXP,
    LUT_RECIP,
    LUT_RSQRT,
    PREC_ACT,
    PREC_FP,
    PREC_KV,
    PREC_WEIGHT,
    SIGNATURES,
    SIMM_MAX,
    SIMM_MIN,
    IllegalInstruction,
    Instruction,
    Opcode,
    class_counts,
    pack_mem_imm,
    unpack_mem_imm,
)

__all__ = [
    "PLSM_MAGIC",
    "AsmError",
    "Program",
    "assemble",
    "disassemble",
    "CLASS_OF",
    "IMM_MAX",
    "SIMM_MIN",
    "SIMM_MAX",
    "LUT_EXP",
    "LUT_RECIP",
    "LUT_RSQRT",
    "PREC_WEIGHT",
    "PREC_ACT",
    "PREC_KV",
    "PREC_FP",
    "SIGNATURES",
    "IllegalInstruction",
    "Instruction",
    "Opcode",
    "class_counts",
    "pack_mem_imm",
    "unpack_mem_imm",
]
