"""Two-pass assembler, disassembler, and the PLSM program container.

Source syntax, one instruction per line:

    # comment to end of line
    loop:                     # label (alone or prefixing an instruction)
    S_ADDI_INT x5, x5, -1
    M_MM x0, x1, x2, @loop    # @label resolves to its instruction index

Registers are written with their class prefix (x3, f1, a0) and must match
the operand class the mnemonic expects. Immediates accept decimal or 0x hex.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field

from .instructions import SIGNATURES, IllegalInstruction, Instruction, Opcode

PLSM_MAGIC = b"PLSM"
_HEADER = struct.Struct("<4sI")
_LABEL_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class AsmError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass
class Program:
    instructions: list = field(default_factory=list)

    def __len__(self):
        return len(self.instructions)

    def __iter__(self):
        return iter(self.instructions)

    def __getitem__(self, i):
        return self.instructions[i]

    def words(self) -> list:
        return [ins.encode() for ins in self.instructions]

    def to_bytes(self) -> bytes:
        body = struct.pack(f"<{len(self.instructions)}I", *self.words())
        return _HEADER.pack(PLSM_MAGIC, len(self.instructions)) + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "Program":
        if len(data) < _HEADER.size:
            raise ValueError("truncated program image")
        magic, count = _HEADER.unpack_from(data)
        if magic != PLSM_MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        if len(data) != _HEADER.size + 4 * count:
            raise ValueError("program image length does not match header count")
        words = struct.unpack_from(f"<{count}I", data, _HEADER.size)
        return cls([Instruction.decode(w) for w in words])

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Program":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def _parse_operand(tok: str, kind: str, labels: dict, lineno: int) -> int:
    tok = tok.strip()
    if kind in ("x", "f", "a"):
        if len(tok) < 2 or tok[0] != kind or not tok[1:].isdigit():
            raise AsmError(lineno, f"expected {kind}-register, got {tok!r}")
        n = int(tok[1:])
        if n >= 32:
            raise AsmError(lineno, f"register index {tok!r} out of range")
        return n
    # immediate
    if tok.startswith("@"):
        name = tok[1:]
        if name not in labels:
            raise AsmError(lineno, f"unknown label {name!r}")
        return labels[name]
    try:
        return int(tok, 0)
    except ValueError:
        raise AsmError(lineno, f"bad immediate {tok!r}") from None


def assemble(text: str) -> Program:
    # pass 1: strip comments/labels, collect (lineno, mnemonic, operand text)
    labels: dict = {}
    pending: list = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        while ":" in line:
            name, rest = line.split(":", 1)
            name = name.strip()
            if not _LABEL_RE.match(name):
                raise AsmError(lineno, f"bad label {name!r}")
            if name in labels:
                raise AsmError(lineno, f"duplicate label {name!r}")
            labels[name] = len(pending)
            line = rest.strip()
        if line:
            parts = line.split(None, 1)
            pending.append((lineno, parts[0], parts[1] if len(parts) > 1 else ""))

    # pass 2: build instructions with labels resolved
    out: list = []
    for lineno, mnemonic, rest in pending:
        try:
            opcode = Opcode[mnemonic.upper()]
        except KeyError:
            raise AsmError(lineno, f"unknown mnemonic {mnemonic!r}") from None
        sig = SIGNATURES[opcode]
        toks = [t for t in (s.strip() for s in rest.split(",")) if t] if rest else []
        if len(toks) != len(sig):
            raise AsmError(
                lineno, f"{opcode.name} takes {len(sig)} operand(s), got {len(toks)}"
            )
        fields = {
            fname: _parse_operand(tok, kind, labels, lineno)
            for (fname, kind), tok in zip(sig, toks)
        }
        try:
            ins = Instruction(opcode, **fields)
            ins.encode()  # range-check now, with a line number
        except IllegalInstruction as e:
            raise AsmError(lineno, str(e)) from None
        out.append(ins)
    return Program(out)


def disassemble(program: Program) -> str:
    return "\n".join(str(ins) for ins in program) + ("\n" if len(program) else "")
