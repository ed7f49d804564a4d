"""ISA tests: frozen word encodings, strict decode, assembler, PLSM files."""

import random

import pytest

from plena.isa import (
    AsmError,
    IllegalInstruction,
    Instruction,
    Opcode,
    Program,
    SIGNATURES,
    assemble,
    class_counts,
    disassemble,
    pack_mem_imm,
    unpack_mem_imm,
)


class TestOpcodeTable:
    def test_class_counts(self):
        assert class_counts() == {"M": 6, "V": 13, "S": 17, "H": 3, "C": 4}
        assert len(Opcode) == 43

    def test_opcode_numbers_frozen(self):
        assert Opcode.M_MM == 1
        assert Opcode.M_MM_WO == 6
        assert Opcode.V_ADD_VV == 8
        assert Opcode.V_INV_ROTATION_EN == 20
        assert Opcode.S_ADD_INT == 21
        assert Opcode.S_NOP == 37
        assert Opcode.H_PREFETCH_M == 40
        assert Opcode.H_STORE_V == 42
        assert Opcode.C_SET_ADDR_REG == 44
        assert Opcode.C_BREAK == 47

    def test_every_opcode_has_signature(self):
        assert set(SIGNATURES) == set(Opcode)


class TestEncode:
    # hand-computed golden words
    def test_frozen_words(self):
        cases = [
            (Instruction(Opcode.M_MM, rd=0, rs1=1, rs2=2, imm=5), 0x04011005),
            (Instruction(Opcode.S_ADDI_INT, rd=5, rs1=5, imm=-1), 0x58A507FF),
            (Instruction(Opcode.S_LUI_INT, rd=3, imm=2047), 0x606007FF),
            (Instruction(Opcode.V_RED_SUM, rd=1, rs1=7), 0x44270000),
            (
                Instruction(
                    Opcode.H_PREFETCH_M, rd=4, rs1=1, rs2=2,
                    imm=pack_mem_imm(stride=3, prec=2),
                ),
                0xA081101A,
            ),
            (Instruction(Opcode.C_SET_LUT_REG, imm=2), 0xB8000002),
            (Instruction(Opcode.S_NOP), 0x94000000),
            (Instruction(Opcode.C_BREAK), 0xBC000000),
        ]
        for ins, word in cases:
            assert ins.encode() == word, ins
            assert Instruction.decode(word) == ins

    def test_simm_range(self):
        Instruction(Opcode.S_ADDI_INT, rd=1, rs1=1, imm=-1024).encode()
        Instruction(Opcode.S_ADDI_INT, rd=1, rs1=1, imm=1023).encode()
        with pytest.raises(IllegalInstruction):
            Instruction(Opcode.S_ADDI_INT, rd=1, rs1=1, imm=1024).encode()
        with pytest.raises(IllegalInstruction):
            Instruction(Opcode.S_ADDI_INT, rd=1, rs1=1, imm=-1025).encode()

    def test_uimm_range(self):
        Instruction(Opcode.M_MM, imm=2047).encode()
        with pytest.raises(IllegalInstruction):
            Instruction(Opcode.M_MM, imm=-1).encode()
        with pytest.raises(IllegalInstruction):
            Instruction(Opcode.M_MM, imm=2048).encode()

    def test_reserved_fields_rejected_on_encode(self):
        with pytest.raises(IllegalInstruction):
            Instruction(Opcode.C_BREAK, rd=1).encode()
        with pytest.raises(IllegalInstruction):
            Instruction(Opcode.S_NOP, imm=1).encode()
        with pytest.raises(IllegalInstruction):
            Instruction(Opcode.V_EXP_V, rd=1, rs1=2, rs2=3).encode()

    def test_mem_imm_packing(self):
        assert pack_mem_imm(stride=1, prec=0) == 0b1000
        assert unpack_mem_imm(pack_mem_imm(stride=7, prec=3)) == (7, 3)
        assert unpack_mem_imm(0) == (1, 0)  # stride 0 means 1
        with pytest.raises(ValueError):
            pack_mem_imm(stride=256)
        with pytest.raises(ValueError):
            pack_mem_imm(prec=8)


class TestDecode:
    def test_opcode_zero_illegal(self):
        with pytest.raises(IllegalInstruction):
            Instruction.decode(0)

    def test_unused_opcode_numbers_illegal(self):
        for opnum in (0, 7, 38, 39, 43, 48, 63):
            with pytest.raises(IllegalInstruction):
                Instruction.decode(opnum << 26)

    def test_reserved_fields_rejected_on_decode(self):
        with pytest.raises(IllegalInstruction):
            Instruction.decode(0xBC200000)  # C_BREAK with rd=1
        with pytest.raises(IllegalInstruction):
            Instruction.decode(0x94000001)  # S_NOP with imm=1
        with pytest.raises(IllegalInstruction):
            Instruction.decode(0x38001800)  # V_EXP_V with rs2=3

    def test_full_opcode_space_roundtrip(self):
        rng = random.Random(7)
        for op in Opcode:
            sig = dict(SIGNATURES[op])
            for _ in range(100):
                fields = {}
                for f in ("rd", "rs1", "rs2"):
                    if f in sig:
                        fields[f] = rng.randrange(32)
                if "imm" in sig:
                    fields["imm"] = (
                        rng.randrange(-1024, 1024)
                        if sig["imm"] == "simm"
                        else rng.randrange(2048)
                    )
                ins = Instruction(op, **fields)
                word = ins.encode()
                back = Instruction.decode(word)
                assert back == ins
                assert back.encode() == word

    def test_fuzzed_words(self):
        rng = random.Random(11)
        accepted = 0
        for _ in range(50_000):
            word = rng.getrandbits(32)
            try:
                ins = Instruction.decode(word)
            except IllegalInstruction:
                continue
            accepted += 1
            assert ins.encode() == word
        assert accepted > 0


GOLDEN_ASM = """\
# warm up the pass buffer, then spin
    S_ADDI_INT x5, x0, 16     # trip count
loop:
    M_MM x0, x1, x2, 0x20
    M_MM_WO x3, x4, 64
    V_MUL_VF x3, x3, f1
    V_RED_MAX f2, x3
    S_ADDI_INT x5, x5, -1
    S_ST_INT x5, x0, @loop
done: C_BREAK
"""


class TestAssembler:
    def test_golden_program(self):
        prog = assemble(GOLDEN_ASM)
        assert len(prog) == 8
        assert prog[0] == Instruction(Opcode.S_ADDI_INT, rd=5, rs1=0, imm=16)
        assert prog[1] == Instruction(Opcode.M_MM, rd=0, rs1=1, rs2=2, imm=0x20)
        assert prog[2] == Instruction(Opcode.M_MM_WO, rd=3, rs1=4, imm=64)
        # @loop resolves to instruction index 1
        assert prog[6] == Instruction(Opcode.S_ST_INT, rd=5, rs1=0, imm=1)
        assert prog[7] == Instruction(Opcode.C_BREAK)

    def test_disassemble_reassembles_identically(self):
        prog = assemble(GOLDEN_ASM)
        text = disassemble(prog)
        again = assemble(text)
        assert again.words() == prog.words()

    def test_canonical_text(self):
        assert str(Instruction(Opcode.M_MM, rd=0, rs1=1, rs2=2, imm=5)) == "M_MM x0, x1, x2, 5"
        assert str(Instruction(Opcode.V_ADD_VF, rd=1, rs1=2, rs2=3)) == "V_ADD_VF x1, x2, f3"
        assert str(Instruction(Opcode.S_ADDI_INT, rd=5, rs1=5, imm=-1)) == "S_ADDI_INT x5, x5, -1"
        assert str(Instruction(Opcode.C_SET_ADDR_REG, rd=2, rs1=3, rs2=4)) == "C_SET_ADDR_REG a2, x3, x4"
        assert str(Instruction(Opcode.C_BREAK)) == "C_BREAK"

    def test_label_on_own_line_and_inline(self):
        prog = assemble("a:\nb: S_NOP\nS_ST_INT x0, x0, @a\nS_ST_INT x0, x0, @b\n")
        assert prog[1].imm == 0 and prog[2].imm == 0

    def test_errors_carry_line_numbers(self):
        cases = [
            ("S_NOP\nFROB x1\n", 2, "unknown mnemonic"),
            ("V_ADD_VV x1, x2\n", 1, "takes 3 operand"),
            ("V_ADD_VF x1, x2, x3\n", 1, "expected f-register"),
            ("S_ADDI_INT x1, x1, 4096\n", 1, "out of range"),
            ("S_ST_INT x0, x0, @nope\n", 1, "unknown label"),
            ("a: S_NOP\na: S_NOP\n", 2, "duplicate label"),
            ("S_LUI_INT x40, 1\n", 1, "out of range"),
            ("S_ADDI_INT x1, x1, zz\n", 1, "bad immediate"),
        ]
        for text, lineno, frag in cases:
            with pytest.raises(AsmError) as ei:
                assemble(text)
            assert f"line {lineno}:" in str(ei.value)
            assert frag in str(ei.value)


class TestProgramFile:
    def test_frozen_bytes(self):
        prog = Program([Instruction(Opcode.S_NOP), Instruction(Opcode.C_BREAK)])
        blob = prog.to_bytes()
        assert blob == b"PLSM\x02\x00\x00\x00\x00\x00\x00\x94\x00\x00\x00\xbc"
        assert Program.from_bytes(blob).words() == prog.words()

    def test_bad_magic_and_length(self):
        with pytest.raises(ValueError, match="bad magic"):
            Program.from_bytes(b"NOPE\x00\x00\x00\x00")
        with pytest.raises(ValueError, match="length"):
            Program.from_bytes(b"PLSM\x02\x00\x00\x00\x00\x00\x00\x94")
        with pytest.raises(ValueError, match="truncated"):
            Program.from_bytes(b"PL")

    def test_save_load(self, tmp_path):
        prog = assemble(GOLDEN_ASM)
        p = tmp_path / "prog.plsm"
        prog.save(p)
        assert Program.load(p).words() == prog.words()

    def test_illegal_word_in_image_rejected(self):
        blob = b"PLSM\x01\x00\x00\x00\x00\x00\x00\x00"
        with pytest.raises(IllegalInstruction):
            Program.from_bytes(blob)
