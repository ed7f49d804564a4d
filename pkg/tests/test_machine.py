"""Machine tests: exact datapath results and frozen timing behavior."""

import numpy as np
import pytest

from plena.formats import DataFormat, FP_SETTINGS, cast_minifloat
from plena.hbm import HbmConfig, HbmImage
from plena.isa import PREC_ACT, PREC_FP, PREC_KV, PREC_WEIGHT, assemble, pack_mem_imm
from plena.machine import ArchConfig, ExecutionReport, Machine, MachineError, square_array_model

MX8 = DataFormat.mxint(8, 16)
MX4 = DataFormat.mxint(4, 16)
E6M5 = FP_SETTINGS["fp_e6m5"]

SMALL = ArchConfig(
    blen=2, mlen=16, vlen=16, m_rows=64, v_rows=64, fp_words=64,
    int_mem_words=64, act_fmt=MX8, kv_fmt=MX8, fp_setting=E6M5,
)
FAST_HBM = HbmConfig(bandwidth_gbps=64.0, clock_ghz=1.0, fixed_latency=4)

IMM_ACT = pack_mem_imm(1, PREC_ACT)
IMM_W = pack_mem_imm(1, PREC_WEIGHT)
IMM_KV = pack_mem_imm(1, PREC_KV)
IMM_FP = pack_mem_imm(1, PREC_FP)


def grid(x):
    return cast_minifloat(np.asarray(x, np.float64), 6, 5)


def run(text, machine):
    return machine.run(assemble(text))


class TestConfig:
    def test_wo_latency_frozen(self):
        assert ArchConfig(blen=8, mlen=512, vlen=512).wo_latency == 8
        assert SMALL.wo_latency == 5  # 8 sub-arrays -> 3 tree stages + 2
        assert ArchConfig(blen=16, mlen=16, vlen=16).wo_latency == 2

    def test_validation(self):
        with pytest.raises(ValueError):
            ArchConfig(blen=3)
        with pytest.raises(ValueError):
            ArchConfig(blen=32, mlen=16)
        with pytest.raises(ValueError):
            ArchConfig(vlen=8, mlen=8, blen=2)  # activation block 16 > vlen
        with pytest.raises(ValueError):
            ArchConfig(int_width=24)

    def test_vlen_must_match_mlen(self):
        with pytest.raises(MachineError):
            Machine(ArchConfig(blen=2, mlen=32, vlen=16))

    def test_square_array_model_frozen(self):
        r = square_array_model(8, 4096, 4096, dim=64)
        assert r["cycles"] == 4096 * 72
        assert r["mac_ops"] == 8 * 4096 * 4096
        assert r["utilization"] == 8 / 72


class TestScalarUnit:
    def test_int_ops(self):
        m = Machine(SMALL)
        run(
            """
            S_ADDI_INT x1, x0, 5
            S_ADDI_INT x2, x0, 7
            S_MUL_INT x3, x1, x2
            S_SUB_INT x4, x3, x1
            S_ADDI_INT x5, x0, -7
            S_ADDI_INT x6, x0, 2
            S_DIV_INT x7, x5, x6
            S_LUI_INT x8, 3
            S_ST_INT x3, x0, 9
            S_LD_INT x9, x0, 9
            S_ADDI_INT x0, x0, 55
            C_BREAK
            """,
            m,
        )
        assert m.x[3] == 35 and m.x[4] == 30
        assert m.x[7] == -3  # trunc toward zero
        assert m.x[8] == 3 << 11
        assert m.x[9] == 35
        assert m.x[0] == 0  # hardwired zero

    def test_div_by_zero(self):
        with pytest.raises(MachineError, match="division by zero"):
            run("S_DIV_INT x1, x1, x0\nC_BREAK\n", Machine(SMALL))

    def test_int_wrap_16(self):
        cfg = ArchConfig(
            blen=2, mlen=16, vlen=16, m_rows=64, v_rows=64, int_width=16,
            act_fmt=MX8, kv_fmt=MX8, fp_setting=E6M5,
        )
        m = Machine(cfg)
        run(
            """
            S_LUI_INT x1, 15
            S_LUI_INT x2, 15
            S_ADD_INT x3, x1, x2
            C_BREAK
            """,
            m,
        )
        assert m.x[3] == 61440 - 65536

    def test_fp_ops_on_grid(self):
        m = Machine(SMALL)
        m.f[1] = 1.0
        m.f[2] = float(grid(2.0 ** -6))
        run("S_ADD_FP f3, f1, f2\nS_MAX_FP f4, f1, f2\nC_BREAK\n", m)
        assert m.f[3] == 1.0  # ties to even on the e6m5 grid
        assert m.f[4] == 1.0

    def test_lut_dispatch(self):
        m = Machine(SMALL)
        m.f[1] = 4.0
        run(
            """
            C_SET_LUT_REG 2
            S_LUT_FP f2, f1
            C_SET_LUT_REG 1
            S_LUT_FP f3, f1
            C_SET_LUT_REG 0
            S_LUT_FP f4, f1
            C_BREAK
            """,
            m,
        )
        assert m.f[2] == 0.5  # rsqrt(4)
        assert m.f[3] == 0.25  # recip
        assert m.f[4] == float(grid(np.exp(4.0)))

    def test_lut_errors(self):
        with pytest.raises(MachineError, match="LUT selector"):
            run("C_SET_LUT_REG 5\nC_BREAK\n", Machine(SMALL))
        m = Machine(SMALL)
        m.f[1] = -1.0
        with pytest.raises(MachineError, match="rsqrt"):
            run("C_SET_LUT_REG 2\nS_LUT_FP f2, f1\nC_BREAK\n", m)


class TestVectorUnit:
    def test_raw_stall_frozen(self):
        m = Machine(SMALL)
        m.f[1] = 3.0
        m.f[2] = 0.25
        rep = run(
            """
            S_ADDI_INT x1, x0, 1
            S_ADDI_INT x2, x0, 2
            V_LD_F x1, f1
            V_ADD_VF x2, x1, f2
            C_BREAK
            """,
            m,
        )
        assert rep.stall_raw == 1  # vector_latency 2, back-to-back consumer
        assert rep.cycles == 6
        np.testing.assert_array_equal(m.vrow(2), np.full(16, 3.25))

    def test_independent_instruction_hides_latency(self):
        m = Machine(SMALL)
        m.f[1] = 3.0
        rep = run(
            """
            S_ADDI_INT x1, x0, 1
            S_ADDI_INT x2, x0, 2
            V_LD_F x1, f1
            S_NOP
            V_ADD_VF x2, x1, f1
            C_BREAK
            """,
            m,
        )
        assert rep.stall_raw == 0

    def test_elementwise_and_reductions(self):
        m = Machine(SMALL)
        m.f[1] = 2.0
        m.f[2] = -1.5
        rep = run(
            """
            S_ADDI_INT x1, x0, 1
            S_ADDI_INT x2, x0, 2
            S_ADDI_INT x3, x0, 3
            V_LD_F x1, f1
            V_LD_F x2, f2
            V_MUL_VV x3, x1, x2
            V_RED_SUM f3, x3
            V_RED_MAX f4, x3
            C_BREAK
            """,
            m,
        )
        np.testing.assert_array_equal(m.vrow(3), np.full(16, -3.0))
        assert m.f[3] == -48.0
        assert m.f[4] == -3.0
        assert rep.poison_reads == 0

    def test_exp_rec_match_reference(self):
        m = Machine(SMALL)
        m.f[1] = 0.75
        run(
            """
            S_ADDI_INT x1, x0, 1
            S_ADDI_INT x2, x0, 2
            S_ADDI_INT x3, x0, 3
            V_LD_F x1, f1
            V_EXP_V x2, x1
            V_REC_V x3, x2
            C_BREAK
            """,
            m,
        )
        e = grid(np.exp(np.full(16, 0.75)))
        np.testing.assert_array_equal(m.vrow(2), e)
        np.testing.assert_array_equal(m.vrow(3), grid(1.0 / e))

    def test_rotation_roundtrip_exact(self):
        m = Machine(SMALL)
        m.f[1] = 1.0
        run(
            """
            S_ADDI_INT x1, x0, 1
            S_ADDI_INT x2, x0, 2
            S_ADDI_INT x3, x0, 3
            V_LD_F x1, f1
            V_ROTATION_EN x2, x1
            V_INV_ROTATION_EN x3, x2
            C_BREAK
            """,
            m,
        )
        want = np.zeros(16)
        want[0] = 4.0  # fwht of all-ones: sqrt(16) in lane 0
        np.testing.assert_array_equal(m.vrow(2), want)
        np.testing.assert_array_equal(m.vrow(3), np.ones(16))

    def test_poison_read_strict_and_counted(self):
        with pytest.raises(MachineError, match="uninitialized"):
            run("S_ADDI_INT x1, x0, 5\nV_EXP_V x2, x1\nC_BREAK\n", Machine(SMALL))
        m = Machine(SMALL, strict=False)
        rep = run("S_ADDI_INT x1, x0, 5\nV_EXP_V x2, x1\nC_BREAK\n", m)
        assert rep.poison_reads == 1


def gemm_fixture():
    """X (2, 32) @ W (4, 32).T with K split into two passes of mlen=16."""
    rng = np.random.default_rng(21)
    x = rng.standard_normal((2, 32))
    w = rng.standard_normal((4, 32))
    img = HbmImage(1 << 20)
    # activation rows: token t, pass p -> row t*2+p
    img.add_tensor("acts", x.reshape(2, 2, 16).reshape(4, 16), MX8)
    # weight rows: output j, pass p -> row j*2+p
    img.add_tensor("w", w.reshape(4, 2, 16).reshape(8, 16), MX4)
    aq = img.read_rows("acts", 0, 4).reshape(2, 32)
    wq = img.read_rows("w", 0, 8).reshape(4, 32)
    y_ref = grid(aq @ wq.T)  # float64 accumulate, one cast at write-out
    return img, y_ref


GEMM_PROLOG = f"""
    C_SET_ADDR_REG a0, x0, x0          # region 0 = acts
    S_ADDI_INT x1, x0, 1
    C_SET_ADDR_REG a1, x1, x0          # region 1 = weights
    S_ADDI_INT x2, x0, 4
    S_ADDI_INT x3, x0, 0
    H_PREFETCH_V x3, a0, x2, {IMM_ACT}
    S_ADDI_INT x2, x0, 8
    H_PREFETCH_M x3, a1, x2, {IMM_W}
    S_ADDI_INT x10, x0, 0              # act base, token 0
    S_ADDI_INT x11, x0, 2              # act base, token 1
"""


class TestMatrixUnit:
    def test_gemm_bit_exact(self):
        img, y_ref = gemm_fixture()
        m = Machine(SMALL, image=img, hbm_config=FAST_HBM)
        rep = run(
            GEMM_PROLOG
            + """
            S_ADDI_INT x20, x0, 0              # weight base, output 0
            S_ADDI_INT x21, x0, 2              # weight base, output 1
            S_ADDI_INT x4, x0, 16              # dest rows
            S_ADDI_INT x5, x0, 0               # lane block 0
            M_MM x0, x10, x20, 0
            M_MM x0, x11, x21, 0
            M_MM x0, x10, x20, 1
            M_MM x0, x11, x21, 1
            M_MM_WO x4, x5, 0
            S_ADDI_INT x20, x0, 4              # outputs 2 and 3
            S_ADDI_INT x21, x0, 6
            S_ADDI_INT x5, x0, 1               # lane block 1
            M_MM x0, x10, x20, 0
            M_MM x0, x11, x21, 0
            M_MM x0, x10, x20, 1
            M_MM x0, x11, x21, 1
            M_MM_WO x4, x5, 0
            C_BREAK
            """,
            m,
        )
        np.testing.assert_array_equal(m.vrow(16)[:4], y_ref[0])
        np.testing.assert_array_equal(m.vrow(17)[:4], y_ref[1])
        # write-out zeroes the untouched lanes of fresh rows, then preserves
        np.testing.assert_array_equal(m.vrow(16)[4:], np.zeros(12))
        assert rep.mac_ops == 8 * 16 * 2
        assert rep.matrix_issue_cycles == 10
        assert rep.poison_reads == 0

    def test_transposed_read_is_tile_column(self):
        rng = np.random.default_rng(22)
        x = rng.standard_normal((2, 16))
        wtile = rng.standard_normal((16, 16))
        img = HbmImage(1 << 20)
        img.add_tensor("acts", x, MX8)
        img.add_tensor("w", wtile, MX4)
        m = Machine(SMALL, image=img, hbm_config=FAST_HBM)
        run(
            f"""
            C_SET_ADDR_REG a0, x0, x0
            S_ADDI_INT x1, x0, 1
            C_SET_ADDR_REG a1, x1, x0
            S_ADDI_INT x2, x0, 2
            S_ADDI_INT x3, x0, 0
            H_PREFETCH_V x3, a0, x2, {IMM_ACT}
            S_ADDI_INT x2, x0, 16
            H_PREFETCH_M x3, a1, x2, {IMM_W}
            S_ADDI_INT x10, x0, 0
            S_ADDI_INT x11, x0, 1
            S_ADDI_INT x20, x0, 3              # tile columns 3 and 4
            S_ADDI_INT x21, x0, 4
            S_ADDI_INT x4, x0, 20
            S_ADDI_INT x5, x0, 0
            M_TMM x0, x10, x20, 0
            M_TMM x0, x11, x21, 0
            M_MM_WO x4, x5, 0
            C_BREAK
            """,
            m,
        )
        tile = np.stack([m.mrow(j) for j in range(16)])
        aq = np.stack([m.v_sram.data[0], m.v_sram.data[1]])
        want = grid(aq @ np.stack([tile[:, 3], tile[:, 4]]).T)
        np.testing.assert_array_equal(m.vrow(20)[:2], want[0])
        np.testing.assert_array_equal(m.vrow(21)[:2], want[1])

    def test_transposed_tile_must_be_fully_valid(self):
        img, _ = gemm_fixture()
        cfg = ArchConfig(
            blen=2, mlen=16, vlen=16, m_rows=16, v_rows=64,
            act_fmt=MX8, kv_fmt=MX8, fp_setting=E6M5,
        )
        m = Machine(cfg, image=img, hbm_config=FAST_HBM)
        prog = GEMM_PROLOG.replace("S_ADDI_INT x2, x0, 8", "S_ADDI_INT x2, x0, 6")
        with pytest.raises(MachineError, match="partially valid tile"):
            run(
                prog
                + """
                S_ADDI_INT x20, x0, 3
                S_ADDI_INT x21, x0, 4
                M_TMM x0, x10, x20, 0
                M_TMM x0, x11, x21, 0
                C_BREAK
                """,
                m,
            )

    def test_mv_group(self):
        img, _ = gemm_fixture()
        m = Machine(SMALL, image=img, hbm_config=FAST_HBM)
        rep = run(
            GEMM_PROLOG
            + """
            S_ADDI_INT x20, x0, 0
            S_ADDI_INT x21, x0, 2
            S_ADDI_INT x4, x0, 24
            S_ADDI_INT x5, x0, 0
            M_MV x0, x10, x20, 0
            M_MV x0, x10, x21, 0
            M_MV_WO x4, x5, 0
            C_BREAK
            """,
            m,
        )
        aq = m.v_sram.data[0]
        w0, w1 = m.mrow(0), m.mrow(2)
        want = grid(np.array([aq @ w0, aq @ w1]))
        np.testing.assert_array_equal(m.vrow(24)[:2], want)
        assert rep.mac_ops == 2 * 16  # mlen per mv issue

    def test_mixed_group_rejected(self):
        img, _ = gemm_fixture()
        m = Machine(SMALL, image=img, hbm_config=FAST_HBM)
        with pytest.raises(MachineError, match="mixed"):
            run(
                GEMM_PROLOG + "M_MM x0, x10, x10, 0\nM_MV x0, x10, x10, 0\nC_BREAK\n", m
            )

    def test_partial_group_write_out_rejected(self):
        img, _ = gemm_fixture()
        m = Machine(SMALL, image=img, hbm_config=FAST_HBM)
        with pytest.raises(MachineError, match="partial pass group"):
            run(GEMM_PROLOG + "M_MM x0, x10, x10, 0\nM_MM_WO x4, x5, 0\nC_BREAK\n", m)

    def test_write_out_overlap_and_tree_conflict(self):
        img, _ = gemm_fixture()
        m = Machine(SMALL, image=img, hbm_config=FAST_HBM)
        rep = run(
            GEMM_PROLOG
            + "S_NOP\n" * 30  # let all prefetched rows land
            + """
            S_ADDI_INT x20, x0, 0
            S_ADDI_INT x21, x0, 2
            S_ADDI_INT x4, x0, 16
            S_ADDI_INT x5, x0, 0
            M_MM x0, x10, x20, 0
            M_MM x0, x11, x21, 0
            M_MM_WO x4, x5, 0
            M_MM x0, x10, x20, 1
            M_MM x0, x11, x21, 1
            S_ADDI_INT x4, x0, 18
            M_MM_WO x4, x5, 0
            C_BREAK
            """,
            m,
        )
        # issues after a write-out proceed immediately; only the second
        # write-out waits for the tree (latency 5, issued 4 cycles later)
        assert rep.stall_mem == 0
        assert rep.stall_matrix == 1
        assert rep.matrix_stall_cycles == 1

    def test_wo_result_read_stalls_until_tree_done(self):
        img, _ = gemm_fixture()
        m = Machine(SMALL, image=img, hbm_config=FAST_HBM)
        rep = run(
            GEMM_PROLOG
            + """
            S_ADDI_INT x20, x0, 0
            S_ADDI_INT x21, x0, 2
            S_ADDI_INT x4, x0, 16
            S_ADDI_INT x5, x0, 0
            M_MM x0, x10, x20, 0
            M_MM x0, x11, x21, 0
            M_MM_WO x4, x5, 0
            V_EXP_V x5, x4
            C_BREAK
            """,
            m,
        )
        assert rep.stall_raw == SMALL.wo_latency - 1


class TestMemoryPath:
    def test_prefetch_distance_hides_latency(self):
        img, _ = gemm_fixture()
        slow = HbmConfig(bandwidth_gbps=32.0, clock_ghz=1.0, fixed_latency=20)
        body = """
        S_ADDI_INT x20, x0, 0
        S_ADDI_INT x21, x0, 1
        M_MM x0, x10, x20, 0
        M_MM x0, x10, x21, 0
        C_BREAK
        """
        just_in_time = Machine(SMALL, image=gemm_fixture()[0], hbm_config=slow)
        rep = run(GEMM_PROLOG + body, just_in_time)
        assert rep.stall_mem > 0
        padded = Machine(SMALL, image=img, hbm_config=slow)
        rep2 = run(GEMM_PROLOG + "S_NOP\n" * 40 + body, padded)
        assert rep2.stall_mem == 0

    def test_fp_consts_prefetch(self):
        img = HbmImage(1 << 16)
        img.add_fp_rows("consts", np.array([[2.0, 0.5]]))
        m = Machine(SMALL, image=img, hbm_config=FAST_HBM)
        rep = run(
            f"""
            C_SET_ADDR_REG a0, x0, x0
            S_ADDI_INT x2, x0, 1
            H_PREFETCH_V x0, a0, x2, {IMM_FP}
            S_LD_FP f1, x0, 0
            S_LD_FP f2, x0, 1
            C_BREAK
            """,
            m,
        )
        assert m.f[1] == 2.0 and m.f[2] == 0.5
        assert rep.stall_mem > 0  # first load waits on the transfer

    def test_store_appends_and_relocates(self):
        img = HbmImage(1 << 16)
        rng = np.random.default_rng(5)
        img.add_tensor("kv", rng.standard_normal((2, 16)), MX8, capacity_rows=4)
        m = Machine(SMALL, image=img, hbm_config=FAST_HBM)
        m.f[1] = 1.5
        rep = run(
            f"""
            S_ADDI_INT x1, x0, 3
            V_LD_F x1, f1
            S_ADDI_INT x2, x0, 2               # append at row 2
            C_SET_ADDR_REG a0, x0, x2
            S_ADDI_INT x3, x0, 1               # one row
            H_STORE_V x1, a0, x3, {IMM_KV}
            C_BREAK
            """,
            m,
        )
        assert img.region("kv").rows == 3
        np.testing.assert_array_equal(img.read_rows("kv", 2, 1), np.full((1, 16), 1.5))
        assert rep.relocation_bytes == 2  # two old scale bytes moved
        assert rep.hbm_traffic["store_v"] == 17 + 2

    def test_region_width_mismatch(self):
        img = HbmImage(1 << 16)
        img.add_tensor("w", np.zeros((2, 32)), MX8)
        m = Machine(SMALL, image=img, hbm_config=FAST_HBM)
        with pytest.raises(MachineError, match="wide"):
            run(
                f"""
                C_SET_ADDR_REG a0, x0, x0
                S_ADDI_INT x2, x0, 1
                H_PREFETCH_M x0, a0, x2, {IMM_W}
                C_BREAK
                """,
                m,
            )


class TestRunLoop:
    def test_missing_break(self):
        with pytest.raises(MachineError, match="without C_BREAK"):
            run("S_NOP\n", Machine(SMALL))

    def test_watchdog(self):
        with pytest.raises(MachineError, match="max_cycles"):
            Machine(SMALL).run(assemble("S_NOP\n" * 10 + "C_BREAK\n"), max_cycles=3)

    def test_report_shape(self):
        rep = run("S_NOP\nC_BREAK\n", Machine(SMALL))
        assert isinstance(rep, ExecutionReport)
        assert rep.halted and rep.cycles == 2 and rep.instructions == 2
        assert rep.utilization_total == 0.0
        assert rep.stalls == 0
