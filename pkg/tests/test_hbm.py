"""HBM tests: channel timing oracles, image packing, append relocation."""

import numpy as np
import pytest

from plena.formats import DataFormat, MXTensor
from plena.hbm import Hbm, HbmConfig, HbmImage, pack_rows, unpack_rows


class TestConfig:
    def test_bytes_per_cycle_frozen(self):
        assert HbmConfig(819.2, 1.0).bytes_per_cycle == 819
        assert HbmConfig(1638.4, 2.0).bytes_per_cycle == 819
        assert HbmConfig(64.0, 1.0).bytes_per_cycle == 64

    def test_rejects_sub_byte_bandwidth(self):
        with pytest.raises(ValueError):
            HbmConfig(0.5, 1.0)


class TestChannelTiming:
    def cfg(self, lat=10):
        return HbmConfig(bandwidth_gbps=64.0, clock_ghz=1.0, fixed_latency=lat)

    def test_single_transfer_row_ready_times(self):
        hbm = Hbm(self.cfg())
        t = hbm.enqueue("prefetch_m", 0, [128, 128, 64])
        # 64 B/cycle: rows take 2, 2, 1 cycles back to back
        assert hbm.ready_at(t, 0) == 2 + 10
        assert hbm.ready_at(t, 1) == 4 + 10
        assert hbm.ready_at(t, 2) == 5 + 10

    def test_early_rows_unblock_before_late_ones(self):
        hbm = Hbm(self.cfg())
        t = hbm.enqueue("prefetch_v", 0, [640] * 8)
        readies = [hbm.ready_at(t, i) for i in range(8)]
        assert readies == sorted(readies)
        assert readies[0] < readies[-1]

    def test_arrival_gap_stalls_channel(self):
        hbm = Hbm(self.cfg())
        t = hbm.enqueue("prefetch_m", 5, [64])
        assert hbm.ready_at(t, 0) == 5 + 1 + 10

    def test_round_robin_interleaves_rows(self):
        hbm = Hbm(self.cfg(lat=0))
        a = hbm.enqueue("prefetch_m", 0, [64, 64, 64])
        b = hbm.enqueue("prefetch_v", 0, [64, 64, 64])
        assert [hbm.ready_at(a, i) for i in range(3)] == [1, 3, 5]
        assert [hbm.ready_at(b, i) for i in range(3)] == [2, 4, 6]

    def test_fifo_within_engine(self):
        hbm = Hbm(self.cfg(lat=0))
        first = hbm.enqueue("store_v", 0, [64, 64])
        second = hbm.enqueue("store_v", 0, [64])
        assert hbm.ready_at(second, 0) == 3  # after both rows of first
        assert first.ready == [1, 2]

    def test_late_arrival_joins_round_robin(self):
        hbm = Hbm(self.cfg(lat=0))
        a = hbm.enqueue("prefetch_m", 0, [64] * 4)
        b = hbm.enqueue("prefetch_v", 2, [64] * 2)
        # a runs alone for cycles 1-2; b arrives at 2 and interleaves after
        assert [hbm.ready_at(a, i) for i in range(4)] == [1, 2, 4, 6]
        assert [hbm.ready_at(b, i) for i in range(2)] == [3, 5]

    def test_drain_and_traffic(self):
        hbm = Hbm(self.cfg())
        hbm.enqueue("prefetch_m", 0, [128, 64], region="w")
        hbm.enqueue("store_v", 0, [64], region="o")
        # serve order: m row0 (2 cyc), store row0 (1), m row1 (1); +latency 10
        assert hbm.drain() == 14
        assert hbm.traffic == {"prefetch_m": 192, "prefetch_v": 0, "store_v": 64}
        assert hbm.region_traffic == {("prefetch_m", "w"): 192, ("store_v", "o"): 64}
        assert hbm.total_bytes == 256

    def test_rejects_bad_requests(self):
        hbm = Hbm(self.cfg())
        with pytest.raises(ValueError):
            hbm.enqueue("dma9", 0, [64])
        with pytest.raises(ValueError):
            hbm.enqueue("store_v", 0, [])
        with pytest.raises(ValueError):
            hbm.enqueue("store_v", 0, [0])


class TestRowPacking:
    @pytest.mark.parametrize("bits,signed", [(2, True), (3, True), (4, True), (8, True), (4, False), (8, False)])
    def test_roundtrip(self, bits, signed):
        rng = np.random.default_rng(bits)
        lo, hi = (-(1 << (bits - 1)), (1 << (bits - 1))) if signed else (0, 1 << bits)
        codes = rng.integers(lo, hi, size=(5, 16)).astype(np.int16)
        buf = pack_rows(codes, bits)
        assert buf.shape == (5, 16 * bits // 8)
        back = unpack_rows(buf, 16, bits, signed)
        np.testing.assert_array_equal(back.astype(np.int32), codes.astype(np.int32))

    def test_frozen_bytes_mxint4(self):
        codes = np.array([[1, -2, 3, -4, 7, -8, 0, -1]], np.int16)
        buf = pack_rows(codes, 4)
        # nibbles little-first: 0xE1, 0xC3, 0x87, 0xF0
        assert buf.tobytes() == bytes([0xE1, 0xC3, 0x87, 0xF0])


class TestImage:
    def test_alignment_and_zero_fill(self):
        img = HbmImage(4096)
        fmt = DataFormat.mxint(8, block_size=16)
        a = img.add_tensor("a", np.zeros((1, 16)), fmt)
        b = img.add_tensor("b", np.zeros((1, 16)), fmt)
        assert a.offset % 64 == 0 and b.offset % 64 == 0
        assert b.offset >= a.offset + a.nbytes
        np.testing.assert_array_equal(img.read_rows("a", 0, 1), np.zeros((1, 16)))

    def test_capacity_overflow(self):
        img = HbmImage(128)
        with pytest.raises(MemoryError):
            img.add_tensor("big", np.zeros((4, 64)), DataFormat.mxint(8, 16))

    def test_tensor_roundtrip_matches_mxtensor(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((8, 64))
        fmt = DataFormat.mxint(4, block_size=16)
        img = HbmImage(1 << 16)
        img.add_tensor("x", x, fmt)
        want = MXTensor.quantize(x, fmt).dequantize()
        np.testing.assert_array_equal(img.read_rows("x", 0, 8), want)

    def test_strided_read(self):
        x = np.arange(6 * 16, dtype=np.float64).reshape(6, 16)
        img = HbmImage(1 << 16)
        img.add_tensor("x", x, DataFormat.mxint(8, 16))
        full = img.read_rows("x", 0, 6)
        np.testing.assert_array_equal(img.read_rows("x", 1, 3, stride=2), full[[1, 3, 5]])
        with pytest.raises(IndexError):
            img.read_rows("x", 4, 2, stride=2)

    def test_overwrite_requantizes(self):
        img = HbmImage(1 << 16)
        fmt = DataFormat.mxint(8, 16)
        img.add_tensor("x", np.zeros((2, 16)), fmt)
        new = np.linspace(-3, 3, 16)[None, :]
        img.write_rows("x", 1, new)
        want = MXTensor.quantize(new, fmt).dequantize()
        np.testing.assert_array_equal(img.read_rows("x", 1, 1), want)
        np.testing.assert_array_equal(img.read_rows("x", 0, 1), np.zeros((1, 16)))

    def test_fp_rows_exact_wide_range(self):
        img = HbmImage(1 << 12)
        vals = np.array([[1e300, -0.0, 2.5e-310, 7.0]])
        img.add_fp_rows("consts", vals)
        got = img.read_rows("consts", 0, 1)
        np.testing.assert_array_equal(got, vals)
        assert np.signbit(got[0, 1])

    def test_region_lookup_by_index(self):
        img = HbmImage(1 << 12)
        img.add_fp_rows("consts", np.ones((1, 4)))
        assert img.region(0) is img.region("consts")
        assert img.region("consts").index == 0


class TestAppendRelocation:
    def make(self):
        img = HbmImage(1 << 16)
        fmt = DataFormat.mxint(8, 16)
        rng = np.random.default_rng(9)
        x = rng.standard_normal((4, 32))
        region = img.add_tensor("kv", x, fmt, capacity_rows=8)
        return img, region, x

    def test_initial_scale_placement(self):
        img, r, _ = self.make()
        assert r.rows == 4
        assert r.row_bytes == 32 and r.scales_per_row == 2
        assert r.scale_offset == r.offset + 4 * 32

    def test_append_moves_scales_and_preserves_data(self):
        img, r, x = self.make()
        before = img.read_rows("kv", 0, 4).copy()
        rng = np.random.default_rng(10)
        new = rng.standard_normal((2, 32))
        written, relocated = img.write_rows("kv", 4, new)
        assert r.rows == 6
        assert r.scale_offset == r.offset + 6 * 32
        assert relocated == 4 * 2  # four old rows of scales moved
        assert written == 2 * (32 + 2)
        np.testing.assert_array_equal(img.read_rows("kv", 0, 4), before)
        fmt = DataFormat.mxint(8, 16)
        want = MXTensor.quantize(new, fmt).dequantize()
        np.testing.assert_array_equal(img.read_rows("kv", 4, 2), want)

    def test_append_past_capacity_fails(self):
        img, r, _ = self.make()
        with pytest.raises(MemoryError):
            img.write_rows("kv", 4, np.zeros((5, 32)))
        with pytest.raises(IndexError):
            img.write_rows("kv", 7, np.zeros((1, 32)))


class TestPersistence:
    def test_save_load_roundtrip(self, tmp_path):
        img = HbmImage(1 << 16)
        fmt = DataFormat.mxfp(4, 3, block_size=16)
        rng = np.random.default_rng(4)
        x = rng.standard_normal((4, 32))
        img.add_tensor("w", x, fmt, capacity_rows=6)
        img.add_fp_rows("consts", np.array([[1.0, 0.5]]))
        img.save(tmp_path / "img")
        back = HbmImage.load(tmp_path / "img")
        np.testing.assert_array_equal(back.read_rows("w", 0, 4), img.read_rows("w", 0, 4))
        np.testing.assert_array_equal(back.read_rows("consts", 0, 1), [[1.0, 0.5]])
        assert back.region("w").capacity_rows == 6
        # appends still work after reload
        back.write_rows("w", 4, np.ones((1, 32)))
        assert back.region("w").rows == 5
