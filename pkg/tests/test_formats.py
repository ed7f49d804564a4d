"""Format codecs: frozen oracle values first, then properties."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plena.formats import (
    DataFormat,
    FormatKind,
    MXTensor,
    cast_minifloat,
    decode_minifloat,
    dequantize_block,
    encode_minifloat,
    fwht,
    load_mx_tensor,
    minifloat_max,
    minifloat_min_subnormal,
    quantize_block,
    quantize_blocks,
    save_mx_tensor,
    scale_exponents,
)
from plena.formats import _kernels_np, kernels

MXINT4 = DataFormat.mxint(4)
MXINT8 = DataFormat.mxint(8)
E2M1 = DataFormat.mxfp(2, 1)
E4M3 = DataFormat.mxfp(4, 3)


class TestScaleExponent:
    def test_frozen_cases(self):
        # Hand-derived: e = ceil(log2(amax / max_code)), max_code 7 for mxint4.
        assert scale_exponents([4.0], 7.0, -128, 127)[0] == 0  # [1,-2,3,4]
        assert scale_exponents([14.0], 7.0, -128, 127)[0] == 1
        assert scale_exponents([7.0], 7.0, -128, 127)[0] == 0  # exact ratio 1.0
        assert scale_exponents([3.5], 7.0, -128, 127)[0] == -1  # exact ratio 0.5
        assert scale_exponents([0.0], 7.0, -128, 127)[0] == 0  # zero block rule

    def test_clamping(self):
        assert scale_exponents([1e300], 7.0, -128, 127)[0] == 127
        assert scale_exponents([1e-300], 7.0, -128, 127)[0] == -128

    def test_no_unclipped_overflow(self):
        # The ceil rule guarantees amax / 2^e <= max_code.
        rng = np.random.default_rng(7)
        amax = np.abs(rng.standard_normal(1000)) * 10.0 ** rng.integers(-6, 6, 1000)
        e = scale_exponents(amax, 7.0, -128, 127)
        assert (amax / np.ldexp(1.0, e) <= 7.0 + 1e-12).all()


class TestMxint:
    def test_frozen_block(self):
        codes, e = quantize_block([1.0, -2.0, 3.0, 4.0], MXINT4)
        assert e == 0
        assert codes.tolist() == [1, -2, 3, 4]

    def test_frozen_scale_two(self):
        codes, e = quantize_block([14.0], MXINT4)
        assert e == 1
        assert codes.tolist() == [7]
        assert dequantize_block(codes, e, MXINT4).tolist() == [14.0]

    def test_frozen_clip_half(self):
        # clip 0.5 shrinks the range: scale from 3.5 -> e = -1, 7 clips to code 7.
        codes, e = quantize_block([7.0, 1.0], MXINT4, clip_fraction=0.5)
        assert e == -1
        assert codes.tolist() == [7, 2]
        assert dequantize_block(codes, e, MXINT4).tolist() == [3.5, 1.0]

    def test_zero_block(self):
        codes, e = quantize_block(np.zeros(16), MXINT4)
        assert e == 0 and not codes.any()

    def test_ties_to_even(self):
        codes, _ = quantize_block([2.5, 7.0], MXINT4)
        assert codes.tolist() == [2, 7]
        codes, _ = quantize_block([3.5, 7.0], MXINT4)
        assert codes.tolist() == [4, 7]

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            quantize_block([np.inf, 1.0], MXINT4)

    def test_rejects_out_of_range_code(self):
        with pytest.raises(ValueError):
            dequantize_block(np.asarray([8]), 0, MXINT4)

    @settings(max_examples=200, derandomize=True)
    @given(
        st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=16),
        st.sampled_from([2, 3, 4, 8]),
    )
    def test_half_step_bound(self, values, bits):
        fmt = DataFormat.mxint(bits, block_size=16)
        codes, e = quantize_block(values, fmt)
        back = dequantize_block(codes, e, fmt)
        assert np.abs(back - np.asarray(values)).max() <= np.ldexp(1.0, e) / 2 + 1e-12

    @settings(max_examples=150, derandomize=True)
    @given(
        st.lists(st.floats(-1e4, 1e4, allow_nan=False), min_size=2, max_size=16),
        st.sampled_from(["mxint4", "mxint8", "mxfp_e2m1", "mxfp_e4m3", "mxfp_e5m2"]),
    )
    def test_idempotent(self, values, name):
        fmt = DataFormat.parse(name)
        codes, e = quantize_block(values, fmt)
        back = dequantize_block(codes, e, fmt)
        codes2, e2 = quantize_block(back, fmt)
        assert e2 == e
        assert (codes2 == codes).all()


class TestMxfp:
    def test_frozen_renormalized_scale(self):
        # cast(3.2) on the E2M1 grid at scale 1 is 3.0 = max/2 exactly; the
        # canonical form shifts to scale 2^-1 with element 6.0 (code 0b111).
        codes, e = quantize_block([3.2], E2M1)
        assert e == -1
        assert codes.tolist() == [0b111]
        assert dequantize_block(codes, e, E2M1).tolist() == [3.0]

    def test_e2m1_max_is_six(self):
        assert E2M1.max_value == 6.0

    def test_saturating_clip(self):
        codes, e = quantize_block([6.0, 1.0], E2M1, clip_fraction=0.5)
        deq = dequantize_block(codes, e, E2M1)
        assert deq[0] == pytest.approx(3.0)  # clipped to max at the shrunk scale

    def test_blocks_shape_validation(self):
        with pytest.raises(ValueError):
            quantize_blocks(np.zeros(4), MXINT4)


class TestMinifloat:
    def test_one_is_bias_exponent(self):
        code = encode_minifloat(np.asarray([1.0]), 6, 5)[0]
        assert code == 31 << 5  # E = bias, M = 0
        assert decode_minifloat([code], 6, 5)[0] == 1.0

    @pytest.mark.parametrize("eb,mb", [(3, 2), (2, 3), (2, 1), (4, 3), (5, 2), (6, 5), (4, 7)])
    def test_exhaustive_roundtrip(self, eb, mb):
        bits = 1 + eb + mb
        patterns = np.arange(1 << bits, dtype=np.uint16)
        vals = decode_minifloat(patterns, eb, mb)
        assert np.isfinite(vals).all()
        assert (encode_minifloat(vals, eb, mb) == patterns).all()
        # decoded values are fixpoints of the cast
        assert (cast_minifloat(vals, eb, mb) == vals).all()

    def test_saturation(self):
        maxv = minifloat_max(6, 5)
        assert maxv == (2.0 - 2.0**-5) * 2.0**32
        out = cast_minifloat([1e30, -1e30, np.inf, -np.inf], 6, 5)
        assert out.tolist() == [maxv, -maxv, maxv, -maxv]

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            cast_minifloat([np.nan], 6, 5)

    def test_subnormals(self):
        tiny = minifloat_min_subnormal(6, 5)
        assert cast_minifloat([tiny, tiny / 3.0], 6, 5).tolist() == [tiny, 0.0]

    def test_rne_ties(self):
        # E4M3 grid around 1.0 steps by 2^-3: 1.0625 is a tie -> even (1.0).
        out = cast_minifloat([1.0625, 1.1875], 4, 3)
        assert out.tolist() == [1.0, 1.25]

    def test_negative_zero(self):
        code = encode_minifloat(np.asarray([-0.0]), 4, 3)[0]
        assert code == 0x80
        back = decode_minifloat([code], 4, 3)
        assert back[0] == 0.0 and np.signbit(back[0])


class TestFwht:
    def test_frozen_impulse(self):
        assert fwht([1.0, 0.0, 0.0, 0.0]).tolist() == [0.5, 0.5, 0.5, 0.5]

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ValueError):
            fwht(np.zeros(6))

    def test_matches_hadamard_matrix(self):
        # Oracle: explicit Sylvester construction.
        n = 16
        h = np.asarray([[1.0]])
        while h.shape[0] < n:
            h = np.block([[h, h], [h, -h]])
        h /= np.sqrt(n)
        rng = np.random.default_rng(3)
        x = rng.standard_normal((5, n))
        assert np.allclose(fwht(x), x @ h, atol=1e-12)

    @settings(max_examples=100, derandomize=True)
    @given(st.integers(0, 6), st.integers(0, 2**32 - 1))
    def test_self_inverse_and_isometry(self, logn, seed):
        n = 1 << logn
        x = np.random.default_rng(seed).standard_normal(n)
        y = fwht(x)
        assert np.allclose(fwht(y, inverse=True), x, atol=1e-10)
        assert np.isclose(np.linalg.norm(y), np.linalg.norm(x))


class TestMXTensor:
    def test_padding_rule(self):
        # (3, 10) with block 4 pads the last axis to 12 -> 9 blocks.
        t = MXTensor.quantize(np.ones((3, 10)), DataFormat.mxint(4, block_size=4))
        assert t.n_blocks == 9
        assert t.dequantize().shape == (3, 10)

    def test_roundtrip_error_bound(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((4, 64)) * 3
        t = MXTensor.quantize(x, MXINT8)
        step = np.ldexp(1.0, t.exps.astype(int)).reshape(4, -1)
        bound = np.repeat(step, MXINT8.block_size, axis=1) / 2
        assert (np.abs(t.dequantize() - x) <= bound + 1e-12).all()

    @pytest.mark.parametrize("name", ["mxint4", "mxint8", "mxfp_e4m3", "mxfp_e2m1", "fp_e6m5"])
    def test_plxt_roundtrip(self, tmp_path, name):
        fmt = DataFormat.parse(name)
        rng = np.random.default_rng(5)
        x = rng.standard_normal((6, 21))
        t = MXTensor.quantize(x, fmt)
        save_mx_tensor(tmp_path / "t.plxt", t)
        back = load_mx_tensor(tmp_path / "t.plxt")
        assert back.fmt == t.fmt
        assert back.shape == t.shape
        assert (back.codes == t.codes).all()
        assert (back.exps == t.exps).all()
        assert (back.dequantize() == t.dequantize()).all()

    def test_plxt_rejects_bad_magic(self, tmp_path):
        p = tmp_path / "bad.plxt"
        p.write_bytes(b"NOPE" + bytes(64))
        with pytest.raises(ValueError):
            load_mx_tensor(p)


class TestFormatNames:
    @pytest.mark.parametrize(
        "name", ["mxint4", "mxint8b32", "mxfp_e4m3", "mxfp_e2m1b8", "fp_e6m5"]
    )
    def test_parse_name_roundtrip(self, name):
        assert DataFormat.parse(name).name == name

    def test_kind_values_are_stable(self):
        # Serialized in PLXT headers; must never change.
        assert (FormatKind.MXINT, FormatKind.MXFP, FormatKind.MINIFLOAT) == (0, 1, 2)


@pytest.mark.skipif(not kernels.HAVE_EXT, reason="compiled kernels not built")
class TestExtensionParity:
    """The compiled kernels must match the NumPy reference bit for bit."""

    def test_cast(self):
        rng = np.random.default_rng(17)
        x = rng.standard_normal(4096) * 10.0 ** rng.integers(-12, 12, 4096)
        for eb, mb in [(6, 5), (4, 3), (2, 1), (8, 5)]:
            a = kernels._impl.cast_minifloat(x, eb, mb)
            b = _kernels_np.cast_minifloat(x, eb, mb)
            np.testing.assert_array_equal(a, b)

    def test_quantize(self):
        rng = np.random.default_rng(19)
        blocks = rng.standard_normal((512, 16)) * 100
        for clip in (1.0, 0.7, 0.5):
            c1, e1 = kernels._impl.mxint_quantize_blocks(blocks, 7, clip, -128, 127)
            c2, e2 = _kernels_np.mxint_quantize_blocks(blocks, 7, clip, -128, 127)
            np.testing.assert_array_equal(c1, c2)
            np.testing.assert_array_equal(e1, e2)

    def test_fwht(self):
        rng = np.random.default_rng(23)
        x = rng.standard_normal((32, 256))
        np.testing.assert_allclose(kernels._impl.fwht(x), _kernels_np.fwht(x), atol=1e-12)
