"""Float32 codec, product field arithmetic and the coarse hypothesis grid."""

import numpy as np
import pytest

from nnleak.errors import EmptyGridError, OutOfModelError
from nnleak.fp32 import (
    EXP_BIAS,
    MANTISSA_BITS,
    MANTISSA_MASK,
    Float32Parts,
    bits_to_float,
    decompose,
    float_to_bits,
    hamming_weight,
    hw32,
    product_parts,
    realign,
    recompose,
    step1_grid,
)


class TestBitCodec:
    def test_known_patterns(self):
        assert float_to_bits(1.0) == 0x3F800000
        assert float_to_bits(-2.0) == 0xC0000000
        assert float_to_bits(0.0) == 0x00000000
        assert bits_to_float(0x3F800000) == 1.0

    def test_roundtrip_random_patterns(self):
        rng = np.random.default_rng(7)
        for u in rng.integers(0, 2**32, size=5000, dtype=np.uint64):
            u = int(u)
            v = bits_to_float(u)
            if v != v:  # NaN payloads are not required to roundtrip
                continue
            assert float_to_bits(v) == u

    def test_rounds_to_single_precision(self):
        # 0.1 is not representable; the codec must round like float32
        assert bits_to_float(float_to_bits(0.1)) == float(np.float32(0.1))


class TestDecomposeRecompose:
    def test_fields_of_one(self):
        p = decompose(1.0)
        assert (p.sign, p.exponent, p.mantissa) == (0, EXP_BIAS, 0)

    def test_fields_of_negative(self):
        p = decompose(-1.5)
        assert (p.sign, p.exponent, p.mantissa) == (1, EXP_BIAS, 1 << 22)

    def test_zero_allowed(self):
        p = decompose(0.0)
        assert (p.sign, p.exponent, p.mantissa) == (0, 0, 0)
        assert recompose(p) == 0.0

    def test_roundtrip_random_normals(self):
        rng = np.random.default_rng(11)
        exps = rng.integers(1, 255, size=2000)
        mans = rng.integers(0, MANTISSA_MASK + 1, size=2000)
        signs = rng.integers(0, 2, size=2000)
        for s, e, m in zip(signs, exps, mans):
            v = bits_to_float((int(s) << 31) | (int(e) << MANTISSA_BITS) | int(m))
            p = decompose(v)
            assert (p.sign, p.exponent, p.mantissa) == (int(s), int(e), int(m))
            assert recompose(p) == v

    @pytest.mark.parametrize("bad", [float("inf"), float("-inf"), float("nan"), 1e-40])
    def test_out_of_model_rejected(self, bad):
        with pytest.raises(OutOfModelError):
            decompose(bad)

    def test_recompose_rejects_bad_fields(self):
        with pytest.raises(OutOfModelError):
            recompose(Float32Parts(sign=0, exponent=255, mantissa=0))
        with pytest.raises(OutOfModelError):
            recompose(Float32Parts(sign=0, exponent=0, mantissa=1))

    def test_field_range_validation(self):
        with pytest.raises(ValueError):
            Float32Parts(sign=2, exponent=127, mantissa=0)
        with pytest.raises(ValueError):
            Float32Parts(sign=0, exponent=256, mantissa=0)
        with pytest.raises(ValueError):
            Float32Parts(sign=0, exponent=127, mantissa=MANTISSA_MASK + 1)


class TestHammingWeight:
    def test_known_values(self):
        assert hamming_weight(0.0) == 0
        assert hamming_weight(1.0) == 7  # 0x3F800000
        assert hamming_weight(-1.0) == 8

    def test_scalar_matches_bit_count(self):
        rng = np.random.default_rng(3)
        for u in rng.integers(0, 2**31, size=1000, dtype=np.uint64):
            v = bits_to_float(int(u))
            if v != v or v in (float("inf"), float("-inf")):
                continue
            assert hamming_weight(v) == int(u).bit_count()

    def test_rejects_non_finite(self):
        with pytest.raises(OutOfModelError):
            hamming_weight(float("inf"))
        with pytest.raises(OutOfModelError):
            hamming_weight(float("nan"))

    def test_hw32_matches_bit_count(self):
        rng = np.random.default_rng(5)
        u = rng.integers(0, 2**32, size=20000, dtype=np.uint32)
        expect = np.array([int(x).bit_count() for x in u], dtype=np.uint8)
        assert np.array_equal(hw32(u), expect)

    def test_hw32_requires_uint32(self):
        with pytest.raises(TypeError):
            hw32(np.zeros(4, dtype=np.float32))


class TestProductParts:
    def test_matches_native_multiply(self):
        rng = np.random.default_rng(13)
        a = rng.uniform(-100.0, 100.0, size=3000).astype(np.float32)
        b = rng.uniform(-100.0, 100.0, size=3000).astype(np.float32)
        for x, y in zip(a, b):
            if x == 0 or y == 0:
                continue
            native = np.float32(x) * np.float32(y)
            got = recompose(realign(product_parts(decompose(x), decompose(y))))
            assert got == float(native)

    def test_sign_is_xor(self):
        p = product_parts(decompose(-2.0), decompose(3.0))
        assert p.sign == 1
        p = product_parts(decompose(-2.0), decompose(-3.0))
        assert p.sign == 0

    def test_exponent_is_sum_minus_bias(self):
        p = product_parts(decompose(2.0), decompose(4.0))
        assert p.exponent == (EXP_BIAS + 1) + (EXP_BIAS + 2) - EXP_BIAS

    def test_rejects_zero_operand(self):
        with pytest.raises(OutOfModelError):
            product_parts(decompose(0.0), decompose(1.0))

    def test_realign_detects_overflow(self):
        big = decompose(1e38)
        with pytest.raises(OutOfModelError):
            realign(product_parts(big, big))


class TestStep1Grid:
    def test_default_grid_bounds_inclusive(self):
        g = step1_grid(2.5, 5.0)
        v = g.values.astype(np.float64)
        assert v[0] >= 0.0 and v[-1] <= 5.0
        # 5.0 = 1.25 * 2^2 has only the top mantissa bits set, so the upper
        # bound itself is a grid point
        assert v[-1] == 5.0

    def test_strictly_increasing_unique(self):
        g = step1_grid(2.5, 5.0)
        assert np.all(np.diff(g.values.astype(np.float64)) > 0)

    def test_points_have_coarse_mantissas(self):
        g = step1_grid(2.5, 5.0)
        u = g.values.view(np.uint32)
        assert np.all(u & np.uint32(0x7FFF) == 0)  # lower 15 mantissa bits zero

    def test_every_exponent_in_range_present(self):
        g = step1_grid(2.5, 5.0)
        u = g.values.view(np.uint32)
        exps = np.unique((u >> np.uint32(23)) & np.uint32(0xFF))
        # all exponents from the smallest normal up to 2^2 * 1.25 = 5
        assert exps.min() == 1
        assert exps.max() == EXP_BIAS + 2

    def test_eight_significand_steps_per_binade(self):
        g = step1_grid(2.5, 5.0)
        in_binade = g.values[(g.values >= 1.0) & (g.values < 2.0)]
        assert in_binade.size == 256

    def test_interval_filter(self):
        g = step1_grid(1.0, 0.5)
        v = g.values.astype(np.float64)
        assert v[0] >= 0.75 and v[-1] <= 1.25

    def test_empty_interval_raises(self):
        with pytest.raises(EmptyGridError):
            step1_grid(-10.0, 1.0)

    def test_negative_width_rejected(self):
        with pytest.raises(ValueError):
            step1_grid(2.5, -1.0)
