import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from circlstm.fxp import (
    Q3_12,
    FxpFormat,
    FxpScalar,
    FxpVector,
    ShiftPolicy,
    dequantize,
    fxp_add,
    fxp_mul,
    log2_exact,
    quantize,
    quantize_array,
    rshift_rne,
    saturate,
    shift_schedule,
    stage_shifts,
)
from tests.oracles import clamp, mul_ref, quantize_ref, round_half_even
from fractions import Fraction

raw16 = st.integers(-(1 << 15), (1 << 15) - 1)
fracs = st.integers(0, 15)


def test_format_range_and_parse():
    assert Q3_12.min_value == -8.0
    assert Q3_12.max_value == 8 - 2 ** -12
    assert FxpFormat.parse("q3.12") == Q3_12
    assert str(FxpFormat.parse("Q0.15")) == "q0.15"
    with pytest.raises(ValueError):
        FxpFormat.parse("q4.12")
    with pytest.raises(ValueError):
        FxpFormat(frac_bits=16)
    with pytest.raises(ValueError):
        FxpFormat(total_bits=24)
    with pytest.raises(ValueError):
        FxpScalar(1 << 15, Q3_12)


def test_quantize_examples():
    assert quantize(0.0).raw == 0
    assert quantize(0.5).raw == 2048
    assert quantize(9.7).raw == 32767
    assert quantize(-100.0).raw == -32768
    # ties go to even
    assert quantize(0.5 * 2 ** -12).raw == 0
    assert quantize(1.5 * 2 ** -12).raw == 2
    assert quantize(-0.5 * 2 ** -12).raw == 0
    with pytest.raises(ValueError):
        quantize(float("nan"))


@given(st.floats(-20, 20, allow_nan=False), fracs)
def test_quantize_matches_rational_oracle(x, frac):
    fmt = FxpFormat(frac)
    assert quantize(x, fmt).raw == quantize_ref(x, frac)
    assert int(quantize_array(np.array([x]), fmt).raw[0]) == quantize_ref(x, frac)


@given(st.floats(-8, 8 - 2 ** -12, allow_nan=False))
def test_quantize_roundtrip(x):
    assert abs(dequantize(quantize(x)) - x) <= 2 ** -13


@given(st.floats(-20, 20, allow_nan=False), st.floats(-20, 20, allow_nan=False))
def test_quantize_monotone(a, b):
    lo, hi = sorted((a, b))
    assert quantize(lo).raw <= quantize(hi).raw


@given(st.integers(-(1 << 40), 1 << 40), st.integers(0, 30))
def test_rshift_rne_matches_oracle(v, s):
    expect = round_half_even(Fraction(v, 1 << s))
    assert rshift_rne(v, s) == expect
    assert int(rshift_rne(np.array([v]), s)[0]) == expect


def test_rshift_negative_is_left_shift():
    assert rshift_rne(3, -2) == 12
    assert list(rshift_rne(np.array([3, -1]), -1)) == [6, -2]


def test_mul_examples():
    one = quantize(1.0)
    for raw in (-32768, -5, 0, 7, 32767):
        x = FxpScalar(raw)
        assert fxp_mul(one, x) == x
    assert fxp_mul(quantize(0.5), quantize(0.5)).raw == 1024
    assert fxp_mul(quantize(7.9), quantize(7.9)).raw == 32767
    assert fxp_mul(quantize(-8.0), quantize(-8.0)).raw == 32767


@given(raw16, fracs, raw16, fracs, fracs)
def test_mul_matches_bigint_oracle(a, fa, b, fb, fo):
    out = fxp_mul(FxpScalar(a, FxpFormat(fa)), FxpScalar(b, FxpFormat(fb)), FxpFormat(fo))
    assert out.raw == mul_ref(a, fa, b, fb, fo)


def test_mul_1000_pairs_vectorised():
    rng = np.random.default_rng(0)
    a = rng.integers(-(1 << 15), 1 << 15, 1000)
    b = rng.integers(-(1 << 15), 1 << 15, 1000)
    out = fxp_mul(FxpVector(a), FxpVector(b))
    expect = [mul_ref(int(x), 12, int(y), 12, 12) for x, y in zip(a, b)]
    assert out.raw.tolist() == expect


def test_add_examples():
    x = quantize(1.25)
    assert fxp_add(x, quantize(0.0)) == x
    mx = FxpScalar(Q3_12.raw_max)
    assert fxp_add(mx, mx).raw == Q3_12.raw_max
    mn = FxpScalar(Q3_12.raw_min)
    assert fxp_add(mn, mn).raw == Q3_12.raw_min
    with pytest.raises(ValueError):
        fxp_add(x, quantize(1.0, FxpFormat(10)))


@given(raw16, raw16)
def test_add_matches_bigint_oracle(a, b):
    assert fxp_add(FxpScalar(a), FxpScalar(b)).raw == clamp(a + b)


def test_saturate_scalar_and_array():
    assert saturate(40000, Q3_12) == 32767
    assert saturate(np.array([-40000, 3]), Q3_12).tolist() == [-32768, 3]


def test_vector_behaviour():
    v = quantize_array([0.5, -1.0, 100.0])
    assert len(v) == 3
    assert v[0] == FxpScalar(2048)
    assert v[2].raw == 32767
    assert v[1:] == FxpVector(np.array([-4096, 32767]))
    with pytest.raises(ValueError):
        FxpVector(np.array([1 << 15]))


def test_shift_schedule_examples():
    assert shift_schedule(ShiftPolicy.ALL_AT_IDFT_END, 8) == [3]
    assert shift_schedule(ShiftPolicy.DISTRIBUTED_IN_IDFT, 8) == [1, 1, 1]
    assert shift_schedule(ShiftPolicy.DISTRIBUTED_IN_DFT, 8) == [1, 1, 1]
    for pol in ShiftPolicy:
        assert sum(shift_schedule(pol, 2)) == 1
    with pytest.raises(ValueError):
        shift_schedule(ShiftPolicy.ALL_AT_IDFT_END, 12)


def test_stage_shifts_placement():
    assert stage_shifts(ShiftPolicy.ALL_AT_IDFT_END, 8) == ([0, 0, 0], [0, 0, 3])
    assert stage_shifts(ShiftPolicy.DISTRIBUTED_IN_IDFT, 8) == ([0, 0, 0], [1, 1, 1])
    assert stage_shifts(ShiftPolicy.DISTRIBUTED_IN_DFT, 8) == ([1, 1, 1], [0, 0, 0])


@given(st.integers(0, 10), st.sampled_from(list(ShiftPolicy)))
def test_shift_total_is_log2k(n, pol):
    k = 1 << n
    assert sum(shift_schedule(pol, k)) == n
    dft, idft = stage_shifts(pol, k)
    assert sum(dft) + sum(idft) == n and len(dft) == len(idft) == n


def test_policy_parse_and_log2():
    assert ShiftPolicy.parse("AllAtIdftEnd") is ShiftPolicy.ALL_AT_IDFT_END
    assert ShiftPolicy.parse("distributed_in_dft") is ShiftPolicy.DISTRIBUTED_IN_DFT
    assert ShiftPolicy.parse("DISTRIBUTED-IN-IDFT") is ShiftPolicy.DISTRIBUTED_IN_IDFT
    with pytest.raises(ValueError):
        ShiftPolicy.parse("sometimes")
    assert log2_exact(1) == 0 and log2_exact(16) == 4
    for bad in (0, 3, -4):
        with pytest.raises(ValueError):
            log2_exact(bad)
    assert math.isclose(Q3_12.lsb, 2 ** -12)
