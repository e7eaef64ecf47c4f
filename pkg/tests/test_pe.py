import numpy as np
import pytest
from hypothesis import given, strategies as st

from qeihan.errors import BufferOverflow, SliceLengthMismatch, UnknownTableId
from qeihan.model import LayerDescriptor, LayerKind, Pool
from qeihan.pe import (Buffer, PartialOutput, PEConfig, accumulate, accumulate_array, apply_lut,
                       decode_and_shift, decode_and_shift_array, lut_table, saturating_sum,
                       sfu_apply)
from qeihan.quant import Sign


@pytest.mark.parametrize("slice_,exp,expected", [("10011", -3, -13), ("00000101", 0, 5),
                                                 ("00000101", 3, 40), ("1", -7, -1)])
def test_decode_and_shift_examples(slice_, exp, expected):
    assert decode_and_shift(slice_, exp) == expected


def test_slice_length_mismatch():
    with pytest.raises(SliceLengthMismatch):
        decode_and_shift("1001", -3)
    with pytest.raises(SliceLengthMismatch):
        decode_and_shift((64, 5), -3)


@given(st.integers(-128, 127), st.integers(-7, 7))
def test_array_and_scalar_agree(w, exp):
    k = -exp if exp < 0 else 0
    raw = (w & 0xFF) >> k
    assert decode_and_shift((raw, 8 - k), exp) == int(decode_and_shift_array([raw], 8 - k, exp)[0])


def test_accumulate_examples():
    a = accumulate(PartialOutput(), 40, Sign.POS)
    assert a.value == 40
    assert accumulate(a, -13, Sign.NEG).value == 53
    s = accumulate(PartialOutput(32760), 100, Sign.POS)
    assert s == PartialOutput(32767, True)
    assert accumulate(s, -5, Sign.POS).saturated


def test_accumulate_array_saturates():
    acc = np.array([32760, -32760, 0], dtype=np.int32)
    assert accumulate_array(acc, np.array([100, 10, 5]), True)
    assert acc.tolist() == [32660, -32768, -5]


def test_saturating_sum():
    acc, sat = saturating_sum([np.array([30000]), np.array([30000]), np.array([-30000])])
    assert sat and acc.tolist() == [2767]


def test_buffer_overflow():
    b = Buffer("IB", 16)
    b.hold(16)
    with pytest.raises(BufferOverflow):
        b.hold(17)
    assert b.high_water == 16


def test_pe_halves():
    cfg = PEConfig()
    assert (cfg.ib_half_elems, cfg.ob_half_elems, cfg.wb_half_bits) == (16, 512, 256)
    with pytest.raises(ValueError):
        PEConfig(wb_bytes=16).check_wb(32)


def fc(oc, act=None):
    return LayerDescriptor("f", LayerKind.FC, 1, oc, activation_fn=act)


def test_sfu_relu():
    out = sfu_apply(np.array([-2, 3]), fc(2, "ReLU"), 1.0)
    assert out.data.tolist() == [0.0, 3.0]


def test_sfu_plain_dequantization():
    out = sfu_apply(np.array([16, -8]), fc(2), 0.125)
    assert out.data.tolist() == [2.0, -1.0]


def test_sfu_sigmoid_lut():
    out = sfu_apply(np.array([0]), fc(1, "LUT:sigmoid"), 1.0)
    assert abs(float(out.data[0]) - 0.5) <= 2 ** -8


def test_lut_error_bound_tanh():
    xs = np.linspace(-4, 4, 2001).astype(np.float16)
    err = np.abs(apply_lut(xs, "tanh").astype(np.float64) - np.tanh(xs.astype(np.float64)))
    assert err.max() < 0.07
    assert lut_table("tanh").shape == (256,)


def test_unknown_table():
    with pytest.raises(UnknownTableId):
        sfu_apply(np.array([1]), fc(1, "LUT:softsign"), 1.0)


def test_sfu_max_pool():
    layer = LayerDescriptor("c", LayerKind.CONV, 1, 1, 1, 1, 4, 4, pool=Pool("Max", 2))
    out = sfu_apply(np.arange(16).reshape(1, 4, 4), layer, 1.0)
    assert out.dims == (1, 2, 2) and out.data.tolist() == [5, 7, 13, 15]
