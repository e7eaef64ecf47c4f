"""Functional model of one processing element.

Decode & Shift turns a fetched MSB slice into the shifted product term, the
ADD array accumulates terms into saturating int16 partial outputs, and the
SFU de-quantizes final sums and applies the activation function and pooling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import BufferOverflow, SliceLengthMismatch, UnknownTableId
from .model import ElemKind, LayerDescriptor, Tensor
from .quant import INT16_MAX, INT16_MIN, Sign, dequantize_array

WEIGHT_BITS = 8


@dataclass(frozen=True)
class PEConfig:
    ib_bytes: int = 64
    ob_bytes: int = 2048
    wb_bytes: int = 64
    num_adders: int = 16
    double_buffered: bool = True

    def __post_init__(self):
        for f in ("ib_bytes", "ob_bytes", "wb_bytes", "num_adders"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be positive")

    def half(self, nbytes: int) -> int:
        return nbytes // 2 if self.double_buffered else nbytes

    @property
    def ib_half_elems(self) -> int:
        """Real16 activations per IB half."""
        return self.half(self.ib_bytes) // 2

    @property
    def ob_half_elems(self) -> int:
        """int16 partial outputs per OB half."""
        return self.half(self.ob_bytes) // 2

    @property
    def wb_half_bits(self) -> int:
        return self.half(self.wb_bytes) * 8

    def check_wb(self, bus_bits: int) -> None:
        if self.wb_half_bits < bus_bits * WEIGHT_BITS:
            raise ValueError(f"WB half holds {self.wb_half_bits} bits, one full group needs "
                             f"{bus_bits * WEIGHT_BITS}")


class Buffer:
    """Occupancy tracker for one (half of a) SRAM buffer."""

    def __init__(self, name: str, capacity: int):
        self.name = name
        self.capacity = capacity
        self.high_water = 0

    def hold(self, amount: int) -> None:
        if amount > self.capacity:
            raise BufferOverflow(f"{self.name}: {amount} exceeds capacity {self.capacity}")
        self.high_water = max(self.high_water, amount)


@dataclass(frozen=True)
class PartialOutput:
    value: int = 0
    saturated: bool = False


def _slice_value(msb_slice) -> tuple[int, int]:
    if isinstance(msb_slice, str):
        if not msb_slice or set(msb_slice) - {"0", "1"}:
            raise SliceLengthMismatch(f"bad bit string {msb_slice!r}")
        return int(msb_slice, 2), len(msb_slice)
    raw, width = msb_slice
    return int(raw), int(width)


def decode_and_shift(msb_slice, exp: int) -> int:
    """Shifted product term from an MSB slice.

    ``msb_slice`` is a bit string (``"10011"``) or ``(raw, width)``. For
    ``exp < 0`` the slice holds the top ``8 + exp`` bits and sign extension
    alone yields ``w >> -exp``; otherwise the full weight is shifted left.
    """
    raw, width = _slice_value(msb_slice)
    if not -7 <= exp <= 7:
        raise ValueError(f"exponent {exp} outside [-7, 7]")
    if width != WEIGHT_BITS - max(-exp, 0):
        raise SliceLengthMismatch(f"slice of {width} bits for exponent {exp}")
    if raw >> width:
        raise SliceLengthMismatch(f"value {raw} does not fit {width} bits")
    v = raw - (1 << width) if raw >> (width - 1) else raw
    return v << exp if exp > 0 else v


def decode_and_shift_array(raw: np.ndarray, width: int, exp: int) -> np.ndarray:
    raw = np.asarray(raw).astype(np.int32)
    v = np.where(raw >> (width - 1) != 0, raw - (1 << width), raw)
    return v << exp if exp > 0 else v


def accumulate(out: PartialOutput, shifted: int, act_sign: Sign) -> PartialOutput:
    v = out.value + (shifted if act_sign is Sign.POS else -shifted)
    if v > INT16_MAX:
        return PartialOutput(INT16_MAX, True)
    if v < INT16_MIN:
        return PartialOutput(INT16_MIN, True)
    return PartialOutput(v, out.saturated)


def accumulate_array(acc: np.ndarray, shifted: np.ndarray, negative: bool) -> bool:
    """In-place saturating ``acc += ±shifted``; returns whether any lane clipped."""
    v = acc.astype(np.int32) + (-shifted if negative else shifted)
    clipped = bool(np.any((v > INT16_MAX) | (v < INT16_MIN)))
    acc[...] = np.clip(v, INT16_MIN, INT16_MAX)
    return clipped


def saturating_sum(parts) -> tuple[np.ndarray, bool]:
    """Sequential int16 saturating reduction of equally shaped arrays."""
    parts = list(parts)
    acc = np.zeros_like(parts[0], dtype=np.int32)
    sat = False
    for p in parts:
        sat |= accumulate_array(acc, np.asarray(p, dtype=np.int32), False)
    return acc, sat


# --- SFU --------------------------------------------------------------------

def _gelu(x: float) -> float:
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


LUT_FUNCTIONS = {"sigmoid": _sigmoid, "tanh": math.tanh, "gelu": _gelu}


@lru_cache(maxsize=None)
def lut_table(table_id: str) -> np.ndarray:
    """256-entry table indexed by the top 8 bits of the FP16 pattern.

    Entry ``i`` holds ``f`` at the bucket midpoint, the half with bits
    ``(i << 8) | 0x80``; buckets in the Inf/NaN range use the largest finite
    value of the same sign.
    """
    try:
        fn = LUT_FUNCTIONS[table_id]
    except KeyError:
        raise UnknownTableId(table_id) from None
    table = np.empty(256, dtype=np.float16)
    for i in range(256):
        bits = (i << 8) | 0x80
        if (bits >> 10) & 0x1F == 0x1F:
            bits = (bits & 0x8000) | 0x7BFF
        x = float(np.array([bits], dtype=np.uint16).view(np.float16)[0])
        table[i] = np.float16(fn(x))
    table.setflags(write=False)
    return table


def apply_lut(values: np.ndarray, table_id: str) -> np.ndarray:
    table = lut_table(table_id)
    idx = np.asarray(values, dtype=np.float16).view(np.uint16) >> 8
    return table[idx]


def max_pool(x: np.ndarray, size: int) -> np.ndarray:
    c, h, w = x.shape
    return x.reshape(c, h // size, size, w // size, size).max(axis=(2, 4))


def sfu_apply(outs: np.ndarray, layer: LayerDescriptor, s_w: float) -> Tensor:
    """De-quantize ``outs`` (shaped like the conv output) and post-process."""
    outs = np.asarray(outs)
    expected = layer.conv_output_dims
    if outs.size != math.prod(expected):
        raise ValueError(f"{outs.size} outputs for block of {expected}")
    x = dequantize_array(outs.reshape(expected), s_w)
    fn = layer.activation_fn
    if fn == "ReLU":
        x = np.where(x > 0, x, np.float16(0)).astype(np.float16)
    elif fn is not None:
        x = apply_lut(x, fn.split(":", 1)[1])
    if layer.pool is not None:
        x = max_pool(x, layer.pool.size)
    return Tensor(layer.output_dims, ElemKind.REAL16, x)
