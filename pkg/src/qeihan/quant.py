"""Weight and activation quantizers.

Weights use uniform INT8 quantization. Activations are LOG2-quantized to a
sign plus a 4-bit exponent in [-8, 7]; the minimum exponent doubles as the
zero code, so anything that clips to it is pruned.

Two activation paths exist: ``log2_quantize_ref`` works on any real value with
exact rational arithmetic, ``log2_quantize_hw`` mimics the datapath (read the
FP16 exponent field, compare the 10 fraction bits against a fixed constant).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import NonFiniteValue, ZeroOrSubnormal

EXP_BITS = 4
EXP_MIN = -(2 ** (EXP_BITS - 1))
EXP_MAX = 2 ** (EXP_BITS - 1) - 1

INT8_MIN, INT8_MAX = -128, 127
INT16_MIN, INT16_MAX = -32768, 32767
REAL16_MAX = 65504.0

# smallest 10-bit fraction f with 1 + f/1024 >= sqrt(2)
SQRT2_FRACTION = 425

_HALF_EXP_MASK = 0x7C00
_HALF_FRAC_MASK = 0x03FF
_HALF_BIAS = 15


class Sign(enum.Enum):
    POS = "Pos"
    NEG = "Neg"


@dataclass(frozen=True)
class QuantActivation:
    is_zero: bool
    sign: Sign = Sign.POS
    exp: int = EXP_MIN

    def __post_init__(self):
        if not EXP_MIN <= self.exp <= EXP_MAX:
            raise ValueError(f"exponent {self.exp} outside [{EXP_MIN}, {EXP_MAX}]")
        if self.is_zero and (self.sign is not Sign.POS or self.exp != EXP_MIN):
            raise ValueError("zero activation must be canonical (Pos, min exponent)")

    @property
    def value(self) -> float:
        if self.is_zero:
            return 0.0
        v = math.ldexp(1.0, self.exp)
        return -v if self.sign is Sign.NEG else v


ZERO = QuantActivation(is_zero=True)


def _clip(x: int, lo: int = EXP_MIN, hi: int = EXP_MAX) -> int:
    return lo if x <= lo else hi if x >= hi else x


def _check_finite(x: float) -> None:
    if not math.isfinite(x):
        raise NonFiniteValue(f"non-finite value {x!r}")


def uniform_quantize(r: float, s: float, z: int = 0) -> int:
    """Return ``round(r / s) - z`` saturated to int8.

    Rounding is to nearest with ties to even (Python ``round``).
    """
    _check_finite(float(r))
    if not s > 0:
        raise ValueError("scale must be positive")
    q = round(float(r) / s) - int(z)
    return max(INT8_MIN, min(INT8_MAX, q))


def uniform_quantize_array(r: np.ndarray, s: float, z: int = 0) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if not np.all(np.isfinite(r)):
        raise NonFiniteValue("non-finite value in array")
    if not s > 0:
        raise ValueError("scale must be positive")
    q = np.rint(r / s) - int(z)
    return np.clip(q, INT8_MIN, INT8_MAX).astype(np.int8)


def round_half_up_log2(x: float) -> int:
    """Exact ``floor(log2|x| + 1/2)`` for a finite non-zero float."""
    n, d = abs(Fraction(x)).as_integer_ratio()
    # floor(log2(n/d)): e with 2**e <= n/d < 2**(e+1)
    e = n.bit_length() - d.bit_length()
    if (n << max(0, -e)) < (d << max(0, e)):
        e -= 1
    # mantissa m = (n/d) / 2**e in [1, 2); round up iff m*m >= 2
    num = n * n
    den = d * d
    if e >= 0:
        den <<= 2 * e
    else:
        num <<= -2 * e
    return e + (1 if num >= 2 * den else 0)


def log2_quantize_ref(x: float) -> QuantActivation:
    x = float(x)
    _check_finite(x)
    if x == 0.0:
        return ZERO
    exp = _clip(round_half_up_log2(x))
    if exp == EXP_MIN:
        return ZERO
    return QuantActivation(False, Sign.NEG if x < 0 else Sign.POS, exp)


def to_half_bits(x) -> int:
    return int(np.asarray(x, dtype=np.float16).view(np.uint16))


def from_half_bits(bits: int) -> np.float16:
    return np.array([bits], dtype=np.uint16).view(np.float16)[0]


def round_log2_hw(x) -> int:
    """``e + (fraction >= SQRT2_FRACTION)`` straight from the FP16 fields."""
    bits = to_half_bits(x)
    exp_field = (bits & _HALF_EXP_MASK) >> 10
    if exp_field == 0:
        raise ZeroOrSubnormal(f"half 0x{bits:04x} is zero or subnormal")
    if exp_field == 0x1F:
        raise NonFiniteValue(f"half 0x{bits:04x} is not finite")
    e = exp_field - _HALF_BIAS
    return e + (1 if (bits & _HALF_FRAC_MASK) >= SQRT2_FRACTION else 0)


def log2_quantize_hw(x) -> QuantActivation:
    bits = to_half_bits(x)
    exp_field = (bits & _HALF_EXP_MASK) >> 10
    if exp_field == 0x1F:
        raise NonFiniteValue(f"half 0x{bits:04x} is not finite")
    if exp_field == 0:
        return ZERO
    exp = _clip(round_log2_hw(x))
    if exp == EXP_MIN:
        return ZERO
    return QuantActivation(False, Sign.NEG if bits & 0x8000 else Sign.POS, exp)


def log2_quantize_hw_array(values: np.ndarray):
    """Vectorized hardware path.

    Returns ``(pruned, negative, exp)`` arrays; ``exp`` is ``EXP_MIN`` where
    pruned.
    """
    bits = np.asarray(values, dtype=np.float16).view(np.uint16).astype(np.int32)
    exp_field = (bits & _HALF_EXP_MASK) >> 10
    if np.any(exp_field == 0x1F):
        raise NonFiniteValue("non-finite half in array")
    e = exp_field - _HALF_BIAS + ((bits & _HALF_FRAC_MASK) >= SQRT2_FRACTION)
    exp = np.clip(e, EXP_MIN, EXP_MAX)
    pruned = (exp_field == 0) | (exp == EXP_MIN)
    exp = np.where(pruned, EXP_MIN, exp).astype(np.int8)
    negative = ((bits & 0x8000) != 0) & ~pruned
    return pruned, negative, exp


def dequantize_output(acc: int, s_w: float, layer=None) -> np.float16:
    """Nearest half to ``acc * s_w``, saturating at the half range."""
    v = float(acc) * float(s_w)
    if v >= REAL16_MAX:
        return np.float16(REAL16_MAX)
    if v <= -REAL16_MAX:
        return np.float16(-REAL16_MAX)
    return np.float16(v)


def dequantize_array(acc: np.ndarray, s_w: float) -> np.ndarray:
    v = np.asarray(acc, dtype=np.float64) * float(s_w)
    v = np.clip(v, -REAL16_MAX, REAL16_MAX)
    return v.astype(np.float16)
