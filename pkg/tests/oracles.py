"""Slow, independent reference implementations used as test oracles.

Everything here works on Python ints and Fractions so it shares no code
path with the vectorized simulator.
"""
from fractions import Fraction
import math

import numpy as np


def log2_oracle(x):
    """(pruned, negative, exp) by exact rational arithmetic.

    exp = floor(log2|x| + 1/2), clipped to [-8, 7]; -8 means pruned.
    """
    v = Fraction(float(x))
    if v == 0:
        return True, False, -8
    a = abs(v)
    e = a.numerator.bit_length() - a.denominator.bit_length()
    while Fraction(2) ** e > a:
        e -= 1
    while Fraction(2) ** (e + 1) <= a:
        e += 1
    m = a / Fraction(2) ** e
    r = e + 1 if m * m >= 2 else e
    r = max(-8, min(7, r))
    if r == -8:
        return True, False, -8
    return False, v < 0, r


def shift_term(w, e):
    return math.floor(Fraction(int(w)) * Fraction(2) ** e)


def brute_force_fc(w, x):
    """Exact sum over i of sign_i * floor(w[o, i] * 2^exp_i)."""
    oc, ic = w.shape
    out = [0] * oc
    for i in range(ic):
        pruned, neg, e = log2_oracle(x[i])
        if pruned:
            continue
        for o in range(oc):
            t = shift_term(w[o, i], e)
            out[o] += -t if neg else t
    return np.array(out, dtype=np.int64)


def brute_force_conv(layer, w, x):
    """Direct-loop convolution of LOG2-quantized inputs; ``x`` is [IC, H, W]."""
    oh, ow = layer.out_h, layer.out_w
    out = np.zeros((layer.out_channels, oh, ow), dtype=np.int64)
    q = [[[log2_oracle(x[c, y, xx]) for xx in range(layer.in_w)]
          for y in range(layer.in_h)] for c in range(layer.in_channels)]
    for o in range(layer.out_channels):
        for oy in range(oh):
            for ox in range(ow):
                s = 0
                for c in range(layer.in_channels):
                    for ky in range(layer.kernel_h):
                        for kx in range(layer.kernel_w):
                            y = oy * layer.stride + ky - layer.padding
                            xx = ox * layer.stride + kx - layer.padding
                            if not (0 <= y < layer.in_h and 0 <= xx < layer.in_w):
                                continue
                            pruned, neg, e = q[c][y][xx]
                            if pruned:
                                continue
                            t = shift_term(w[o, c, ky, kx], e)
                            s += -t if neg else t
                out[o, oy, ox] = s
    return out



def safe_max_exponent(terms_per_output):
    """Largest exponent for which no int16 partial sum can clip."""
    e = 7
    while e > -7 and 128 * terms_per_output * 2.0 ** (e + 0.5) >= 2 ** 15:
        e -= 1
    return e
