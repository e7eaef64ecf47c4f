"""Exponent histograms and the estimated weight-fetch savings they imply."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

import numpy as np

from .errors import EmptyHistogram
from .quant import EXP_MAX, EXP_MIN, QuantActivation, log2_quantize_hw_array

WEIGHT_BITS = 8
EXPONENTS = tuple(range(EXP_MIN, EXP_MAX + 1))


@dataclass
class ExpHistogram:
    counts: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def zero(self) -> int:
        return self.counts.get("zero", 0)

    @property
    def nonzero_total(self) -> int:
        return self.total - self.zero

    def __getitem__(self, key) -> int:
        return self.counts.get(key, 0)

    def __add__(self, other: "ExpHistogram") -> "ExpHistogram":
        out = dict(self.counts)
        for k, v in other.counts.items():
            out[k] = out.get(k, 0) + v
        return ExpHistogram(out)

    def rows(self):
        """(bin, count) pairs, live exponents ascending, zero bin last."""
        for e in EXPONENTS[1:]:
            yield e, self[e]
        yield "zero", self.zero


def histogram(acts: Iterable[QuantActivation]) -> ExpHistogram:
    counts: dict = {}
    for a in acts:
        key = "zero" if a.is_zero else a.exp
        counts[key] = counts.get(key, 0) + 1
    return ExpHistogram(counts)


def histogram_of_values(values) -> ExpHistogram:
    """Histogram of Real16 values through the hardware quantizer."""
    pruned, _, exp = log2_quantize_hw_array(np.asarray(values, dtype=np.float16).reshape(-1))
    counts: dict = {}
    n_zero = int(pruned.sum())
    if n_zero:
        counts["zero"] = n_zero
    live = exp[~pruned]
    if live.size:
        keys, n = np.unique(live, return_counts=True)
        counts.update({int(k): int(c) for k, c in zip(keys, n)})
    return ExpHistogram(counts)


def _nonzero(h: ExpHistogram) -> int:
    n = h.nonzero_total
    if n <= 0:
        raise EmptyHistogram("histogram has no non-zero bins")
    return n


def negative_fraction(h: ExpHistogram) -> Fraction:
    n = _nonzero(h)
    return Fraction(sum(c for k, c in h.counts.items() if k != "zero" and k < 0), n)


def skipped_bits(exp: int) -> int:
    return -exp if exp < 0 else 0


def estimated_memory_savings(h: ExpHistogram, weight_bits: int = WEIGHT_BITS) -> Fraction:
    """Fraction of weight bits that never need fetching, over non-pruned inputs.

    Returned as an exact ``Fraction``.
    """
    n = _nonzero(h)
    skipped = sum(c * skipped_bits(k) for k, c in h.counts.items() if k != "zero")
    return Fraction(skipped, weight_bits * n)


def histogram_from_distribution(dist: dict, count: int) -> ExpHistogram:
    from .model import quota_counts

    counts = quota_counts(dist, count)
    # the minimum exponent is the zero code
    if EXP_MIN in counts:
        counts["zero"] = counts.get("zero", 0) + counts.pop(EXP_MIN)
    return ExpHistogram({k: v for k, v in counts.items() if v})
