"""3D-stacked DRAM model: geometry, weight layouts, fetches and bank timing.

Timing follows a two-resource contract. Every request occupies its bank for
``tRC_cycles`` (closed page: activate, read, precharge) and moves its beats
over the vault bus, which carries ``beats_per_cycle`` beats per logic cycle.
Requests issue in list order; a request to a busy bank waits for it, and
requests to distinct banks overlap.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .errors import CapacityExceeded, UnknownGroup
from .model import ElemKind, Tensor
from .quant import EXP_MAX

WEIGHT_BITS = 8


@dataclass(frozen=True)
class MemGeometry:
    num_vaults: int = 16
    dies: int = 4
    banks_per_vault_per_die: int = 4
    bus_bits: int = 32
    bandwidth_bytes_per_sec: float = 10e9
    tRC_cycles: int = 12
    logic_freq_hz: float = 300e6
    row_bits: int = 2048
    rows_per_bank: int = 65536
    # NoC contract: 16-bit words per cycle per link, cycles per mesh hop
    noc_words_per_cycle: int = 4
    noc_hop_cycles: int = 2

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value > 0:
                raise ValueError(f"geometry field {name} must be positive")
        if self.beats_per_cycle < 1:
            raise ValueError("vault bandwidth below one beat per logic cycle")

    @property
    def total_banks(self) -> int:
        return self.dies * self.banks_per_vault_per_die

    @property
    def beats_per_cycle(self) -> int:
        return int(self.bandwidth_bytes_per_sec // (self.logic_freq_hz * self.bus_bits / 8))

    @property
    def bank_capacity_bits(self) -> int:
        return self.row_bits * self.rows_per_bank

    def with_overrides(self, **kw) -> "MemGeometry":
        return replace(self, **kw)

    def mesh_xy(self, vault: int) -> tuple[int, int]:
        side = math.isqrt(self.num_vaults - 1) + 1
        return vault % side, vault // side

    def hops(self, a: int, b: int) -> int:
        (ax, ay), (bx, by) = self.mesh_xy(a), self.mesh_xy(b)
        return abs(ax - bx) + abs(ay - by)


def schedule_beats(requests: Iterable[tuple[int, int]], geometry: MemGeometry) -> int:
    """Completion cycle of the last beat for ``(bank, beats)`` requests."""
    bpc = geometry.beats_per_cycle
    trc = geometry.tRC_cycles
    bank_free: dict[int, int] = {}
    issue = 0
    bus_free = 0  # in beat slots
    finish = 0
    for bank, beats in requests:
        if beats <= 0:
            continue
        start = max(issue, bank_free.get(bank, 0))
        issue = start
        bank_free[bank] = start + trc
        bus_free = max(start * bpc, bus_free) + beats
        finish = max(finish, start + trc, -(-bus_free // bpc))
    return finish


def coalesce(requests: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    """Merge requests to the same bank into one, keeping first-seen order."""
    merged: dict[int, int] = {}
    for bank, beats in requests:
        merged[bank] = merged.get(bank, 0) + beats
    return list(merged.items())


class LayoutKind(enum.Enum):
    BIT_PLANE = "BitPlane"
    STANDARD = "Standard"


@dataclass
class _VaultStore:
    values: np.ndarray           # int8 [groups, M]; zero-padded
    words: np.ndarray            # BitPlane: uint32 [groups, 8]; Standard: uint8 [groups, M]
    banks: np.ndarray            # BitPlane: [groups, 8]; Standard: [groups]
    rows: np.ndarray
    cols: np.ndarray


@dataclass
class WeightLayout:
    """Placed weights of one layer.

    A group is ``M`` consecutive output-channel weights that share one input
    channel and kernel position. Channel ``c`` lives in vault
    ``c % num_vaults``; inside a vault groups are numbered
    ``((c_local * kh + ky) * kw + kx) * G + oc_group``.
    """
    kind: LayoutKind
    geometry: MemGeometry
    out_channels: int
    in_channels: int
    kernel_h: int
    kernel_w: int
    vaults: list = field(default_factory=list)

    @property
    def M(self) -> int:
        return self.geometry.bus_bits

    @property
    def groups_per_row(self) -> int:
        return -(-self.out_channels // self.M)

    def locate(self, c: int, ky: int = 0, kx: int = 0, oc_group: int = 0) -> tuple[int, int]:
        V = self.geometry.num_vaults
        gid = (((c // V) * self.kernel_h + ky) * self.kernel_w + kx) * self.groups_per_row + oc_group
        return c % V, gid

    def oc_range(self, oc_group: int) -> tuple[int, int]:
        lo = oc_group * self.M
        return lo, min(lo + self.M, self.out_channels)

    def plane_bank(self, group_id: int, plane: int) -> int:
        return (plane + group_id) % self.geometry.total_banks

    def address(self, vault: int, group_id: int, plane: int = 0) -> tuple[int, int, int, int]:
        """``(die, bank_in_die, row, col)`` of one plane (BitPlane) or group."""
        store = self._store(vault, group_id)
        g = self.geometry
        if self.kind is LayoutKind.BIT_PLANE:
            bank = int(store.banks[group_id, plane])
            row, col = int(store.rows[group_id, plane]), int(store.cols[group_id, plane])
        else:
            bank = int(store.banks[group_id])
            row, col = int(store.rows[group_id]), int(store.cols[group_id])
        return bank // g.banks_per_vault_per_die, bank % g.banks_per_vault_per_die, row, col

    def _store(self, vault: int, group_id: int) -> _VaultStore:
        if not 0 <= vault < len(self.vaults) or not 0 <= group_id < len(self.vaults[vault].values):
            raise UnknownGroup(f"no group {group_id} in vault {vault}")
        return self.vaults[vault]

    def group_values(self, vault: int, group_id: int) -> np.ndarray:
        return self._store(vault, group_id).values[group_id]


def _as_4d(weights: Tensor) -> np.ndarray:
    if weights.elem_kind is not ElemKind.INT8:
        raise ValueError("weights must be Int8")
    w = weights.array()
    if w.ndim == 2:
        w = w[:, :, None, None]
    if w.ndim != 4:
        raise ValueError(f"weights must be [OC, IC] or [OC, IC, kh, kw], got {w.shape}")
    return w


def place_weights(weights: Tensor, layout_kind: LayoutKind, geometry: MemGeometry) -> WeightLayout:
    w = _as_4d(weights)
    oc, ic, kh, kw = w.shape
    layout = WeightLayout(LayoutKind(layout_kind), geometry, oc, ic, kh, kw)
    M, V, T = geometry.bus_bits, geometry.num_vaults, geometry.total_banks
    if layout.kind is LayoutKind.BIT_PLANE and T < WEIGHT_BITS:
        raise ValueError("bit-plane layout needs at least 8 banks per vault")
    G = layout.groups_per_row
    padded = np.zeros((G * M, ic, kh, kw), dtype=np.int8)
    padded[:oc] = w
    for v in range(V):
        chans = np.arange(v, ic, V)
        # [c_local, ky, kx, G, M]
        vals = padded[:, chans].transpose(1, 2, 3, 0).reshape(len(chans), kh, kw, G, M)
        vals = np.ascontiguousarray(vals.reshape(-1, M))
        n = len(vals)
        if layout.kind is LayoutKind.BIT_PLANE:
            u = vals.view(np.uint8).astype(np.uint32)
            lanes = np.uint32(1) << np.arange(M, dtype=np.uint32)
            words = np.stack([(((u >> b) & 1) * lanes).sum(axis=1, dtype=np.uint64).astype(np.uint32)
                              for b in range(WEIGHT_BITS)], axis=1) if n else np.zeros((0, 8), np.uint32)
            banks = (np.arange(WEIGHT_BITS)[None, :] + np.arange(n)[:, None]) % T
            # dense sequential fill: slot index of each (g, b) within its bank
            flat = banks.reshape(-1)
            slot = np.zeros_like(flat)
            seen = np.zeros(T, dtype=np.int64)
            for i, b in enumerate(flat):
                slot[i] = seen[b]
                seen[b] += 1
            offset = (slot * M).reshape(n, WEIGHT_BITS)
            used = int(seen.max(initial=0)) * M
        else:
            words = vals.view(np.uint8).copy()
            banks = np.arange(n) % T
            offset = (np.arange(n) // T) * WEIGHT_BITS * M
            used = (-(-n // T)) * WEIGHT_BITS * M
        if used > geometry.bank_capacity_bits:
            raise CapacityExceeded(f"vault {v} needs {used} bits per bank, capacity {geometry.bank_capacity_bits}")
        layout.vaults.append(_VaultStore(vals, words, banks, offset // geometry.row_bits,
                                         offset % geometry.row_bits))
    return layout


@dataclass(frozen=True)
class Fetch:
    slices: np.ndarray      # uint8 [M]: top ``width`` bits of each weight, right-aligned
    width: int
    beats: int
    planes: tuple[int, ...]
    requests: tuple[tuple[int, int], ...]

    @property
    def banks(self) -> tuple[int, ...]:
        return tuple(b for b, _ in self.requests)


def skipped_planes(exp: int) -> int:
    return -exp if exp < 0 else 0


def fetch_weight_group(layout: WeightLayout, group_id: int, exp: int, act_nonzero: bool,
                       vault: int = 0) -> Fetch:
    store = layout._store(vault, group_id)
    M = layout.M
    if not -EXP_MAX <= exp <= EXP_MAX:
        raise ValueError(f"exponent {exp} cannot drive a fetch")
    if not act_nonzero:
        return Fetch(np.zeros(M, np.uint8), 0, 0, (), ())
    k = skipped_planes(exp)
    width = WEIGHT_BITS - k
    if layout.kind is LayoutKind.BIT_PLANE:
        planes = tuple(range(WEIGHT_BITS - 1, k - 1, -1))
        words = store.words[group_id]
        lanes = np.arange(M, dtype=np.uint32)
        raw = np.zeros(M, dtype=np.uint32)
        for b in planes:
            raw |= ((words[b] >> lanes) & 1) << (b - k)
        requests = tuple((int(store.banks[group_id, b]), 1) for b in planes)
        return Fetch(raw.astype(np.uint8), width, len(planes), planes, requests)
    # whole bytes come back; the decoder keeps only the top bits
    raw = store.words[group_id] >> k
    return Fetch(raw.astype(np.uint8), width, WEIGHT_BITS, tuple(range(WEIGHT_BITS - 1, -1, -1)),
                 ((int(store.banks[group_id]), WEIGHT_BITS),))


def reassemble(fetch: Fetch) -> np.ndarray:
    """Sign-extend full-width slices back to int8 weights."""
    if fetch.width != WEIGHT_BITS:
        raise ValueError("only full-width fetches can be reassembled")
    return fetch.slices.view(np.int8).copy()


class BeatTrace:
    """Collects ``cycle,vault,die,bank,plane,group`` rows."""

    header = ("cycle", "vault", "die", "bank", "plane", "group")

    def __init__(self):
        self.rows: list[tuple] = []

    def record(self, cycle, vault, layout: WeightLayout, group_id, fetch: Fetch):
        g = layout.geometry
        if layout.kind is LayoutKind.BIT_PLANE:
            for plane, (bank, _) in zip(fetch.planes, fetch.requests):
                self.rows.append((cycle, vault, bank // g.banks_per_vault_per_die,
                                  bank % g.banks_per_vault_per_die, plane, group_id))
        elif fetch.requests:
            bank = fetch.requests[0][0]
            for plane in fetch.planes:
                self.rows.append((cycle, vault, bank // g.banks_per_vault_per_die,
                                  bank % g.banks_per_vault_per_die, plane, group_id))

    def extend(self, other: "BeatTrace"):
        self.rows.extend(other.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        w.writerows(self.rows)
        return buf.getvalue()
