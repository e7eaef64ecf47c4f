"""Energy accounting and cross-machine comparison."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import MismatchedRuns

CATEGORIES = ("DRAM", "Buffers", "Compute", "NoC", "Static")


@dataclass(frozen=True)
class EnergyConfig:
    """Per-event energies in joules and static powers in watts.

    The defaults are illustrative: DRAM beats cost far more than SRAM
    accesses, which cost far more than an add.
    """
    dram_per_beat: float = 1.28e-10
    dram_per_row_activation: float = 0.0
    sram_ib_per_access: float = 1e-12
    sram_ob_per_access: float = 2e-12
    sram_wb_per_access: float = 1e-12
    add: float = 3e-14
    mac: float = 2e-13
    quant: float = 1e-14
    shift_decode: float = 2e-14
    noc_per_transfer: float = 5e-13
    sfu_per_output: float = 1e-12
    pe_static: float = 5e-3
    dram_static: float = 50e-3

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not v >= 0:
                raise ValueError(f"energy field {f.name} must be a non-negative number, got {v!r}")

    @classmethod
    def from_json(cls, doc: dict) -> "EnergyConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValueError(f"unknown energy keys: {', '.join(unknown)}")
        return cls(**{k: float(v) if isinstance(v, int) and not isinstance(v, bool) else v
                      for k, v in doc.items()})

    @classmethod
    def load(cls, path) -> "EnergyConfig":
        return cls.from_json(json.loads(Path(path).read_text()))

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EnergyBreakdown:
    categories: dict
    total: float

    def to_json(self) -> dict:
        return {**{k: self.categories[k] for k in CATEGORIES}, "total": self.total}


def energy(counters, cycles: int, cfg: EnergyConfig | None = None,
           freq: float = 300e6) -> EnergyBreakdown:
    cfg = cfg or EnergyConfig()
    c = counters
    cats = {
        "DRAM": c.dram_beats * cfg.dram_per_beat
                + c.dram_row_activations * cfg.dram_per_row_activation,
        "Buffers": (c.ib_reads + c.ib_writes) * cfg.sram_ib_per_access
                   + (c.ob_reads + c.ob_writes) * cfg.sram_ob_per_access
                   + (c.wb_reads + c.wb_writes) * cfg.sram_wb_per_access,
        "Compute": c.adds * cfg.add + c.macs * cfg.mac + c.quants * cfg.quant
                   + c.shifts * cfg.shift_decode + c.sfu_outputs * cfg.sfu_per_output,
        "NoC": c.noc_transfers * cfg.noc_per_transfer,
        "Static": (cfg.pe_static + cfg.dram_static) * cycles / freq,
    }
    total = 0.0
    for k in CATEGORIES:
        total += cats[k]
    return EnergyBreakdown(cats, total)


def _ratio(num: float, den: float) -> float:
    if den == 0:
        return 1.0 if num == 0 else float("inf")
    return num / den


def compare(a, b) -> dict:
    """Ratios of run ``a`` against baseline ``b``; above 1 means ``a`` wins
    on speed/energy, below 1 means ``a`` moves fewer beats."""
    if a.network != b.network or a.input_sha256 != b.input_sha256:
        raise MismatchedRuns(f"runs differ in network or inputs ({a.network!r} vs {b.network!r})")
    ea = (a.energy or {}).get("total", 0.0)
    eb = (b.energy or {}).get("total", 0.0)
    return {
        "speedup": _ratio(b.cycles, a.cycles),
        "energy_ratio": _ratio(eb, ea),
        "access_ratio": _ratio(a.counters.dram_beats, b.counters.dram_beats),
        "weight_access_ratio": _ratio(a.counters.weight_beats, b.counters.weight_beats),
    }
