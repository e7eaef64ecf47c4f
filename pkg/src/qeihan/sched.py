"""The three simulated machines and their layer/network drivers.

QeiHaN and NaHiD share the input-stationary (IS) dataflow and LOG2
activations and differ only in weight layout (bit-plane vs standard).
Neurocube is output-stationary (OS) with uniform int8 activations.

Cycle model, per vault/PE:

* A weight-buffer half holds one fetch batch. A batch is issued as one
  coalesced request list (at most one request per bank) and takes
  ``schedule_beats`` cycles; the next batch's fetch overlaps the current
  batch's adds (``ceil(terms / d)``).
* IB fills are prefetched one block ahead of compute, so a block costs
  ``max(prefetch of next block, compute of this block)``.
* Post-processing (reduction to vault 0, SFU, redistribution, write-back)
  is an exposed tail after the slowest vault.
"""
from __future__ import annotations

import enum
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .analysis import ExpHistogram
from .errors import Unpartitionable
from .mem3d import (BeatTrace, LayoutKind, MemGeometry, WeightLayout, coalesce,
                    fetch_weight_group, place_weights, schedule_beats)
from .model import (ElemKind, LayerDescriptor, LayerKind, NetworkDescriptor,
                    Tensor, layer_weights, prod)
from .pe import (Buffer, PEConfig, accumulate_array, decode_and_shift_array,
                 saturating_sum, sfu_apply)
from .quant import log2_quantize_hw_array, uniform_quantize_array

ACT_BITS = 16


class MachineKind(enum.Enum):
    QEIHAN = "QeiHaN"
    NAHID = "NaHiD"
    NEUROCUBE = "Neurocube"

    @property
    def layout(self) -> LayoutKind:
        return LayoutKind.BIT_PLANE if self is MachineKind.QEIHAN else LayoutKind.STANDARD

    @property
    def input_stationary(self) -> bool:
        return self is not MachineKind.NEUROCUBE

    @classmethod
    def parse(cls, name: str) -> "MachineKind":
        for m in cls:
            if m.value.lower() == name.strip().lower():
                return m
        raise ValueError(f"unknown machine {name!r}")


@dataclass
class AccessCounters:
    dram_beats: int = 0
    weight_beats: int = 0
    input_beats: int = 0
    output_beats: int = 0
    dram_row_activations: int = 0
    ib_reads: int = 0
    ib_writes: int = 0
    ob_reads: int = 0
    ob_writes: int = 0
    wb_reads: int = 0
    wb_writes: int = 0
    noc_transfers: int = 0
    adds: int = 0
    macs: int = 0
    quants: int = 0
    shifts: int = 0
    sfu_outputs: int = 0
    saturations: int = 0

    def __iadd__(self, other: "AccessCounters") -> "AccessCounters":
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def __add__(self, other: "AccessCounters") -> "AccessCounters":
        out = AccessCounters(**asdict(self))
        out += other
        return out

    def add_beats(self, kind: str, n: int) -> None:
        setattr(self, f"{kind}_beats", getattr(self, f"{kind}_beats") + n)
        self.dram_beats += n

    def as_dict(self) -> dict:
        return asdict(self)


# --- partitioning -------------------------------------------------------------

@dataclass(frozen=True)
class Partition:
    vault_channels: tuple[tuple[int, ...], ...]
    blocks_per_channel: int
    # pixel ranges [start, end) of each block, row-major over the input map
    blocks: tuple[tuple[int, int], ...]
    # most output positions any single block touches (times OC = OB demand)
    block_outputs: int

    @property
    def active_vaults(self) -> int:
        return sum(1 for ch in self.vault_channels if ch)


def _touched_outputs(layer: LayerDescriptor, start: int, end: int) -> int:
    mask = np.zeros((layer.out_h, layer.out_w), dtype=bool)
    for pix in range(start, end):
        for _, _, oy, ox in _contributions(layer, pix):
            mask[oy, ox] = True
    return int(mask.sum())


def _contributions(layer: LayerDescriptor, pix: int):
    """(ky, kx, oy, ox) for every output the input pixel feeds."""
    y, x = divmod(pix, layer.in_w)
    s, p = layer.stride, layer.padding
    out = []
    for ky in range(layer.kernel_h):
        ny = y + p - ky
        if ny < 0 or ny % s or ny // s >= layer.out_h:
            continue
        for kx in range(layer.kernel_w):
            nx = x + p - kx
            if nx < 0 or nx % s or nx // s >= layer.out_w:
                continue
            out.append((ky, kx, ny // s, nx // s))
    return out


def partition_layer(layer: LayerDescriptor, geometry: MemGeometry, pe_cfg: PEConfig) -> Partition:
    V = geometry.num_vaults
    chans = tuple(tuple(range(v, layer.in_channels, V)) for v in range(V))
    pixels = layer.in_h * layer.in_w
    ob_cap = pe_cfg.ob_half_elems
    if layer.kind is LayerKind.FC:
        if layer.out_channels > ob_cap:
            raise Unpartitionable(f"{layer.name}: {layer.out_channels} partial outputs exceed OB half ({ob_cap})")
        return Partition(chans, 1, ((0, 1),), 1)
    ib_cap = pe_cfg.ib_half_elems
    if ib_cap < 1:
        raise Unpartitionable("IB half cannot hold one activation")
    n = -(-pixels // ib_cap)
    while n <= pixels:
        size = -(-pixels // n)
        blocks = tuple((a, min(a + size, pixels)) for a in range(0, pixels, size))
        worst = max(_touched_outputs(layer, a, b) for a, b in blocks)
        if worst * layer.out_channels <= ob_cap:
            return Partition(chans, len(blocks), blocks, worst)
        # jump straight to the next block size
        n = -(-pixels // (size - 1)) if size > 1 else pixels + 1
    raise Unpartitionable(f"{layer.name}: one input pixel touches more partial outputs than the OB half holds")


# --- results ------------------------------------------------------------------

@dataclass
class LayerResult:
    layer: str
    machine: MachineKind
    outputs: Tensor
    acc: np.ndarray
    counters: AccessCounters
    cycles: int
    histogram: ExpHistogram
    saturated: bool = False
    vault_cycles: tuple[int, ...] = ()
    buffer_high_water: dict = field(default_factory=dict)


@dataclass
class _Ctx:
    machine: MachineKind
    layer: LayerDescriptor
    x: np.ndarray          # float16 [IC, H*W]
    pruned: np.ndarray
    negative: np.ndarray
    exp: np.ndarray
    layout: WeightLayout | None
    w: np.ndarray          # int8 [OC, IC, kh, kw]
    geometry: MemGeometry
    pe: PEConfig
    partition: Partition
    contrib: list
    trace: bool


@dataclass
class _VaultResult:
    acc: np.ndarray
    counters: AccessCounters
    cycles: int
    hist: dict
    saturated: bool
    trace: BeatTrace | None
    high_water: dict


def _pipeline(stages: Sequence[tuple[int, int]]) -> int:
    """Two-deep pipeline over (fetch, work) stages: fetch i+1 overlaps work i."""
    if not stages:
        return 0
    t = stages[0][0]
    for (_, work), (fetch, _) in zip(stages, stages[1:]):
        t += max(fetch, work)
    return t + stages[-1][1]


def _ib_fills(ctx: _Ctx, channels: Sequence[int]) -> list[list[tuple[int, int]]]:
    if ctx.layer.kind is LayerKind.FC:
        cap = ctx.pe.ib_half_elems
        items = [(c, 0) for c in channels]
        return [items[i:i + cap] for i in range(0, len(items), cap)]
    return [[(c, p) for p in range(a, b)] for c in channels for a, b in ctx.partition.blocks]


def _prefetch_cycles(n_elems: int, fill_index: int, g: MemGeometry) -> tuple[int, int]:
    beats = -(-n_elems * ACT_BITS // g.bus_bits)
    return beats, schedule_beats([(fill_index % g.total_banks, beats)], g)


def _run_is_vault(v: int, ctx: _Ctx) -> _VaultResult:
    g, pe, layer, layout = ctx.geometry, ctx.pe, ctx.layer, ctx.layout
    M, d = g.bus_bits, pe.num_adders
    G = layout.groups_per_row
    acc = np.zeros(layer.conv_output_dims, dtype=np.int32)
    cnt = AccessCounters()
    hist: dict = {}
    saturated = False
    trace = BeatTrace() if ctx.trace else None
    ib = Buffer("IB", pe.ib_half_elems)
    wb = Buffer("WB", pe.wb_half_bits)
    ob = Buffer("OB", pe.ob_half_elems)
    ob.hold(ctx.partition.block_outputs * layer.out_channels)
    prefetch, compute = [], []
    clock = 0
    for fi, fill in enumerate(_ib_fills(ctx, ctx.partition.vault_channels[v])):
        ib.hold(len(fill))
        beats, pf = _prefetch_cycles(len(fill), fi, g)
        cnt.add_beats("input", beats)
        cnt.dram_row_activations += 1
        cnt.ib_writes += len(fill)
        prefetch.append(pf)
        work = 0
        for c, pix in fill:
            cnt.ib_reads += 1
            if ctx.pruned[c, pix]:
                hist["zero"] = hist.get("zero", 0) + 1
                work += 1
                continue
            e = int(ctx.exp[c, pix])
            neg = bool(ctx.negative[c, pix])
            hist[e] = hist.get(e, 0) + 1
            cnt.quants += 1
            group_beats = 8 + e if e < 0 and layout.kind is LayoutKind.BIT_PLANE else 8
            per_batch = pe.wb_half_bits // (group_beats * M)
            terms = [(ky, kx, oy, ox, og) for ky, kx, oy, ox in ctx.contrib[pix] for og in range(G)]
            stages = []
            for b0 in range(0, len(terms), per_batch):
                reqs, n_terms, bits = [], 0, 0
                for ky, kx, oy, ox, og in terms[b0:b0 + per_batch]:
                    gid = layout.locate(c, ky, kx, og)[1]
                    f = fetch_weight_group(layout, gid, e, True, vault=v)
                    lo, hi = layout.oc_range(og)
                    shifted = decode_and_shift_array(f.slices[:hi - lo], f.width, e)
                    saturated |= accumulate_array(acc[lo:hi, oy, ox], shifted, neg)
                    reqs.extend(f.requests)
                    n_terms += hi - lo
                    bits += f.beats * M
                    cnt.add_beats("weight", f.beats)
                    cnt.wb_writes += f.beats
                    cnt.wb_reads += f.beats
                    if trace is not None:
                        trace.record(clock + work, v, layout, gid, f)
                wb.hold(bits)
                merged = coalesce(reqs)
                cnt.dram_row_activations += len(merged)
                cnt.shifts += n_terms
                cnt.adds += n_terms
                cnt.ob_reads += n_terms
                cnt.ob_writes += n_terms
                stages.append((schedule_beats(merged, g), -(-n_terms // d)))
            work += max(1, _pipeline(stages))
        compute.append(work)
        clock += work
    cycles = prefetch[0] if prefetch else 0
    for k, work in enumerate(compute):
        nxt = prefetch[k + 1] if k + 1 < len(prefetch) else 0
        cycles += max(nxt, work)
    return _VaultResult(acc, cnt, cycles, hist, saturated, trace,
                        {"IB": ib.high_water, "WB": wb.high_water, "OB": ob.high_water})


def _conv_int(layer: LayerDescriptor, w: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Exact integer convolution; ``a`` is [IC, H, W]."""
    s, p = layer.stride, layer.padding
    padded = np.pad(a.astype(np.int64), ((0, 0), (p, p), (p, p)))
    out = np.zeros(layer.conv_output_dims, dtype=np.int64)
    oh, ow = layer.out_h, layer.out_w
    w64 = w.astype(np.int64)
    for ky in range(layer.kernel_h):
        for kx in range(layer.kernel_w):
            patch = padded[:, ky:ky + s * (oh - 1) + 1:s, kx:kx + s * (ow - 1) + 1:s]
            out += np.einsum("oc,chw->ohw", w64[:, :, ky, kx], patch)
    return out


def _run_os_pe(p: int, ctx: _Ctx) -> _VaultResult:
    g, pe, layer = ctx.geometry, ctx.pe, ctx.layer
    V, M, T, d = g.num_vaults, g.bus_bits, g.total_banks, pe.num_adders
    cnt = AccessCounters()
    ib = Buffer("IB", pe.ib_half_elems)
    wb = Buffer("WB", pe.wb_half_bits)
    ob = Buffer("OB", pe.ob_half_elems)
    oh, ow = layer.out_h, layer.out_w
    outputs = [(oc, pos) for oc in range(p, layer.out_channels, V) for pos in range(oh * ow)]
    tiles = [outputs[i:i + d] for i in range(0, len(outputs), d)]
    # input pixels feeding each output position
    feeds: dict[int, list[int]] = {}
    for pix in range(layer.in_h * layer.in_w):
        for _, _, oy, ox in ctx.contrib[pix]:
            feeds.setdefault(oy * ow + ox, []).append(pix)
    cycles = 0
    for tile in tiles:
        ob.hold(len(tile))
        pairs: dict[tuple[int, int], dict[int, int]] = {}
        for oc, pos in tile:
            for pix in feeds.get(pos, ()):
                for c in range(layer.in_channels):
                    per_oc = pairs.setdefault((c, pix), {})
                    per_oc[oc] = per_oc.get(oc, 0) + 1
        batches, cur, cur_bits = [], [], 0
        for key in sorted(pairs):
            bits = 8 * sum(pairs[key].values())
            if cur and (cur_bits + bits > pe.wb_half_bits or len(cur) >= pe.ib_half_elems):
                batches.append(cur)
                cur, cur_bits = [], 0
            cur.append(key)
            cur_bits += bits
        if cur:
            batches.append(cur)
        stages = []
        for batch in batches:
            w_bits: dict[int, int] = {}
            by_vault: dict[int, int] = {}
            n_pairs = 0
            for c, pix in batch:
                for oc, n in pairs[(c, pix)].items():
                    w_bits[oc] = w_bits.get(oc, 0) + 8 * n
                    n_pairs += n
                by_vault[c % V] = by_vault.get(c % V, 0) + 1
            wb.hold(sum(w_bits.values()))
            ib.hold(len(batch))
            local = []
            for oc, bits in w_bits.items():
                beats = -(-bits // M)
                local.append((oc % T, beats))
                cnt.add_beats("weight", beats)
                cnt.wb_writes += beats
                cnt.wb_reads += beats
            remote_latency = 0
            for src, n in sorted(by_vault.items()):
                beats = -(-n * ACT_BITS // M)
                cnt.add_beats("input", beats)
                if src == p:
                    local.append(((src + 1) % T, beats))
                else:
                    cnt.dram_row_activations += 1
                    cnt.noc_transfers += n
                    remote_latency = max(remote_latency, g.tRC_cycles
                                         + 2 * g.hops(p, src) * g.noc_hop_cycles
                                         + -(-n // g.noc_words_per_cycle))
            merged = coalesce(local)
            cnt.dram_row_activations += len(merged)
            cnt.ib_writes += len(batch)
            cnt.ib_reads += len(batch)
            cnt.macs += n_pairs
            fetch = max(schedule_beats(merged, g), remote_latency)
            stages.append((fetch, len(batch)))
        cycles += _pipeline(stages)
        cnt.ob_writes += len(tile)
    empty = np.zeros(layer.conv_output_dims, dtype=np.int32)
    return _VaultResult(empty, cnt, cycles, {}, False, None,
                        {"IB": ib.high_water, "WB": wb.high_water, "OB": ob.high_water})


def _post_process(machine: MachineKind, layer: LayerDescriptor, active: int,
                  g: MemGeometry, pe: PEConfig, cnt: AccessCounters) -> int:
    """Reduction/gather to vault 0, SFU, redistribution and write-back."""
    V, d = g.num_vaults, pe.num_adders
    n_out = prod(layer.conv_output_dims)
    far = max(g.hops(0, v) for v in range(V))
    if machine.input_stationary:
        gather = n_out * max(active - 1, 0)
        cnt.adds += gather
        cnt.ob_reads += gather
        cnt.ob_writes += gather
        reduce_cycles = -(-gather // d)
    else:
        # outputs of PE p are channels oc with oc % V == p
        gather = sum(1 for oc in range(layer.out_channels) if oc % V) * layer.out_h * layer.out_w
        reduce_cycles = 0
    cnt.noc_transfers += gather
    cnt.sfu_outputs += n_out
    final = layer.output_dims
    per_channel = final[1] * final[2]
    owners = [0] * V
    for oc in range(final[0]):
        owners[oc % V] += per_channel
    redistribute = sum(owners[1:])
    cnt.noc_transfers += redistribute
    write = 0
    for n in owners:
        if n:
            beats = -(-n * ACT_BITS // g.bus_bits)
            cnt.add_beats("output", beats)
            cnt.dram_row_activations += 1
            write = max(write, schedule_beats([(0, beats)], g))
    noc = lambda n: (-(-n // g.noc_words_per_cycle) + far * g.noc_hop_cycles) if n else 0
    return noc(gather) + reduce_cycles + -(-n_out // d) + noc(redistribute) + write


def run_layer(machine: MachineKind, layer: LayerDescriptor, inputs: Tensor, weights: Tensor,
              geometry: MemGeometry | None = None, pe_cfg: PEConfig | None = None,
              s_w: float = 1.0, layout: WeightLayout | None = None, workers: int = 1,
              trace: BeatTrace | None = None) -> LayerResult:
    g = geometry or MemGeometry()
    pe = pe_cfg or PEConfig()
    pe.check_wb(g.bus_bits)
    machine = MachineKind(machine)
    if inputs.elem_kind is not ElemKind.REAL16 or inputs.data.size != layer.input_size:
        raise ValueError(f"{layer.name}: expected {layer.input_size} Real16 inputs")
    if prod(weights.dims) != prod(layer.weight_dims):
        raise ValueError(f"{layer.name}: weights {weights.dims} do not match {layer.weight_dims}")
    w = weights.data.reshape(layer.weight_dims)
    if w.ndim == 2:
        w = w[:, :, None, None]
    x = inputs.data.reshape(layer.in_channels, layer.in_h * layer.in_w)
    pruned, negative, exp = log2_quantize_hw_array(x)
    partition = partition_layer(layer, g, pe)
    if machine.input_stationary:
        if layout is None:
            layout = place_weights(Tensor(layer.weight_dims, ElemKind.INT8, w), machine.layout, g)
        elif layout.kind is not machine.layout:
            raise ValueError(f"{machine.value} needs a {machine.layout.value} layout")
    contrib = [_contributions(layer, pix) for pix in range(layer.in_h * layer.in_w)]
    ctx = _Ctx(machine, layer, x, pruned, negative, exp, layout, w, g, pe, partition,
               contrib, trace is not None)
    runner = _run_is_vault if machine.input_stationary else _run_os_pe
    vaults = range(g.num_vaults)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda v: runner(v, ctx), vaults))
    else:
        results = [runner(v, ctx) for v in vaults]

    counters = AccessCounters()
    hist: dict = {}
    high: dict = {}
    for r in results:
        counters += r.counters
        for k, n in r.hist.items():
            hist[k] = hist.get(k, 0) + n
        for k, n in r.high_water.items():
            high[k] = max(high.get(k, 0), n)
        if trace is not None and r.trace is not None:
            trace.extend(r.trace)

    if machine.input_stationary:
        # only vaults that accumulated something send partials to vault 0
        active = [r.acc for r in results if r.counters.quants]
        acc, red_sat = saturating_sum(active or [results[0].acc])
        saturated = red_sat or any(r.saturated for r in results)
        out = sfu_apply(acc, layer, s_w)
    else:
        s_a = float(np.max(np.abs(x.astype(np.float64)))) / 127.0 or 1.0
        a_q = uniform_quantize_array(x.astype(np.float64), s_a).reshape(layer.input_dims)
        acc = _conv_int(layer, w, a_q)
        saturated = False
        hist = {}
        out = sfu_apply(acc, layer, s_w * s_a)
    counters.saturations += int(saturated)
    senders = len(active) if machine.input_stationary else g.num_vaults
    tail = _post_process(machine, layer, senders, g, pe, counters)
    vault_cycles = tuple(r.cycles for r in results)
    return LayerResult(layer.name, machine, out, acc, counters, max(vault_cycles) + tail,
                       ExpHistogram(hist), saturated, vault_cycles, high)


# --- network ------------------------------------------------------------------

@dataclass
class SimReport:
    machine: MachineKind
    network: str
    cycles: int
    counters: AccessCounters
    layers: list = field(default_factory=list)
    energy: dict | None = None
    output_sha256: str = ""
    input_sha256: str = ""
    histogram: ExpHistogram | None = None
    outputs: Tensor | None = None

    @property
    def beats(self) -> dict:
        c = self.counters
        return {"weights": c.weight_beats, "inputs": c.input_beats, "outputs": c.output_beats,
                "total": c.dram_beats}

    def to_json(self) -> dict:
        return {
            "machine": self.machine.value,
            "network": self.network,
            "cycles": self.cycles,
            "beats": self.beats,
            "counters": self.counters.as_dict(),
            "energy": self.energy or {},
            "layers": self.layers,
            "input_sha256": self.input_sha256,
            "output_sha256": self.output_sha256,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"


def run_network(machine: MachineKind, net: NetworkDescriptor, inputs: Tensor,
                geometry: MemGeometry | None = None, pe_cfg: PEConfig | None = None,
                workers: int = 1, seed: int = 0, energy_cfg=None,
                trace: BeatTrace | None = None) -> SimReport:
    from .metrics import EnergyConfig, energy as energy_of

    g = geometry or MemGeometry()
    machine = MachineKind(machine)
    total = AccessCounters()
    cycles = 0
    layers = []
    hist = None
    x = inputs
    for layer in net.layers:
        s_w, z = net.scale(layer.name)
        if z:
            raise ValueError(f"{layer.name}: simulation assumes zero weight offset, got {z}")
        weights = layer_weights(net, layer, seed)
        res = run_layer(machine, layer, x, weights, g, pe_cfg, s_w=s_w, workers=workers, trace=trace)
        total += res.counters
        cycles += res.cycles
        if hist is None:
            hist = res.histogram
        layers.append({"name": layer.name, "cycles": res.cycles,
                       "beats": {"weights": res.counters.weight_beats,
                                 "inputs": res.counters.input_beats,
                                 "outputs": res.counters.output_beats},
                       "saturated": res.saturated})
        x = res.outputs
    cfg = energy_cfg or EnergyConfig()
    breakdown = energy_of(total, cycles, cfg, g.logic_freq_hz)
    digest = hashlib.sha256(x.data.tobytes()).hexdigest()
    in_digest = hashlib.sha256(inputs.data.tobytes()).hexdigest()
    return SimReport(machine, net.name, cycles, total, layers, breakdown.to_json(), digest,
                     in_digest, hist, x)
