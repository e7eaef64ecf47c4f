"""Command-line front end: ``qeihan analyze|simulate|sweep``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

from .analysis import estimated_memory_savings, histogram_of_values, negative_fraction
from .errors import QeihanError
from .mem3d import BeatTrace, MemGeometry
from .metrics import EnergyConfig, compare
from .model import (DISTRIBUTION_NAMES, Tensor, load_distribution, load_network, load_tensor,
                    network_from_json, prod, shipped_distribution, synth_activations)
from .pe import PEConfig
from .sched import MachineKind, run_network

log = logging.getLogger("qeihan")

SWEEP_CENTERS = tuple(range(0, -8, -1))


@dataclass
class RunSpec:
    network: str | None
    machines: tuple[MachineKind, ...]
    geometry: MemGeometry
    pe: PEConfig
    energy: EnergyConfig
    acts_tensor: str | None
    acts_dist: str | None
    count: int | None
    seed: int
    signed: bool
    out: Path
    trace: bool
    workers: int

    def __post_init__(self):
        if not self.machines:
            raise ValueError("at least one machine is required")
        if (self.acts_tensor is None) == (self.acts_dist is None):
            raise ValueError("give exactly one of --acts-tensor or --acts-dist")


# --- helpers ------------------------------------------------------------------

def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _overrides(cls, text: str | None):
    """Build ``cls`` from ``key=value,key=value`` overrides of its defaults."""
    if not text:
        return cls()
    types = {f.name: type(f.default) for f in fields(cls)}
    kw = {}
    for item in text.split(","):
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in types:
            raise ValueError(f"bad override {item!r} for {cls.__name__}")
        t = types[key]
        if t is bool:
            kw[key] = value.strip().lower() in ("1", "true", "yes")
        else:
            kw[key] = t(value)
    return cls(**kw)


def resolve_network(arg: str):
    path = Path(arg)
    if path.exists():
        return load_network(path)
    res = resources.files("qeihan") / "data" / "networks" / f"{arg}.json"
    if not res.is_file():
        raise FileNotFoundError(f"no network file or built-in network named {arg!r}")
    return network_from_json(json.loads(res.read_text()), default_name=arg)


def resolve_distribution(arg: str) -> dict:
    if arg in DISTRIBUTION_NAMES:
        return shipped_distribution(arg)
    return load_distribution(arg)


def load_activations(spec: RunSpec, dims=None) -> Tensor:
    if spec.acts_tensor is not None:
        return load_tensor(spec.acts_tensor, dims)
    count = spec.count
    if count is None:
        if dims is None:
            raise ValueError("--count is required without a network")
        count = prod(dims)
    elif dims is not None and count != prod(dims):
        raise ValueError(f"--count {count} does not match network input size {prod(dims)}")
    t = synth_activations(resolve_distribution(spec.acts_dist), count, spec.seed, spec.signed)
    return t if dims is None else Tensor(tuple(dims), t.elem_kind, t.data)


# --- commands -----------------------------------------------------------------

def cmd_analyze(spec: RunSpec) -> list[Path]:
    acts = load_activations(spec)
    h = histogram_of_values(acts.data)
    rows = [("exponent", "count")] + list(h.rows())
    if h.nonzero_total:
        s = estimated_memory_savings(h)
        savings = [("metric", "value"), ("savings", float(s)), ("savings_exact", str(s)),
                   ("negative_fraction", float(negative_fraction(h))),
                   ("nonzero", h.nonzero_total), ("zero", h.zero)]
    else:
        savings = [("metric", "value"), ("savings", 0.0), ("savings_exact", "0"),
                   ("nonzero", 0), ("zero", h.zero), ("note", "pruned-only input")]
    out = [spec.out / "histogram.csv", spec.out / "savings.csv"]
    write_atomic(out[0], _csv(rows))
    write_atomic(out[1], _csv(savings))
    return out


def _simulate(spec: RunSpec, net, acts, machines=None):
    reports = {}
    traces = {}
    for m in machines or spec.machines:
        trace = BeatTrace() if spec.trace else None
        log.info("running %s on %s", m.value, net.name)
        reports[m] = run_network(m, net, acts, spec.geometry, spec.pe, workers=spec.workers,
                                 seed=spec.seed, energy_cfg=spec.energy, trace=trace)
        traces[m] = trace
    return reports, traces


def cmd_simulate(spec: RunSpec) -> list[Path]:
    if spec.network is None:
        raise ValueError("--network is required")
    net = resolve_network(spec.network)
    acts = load_activations(spec, net.input_dims)
    reports, traces = _simulate(spec, net, acts)
    out = []
    base = reports[spec.machines[0]]
    rows = [("machine", "cycles", "beats_weights", "beats_inputs", "beats_outputs", "beats_total",
             "energy_total", "energy_dram", "energy_buffers", "energy_compute", "energy_noc",
             "energy_static", "speedup_vs_first", "output_sha256")]
    for m, r in reports.items():
        path = spec.out / f"report_{m.value}.json"
        write_atomic(path, r.dumps())
        out.append(path)
        if traces[m] is not None:
            path = spec.out / f"trace_{m.value}.csv"
            write_atomic(path, traces[m].to_csv())
            out.append(path)
        e = r.energy
        rows.append((m.value, r.cycles, r.beats["weights"], r.beats["inputs"], r.beats["outputs"],
                     r.beats["total"], e["total"], e["DRAM"], e["Buffers"], e["Compute"], e["NoC"],
                     e["Static"], compare(r, base)["speedup"], r.output_sha256))
    path = spec.out / "comparison.csv"
    write_atomic(path, _csv(rows))
    out.append(path)
    return out


def cmd_sweep(spec: RunSpec) -> list[Path]:
    """Single-bin distributions centred at 0, -1, ..., -7 on QeiHaN vs NaHiD."""
    if spec.network is None:
        raise ValueError("--network is required")
    net = resolve_network(spec.network)
    rows = [("center", "savings", "savings_exact", "cycles_qeihan", "cycles_nahid", "speedup",
             "weight_beats_qeihan", "weight_beats_nahid", "weight_access_ratio")]
    for center in SWEEP_CENTERS:
        acts = synth_activations({center: 1.0}, prod(net.input_dims), spec.seed, spec.signed)
        acts = Tensor(tuple(net.input_dims), acts.elem_kind, acts.data)
        reports, _ = _simulate(spec, net, acts, (MachineKind.QEIHAN, MachineKind.NAHID))
        q, n = reports[MachineKind.QEIHAN], reports[MachineKind.NAHID]
        s = estimated_memory_savings(q.histogram)
        c = compare(q, n)
        rows.append((center, float(s), str(s), q.cycles, n.cycles, c["speedup"],
                     q.counters.weight_beats, n.counters.weight_beats, c["weight_access_ratio"]))
    path = spec.out / "sweep.csv"
    write_atomic(path, _csv(rows))
    return [path]


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qeihan", description="LOG2 near-memory accelerator simulator")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--network", help="descriptor path or built-in name (fc, mlp, cnn, alexnet_small)")
    p.add_argument("--machines", default="QeiHaN,NaHiD,Neurocube",
                   help="comma-separated subset of QeiHaN,NaHiD,Neurocube")
    p.add_argument("--geometry", help="memory overrides, e.g. num_vaults=8,tRC_cycles=10")
    p.add_argument("--pe", help="PE overrides, e.g. wb_bytes=128,num_adders=32")
    p.add_argument("--energy", help="energy config JSON")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--acts-tensor", help="Real16 tensor file")
    src.add_argument("--acts-dist", help="distribution file or shipped name")
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--signed", action="store_true", help="give synthetic activations random signs")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--trace", action="store_true", help="also write per-beat weight fetch traces")
    p.add_argument("--workers", type=int, default=1, help="vault simulations run in parallel")
    return p


def spec_from_args(args) -> RunSpec:
    machines = tuple(MachineKind.parse(m) for m in args.machines.split(",") if m.strip())
    if args.command == "sweep":
        # sweep points synthesize their own activations
        args.acts_tensor, args.acts_dist, args.trace = None, "sweep", False
    return RunSpec(args.network, machines, _overrides(MemGeometry, args.geometry),
                   _overrides(PEConfig, args.pe),
                   EnergyConfig.load(args.energy) if args.energy else EnergyConfig(),
                   args.acts_tensor, args.acts_dist, args.count, args.seed, args.signed,
                   Path(args.out), args.trace, max(1, args.workers))


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("QEIHAN_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        spec = spec_from_args(args)
        for path in COMMANDS[args.command](spec):
            log.info("wrote %s", path)
    except (QeihanError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2
    return 0
