"""Layer/network descriptors, the binary tensor format and activation synthesis.

Tensor file layout (little-endian)::

    b"QHT1" | u8 elem_kind | u8 ndims | u32 dims[ndims] | payload

``elem_kind`` is 0 for Real16, 1 for Int8, 2 for Int16.
"""
from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import dataclass, field
from functools import reduce
from importlib import resources
from operator import mul
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import (DimsMismatch, EmptyDistribution, MissingTensor,
                     NonFiniteValue, ParseError, ShapeError)
from .quant import EXP_MAX, EXP_MIN, log2_quantize_hw_array

MAGIC = b"QHT1"


class LayerKind(enum.Enum):
    FC = "FC"
    CONV = "CONV"


class ElemKind(enum.IntEnum):
    REAL16 = 0
    INT8 = 1
    INT16 = 2

    @property
    def dtype(self):
        return {0: np.dtype("<f2"), 1: np.dtype("i1"), 2: np.dtype("<i2")}[int(self)]


@dataclass(frozen=True)
class Pool:
    kind: str = "Max"
    size: int = 2

    def __post_init__(self):
        if self.kind != "Max":
            raise ParseError(f"unsupported pool kind {self.kind!r}")
        if self.size < 1:
            raise ParseError("pool size must be positive")


@dataclass(frozen=True)
class LayerDescriptor:
    name: str
    kind: LayerKind
    in_channels: int
    out_channels: int
    kernel_h: int = 1
    kernel_w: int = 1
    in_h: int = 1
    in_w: int = 1
    stride: int = 1
    padding: int = 0
    # None, "ReLU" or "LUT:<table_id>"
    activation_fn: str | None = None
    pool: Pool | None = None

    def __post_init__(self):
        for f in ("in_channels", "out_channels", "kernel_h", "kernel_w", "in_h", "in_w", "stride"):
            if getattr(self, f) < 1:
                raise ShapeError(f"{self.name}: {f} must be positive")
        if self.padding < 0:
            raise ShapeError(f"{self.name}: padding must be non-negative")
        if self.kind is LayerKind.FC and (
            (self.kernel_h, self.kernel_w, self.in_h, self.in_w, self.stride, self.padding)
            != (1, 1, 1, 1, 1, 0)
        ):
            raise ShapeError(f"{self.name}: FC layers must be 1x1 with stride 1 and no padding")
        for size, k in ((self.in_h, self.kernel_h), (self.in_w, self.kernel_w)):
            span = size + 2 * self.padding - k
            if span < 0 or span % self.stride:
                raise ShapeError(f"{self.name}: output spatial dims are not a positive integer")
        fn = self.activation_fn
        if fn is not None and fn != "ReLU" and not (isinstance(fn, str) and fn.startswith("LUT:")):
            raise ParseError(f"{self.name}: unknown activation_fn {fn!r}")
        if self.pool is not None and (self.out_h % self.pool.size or self.out_w % self.pool.size):
            raise ShapeError(f"{self.name}: pool size does not divide output dims")

    @property
    def out_h(self) -> int:
        return (self.in_h + 2 * self.padding - self.kernel_h) // self.stride + 1

    @property
    def out_w(self) -> int:
        return (self.in_w + 2 * self.padding - self.kernel_w) // self.stride + 1

    @property
    def input_dims(self) -> tuple[int, ...]:
        return (self.in_channels, self.in_h, self.in_w)

    @property
    def conv_output_dims(self) -> tuple[int, int, int]:
        return (self.out_channels, self.out_h, self.out_w)

    @property
    def output_dims(self) -> tuple[int, int, int]:
        """Output dims after pooling."""
        p = self.pool.size if self.pool else 1
        return (self.out_channels, self.out_h // p, self.out_w // p)

    @property
    def weight_dims(self) -> tuple[int, ...]:
        if self.kind is LayerKind.FC:
            return (self.out_channels, self.in_channels)
        return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)

    @property
    def input_size(self) -> int:
        return self.in_channels * self.in_h * self.in_w

    @property
    def output_size(self) -> int:
        return prod(self.output_dims)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind.value,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_h": self.kernel_h,
            "kernel_w": self.kernel_w,
            "in_h": self.in_h,
            "in_w": self.in_w,
            "stride": self.stride,
            "padding": self.padding,
            "activation_fn": self.activation_fn,
            "pool": None if self.pool is None else {"kind": self.pool.kind, "size": self.pool.size},
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "LayerDescriptor":
        if not isinstance(obj, Mapping):
            raise ParseError("layer entry must be an object")
        try:
            kind = LayerKind(obj["kind"])
            pool = obj.get("pool")
            fn = obj.get("activation_fn")
            if isinstance(fn, Mapping):
                fn = f"LUT:{fn['LUT']}"
            if fn == "None":
                fn = None
            return cls(
                name=str(obj["name"]),
                kind=kind,
                in_channels=int(obj["in_channels"]),
                out_channels=int(obj["out_channels"]),
                kernel_h=int(obj.get("kernel_h", 1)),
                kernel_w=int(obj.get("kernel_w", 1)),
                in_h=int(obj.get("in_h", 1)),
                in_w=int(obj.get("in_w", 1)),
                stride=int(obj.get("stride", 1)),
                padding=int(obj.get("padding", 0)),
                activation_fn=fn,
                pool=None if pool is None else Pool(pool.get("kind", "Max"), int(pool["size"])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, (ShapeError, ParseError)):
                raise
            raise ParseError(f"malformed layer entry: {exc}") from exc


def prod(dims) -> int:
    return reduce(mul, dims, 1)


@dataclass(frozen=True, eq=False)
class Tensor:
    dims: tuple[int, ...]
    elem_kind: ElemKind
    data: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d < 1 for d in dims):
            raise DimsMismatch(f"dims must be positive, got {dims}")
        data = np.array(self.data, dtype=self.elem_kind.dtype).reshape(-1)
        if data.size != prod(dims):
            raise DimsMismatch(f"{data.size} elements for dims {dims}")
        if self.elem_kind is ElemKind.REAL16 and not np.all(np.isfinite(data)):
            raise NonFiniteValue("Real16 tensor contains NaN/Inf")
        data.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", data)

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return (self.dims == other.dims and self.elem_kind == other.elem_kind
                and self.data.tobytes() == other.data.tobytes())

    def array(self) -> np.ndarray:
        return self.data.reshape(self.dims)

    @classmethod
    def real16(cls, values, dims=None) -> "Tensor":
        values = np.asarray(values, dtype=np.float16)
        return cls(tuple(dims) if dims else values.shape or (1,), ElemKind.REAL16, values)

    @classmethod
    def int8(cls, values, dims=None) -> "Tensor":
        values = np.asarray(values)
        if values.size and (values.min() < -128 or values.max() > 127):
            raise ValueError("int8 values out of range")
        return cls(tuple(dims) if dims else values.shape, ElemKind.INT8, values.astype(np.int8))


def tensor_bytes(t: Tensor) -> bytes:
    head = MAGIC + struct.pack("<BB", int(t.elem_kind), len(t.dims))
    head += struct.pack(f"<{len(t.dims)}I", *t.dims)
    return head + t.data.astype(t.elem_kind.dtype).tobytes()


def store_tensor(path, t: Tensor) -> None:
    Path(path).write_bytes(tensor_bytes(t))


def parse_tensor(raw: bytes) -> Tensor:
    if len(raw) < 6 or raw[:4] != MAGIC:
        raise ParseError("bad tensor magic")
    kind_code, ndims = struct.unpack_from("<BB", raw, 4)
    try:
        kind = ElemKind(kind_code)
    except ValueError:
        raise ParseError(f"unknown elem_kind {kind_code}") from None
    off = 6 + 4 * ndims
    if ndims == 0 or len(raw) < off:
        raise ParseError("truncated tensor header")
    dims = struct.unpack_from(f"<{ndims}I", raw, 6)
    payload = raw[off:]
    expected = prod(dims) * kind.dtype.itemsize
    if len(payload) != expected:
        raise ParseError(f"payload has {len(payload)} bytes, header implies {expected}")
    data = np.frombuffer(payload, dtype=kind.dtype)
    if kind is ElemKind.REAL16 and not np.all(np.isfinite(data)):
        raise NonFiniteValue("Real16 payload contains NaN/Inf")
    try:
        return Tensor(dims, kind, data)
    except DimsMismatch as exc:
        raise ParseError(str(exc)) from exc


def load_tensor(path, expected_dims=None) -> Tensor:
    path = Path(path)
    if not path.exists():
        raise MissingTensor(str(path))
    t = parse_tensor(path.read_bytes())
    if expected_dims is not None and tuple(expected_dims) != t.dims:
        if prod(expected_dims) != prod(t.dims):
            raise DimsMismatch(f"{path}: dims {t.dims}, expected {tuple(expected_dims)}")
        t = Tensor(tuple(expected_dims), t.elem_kind, t.data)
    return t


@dataclass(frozen=True)
class NetworkDescriptor:
    name: str
    layers: tuple[LayerDescriptor, ...]
    weight_files: Mapping[str, Path] = field(default_factory=dict)
    # per layer (scale, offset) of the uniform weight quantizer
    quant: Mapping[str, tuple[float, int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("network has no layers")
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ShapeError("duplicate layer names")
        for a, b in zip(self.layers, self.layers[1:]):
            check_chain(a, b)

    def scale(self, layer_name: str) -> tuple[float, int]:
        return self.quant.get(layer_name, (1.0, 0))

    @property
    def input_dims(self) -> tuple[int, ...]:
        return self.layers[0].input_dims

    def layer(self, name: str) -> LayerDescriptor:
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)


def check_chain(a: LayerDescriptor, b: LayerDescriptor) -> None:
    out = a.output_dims
    if b.kind is LayerKind.FC:
        ok = b.in_channels == prod(out)
    else:
        ok = (b.in_channels, b.in_h, b.in_w) == out
    if not ok:
        raise ShapeError(f"{a.name} produces {out}, {b.name} expects {b.input_dims}")


def load_network(descriptor_path) -> NetworkDescriptor:
    path = Path(descriptor_path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return network_from_json(doc, base_dir=path.parent, default_name=path.stem)


def network_from_json(doc, base_dir=Path("."), default_name="network") -> NetworkDescriptor:
    if not isinstance(doc, Mapping) or not isinstance(doc.get("layers"), list):
        raise ParseError("network descriptor needs a 'layers' array")
    layers = tuple(LayerDescriptor.from_json(l) for l in doc["layers"])
    weights = doc.get("weights", {}) or {}
    quant_doc = doc.get("quant", {}) or {}
    if not isinstance(weights, Mapping) or not isinstance(quant_doc, Mapping):
        raise ParseError("'weights' and 'quant' must be objects")
    names = {l.name for l in layers}
    weight_files = {}
    for lname, rel in weights.items():
        if lname not in names:
            raise ParseError(f"weights given for unknown layer {lname!r}")
        p = Path(rel)
        if not p.is_absolute():
            p = Path(base_dir) / p
        if not p.exists():
            raise MissingTensor(f"weight file for {lname} not found: {p}")
        weight_files[lname] = p
    quant = {}
    for lname, q in quant_doc.items():
        try:
            quant[lname] = (float(q["scale"]), int(q.get("offset", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad quant entry for {lname}") from exc
        if not quant[lname][0] > 0:
            raise ParseError(f"non-positive scale for {lname}")
    return NetworkDescriptor(str(doc.get("name", default_name)), layers, weight_files, quant)


def network_to_json(net: NetworkDescriptor) -> dict:
    return {
        "name": net.name,
        "layers": [l.to_json() for l in net.layers],
        "weights": {k: str(v) for k, v in net.weight_files.items()},
        "quant": {k: {"scale": s, "offset": z} for k, (s, z) in net.quant.items()},
    }


def layer_weights(net: NetworkDescriptor, layer: LayerDescriptor, seed: int = 0) -> Tensor:
    """Weights from the descriptor's file, or a seeded synthetic int8 tensor."""
    if layer.name in net.weight_files:
        t = load_tensor(net.weight_files[layer.name], layer.weight_dims)
        if t.elem_kind is not ElemKind.INT8:
            raise ParseError(f"weights of {layer.name} must be Int8")
        return t
    idx = [l.name for l in net.layers].index(layer.name)
    rng = np.random.default_rng([seed, idx, 0x5157])
    w = rng.integers(-128, 128, size=prod(layer.weight_dims))
    return Tensor(layer.weight_dims, ElemKind.INT8, w.astype(np.int8))


# --- activation distributions -------------------------------------------------

Distribution = dict  # keys: int exponent or "zero"; values: non-negative mass

DISTRIBUTION_NAMES = ("alexnet", "transformer", "ptblm", "bert_base", "bert_large")


def parse_distribution(doc: Mapping) -> Distribution:
    if not isinstance(doc, Mapping):
        raise ParseError("distribution must be a JSON object")
    out = {}
    for k, v in doc.items():
        if k == "zero":
            key = "zero"
        else:
            try:
                key = int(k)
            except ValueError:
                raise ParseError(f"bad distribution key {k!r}") from None
            if not EXP_MIN <= key <= EXP_MAX:
                raise ParseError(f"exponent {key} outside [{EXP_MIN}, {EXP_MAX}]")
        mass = float(v)
        if not math.isfinite(mass) or mass < 0:
            raise ParseError(f"bad mass {v!r} for {k!r}")
        out[key] = out.get(key, 0.0) + mass
    return out


def load_distribution(path) -> Distribution:
    try:
        return parse_distribution(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def shipped_distribution(name: str) -> Distribution:
    """One of the bundled per-network exponent distributions (estimated masses)."""
    ref = resources.files("qeihan") / "data" / "distributions" / f"{name}.json"
    return parse_distribution(json.loads(ref.read_text()))


def _bin_order(key) -> tuple:
    return (1, 0) if key == "zero" else (0, key)


def quota_counts(distribution: Distribution, count: int) -> dict:
    """Largest-remainder apportionment of ``count`` over the bins."""
    total = sum(distribution.values())
    if not distribution or total <= 0:
        raise EmptyDistribution("distribution has no mass")
    keys = sorted(distribution, key=_bin_order)
    raw = {k: count * distribution[k] / total for k in keys}
    counts = {k: int(math.floor(raw[k])) for k in keys}
    rest = count - sum(counts.values())
    by_remainder = sorted(keys, key=lambda k: (-(raw[k] - counts[k]), _bin_order(k)))
    for k in by_remainder[:rest]:
        counts[k] += 1
    return counts


def _sample_bin(rng: np.random.Generator, exp: int, n: int) -> np.ndarray:
    lo, hi = 2.0 ** (exp - 0.5), 2.0 ** (exp + 0.5)
    out = np.empty(n, dtype=np.float16)
    todo = np.arange(n)
    while todo.size:
        vals = rng.uniform(lo, hi, size=todo.size).astype(np.float16)
        pruned, _, e = log2_quantize_hw_array(vals)
        # exp == EXP_MIN targets the pruned bin on purpose
        ok = (e == exp) & ~pruned if exp != EXP_MIN else pruned & (vals != 0)
        out[todo[ok]] = vals[ok]
        todo = todo[~ok]
    return out


def synth_activations(distribution: Distribution, count: int, rng_seed: int,
                      signed: bool = False) -> Tensor:
    """Deterministic Real16 stream whose LOG2 histogram follows ``distribution``.

    Bin counts come from quota sampling; within a bin, magnitudes are uniform
    over the real interval that rounds to the bin's exponent. The stream is
    shuffled, and with ``signed`` each value gets a random sign.
    """
    if count < 1:
        raise ValueError("count must be positive")
    counts = quota_counts(distribution, count)
    rng = np.random.default_rng(rng_seed)
    parts = []
    for key in sorted(counts, key=_bin_order):
        n = counts[key]
        if n == 0:
            continue
        parts.append(np.zeros(n, np.float16) if key == "zero" else _sample_bin(rng, key, n))
    values = np.concatenate(parts)
    values = values[rng.permutation(count)]
    if signed:
        values = np.where(rng.random(count) < 0.5, -values, values).astype(np.float16)
    return Tensor((count,), ElemKind.REAL16, values)
