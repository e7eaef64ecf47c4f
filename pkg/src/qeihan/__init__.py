"""Simulator for a LOG2-quantized near-memory DNN accelerator with bit-plane
weight storage, and its standard-layout and output-stationary baselines."""
from .analysis import ExpHistogram, estimated_memory_savings, histogram, histogram_of_values
from .mem3d import LayoutKind, MemGeometry, fetch_weight_group, place_weights, schedule_beats
from .metrics import EnergyConfig, compare, energy
from .model import LayerDescriptor, LayerKind, NetworkDescriptor, Tensor, load_network
from .pe import PEConfig
from .quant import log2_quantize_hw, log2_quantize_ref
from .sched import MachineKind, run_layer, run_network

__version__ = "0.1.0"

__all__ = [
    "EnergyConfig", "ExpHistogram", "LayerDescriptor", "LayerKind", "LayoutKind", "MachineKind",
    "MemGeometry", "NetworkDescriptor", "PEConfig", "Tensor", "compare", "energy",
    "estimated_memory_savings", "fetch_weight_group", "histogram", "histogram_of_values",
    "load_network", "log2_quantize_hw", "log2_quantize_ref", "place_weights", "run_layer",
    "run_network", "schedule_beats",
]
