import json
from dataclasses import fields, replace

import pytest
from hypothesis import given, strategies as st

from qeihan.errors import MismatchedRuns
from qeihan.metrics import CATEGORIES, EnergyConfig, compare, energy
from qeihan.model import LayerDescriptor, LayerKind, NetworkDescriptor, synth_activations
from qeihan.sched import AccessCounters, MachineKind, run_network

ZERO_CFG = EnergyConfig(**{f.name: 0.0 for f in fields(EnergyConfig)})
COUNTER_NAMES = [f.name for f in fields(AccessCounters)]


def test_all_zero():
    assert energy(AccessCounters(), 0).total == 0


def test_dram_only():
    cfg = replace(ZERO_CFG, dram_per_beat=1e-12)
    e = energy(AccessCounters(dram_beats=10, weight_beats=10), 0, cfg)
    assert e.categories["DRAM"] == e.total == pytest.approx(10e-12, rel=0, abs=1e-24)


def test_static_is_linear_in_cycles():
    a = energy(AccessCounters(), 1000, EnergyConfig())
    b = energy(AccessCounters(), 500, EnergyConfig())
    assert b.categories["Static"] * 2 == a.categories["Static"]


@given(st.fixed_dictionaries({n: st.integers(0, 10 ** 6) for n in COUNTER_NAMES}),
       st.integers(0, 10 ** 7))
def test_breakdown_additive_and_monotone(counts, cycles):
    c = AccessCounters(**counts)
    e = energy(c, cycles)
    total = 0.0
    for k in CATEGORIES:
        total += e.categories[k]
    assert e.total == total
    for name in COUNTER_NAMES:
        bumped = AccessCounters(**{**counts, name: counts[name] + 1})
        assert energy(bumped, cycles).total >= e.total
    assert energy(c, cycles + 1).total >= e.total


def test_config_rejects_unknown_and_negative(tmp_path):
    with pytest.raises(ValueError):
        EnergyConfig.from_json({"dram_per_beat": 1e-12, "laser": 1.0})
    with pytest.raises(ValueError):
        EnergyConfig(add=-1.0)
    p = tmp_path / "e.json"
    p.write_text(json.dumps({"add": 1e-13}))
    assert EnergyConfig.load(p).add == 1e-13


def test_shipped_defaults_match_class():
    from importlib import resources
    doc = json.loads((resources.files("qeihan") / "data" / "energy_default.json").read_text())
    assert EnergyConfig.from_json(doc) == EnergyConfig()


def _fc_net(name="n"):
    return NetworkDescriptor(name, (LayerDescriptor("fc", LayerKind.FC, 64, 64),))


def test_compare_self_and_minus_three():
    net = _fc_net()
    x = synth_activations({-3: 1.0}, 64, 0)
    q = run_network(MachineKind.QEIHAN, net, x)
    n = run_network(MachineKind.NAHID, net, x)
    assert compare(q, q) == {"speedup": 1.0, "energy_ratio": 1.0, "access_ratio": 1.0,
                             "weight_access_ratio": 1.0}
    assert compare(q, n)["weight_access_ratio"] == 0.625


def test_compare_speedup_two():
    net = _fc_net()
    q = run_network(MachineKind.QEIHAN, net, synth_activations({0: 1.0}, 64, 0))
    slow = replace(q, cycles=2 * q.cycles)
    assert compare(q, slow)["speedup"] == 2.0


def test_compare_mismatched():
    x = synth_activations({0: 1.0}, 64, 0)
    a = run_network(MachineKind.QEIHAN, _fc_net("a"), x)
    b = run_network(MachineKind.QEIHAN, _fc_net("b"), x)
    with pytest.raises(MismatchedRuns):
        compare(a, b)
    c = run_network(MachineKind.QEIHAN, _fc_net("a"), synth_activations({0: 1.0}, 64, 1))
    with pytest.raises(MismatchedRuns):
        compare(a, c)
