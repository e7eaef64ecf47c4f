import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from qeihan.cli import main
from qeihan.model import Tensor, store_tensor


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def savings_map(path):
    return {r[0]: r[1] for r in rows(path)[1:]}


def test_analyze_all_zero(tmp_path):
    store_tensor(tmp_path / "z.qht", Tensor.real16(np.zeros(100)))
    assert main(["analyze", "--acts-tensor", str(tmp_path / "z.qht"), "--out", str(tmp_path)]) == 0
    hist = rows(tmp_path / "histogram.csv")
    assert hist[-1] == ["zero", "100"] and all(r[1] == "0" for r in hist[1:-1])
    s = savings_map(tmp_path / "savings.csv")
    assert float(s["savings"]) == 0 and s["note"] == "pruned-only input"


def test_analyze_ptblm(tmp_path):
    assert main(["analyze", "--acts-dist", "ptblm", "--count", "10000", "--out", str(tmp_path)]) == 0
    assert float(savings_map(tmp_path / "savings.csv")["savings"]) >= 0.30


def test_analyze_five_distributions_mean(tmp_path):
    vals = []
    for name in ("alexnet", "transformer", "ptblm", "bert_base", "bert_large"):
        out = tmp_path / name
        assert main(["analyze", "--acts-dist", name, "--count", "20000", "--out", str(out)]) == 0
        vals.append(float(savings_map(out / "savings.csv")["savings"]))
    assert abs(sum(vals) / 5 - 0.25) <= 0.05


def test_analyze_distribution_file(tmp_path):
    p = tmp_path / "d.json"
    p.write_text(json.dumps({"-3": 1.0}))
    assert main(["analyze", "--acts-dist", str(p), "--count", "50", "--out", str(tmp_path)]) == 0
    assert savings_map(tmp_path / "savings.csv")["savings_exact"] == "3/8"


def test_simulate_single_machine(tmp_path):
    assert main(["simulate", "--network", "fc", "--machines", "QeiHaN", "--acts-dist", "ptblm",
                 "--out", str(tmp_path)]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["comparison.csv", "report_QeiHaN.json"]


def test_simulate_functional_equality_and_ordering(tmp_path):
    assert main(["simulate", "--network", "mlp", "--acts-dist", "ptblm", "--seed", "4",
                 "--out", str(tmp_path)]) == 0
    table = list(csv.DictReader(open(tmp_path / "comparison.csv")))
    assert [r["machine"] for r in table] == ["QeiHaN", "NaHiD", "Neurocube"]
    beats = [int(r["beats_total"]) for r in table]
    assert beats[0] < beats[1] < beats[2]
    q = json.loads((tmp_path / "report_QeiHaN.json").read_text())
    n = json.loads((tmp_path / "report_NaHiD.json").read_text())
    assert q["output_sha256"] == n["output_sha256"]


def test_simulate_overrides(tmp_path):
    assert main(["simulate", "--network", "fc", "--machines", "NaHiD", "--acts-dist", "bert_base",
                 "--geometry", "num_vaults=8,tRC_cycles=6", "--pe", "num_adders=32",
                 "--out", str(tmp_path)]) == 0


@pytest.mark.parametrize("args", [
    ["simulate", "--network", "missing_net", "--acts-dist", "ptblm"],
    ["simulate", "--network", "fc"],
    ["simulate", "--network", "fc", "--acts-dist", "ptblm", "--count", "7"],
    ["simulate", "--network", "fc", "--acts-dist", "ptblm", "--machines", "TPU"],
    ["simulate", "--network", "fc", "--acts-dist", "ptblm", "--geometry", "warp=9"],
    ["analyze", "--acts-dist", "ptblm"],
])
def test_errors_exit_nonzero(args, tmp_path, capsys):
    assert main(args + ["--out", str(tmp_path)]) != 0
    err = capsys.readouterr().err.strip().splitlines()
    assert err[-1].startswith("error: ")


def test_bad_energy_file(tmp_path, capsys):
    p = tmp_path / "e.json"
    p.write_text(json.dumps({"nonsense": 1}))
    assert main(["simulate", "--network", "fc", "--acts-dist", "ptblm", "--energy", str(p),
                 "--out", str(tmp_path)]) != 0
    assert "unknown energy keys" in capsys.readouterr().err


def test_sweep_endpoints(tmp_path):
    assert main(["sweep", "--network", "fc", "--out", str(tmp_path)]) == 0
    table = list(csv.DictReader(open(tmp_path / "sweep.csv")))
    assert float(table[0]["savings"]) == 0.0
    assert float(table[3]["savings"]) == 0.375


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "qeihan", "analyze", "--acts-dist", "alexnet",
                           "--count", "100", "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "histogram.csv").exists()
