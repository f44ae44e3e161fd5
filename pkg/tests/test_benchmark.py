import csv
import io
import json

from semplan.benchmark import SweepSpec, sweep, synthetic_scenario, write_csv
from semplan.cli import main


def test_sweep_has_one_row_per_cell():
    spec = SweepSpec(robots=(1, 3, 5), landmarks=(2,), taus=(0.1, 0.5), seeds=(0,), size=4.0,
                     n_max=30)
    runs, cells = sweep(spec)
    assert len(runs) == 6
    assert [(c["N"], c["tau"]) for c in cells] == [
        (1, 0.1), (1, 0.5), (3, 0.1), (3, 0.5), (5, 0.1), (5, 0.5)]
    buf = io.StringIO()
    write_csv(cells, buf)
    rows = list(csv.DictReader(io.StringIO(buf.getvalue())))
    assert len(rows) == 6
    assert set(rows[0]) >= {"median_runtime", "median_H", "median_cost", "median_iterations"}


def test_longer_time_step_needs_fewer_steps():
    spec = SweepSpec(robots=(1,), landmarks=(1,), taus=(0.1, 0.5), seeds=(0, 1, 2), size=3.0,
                     n_max=20_000)
    _, cells = sweep(spec)
    by_tau = {c["tau"]: c for c in cells}
    assert by_tau[0.1]["found"] == by_tau[0.5]["found"] == 3
    assert by_tau[0.5]["median_H"] < by_tau[0.1]["median_H"]


def test_synthetic_mission_assigns_landmarks_round_robin():
    s = synthetic_scenario(2, 3, 0.1, seed=4)
    assert s.mission_text == ("F near(1, L1, 0.2, 0.25) & F near(2, L2, 0.2, 0.25)"
                              " & F near(1, L3, 0.2, 0.25)")
    assert synthetic_scenario(2, 3, 0.1, seed=4).dumps() == s.dumps()


def test_benchmark_command_writes_csv(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"schema": "semplan/benchmark@1", "robots": [1], "landmarks": [1],
                                "taus": [0.5], "seeds": [0, 1], "size": 3.0}))
    out = tmp_path / "out.csv"
    assert main(["benchmark", str(spec), "--out", str(out), "--n-max", "2000"]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 1
    assert rows[0]["runs"] == "2"
