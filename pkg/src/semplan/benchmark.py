"""Synthetic scalability sweeps over team size, landmark count and time step."""

from __future__ import annotations

import csv
import itertools
import logging
import math
import statistics
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .estimation import RangeSensorModel
from .geometry import Workspace
from .planner.dynamics import default_primitives
from .planner.search import NotFound, PlannerConfig, PlanningError, Robot, plan
from .scenario import Scenario
from .semantic_map import Landmark

logger = logging.getLogger(__name__)

BENCHMARK_SCHEMA = "semplan/benchmark@1"


@dataclass
class SweepSpec:
    robots: Sequence[int] = (1,)
    landmarks: Sequence[int] = (1,)
    taus: Sequence[float] = (0.1,)
    seeds: Sequence[int] = (0,)
    size: float = 10.0
    n_max: int = 20_000
    sensor_range: float = 1.0
    r: float = 0.2
    delta: float = 0.25
    cov: float = 0.02
    stop_at_first: bool = True
    member_cap: int | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "SweepSpec":
        data = {k: v for k, v in data.items() if k != "schema"}
        return cls(**data)


def synthetic_scenario(n_robots: int, n_landmarks: int, tau: float, seed: int,
                       size: float = 10.0, sensor_range: float = 1.0, r: float = 0.2,
                       delta: float = 0.25, cov: float = 0.02) -> Scenario:
    """Open square workspace; landmark ``i`` must eventually be reached by robot ``i mod N``."""
    rng = np.random.default_rng(seed)
    ws = Workspace((0.0, 0.0, size, size))
    margin = 0.1 * size
    robots = []
    for _ in range(n_robots):
        x, y = rng.uniform(margin, size - margin, 2)
        robots.append(Robot((x, y, float(rng.uniform(-math.pi, math.pi))), tuple(default_primitives()),
                            RangeSensorModel(sensor_range)))
    landmarks = []
    for i in range(n_landmarks):
        landmarks.append(Landmark(f"L{i + 1}", rng.uniform(margin, size - margin, 2),
                                  np.eye(2) * cov, {"object": 1.0}))
    goals = [f"F near({i % n_robots + 1}, L{i + 1}, {r:g}, {delta:g})" for i in range(n_landmarks)]
    return Scenario(ws, robots, landmarks, ["object"], " & ".join(goals), tau=tau)


@dataclass
class RunResult:
    n_robots: int
    n_landmarks: int
    tau: float
    seed: int
    status: str
    runtime: float
    H: int | None
    cost: float | None
    iterations: int


def run_cell(spec: SweepSpec, n: int, m: int, tau: float, seed: int) -> RunResult:
    scenario = synthetic_scenario(n, m, tau, seed, spec.size, spec.sensor_range, spec.r,
                                  spec.delta, spec.cov)
    config = PlannerConfig(n_max=spec.n_max, seed=seed, stop_at_first=spec.stop_at_first,
                           member_cap=spec.member_cap)
    t0 = time.perf_counter()
    try:
        result = plan(scenario.problem(), config)
        return RunResult(n, m, tau, seed, "found", time.perf_counter() - t0, result.H,
                         result.cost, result.iterations)
    except NotFound as exc:
        return RunResult(n, m, tau, seed, "not_found", time.perf_counter() - t0, None, None,
                         exc.stats.iterations if exc.stats else spec.n_max)
    except (PlanningError, ValueError) as exc:
        logger.warning("cell N=%d M=%d tau=%g seed=%d failed: %s", n, m, tau, seed, exc)
        return RunResult(n, m, tau, seed, f"error: {exc}", time.perf_counter() - t0, None, None, 0)


def _median(values):
    values = [v for v in values if v is not None]
    return statistics.median(values) if values else None


def sweep(spec: SweepSpec) -> tuple[list[RunResult], list[dict]]:
    """Run every cell; returns per-run results and one aggregate row per (N, M, tau)."""
    runs = []
    for n, m, tau in itertools.product(spec.robots, spec.landmarks, spec.taus):
        for seed in spec.seeds:
            runs.append(run_cell(spec, n, m, tau, seed))
    runs.sort(key=lambda r: (r.n_robots, r.n_landmarks, r.tau, r.seed))
    cells = []
    for key, group in itertools.groupby(runs, key=lambda r: (r.n_robots, r.n_landmarks, r.tau)):
        group = list(group)
        cells.append({
            "N": key[0], "M": key[1], "tau": key[2],
            "runs": len(group),
            "found": sum(r.status == "found" for r in group),
            "median_runtime": _median([r.runtime for r in group]),
            "median_H": _median([r.H for r in group]),
            "median_cost": _median([r.cost for r in group]),
            "median_iterations": _median([r.iterations for r in group]),
        })
    return runs, cells


def write_csv(rows: list[dict], path_or_buf) -> None:
    fields = ["N", "M", "tau", "runs", "found", "median_runtime", "median_H", "median_cost",
              "median_iterations"]
    own = isinstance(path_or_buf, str) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row[k] is None else row[k]) for k in fields})
    finally:
        if own:
            fh.close()
