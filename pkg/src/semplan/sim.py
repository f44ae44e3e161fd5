"""Online execution of plans against a ground-truth world, with replanning."""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .estimation import Diagnostics, class_update, ekf_update, predict_map
from .geometry import Workspace
from .planner import dynamics_step, step_cost
from .planner.search import (
    NotFound, Plan, PlannerConfig, PlanningError, PlanningProblem, StartState, plan as make_plan,
)
from .semantic_map import SemanticMap, label

logger = logging.getLogger(__name__)

TRACE_SCHEMA = "semplan/trace@1"


class Status(str, enum.Enum):
    SATISFIED = "Satisfied"
    FAILED_MAX_REPLANS = "Failed(max replans)"
    FAILED_VIOLATION = "Failed(violation)"
    RUNNING = "Running"


@dataclass
class GroundTruth:
    """True landmark positions at ``t0`` and pre-sampled process noise."""

    positions: dict
    classes: dict = field(default_factory=dict)
    process_noise: np.ndarray | None = None  # (T, M, 2), drawn once per execution
    confusion: Mapping | None = None  # confusion[true][reported]
    detection_prob: float = 0.0

    @classmethod
    def from_prior(cls, smap: SemanticMap) -> "GroundTruth":
        classes = {lid: smap.classes[int(np.argmax(smap.class_probs[i]))]
                   for i, lid in enumerate(smap.ids)}
        return cls({lid: smap.means[i].copy() for i, lid in enumerate(smap.ids)}, classes)

    def check(self, smap: SemanticMap) -> None:
        if set(self.positions) != set(smap.ids):
            raise ValueError("ground-truth landmark ids must match the map")

    def presample(self, smap: SemanticMap, horizon: int, rng: np.random.Generator) -> None:
        """Append process-noise draws until ``horizon`` steps are covered."""
        have = 0 if self.process_noise is None else len(self.process_noise)
        extra = horizon - have
        if extra <= 0:
            return
        noise = np.zeros((extra, len(smap), 2))
        for i, dyn in enumerate(smap.dynamics):
            if dyn is not None and np.any(dyn.Q):
                noise[:, i] = rng.multivariate_normal(np.zeros(2), dyn.Q, size=extra)
        self.process_noise = noise if have == 0 else np.concatenate([self.process_noise, noise])

    def trajectory(self, smap: SemanticMap, horizon: int) -> np.ndarray:
        """True positions for ``t0 .. t0 + horizon`` as an array (horizon+1, M, 2)."""
        pos = np.array([np.asarray(self.positions[lid], dtype=float) for lid in smap.ids])
        pos = pos.reshape(len(smap), 2)
        out = [pos]
        for k in range(horizon):
            nxt = out[-1].copy()
            for i, dyn in enumerate(smap.dynamics):
                if dyn is not None:
                    nxt[i] = dyn.A @ nxt[i] + dyn.B @ dyn.control(smap.t + k)
                    if self.process_noise is not None and k < len(self.process_noise):
                        nxt[i] = nxt[i] + self.process_noise[k, i]
            out.append(nxt)
        return np.array(out)


def synth_measurements(true_positions, ids: Sequence[str], poses, sensors, rng: np.random.Generator,
                       workspace: Workspace | None = None, zero_noise: bool = False) -> list:
    """Range readings ``l + v`` with ``v ~ N(0, (slope * l)^2)`` for every visible pair."""
    out = []
    for j, (pose, sensor) in enumerate(zip(poses, sensors), start=1):
        for i, lid in enumerate(ids):
            pos = true_positions[i]
            if not sensor.visible(pose, pos, workspace if sensor.line_of_sight else None):
                continue
            dist = math.hypot(pos[0] - pose[0], pos[1] - pose[1])
            noise = 0.0 if zero_noise else float(rng.normal(0.0, sensor.slope * dist))
            out.append((j, lid, dist + noise))
    return out


@dataclass
class StepRecord:
    t: int
    poses: np.ndarray
    q: int
    measurements: list
    means: np.ndarray
    covs: np.ndarray
    replanned: bool = False

    @property
    def det_covs(self) -> np.ndarray:
        return np.linalg.det(self.covs)


@dataclass
class ReplanEvent:
    t: int
    q: int
    expected: int
    observed: int | None
    label: frozenset
    new_horizon: int | None = None


@dataclass
class ExecutionTrace:
    steps: list = field(default_factory=list)
    replans: list = field(default_factory=list)
    status: Status = Status.RUNNING
    cost: float = 0.0
    final_covs: np.ndarray | None = None
    landmark_ids: tuple = ()
    plans: list = field(default_factory=list)
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    @property
    def n_replans(self) -> int:
        return len(self.replans)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            header = ["t", "q", "replanned", "n_measurements", "poses"]
            header += [f"det_{lid}" for lid in self.landmark_ids]
            w.writerow(header)
            for s in self.steps:
                w.writerow([s.t, s.q, int(s.replanned), len(s.measurements),
                            json.dumps(np.round(s.poses, 9).tolist())]
                           + [f"{d:.9g}" for d in s.det_covs])

    def summary(self) -> dict:
        return {
            "schema": TRACE_SCHEMA,
            "status": self.status.value,
            "replans": self.n_replans,
            "steps": len(self.steps) - 1 if self.steps else 0,
            "cost": self.cost,
            "final_det_cov": {
                lid: float(np.linalg.det(self.final_covs[i]))
                for i, lid in enumerate(self.landmark_ids)
            } if self.final_covs is not None else {},
            "replan_steps": [e.t for e in self.replans],
        }


def _observe_classes(smap: SemanticMap, truth: GroundTruth, true_pos, poses, sensors, workspace,
                     rng: np.random.Generator, diagnostics: Diagnostics) -> SemanticMap:
    if not truth.confusion or truth.detection_prob <= 0.0:
        return smap
    probs = smap.class_probs.copy()
    for pose, sensor in zip(poses, sensors):
        for i, lid in enumerate(smap.ids):
            if not sensor.visible(pose, true_pos[i], workspace if sensor.line_of_sight else None):
                continue
            if rng.random() >= truth.detection_prob:
                continue
            row = truth.confusion[truth.classes[lid]]
            labels = list(row)
            p = np.array([row[c] for c in labels], dtype=float)
            reported = labels[int(rng.choice(len(labels), p=p / p.sum()))]
            probs[i] = class_update(probs[i], (reported, 1.0), truth.confusion,
                                    smap.classes, diagnostics)
    return smap.replace(class_probs=probs)


def execute(plan: Plan, problem: PlanningProblem, truth: GroundTruth | None = None,
            max_replans: int = 10, seed: int = 0, config: PlannerConfig | None = None,
            zero_noise: bool = False, max_steps: int = 100_000) -> ExecutionTrace:
    """Follow ``plan``; replan whenever the online label does not enable the planned transition."""
    rng = np.random.default_rng(seed)
    truth = truth or GroundTruth.from_prior(problem.smap)
    truth.check(problem.smap)
    if truth.process_noise is None:
        truth.presample(problem.smap, max(1, plan.H) * 4 + 64, rng)
    dfa = problem.dfa
    config = config or PlannerConfig()
    tau = config.tau or problem.tau
    online = problem.smap
    true_path = truth.trajectory(online, len(truth.process_noise))
    poses = np.array(plan.poses[0], dtype=float)
    q = plan.dfa_states[0]
    trace = ExecutionTrace(landmark_ids=online.ids, plans=[plan])

    def record(t, meas, replanned=False):
        trace.steps.append(StepRecord(
            t, poses.copy(), q, meas, online.means.copy(), online.covs.copy(), replanned,
        ))

    record(online.t, [])
    active, k = plan, 0
    if active.accepted_at_root:
        trace.status = Status.SATISFIED
    while trace.status == Status.RUNNING:
        if len(trace.steps) > max_steps:
            trace.status = Status.FAILED_VIOLATION
            break
        lab = label(poses, online, problem.universe, problem.workspace)
        observed = dfa.step(q, lab)
        expected = active.dfa_states[k + 1] if k < active.H else None
        if observed is None or observed != expected:
            event = ReplanEvent(online.t, q, expected, observed, lab)
            trace.replans.append(event)
            trace.steps[-1].replanned = True
            if trace.n_replans > max_replans:
                trace.status = Status.FAILED_MAX_REPLANS
                break
            try:
                active = make_plan(problem, config, StartState(poses.copy(), q, online))
            except (NotFound, PlanningError) as exc:
                logger.info("replanning failed at t=%d: %s", online.t, exc)
                trace.status = Status.FAILED_VIOLATION
                break
            event.new_horizon = active.H
            trace.plans.append(active)
            k = 0
            if active.accepted_at_root:
                trace.status = Status.SATISFIED
            continue
        controls = np.array(active.controls[k], dtype=float)
        new_poses, _ = dynamics_step(poses, controls, tau, problem.workspace)
        trace.cost += step_cost(poses, new_poses)
        poses = new_poses
        online = predict_map(online)
        t_idx = online.t - problem.smap.t
        if t_idx >= len(true_path):
            truth.presample(problem.smap, 2 * t_idx, rng)
            true_path = truth.trajectory(problem.smap, len(truth.process_noise))
        true_pos = true_path[t_idx]
        meas = synth_measurements(true_pos, online.ids, poses, problem.sensors, rng,
                                  problem.workspace, zero_noise)
        online = ekf_update(online, meas, poses, problem.sensors, trace.diagnostics)
        online = _observe_classes(online, truth, true_pos, poses, problem.sensors,
                                  problem.workspace, rng, trace.diagnostics)
        q = observed
        k += 1
        record(online.t, meas)
        if q == dfa.accepting:
            trace.status = Status.SATISFIED
    trace.final_covs = online.covs.copy()
    return trace
