"""Scenario files: loading with aggregated validation, and canonical dumping."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping

import numpy as np

from .estimation import RangeSensorModel
from .geometry import GeometryError, Workspace
from .ltl import ParseError, parse
from .ltl import formula as fm
from .planner.dynamics import default_primitives, primitive_product
from .planner.search import PlannerConfig, PlanningProblem, Robot
from .semantic_map import Landmark, LinearDynamics, MapError, SemanticMap
from .sim import GroundTruth

SCENARIO_SCHEMA = "semplan/scenario@1"


class ScenarioError(ValueError):
    """All problems found in a scenario, each prefixed by its field path."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.errors))


@dataclass
class Scenario:
    workspace: Workspace
    robots: list[Robot]
    landmarks: list[Landmark]
    classes: list[str]
    mission_text: str
    tau: float = 0.1
    resolution: float | None = None
    planner: dict = field(default_factory=dict)
    truth: dict | None = None
    mission: fm.Mission | None = None

    def __post_init__(self):
        if self.mission is None:
            self.mission = parse(self.mission_text)
        self._problem = None

    def semantic_map(self) -> SemanticMap:
        return SemanticMap.from_landmarks(self.landmarks, self.classes)

    def problem(self) -> PlanningProblem:
        if self._problem is None:
            self._problem = PlanningProblem(
                self.workspace, self.robots, self.semantic_map(), self.mission,
                tau=self.tau, resolution=self.resolution,
            )
        return self._problem

    def config(self, **overrides) -> PlannerConfig:
        opts = dict(self.planner)
        opts.update({k: v for k, v in overrides.items() if v is not None})
        return PlannerConfig(**opts)

    def ground_truth(self) -> GroundTruth:
        smap = self.semantic_map()
        if not self.truth:
            return GroundTruth.from_prior(smap)
        base = GroundTruth.from_prior(smap)
        positions = {k: np.asarray(v, dtype=float) for k, v in self.truth.get("positions", {}).items()}
        base.positions.update(positions)
        base.classes.update(self.truth.get("classes", {}))
        base.confusion = self.truth.get("confusion")
        base.detection_prob = float(self.truth.get("detection_prob", 0.0))
        return base

    def to_dict(self) -> dict:
        out = {
            "schema": SCENARIO_SCHEMA,
            "workspace": {**self.workspace.to_dict(), "resolution": self.resolution},
            "tau": self.tau,
            "classes": list(self.classes),
            "robots": [
                {
                    "pose": list(r.pose),
                    "primitives": [list(p) for p in r.primitives],
                    "sensor": {"range": r.sensor.range, "fov": r.sensor.fov,
                               "slope": r.sensor.slope, "line_of_sight": r.sensor.line_of_sight},
                }
                for r in self.robots
            ],
            "landmarks": [
                {
                    "id": lm.id,
                    "mean": lm.mean.tolist(),
                    "cov": lm.cov.ravel().tolist(),
                    "class_dist": dict(lm.class_dist),
                    **({"dynamics": lm.dynamics.to_dict()} if lm.dynamics is not None else {}),
                }
                for lm in self.landmarks
            ],
            "mission": self.mission_text,
            "planner": dict(sorted(self.planner.items())),
        }
        if self.truth is not None:
            out["truth"] = _jsonable(self.truth)
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Mapping):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


class _Collector:
    def __init__(self):
        self.errors: list[str] = []

    def check(self, path: str, fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except (ValueError, TypeError, KeyError, GeometryError, MapError) as exc:
            msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
            self.errors.append(f"{path}: {msg}")
            return None


def _vec(value, n: int, what: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.size != n or not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} needs {n} finite numbers")
    return arr.reshape(-1)


def _robot(data: Mapping) -> Robot:
    pose = _vec(data["pose"], 3, "pose")
    if "primitives" in data:
        prims = [(float(u), float(w)) for u, w in data["primitives"]]
    elif "speeds" in data or "turn_rates_deg" in data:
        prims = primitive_product(data.get("speeds", [1.0, 0.0]),
                                  [math.radians(w) for w in data.get("turn_rates_deg", [0.0])])
    else:
        prims = default_primitives()
    s = data.get("sensor", {})
    fov = s.get("fov", math.radians(s["fov_deg"]) if "fov_deg" in s else 2.0 * math.pi)
    sensor = RangeSensorModel(float(s.get("range", 1.0)), float(fov), float(s.get("slope", 0.5)),
                              bool(s.get("line_of_sight", False)))
    return Robot(tuple(pose), tuple(prims), sensor)


def _dynamics(data: Mapping | None) -> LinearDynamics | None:
    if not data:
        return None
    Q = np.asarray(data.get("Q", [0, 0, 0, 0]), dtype=float).reshape(2, 2)
    return LinearDynamics(A=data.get("A", [[1, 0], [0, 1]]), B=data.get("B", []),
                          controls=tuple(data.get("controls", ())), Q=Q)


def _landmark(data: Mapping) -> Landmark:
    cov = _vec(data["cov"], 4, "cov").reshape(2, 2)
    return Landmark(str(data["id"]), _vec(data["mean"], 2, "mean"), cov,
                    dict(data.get("class_dist", {})), _dynamics(data.get("dynamics")))


def from_dict(data: Mapping) -> Scenario:
    """Build and validate a scenario, reporting every problem at once."""
    col = _Collector()
    schema = data.get("schema", SCENARIO_SCHEMA)
    if schema != SCENARIO_SCHEMA:
        col.errors.append(f"schema: expected {SCENARIO_SCHEMA!r}, got {schema!r}")
    ws_data = data.get("workspace")
    workspace = None
    resolution = None
    if ws_data is None:
        col.errors.append("workspace: missing")
    else:
        workspace = col.check("workspace", Workspace.from_dict, ws_data)
        resolution = ws_data.get("resolution")
    tau = data.get("tau", 0.1)
    if not isinstance(tau, (int, float)) or not tau > 0:
        col.errors.append(f"tau: must be a positive number, got {tau!r}")

    classes = list(data.get("classes", []))
    robots = []
    for k, r in enumerate(data.get("robots", [])):
        robot = col.check(f"robots[{k}]", _robot, r)
        if robot is None:
            continue
        robots.append(robot)
        if workspace is not None and workspace.collides(np.array(robot.pose[:2])).any():
            col.errors.append(f"robots[{k}].pose: initial position is in collision or out of bounds")
    if not data.get("robots"):
        col.errors.append("robots: at least one robot is required")

    landmarks = []
    seen = set()
    for k, lm in enumerate(data.get("landmarks", [])):
        name = lm.get("id", "?") if isinstance(lm, Mapping) else "?"
        obj = col.check(f"landmarks[{k}] ({name})", _landmark, lm)
        if obj is None:
            continue
        if obj.id in seen:
            col.errors.append(f"landmarks[{k}].id: duplicate id {obj.id!r}")
        seen.add(obj.id)
        unknown = set(obj.class_dist) - set(classes)
        if unknown:
            col.errors.append(f"landmarks[{k}] ({obj.id}).class_dist: unknown classes {sorted(unknown)}")
        landmarks.append(obj)

    text = data.get("mission")
    mission = None
    if not isinstance(text, str):
        col.errors.append("mission: missing mission text")
    else:
        try:
            mission = parse(text)
        except ParseError as exc:
            col.errors.append(f"mission: {exc}")
    if mission is not None:
        ids = {lm.id for lm in landmarks}
        regions = set(workspace.regions) if workspace is not None else set()
        for pred in mission.predicates():
            robot = getattr(pred, "robot", None)
            if isinstance(pred, fm.Prop):
                col.errors.append(f"mission: proposition {pred.name!r} has no sensor interpretation")
                continue
            if robot is not None and not 1 <= robot <= len(robots):
                col.errors.append(f"mission: {pred.id} refers to unknown robot {robot}")
            lid = getattr(pred, "landmark", None)
            if lid is not None and lid not in ids:
                col.errors.append(f"mission: {pred.id} refers to unknown landmark {lid!r}")
            if isinstance(pred, fm.Region) and pred.region not in regions:
                col.errors.append(f"mission: {pred.id} refers to unknown region {pred.region!r}")
            if isinstance(pred, fm.NearLandmarkClass) and pred.cls not in classes:
                col.errors.append(f"mission: {pred.id} refers to unknown class {pred.cls!r}")

    planner = dict(data.get("planner", {}))
    known = {f.name for f in fields(PlannerConfig)}
    bad = set(planner) - known
    if bad:
        col.errors.append(f"planner: unknown options {sorted(bad)}")
    else:
        col.check("planner", PlannerConfig, **planner)

    truth = data.get("truth")
    if truth is not None:
        for lid in truth.get("positions", {}):
            if lid not in seen:
                col.errors.append(f"truth.positions: unknown landmark {lid!r}")
        for lid, cls in truth.get("classes", {}).items():
            if lid not in seen:
                col.errors.append(f"truth.classes: unknown landmark {lid!r}")
            elif cls not in classes:
                col.errors.append(f"truth.classes.{lid}: unknown class {cls!r}")
        conf = truth.get("confusion")
        if conf is not None:
            for c in classes:
                row = conf.get(c)
                if row is None or set(row) != set(classes):
                    col.errors.append(f"truth.confusion.{c}: needs one likelihood per class")
                elif any(v < 0 for v in row.values()):
                    col.errors.append(f"truth.confusion.{c}: likelihoods must be nonnegative")

    if col.errors:
        raise ScenarioError(col.errors)
    return Scenario(workspace, robots, landmarks, classes, text, float(tau), resolution,
                    planner, truth, mission)


def load_scenario(path) -> Scenario:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from None
    if not isinstance(data, Mapping):
        raise ScenarioError([f"{path}: top level must be an object"])
    return from_dict(data)


def dump_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(scenario.dumps() + "\n")
