"""Sampling-based tree search over robot poses, map covariances and automaton states."""

from __future__ import annotations

import logging
import math
import time
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..estimation import Diagnostics, RangeSensorModel, riccati_update_map
from ..geometry import OccupancyGrid, Workspace, rasterize
from ..ltl import automaton as au
from ..ltl import formula as fm
from ..semantic_map import SemanticMap, label
from .dynamics import dynamics_step, step_cost, wrap_angle
from .sampling import Guidance, control_probabilities, sample_bucket, sample_primitive
from .tree import BucketIndex, Tree, TreeNode

logger = logging.getLogger(__name__)

PLAN_SCHEMA = "semplan/plan@1"


class PlanningError(RuntimeError):
    pass


class NotFound(PlanningError):
    """No accepting node within the iteration budget."""

    def __init__(self, message: str, stats: "PlannerStats | None" = None):
        super().__init__(message)
        self.stats = stats


class PlanValidationError(PlanningError):
    pass


@dataclass(frozen=True)
class Robot:
    pose: tuple[float, float, float]
    primitives: tuple[tuple[float, float], ...]
    sensor: RangeSensorModel

    def __post_init__(self):
        if not self.primitives:
            raise ValueError("a robot needs at least one motion primitive")
        object.__setattr__(self, "pose", tuple(float(v) for v in self.pose))
        object.__setattr__(self, "primitives", tuple((float(u), float(w)) for u, w in self.primitives))


@dataclass
class PlannerConfig:
    n_max: int = 10_000
    p_rand: float = 0.9
    p_new: float = 0.9
    quantum: float = 0.1
    angle_bins: int = 8
    bias: bool = True
    seed: int = 0
    tau: float | None = None  # overrides the problem's time step
    member_cap: int | None = None  # None extends every member of a selected bucket
    stop_at_first: bool = False
    dedup: bool = True
    prune: bool = True
    log_densities: bool = False

    def __post_init__(self):
        for name in ("p_rand", "p_new"):
            v = getattr(self, name)
            if not 0.5 < v < 1.0:
                raise ValueError(f"{name} must lie in (0.5, 1), got {v}")
        if self.n_max < 0:
            raise ValueError("n_max must be nonnegative")
        if not self.quantum > 0 or self.angle_bins < 1:
            raise ValueError("bucket quantization must be positive")
        if self.member_cap is not None and self.member_cap < 1:
            raise ValueError("member_cap must be at least 1")


class PlanningProblem:
    """Everything the search needs, with the automaton and grid built once."""

    def __init__(self, workspace: Workspace, robots: Sequence[Robot], smap: SemanticMap,
                 mission: fm.Mission, tau: float = 0.1, resolution: float | None = None,
                 regions_disjoint: bool = True):
        if not tau > 0:
            raise ValueError("tau must be positive")
        self.workspace = workspace
        self.robots = tuple(robots)
        self.smap = smap
        self.mission = mission
        self.tau = float(tau)
        self.grid: OccupancyGrid = rasterize(workspace, resolution)
        self.regions_disjoint = regions_disjoint
        self.dfa = au.build_dfa(mission)
        self.universe = self.dfa.predicates
        self.sensors = tuple(r.sensor for r in self.robots)
        self.los = any(s.line_of_sight for s in self.sensors)
        self.mobile = any(d is not None for d in smap.dynamics)
        self._pruned = {}

    @property
    def n_robots(self) -> int:
        return len(self.robots)

    def initial_poses(self) -> np.ndarray:
        return np.array([r.pose for r in self.robots], dtype=float)

    def pruned(self, prune: bool = True) -> au.PrunedDFA:
        if prune not in self._pruned:
            if prune:
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always")
                    pdfa = au.prune(self.dfa, self.regions_disjoint)
                for w in caught:
                    warnings.warn(w.message, w.category, stacklevel=2)
                if not pdfa.feasible:
                    pdfa = au.unpruned(self.dfa)
            else:
                pdfa = au.unpruned(self.dfa)
            self._pruned[prune] = pdfa
        return self._pruned[prune]


class MapTrajectory:
    """Landmark means along time and covariance prediction for mobile landmarks."""

    def __init__(self, smap: SemanticMap):
        self.smap = smap
        self.t0 = smap.t
        self._means = [smap.means]

    def means(self, t: int) -> np.ndarray:
        k = t - self.t0
        while len(self._means) <= k:
            prev = self._means[-1]
            t_prev = self.t0 + len(self._means) - 1
            nxt = prev.copy()
            for i, dyn in enumerate(self.smap.dynamics):
                if dyn is not None:
                    nxt[i] = dyn.A @ prev[i] + dyn.B @ dyn.control(t_prev)
            self._means.append(nxt)
        return self._means[k]

    def predict_covs(self, covs: np.ndarray, t: int) -> np.ndarray:
        if all(d is None for d in self.smap.dynamics):
            return covs
        out = covs.copy()
        for i, dyn in enumerate(self.smap.dynamics):
            if dyn is not None:
                c = dyn.A @ covs[i] @ dyn.A.T + dyn.Q
                out[i] = 0.5 * (c + c.T)
        return out

    def snapshot(self, covs: np.ndarray, t: int) -> SemanticMap:
        return self.smap.replace(means=self.means(t), covs=covs, t=t)


@dataclass
class PlannerStats:
    iterations: int = 0
    extensions: int = 0
    n_nodes: int = 0
    n_buckets: int = 0
    rejections: Counter = field(default_factory=Counter)
    eps_min: float = math.inf
    zeta_min: float = math.inf
    fv_sum_err: float = 0.0
    fu_sum_err: float = 0.0
    first_solution_iteration: int | None = None
    best_cost_history: list = field(default_factory=list)
    density_log: list = field(default_factory=list)
    dfa_states: int = 0
    dfa_transitions: int = 0
    pruned_transitions: int = 0
    distance_fields: int = 0
    wall_time: float = 0.0
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations, "extensions": self.extensions,
            "nodes": self.n_nodes, "buckets": self.n_buckets,
            "rejections": dict(self.rejections),
            "eps_min": self.eps_min, "zeta_min": self.zeta_min,
            "fv_sum_err": self.fv_sum_err, "fu_sum_err": self.fu_sum_err,
            "first_solution_iteration": self.first_solution_iteration,
            "best_cost_history": self.best_cost_history,
            "dfa_states": self.dfa_states, "dfa_transitions": self.dfa_transitions,
            "pruned_transitions": self.pruned_transitions,
            "distance_fields": self.distance_fields, "wall_time": self.wall_time,
        }


@dataclass
class Plan:
    """Horizon ``H``, controls ``u_0..u_{H-1}`` and states ``0..H`` of the chosen branch."""

    controls: list  # H entries, each a tuple of (u, omega) per robot
    primitive_ids: list  # H entries, each a tuple of primitive indices
    poses: np.ndarray  # (H+1, N, 3)
    dfa_states: list  # H+1 automaton states
    means: np.ndarray  # (H+1, M, 2)
    covs: np.ndarray  # (H+1, M, 2, 2)
    cost: float
    t0: int = 0
    iterations: int = 0
    wall_time: float = 0.0
    stats: PlannerStats | None = None
    accepted_at_root: bool = False
    tree: Tree | None = None

    @property
    def H(self) -> int:
        return len(self.controls)

    def to_dict(self, landmark_ids: Sequence[str] = ()) -> dict:
        steps = []
        for k in range(self.H + 1):
            steps.append({
                "t": self.t0 + k,
                "poses": self.poses[k].tolist(),
                "q": int(self.dfa_states[k]),
                "control": [list(c) for c in self.controls[k]] if k < self.H else None,
                "primitives": list(self.primitive_ids[k]) if k < self.H else None,
                "landmarks": [
                    {"id": lid, "mean": self.means[k, i].tolist(),
                     "det_cov": float(np.linalg.det(self.covs[k, i]))}
                    for i, lid in enumerate(landmark_ids)
                ],
            })
        return {
            "schema": PLAN_SCHEMA, "H": self.H, "t0": self.t0, "cost": self.cost,
            "iterations": self.iterations, "wall_time": self.wall_time,
            "accepted_at_root": self.accepted_at_root, "steps": steps,
        }


@dataclass
class StartState:
    """Initial condition for (re)planning: poses, automaton state and map snapshot."""

    poses: np.ndarray
    q: int
    smap: SemanticMap


class Planner:
    def __init__(self, problem: PlanningProblem, config: PlannerConfig | None = None,
                 start: StartState | None = None):
        self.problem = problem
        self.config = config or PlannerConfig()
        self.tau = self.config.tau or problem.tau
        self.dfa = problem.dfa
        self.pdfa = problem.pruned(self.config.prune)
        if start is None:
            start = StartState(problem.initial_poses(), self.dfa.initial, problem.smap)
        self.start = start
        self.traj = MapTrajectory(start.smap)
        self.rng = np.random.default_rng(self.config.seed)
        self.tree = Tree()
        self.buckets = BucketIndex(self.config.quantum, self.config.angle_bins)
        self.guidance = Guidance(self.pdfa, problem.n_robots, problem.grid, problem.workspace,
                                 regions_disjoint=problem.regions_disjoint)
        self.stats = PlannerStats(dfa_states=self.dfa.n_states,
                                  dfa_transitions=len(self.dfa.transitions),
                                  pruned_transitions=len(self.dfa.transitions) - len(self.pdfa.kept))
        self.goals: list[int] = []
        self.best: int | None = None
        self._seen: dict = {}
        self._greedy_cache: dict[int, list] = {}
        self._dist_buckets: dict[float, list[int]] = {}
        self._prims = [np.array(r.primitives) for r in problem.robots]

    # -- bookkeeping ----------------------------------------------------------
    def _insert(self, node: TreeNode) -> int:
        nid = self.tree.add(node)
        k, created = self.buckets.add(node)
        if created and node.q != self.dfa.accepting:
            d = self.pdfa.to_accepting(node.q)
            if math.isfinite(d):
                self._dist_buckets.setdefault(d, []).append(k)
        if node.q == self.dfa.accepting:
            self.goals.append(nid)
            if self.best is None or node.cost < self.tree[self.best].cost:
                self.best = nid
                self.stats.best_cost_history.append((self.stats.iterations, node.cost))
                if self.stats.first_solution_iteration is None:
                    self.stats.first_solution_iteration = self.stats.iterations
        return nid

    def _k_min(self) -> list[int]:
        if not self._dist_buckets:
            return []
        return self._dist_buckets[min(self._dist_buckets)]

    def label_of(self, node: TreeNode) -> frozenset:
        if node.label is None:
            smap = self.traj.snapshot(node.covs, node.t)
            node.label = label(node.pose, smap, self.problem.universe, self.problem.workspace)
        return node.label

    def _dedup_key(self, pose, q, covs):
        return (q, np.round(pose, 9).tobytes(), np.round(covs, 12).tobytes())

    # -- one extension --------------------------------------------------------
    def propagate(self, node: TreeNode, prim_ids: tuple[int, ...]):
        """Child state for ``prim_ids``; returns ``(pose, covs, q, reason)``."""
        q_new = self.dfa.step(node.q, self.label_of(node))
        if q_new is None:
            return None, None, None, "no-dfa-transition"
        controls = np.array([self._prims[j][k] for j, k in enumerate(prim_ids)])
        pose, ok = dynamics_step(node.pose, controls, self.tau, self.problem.workspace)
        if not ok:
            return None, None, None, "collision"
        prior = self.traj.predict_covs(node.covs, node.t)
        covs = riccati_update_map(
            prior, pose, self.traj.means(node.t + 1), self.problem.sensors,
            self.problem.workspace if self.problem.los else None, self.stats.diagnostics,
        )
        return pose, covs, q_new, None

    def extend(self, node: TreeNode, prim_ids: tuple[int, ...]) -> int | str:
        """Add the child reached by ``prim_ids``; returns its id or a rejection reason."""
        self.stats.extensions += 1
        pose, covs, q_new, reason = self.propagate(node, prim_ids)
        if reason is not None:
            self.stats.rejections[reason] += 1
            return reason
        cost = node.cost + step_cost(node.pose, pose)
        if self.config.dedup:
            key = self._dedup_key(pose, q_new, covs)
            prev = self._seen.get(key)
            if prev is not None and self.tree[prev].cost <= cost:
                self.stats.rejections["duplicate"] += 1
                return "duplicate"
        child = TreeNode(-1, pose, covs, q_new, cost, node.id, node.t + 1, prim_ids)
        nid = self._insert(child)
        if self.config.dedup:
            self._seen[key] = nid
        return nid

    # -- control sampling -----------------------------------------------------
    def sample_control(self, node: TreeNode) -> tuple[tuple[int, ...], float]:
        """Primitive index per robot and the joint density's minimum."""
        n_robots = self.problem.n_robots
        bests: list[int | None] = [None] * n_robots
        if self.config.bias:
            q_next = self.dfa.step(node.q, self.label_of(node))
            if q_next is not None:
                bests = self._greedy(node, q_next)
        ids = []
        zeta = 1.0
        for j in range(n_robots):
            n = len(self._prims[j])
            k, zmin = sample_primitive(self.rng, n, bests[j], self.config.p_new)
            ids.append(k)
            zeta *= zmin
            if self.config.log_densities:
                probs = control_probabilities(n, bests[j], self.config.p_new)
                self.stats.fu_sum_err = max(self.stats.fu_sum_err, abs(math.fsum(probs) - 1.0))
        self.stats.zeta_min = min(self.stats.zeta_min, zeta)
        return tuple(ids), zeta

    def _greedy(self, node: TreeNode, q_next: int) -> list[int | None]:
        # a node's greedy choice is fixed, and bucket members are sampled many times
        cached = self._greedy_cache.get(node.id)
        if cached is None:
            cached = self._greedy_cache[node.id] = self._greedy_uncached(node, q_next)
        return cached

    def _greedy_uncached(self, node: TreeNode, q_next: int) -> list[int | None]:
        assignment = self.guidance.assign(q_next)
        out: list[int | None] = [None] * self.problem.n_robots
        if assignment.q_min is None:
            return out
        means = self.traj.means(node.t + 1)
        index = self.start.smap.index
        for j, target in enumerate(assignment.targets):
            if target is None:
                continue
            avoid = frozenset()
            for place in assignment.avoid[j]:
                avoid |= self.guidance.place_cells(place, means, node.covs, index)
            df = self.guidance.field(target, avoid, means, index)
            if df is None:
                continue
            best, best_pose = self.guidance.best_primitive(
                node.pose[j], self.problem.robots[j].primitives, self.tau, df)
            if best is None:
                continue
            if target[0] == "landmark":
                # within sensing range the robot explores uniformly
                d = math.hypot(*(best_pose[:2] - means[index(target[1])]))
                if d < self.problem.sensors[j].range:
                    continue
            out[j] = best
        return out

    # -- main loop ------------------------------------------------------------
    def _root(self) -> TreeNode:
        pose = np.array(self.start.poses, dtype=float).reshape(-1, 3).copy()
        pose[:, 2] = wrap_angle(pose[:, 2])
        root = TreeNode(-1, pose, self.start.smap.covs.copy(), self.start.q, 0.0, None,
                        self.start.smap.t, None)
        return root

    def run(self) -> Plan:
        t_start = time.perf_counter()
        cfg = self.config
        root = self._root()
        bad = self.problem.workspace.collides(root.pose[:, :2])
        if bad.any():
            raise PlanningError(f"initial pose of robot(s) {list(np.nonzero(bad)[0] + 1)} is in collision")
        rid = self._insert(root)
        first = self.dfa.step(root.q, self.label_of(root))
        if root.q == self.dfa.accepting or first == self.dfa.accepting:
            self.stats.wall_time = time.perf_counter() - t_start
            return self._extract(rid, accepted_at_root=True)
        if first is None:
            raise PlanningError("the initial state already violates the mission")
        for it in range(1, cfg.n_max + 1):
            self.stats.iterations = it
            n_b = len(self.buckets)
            k_min = self._k_min()
            k, eps, total = sample_bucket(self.rng, n_b, k_min, cfg.p_rand, cfg.bias)
            self.stats.eps_min = min(self.stats.eps_min, eps)
            self.stats.fv_sum_err = max(self.stats.fv_sum_err, abs(total - 1.0))
            if cfg.log_densities:
                self.stats.density_log.append((it, n_b, len(k_min), k, eps, total))
            members = list(self.buckets.members[k])
            if cfg.member_cap is not None and len(members) > cfg.member_cap:
                members = self._subsample(members)
            for nid in members:
                node = self.tree[nid]
                prim_ids, _ = self.sample_control(node)
                self.extend(node, prim_ids)
            if cfg.stop_at_first and self.goals:
                break
        self.stats.n_nodes = len(self.tree)
        self.stats.n_buckets = len(self.buckets)
        self.stats.distance_fields = self.guidance.n_fields
        self.stats.wall_time = time.perf_counter() - t_start
        if self.best is None:
            raise NotFound(f"no plan after {self.stats.iterations} iterations", self.stats)
        return self._extract(self.best)

    def _subsample(self, members: list[int]) -> list[int]:
        cheapest = min(members, key=lambda m: (self.tree[m].cost, m))
        rest = [m for m in members if m != cheapest]
        pick = self.rng.choice(len(rest), size=self.config.member_cap - 1, replace=False)
        return [cheapest] + [rest[i] for i in sorted(pick)]

    def _extract(self, nid: int, accepted_at_root: bool = False) -> Plan:
        path = self.tree.path(nid)
        nodes = [self.tree[k] for k in path]
        controls = []
        prim_ids = []
        for n in nodes[1:]:
            prim_ids.append(n.control)
            controls.append(tuple(tuple(self._prims[j][k]) for j, k in enumerate(n.control)))
        self.stats.n_nodes = len(self.tree)
        self.stats.n_buckets = len(self.buckets)
        return Plan(
            controls=controls,
            primitive_ids=prim_ids,
            poses=np.array([n.pose for n in nodes]),
            dfa_states=[n.q for n in nodes],
            means=np.array([self.traj.means(n.t) for n in nodes]),
            covs=np.array([n.covs for n in nodes]),
            cost=nodes[-1].cost,
            t0=self.start.smap.t,
            iterations=self.stats.iterations,
            wall_time=self.stats.wall_time,
            stats=self.stats,
            accepted_at_root=accepted_at_root,
            tree=self.tree,
        )


def plan(problem: PlanningProblem, config: PlannerConfig | None = None,
         start: StartState | None = None) -> Plan:
    """Grow the tree until the budget is spent; return the cheapest accepting branch.

    Raises :class:`NotFound` when no node reached the accepting state.
    """
    planner = Planner(problem, config, start)
    result = planner.run()
    logger.info("plan: H=%d cost=%.3f after %d iterations (%d nodes)", result.H, result.cost,
                result.iterations, planner.stats.n_nodes)
    return result


def replay(plan_: Plan, problem: PlanningProblem, config: PlannerConfig | None = None,
           start: StartState | None = None) -> list[str]:
    """Re-simulate a plan and list every constraint it violates (empty when valid)."""
    planner = Planner(problem, config, start)
    node = planner._root()
    errors = []
    if not np.array_equal(node.pose, plan_.poses[0]):
        errors.append("initial pose differs")
    if node.q != plan_.dfa_states[0]:
        errors.append("initial automaton state differs")
    if plan_.accepted_at_root:
        if planner.dfa.step(node.q, planner.label_of(node)) != planner.dfa.accepting:
            errors.append("root label does not reach acceptance")
        return errors
    node.id = 0
    for k, prim_ids in enumerate(plan_.primitive_ids):
        pose, covs, q, reason = planner.propagate(node, prim_ids)
        if reason is not None:
            errors.append(f"step {k}: {reason}")
            return errors
        if not np.array_equal(pose, plan_.poses[k + 1]):
            errors.append(f"step {k}: pose mismatch")
        if not np.array_equal(covs, plan_.covs[k + 1]):
            errors.append(f"step {k}: covariance mismatch")
        if not np.array_equal(planner.traj.means(node.t + 1), plan_.means[k + 1]):
            errors.append(f"step {k}: mean mismatch")
        if q != plan_.dfa_states[k + 1]:
            errors.append(f"step {k}: automaton state mismatch")
        node = TreeNode(0, pose, covs, q, 0.0, None, node.t + 1, prim_ids)
    if node.q != planner.dfa.accepting:
        errors.append("plan does not end in the accepting state")
    return errors


def validate(plan_: Plan, problem: PlanningProblem, config: PlannerConfig | None = None,
             start: StartState | None = None) -> None:
    errors = replay(plan_, problem, config, start)
    if errors:
        raise PlanValidationError("; ".join(errors))


def plan_from_dict(doc: dict, problem: PlanningProblem, config: PlannerConfig | None = None,
                   tol: float = 1e-9) -> Plan:
    """Rebuild a :class:`Plan` from its document by re-simulating the stored primitives.

    Raises :class:`PlanValidationError` when the document does not match
    the problem (different start, infeasible step or drifted states).
    """
    if doc.get("schema") != PLAN_SCHEMA:
        raise PlanValidationError(f"not a plan document (schema {doc.get('schema')!r})")
    planner = Planner(problem, config)
    steps = doc["steps"]
    node = planner._root()
    node.id = 0
    if np.abs(node.pose - np.asarray(steps[0]["poses"])).max() > tol:
        raise PlanValidationError("plan starts from a different pose than the scenario")
    nodes = [node]
    for k, step in enumerate(steps[:-1]):
        prim_ids = tuple(int(i) for i in step["primitives"])
        pose, covs, q, reason = planner.propagate(node, prim_ids)
        if reason is not None:
            raise PlanValidationError(f"step {k}: {reason}")
        if np.abs(pose - np.asarray(steps[k + 1]["poses"])).max() > tol or q != steps[k + 1]["q"]:
            raise PlanValidationError(f"step {k}: state does not match the scenario")
        node = TreeNode(k + 1, pose, covs, q, node.cost + step_cost(node.pose, pose), k,
                        node.t + 1, prim_ids)
        nodes.append(node)
    accepted_at_root = bool(doc.get("accepted_at_root", False))
    if not accepted_at_root and node.q != planner.dfa.accepting:
        raise PlanValidationError("plan does not reach the accepting state")
    return Plan(
        controls=[tuple(tuple(planner._prims[j][i]) for j, i in enumerate(n.control)) for n in nodes[1:]],
        primitive_ids=[n.control for n in nodes[1:]],
        poses=np.array([n.pose for n in nodes]),
        dfa_states=[n.q for n in nodes],
        means=np.array([planner.traj.means(n.t) for n in nodes]),
        covs=np.array([n.covs for n in nodes]),
        cost=nodes[-1].cost,
        t0=planner.start.smap.t,
        iterations=int(doc.get("iterations", 0)),
        wall_time=float(doc.get("wall_time", 0.0)),
        accepted_at_root=accepted_at_root,
    )
