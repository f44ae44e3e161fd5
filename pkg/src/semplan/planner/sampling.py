"""Sampling densities over buckets and controls, and automaton-guided targets."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..geometry import OccupancyGrid, Workspace, confidence_ellipse_cells, distance_field
from ..ltl import automaton as au
from ..ltl import formula as fm
from .dynamics import dynamics_step_each

VIRTUAL_OBSTACLE_CONFIDENCE = 0.9


# -- node-set density -------------------------------------------------------

def bucket_probabilities(n_buckets: int, k_min: Sequence[int], p_rand: float,
                         biased: bool = True) -> np.ndarray:
    """Dense probability vector over bucket indices."""
    if n_buckets < 1:
        raise ValueError("need at least one bucket")
    k_min = sorted(set(k_min))
    if not biased or not k_min or len(k_min) == n_buckets:
        return np.full(n_buckets, 1.0 / n_buckets)
    probs = np.full(n_buckets, (1.0 - p_rand) / (n_buckets - len(k_min)))
    probs[k_min] = p_rand / len(k_min)
    return probs


def sample_bucket(rng: np.random.Generator, n_buckets: int, k_min: Sequence[int],
                  p_rand: float, biased: bool = True) -> tuple[int, float, float]:
    """Draw a bucket index; also returns the density's minimum and its total mass.

    ``k_min`` lists the buckets whose automaton state is closest to
    acceptance. Drawing first between ``k_min`` and the rest and then
    uniformly within the group realizes the density of
    :func:`bucket_probabilities` without building it.
    """
    n_min = len(k_min)
    if not biased or n_min == 0 or n_min == n_buckets:
        p = 1.0 / n_buckets
        return int(rng.integers(n_buckets)), p, p * n_buckets
    a = p_rand / n_min
    b = (1.0 - p_rand) / (n_buckets - n_min)
    total = a * n_min + b * (n_buckets - n_min)
    if rng.random() < p_rand:
        return int(k_min[int(rng.integers(n_min))]), min(a, b), total
    # uniform over the complement, by rank among the non-minimal indices
    rank = int(rng.integers(n_buckets - n_min))
    for k in sorted(k_min):
        if k <= rank:
            rank += 1
        else:
            break
    return rank, min(a, b), total


# -- control density --------------------------------------------------------

def control_probabilities(n_prims: int, best: int | None, p_new: float) -> np.ndarray:
    """Per-robot primitive density: ``best`` gets ``p_new``, the rest share the remainder."""
    if best is None or n_prims == 1:
        return np.full(n_prims, 1.0 / n_prims)
    probs = np.full(n_prims, (1.0 - p_new) / (n_prims - 1))
    probs[best] = p_new
    return probs


def sample_primitive(rng: np.random.Generator, n_prims: int, best: int | None,
                     p_new: float) -> tuple[int, float]:
    """Draw one primitive index; returns it with the density's minimum."""
    if best is None or n_prims == 1:
        return int(rng.integers(n_prims)), 1.0 / n_prims
    if rng.random() < p_new:
        return best, min(p_new, (1.0 - p_new) / (n_prims - 1))
    k = int(rng.integers(n_prims - 1))
    return (k + 1 if k >= best else k), min(p_new, (1.0 - p_new) / (n_prims - 1))


# -- automaton-guided targets -----------------------------------------------

@dataclass(frozen=True)
class Assignment:
    q_next: int
    q_min: int | None
    symbol: frozenset  # predicates assumed true
    targets: tuple  # per robot: None | ("landmark", id) | ("region", name)
    avoid: tuple  # per robot: tuple of places to treat as obstacles


def _cube_key(term):
    pos = tuple(sorted(lit.pred.id for lit in term if lit.positive))
    return (len(pos), pos)


class Guidance:
    """Chooses per-robot targets from the automaton and caches distance fields.

    Caches live as long as one planning call.
    """

    def __init__(self, pruned: au.PrunedDFA, n_robots: int, grid: OccupancyGrid,
                 workspace: Workspace, epsilon: float = VIRTUAL_OBSTACLE_CONFIDENCE,
                 regions_disjoint: bool = True):
        self.pruned = pruned
        self.dfa = pruned.dfa
        self.n_robots = n_robots
        self.grid = grid
        self.workspace = workspace
        self.epsilon = epsilon
        self.regions_disjoint = regions_disjoint
        self._assign_cache: dict[int, Assignment] = {}
        self._fields: dict = {}
        self._region_cells: dict[str, frozenset] = {}
        self._loc_preds: dict[int, list] = {}
        for p in self.dfa.predicates:
            loc = fm.location_of(p)
            if loc is not None:
                self._loc_preds.setdefault(loc[0], []).append(p)

    # automaton side: depends only on the next automaton state
    def assign(self, q_next: int) -> Assignment:
        cached = self._assign_cache.get(q_next)
        if cached is not None:
            return cached
        none = (None,) * self.n_robots
        empty = ((),) * self.n_robots
        reach = sorted({t.dst for t in self.pruned.out[q_next]})
        if not reach:
            out = Assignment(q_next, None, frozenset(), none, empty)
        else:
            dist = self.pruned.dist
            acc = self.dfa.accepting
            q_min = min(reach, key=lambda q: (dist[q][acc], q))
            guard = next(t.guard for t in self.pruned.out[q_next] if t.dst == q_min)
            cubes = [t for t in guard if au.term_feasible(t, self.regions_disjoint)] or list(guard)
            best = min(cubes, key=_cube_key)
            symbol = frozenset(lit.pred for lit in best if lit.positive)
            ids = {p.id for p in symbol}
            targets = []
            avoid = []
            for j in range(1, self.n_robots + 1):
                target = None
                for p in sorted(symbol, key=lambda p: p.id):
                    loc = fm.location_of(p)
                    if loc is not None and loc[0] == j:
                        target = loc[1]
                        break
                targets.append(target)
                places = []
                for p in self._loc_preds.get(j, []):
                    if p.id in ids:
                        continue
                    place = fm.location_of(p)[1]
                    if place == target or place in places:
                        continue
                    if not au.guard_holds(guard, ids | {p.id}):
                        places.append(place)
                avoid.append(tuple(places))
            out = Assignment(q_next, q_min, symbol, tuple(targets), tuple(avoid))
        self._assign_cache[q_next] = out
        return out

    # geometry side
    def region_cells(self, name: str) -> frozenset:
        cells = self._region_cells.get(name)
        if cells is None:
            cells = self.grid.cells_in_polygon(self.workspace.regions[name])
            self._region_cells[name] = cells
        return cells

    def place_cells(self, place, smap_means, smap_covs, index) -> frozenset:
        kind, name = place
        if kind == "region":
            return self.region_cells(name)
        i = index(name)
        return confidence_ellipse_cells(smap_means[i], smap_covs[i], self.epsilon, self.grid)

    def field(self, target, avoid_cells: frozenset, means, index):
        kind, name = target
        if kind == "region":
            goals = tuple(sorted(c for c in self.region_cells(name) if not self.grid.occupied[c]))
        else:
            goals = (self.grid.cell_of(means[index(name)]),)
        goals = tuple(g for g in goals if g not in avoid_cells and not self.grid.occupied[g])
        if not goals:
            return None
        key = (goals, avoid_cells)
        df = self._fields.get(key)
        if df is None:
            df = distance_field(self.grid, list(goals), avoid_cells)
            self._fields[key] = df
        return df

    @property
    def n_fields(self) -> int:
        return len(self._fields)

    def best_primitive(self, pose, primitives, tau: float, df) -> tuple[int | None, np.ndarray | None]:
        """Primitive minimizing the distance-field value after one step (ties: lowest index)."""
        prims = np.asarray(primitives, dtype=float)
        starts = np.repeat(np.asarray(pose, dtype=float)[None, :], len(prims), axis=0)
        nxt, ok = dynamics_step_each(starts, prims, tau, self.workspace)
        best = None
        best_val = math.inf
        for k in np.flatnonzero(ok):
            val = df.at(nxt[k])
            if val < best_val:
                best, best_val = int(k), val
        return best, (None if best is None else nxt[best])
