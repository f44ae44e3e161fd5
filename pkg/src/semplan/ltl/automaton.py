"""DFA construction by formula progression, pruning and hop distances."""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import formula as fm

logger = logging.getLogger(__name__)

MAX_MINTERMS = 4096


class StateExplosionError(RuntimeError):
    pass


class PruningWarning(UserWarning):
    pass


Guard = fm.Formula  # Boolean DNF over literals


def guard_holds(guard: Guard, valuation) -> bool:
    for term in guard:
        if all((lit.pred.id in valuation) == lit.positive for lit in term):
            return True
    return False


@dataclass(frozen=True)
class Transition:
    src: int
    guard: Guard
    dst: int

    def enabled(self, valuation) -> bool:
        return guard_holds(self.guard, valuation)


@dataclass(eq=False)
class DFA:
    """Automaton with symbolic guards; a missing enabled guard means violation.

    State ``initial`` is the mission core itself; ``accepting`` is the
    appended terminal state, which has no outgoing transitions.
    """

    states: list[fm.Formula]
    transitions: list[Transition]
    initial: int
    accepting: int
    predicates: list = field(default_factory=list)

    def __post_init__(self):
        self.out: list[list[Transition]] = [[] for _ in self.states]
        for tr in self.transitions:
            self.out[tr.src].append(tr)
        self._by_id = {p.id: p for p in self.predicates}

    @property
    def n_states(self) -> int:
        return len(self.states)

    def name(self, q: int) -> str:
        return "ACCEPT" if q == self.accepting else fm.to_str(self.states[q])

    def step(self, q: int, valuation) -> int | None:
        for tr in self.out[q]:
            if tr.enabled(valuation):
                return tr.dst
        return None

    def run(self, word: Iterable) -> list[int] | None:
        q = self.initial
        states = [q]
        for symbol in word:
            if q == self.accepting:
                break
            q = self.step(q, symbol)
            if q is None:
                return None
            states.append(q)
        return states

    def accepts(self, word: Iterable) -> bool:
        """True iff the run reaches the accepting state; it absorbs the rest of the word."""
        run = self.run(word)
        return run is not None and run[-1] == self.accepting

    def to_dot(self) -> str:
        lines = ["digraph dfa {", "  rankdir=LR;", '  init [shape=point];']
        for q in range(self.n_states):
            shape = "doublecircle" if q == self.accepting else "circle"
            label = self.name(q).replace('"', '\\"')
            lines.append(f'  q{q} [shape={shape}, label="{q}: {label}"];')
        lines.append(f"  init -> q{self.initial};")
        for tr in self.transitions:
            label = fm.to_str(tr.guard).replace('"', '\\"')
            lines.append(f'  q{tr.src} -> q{tr.dst} [label="{label}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _merge_terms(terms: list[dict]) -> list[dict]:
    """Merge cubes that differ only in the polarity of one literal."""
    changed = True
    terms = [dict(t) for t in terms]
    while changed:
        changed = False
        seen: dict = {}
        for idx, t in enumerate(terms):
            for p, v in t.items():
                rest = frozenset((q, w) for q, w in t.items() if q != p)
                key = (rest, p)
                other = seen.get((key, not v))
                if other is not None and other != idx:
                    merged = dict(rest)
                    terms = [x for k, x in enumerate(terms) if k not in (idx, other)]
                    terms.append(merged)
                    changed = True
                    break
                seen[(key, v)] = idx
            if changed:
                break
    return terms


def _expand(expr: fm.Formula, path: dict, out: dict, order: dict) -> None:
    """Shannon-expand ``expr`` on current literals; leaves map successor -> cubes."""
    if expr == fm.FALSE:
        return
    lits = {i.pred for t in expr for i in t if isinstance(i, fm.Lit)}
    if not lits:
        succ = fm.successor(expr)
        if succ != fm.FALSE:
            out.setdefault(succ, []).append(dict(path))
        return
    pred = min(lits, key=lambda p: order[p.id])
    for value in (True, False):
        path[pred] = value
        _expand(fm.cofactor(expr, pred, value), path, out, order)
        del path[pred]


def _cubes_to_guard(cubes: list[dict]) -> Guard:
    return fm.disj(*(
        frozenset({frozenset(fm.Lit(p, v) for p, v in c.items())}) for c in _merge_terms(cubes)
    ))


def build_dfa(mission: fm.Mission, max_states: int = 10_000) -> DFA:
    """Reachable progressions of the core, with invariants folded into every guard.

    The core state ``true`` moves to the fresh accepting state when the
    terminal clause (and every invariant) holds, and loops otherwise.
    """
    preds = mission.predicates()
    order = {p.id: k for k, p in enumerate(preds)}
    inv = fm.conj(*mission.invariants) if mission.invariants else fm.TRUE
    # a cube without any Nxt obligation leads back to ``true``
    accept_step = fm.disj(
        fm.conj(mission.terminal, frozenset({frozenset({fm.Nxt(fm.ACCEPT)})})),
        fm.negate_boolean(mission.terminal),
    )

    index: dict = {}
    states: list[fm.Formula] = []
    raw: list[tuple[int, dict]] = []
    queue: deque = deque()

    def intern(f: fm.Formula) -> int:
        if f not in index:
            if len(states) >= max_states:
                raise StateExplosionError(
                    f"automaton exceeds {max_states} states; simplify the mission or raise the cap"
                )
            index[f] = len(states)
            states.append(f)
            queue.append(f)
        return index[f]

    intern(mission.core)
    while queue:
        f = queue.popleft()
        src = index[f]
        if f == fm.ACCEPT:
            continue
        step = accept_step if f == fm.TRUE else fm.symbolic_progress(f)
        leaves: dict = {}
        _expand(fm.conj(step, inv), {}, leaves, order)
        for succ in sorted(leaves, key=fm.to_str):
            raw.append((src, succ, leaves[succ]))
            intern(succ)

    # the accepting state goes last
    if fm.ACCEPT not in index:
        index[fm.ACCEPT] = len(states)
        states.append(fm.ACCEPT)
    acc = index[fm.ACCEPT]
    perm = [q for q in range(len(states)) if q != acc] + [acc]
    new_id = {old: new for new, old in enumerate(perm)}
    transitions = [
        Transition(new_id[src], _cubes_to_guard(cubes), new_id[index[succ]])
        for src, succ, cubes in raw
    ]
    transitions.sort(key=lambda t: (t.src, t.dst))
    dfa = DFA(
        states=[states[q] for q in perm],
        transitions=transitions,
        initial=new_id[0],
        accepting=len(states) - 1,
        predicates=preds,
    )
    logger.debug("built DFA with %d states, %d transitions", dfa.n_states, len(transitions))
    return dfa


def accepts(dfa: DFA, word: Iterable) -> bool:
    return dfa.accepts(word)


def check_deterministic(dfa: DFA, max_atoms: int = 12) -> bool:
    """Brute-force check that no valuation enables two outgoing guards."""
    for q in range(dfa.n_states):
        guards = [t.guard for t in dfa.out[q]]
        atoms = sorted({lit.pred.id for g in guards for t in g for lit in t})
        if len(atoms) > max_atoms:
            raise ValueError(f"state {q} has {len(atoms)} atoms, above {max_atoms}")
        for bits in itertools.product((False, True), repeat=len(atoms)):
            val = {a for a, b in zip(atoms, bits) if b}
            if sum(guard_holds(g, val) for g in guards) > 1:
                return False
    return True


# -- pruning ----------------------------------------------------------------

def term_feasible(term: Iterable[fm.Lit], regions_disjoint: bool = True) -> bool:
    """False if some robot must be at two different locations at once."""
    where: dict[int, set] = {}
    for lit in term:
        if not lit.positive:
            continue
        loc = fm.location_of(lit.pred)
        if loc is None:
            continue
        robot, place = loc
        if place[0] == "region" and not regions_disjoint:
            continue
        where.setdefault(robot, set()).add(place)
    return all(len(places) <= 1 for places in where.values())


def guard_feasible(guard: Guard, regions_disjoint: bool = True) -> bool:
    if len(guard) > MAX_MINTERMS:
        return True
    return any(term_feasible(t, regions_disjoint) for t in guard)


def _bfs_all_pairs(n: int, edges: Sequence[tuple[int, int]]) -> list[list[float]]:
    adj = [[] for _ in range(n)]
    for a, b in edges:
        adj[a].append(b)
    table = []
    for s in range(n):
        dist = [math.inf] * n
        dist[s] = 0
        dq = deque([s])
        while dq:
            u = dq.popleft()
            for v in adj[u]:
                if dist[v] == math.inf:
                    dist[v] = dist[u] + 1
                    dq.append(v)
        table.append(dist)
    return table


@dataclass(eq=False)
class PrunedDFA:
    dfa: DFA
    kept: list[Transition]
    dist: list[list[float]]
    feasible: bool = True

    def __post_init__(self):
        self.out: list[list[Transition]] = [[] for _ in range(self.dfa.n_states)]
        for tr in self.kept:
            self.out[tr.src].append(tr)

    @property
    def removed(self) -> list[Transition]:
        kept = set(map(id, self.kept))
        return [t for t in self.dfa.transitions if id(t) not in kept]

    def distance(self, q: int, q2: int) -> float:
        return self.dist[q][q2]

    def to_accepting(self, q: int) -> float:
        return self.dist[q][self.dfa.accepting]


def prune(dfa: DFA, regions_disjoint: bool = True, landmark_count: int | None = None) -> PrunedDFA:
    """Drop transitions that force a robot into two places; recompute hop distances.

    ``landmark_count`` is informational only: the landmark rule does not
    depend on it. When pruning disconnects the initial state from the
    accepting one, a :class:`PruningWarning` is emitted and ``feasible`` is
    False; callers are expected to fall back to :func:`unpruned`.
    """
    kept = [t for t in dfa.transitions if guard_feasible(t.guard, regions_disjoint)]
    dist = _bfs_all_pairs(dfa.n_states, [(t.src, t.dst) for t in kept])
    pruned = PrunedDFA(dfa, kept, dist)
    if math.isinf(dist[dfa.initial][dfa.accepting]):
        pruned.feasible = False
        warnings.warn(
            "pruned automaton has no path from the initial to the accepting state; "
            "the mission may be infeasible or pruning too conservative",
            PruningWarning,
            stacklevel=2,
        )
    return pruned


def unpruned(dfa: DFA) -> PrunedDFA:
    """Distance table over the full automaton, used as a fallback."""
    dist = _bfs_all_pairs(dfa.n_states, [(t.src, t.dst) for t in dfa.transitions])
    return PrunedDFA(dfa, list(dfa.transitions), dist,
                     feasible=not math.isinf(dist[dfa.initial][dfa.accepting]))


def dfa_distance(pruned: PrunedDFA, q: int, q2: int) -> float:
    return pruned.distance(q, q2)


def enabling_symbol(guard: Guard) -> frozenset | None:
    """Positive literals of the cheapest cube: fewest positives, then lexicographic ids."""
    best = None
    for term in guard:
        pos = tuple(sorted(lit.pred.id for lit in term if lit.positive))
        key = (len(pos), pos)
        if best is None or key < best[0]:
            best = (key, term)
    if best is None:
        return None
    return frozenset(lit.pred for lit in best[1] if lit.positive)
