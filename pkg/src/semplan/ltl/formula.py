"""Co-safe LTL formulas over sensor-based predicates.

Formulas are kept in a canonical disjunctive normal form: a ``frozenset`` of
terms, each term a ``frozenset`` of *items*. An item is a literal or a
temporal obligation (``Next``, ``Until``, ``Eventually``) whose operands are
themselves canonical formulas. Canonicalization applies flattening,
idempotence, complementary-literal elimination and absorption, so two
formulas built from the same obligations compare equal and hash alike. The
DFA construction relies on this to intern automaton states.

``TRUE`` is the formula with one empty term and ``FALSE`` the empty formula.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Union


def _num(x: float) -> str:
    return f"{x:g}"


@dataclass(frozen=True, order=True)
class Prop:
    """Abstract proposition, handy for automata tests."""

    name: str

    @property
    def id(self) -> str:
        return self.name

    robot = None


@dataclass(frozen=True, order=True)
class Region:
    robot: int
    region: str

    @property
    def id(self) -> str:
        return f"in({self.robot},{self.region})"

    @property
    def location(self):
        return ("region", self.region)


@dataclass(frozen=True, order=True)
class NearLandmark:
    robot: int
    landmark: str
    r: float
    delta: float

    @property
    def id(self) -> str:
        return f"near({self.robot},{self.landmark},{_num(self.r)},{_num(self.delta)})"

    @property
    def location(self):
        return ("landmark", self.landmark)


@dataclass(frozen=True, order=True)
class UncertaintyBelow:
    landmark: str
    delta: float

    @property
    def id(self) -> str:
        return f"unc({self.landmark},{_num(self.delta)})"

    robot = None


@dataclass(frozen=True, order=True)
class NearLandmarkClass:
    robot: int
    landmark: str
    r: float
    delta: float
    cls: str

    @property
    def id(self) -> str:
        return (
            f"nearc({self.robot},{self.landmark},{_num(self.r)},{_num(self.delta)},{self.cls})"
        )

    @property
    def location(self):
        return ("landmark", self.landmark)


Predicate = Union[Prop, Region, NearLandmark, UncertaintyBelow, NearLandmarkClass]


def location_of(pred) -> tuple[int, tuple[str, str]] | None:
    """``(robot, location)`` for predicates that pin a robot somewhere, else None."""
    if isinstance(pred, (Region, NearLandmark, NearLandmarkClass)):
        return pred.robot, pred.location
    return None


# -- items ------------------------------------------------------------------

@dataclass(frozen=True)
class Lit:
    pred: Predicate
    positive: bool = True

    def key(self) -> str:
        return self.pred.id if self.positive else "!" + self.pred.id


@dataclass(frozen=True)
class Next:
    arg: frozenset

    def key(self) -> str:
        return f"X({to_str(self.arg)})"


@dataclass(frozen=True)
class Until:
    left: frozenset
    right: frozenset

    def key(self) -> str:
        return f"({to_str(self.left)}) U ({to_str(self.right)})"


@dataclass(frozen=True)
class Eventually:
    arg: frozenset

    def key(self) -> str:
        return f"F({to_str(self.arg)})"


@dataclass(frozen=True)
class Nxt:
    """Obligation carried to the next step during symbolic progression."""

    arg: frozenset

    def key(self) -> str:
        return f"@next({to_str(self.arg)})"


@dataclass(frozen=True)
class Accept:
    """Marker for the terminal accepting automaton state."""

    def key(self) -> str:
        return "ACCEPT"


Formula = frozenset
TRUE: Formula = frozenset({frozenset()})
FALSE: Formula = frozenset()


def to_str(f: Formula) -> str:
    if f == TRUE:
        return "true"
    if f == FALSE:
        return "false"
    terms = sorted(" & ".join(sorted(i.key() for i in t)) for t in f)
    if len(terms) == 1:
        return terms[0]
    return " | ".join(f"({t})" if " & " in t else t for t in terms)


def _consistent(term: frozenset) -> bool:
    pos = set()
    neg = set()
    for item in term:
        if isinstance(item, Lit):
            (pos if item.positive else neg).add(item.pred)
    return pos.isdisjoint(neg)


def _absorb(terms: Iterable[frozenset]) -> Formula:
    uniq = sorted(set(terms), key=len)
    kept: list[frozenset] = []
    for t in uniq:
        if not any(k <= t for k in kept):
            kept.append(t)
    return frozenset(kept)


def disj(*fs: Formula) -> Formula:
    return _absorb(t for f in fs for t in f)


def conj(*fs: Formula) -> Formula:
    acc: Formula = TRUE
    for f in fs:
        if f == TRUE:
            continue
        if not f or not acc:
            return FALSE
        acc = _absorb(t for a in acc for b in f if _consistent(t := a | b))
    return acc


def atom(pred) -> Formula:
    return frozenset({frozenset({Lit(pred, True)})})


def neg_atom(pred) -> Formula:
    return frozenset({frozenset({Lit(pred, False)})})


def _item(item) -> Formula:
    return frozenset({frozenset({item})})


def next_(f: Formula) -> Formula:
    return FALSE if f == FALSE else _item(Next(f))


def until(left: Formula, right: Formula) -> Formula:
    if right == FALSE:
        return FALSE
    if left == FALSE:
        return right
    if left == TRUE:
        return eventually(right)
    return _item(Until(left, right))


def eventually(f: Formula) -> Formula:
    if f == FALSE:
        return FALSE
    if len(f) == 1:
        (term,) = f
        if len(term) == 1 and isinstance(next(iter(term)), Eventually):
            return f
    return _item(Eventually(f))


def is_boolean(f: Formula) -> bool:
    return all(isinstance(i, Lit) for t in f for i in t)


def negate_boolean(f: Formula) -> Formula:
    """Negation of a pure Boolean formula, re-normalized to DNF."""
    if not is_boolean(f):
        raise ValueError("only Boolean formulas can be negated")
    return conj(*(disj(*(_item(Lit(i.pred, not i.positive)) for i in t)) for t in f))


def predicates(f: Formula) -> set:
    """All predicates occurring anywhere in ``f``."""
    out = set()
    stack = [f]
    while stack:
        g = stack.pop()
        for t in g:
            for i in t:
                if isinstance(i, Lit):
                    out.add(i.pred)
                elif isinstance(i, (Next, Eventually, Nxt)):
                    stack.append(i.arg)
                elif isinstance(i, Until):
                    stack.extend((i.left, i.right))
    return out


def progress(f: Formula, valuation) -> Formula:
    """Residual obligation of ``f`` after reading one symbol.

    ``valuation`` is a collection of the ids of the predicates that hold.
    """
    true_ids = valuation if isinstance(valuation, (set, frozenset)) else set(valuation)
    cache: dict = {}

    def prog_item(item) -> Formula:
        if item in cache:
            return cache[item]
        if isinstance(item, Lit):
            r = TRUE if (item.pred.id in true_ids) == item.positive else FALSE
        elif isinstance(item, Next):
            r = item.arg
        elif isinstance(item, Until):
            r = disj(prog(item.right), conj(prog(item.left), _item(item)))
        elif isinstance(item, Eventually):
            r = disj(prog(item.arg), _item(item))
        else:
            raise TypeError(f"cannot progress {item!r}")
        cache[item] = r
        return r

    def prog(g: Formula) -> Formula:
        return disj(*(conj(*(prog_item(i) for i in t)) for t in g))

    return prog(f)


def symbolic_progress(f: Formula) -> Formula:
    """Progression with the current symbol left open.

    The result mixes current-step literals with ``Nxt`` obligations; fixing
    every literal and collecting the ``Nxt`` arguments yields ``progress``.
    """
    cache: dict = {}

    def nxt(g: Formula) -> Formula:
        if g == TRUE:
            return TRUE
        if g == FALSE:
            return FALSE
        return _item(Nxt(g))

    def prog_item(item) -> Formula:
        if item in cache:
            return cache[item]
        if isinstance(item, Lit):
            r = _item(item)
        elif isinstance(item, Next):
            r = nxt(item.arg)
        elif isinstance(item, Until):
            r = disj(prog(item.right), conj(prog(item.left), nxt(_item(item))))
        elif isinstance(item, Eventually):
            r = disj(prog(item.arg), nxt(_item(item)))
        else:
            raise TypeError(f"cannot progress {item!r}")
        cache[item] = r
        return r

    def prog(g: Formula) -> Formula:
        return disj(*(conj(*(prog_item(i) for i in t)) for t in g))

    return prog(f)


def cofactor(f: Formula, pred, value: bool) -> Formula:
    """Substitute a truth value for one current-step predicate."""
    terms = []
    for t in f:
        drop = False
        keep = []
        for i in t:
            if isinstance(i, Lit) and i.pred == pred:
                if i.positive != value:
                    drop = True
                    break
            else:
                keep.append(i)
        if not drop:
            terms.append(frozenset(keep))
    return _absorb(terms)


def successor(f: Formula) -> Formula:
    """Collect ``Nxt`` obligations of a literal-free symbolic progression."""
    out = []
    for t in f:
        parts = []
        for i in t:
            if isinstance(i, Nxt):
                parts.append(i.arg)
            elif isinstance(i, Accept):
                parts.append(_item(i))
            else:
                raise ValueError(f"unresolved item {i!r}")
        out.append(conj(*parts))
    return disj(*out)


ACCEPT: Formula = frozenset({frozenset({Accept()})})


@dataclass(frozen=True)
class Mission:
    """Co-safe core, always-invariant Boolean clauses and the terminal-stay clause."""

    core: Formula
    invariants: tuple[Formula, ...] = ()
    terminal: Formula = TRUE

    def __post_init__(self):
        for clause in (*self.invariants, self.terminal):
            if not is_boolean(clause):
                raise ValueError("invariant and terminal clauses must be Boolean")

    def predicates(self) -> list:
        preds = predicates(self.core)
        for c in (*self.invariants, self.terminal):
            preds |= predicates(c)
        return sorted(preds, key=lambda p: p.id)

    def __str__(self) -> str:
        lines = [f"core: {to_str(self.core)}"]
        lines += [f"always: {to_str(c)}" for c in self.invariants]
        lines.append(f"finally_stay: {to_str(self.terminal)}")
        return "\n".join(lines)
