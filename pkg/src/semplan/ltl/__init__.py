"""Mission language: parsing, progression, automata."""

from .automaton import (
    DFA,
    PrunedDFA,
    PruningWarning,
    StateExplosionError,
    Transition,
    accepts,
    build_dfa,
    check_deterministic,
    dfa_distance,
    enabling_symbol,
    guard_holds,
    prune,
    unpruned,
)
from .formula import (
    FALSE,
    TRUE,
    Mission,
    NearLandmark,
    NearLandmarkClass,
    Prop,
    Region,
    UncertaintyBelow,
    atom,
    conj,
    disj,
    eventually,
    neg_atom,
    next_,
    progress,
    to_str,
    until,
)
from .parser import NotCoSafeError, ParseError, parse, parse_formula

__all__ = [name for name in dir() if not name.startswith("_")]
