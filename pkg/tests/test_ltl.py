import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import all_words, holds, random_formula, random_word, to_text
from semplan.ltl import (
    NotCoSafeError,
    ParseError,
    PruningWarning,
    StateExplosionError,
    accepts,
    build_dfa,
    check_deterministic,
    dfa_distance,
    parse,
    parse_formula,
    progress,
    prune,
    unpruned,
)
from semplan.ltl import formula as fm


def a_(name):
    return fm.atom(fm.Prop(name))


# -- parsing ------------------------------------------------------------------

def test_parse_near_atom():
    f = parse_formula("F near(1, L1, 0.2, 0.25)")
    assert f == fm.eventually(fm.atom(fm.NearLandmark(1, "L1", 0.2, 0.25)))


def test_negation_binds_tighter_than_until():
    f = parse_formula("!in(1,R1) U in(1,R2)")
    assert f == fm.until(fm.neg_atom(fm.Region(1, "R1")), fm.atom(fm.Region(1, "R2")))


def test_until_is_right_associative():
    assert parse_formula("a U b U c") == fm.until(a_("a"), fm.until(a_("b"), a_("c")))


def test_and_binds_tighter_than_or():
    assert parse_formula("a | b & c") == fm.disj(a_("a"), fm.conj(a_("b"), a_("c")))


def test_negation_pushed_to_leaves():
    f = parse_formula("!(a & !b)")
    assert f == fm.disj(fm.neg_atom(fm.Prop("a")), a_("b"))


@pytest.mark.parametrize("text", ["G F a", "F G a", "!F a", "!(a U b)", "!X a"])
def test_non_co_safe_rejected(text):
    with pytest.raises(NotCoSafeError):
        parse(text)


@pytest.mark.parametrize("text,col", [("F (a &", 7), ("F a $", 5), ("near(1, L1, 0.2)", 6)])
def test_syntax_errors_carry_position(text, col):
    with pytest.raises(ParseError) as err:
        parse(text)
    assert err.value.line == 1
    assert err.value.column == col


@pytest.mark.parametrize("text", ["near(1, L1, 0, 0.25)", "near(1, L1, 0.2, 1.0)", "unc(L1, 0)"])
def test_predicate_parameters_validated(text):
    with pytest.raises(ParseError):
        parse(text)


def test_mission_clauses():
    m = parse("core: F in(1,R1)\nalways: !in(1,R3)\nalways: !in(2,R3); finally_stay: in(1,R1)")
    assert m.core == fm.eventually(fm.atom(fm.Region(1, "R1")))
    assert len(m.invariants) == 2
    assert m.terminal == fm.atom(fm.Region(1, "R1"))


def test_temporal_operator_in_invariant_rejected():
    with pytest.raises(ParseError):
        parse("core: F a\nalways: F b")


def test_missing_core_rejected():
    with pytest.raises(ParseError):
        parse("always: !a")


def test_predicate_ids():
    assert fm.NearLandmark(1, "L1", 0.2, 0.25).id == "near(1,L1,0.2,0.25)"
    assert fm.NearLandmarkClass(2, "L3", 0.5, 0.1, "car").id == "nearc(2,L3,0.5,0.1,car)"
    assert fm.UncertaintyBelow("L1", 0.01).id == "unc(L1,0.01)"
    assert fm.Region(1, "R1").id == "in(1,R1)"


# -- progression ----------------------------------------------------------------

def test_progress_eventually_discharged():
    assert progress(parse_formula("F a"), {"a"}) == fm.TRUE


def test_progress_until_keeps_waiting():
    f = parse_formula("a U b")
    assert progress(f, {"a"}) == f


def test_progress_until_fails():
    assert progress(parse_formula("a U b"), set()) == fm.FALSE


def test_progress_next():
    assert progress(parse_formula("X b"), set()) == a_("b")


# -- automaton construction -------------------------------------------------------

def test_eventually_has_three_states():
    dfa = build_dfa(parse("F a"))
    assert dfa.n_states == 3
    assert dfa.accepting == 2
    assert fm.TRUE in dfa.states


def test_two_eventualities_have_four_core_states():
    dfa = build_dfa(parse("F a & F b"))
    core = [s for s in dfa.states if s != fm.ACCEPT]
    assert len(core) == 4
    assert set(core) == {parse_formula("F a & F b"), parse_formula("F a"), parse_formula("F b"), fm.TRUE}


def test_true_core_accepts_immediately():
    dfa = build_dfa(parse("true"))
    assert dfa.n_states == 2
    assert dfa.step(dfa.initial, set()) == dfa.accepting


def test_terminal_clause_guards_acceptance():
    dfa = build_dfa(parse("core: F a\nfinally_stay: b"))
    true_state = dfa.states.index(fm.TRUE)
    assert dfa.step(true_state, {"a"}) == true_state
    assert dfa.step(true_state, {"b"}) == dfa.accepting


def test_invariant_violation_disables_every_transition():
    dfa = build_dfa(parse("core: F a\nalways: !c"))
    for q in range(dfa.n_states - 1):
        assert dfa.step(q, {"c"}) is None
        assert dfa.step(q, {"a", "c"}) is None


def test_accepts_examples():
    dfa = build_dfa(parse("F a"))
    assert accepts(dfa, [{"a"}, set()])
    assert not accepts(dfa, [set()] * 10)


def test_accepting_state_has_no_outgoing_transitions():
    dfa = build_dfa(parse("F a & X b"))
    assert dfa.out[dfa.accepting] == []


def test_state_cap():
    text = " & ".join(f"F (p{i} & X q{i})" for i in range(6))
    with pytest.raises(StateExplosionError):
        build_dfa(parse(text), max_states=20)


def test_dot_has_one_node_per_state():
    dfa = build_dfa(parse("F a & F b"))
    dot = dfa.to_dot()
    assert sum(1 for line in dot.splitlines() if "shape=circle" in line or "shape=doublecircle" in line) == dfa.n_states


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_random_automata_are_deterministic(seed):
    rng = np.random.default_rng(seed)
    f = random_formula(rng, ["a", "b", "c"], depth=3)
    dfa = build_dfa(parse(to_text(f)))
    assert check_deterministic(dfa)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_progression_matches_finite_semantics(seed):
    rng = np.random.default_rng(seed)
    atoms = ["a", "b", "c"]
    f = random_formula(rng, atoms, depth=3)
    dfa = build_dfa(parse(to_text(f)))
    for _ in range(40):
        w = random_word(rng, atoms, 6)
        assert dfa.accepts(w + [frozenset()]) == holds(f, w), (to_text(f), w)


def test_exhaustive_words_for_fixed_formulas():
    atoms = ["a", "b"]
    cases = [
        ("U", ("ap", "a"), ("X", ("ap", "b"))),
        ("and", ("F", ("ap", "a")), ("X", ("X", ("nap", "b")))),
        ("or", ("U", ("nap", "a"), ("ap", "b")), ("F", ("and", ("ap", "a"), ("ap", "b")))),
    ]
    for f in cases:
        dfa = build_dfa(parse(to_text(f)))
        for w in all_words(atoms, 4):
            assert dfa.accepts(w + [frozenset()]) == holds(f, w)


# -- pruning and distances --------------------------------------------------------

def _regions_mission(text):
    return build_dfa(parse(text))


def test_same_robot_two_regions_pruned():
    dfa = _regions_mission("F (in(1,R1) & in(1,R2))")
    p = unpruned(dfa)
    with pytest.warns(PruningWarning):
        pruned = prune(dfa)
    assert not pruned.feasible
    assert len(pruned.kept) < len(p.kept)


def test_two_robots_two_regions_kept():
    dfa = _regions_mission("F (in(1,R1) & in(2,R2))")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        pruned = prune(dfa)
    assert len(pruned.kept) == len(dfa.transitions)


def test_same_robot_two_landmarks_pruned():
    dfa = build_dfa(parse("F (near(1,L1,0.2,0.25) & near(1,L2,0.2,0.25) & X in(1,R1)) | F in(1,R2)"))
    pruned = prune(dfa)
    assert pruned.feasible
    removed = pruned.removed
    assert removed
    for t in removed:
        for term in t.guard:
            ids = {lit.pred.id for lit in term if lit.positive}
            assert "near(1,L1,0.2,0.25)" in ids and "near(1,L2,0.2,0.25)" in ids


def test_eventually_both_regions_distance_is_two():
    dfa = _regions_mission("F in(1,R1) & F in(1,R2)")
    pruned = prune(dfa)
    q0 = dfa.initial
    core_true = dfa.states.index(fm.TRUE)
    assert dfa_distance(pruned, q0, core_true) == 2
    assert dfa_distance(unpruned(dfa), q0, core_true) == 1
    assert dfa_distance(pruned, q0, q0) == 0
    both = [t for t in pruned.removed if t.src == q0 and t.dst == core_true]
    assert len(both) == 1


def test_unreachable_state_distance_is_infinite():
    dfa = _regions_mission("F in(1,R1)")
    pruned = prune(dfa)
    assert math.isinf(dfa_distance(pruned, dfa.accepting, dfa.initial))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_prune_keeps_single_location_assignments_and_distance_is_lipschitz(seed):
    rng = np.random.default_rng(seed)
    atoms = ["in(1,R1)", "in(1,R2)", "in(2,R1)", "near(1,L1,0.2,0.25)"]
    f = random_formula(rng, atoms, depth=3)
    dfa = build_dfa(parse(to_text(f)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PruningWarning)
        pruned = prune(dfa)
    kept = set(map(id, pruned.kept))
    for t in dfa.transitions:
        single = any(
            all(len(v) <= 1 for v in _places(term).values()) for term in t.guard
        )
        if single:
            assert id(t) in kept
    for t in pruned.kept:
        a = pruned.to_accepting(t.src)
        b = pruned.to_accepting(t.dst)
        if math.isfinite(a):
            assert a - b <= 1


def _places(term):
    out = {}
    for lit in term:
        loc = fm.location_of(lit.pred)
        if lit.positive and loc is not None:
            out.setdefault(loc[0], set()).add(loc[1])
    return out


def test_guard_with_too_many_cubes_is_kept():
    from semplan.ltl import automaton as au

    big = fm.FALSE
    for i in range(au.MAX_MINTERMS + 1):
        big = big | {frozenset({fm.Lit(fm.Region(1, "R1")), fm.Lit(fm.Region(1, f"X{i}"))})}
    assert au.guard_feasible(frozenset(big))
    assert not au.guard_feasible(frozenset(list(big)[:3]))
