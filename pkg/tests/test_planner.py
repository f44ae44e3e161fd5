import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semplan.estimation import RangeSensorModel
from semplan.geometry import Workspace
from semplan.ltl import PruningWarning, parse
from semplan.ltl import formula as fm
from semplan.planner import (
    BucketIndex,
    NotFound,
    Planner,
    PlannerConfig,
    PlanningError,
    PlanningProblem,
    Robot,
    TreeNode,
    bucket_probabilities,
    control_probabilities,
    default_primitives,
    dynamics_step,
    plan,
    replay,
    sample_bucket,
    sample_primitive,
    step_cost,
    wrap_angle,
)
from semplan.semantic_map import Landmark, SemanticMap

COARSE = [(0.0, 0.0), (1.0, 0.0), (0.0, math.pi / 2), (0.0, -math.pi / 2), (1.0, math.pi / 2),
          (1.0, -math.pi / 2)]


def make_problem(mission, robots=((0.5, 0.5, 0.0),), landmarks=(("L1", (3.0, 3.0)),),
                 obstacles=(), regions=None, prims=COARSE, tau=1.0, size=4.0, cov=0.01,
                 sensor_range=1.0):
    ws = Workspace((0, 0, size, size), obstacles=list(obstacles), regions=regions or {})
    rs = [Robot(p, tuple(prims), RangeSensorModel(sensor_range)) for p in robots]
    lms = [Landmark(lid, m, np.eye(2) * cov, {"object": 1.0}) for lid, m in landmarks]
    return PlanningProblem(ws, rs, SemanticMap.from_landmarks(lms), parse(mission), tau=tau)


# -- dynamics ------------------------------------------------------------------

def test_straight_line_step():
    new, ok = dynamics_step([[0, 0, 0]], [[1.0, 0.0]], 0.1)
    assert ok
    np.testing.assert_allclose(new, [[0.1, 0.0, 0.0]], atol=1e-15)


def test_quarter_arc_step():
    new, _ = dynamics_step([[0, 0, 0]], [[1.0, math.pi / 2]], 1.0)
    np.testing.assert_allclose(new, [[2 / math.pi, 2 / math.pi, math.pi / 2]], atol=1e-12)


def test_zero_control_is_identity():
    p = np.array([[1.2, -0.4, 2.5]])
    new, _ = dynamics_step(p, [[0.0, 0.0]], 0.3)
    np.testing.assert_array_equal(new, p)


def test_small_turn_branch_is_continuous_with_arc():
    a, _ = dynamics_step([[0, 0, 0.3]], [[1.0, 0.999e-3]], 1.0)
    b, _ = dynamics_step([[0, 0, 0.3]], [[1.0, 1.001e-3]], 1.0)
    np.testing.assert_allclose(a, b, atol=1e-5)


def test_collision_and_bounds_flag_invalid():
    ws = Workspace((0, 0, 4, 4), obstacles=[[1.0, 0.0, 1.2, 4.0]])
    _, ok = dynamics_step([[0.5, 2.0, 0.0]], [[1.0, 0.0]], 1.0, ws)
    assert not ok
    _, ok = dynamics_step([[3.5, 2.0, 0.0]], [[1.0, 0.0]], 1.0, ws)
    assert not ok


def test_wrap_angle_range():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)


def test_step_cost_sums_robots():
    assert step_cost([[0, 0, 0], [1, 1, 0]], [[3, 4, 0], [1, 2, 0]]) == pytest.approx(6.0)


def test_default_primitives_end_with_standing_still():
    prims = default_primitives()
    assert len(prims) == 14
    assert prims[-1] == (0.0, 0.0)
    assert len(set(prims)) == 14


# -- sampling densities -----------------------------------------------------------

def test_biased_bucket_density_three_buckets():
    np.testing.assert_allclose(bucket_probabilities(3, [0], 0.9), [0.9, 0.05, 0.05])


def test_bucket_density_degenerate_cases_are_uniform():
    np.testing.assert_allclose(bucket_probabilities(4, [0, 1, 2, 3], 0.9), [0.25] * 4)
    np.testing.assert_allclose(bucket_probabilities(4, [], 0.9), [0.25] * 4)
    np.testing.assert_allclose(bucket_probabilities(4, [1], 0.9, biased=False), [0.25] * 4)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 40), data=st.data(), p=st.floats(0.51, 0.99))
def test_bucket_density_normalized_and_positive(n, data, p):
    k_min = data.draw(st.lists(st.integers(0, n - 1), unique=True, max_size=n))
    probs = bucket_probabilities(n, k_min, p)
    assert abs(math.fsum(probs) - 1.0) <= 1e-12
    assert probs.min() > 0
    rng = np.random.default_rng(0)
    _, eps, total = sample_bucket(rng, n, sorted(k_min), p)
    assert eps == pytest.approx(probs.min())
    assert abs(total - 1.0) <= 1e-12


def _within_3_sigma(counts, probs):
    n = counts.sum()
    sigma = np.sqrt(n * probs * (1 - probs))
    return np.all(np.abs(counts - n * probs) <= 3 * sigma + 1e-9)


def test_bucket_sampler_frequencies():
    rng = np.random.default_rng(7)
    n, k_min = 6, [1, 4]
    counts = np.zeros(n)
    for _ in range(100_000):
        counts[sample_bucket(rng, n, k_min, 0.9)[0]] += 1
    assert _within_3_sigma(counts, bucket_probabilities(n, k_min, 0.9))


def test_control_density_example():
    probs = control_probabilities(5, 2, 0.9)
    np.testing.assert_allclose(probs, [0.025, 0.025, 0.9, 0.025, 0.025])
    np.testing.assert_allclose(control_probabilities(5, None, 0.9), [0.2] * 5)


def test_control_sampler_frequencies_and_minimum():
    rng = np.random.default_rng(3)
    counts = np.zeros(5)
    zeta = 1.0
    for _ in range(100_000):
        k, z = sample_primitive(rng, 5, 2, 0.9)
        counts[k] += 1
        zeta = min(zeta, z)
    assert zeta == pytest.approx(0.025)
    assert _within_3_sigma(counts, control_probabilities(5, 2, 0.9))


def test_config_rejects_probabilities_outside_open_interval():
    for v in (0.5, 1.0, 0.3):
        with pytest.raises(ValueError):
            PlannerConfig(p_rand=v)
        with pytest.raises(ValueError):
            PlannerConfig(p_new=v)


# -- buckets --------------------------------------------------------------------

def test_new_key_creates_bucket():
    b = BucketIndex(0.1, 8)
    n1 = TreeNode(0, np.array([[0.05, 0.05, 0.0]]), None, 0, 0.0, None, 0, None)
    n2 = TreeNode(1, np.array([[0.06, 0.04, 0.1]]), None, 0, 0.0, 0, 1, None)
    n3 = TreeNode(2, np.array([[0.15, 0.05, 0.0]]), None, 0, 0.0, 0, 1, None)
    n4 = TreeNode(3, np.array([[0.05, 0.05, 0.0]]), None, 1, 0.0, 0, 1, None)
    assert b.add(n1) == (0, True)
    assert b.add(n2) == (0, False)
    assert b.add(n3) == (1, True)
    assert b.add(n4) == (2, True)
    assert len(b) == 3


# -- extension ------------------------------------------------------------------

def test_parent_label_violating_invariant_is_rejected():
    prob = make_problem("core: F in(1,R1)\nalways: !in(1,R2)",
                        regions={"R1": [3, 3, 4, 4], "R2": [0, 2, 1, 3]})
    planner = Planner(prob, PlannerConfig(seed=0))
    bad = TreeNode(0, np.array([[0.5, 2.5, 0.0]]), prob.smap.covs.copy(), prob.dfa.initial,
                   0.0, None, 0, None)
    assert planner.extend(bad, (1,)) == "no-dfa-transition"
    assert planner.stats.rejections["no-dfa-transition"] == 1


def test_collision_is_rejected():
    prob = make_problem("F in(1,R1)", regions={"R1": [3, 3, 4, 4]},
                        obstacles=[[1.0, 0.0, 1.2, 1.0]])
    planner = Planner(prob)
    root = planner._root()
    planner._insert(root)
    assert planner.extend(root, (1,)) == "collision"


def test_accepting_child_becomes_goal_and_new_bucket():
    prob = make_problem("F in(1,R1)", regions={"R1": [0, 0, 1, 1]})
    planner = Planner(prob)
    root = planner._root()
    planner._insert(root)
    mid = planner.tree[planner.extend(root, (1,))]
    assert mid.q == planner.dfa.states.index(fm.TRUE)
    k_before = len(planner.buckets)
    nid = planner.extend(mid, (1,))
    assert isinstance(nid, int)
    assert planner.tree[nid].q == prob.dfa.accepting
    assert planner.goals == [nid]
    assert len(planner.buckets) == k_before + 1


def test_children_consume_parent_label():
    prob = make_problem("F in(1,R1)", regions={"R1": [1.2, 0, 2, 1]})
    planner = Planner(prob)
    root = planner._root()
    planner._insert(root)
    nid = planner.extend(root, (1,))  # (0.5,0.5) -> (1.5,0.5), inside R1
    child = planner.tree[nid]
    assert child.q == prob.dfa.initial  # its own label is consumed only by its children
    grand = planner.tree[planner.extend(child, (0,))]
    assert grand.q == prob.dfa.states.index(fm.TRUE)
    assert planner.tree[planner.extend(grand, (2,))].q == prob.dfa.accepting


def test_exact_duplicate_is_suppressed():
    prob = make_problem("F in(1,R1)", regions={"R1": [3, 3, 4, 4]})
    planner = Planner(prob)
    root = planner._root()
    planner._insert(root)
    assert isinstance(planner.extend(root, (2,)), int)
    assert planner.extend(root, (2,)) == "duplicate"


# -- whole searches ---------------------------------------------------------------

def test_vacuous_mission_has_empty_plan():
    prob = make_problem("true")
    result = plan(prob)
    assert result.H == 0
    assert result.controls == []
    assert result.accepted_at_root
    assert result.cost == 0.0
    assert replay(result, prob) == []


def test_enclosed_region_is_not_found():
    walls = [[2.5, 2.5, 4, 2.7], [2.5, 2.5, 2.7, 4]]
    prob = make_problem("F in(1,R1)", regions={"R1": [3.2, 3.2, 3.8, 3.8]}, obstacles=walls)
    with pytest.raises(NotFound) as err:
        plan(prob, PlannerConfig(n_max=300, seed=1))
    assert err.value.stats.iterations == 300


def test_initial_collision_reported_before_search():
    prob = make_problem("F in(1,R1)", regions={"R1": [3, 3, 4, 4]},
                        obstacles=[[0.0, 0.0, 1.0, 1.0]])
    with pytest.raises(PlanningError):
        plan(prob)


@pytest.fixture(scope="module")
def reach_run():
    prob = make_problem("F near(1, L1, 0.4, 0.25)", cov=0.005)
    planner = Planner(prob, PlannerConfig(n_max=300, seed=5))
    return prob, planner, planner.run()


def test_plan_replays_bit_for_bit(reach_run):
    prob, _, result = reach_run
    assert result.dfa_states[-1] == prob.dfa.accepting
    assert replay(result, prob) == []


def test_tree_invariants(reach_run):
    _, planner, _ = reach_run
    tree = planner.tree
    assert tree[0].parent is None and tree[0].cost == 0.0
    for node in list(tree.nodes)[1:]:
        parent = tree[node.parent]
        assert node.parent < node.id
        assert node.cost == pytest.approx(parent.cost + step_cost(parent.pose, node.pose), abs=1e-12)
        assert node.cost >= parent.cost
        pose, covs, q, reason = planner.propagate(parent, node.control)
        assert reason is None
        np.testing.assert_array_equal(pose, node.pose)
        np.testing.assert_array_equal(covs, node.covs)
        assert q == node.q


def test_bucket_partition(reach_run):
    _, planner, _ = reach_run
    members = [m for group in planner.buckets.members for m in group]
    assert sorted(members) == list(range(len(planner.tree)))
    keys = {planner.buckets.key(n.pose, n.q) for n in planner.tree.nodes}
    assert len(keys) == len(planner.buckets)


def test_density_witnesses_logged(reach_run):
    _, planner, _ = reach_run
    assert 0 < planner.stats.eps_min <= 1
    assert 0 < planner.stats.zeta_min <= 1
    assert planner.stats.fv_sum_err <= 1e-12


def test_best_cost_history_is_nonincreasing(reach_run):
    _, planner, result = reach_run
    costs = [c for _, c in planner.stats.best_cost_history]
    assert costs == sorted(costs, reverse=True)
    assert costs[-1] == result.cost


def test_same_seed_same_plan():
    def run():
        prob = make_problem("F near(1, L1, 0.4, 0.25)", cov=0.005)
        return plan(prob, PlannerConfig(n_max=80, seed=11))

    a, b = run(), run()
    assert a.primitive_ids == b.primitive_ids
    np.testing.assert_array_equal(a.poses, b.poses)
    assert a.stats.n_nodes == b.stats.n_nodes


# -- automaton-guided targets --------------------------------------------------------

def test_joint_symbol_assigns_each_robot_its_landmark():
    prob = make_problem("F (near(1,L1,0.2,0.25) & near(2,L2,0.2,0.25))",
                        robots=((0.5, 0.5, 0), (3.5, 0.5, 0), (2.0, 2.0, 0)),
                        landmarks=(("L1", (1, 3)), ("L2", (3, 3))))
    planner = Planner(prob)
    a = planner.guidance.assign(prob.dfa.initial)
    assert a.targets == (("landmark", "L1"), ("landmark", "L2"), None)


def test_negated_proximity_becomes_virtual_obstacle():
    prob = make_problem("core: F near(1,L1,0.2,0.25)\nalways: !near(1,L2,0.2,0.25)",
                        landmarks=(("L1", (3.5, 3.5)), ("L2", (2, 2))), cov=0.02)
    planner = Planner(prob)
    a = planner.guidance.assign(prob.dfa.initial)
    assert a.targets == (("landmark", "L1"),)
    assert a.avoid == ((("landmark", "L2"),),)
    g = planner.guidance
    index = prob.smap.index
    cells = g.place_cells(("landmark", "L2"), prob.smap.means, prob.smap.covs, index)
    df = g.field(("landmark", "L1"), cells, prob.smap.means, index)
    assert cells and all(math.isinf(df[c]) for c in cells)


def test_joint_presence_is_not_an_obstacle():
    prob = make_problem("core: F in(1,R2)\nalways: !(in(1,R1) & in(2,R1))",
                        robots=((0.5, 0.5, 0), (3.5, 0.5, 0)),
                        regions={"R1": [1.5, 1.5, 2.5, 2.5], "R2": [3, 3, 4, 4]})
    planner = Planner(prob)
    a = planner.guidance.assign(prob.dfa.initial)
    assert a.targets == (("region", "R2"), None)
    assert a.avoid == ((), ())


def test_distance_fields_are_memoized(reach_run):
    _, planner, _ = reach_run
    assert planner.stats.distance_fields <= 2


def test_infeasible_pruning_falls_back_with_warning():
    prob = make_problem("F (in(1,R1) & in(1,R2))", regions={"R1": [0, 0, 1, 1], "R2": [3, 3, 4, 4]})
    with pytest.warns(PruningWarning):
        pdfa = prob.pruned(True)
    assert pdfa.feasible
    assert len(pdfa.kept) == len(prob.dfa.transitions)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PruningWarning)
        with pytest.raises(NotFound):
            plan(prob, PlannerConfig(n_max=20))
