"""Tree-based mission planner."""

from .dynamics import default_primitives, dynamics_step, primitive_product, step_cost, wrap_angle
from .sampling import (
    Assignment,
    Guidance,
    bucket_probabilities,
    control_probabilities,
    sample_bucket,
    sample_primitive,
)
from .search import (
    PLAN_SCHEMA,
    NotFound,
    Plan,
    PlanValidationError,
    Planner,
    PlannerConfig,
    PlannerStats,
    PlanningError,
    PlanningProblem,
    Robot,
    StartState,
    plan,
    plan_from_dict,
    replay,
    validate,
)
from .tree import BucketIndex, Tree, TreeNode
