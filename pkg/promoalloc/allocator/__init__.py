from .costs import (
    CostModelProtocol,
    FaceValueCost,
    ResponseWeightedCost,
    SubgroupFaceValueCost,
    parse_cost_model,
)
from .dual import (
    DualConfig,
    assign_given_lambda,
    online_decide,
    solve_budget,
    solve_dual_multi,
    solve_dual_single,
    solve_per_capita,
)
from .matrix import ResponseMatrix, build_matrix
from .oracle import ExactSolution, solve_exact_small
from .plan import (
    AllocationPlan,
    DualSolution,
    SampledPlan,
    load_dual,
    read_plan,
    sample_plan,
    save_dual,
    write_plan,
)
