"""Discrete optimal transport, geodesic convexity tools and localized
feedback stabilization of mean-field particle systems."""

from .measures import BoxDomain, DiscreteMeasure, discretize_uniform, pushforward, support_stats
from .transport import (
    Geodesic,
    NonUniquePlan,
    TransportPlan,
    check_monotone_optimal,
    geodesic,
    intermediate_map,
    optimal_map,
    pairwise_lipschitz,
    solve_assignment,
    w2,
)
from .convexity import (
    MonotoneSampleMap,
    NotProlongable,
    certify_regular_perturbation,
    map_continuity_probe,
    monotonicity_constant,
    prolong_geodesic,
    resolvent_apply,
    yosida_apply,
)
from .dynamics import NonlocalFieldSpec, Trajectory, check_A2, eval_field, flow_map, solve_reference
from .control import build_cutoff, certify_admissible, solve_controlled, synthesize_feedback
from .experiments import (
    Scenario,
    drift_through_slab,
    run_counterexample,
    run_enlargement_experiment,
    run_rate_experiment,
)

__version__ = "0.1.0"
