"""Consensus+innovations inference over directed networks.

Simulation of the averaging recursion under deterministic or randomly failing
links, large-deviations rate functions for the node states, and network design
(left-eigenvector optimization plus weight-matrix synthesis).
"""

from .observation_models import (
    ClosedFormUnavailable,
    DiscreteModel,
    GaussianModel,
    LmgfOracle,
    NumericFailure,
    ObservationModel,
    conjugate_closed_form,
    conjugate_numeric,
    lmgf,
    model_from_dict,
    model_oracle,
    model_to_dict,
    sample,
)
from .network import (
    ConstantWeights,
    GraphGenerationError,
    IidLinkFailures,
    MarkovLinkFailures,
    NotPrimitiveError,
    Topology,
    WeightProcess,
    check_stochastic,
    laplacian_weight_matrix,
    left_perron_vector,
    load_topology,
    next_weight_matrix,
    random_geometric_graph,
    save_topology,
    subdominant_modulus,
)
from .engine import (
    AccuracyRegion,
    ErrorProbabilityTable,
    InsufficientDataError,
    SimulationConfig,
    SlopeEstimate,
    estimate_decay_rate,
    estimate_time_to_accuracy,
    monte_carlo_error_probs,
    run_via_phi_products,
    sample_final_states,
    simulate_trajectory,
    step,
)
from .rates import (
    GaussianQuadraticRate,
    NumericConjugateRate,
    RateFunction,
    ScaledRate,
    check_sandwich,
    conjugate,
    isolation_fusion_rates,
    rate_over_ball_complement,
    symmetric_lambda_max,
    tilde_lmgf,
    tilde_oracle,
    tilde_rate_gaussian,
    tilde_rate_numeric,
)
from .design import (
    DesignProblem,
    DesignResult,
    InfeasibleDesignError,
    design_rate,
    metropolis_matrix,
    optimize_left_eigenvector,
    project_simplex,
    solve_design,
    synthesize_weight_matrix,
)

__version__ = "0.1.0"
