"""Adversarial imitation learning with two-layer ReLU networks on finite MDPs.

The package trains an energy-based softmax policy against a learned reward
by alternating a natural-policy-gradient actor step with a projected reward
ascent step; the critic is a neural TD learner over the same random-feature
class.  Small finite MDPs with embedded state-action features make every
population quantity exactly computable, so each sampled estimate in the
training loop has a dense oracle next to it.
"""

from .critic import TdConfig, default_alpha, neural_td, td_step
from .driver import (
    ConfigError,
    FisherEstimate,
    GailConfig,
    GailResult,
    GailState,
    MetricsRow,
    MixedPolicy,
    NpgResult,
    actor_step,
    estimate_fisher,
    estimate_policy_grad,
    estimate_reward_grad,
    exact_policy_gradient,
    exact_reward_gradient,
    metrics_to_csv,
    mixed_policy_value,
    reward_step,
    run_gail,
    solve_npg_direction,
)
from .evaluation import ConvergenceSummary, RDistanceReport, convergence_summary, r_distance
from .experiment import (
    ExperimentSpec,
    NumericalGuardError,
    bundled_mdp,
    load_config,
    make_expert,
    run_experiment,
    spec_from_dict,
    value_iteration,
)
from .mdp import (
    FiniteEmbeddedMDP,
    TabularPolicy,
    Transition,
    generate_expert_trajectory,
    load_mdp,
    random_mdp,
    random_policy,
    sample_stationary,
    sample_visitation,
    save_mdp,
    step,
    uniform_policy,
)
from .network import (
    BallConstraint,
    TwoLayerNet,
    features,
    forward,
    init_net,
    linearization_probe,
    load_net,
    project_ball,
    sample_in_ball,
    save_net,
)
from .oracle import (
    DegenerateChainError,
    ExactQuantities,
    SupportError,
    cost_difference_residual,
    exact_j,
    exact_q,
    exact_quantities,
    exact_stationary,
    exact_visitation,
    expected_kl,
)
from .policy import (
    CriticNet,
    EnergyPolicy,
    RewardNet,
    action_probs,
    critic_table,
    energy_table,
    make_reward,
    policy_as_table,
    reward_table,
    score,
)

__version__ = "0.1.0"
