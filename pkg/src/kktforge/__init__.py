"""Toolkit for max-margin KKT geometry of 2-layer ReLU classifiers.

Train to a near-KKT point, certify (epsilon, delta)-KKT status, run the
prior-free reconstruction attack, and construct indistinguishable
alternative KKT sets with certified splitting budgets.
"""

from ._version import __version__
from .attack import (
    AttackConfig,
    BoxInit,
    ReconstructionResult,
    SphereInit,
    attack_gradients,
    minimize_kkt_loss,
    nn_metrics,
    reconstruct,
)
from .data import LabeledDataset, data_hash, gen_sphere_dataset, load_dataset, save_dataset
from .forge import (
    BudgetReport,
    SplitPlan,
    WeightedSet,
    budget_report,
    construct_distant_kkt_set,
    delta_degradation,
    merge,
    orthogonal_direction,
    pattern_boundary_oracle,
    split,
    split_budget_approx,
    split_budget_exact,
    svd_direction,
)
from .kkt import (
    KKTCertificate,
    KKTLossWeights,
    Multipliers,
    certify,
    fit_multipliers,
    kkt_loss,
    margin_value,
    stationarity_residual,
)
from .lab import ExperimentReport, emit_report, run_defense_eval, run_radius_sweep
from .net import (
    ActivationPattern,
    NetworkParams,
    activation_pattern,
    flatten_params,
    forward,
    forward_batch,
    grad_theta,
    load_model,
    save_model,
    shift_bias_defense,
    signed_distance,
    unflatten_params,
)
from .trainer import (
    TrainConfig,
    TrainTrace,
    empirical_loss,
    normalized_margin,
    train_to_kkt,
)

__all__ = [name for name in dir() if not name.startswith("_")]
