"""Adversarially robust neural surrogates for a random-coefficient elliptic simulator."""

from .adversarial import (
    AttackConfig,
    Perturbation,
    adversarial_loss_grad,
    adversarial_train,
    attack_direction,
    fgnm_direction,
    fgnm_from_grad,
    fgsm_direction,
    fgsm_from_grad,
    perturb,
)
from .errors import (
    DegenerateClasses,
    DegenerateSample,
    EmptyGroup,
    EmptyInput,
    LengthMismatch,
    NotPositiveDefinite,
    ShapeMismatch,
    SolverDiverged,
    ZeroGradient,
    ZeroReference,
)
from .fields import CholeskyFactor, GridField, GridSpec, KernelParams, exp_field, factor_for, sample_log_field
from .pipeline import ExperimentConfig
from .simulator import (
    LabeledDataset,
    SolverConfig,
    generate_dataset,
    load_dataset,
    save_dataset,
    simulate,
    solve_elliptic,
)
from .tensor_net import (
    AdamState,
    Network,
    TrainConfig,
    backward,
    default_layers,
    forward,
    init_network,
    load_network,
    mse_loss,
    predict,
    save_network,
    train,
)
from .uq import (
    DensityCurve,
    MomentArrays,
    RankTestResult,
    SampleErrors,
    kde,
    lda_project,
    mann_whitney_u,
    mc_density_experiment,
    moments,
    per_sample_se,
    random_perturb_matched_norm,
    relative_error,
    silverman_bandwidth,
)

__version__ = "0.1.0"
