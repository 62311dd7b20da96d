"""Numerical laboratory for teacher-student diagonal SSM training dynamics."""

from .analysis import (
    SaddleReport,
    effective_rank,
    find_saddle,
    linearized_trajectory,
    pl_coefficient,
    poison_lower_bound,
    rank_one_shift_eigs,
    w1_distance,
)
from .data import (
    InitSample,
    InitSpec,
    LabeledSequence,
    SequenceSpec,
    TrainingSet,
    adversarial_zero_loss,
    canonical_teacher,
    diag_teacher,
    gaussian_sequences,
    label_set,
    make_rng,
    sample_init,
    theorem_sets,
)
from .loss_grad import Characterization, GradientBundle, characterize, grad, loss, predicted_a_dot
from .mlp_head import (
    HeadGradients,
    IdentityHead,
    MLPHead,
    head_forward,
    head_input_derivative,
    head_param_gradients,
    identity_head,
    random_head,
    teacher_head,
)
from .optimize import (
    DivergenceError,
    IntegrationError,
    OptimizeResult,
    OptimizerSpec,
    TrajectoryLog,
    adam,
    adaptive_gd,
    gradient_flow,
)
from .ssm_core import (
    DiagonalSSM,
    forward,
    generalization_error,
    impulse_response,
    normalized_generalization_error,
)

__all__ = [name for name in dir() if not name.startswith("_")]
