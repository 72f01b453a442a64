"""Conjunctive multidimensional IRT with a competence-aware curriculum.

Estimates per-concept difficulties and per-snapshot model competences
from accumulated correctness responses via mean-field variational
inference, and selects the training questions whose predicted success
probability falls inside configurable log-scale bounds.
"""

from .curriculum import (
    BOTH_ACTIVE,
    EXHAUSTED,
    LB_ACTIVE,
    SEEDING,
    STAGE_ORDER,
    UB_ACTIVE,
    CurriculumConfig,
    SelectionResult,
    question_score,
    question_scores,
    select,
    stage_classify,
)
from .irt import (
    DimensionMismatchError,
    QuestionBank,
    ResponseMatrix,
    ThreePLItem,
    answer_prob,
    concept_prob,
    log_likelihood,
    log_likelihood_grad,
    logistic_3pl,
)
from .simulate import (
    EmptySelectionError,
    EpochRecord,
    SimConfig,
    SimLearnerState,
    SimTrace,
    UnknownQuestionError,
    generate_bank,
    initial_state,
    respond,
    run_loop,
    train_step,
)
from .vi import (
    ElboGradient,
    FitConfig,
    FitReport,
    NonFiniteObjectiveError,
    PosteriorParams,
    PriorSpec,
    elbo_estimate,
    elbo_grad,
    fit,
    gaussian_kl,
)

__version__ = "0.1.0"
