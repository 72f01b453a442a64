"""Competence-aware training-question selection.

Every candidate question gets a log-scale score: the predicted log
probability that the current model answers it correctly, guessing
excluded. Questions whose score falls inside [lb_log, ub_log] are kept;
scores below the lower bound mean "still too hard", scores above the
upper bound mean "already too easy". An empty selection is the early
stopping signal. Epoch 0 bypasses scoring and seeds from the questions
with the fewest concepts.

Selection is pure and stateless: identical inputs give identical
outputs, with selected ids ordered ascending for reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .irt import DimensionMismatchError, QuestionBank, log_concept_probs
from .vi import PosteriorParams

SEEDING = "seeding"
LB_ACTIVE = "lb_active"
BOTH_ACTIVE = "both_active"
UB_ACTIVE = "ub_active"
EXHAUSTED = "exhausted"

# Lifecycle order of a healthy run; later stages never regress to
# earlier ones while competence is non-decreasing.
STAGE_ORDER = (SEEDING, LB_ACTIVE, BOTH_ACTIVE, UB_ACTIVE, EXHAUSTED)

COMPETENCE_SOURCES = ("latest_snapshot", "posterior_mean_latest")


@dataclass(frozen=True)
class CurriculumConfig:
    """Log-scale score bounds plus the epoch-0 seeding rule.

    lb_log = -inf together with ub_log = 0 disables filtering entirely.
    Both competence_source values currently resolve to the posterior
    mean of the newest snapshot row; the mean (not a sample) keeps
    selection deterministic.
    """

    lb_log: float
    ub_log: float
    seed_max_concepts: int = 2
    seed_count: int = 5000
    competence_source: str = "posterior_mean_latest"

    def __post_init__(self):
        if not self.lb_log < self.ub_log <= 0.0:
            raise ValueError(
                f"bounds must satisfy lb_log < ub_log <= 0, got ({self.lb_log}, {self.ub_log})"
            )
        if self.seed_max_concepts < 1 or self.seed_count < 0:
            raise ValueError("seed_max_concepts must be >= 1 and seed_count >= 0")
        if self.competence_source not in COMPETENCE_SOURCES:
            raise ValueError(f"competence_source must be one of {COMPETENCE_SOURCES}")


@dataclass
class SelectionResult:
    """Outcome of one selection pass.

    `scores` aligns with the bank's question order (None for the seeding
    epoch, which does not score). `excluded_below`/`excluded_above`
    count questions dropped by each bound.
    """

    selected: list[str]
    scores: np.ndarray | None
    stage: str
    excluded_below: int = 0
    excluded_above: int = 0


def question_score(
    ability: np.ndarray, difficulties: np.ndarray, concept_counts: np.ndarray
) -> float:
    """Guess-free log probability of a correct answer: sum_c q_c * log sigma(theta_c - b_c).

    Always <= 0; monotone non-decreasing in every competence component.
    """
    ability = np.asarray(ability, dtype=float)
    difficulties = np.asarray(difficulties, dtype=float)
    counts = np.asarray(concept_counts)
    if not (ability.shape == difficulties.shape == counts.shape) or ability.ndim != 1:
        raise DimensionMismatchError(
            "ability, difficulties, and concept_counts must be equal-length vectors"
        )
    return float(np.dot(counts, log_concept_probs(ability, difficulties)))


def question_scores(
    bank: QuestionBank, ability: np.ndarray, difficulties: np.ndarray
) -> np.ndarray:
    """question_score for every question in the bank, in bank order."""
    ability = np.asarray(ability, dtype=float)
    difficulties = np.asarray(difficulties, dtype=float)
    if ability.shape != (bank.num_concepts,) or difficulties.shape != (bank.num_concepts,):
        raise DimensionMismatchError(
            f"ability and difficulties must have length {bank.num_concepts}"
        )
    return bank.concept_counts @ log_concept_probs(ability, difficulties)


def stage_classify(scores: np.ndarray, config: CurriculumConfig) -> str:
    """Label which bounds are doing the filtering.

    exhausted: nothing survives; lb_active / ub_active: only that bound
    excludes; both_active: both exclude, or neither does.
    """
    scores = np.asarray(scores, dtype=float)
    n_below = int(np.count_nonzero(scores < config.lb_log))
    n_above = int(np.count_nonzero(scores > config.ub_log))
    if n_below + n_above == scores.size:
        return EXHAUSTED
    if n_below > 0 and n_above == 0:
        return LB_ACTIVE
    if n_above > 0 and n_below == 0:
        return UB_ACTIVE
    return BOTH_ACTIVE


def select(
    bank: QuestionBank,
    post: PosteriorParams | None,
    config: CurriculumConfig,
    epoch: int,
) -> SelectionResult:
    """Pick the questions to train on this epoch.

    Epoch 0 returns the seeding set: up to seed_count questions whose
    total concept count is at most seed_max_concepts, easiest (fewest
    concepts) first, ties broken by ascending question id. Later epochs
    keep every question whose score lies in [lb_log, ub_log], scored
    with the newest snapshot's posterior mean competences. An empty
    result means every candidate was filtered out (early stop).
    """
    if epoch == 0:
        totals = bank.total_concepts
        eligible = np.flatnonzero(totals <= config.seed_max_concepts)
        ranked = sorted(eligible, key=lambda j: (int(totals[j]), bank.question_ids[j]))
        chosen = ranked[: config.seed_count]
        return SelectionResult(
            selected=[bank.question_ids[j] for j in chosen],
            scores=None,
            stage=SEEDING if chosen else EXHAUSTED,
        )

    if post is None:
        raise ValueError("a fitted posterior is required after the seeding epoch")
    if post.num_snapshots == 0:
        raise ValueError("posterior has no snapshot rows to score with")
    ability = post.theta_mean[-1]
    scores = question_scores(bank, ability, post.b_mean)
    keep = (scores >= config.lb_log) & (scores <= config.ub_log)
    selected = sorted(bank.question_ids[j] for j in np.flatnonzero(keep))
    return SelectionResult(
        selected=selected,
        scores=scores,
        stage=stage_classify(scores, config),
        excluded_below=int(np.count_nonzero(scores < config.lb_log)),
        excluded_above=int(np.count_nonzero(scores > config.ub_log)),
    )
