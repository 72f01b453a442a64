"""Closed-loop driver against a simulated learner.

The simulated learner stands in for a model being trained: it has
ground-truth per-concept competences that rise linearly with training
exposure (clamped at a cap) and answers questions by Bernoulli draws
from the same conjunctive probability the estimator assumes. Each epoch
fits the posterior on all accumulated responses (warm-started), selects
questions inside the curriculum bounds, trains on a batch of them, and
appends one new response-matrix row. The loop ends at num_epochs or as
soon as the selection comes back empty.

All randomness flows from the config seed, so identical configs produce
bitwise-identical traces.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .curriculum import CurriculumConfig, SelectionResult, select
from .irt import QuestionBank, ResponseMatrix, log_concept_probs
from .vi import FitConfig, PosteriorParams, PriorSpec, fit


class UnknownQuestionError(KeyError):
    """A response was requested for a question id not present in the bank."""


class EmptySelectionError(ValueError):
    """train_step received no questions; the loop should early-stop instead."""


@dataclass(frozen=True)
class SimConfig:
    """Everything that defines one synthetic run.

    Difficulties come from explicit_difficulties when given, otherwise
    from N(difficulty_mean, difficulty_std). Question concept-count
    vectors draw a total in [min_concepts_per_question,
    max_concepts_per_question] and spread it over uniformly chosen
    concepts (with replacement, so counts above 1 happen). Each question
    gets a type sampled from type_weights, and guess_probs maps type to
    guessing probability.
    """

    num_concepts: int = 10
    num_questions: int = 5000
    num_epochs: int = 40
    batch_per_epoch: int = 1000
    difficulty_mean: float = 0.0
    difficulty_std: float = 1.0
    explicit_difficulties: tuple[float, ...] | None = None
    initial_competence: float = -2.2
    learning_gain: float = 0.0015
    competence_cap: float = 6.0
    min_concepts_per_question: int = 1
    max_concepts_per_question: int = 5
    guess_probs: dict[str, float] = field(default_factory=lambda: {"open": 0.0})
    type_weights: dict[str, float] | None = None
    warm_start_fits: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.num_concepts < 1 or self.num_questions < 1:
            raise ValueError("num_concepts and num_questions must be positive")
        if self.num_epochs < 0 or self.batch_per_epoch < 1:
            raise ValueError("num_epochs must be >= 0 and batch_per_epoch >= 1")
        if self.learning_gain <= 0:
            raise ValueError("learning_gain must be positive")
        if not self.initial_competence < self.competence_cap:
            raise ValueError("initial_competence must be below competence_cap")
        if not 1 <= self.min_concepts_per_question <= self.max_concepts_per_question:
            raise ValueError("concept-count range must satisfy 1 <= min <= max")
        if self.explicit_difficulties is not None and len(self.explicit_difficulties) != self.num_concepts:
            raise ValueError("explicit_difficulties must have num_concepts entries")
        if self.difficulty_std <= 0:
            raise ValueError("difficulty_std must be positive")
        if not self.guess_probs:
            raise ValueError("guess_probs must name at least one question type")
        for name, g in self.guess_probs.items():
            if not 0.0 <= g < 1.0:
                raise ValueError(f"guess probability for type {name!r} must lie in [0, 1)")
        if self.type_weights is not None:
            if set(self.type_weights) != set(self.guess_probs):
                raise ValueError("type_weights must cover exactly the guess_probs types")
            if any(w < 0 for w in self.type_weights.values()) or sum(self.type_weights.values()) <= 0:
                raise ValueError("type_weights must be non-negative and sum to > 0")


@dataclass(frozen=True)
class SimLearnerState:
    """Ground truth the estimator never sees directly."""

    true_theta: np.ndarray
    exposure_counts: np.ndarray
    epoch: int = 0


@dataclass
class EpochRecord:
    epoch: int
    stage: str
    selected_count: int
    mean_concept_count: float | None
    batch_size: int
    train_accuracy: float | None
    true_theta: list[float]
    true_difficulties: list[float]
    estimated_theta: list[float] | None
    estimated_b: list[float] | None
    estimated_b_std: list[float] | None
    fit_elbo: float | None
    fit_iterations: int | None
    fit_converged: bool | None


@dataclass
class SimTrace:
    records: list[EpochRecord]

    @property
    def num_epochs(self) -> int:
        return len(self.records)


def initial_state(config: SimConfig) -> SimLearnerState:
    return SimLearnerState(
        true_theta=np.full(config.num_concepts, float(config.initial_competence)),
        exposure_counts=np.zeros(config.num_concepts, dtype=np.int64),
        epoch=0,
    )


def generate_bank(
    config: SimConfig, rng: np.random.Generator
) -> tuple[QuestionBank, np.ndarray]:
    """Draw the question pool and the ground-truth difficulties."""
    c = config.num_concepts
    if config.explicit_difficulties is not None:
        difficulties = np.asarray(config.explicit_difficulties, dtype=float)
    else:
        difficulties = rng.normal(config.difficulty_mean, config.difficulty_std, size=c)

    totals = rng.integers(
        config.min_concepts_per_question,
        config.max_concepts_per_question + 1,
        size=config.num_questions,
    )
    counts = np.zeros((config.num_questions, c), dtype=np.int64)
    for j, total in enumerate(totals):
        picks = rng.integers(0, c, size=int(total))
        counts[j] = np.bincount(picks, minlength=c)

    types = sorted(config.guess_probs)
    if config.type_weights is None:
        weights = np.full(len(types), 1.0 / len(types))
    else:
        weights = np.array([config.type_weights[t] for t in types], dtype=float)
        weights = weights / weights.sum()
    type_draw = rng.choice(len(types), size=config.num_questions, p=weights)
    guess = np.array([config.guess_probs[types[k]] for k in type_draw])

    width = max(4, len(str(config.num_questions - 1)))
    ids = [f"q{j:0{width}d}" for j in range(config.num_questions)]
    return QuestionBank(
        concept_names=[f"concept{c_i:03d}" for c_i in range(c)],
        question_ids=ids,
        concept_counts=counts,
        guess_probs=guess,
    ), difficulties


def respond(
    state: SimLearnerState,
    bank: QuestionBank,
    question_ids: Sequence[str],
    ground_truth: np.ndarray,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Bernoulli responses of the learner to the given questions.

    Success probability is the conjunctive model at the true parameters,
    guessing included. Returns (question_indices, correct) aligned with
    question_ids order.
    """
    try:
        indices = np.array([bank.index_of(q) for q in question_ids], dtype=np.int64)
    except KeyError as exc:
        raise UnknownQuestionError(f"question id {exc.args[0]!r} not in bank") from None
    logp = log_concept_probs(state.true_theta, np.asarray(ground_truth, dtype=float))
    log_product = bank.concept_counts[indices] @ logp
    g = bank.guess_probs[indices]
    prob = g + (1.0 - g) * np.exp(log_product)
    correct = rng.random(indices.size) < prob
    return indices, correct


def train_step(
    state: SimLearnerState,
    selected_question_ids: Sequence[str],
    bank: QuestionBank,
    config: SimConfig,
) -> SimLearnerState:
    """One epoch of training: competence rises with per-concept exposure.

    Each occurrence of a concept in the batch adds learning_gain to that
    concept's true competence, clamped at competence_cap. Competence
    never decreases.
    """
    if len(selected_question_ids) == 0:
        raise EmptySelectionError("cannot train on an empty selection")
    try:
        indices = [bank.index_of(q) for q in selected_question_ids]
    except KeyError as exc:
        raise UnknownQuestionError(f"question id {exc.args[0]!r} not in bank") from None
    exposure = bank.concept_counts[indices].sum(axis=0)
    new_theta = np.minimum(
        state.true_theta + config.learning_gain * exposure, config.competence_cap
    )
    return SimLearnerState(
        true_theta=new_theta,
        exposure_counts=state.exposure_counts + exposure,
        epoch=state.epoch + 1,
    )


def run_loop(
    config: SimConfig,
    curriculum: CurriculumConfig,
    fit_config: FitConfig,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> SimTrace:
    """Run the full select/train/respond/fit loop and collect the trace.

    Stops early when selection comes back empty (recorded as a final
    exhausted epoch). A non-finite fit propagates; records emitted so
    far have already been delivered to on_epoch.
    """
    rng = np.random.default_rng(config.seed)
    bank, true_b = generate_bank(config, rng)
    state = initial_state(config)
    responses = ResponseMatrix()
    post: PosteriorParams | None = None
    prior = PriorSpec()
    records: list[EpochRecord] = []

    for epoch in range(config.num_epochs):
        report = None
        if epoch > 0:
            epoch_fit = replace(fit_config, seed=fit_config.seed + epoch)
            post, report = fit(
                responses,
                bank,
                prior,
                epoch_fit,
                warm_start=post if config.warm_start_fits else None,
            )
        sel = select(bank, post, curriculum, epoch)

        mean_cc = None
        if sel.selected:
            totals = bank.total_concepts
            mean_cc = float(
                np.mean([totals[bank.index_of(q)] for q in sel.selected])
            )

        if not sel.selected:
            record = _make_record(epoch, sel, mean_cc, 0, None, state, true_b, post, report)
            records.append(record)
            if on_epoch:
                on_epoch(record)
            break

        batch_ids = _draw_batch(sel.selected, config.batch_per_epoch, rng)
        state = train_step(state, batch_ids, bank, config)
        indices, correct = respond(state, bank, batch_ids, true_b, rng)
        responses.add_snapshot(indices, correct)

        record = _make_record(
            epoch, sel, mean_cc, len(batch_ids), float(correct.mean()), state, true_b, post, report
        )
        records.append(record)
        if on_epoch:
            on_epoch(record)

    return SimTrace(records)


def _draw_batch(selected: list[str], batch_size: int, rng: np.random.Generator) -> list[str]:
    if len(selected) <= batch_size:
        return list(selected)
    picks = rng.choice(len(selected), size=batch_size, replace=False)
    return [selected[k] for k in np.sort(picks)]


def _make_record(
    epoch: int,
    sel: SelectionResult,
    mean_cc: float | None,
    batch_size: int,
    accuracy: float | None,
    state: SimLearnerState,
    true_b: np.ndarray,
    post: PosteriorParams | None,
    report,
) -> EpochRecord:
    return EpochRecord(
        epoch=epoch,
        stage=sel.stage,
        selected_count=len(sel.selected),
        mean_concept_count=mean_cc,
        batch_size=batch_size,
        train_accuracy=accuracy,
        true_theta=[float(v) for v in state.true_theta],
        true_difficulties=[float(v) for v in true_b],
        estimated_theta=(
            [float(v) for v in post.theta_mean[-1]] if post is not None else None
        ),
        estimated_b=[float(v) for v in post.b_mean] if post is not None else None,
        estimated_b_std=(
            [float(v) for v in np.exp(post.b_log_std)] if post is not None else None
        ),
        fit_elbo=float(report.elbo_trace[-1]) if report is not None else None,
        fit_iterations=report.iterations_run if report is not None else None,
        fit_converged=report.converged if report is not None else None,
    )
