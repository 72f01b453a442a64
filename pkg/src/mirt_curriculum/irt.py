"""Conjunctive multidimensional IRT probability kernel.

Pure closed-form quantities: the classic three-parameter logistic item
model, per-concept logistic success probabilities, conjunctive question
probabilities (product over concepts, with a question-level guessing
floor), and the exact log-likelihood of a sparse response matrix plus
its analytic gradient.

Everything here is a pure function of its inputs and safe to call from
multiple threads. Likelihood sums over disjoint entry subsets combine
associatively up to floating-point reassociation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

# Per-concept log-probabilities are clamped here (just above the float64
# underflow of exp) so saturated-negative competences keep finite values.
LOG_PROB_FLOOR = -745.0


class DimensionMismatchError(ValueError):
    """Ability, difficulty, and question vectors disagree on the concept count."""


@dataclass(frozen=True)
class ThreePLItem:
    """Item parameters of the three-parameter logistic model."""

    discrimination: float
    difficulty: float
    guess: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.discrimination) and np.isfinite(self.difficulty)):
            raise ValueError("item parameters must be finite")
        if not 0.0 <= self.guess < 1.0:
            raise ValueError(f"guess must lie in [0, 1), got {self.guess}")


def logistic_3pl(item: ThreePLItem, ability: float) -> float:
    """P(correct) = c + (1-c) / (1 + exp(-a*(theta-b))).

    The guessing parameter c is the asymptotic minimum; the result lies
    in [c, 1).
    """
    return item.guess + (1.0 - item.guess) * float(
        expit(item.discrimination * (ability - item.difficulty))
    )


def concept_prob(theta_ic: float, b_c: float) -> float:
    """Probability of recognizing one concept: sigma(theta - b)."""
    return float(expit(theta_ic - b_c))


def log_concept_probs(theta: np.ndarray, difficulties: np.ndarray) -> np.ndarray:
    """Elementwise log sigma(theta - b), floored at LOG_PROB_FLOOR."""
    p = expit(np.asarray(theta, dtype=float) - np.asarray(difficulties, dtype=float))
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    return np.maximum(logp, LOG_PROB_FLOOR)


class QuestionBank:
    """Concept-count vectors and guessing probabilities for a question pool.

    Args:
        concept_names: unique names for the C concepts.
        question_ids: unique opaque identifiers, one per question.
        concept_counts: (N, C) non-negative integers; row j holds how many
            times each concept occurs in question j. Every row must have
            at least one nonzero count.
        guess_probs: (N,) floats in [0, 1), the chance of answering each
            question correctly by guessing alone.
    """

    def __init__(
        self,
        concept_names: Sequence[str],
        question_ids: Sequence[str],
        concept_counts: np.ndarray,
        guess_probs: np.ndarray,
    ):
        self.concept_names = tuple(str(n) for n in concept_names)
        if len(set(self.concept_names)) != len(self.concept_names):
            raise ValueError("concept names must be unique")
        if not self.concept_names:
            raise ValueError("need at least one concept")
        self.question_ids = tuple(str(q) for q in question_ids)
        if len(set(self.question_ids)) != len(self.question_ids):
            raise ValueError("question ids must be unique")

        counts = np.asarray(concept_counts)
        if counts.ndim != 2 or counts.shape != (len(self.question_ids), len(self.concept_names)):
            raise DimensionMismatchError(
                f"concept_counts must have shape ({len(self.question_ids)}, "
                f"{len(self.concept_names)}), got {counts.shape}"
            )
        if np.any(counts < 0) or not np.issubdtype(counts.dtype, np.integer):
            raise ValueError("concept counts must be non-negative integers")
        row_totals = counts.sum(axis=1)
        if np.any(row_totals == 0):
            j = int(np.argmax(row_totals == 0))
            raise ValueError(
                f"question {self.question_ids[j]!r} references no concepts; "
                "its difficulty would be undefined"
            )

        guess = np.asarray(guess_probs, dtype=float)
        if guess.shape != (len(self.question_ids),):
            raise DimensionMismatchError("guess_probs must have one entry per question")
        if np.any(guess < 0.0) or np.any(guess >= 1.0):
            raise ValueError("guess probabilities must lie in [0, 1)")

        self.concept_counts = counts.astype(np.int64)
        self.concept_counts.setflags(write=False)
        self.guess_probs = guess
        self.guess_probs.setflags(write=False)
        self._index = {q: j for j, q in enumerate(self.question_ids)}

    @property
    def num_concepts(self) -> int:
        return len(self.concept_names)

    @property
    def num_questions(self) -> int:
        return len(self.question_ids)

    @property
    def total_concepts(self) -> np.ndarray:
        """(N,) total concept count per question (sum of the count vector)."""
        return self.concept_counts.sum(axis=1)

    def index_of(self, question_id: str) -> int:
        return self._index[question_id]

    def __repr__(self):
        return (
            f"QuestionBank(num_questions={self.num_questions}, "
            f"num_concepts={self.num_concepts})"
        )


class ResponseMatrix:
    """Sparse set of (snapshot, question, correct) observations.

    Missing (snapshot, question) pairs mean "no response" and contribute
    nothing to the likelihood. At most one entry per pair. Entries are
    kept sorted by (snapshot, question) so results do not depend on
    insertion order.
    """

    def __init__(
        self,
        num_snapshots: int = 0,
        snapshots: Iterable[int] = (),
        questions: Iterable[int] = (),
        correct: Iterable[bool] = (),
    ):
        snaps = np.asarray(list(snapshots), dtype=np.int64)
        quests = np.asarray(list(questions), dtype=np.int64)
        corr = np.asarray(list(correct), dtype=bool)
        if not (snaps.shape == quests.shape == corr.shape):
            raise ValueError("snapshots, questions, and correct must have equal length")
        if snaps.size and snaps.min() < 0:
            raise ValueError("snapshot indices must be non-negative")
        if quests.size and quests.min() < 0:
            raise ValueError("question indices must be non-negative")
        inferred = int(snaps.max()) + 1 if snaps.size else 0
        self.num_snapshots = max(int(num_snapshots), inferred)

        order = np.lexsort((quests, snaps))
        self._snapshots = snaps[order]
        self._questions = quests[order]
        self._correct = corr[order]
        self._check_unique()

    def _check_unique(self):
        if self._snapshots.size < 2:
            return
        same = (np.diff(self._snapshots) == 0) & (np.diff(self._questions) == 0)
        if np.any(same):
            k = int(np.argmax(same))
            raise ValueError(
                f"duplicate response for snapshot {self._snapshots[k]}, "
                f"question index {self._questions[k]}"
            )

    @property
    def snapshots(self) -> np.ndarray:
        return self._snapshots

    @property
    def questions(self) -> np.ndarray:
        return self._questions

    @property
    def correct(self) -> np.ndarray:
        return self._correct

    @property
    def num_entries(self) -> int:
        return int(self._snapshots.size)

    def add_snapshot(self, question_indices: Iterable[int], correct: Iterable[bool]) -> int:
        """Append one snapshot row of responses; returns the new snapshot index."""
        quests = np.asarray(list(question_indices), dtype=np.int64)
        corr = np.asarray(list(correct), dtype=bool)
        if quests.shape != corr.shape:
            raise ValueError("question_indices and correct must have equal length")
        if quests.size and len(np.unique(quests)) != quests.size:
            raise ValueError("duplicate question within one snapshot row")
        snap = self.num_snapshots
        order = np.argsort(quests, kind="stable")
        self._snapshots = np.concatenate([self._snapshots, np.full(quests.size, snap)])
        self._questions = np.concatenate([self._questions, quests[order]])
        self._correct = np.concatenate([self._correct, corr[order]])
        self.num_snapshots = snap + 1
        return snap

    def copy(self) -> "ResponseMatrix":
        return ResponseMatrix(
            self.num_snapshots, self._snapshots.copy(), self._questions.copy(), self._correct.copy()
        )

    def __repr__(self):
        return (
            f"ResponseMatrix(num_snapshots={self.num_snapshots}, "
            f"num_entries={self.num_entries})"
        )


def _check_dims(abilities: np.ndarray, difficulties: np.ndarray, num_concepts: int):
    if abilities.ndim != 2 or abilities.shape[1] != num_concepts:
        raise DimensionMismatchError(
            f"abilities must be (M, {num_concepts}), got {abilities.shape}"
        )
    if difficulties.shape != (num_concepts,):
        raise DimensionMismatchError(
            f"difficulties must have length {num_concepts}, got {difficulties.shape}"
        )


def answer_prob(
    ability: np.ndarray,
    difficulties: np.ndarray,
    concept_counts: np.ndarray,
    guess_prob: float = 0.0,
    include_guess: bool = True,
) -> float:
    """Probability that one snapshot answers one question correctly.

    With guessing: g + (1-g) * prod_c sigma(theta_c - b_c)^q_c.
    Without: the bare conjunctive product, which is also the curriculum
    selection score before taking logs. The product is evaluated in log
    space so questions with many concepts cannot underflow pairwise.
    """
    ability = np.asarray(ability, dtype=float)
    difficulties = np.asarray(difficulties, dtype=float)
    counts = np.asarray(concept_counts)
    if not (ability.shape == difficulties.shape == counts.shape) or ability.ndim != 1:
        raise DimensionMismatchError(
            "ability, difficulties, and concept_counts must be equal-length vectors"
        )
    if not (np.all(np.isfinite(ability)) and np.all(np.isfinite(difficulties))):
        raise ValueError("ability and difficulty values must be finite")
    if not 0.0 <= guess_prob < 1.0:
        raise ValueError(f"guess_prob must lie in [0, 1), got {guess_prob}")

    log_product = float(np.dot(counts, log_concept_probs(ability, difficulties)))
    product = float(np.exp(log_product))
    if include_guess:
        return guess_prob + (1.0 - guess_prob) * product
    return product


@dataclass
class _Prepared:
    """Response entries gathered into flat arrays for vectorized evaluation."""

    snapshots: np.ndarray      # (K,) int
    counts: np.ndarray         # (K, C) float
    correct: np.ndarray        # (K,) bool
    guess: np.ndarray          # (K,) float
    log1m_guess: np.ndarray    # (K,) float
    log_guess: np.ndarray      # (K,) float, only meaningful where has_guess
    has_guess: np.ndarray      # (K,) bool
    num_snapshots: int
    num_concepts: int


def _prepare(responses: ResponseMatrix, bank: QuestionBank, num_snapshots: int) -> _Prepared:
    if responses.num_snapshots > num_snapshots:
        raise IndexError(
            f"responses reference snapshot {responses.num_snapshots - 1} but only "
            f"{num_snapshots} ability rows were given"
        )
    if responses.num_entries and int(responses.questions.max()) >= bank.num_questions:
        raise IndexError(
            f"responses reference question index {int(responses.questions.max())} "
            f"but the bank has {bank.num_questions} questions"
        )
    guess = bank.guess_probs[responses.questions]
    has_guess = guess > 0.0
    with np.errstate(divide="ignore"):
        log_guess = np.where(has_guess, np.log(np.where(has_guess, guess, 1.0)), -np.inf)
    return _Prepared(
        snapshots=responses.snapshots,
        counts=bank.concept_counts[responses.questions].astype(float),
        correct=responses.correct,
        guess=guess,
        log1m_guess=np.log1p(-guess),
        log_guess=log_guess,
        has_guess=has_guess,
        num_snapshots=num_snapshots,
        num_concepts=bank.num_concepts,
    )


def _log1mexp(s: np.ndarray) -> np.ndarray:
    """log(1 - exp(s)) for s <= 0, numerically stable on both branches."""
    out = np.empty_like(s)
    small = s < -np.log(2.0)
    out[small] = np.log1p(-np.exp(s[small]))
    with np.errstate(divide="ignore"):
        out[~small] = np.log(-np.expm1(s[~small]))
    return out


def _loglik_kernel(theta: np.ndarray, b: np.ndarray, prep: _Prepared, want_grad: bool):
    """Total log-likelihood over prepared entries, optionally with gradients.

    Returns (ll, grad_theta, grad_b); the gradients are None unless
    requested. The transcendentals only depend on (snapshot, concept),
    so they run on the (M, C) grid and are gathered per entry. Gradients
    are exact derivatives of the implemented (floored) log-probabilities,
    so finite differences of the kernel match them even at the clamp.
    """
    if prep.snapshots.size == 0:
        if want_grad:
            return 0.0, np.zeros((prep.num_snapshots, prep.num_concepts)), np.zeros(prep.num_concepts)
        return 0.0, None, None

    # divide/invalid: log(0) at saturation, and inf-valued params on the
    # divergence path; both resolve downstream (floor / non-finite check)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = theta - b
        p_grid = expit(x)
        logp_grid = np.log(p_grid)
        np.maximum(logp_grid, LOG_PROB_FLOOR, out=logp_grid)

        s = np.einsum("kc,kc->k", prep.counts, logp_grid[prep.snapshots])
        product = np.exp(s)

        ll_correct = np.where(
            prep.has_guess, np.logaddexp(prep.log_guess, prep.log1m_guess + s), s
        )
        ll_wrong = prep.log1m_guess + _log1mexp(s)
        ll = float(np.where(prep.correct, ll_correct, ll_wrong).sum())
        if not want_grad:
            return ll, None, None

        w_correct = np.where(
            prep.has_guess,
            (1.0 - prep.guess) * product / (prep.guess + (1.0 - prep.guess) * product),
            1.0,
        )
        w_wrong = -product / (1.0 - product)
        weight = np.where(prep.correct, w_correct, w_wrong)

        # d(logp)/dx is 1-p off the floor and exactly 0 on it.
        slope_grid = np.where(logp_grid > LOG_PROB_FLOOR, 1.0 - p_grid, 0.0)
        contrib = weight[:, None] * prep.counts * slope_grid[prep.snapshots]

    grad_theta = np.empty((prep.num_snapshots, prep.num_concepts))
    for c in range(prep.num_concepts):
        grad_theta[:, c] = np.bincount(
            prep.snapshots, weights=contrib[:, c], minlength=prep.num_snapshots
        )
    grad_b = -contrib.sum(axis=0)
    return ll, grad_theta, grad_b


def log_likelihood(
    responses: ResponseMatrix,
    abilities: np.ndarray,
    difficulties: np.ndarray,
    bank: QuestionBank,
) -> float:
    """Sum of log p(z_ij) over observed entries; absent pairs contribute nothing."""
    abilities = np.atleast_2d(np.asarray(abilities, dtype=float))
    difficulties = np.asarray(difficulties, dtype=float)
    _check_dims(abilities, difficulties, bank.num_concepts)
    prep = _prepare(responses, bank, abilities.shape[0])
    ll, _, _ = _loglik_kernel(abilities, difficulties, prep, want_grad=False)
    return ll


def log_likelihood_grad(
    responses: ResponseMatrix,
    abilities: np.ndarray,
    difficulties: np.ndarray,
    bank: QuestionBank,
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of log_likelihood.

    Returns (d/d_theta, d/d_b) with shapes (M, C) and (C,).
    """
    abilities = np.atleast_2d(np.asarray(abilities, dtype=float))
    difficulties = np.asarray(difficulties, dtype=float)
    _check_dims(abilities, difficulties, bank.num_concepts)
    prep = _prepare(responses, bank, abilities.shape[0])
    _, grad_theta, grad_b = _loglik_kernel(abilities, difficulties, prep, want_grad=True)
    return grad_theta, grad_b
