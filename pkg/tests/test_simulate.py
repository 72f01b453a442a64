"""Simulated-learner tests: bank generation, responses, training dynamics, loop."""

import dataclasses

import numpy as np
import pytest
from scipy.stats import spearmanr

from mirt_curriculum import (
    EXHAUSTED,
    STAGE_ORDER,
    CurriculumConfig,
    EmptySelectionError,
    SimConfig,
    UnknownQuestionError,
    generate_bank,
    initial_state,
    respond,
    run_loop,
    train_step,
)
from mirt_curriculum.simulate import SimLearnerState
from mirt_curriculum.vi import FitConfig


def tiny_config(**overrides):
    base = dict(
        num_concepts=4,
        num_questions=200,
        num_epochs=12,
        batch_per_epoch=120,
        max_concepts_per_question=4,
        learning_gain=0.02,
        competence_cap=5.0,
        seed=0,
    )
    base.update(overrides)
    return SimConfig(**base)


class TestGenerateBank:
    def test_explicit_difficulties_pass_through(self):
        wanted = (0.3, -0.7, 1.1)
        config = SimConfig(num_concepts=3, num_questions=20, explicit_difficulties=wanted)
        _, difficulties = generate_bank(config, np.random.default_rng(0))
        np.testing.assert_array_equal(difficulties, np.asarray(wanted))

    def test_deterministic_under_seed(self):
        config = SimConfig(num_concepts=10, num_questions=50)
        bank_a, diff_a = generate_bank(config, np.random.default_rng(5))
        bank_b, diff_b = generate_bank(config, np.random.default_rng(5))
        np.testing.assert_array_equal(bank_a.concept_counts, bank_b.concept_counts)
        np.testing.assert_array_equal(bank_a.guess_probs, bank_b.guess_probs)
        np.testing.assert_array_equal(diff_a, diff_b)

    def test_single_concept_questions_when_forced(self):
        config = SimConfig(
            num_concepts=5,
            num_questions=30,
            min_concepts_per_question=1,
            max_concepts_per_question=1,
        )
        bank, _ = generate_bank(config, np.random.default_rng(1))
        assert np.all(bank.total_concepts == 1)

    def test_question_types_drive_guess_probs(self):
        config = SimConfig(
            num_concepts=2,
            num_questions=400,
            guess_probs={"binary": 0.5, "open": 0.0},
        )
        bank, _ = generate_bank(config, np.random.default_rng(2))
        assert set(np.unique(bank.guess_probs)) == {0.0, 0.5}


class TestRespond:
    def test_saturated_learner_answers_everything(self):
        config = SimConfig(num_concepts=3, num_questions=50)
        bank, diff = generate_bank(config, np.random.default_rng(3))
        state = SimLearnerState(np.full(3, 1e6), np.zeros(3, dtype=np.int64))
        _, correct = respond(state, bank, bank.question_ids, diff, np.random.default_rng(0))
        assert correct.all()

    def test_hopeless_learner_hits_guess_floor(self):
        config = SimConfig(
            num_concepts=2, num_questions=40, guess_probs={"binary": 0.5}
        )
        bank, diff = generate_bank(config, np.random.default_rng(4))
        state = SimLearnerState(np.full(2, -1e6), np.zeros(2, dtype=np.int64))
        rng = np.random.default_rng(7)
        draws = [
            respond(state, bank, bank.question_ids[:1] * 1, diff, rng)[1][0]
            for _ in range(10_000)
        ]
        assert np.mean(draws) == pytest.approx(0.5, abs=0.02)

    def test_empirical_rate_matches_conjunctive_probability(self):
        # two concepts counted (2, 1), theta = b, guess 0.25: probability 0.34375
        bank_counts = np.array([[2, 1]])
        from mirt_curriculum import QuestionBank

        bank = QuestionBank(["k0", "k1"], ["q0"], bank_counts, np.array([0.25]))
        state = SimLearnerState(np.zeros(2), np.zeros(2, dtype=np.int64))
        rng = np.random.default_rng(8)
        hits = [
            respond(state, bank, ["q0"], np.zeros(2), rng)[1][0] for _ in range(10_000)
        ]
        assert np.mean(hits) == pytest.approx(0.34375, abs=0.02)

    def test_unknown_question_rejected(self):
        config = SimConfig(num_concepts=2, num_questions=5)
        bank, diff = generate_bank(config, np.random.default_rng(9))
        state = initial_state(config)
        with pytest.raises(UnknownQuestionError):
            respond(state, bank, ["nope"], diff, np.random.default_rng(0))


class TestTrainStep:
    def make(self):
        from mirt_curriculum import QuestionBank

        counts = np.array([[1, 0], [0, 2], [5, 0]])
        bank = QuestionBank(["k0", "k1"], ["a", "b", "c"], counts, np.zeros(3))
        return bank

    def test_unexposed_concept_unchanged(self):
        bank = self.make()
        config = SimConfig(num_concepts=2, num_questions=3, learning_gain=0.01)
        state = SimLearnerState(np.array([-3.0, -3.0]), np.zeros(2, dtype=np.int64))
        new = train_step(state, ["a"], bank, config)
        assert new.true_theta[1] == -3.0
        assert new.true_theta[0] == pytest.approx(-2.99)

    def test_update_arithmetic(self):
        from mirt_curriculum import QuestionBank

        counts = np.full((10, 1), 5, dtype=np.int64)
        bank = QuestionBank(["k0"], [f"q{j}" for j in range(10)], counts, np.zeros(10))
        config = SimConfig(num_concepts=1, num_questions=10, learning_gain=0.01)
        state = SimLearnerState(np.array([-3.0]), np.zeros(1, dtype=np.int64))
        # 10 questions x count 5 = 50 exposures of the concept
        new = train_step(state, bank.question_ids, bank, config)
        assert new.true_theta[0] == pytest.approx(-2.5)
        assert new.exposure_counts[0] == 50
        assert new.epoch == 1

    def test_cap_is_a_fixed_point(self):
        bank = self.make()
        config = SimConfig(
            num_concepts=2, num_questions=3, learning_gain=1.0, competence_cap=0.5
        )
        state = SimLearnerState(np.array([0.0, 0.0]), np.zeros(2, dtype=np.int64))
        for _ in range(5):
            state = train_step(state, ["a", "b", "c"], bank, config)
        np.testing.assert_array_equal(state.true_theta, [0.5, 0.5])

    def test_empty_selection_raises(self):
        bank = self.make()
        config = SimConfig(num_concepts=2, num_questions=3)
        with pytest.raises(EmptySelectionError):
            train_step(initial_state(config), [], bank, config)


class TestRunLoop:
    curriculum = CurriculumConfig(lb_log=-5.0, ub_log=-0.75)
    fit_config = FitConfig()

    def test_saturated_start_stops_at_epoch_one(self):
        config = tiny_config(initial_competence=4.9, competence_cap=5.0)
        trace = run_loop(config, self.curriculum, self.fit_config)
        assert trace.num_epochs == 2
        assert trace.records[0].stage == "seeding"
        assert trace.records[-1].stage == EXHAUSTED
        assert trace.records[-1].selected_count == 0

    def test_zero_epochs_gives_empty_trace(self):
        trace = run_loop(tiny_config(num_epochs=0), self.curriculum, self.fit_config)
        assert trace.records == []

    def test_identical_seeds_identical_traces(self):
        config = tiny_config(num_epochs=4)
        a = run_loop(config, self.curriculum, self.fit_config)
        b = run_loop(config, self.curriculum, self.fit_config)
        assert [dataclasses.asdict(r) for r in a.records] == [
            dataclasses.asdict(r) for r in b.records
        ]

    def test_true_competence_never_decreases(self):
        trace = run_loop(tiny_config(), self.curriculum, self.fit_config)
        thetas = np.array([r.true_theta for r in trace.records])
        assert np.all(np.diff(thetas, axis=0) >= -1e-12)

    def test_full_run_dynamics(self):
        """A complete run visits stages in order, stops early, recovers difficulty."""
        config = tiny_config()
        trace = run_loop(config, self.curriculum, self.fit_config)
        stages = [r.stage for r in trace.records]
        assert trace.records[-1].stage == EXHAUSTED
        assert trace.num_epochs < config.num_epochs  # early stop, not exhaustion of epochs
        ranks = [STAGE_ORDER.index(s) for s in stages]
        assert ranks == sorted(ranks), f"stage regression in {stages}"

    def test_long_run_recovers_difficulty_ranks(self):
        # keep the learner capped low so the curriculum never exhausts and
        # the matrix accumulates 30+ snapshots
        config = tiny_config(
            num_concepts=6,
            num_questions=500,
            num_epochs=32,
            batch_per_epoch=200,
            learning_gain=0.002,
            competence_cap=1.5,
            initial_competence=-2.5,
            seed=5,
        )
        trace = run_loop(config, self.curriculum, self.fit_config)
        assert trace.num_epochs >= 30
        final = trace.records[-1]
        rho = spearmanr(final.estimated_b, final.true_difficulties).statistic
        assert rho >= 0.85
