"""Finite-difference verification of the analytic gradients.

Randomized small instances, central differences with step 1e-5, and a
relative-error metric floored at 1e-3 in the denominator so exact-zero
gradient components do not divide FD noise by itself. The ELBO check
re-seeds one generator per evaluation, so the Monte Carlo objective is
a fixed deterministic function and its pathwise gradient must match
finite differences of it (common random numbers).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .irt import QuestionBank, ResponseMatrix, log_likelihood, log_likelihood_grad
from .vi import PosteriorParams, PriorSpec, elbo_estimate, elbo_grad

FD_STEP = 1e-5
ERR_FLOOR = 1e-3


@dataclass
class GradCheckReport:
    name: str
    trials: int
    tol: float
    worst_rel_err: float = 0.0
    failures: list[tuple[int, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        line = (
            f"gradcheck {self.name}: trials={self.trials} "
            f"worst_rel_err={self.worst_rel_err:.3e} tol={self.tol:g} {verdict}"
        )
        if self.failures:
            seeds = ", ".join(str(s) for s, _ in self.failures[:10])
            line += f" (failing instance seeds: {seeds})"
        return line


def _rel_err(analytic: float, fd: float) -> float:
    return abs(analytic - fd) / max(abs(analytic), abs(fd), ERR_FLOOR)


def _random_instance(seed: int, max_m=5, max_n=10, max_c=4):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, max_m + 1))
    n = int(rng.integers(2, max_n + 1))
    c = int(rng.integers(1, max_c + 1))

    counts = rng.integers(0, 3, size=(n, c))
    empty = counts.sum(axis=1) == 0
    counts[empty, rng.integers(0, c, size=int(empty.sum()))] = 1
    guess = np.where(rng.random(n) < 0.4, 0.0, rng.uniform(0.0, 0.6, size=n))
    bank = QuestionBank(
        [f"k{j}" for j in range(c)], [f"q{j}" for j in range(n)], counts, guess
    )

    present = rng.random((m, n)) < 0.7
    if not present.any():
        present[0, 0] = True
    snaps, quests = np.nonzero(present)
    correct = rng.random(snaps.size) < 0.5
    responses = ResponseMatrix(m, snaps, quests, correct)

    theta = rng.normal(0.0, 1.0, size=(m, c))
    b = rng.normal(0.0, 1.0, size=c)
    return bank, responses, theta, b, rng


def check_likelihood_gradients(trials: int = 100, tol: float = 1e-5, seed: int = 0) -> GradCheckReport:
    """Compare log_likelihood_grad with central differences of log_likelihood."""
    report = GradCheckReport("likelihood", trials, tol)
    for trial in range(trials):
        instance_seed = seed + trial
        bank, responses, theta, b, _ = _random_instance(instance_seed)
        grad_theta, grad_b = log_likelihood_grad(responses, theta, b, bank)

        worst = 0.0
        for arr, grad in ((theta, grad_theta), (b, grad_b)):
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + FD_STEP
                hi = log_likelihood(responses, theta, b, bank)
                arr[idx] = orig - FD_STEP
                lo = log_likelihood(responses, theta, b, bank)
                arr[idx] = orig
                worst = max(worst, _rel_err(grad[idx], (hi - lo) / (2 * FD_STEP)))
        report.worst_rel_err = max(report.worst_rel_err, worst)
        if worst >= tol:
            report.failures.append((instance_seed, worst))
    return report


def check_elbo_gradients(
    trials: int = 100, tol: float = 1e-4, seed: int = 0, mc_samples: int = 2
) -> GradCheckReport:
    """Compare elbo_grad with central differences of elbo_estimate.

    Every evaluation uses a freshly seeded generator with the same seed,
    so perturbed evaluations share the reparameterization noise.
    """
    report = GradCheckReport("elbo", trials, tol)
    prior = PriorSpec()
    for trial in range(trials):
        instance_seed = seed + trial
        bank, responses, theta, b, rng = _random_instance(instance_seed, max_m=3, max_n=6, max_c=3)
        post = PosteriorParams(
            theta_mean=theta,
            theta_log_std=rng.uniform(-1.5, 0.3, size=theta.shape),
            b_mean=b,
            b_log_std=rng.uniform(-1.5, 0.3, size=b.shape),
        )

        def value() -> float:
            return elbo_estimate(
                post, prior, responses, bank, np.random.default_rng(instance_seed), mc_samples
            )

        grad = elbo_grad(
            post, prior, responses, bank, np.random.default_rng(instance_seed), mc_samples
        )

        worst = 0.0
        for arr, g in (
            (post.theta_mean, grad.theta_mean),
            (post.theta_log_std, grad.theta_log_std),
            (post.b_mean, grad.b_mean),
            (post.b_log_std, grad.b_log_std),
        ):
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + FD_STEP
                hi = value()
                arr[idx] = orig - FD_STEP
                lo = value()
                arr[idx] = orig
                worst = max(worst, _rel_err(g[idx], (hi - lo) / (2 * FD_STEP)))
        report.worst_rel_err = max(report.worst_rel_err, worst)
        if worst >= tol:
            report.failures.append((instance_seed, worst))
    return report
