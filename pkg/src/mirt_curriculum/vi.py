"""Mean-field Gaussian variational fit of the conjunctive IRT model.

The posterior over every competence theta_ic and difficulty b_c is one
independent Gaussian factor, parameterized by (mean, log_stddev). The
objective is the evidence lower bound: a Monte Carlo estimate of the
expected data log-likelihood (pathwise, via theta = mu + exp(log_std) *
eps) minus the exact sum of per-factor Gaussian KL terms against the
prior. Maximized with Adam; fully deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .irt import QuestionBank, ResponseMatrix, _loglik_kernel, _prepare


class NonFiniteObjectiveError(ArithmeticError):
    """The ELBO or its gradient became non-finite (diverged fit or corrupt data)."""


@dataclass(frozen=True)
class PriorSpec:
    """Independent Gaussian priors for competences and difficulties."""

    theta_mean: float = 0.0
    theta_std: float = 1.0
    b_mean: float = 0.0
    b_std: float = 1.0

    def __post_init__(self):
        if self.theta_std <= 0 or self.b_std <= 0:
            raise ValueError("prior stddevs must be positive")


@dataclass(frozen=True)
class FitConfig:
    learning_rate: float = 0.1
    max_iters: int = 1000
    mc_samples: int = 4
    seed: int = 0
    convergence_window: int = 50
    convergence_tol: float = 1e-4

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_iters < 1 or self.mc_samples < 1:
            raise ValueError("max_iters and mc_samples must be at least 1")
        if self.convergence_window < 2:
            raise ValueError("convergence_window must be at least 2")


@dataclass
class PosteriorParams:
    """Factor grids of the mean-field posterior.

    theta_mean / theta_log_std are (M, C); b_mean / b_log_std are (C,).
    A fitted instance is plain data: immutable by convention and safe to
    share across threads.
    """

    theta_mean: np.ndarray
    theta_log_std: np.ndarray
    b_mean: np.ndarray
    b_log_std: np.ndarray

    def __post_init__(self):
        self.theta_mean = np.asarray(self.theta_mean, dtype=float)
        self.theta_log_std = np.asarray(self.theta_log_std, dtype=float)
        self.b_mean = np.asarray(self.b_mean, dtype=float)
        self.b_log_std = np.asarray(self.b_log_std, dtype=float)
        if self.theta_mean.ndim != 2 or self.theta_mean.shape != self.theta_log_std.shape:
            raise ValueError("theta factor grids must be matching (M, C) arrays")
        c = self.theta_mean.shape[1]
        if self.b_mean.shape != (c,) or self.b_log_std.shape != (c,):
            raise ValueError("difficulty factors must be length-C vectors")

    @property
    def num_snapshots(self) -> int:
        return self.theta_mean.shape[0]

    @property
    def num_concepts(self) -> int:
        return self.theta_mean.shape[1]

    @classmethod
    def from_prior(cls, num_snapshots: int, num_concepts: int, prior: PriorSpec) -> "PosteriorParams":
        return cls(
            theta_mean=np.full((num_snapshots, num_concepts), prior.theta_mean),
            theta_log_std=np.full((num_snapshots, num_concepts), np.log(prior.theta_std)),
            b_mean=np.full(num_concepts, prior.b_mean),
            b_log_std=np.full(num_concepts, np.log(prior.b_std)),
        )

    def expanded(self, num_snapshots: int, prior: PriorSpec) -> "PosteriorParams":
        """Copy with new snapshot rows appended, initialized at the prior."""
        if num_snapshots < self.num_snapshots:
            raise ValueError("cannot shrink the snapshot axis")
        extra = num_snapshots - self.num_snapshots
        return PosteriorParams(
            theta_mean=np.vstack(
                [self.theta_mean, np.full((extra, self.num_concepts), prior.theta_mean)]
            ),
            theta_log_std=np.vstack(
                [self.theta_log_std, np.full((extra, self.num_concepts), np.log(prior.theta_std))]
            ),
            b_mean=self.b_mean.copy(),
            b_log_std=self.b_log_std.copy(),
        )

    def copy(self) -> "PosteriorParams":
        return PosteriorParams(
            self.theta_mean.copy(),
            self.theta_log_std.copy(),
            self.b_mean.copy(),
            self.b_log_std.copy(),
        )


@dataclass
class FitReport:
    elbo_trace: np.ndarray
    iterations_run: int
    converged: bool


@dataclass
class ElboGradient:
    """Gradient of the ELBO, one array per PosteriorParams field."""

    theta_mean: np.ndarray
    theta_log_std: np.ndarray
    b_mean: np.ndarray
    b_log_std: np.ndarray


def gaussian_kl(mean, log_std, prior_mean, prior_std):
    """KL(N(mean, exp(log_std)) || N(prior_mean, prior_std)), elementwise.

    Non-negative; zero exactly when the two distributions coincide.
    """
    log_std = np.asarray(log_std, dtype=float)
    with np.errstate(over="ignore"):
        var = np.exp(2.0 * log_std)
        return (
            np.log(prior_std)
            - log_std
            + (var + (np.asarray(mean, dtype=float) - prior_mean) ** 2) / (2.0 * prior_std**2)
            - 0.5
        )


def _kl_total_and_grads(post: PosteriorParams, prior: PriorSpec, want_grad: bool):
    kl = float(
        np.sum(gaussian_kl(post.theta_mean, post.theta_log_std, prior.theta_mean, prior.theta_std))
        + np.sum(gaussian_kl(post.b_mean, post.b_log_std, prior.b_mean, prior.b_std))
    )
    if not want_grad:
        return kl, None
    with np.errstate(over="ignore"):
        grads = ElboGradient(
            theta_mean=(post.theta_mean - prior.theta_mean) / prior.theta_std**2,
            theta_log_std=np.exp(2.0 * post.theta_log_std) / prior.theta_std**2 - 1.0,
            b_mean=(post.b_mean - prior.b_mean) / prior.b_std**2,
            b_log_std=np.exp(2.0 * post.b_log_std) / prior.b_std**2 - 1.0,
        )
    return kl, grads


def _elbo_impl(post, prior, prep, rng, mc_samples, want_grad):
    """Shared Monte Carlo ELBO path for estimate and gradient.

    Draws eps for theta then for b, per sample, so the estimate and the
    pathwise gradient consume identical randomness from an identically
    seeded generator (common random numbers).
    """
    m, c = post.num_snapshots, post.num_concepts
    with np.errstate(over="ignore"):
        theta_std = np.exp(post.theta_log_std)
        b_std = np.exp(post.b_log_std)

    ll_mean = 0.0
    g_theta_mu = np.zeros((m, c)) if want_grad else None
    g_theta_ls = np.zeros((m, c)) if want_grad else None
    g_b_mu = np.zeros(c) if want_grad else None
    g_b_ls = np.zeros(c) if want_grad else None

    for _ in range(mc_samples):
        eps_theta = rng.standard_normal((m, c))
        eps_b = rng.standard_normal(c)
        with np.errstate(invalid="ignore"):
            theta = post.theta_mean + theta_std * eps_theta
            b = post.b_mean + b_std * eps_b
        ll, d_theta, d_b = _loglik_kernel(theta, b, prep, want_grad)
        ll_mean += ll / mc_samples
        if want_grad:
            with np.errstate(invalid="ignore"):
                g_theta_mu += d_theta / mc_samples
                g_theta_ls += d_theta * (theta_std * eps_theta) / mc_samples
                g_b_mu += d_b / mc_samples
                g_b_ls += d_b * (b_std * eps_b) / mc_samples

    kl, kl_grads = _kl_total_and_grads(post, prior, want_grad)
    elbo = ll_mean - kl
    if not want_grad:
        return elbo, None
    grad = ElboGradient(
        theta_mean=g_theta_mu - kl_grads.theta_mean,
        theta_log_std=g_theta_ls - kl_grads.theta_log_std,
        b_mean=g_b_mu - kl_grads.b_mean,
        b_log_std=g_b_ls - kl_grads.b_log_std,
    )
    return elbo, grad


def _prepared(post, responses, bank):
    if post.num_concepts != bank.num_concepts:
        from .irt import DimensionMismatchError

        raise DimensionMismatchError(
            f"posterior has {post.num_concepts} concepts but bank has {bank.num_concepts}"
        )
    return _prepare(responses, bank, post.num_snapshots)


def elbo_estimate(
    post: PosteriorParams,
    prior: PriorSpec,
    responses: ResponseMatrix,
    bank: QuestionBank,
    rng: np.random.Generator,
    mc_samples: int,
) -> float:
    """Monte Carlo ELBO: E_q[log p(Z | theta, b)] estimate minus the exact KL.

    Unbiased in the likelihood term; deterministic given the generator
    state.
    """
    prep = _prepared(post, responses, bank)
    elbo, _ = _elbo_impl(post, prior, prep, rng, mc_samples, want_grad=False)
    return elbo


def elbo_grad(
    post: PosteriorParams,
    prior: PriorSpec,
    responses: ResponseMatrix,
    bank: QuestionBank,
    rng: np.random.Generator,
    mc_samples: int,
) -> ElboGradient:
    """Pathwise gradient of the same MC objective elbo_estimate evaluates.

    With an identically seeded generator this is the exact gradient of
    elbo_estimate's value, so central finite differences under common
    random numbers reproduce it.
    """
    prep = _prepared(post, responses, bank)
    _, grad = _elbo_impl(post, prior, prep, rng, mc_samples, want_grad=True)
    return grad


class _Adam:
    """Adaptive-moment ascent on a list of parameter arrays."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p += self.lr * (self.m[i] / bc1) / (np.sqrt(self.v[i] / bc2) + self.eps)


def smoothed_trace(trace: np.ndarray, window: int) -> np.ndarray:
    """Trailing-window means of an ELBO trace; entry t averages trace[t-w+1 .. t]."""
    trace = np.asarray(trace, dtype=float)
    out = np.empty_like(trace)
    csum = np.concatenate([[0.0], np.cumsum(trace)])
    for t in range(trace.size):
        lo = max(0, t - window + 1)
        out[t] = (csum[t + 1] - csum[lo]) / (t + 1 - lo)
    return out


def _converged(trace: list, window: int, tol: float) -> bool:
    """Window-averaged ELBO moved less than tol (relative) across the last window."""
    t = len(trace)
    if t < window:
        return False
    half = window // 2
    prev = float(np.mean(trace[t - window : t - half]))
    recent = float(np.mean(trace[t - half : t]))
    return abs(recent - prev) <= tol * max(abs(prev), 1e-12)


def fit(
    responses: ResponseMatrix,
    bank: QuestionBank,
    prior: PriorSpec | None = None,
    config: FitConfig | None = None,
    warm_start: PosteriorParams | None = None,
) -> tuple[PosteriorParams, FitReport]:
    """Maximize the ELBO and return the fitted posterior with its trace.

    The posterior has one theta row per snapshot in `responses`. A
    warm_start posterior may cover fewer snapshots; new rows are appended
    and initialized at the prior. Raises NonFiniteObjectiveError if the
    objective diverges (typically a too-large learning rate).
    """
    prior = prior if prior is not None else PriorSpec()
    config = config if config is not None else FitConfig()
    m, c = responses.num_snapshots, bank.num_concepts
    prep = _prepare(responses, bank, m)

    if warm_start is not None:
        if warm_start.num_concepts != c:
            raise ValueError(
                f"warm_start covers {warm_start.num_concepts} concepts, bank has {c}"
            )
        post = warm_start.expanded(m, prior)
    else:
        post = PosteriorParams.from_prior(m, c, prior)

    params = [post.theta_mean, post.theta_log_std, post.b_mean, post.b_log_std]
    rng = np.random.default_rng(config.seed)
    adam = _Adam(params, config.learning_rate)
    trace: list[float] = []
    converged = False

    for _ in range(config.max_iters):
        elbo, grad = _elbo_impl(post, prior, prep, rng, config.mc_samples, want_grad=True)
        if not np.isfinite(elbo):
            raise NonFiniteObjectiveError(
                f"ELBO became non-finite at iteration {len(trace) + 1}"
            )
        adam.step(
            params, [grad.theta_mean, grad.theta_log_std, grad.b_mean, grad.b_log_std]
        )
        trace.append(elbo)
        if _converged(trace, config.convergence_window, config.convergence_tol):
            converged = True
            break

    if not all(np.all(np.isfinite(p)) for p in params):
        raise NonFiniteObjectiveError("posterior parameters became non-finite")
    report = FitReport(
        elbo_trace=np.asarray(trace), iterations_run=len(trace), converged=converged
    )
    return post, report
