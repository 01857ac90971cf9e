"""Single-object particle filter steps with conditional moment estimators.

Every step reports a crude estimate of the filtering moment
E[f(X_n) | y_{0:n}], evaluated on freshly drawn samples, and, when the model
admits a closed-form conditional transition kernel, a conditional estimate
that integrates f against that kernel instead of evaluating it at the draws.
Because the weights involved depend only on the previous particle cloud, the
conditional estimate is exactly the conditional expectation of the crude one
given that cloud, so Rao-Blackwellization guarantees its variance is never
larger, whatever the number of particles.

Each step consumes randomness from keyed child streams (proposals, selection)
so that algorithms sharing a seed draw identical proposals even when they
consume different amounts of selection randomness.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .gaussian import sample_gaussians
from .models import MomentFunction, StateSpaceModel
from .rng import RngStream
from .weights import ess, normalize_log_weights, resample_indices

__all__ = [
    "ResamplePolicy",
    "FilterState",
    "StepReport",
    "init_filter",
    "sir_step",
    "fa_step",
    "bootstrap_step",
    "generic_proposal_step",
    "KernelProposal",
    "optimal_kernel_proposal",
    "taylor_proposal",
    "kalman_reference_means",
]

# child-stream keys, shared across all step functions
_PROPOSE = 0
_SELECT = 1

WEIGHT_BLOWUP_THRESHOLD = 0.99


@dataclass(frozen=True)
class ResamplePolicy:
    """When and how to resample: by default, multinomially when the
    effective sample size drops below ess_fraction * n."""

    scheme: str = "multinomial"
    ess_fraction: float = 0.5
    mode: str = "adaptive"  # adaptive | always | never

    def should_resample(self, ess_value: float, n: int) -> bool:
        if self.mode == "always":
            return True
        if self.mode == "never":
            return False
        return ess_value < self.ess_fraction * n

    @classmethod
    def always(cls, scheme: str = "multinomial") -> "ResamplePolicy":
        return cls(scheme=scheme, mode="always")

    @classmethod
    def never(cls) -> "ResamplePolicy":
        return cls(mode="never")


@dataclass
class FilterState:
    """Particle approximation of the current filtering distribution."""

    particles: np.ndarray          # (n, state_dim)
    weights: np.ndarray            # (n,), normalized
    step_index: int = 0

    def __post_init__(self) -> None:
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)

    @property
    def n(self) -> int:
        return self.particles.shape[0]


@dataclass
class StepReport:
    """Per-step estimates and weight diagnostics."""

    crude: np.ndarray
    cmc: np.ndarray | None
    ess: float
    log_normalizer: float
    resampled: bool = False
    max_weight: float = float("nan")
    flags: tuple[str, ...] = ()
    extra: dict = field(default_factory=dict)


def _log(w: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(w)


def init_filter(
    model: StateSpaceModel, y0: np.ndarray, n: int, rng: RngStream
) -> FilterState:
    """Draw the initial cloud from the prior and weight it by the first
    observation's likelihood."""
    x0 = model.sample_prior(n, rng.child(_PROPOSE))
    weights, _ = normalize_log_weights(model.obs_logpdf(y0, x0))
    return FilterState(x0, weights, step_index=0)


def sir_step(
    state: FilterState,
    model: StateSpaceModel,
    y: np.ndarray,
    f: MomentFunction,
    rng: RngStream,
    policy: ResamplePolicy = ResamplePolicy(),
) -> tuple[FilterState, StepReport]:
    """Sequential importance resampling with the conditional kernel proposal.

    New weights depend only on the previous samples (through the predictive
    density), so the conditional estimate sum_i w_i E[f | x_{n-1}^i, y_n] is
    available before anything is drawn; the crude estimate evaluates f at
    the kernel draws under the same weights.
    """
    means, covs, logliks = model.kernel_params(state.particles, y)
    weights, log_norm = normalize_log_weights(_log(state.weights) + logliks)

    cmc = None
    if f.conditional is not None:
        cmc = weights @ f.conditional(means, covs)

    proposed = sample_gaussians(means, covs, rng.child(_PROPOSE).generator)
    crude = weights @ f.evaluate(proposed)

    ess_value = ess(weights)
    resampled = policy.should_resample(ess_value, state.n)
    if resampled:
        idx = resample_indices(weights, state.n, rng.child(_SELECT), policy.scheme)
        new_state = FilterState(
            proposed[idx], np.full(state.n, 1.0 / state.n), state.step_index + 1
        )
    else:
        new_state = FilterState(proposed, weights, state.step_index + 1)

    report = StepReport(
        crude=crude,
        cmc=cmc,
        ess=ess_value,
        log_normalizer=log_norm,
        resampled=resampled,
        max_weight=float(weights.max()),
    )
    return new_state, report


def fa_step(
    state: FilterState,
    model: StateSpaceModel,
    y: np.ndarray,
    f: MomentFunction,
    rng: RngStream,
) -> tuple[FilterState, StepReport]:
    """Fully adapted step: weight by the predictive density, select ancestors
    multinomially, then propagate each survivor through the conditional
    kernel, leaving uniform weights.

    ``report.cmc`` averages conditional moments over the selected ancestors
    (the estimator matching this algorithm's output cloud).  The weighted
    pre-selection variant sum_i w_i E[f | x_{n-1}^i, y_n], which additionally
    integrates out the selection noise, is reported as
    ``extra["cmc_weighted"]``.
    """
    means, covs, logliks = model.kernel_params(state.particles, y)
    weights, log_norm = normalize_log_weights(_log(state.weights) + logliks)

    cmc_weighted = None
    conditional = None
    if f.conditional is not None:
        conditional = f.conditional(means, covs)
        cmc_weighted = weights @ conditional

    ancestors = resample_indices(weights, state.n, rng.child(_SELECT), "multinomial")
    cmc = None if conditional is None else conditional[ancestors].mean(axis=0)

    anc_means = means[ancestors]
    anc_covs = covs if covs.ndim == 2 else covs[ancestors]
    proposed = sample_gaussians(anc_means, anc_covs, rng.child(_PROPOSE).generator)
    crude = f.evaluate(proposed).mean(axis=0)

    new_state = FilterState(
        proposed, np.full(state.n, 1.0 / state.n), state.step_index + 1
    )
    report = StepReport(
        crude=crude,
        cmc=cmc,
        ess=ess(weights),
        log_normalizer=log_norm,
        resampled=True,
        max_weight=float(weights.max()),
        extra={} if cmc_weighted is None else {"cmc_weighted": cmc_weighted},
    )
    return new_state, report


def bootstrap_step(
    state: FilterState,
    model: StateSpaceModel,
    y: np.ndarray,
    f: MomentFunction,
    rng: RngStream,
    policy: ResamplePolicy = ResamplePolicy(),
) -> tuple[FilterState, StepReport]:
    """Plain bootstrap step: propose from the transition, weight by the
    observation likelihood.  No conditional estimate is available because
    the weights depend on the new draws."""
    proposed = model.sample_transition(state.particles, rng.child(_PROPOSE))
    logliks = model.obs_logpdf(y, proposed)
    weights, log_norm = normalize_log_weights(_log(state.weights) + logliks)
    crude = weights @ f.evaluate(proposed)

    ess_value = ess(weights)
    resampled = policy.should_resample(ess_value, state.n)
    if resampled:
        idx = resample_indices(weights, state.n, rng.child(_SELECT), policy.scheme)
        new_state = FilterState(
            proposed[idx], np.full(state.n, 1.0 / state.n), state.step_index + 1
        )
    else:
        new_state = FilterState(proposed, weights, state.step_index + 1)

    report = StepReport(
        crude=crude,
        cmc=None,
        ess=ess_value,
        log_normalizer=log_norm,
        resampled=resampled,
        max_weight=float(weights.max()),
    )
    return new_state, report


class KernelProposal:
    """Gaussian proposal q(x_n | x_{n-1}, y_n) defined by a moment function
    (means, covs, _) = params(x_prev, y)."""

    def __init__(self, params: Callable[[np.ndarray, np.ndarray], tuple]):
        self._params = params

    def sample(self, x_prev: np.ndarray, y: np.ndarray, rng: RngStream) -> np.ndarray:
        means, covs, _ = self._params(x_prev, y)
        return sample_gaussians(means, covs, rng.generator)

    def logpdf(self, x: np.ndarray, x_prev: np.ndarray, y: np.ndarray) -> np.ndarray:
        means, covs, _ = self._params(x_prev, y)
        x = np.atleast_2d(np.asarray(x, dtype=float))
        diff = x - means
        if covs.ndim == 2:
            from .gaussian import mvn_logpdf

            return mvn_logpdf(diff, covs)
        from .gaussian import mvn_logpdf_batch

        return mvn_logpdf_batch(diff, covs)


def optimal_kernel_proposal(model) -> KernelProposal:
    """Proposal equal to the model's exact conditional kernel."""
    return KernelProposal(model.kernel_params)


def taylor_proposal(model) -> KernelProposal:
    """Proposal equal to the model's linearized approximate kernel."""
    return KernelProposal(model.taylor_kernel_params)


def generic_proposal_step(
    state: FilterState,
    model: StateSpaceModel,
    y: np.ndarray,
    f: MomentFunction,
    proposal: KernelProposal,
    rng: RngStream,
    policy: ResamplePolicy = ResamplePolicy(),
    cmc_mode: str = "kernel_only",
) -> tuple[FilterState, StepReport]:
    """Importance step with an arbitrary proposal, reporting two conditional
    estimates built from the model's (possibly approximate) kernel moments.

    The exact importance weights w ~ w_{n-1} f g / q depend on the new
    draws.  ``kernel_only`` combines them with conditional moments
    M^i = E_hat[f | x_{n-1}^i, y_n]; ``kernel_and_predictive`` instead
    weights M^i by w_{n-1} times the model's (approximate) predictive
    density, which removes all dependence on the new draws.  Both variants
    appear in ``extra`` whatever ``cmc_mode`` selects.
    """
    if cmc_mode not in ("kernel_only", "kernel_and_predictive"):
        raise ValueError(f"unknown cmc_mode: {cmc_mode!r}")

    x_prev = state.particles
    proposed = proposal.sample(x_prev, y, rng.child(_PROPOSE))
    log_target = model.transition_logpdf(proposed, x_prev) + model.obs_logpdf(
        y, proposed
    )
    log_q = proposal.logpdf(proposed, x_prev, y)
    weights, log_norm = normalize_log_weights(_log(state.weights) + log_target - log_q)

    crude = weights @ f.evaluate(proposed)

    moments = model.conditional_moment(f, x_prev, y)
    cmc_kernel = weights @ moments
    pred_weights, _ = normalize_log_weights(
        _log(state.weights) + model.predictive_loglik(x_prev, y)
    )
    cmc_predictive = pred_weights @ moments
    cmc = cmc_kernel if cmc_mode == "kernel_only" else cmc_predictive

    max_weight = float(weights.max())
    flags = ("weight_blowup",) if max_weight > WEIGHT_BLOWUP_THRESHOLD else ()

    ess_value = ess(weights)
    resampled = policy.should_resample(ess_value, state.n)
    if resampled:
        idx = resample_indices(weights, state.n, rng.child(_SELECT), policy.scheme)
        new_state = FilterState(
            proposed[idx], np.full(state.n, 1.0 / state.n), state.step_index + 1
        )
    else:
        new_state = FilterState(proposed, weights, state.step_index + 1)

    report = StepReport(
        crude=crude,
        cmc=cmc,
        ess=ess_value,
        log_normalizer=log_norm,
        resampled=resampled,
        max_weight=max_weight,
        flags=flags,
        extra={
            "cmc_kernel_only": cmc_kernel,
            "cmc_kernel_and_predictive": cmc_predictive,
        },
    )
    return new_state, report


def kalman_reference_means(model, ys: np.ndarray) -> np.ndarray:
    """Exact posterior means E[X_n | y_{0:n}] of a LinearGaussianModel,
    conditioning the prior on y_0 and filtering forward."""
    from .gaussian import kalman_predict, kalman_update

    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    belief, _ = kalman_update(model.prior, model.H, model.R, ys[0])
    means = [belief.mean]
    for y in ys[1:]:
        belief = kalman_predict(belief, model.transition_matrix, model.process_cov)
        belief, _ = kalman_update(belief, model.H, model.R, y)
        means.append(belief.mean)
    return np.asarray(means)
