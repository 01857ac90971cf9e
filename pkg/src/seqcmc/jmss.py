"""Particle filters for jump Markov state-space systems.

Two families live here.  For linear Gaussian jump systems, each particle
carries only its mode history summary (mode, conditional Kalman mean and
covariance); ``rbpf_step`` runs a bank of per-mode Kalman updates and offers
a crude moment estimator, which samples the next mode, and a conditional
one, which averages the per-mode posterior moments under the exact mode
posterior instead of sampling it.

For jump systems whose per-mode dynamics are semi-linear Gaussian,
``general_jmss_step`` marginalizes the mode and the new state jointly: the
weight table w[i, r] ~ w_{n-1}^i p(r | r_{n-1}^i) p(y_n | x_{n-1}^i, r)
supports a crude estimator (sample pair, evaluate), a conditional one in
the state only, and a conditional one in both the state and the mode, with
variances ordered in that same direction.  Two importance-sampling variants
cover models without closed-form predictive densities.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .gaussian import (
    GaussianBelief,
    batch_kalman_update,
    kalman_update,
    mvn_logpdf,
    mvn_logpdf_batch,
    sample_gaussians,
)
from .models import LinearGaussianJmss, MomentFunction, SemiLinearJmss
from .rng import RngStream
from .single import ResamplePolicy
from .weights import ess, normalize_log_weights, resample_indices

__all__ = [
    "JumpParticle",
    "RbpfCloud",
    "RbpfReport",
    "rbpf_init",
    "rbpf_step",
    "HybridCloud",
    "ModeMarginalWeights",
    "GeneralJmssReport",
    "general_jmss_step",
    "JmssStateProposal",
    "jmss_is_marginal_step",
    "jmss_mixture_proposal_step",
    "prior_mode_proposal",
]

_PROPOSE = 0
_SELECT = 1
_MODE = 2
_MODE_REFRESH = 3


def _log(w: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(w)


def _sample_rows(probs: np.ndarray, generator: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of a (n, k) probability table."""
    cum = np.cumsum(probs, axis=1)
    cum[:, -1] = 1.0
    u = generator.random((probs.shape[0], 1))
    return (u > cum).sum(axis=1).astype(np.intp)


# ---------------------------------------------------------------------------
# Rao-Blackwellized filter for linear Gaussian jump systems


@dataclass
class JumpParticle:
    """Object view of one mode-history particle."""

    weight: float
    mode: int
    belief: GaussianBelief


@dataclass
class RbpfCloud:
    """Stacked mode-history particles: per particle a mode, the Kalman
    moments of the state conditional on that particle's mode history, and a
    normalized weight."""

    modes: np.ndarray      # (n,) int
    means: np.ndarray      # (n, dx)
    covs: np.ndarray       # (n, dx, dx)
    weights: np.ndarray    # (n,)

    @property
    def n(self) -> int:
        return self.modes.shape[0]

    def to_particles(self) -> list[JumpParticle]:
        return [
            JumpParticle(float(w), int(r), GaussianBelief(m, P))
            for w, r, m, P in zip(self.weights, self.modes, self.means, self.covs)
        ]

    @classmethod
    def from_particles(cls, particles: list[JumpParticle]) -> "RbpfCloud":
        weights = np.array([p.weight for p in particles], dtype=float)
        return cls(
            modes=np.array([p.mode for p in particles], dtype=np.intp),
            means=np.stack([p.belief.mean for p in particles]),
            covs=np.stack([p.belief.cov for p in particles]),
            weights=weights / weights.sum(),
        )


@dataclass
class RbpfReport:
    crude: np.ndarray
    cmc: np.ndarray
    ess: float
    log_normalizer: float
    resampled: bool = False
    cost_crude: float | None = None
    cost_cmc: float | None = None


def rbpf_init(
    model: LinearGaussianJmss, y0: np.ndarray, n: int, rng: RngStream
) -> RbpfCloud:
    """Sample initial modes, condition the Gaussian prior on y_0 per mode,
    and weight each particle by its mode's predictive density of y_0."""
    gen = rng.child(_MODE).generator
    modes = np.searchsorted(
        np.cumsum(model.initial_mode_probs), gen.random(n), side="right"
    ).astype(np.intp)
    means = np.empty((n, model.state_dim))
    covs = np.empty((n, model.state_dim, model.state_dim))
    logliks = np.empty(n)
    for r in range(model.n_modes):
        sel = modes == r
        if not sel.any():
            continue
        belief, ll = kalman_update(model.prior, model.H[r], model.Reff[r], y0)
        means[sel] = belief.mean
        covs[sel] = belief.cov
        logliks[sel] = ll
    weights, _ = normalize_log_weights(logliks)
    return RbpfCloud(modes, means, covs, weights)


def rbpf_step(
    cloud: RbpfCloud,
    model: LinearGaussianJmss,
    y: np.ndarray,
    phi: MomentFunction,
    rng: RngStream,
    policy: ResamplePolicy = ResamplePolicy(),
    timing: bool = False,
) -> tuple[RbpfCloud, RbpfReport]:
    """One Rao-Blackwellized step.

    The bank of per-mode Kalman predictions and updates is computed once and
    shared by both estimators; when ``timing`` is on, only the
    estimator-specific work is clocked (crude: sampling the mode and reading
    off its moment; conditional: the exhaustive mode average), so the
    reported costs isolate the estimator difference.
    """
    if phi.conditional is None:
        raise ValueError(f"moment {phi.name!r} has no closed conditional form")
    n, K = cloud.n, model.n_modes
    dx = model.state_dim

    upd_means = np.empty((K, n, dx))
    upd_covs = np.empty((K, n, dx, dx))
    logliks = np.empty((K, n))
    for r in range(K):
        F = model.F[r]
        pred_means = cloud.means @ F.T
        pred_covs = np.einsum("ij,njk,lk->nil", F, cloud.covs, F) + model.Qeff[r]
        upd_means[r], upd_covs[r], logliks[r] = batch_kalman_update(
            pred_means, pred_covs, model.H[r], model.Reff[r], y
        )

    # exact mode posterior per particle and predictive density of y
    mode_log = _log(model.mode_transition)[cloud.modes] + logliks.T     # (n, K)
    row_max = mode_log.max(axis=1)
    shifted = np.exp(mode_log - row_max[:, None])
    row_sums = shifted.sum(axis=1)
    mode_post = shifted / row_sums[:, None]
    log_pred = row_max + np.log(row_sums)

    weights, log_norm = normalize_log_weights(_log(cloud.weights) + log_pred)

    phi_vals = np.stack(
        [phi.conditional(upd_means[r], upd_covs[r]) for r in range(K)], axis=1
    )  # (n, K, m)

    gen = rng.child(_MODE).generator
    t0 = time.perf_counter_ns()
    new_modes = _sample_rows(mode_post, gen)
    crude = weights @ phi_vals[np.arange(n), new_modes]
    cost_crude = (time.perf_counter_ns() - t0) * 1e-9

    t0 = time.perf_counter_ns()
    cmc = np.einsum("n,nk,nkm->m", weights, mode_post, phi_vals)
    cost_cmc = (time.perf_counter_ns() - t0) * 1e-9

    idx = np.arange(n)
    new_cloud = RbpfCloud(
        modes=new_modes,
        means=upd_means[new_modes, idx],
        covs=upd_covs[new_modes, idx],
        weights=weights,
    )

    ess_value = ess(weights)
    resampled = policy.should_resample(ess_value, n)
    if resampled:
        sel = resample_indices(weights, n, rng.child(_SELECT), policy.scheme)
        new_cloud = RbpfCloud(
            modes=new_cloud.modes[sel],
            means=new_cloud.means[sel],
            covs=new_cloud.covs[sel],
            weights=np.full(n, 1.0 / n),
        )

    return new_cloud, RbpfReport(
        crude=crude,
        cmc=cmc,
        ess=ess_value,
        log_normalizer=log_norm,
        resampled=resampled,
        cost_crude=cost_crude if timing else None,
        cost_cmc=cost_cmc if timing else None,
    )


# ---------------------------------------------------------------------------
# general jump systems with semi-linear per-mode dynamics


@dataclass
class HybridCloud:
    """Weighted particles over the hybrid (state, mode) pair."""

    particles: np.ndarray   # (n, p)
    modes: np.ndarray       # (n,) int
    weights: np.ndarray     # (n,)

    @property
    def n(self) -> int:
        return self.modes.shape[0]


@dataclass
class ModeMarginalWeights:
    """Joint weight table over (particle, next mode), normalized globally.

    Row sums are the per-particle marginal weights; columns decompose each
    particle's weight over candidate next modes.
    """

    table: np.ndarray   # (n, K), sums to 1

    def __post_init__(self) -> None:
        self.table = np.asarray(self.table, dtype=float)
        if self.table.ndim != 2:
            raise ValueError("weight table must be 2-d")
        if (self.table < 0).any() or abs(self.table.sum() - 1.0) > 1e-9:
            raise ValueError("weight table must be non-negative and sum to 1")

    @property
    def marginal_weights(self) -> np.ndarray:
        return self.table.sum(axis=1)

    def mode_posteriors(self) -> np.ndarray:
        """Per-particle conditional distribution of the next mode; rows with
        zero marginal weight fall back to uniform (they carry no mass)."""
        marg = self.marginal_weights
        safe = np.where(marg > 0.0, marg, 1.0)
        post = self.table / safe[:, None]
        post[marg == 0.0] = 1.0 / self.table.shape[1]
        return post


@dataclass
class GeneralJmssReport:
    crude: np.ndarray
    cmc_xn: np.ndarray
    cmc_xn_rn: np.ndarray
    mode_weights: ModeMarginalWeights
    ess: float
    log_normalizer: float
    resampled: bool = False
    extra: dict = field(default_factory=dict)

    def estimate(self, name: str) -> np.ndarray:
        try:
            return {
                "crude": self.crude,
                "cmc_xn": self.cmc_xn,
                "cmc_xn_rn": self.cmc_xn_rn,
            }[name]
        except KeyError:
            raise ValueError(f"unknown estimator {name!r}") from None


def _per_mode_kernels(model: SemiLinearJmss, x_prev: np.ndarray, y: np.ndarray):
    """Kernel moments, predictive log densities per mode; shapes
    (n, K, p), (n, K, p, p), (n, K)."""
    n = x_prev.shape[0]
    K, p = model.n_modes, model.state_dim
    means = np.empty((n, K, p))
    covs = np.empty((n, K, p, p))
    logpred = np.empty((n, K))
    for r in range(K):
        m_r, c_r, logpred[:, r] = model.mode_models[r].kernel_params(x_prev, y)
        means[:, r] = m_r
        covs[:, r] = c_r if c_r.ndim == 3 else np.broadcast_to(c_r, (n, p, p))
    return means, covs, logpred


def general_jmss_step(
    cloud: HybridCloud,
    model: SemiLinearJmss,
    y: np.ndarray,
    phi: MomentFunction,
    rng: RngStream,
    policy: ResamplePolicy = ResamplePolicy(),
) -> tuple[HybridCloud, GeneralJmssReport]:
    """One step marginalizing over the next mode.

    Builds the joint table w[i, r] ~ w^i p(r | r^i) p(y | x^i, r), then
    reports three estimates of E[phi(X_n) | y_{0:n}]:

    - crude: sample (r, x) per particle and evaluate phi at the draws;
    - cmc_xn: sample the mode only, integrate phi over the state kernel;
    - cmc_xn_rn: integrate over both the mode table and the state kernel.

    Each is the conditional expectation of the previous one given what it
    leaves unsampled, so their variances are ordered accordingly.
    """
    if phi.conditional is None:
        raise ValueError(f"moment {phi.name!r} has no closed conditional form")
    n, K = cloud.n, model.n_modes
    x_prev = cloud.particles

    k_means, k_covs, logpred = _per_mode_kernels(model, x_prev, y)
    log_table = (
        _log(cloud.weights)[:, None] + _log(model.mode_transition)[cloud.modes] + logpred
    )
    flat, log_norm = normalize_log_weights(log_table.reshape(-1))
    table = ModeMarginalWeights(flat.reshape(n, K))
    marginal = table.marginal_weights

    cond_moments = np.stack(
        [
            phi.conditional(k_means[:, r], k_covs[:, r])
            for r in range(K)
        ],
        axis=1,
    )  # (n, K, m)
    cmc_xn_rn = np.einsum("nk,nkm->m", table.table, cond_moments)

    mode_post = table.mode_posteriors()
    new_modes = _sample_rows(mode_post, rng.child(_MODE).generator)
    idx = np.arange(n)
    cmc_xn = marginal @ cond_moments[idx, new_modes]

    sel_means = k_means[idx, new_modes]
    sel_covs = k_covs[idx, new_modes]
    proposed = sample_gaussians(sel_means, sel_covs, rng.child(_PROPOSE).generator)
    crude = marginal @ phi.evaluate(proposed)

    ess_value = ess(marginal)
    resampled = policy.should_resample(ess_value, n)
    if resampled:
        sel = resample_indices(marginal, n, rng.child(_SELECT), policy.scheme)
        new_cloud = HybridCloud(proposed[sel], new_modes[sel], np.full(n, 1.0 / n))
    else:
        new_cloud = HybridCloud(proposed, new_modes, marginal)

    report = GeneralJmssReport(
        crude=crude,
        cmc_xn=cmc_xn,
        cmc_xn_rn=cmc_xn_rn,
        mode_weights=table,
        ess=ess_value,
        log_normalizer=log_norm,
        resampled=resampled,
    )
    return new_cloud, report


# ---------------------------------------------------------------------------
# importance-sampling variants


class JmssStateProposal:
    """Per-mode Gaussian state proposal.

    kind 'kernel' proposes from each mode's conditional transition kernel
    (exact in the semi-linear case); kind 'transition' proposes blindly from
    each mode's prior transition.
    """

    def __init__(self, model: SemiLinearJmss, kind: str = "kernel"):
        if kind not in ("kernel", "transition"):
            raise ValueError(f"unknown proposal kind: {kind!r}")
        self.model = model
        self.kind = kind

    def params(
        self, x_prev: np.ndarray, r: int, y: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        mode_model = self.model.mode_models[r]
        if self.kind == "kernel":
            means, covs, _ = mode_model.kernel_params(x_prev, y)
        else:
            means = mode_model.drift(x_prev)
            covs = mode_model.noise_cov(x_prev)
        if covs.ndim == 2:
            covs = np.broadcast_to(covs, (x_prev.shape[0],) + covs.shape)
        return means, covs

    def sample(
        self, x_prev: np.ndarray, r: int, y: np.ndarray, rng: RngStream
    ) -> np.ndarray:
        means, covs = self.params(x_prev, r, y)
        return sample_gaussians(means, covs, rng.generator)

    def logpdf(
        self, x: np.ndarray, x_prev: np.ndarray, r: int, y: np.ndarray
    ) -> np.ndarray:
        means, covs = self.params(x_prev, r, y)
        diff = np.atleast_2d(x) - means
        if diff.shape[1] == 1:
            from .gaussian import gauss_logpdf

            return gauss_logpdf(diff[:, 0], 0.0, covs.reshape(-1))
        return mvn_logpdf_batch(diff, covs)


def jmss_is_marginal_step(
    cloud: HybridCloud,
    model: SemiLinearJmss,
    y: np.ndarray,
    phi: MomentFunction,
    proposal: JmssStateProposal,
    rng: RngStream,
    policy: ResamplePolicy = ResamplePolicy(),
) -> tuple[HybridCloud, dict]:
    """Mode-marginalized importance estimator for models without closed-form
    predictive densities.

    Draws one candidate state per (particle, mode) pair from the proposal,
    then forms the self-normalized table
    u[i, r] ~ w^i p(r | r^i) f(x^{i,r} | x^i, r) g(y | x^{i,r}, r) / q and
    the estimate sum u[i, r] phi(x^{i,r}).  Costs n x K proposal draws per
    step.  To advance, each particle keeps the draw of a mode sampled from
    its table row and carries its row sum as weight.
    """
    n, K = cloud.n, model.n_modes
    p = model.state_dim
    x_prev = cloud.particles

    draws = np.empty((n, K, p))
    log_u = np.empty((n, K))
    log_trans_rows = _log(model.mode_transition)[cloud.modes]
    for r in range(K):
        x_r = proposal.sample(x_prev, r, y, rng.child(_PROPOSE, r))
        draws[:, r] = x_r
        mode_model = model.mode_models[r]
        log_u[:, r] = (
            log_trans_rows[:, r]
            + mode_model.transition_logpdf(x_r, x_prev)
            + mode_model.obs_logpdf(y, x_r)
            - proposal.logpdf(x_r, x_prev, r, y)
        )
    log_u += _log(cloud.weights)[:, None]

    flat, log_norm = normalize_log_weights(log_u.reshape(-1))
    table = ModeMarginalWeights(flat.reshape(n, K))
    estimate = np.einsum(
        "nk,nkm->m", table.table, phi.evaluate(draws.reshape(n * K, p)).reshape(n, K, -1)
    )

    marginal = table.marginal_weights
    new_modes = _sample_rows(table.mode_posteriors(), rng.child(_MODE).generator)
    idx = np.arange(n)
    new_particles = draws[idx, new_modes]

    ess_value = ess(marginal)
    resampled = policy.should_resample(ess_value, n)
    if resampled:
        sel = resample_indices(marginal, n, rng.child(_SELECT), policy.scheme)
        new_cloud = HybridCloud(new_particles[sel], new_modes[sel], np.full(n, 1.0 / n))
    else:
        new_cloud = HybridCloud(new_particles, new_modes, marginal)

    report = {
        "estimate": estimate,
        "mode_weights": table,
        "ess": ess_value,
        "log_normalizer": log_norm,
        "resampled": resampled,
    }
    return new_cloud, report


def prior_mode_proposal(model: SemiLinearJmss):
    """Mode proposal equal to the prior mode transition rows."""

    def probs(x_prev: np.ndarray, modes: np.ndarray, y: np.ndarray) -> np.ndarray:
        return model.mode_transition[modes]

    return probs


def jmss_mixture_proposal_step(
    cloud: HybridCloud,
    model: SemiLinearJmss,
    y: np.ndarray,
    phi: MomentFunction,
    mode_proposal,
    state_proposal: JmssStateProposal,
    rng: RngStream,
    policy: ResamplePolicy = ResamplePolicy(),
) -> tuple[HybridCloud, dict]:
    """Importance step that samples one (mode, state) pair per particle but
    weights the state against the full mode mixture.

    After drawing r^i ~ q(r | past) and x^i ~ q(x | past, r^i), the
    mode-marginalized weight

        w^i * sum_r p(r | r^i_{prev}) f(x^i | ., r) g(y | x^i, r)
            / sum_r q(r | .) q(x^i | ., r)

    integrates the sampled mode out of the importance ratio, so it is the
    conditional expectation of the plain (mode, state) weight given x^i and
    never has larger variance.  Both weighted estimates are reported.  To
    advance, each particle's mode is refreshed from its exact conditional
    given the sampled state, which leaves the weighted hybrid law unchanged.
    """
    n, K = cloud.n, model.n_modes
    x_prev = cloud.particles

    mode_probs = np.asarray(mode_proposal(x_prev, cloud.modes, y), dtype=float)
    sampled_modes = _sample_rows(mode_probs, rng.child(_MODE).generator)

    proposed = np.empty((n, model.state_dim))
    for r in range(K):
        sel = sampled_modes == r
        if not sel.any():
            continue
        proposed[sel] = state_proposal.sample(x_prev[sel], r, y, rng.child(_PROPOSE, r))

    log_target = np.empty((n, K))     # p(r | r_prev) f(x | ., r) g(y | x, r)
    log_q_state = np.empty((n, K))
    log_trans_rows = _log(model.mode_transition)[cloud.modes]
    for r in range(K):
        mode_model = model.mode_models[r]
        log_target[:, r] = (
            log_trans_rows[:, r]
            + mode_model.transition_logpdf(proposed, x_prev)
            + mode_model.obs_logpdf(y, proposed)
        )
        log_q_state[:, r] = state_proposal.logpdf(proposed, x_prev, r, y)

    def _lse(a: np.ndarray) -> np.ndarray:
        m = a.max(axis=1)
        out = m + np.log(np.exp(a - m[:, None]).sum(axis=1))
        return np.where(np.isneginf(m), -np.inf, out)

    log_mix_target = _lse(log_target)
    log_mix_q = _lse(_log(mode_probs) + log_q_state)
    log_w_prev = _log(cloud.weights)

    idx = np.arange(n)
    log_rb = log_w_prev + log_mix_target - log_mix_q
    log_plain = (
        log_w_prev
        + log_target[idx, sampled_modes]
        - _log(mode_probs[idx, sampled_modes])
        - log_q_state[idx, sampled_modes]
    )

    rb_weights, log_norm = normalize_log_weights(log_rb)
    plain_weights, _ = normalize_log_weights(log_plain)
    phi_vals = phi.evaluate(proposed)
    estimate = rb_weights @ phi_vals
    estimate_plain = plain_weights @ phi_vals

    # refresh the mode from its exact conditional given the kept state
    mode_cond = np.exp(log_target - _lse(log_target)[:, None])
    zero = ~np.isfinite(log_target).any(axis=1)
    if zero.any():
        mode_cond[zero] = 1.0 / K
    new_modes = _sample_rows(mode_cond, rng.child(_MODE_REFRESH).generator)

    ess_value = ess(rb_weights)
    resampled = policy.should_resample(ess_value, n)
    if resampled:
        sel = resample_indices(rb_weights, n, rng.child(_SELECT), policy.scheme)
        new_cloud = HybridCloud(proposed[sel], new_modes[sel], np.full(n, 1.0 / n))
    else:
        new_cloud = HybridCloud(proposed, new_modes, rb_weights)

    report = {
        "estimate": estimate,
        "estimate_plain": estimate_plain,
        "log_rb_weights": log_rb,
        "log_plain_weights": log_plain,
        "ess": ess_value,
        "log_normalizer": log_norm,
        "resampled": resampled,
    }
    return new_cloud, report
