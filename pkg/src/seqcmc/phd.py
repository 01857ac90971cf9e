"""Probability hypothesis density (PHD) filters for multi-target tracking.

The PHD recursion propagates the first moment (intensity) of a multi-target
point process: predicted intensity = survival * motion + birth, and each
measurement z updates it through

    v_n(x) = (1 - p_d) v_pred(x)
           + sum_z p_d g(z | x) v_pred(x) / (kappa(z) + int p_d g v_pred)

Three implementations are provided.  ``smc_phd_step`` is the classical
particle version, which samples transitions blindly and evaluates the sharp
likelihood at the draws.  ``gm_phd_step`` is the closed-form Gaussian
mixture version for linear Gaussian single-target models.  ``cmc_phd_step``
is a conditional particle version: it splits the updated intensity into the
four exact terms (persistent undetected, persistent detected per z, newborn
undetected, newborn detected per z) whose weights depend only on the
previous cloud, the birth samples, and the measurements; state integrals
against the conditional kernel replace likelihood evaluations at sampled
points, which removes the sampling noise that cripples the classical filter
when the likelihood is much sharper than the transition spread.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .gaussian import sample_gaussians
from .models import MomentFunction, SemiLinearGaussianModel
from .rng import RngStream
from .weights import DegenerateWeightsError, resample_indices

__all__ = [
    "PhdParticleSet",
    "GaussianMixture",
    "GaussianMixtureBirth",
    "MeasurementDrivenBirth",
    "TwoPointBirth",
    "CompositeBirth",
    "PhdModelParams",
    "GmConfig",
    "SmcPhdReport",
    "smc_phd_step",
    "ClosedBirth",
    "CmcTables",
    "CmcPhdState",
    "CmcPhdReport",
    "cmc_phd_step",
    "cmc_phd_moment_pair",
    "extract_targets",
    "gm_phd_step",
    "gm_extract",
]

_PROPOSE = 0
_SELECT = 1
_BIRTH = 2

# undetected-channel particles are dropped once their weight falls below this
# fraction of the per-particle scale 1/n_per_target; at the default resolution
# a cluster survives two consecutive missed detections before it is pruned
_UNDETECTED_PRUNE = 2e-4


@dataclass
class PhdParticleSet:
    """Weighted particles approximating an intensity; weights are masses and
    their sum estimates the expected number of targets."""

    particles: np.ndarray   # (n, p)
    weights: np.ndarray     # (n,), non-negative, unnormalized

    def __post_init__(self) -> None:
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if (self.weights < 0).any():
            raise ValueError("intensity weights must be non-negative")

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def __len__(self) -> int:
        return self.particles.shape[0]


@dataclass
class GaussianMixture:
    """Weighted Gaussian mixture intensity."""

    weights: np.ndarray   # (J,)
    means: np.ndarray     # (J, p)
    covs: np.ndarray      # (J, p, p)

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covs = np.asarray(self.covs, dtype=float)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def __len__(self) -> int:
        return self.weights.shape[0]


class GaussianMixtureBirth:
    """Birth intensity given as a fixed Gaussian mixture; sampling draws
    n_per_component particles from each component."""

    def __init__(self, mixture: GaussianMixture, n_per_component: int = 20):
        self.mixture = mixture
        self.n_per_component = int(n_per_component)

    def sample(
        self, measurements: np.ndarray, rng: RngStream
    ) -> tuple[np.ndarray, np.ndarray]:
        parts = []
        weights = []
        gen = rng.generator
        for w, m, P in zip(self.mixture.weights, self.mixture.means, self.mixture.covs):
            draws = sample_gaussians(
                np.broadcast_to(m, (self.n_per_component, m.size)), P, gen
            )
            parts.append(draws)
            weights.append(np.full(self.n_per_component, w / self.n_per_component))
        return np.concatenate(parts), np.concatenate(weights)


class MeasurementDrivenBirth:
    """Birth particles drawn around the current measurements: positions from
    N(z, position_cov), unobserved components from N(0, diag(rest_std^2)).
    The per-scan birth mass is fixed and split evenly over the measurements.
    """

    def __init__(
        self,
        mass_per_scan: float,
        position_cov: np.ndarray,
        position_indices: tuple[int, ...],
        state_dim: int,
        rest_std: float,
        n_per_measurement: int = 20,
    ):
        self.mass_per_scan = float(mass_per_scan)
        self.position_cov = np.atleast_2d(np.asarray(position_cov, dtype=float))
        self.position_indices = tuple(position_indices)
        self.state_dim = int(state_dim)
        self.rest_std = float(rest_std)
        self.n_per_measurement = int(n_per_measurement)

    def sample(
        self, measurements: np.ndarray, rng: RngStream
    ) -> tuple[np.ndarray, np.ndarray]:
        Z = np.atleast_2d(np.asarray(measurements, dtype=float))
        if Z.size == 0:
            return np.empty((0, self.state_dim)), np.empty(0)
        gen = rng.generator
        nb = self.n_per_measurement
        total = Z.shape[0] * nb
        particles = self.rest_std * gen.standard_normal((total, self.state_dim))
        chol = np.linalg.cholesky(self.position_cov)
        for j, z in enumerate(Z):
            block = slice(j * nb, (j + 1) * nb)
            pos = z[None, :] + gen.standard_normal((nb, z.size)) @ chol.T
            particles[block, list(self.position_indices)] = pos
        weights = np.full(total, self.mass_per_scan / total)
        return particles, weights


class TwoPointBirth:
    """Birth particles anchored on gated pairs of measurements from the two
    previous scans.  Each pair (z_old, z_new) with |z_new - z_old| within the
    gate spawns one cluster with velocity v = (z_new - z_old) / period and
    position z_new + v * period, i.e. the pair's linear extrapolation to the
    current scan, so the cluster is current when it enters the recursion and
    its one-step predictive covers the next scan for fast and slow targets
    alike.  Positions get N(0, position_std^2 I) spread, velocities
    N(0, velocity_std^2 I).

    The per-scan birth mass is split over the clusters in proportion to a
    zero-mean Gaussian prior on the implied speed when ``speed_std`` is set
    (evenly otherwise).  Most gated pairs are clutter-clutter coincidences
    whose implied velocities are spread over the whole gate; a speed prior
    moves their mass onto the kinematically plausible pairs.
    """

    def __init__(
        self,
        mass_per_scan: float,
        gate_radius: float,
        period: float,
        position_std: float,
        velocity_std: float,
        position_indices: tuple[int, ...],
        velocity_indices: tuple[int, ...],
        state_dim: int,
        n_per_pair: int = 20,
        speed_std: float | None = None,
    ):
        self.mass_per_scan = float(mass_per_scan)
        self.gate_radius = float(gate_radius)
        self.period = float(period)
        self.position_std = float(position_std)
        self.velocity_std = float(velocity_std)
        self.position_indices = tuple(position_indices)
        self.velocity_indices = tuple(velocity_indices)
        self.state_dim = int(state_dim)
        self.n_per_pair = int(n_per_pair)
        self.speed_std = None if speed_std is None else float(speed_std)

    def _clusters(self, measurements):
        """Gated pairs as (means (C, p), weights (C,)); both empty if none."""
        Z_old, Z_new = measurements
        Z_old = np.atleast_2d(np.asarray(Z_old, dtype=float))
        Z_new = np.atleast_2d(np.asarray(Z_new, dtype=float))
        p = self.state_dim
        if Z_old.size == 0 or Z_new.size == 0:
            return np.empty((0, p)), np.empty(0)
        diff = Z_new[:, None, :] - Z_old[None, :, :]
        pairs = np.argwhere(
            np.sqrt((diff ** 2).sum(axis=-1)) <= self.gate_radius
        )
        if len(pairs) == 0:
            return np.empty((0, p)), np.empty(0)
        C = len(pairs)
        means = np.zeros((C, p))
        for c, (j_new, j_old) in enumerate(pairs):
            vel = (Z_new[j_new] - Z_old[j_old]) / self.period
            means[c, list(self.position_indices)] = Z_new[j_new] + vel * self.period
            means[c, list(self.velocity_indices)] = vel
        if self.speed_std is None:
            weights = np.full(C, self.mass_per_scan / C)
        else:
            speed2 = (means[:, list(self.velocity_indices)] ** 2).sum(axis=1)
            weights = np.exp(-0.5 * speed2 / self.speed_std ** 2)
            weights *= self.mass_per_scan / weights.sum()
        return means, weights

    def sample(
        self, measurements: tuple[np.ndarray, np.ndarray], rng: RngStream
    ) -> tuple[np.ndarray, np.ndarray]:
        means, w = self._clusters(measurements)
        C = len(w)
        if C == 0:
            return np.empty((0, self.state_dim)), np.empty(0)
        gen = rng.generator
        nb = self.n_per_pair
        particles = np.repeat(means, nb, axis=0)
        pos = list(self.position_indices)
        vel = list(self.velocity_indices)
        particles[:, pos] += self.position_std * gen.standard_normal(
            (C * nb, len(pos))
        )
        particles[:, vel] += self.velocity_std * gen.standard_normal(
            (C * nb, len(vel))
        )
        return particles, np.repeat(w / nb, nb)

    def components(
        self, measurements: tuple[np.ndarray, np.ndarray]
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """The same pair clusters as Gaussian components instead of draws:
        (weights (C,), means (C, p), covs (C, p, p)).  Deterministic, so a
        closed-form treatment of the birth term has no sampling noise."""
        means, w = self._clusters(measurements)
        p = self.state_dim
        C = len(w)
        if C == 0:
            return np.empty(0), np.empty((0, p)), np.empty((0, p, p))
        cov = np.zeros((p, p))
        cov[list(self.position_indices), list(self.position_indices)] = (
            self.position_std ** 2
        )
        cov[list(self.velocity_indices), list(self.velocity_indices)] = (
            self.velocity_std ** 2
        )
        return w, means, np.broadcast_to(cov, (C, p, p)).copy()


class CompositeBirth:
    """Union of several birth models; samples from each and pools the
    particles, so prior spawn sites and data-driven clusters can coexist."""

    def __init__(self, parts):
        self.parts = list(parts)

    def sample(self, measurements, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
        Xs, Ws = [], []
        for i, part in enumerate(self.parts):
            x, w = part.sample(measurements, rng.child(i))
            if len(x):
                Xs.append(x)
                Ws.append(w)
        if not Xs:
            dim = getattr(self.parts[0], "state_dim", 0) or 4
            return np.empty((0, dim)), np.empty(0)
        return np.concatenate(Xs), np.concatenate(Ws)


@dataclass
class PhdModelParams:
    """Multi-target model: single-target motion and observation plus the
    thinning, clutter, and birth layers of the PHD recursion."""

    motion: SemiLinearGaussianModel
    detection_prob: float
    survival_prob: float
    clutter_density: float                     # uniform intensity kappa(z)
    birth: GaussianMixtureBirth | MeasurementDrivenBirth | TwoPointBirth | CompositeBirth
    birth_predictive: str = "particle"         # particle | closed_form

    def survival(self, x: np.ndarray) -> np.ndarray:
        return np.full(x.shape[0], self.survival_prob)

    def clutter(self, Z: np.ndarray) -> np.ndarray:
        return np.full(np.atleast_2d(Z).shape[0], self.clutter_density)


def _obs_loglik_matrix(model: SemiLinearGaussianModel, X: np.ndarray, Z: np.ndarray):
    """log g(z | x) for every particle row and measurement, shape (n, M)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    out = np.empty((X.shape[0], Z.shape[0]))
    for j, z in enumerate(Z):
        out[:, j] = model.obs_logpdf(z, X)
    return out


def _predictive_matrix(model: SemiLinearGaussianModel, X: np.ndarray, Z: np.ndarray):
    """Kernel means and log predictive densities for every (particle,
    measurement) pair: means (M, n, p), logpred (n, M), covs per measurement."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    n, p = X.shape
    means = np.empty((Z.shape[0], n, p))
    logpred = np.empty((n, Z.shape[0]))
    covs = None
    for j, z in enumerate(Z):
        m_j, covs, logpred[:, j] = model.kernel_params(X, z)
        means[j] = m_j
    return means, covs, logpred


def _chain_moments(motion, e: int):
    """Effective transition moments for ``e`` chained linear steps.

    A particle that has gone ``e - 1`` scans without a detection represents
    the Gaussian N(F^(e-1) x, Q_(e-1)) rather than a point, so its one-step
    predictive and conditional kernel must be built from the chained pair
    F^e, Q_e = sum_j F^j Q F'^j.  Returns (F_e, Q_e, S_e, K_e, postcov_e)
    with the observation pieces folded in; cached on the model instance.
    """
    cache = motion.__dict__.setdefault("_chain_cache", {})
    hit = cache.get(e)
    if hit is not None:
        return hit
    F1 = motion.transition_matrix
    Q1 = motion.process_cov
    Fe, Qe = F1, Q1
    for _ in range(e - 1):
        Qe = F1 @ Qe @ F1.T + Q1
        Fe = F1 @ Fe
    H, R = motion.H, motion.R
    S = H @ Qe @ H.T + R
    K = Qe @ H.T @ np.linalg.inv(S)
    postcov = Qe - K @ H @ Qe
    postcov = 0.5 * (postcov + postcov.T)
    out = (Fe, Qe, 0.5 * (S + S.T), K, postcov)
    cache[e] = out
    return out


def _group_moments(motion, e: int, lam: np.ndarray | None):
    """Chain moments with an optional extra state covariance at the origin.

    ``lam`` carries the posterior covariance of a particle that stands for a
    whole Gaussian component (a closed-form birth update) rather than a
    point; the effective transition covariance is then F^e lam F'^e + Q_e.
    """
    Fe, Qe, S, K, postcov = _chain_moments(motion, e)
    if lam is None:
        return Fe, Qe, S, K, postcov
    cache = motion.__dict__.setdefault("_spread_cache", {})
    key = (e, lam.tobytes())
    hit = cache.get(key)
    if hit is not None:
        return hit
    C = Fe @ lam @ Fe.T + Qe
    H, R = motion.H, motion.R
    S = H @ C @ H.T + R
    K = C @ H.T @ np.linalg.inv(S)
    postcov = C - K @ H @ C
    out = (Fe, C, 0.5 * (S + S.T), K, 0.5 * (postcov + postcov.T))
    cache[key] = out
    return out


def _spread_groups(ages: np.ndarray, lam_idx: np.ndarray | None):
    """Iterate (mask, age, lam_index) over distinct spread classes."""
    if lam_idx is None:
        for a in np.unique(ages):
            yield ages == a, int(a), 0
        return
    key = ages * (lam_idx.max() + 1) + lam_idx
    for k in np.unique(key):
        rows = key == k
        i = np.argmax(rows)
        yield rows, int(ages[i]), int(lam_idx[i])


def _aged_pred_matrix(motion, X, ages, lam_idx, lams, Z):
    """Log predictive densities (L, M) with per-particle spread classes."""
    from .gaussian import mvn_logpdf

    M = Z.shape[0]
    logpred = np.empty((X.shape[0], M))
    H = motion.H
    for rows, a, li in _spread_groups(ages, lam_idx):
        lam = lams[li] if li else None
        Fe, _, S, _, _ = _group_moments(motion, a + 1, lam)
        innov = Z[None, :, :] - (X[rows] @ Fe.T @ H.T)[:, None, :]
        logpred[rows] = mvn_logpdf(innov.reshape(-1, Z.shape[1]), S).reshape(-1, M)
    return logpred


def _aged_kernel(motion, X, ages, lam_idx, lams, z):
    """Conditional kernel means for one measurement under spread classes,
    plus each group's posterior covariance as {(age, lam_index): (p, p)}."""
    means = np.empty_like(X)
    covs = {}
    H = motion.H
    for rows, a, li in _spread_groups(ages, lam_idx):
        lam = lams[li] if li else None
        Fe, _, _, K, postcov = _group_moments(motion, a + 1, lam)
        fx = X[rows] @ Fe.T
        means[rows] = fx + (z[None, :] - fx @ H.T) @ K.T
        covs[(a, li)] = postcov
    return means, covs


# ---------------------------------------------------------------------------
# classical SMC-PHD


@dataclass
class SmcPhdReport:
    count: float
    measurement_shares: np.ndarray          # (M,) detected mass fraction per z
    measurement_states: np.ndarray          # (M, p) weighted state per z
    extracted: np.ndarray                   # (k, p)
    mass_before_resample: float


def smc_phd_step(
    pset: PhdParticleSet,
    params: PhdModelParams,
    Z: np.ndarray,
    rng: RngStream,
    n_per_target: int = 200,
    min_particles: int = 200,
    extract_threshold: float = 0.5,
    birth_measurements: np.ndarray | None = None,
) -> tuple[PhdParticleSet, SmcPhdReport]:
    """Classical bootstrap PHD step: propagate survivors through the
    transition sampler, add birth particles, reweight against the
    measurement set, then resample to n_per_target per expected target.

    Target extraction is measurement-driven: each measurement whose detected
    mass share exceeds the threshold yields the share-weighted state mean.

    ``birth_measurements`` anchors measurement-driven birth; passing the
    previous scan's measurements keeps fresh clutter from instantly
    spawning mass at its own location.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if birth_measurements is None:
        birth_measurements = Z
    survived = params.motion.sample_transition(pset.particles, rng.child(_PROPOSE))
    w_surv = params.survival(pset.particles) * pset.weights
    born, w_born = params.birth.sample(birth_measurements, rng.child(_BIRTH))

    X = np.concatenate([survived, born]) if len(born) else survived
    W = np.concatenate([w_surv, w_born]) if len(born) else w_surv

    p_d = params.detection_prob
    M = Z.shape[0]
    if M > 0:
        G = np.exp(_obs_loglik_matrix(params.motion, X, Z))       # (n, M)
        detected = p_d * (W @ G)                                   # (M,)
        denom = params.clutter(Z) + detected
        contrib = (p_d * G / denom[None, :]) * W[:, None]          # (n, M)
        new_W = (1.0 - p_d) * W + contrib.sum(axis=1)
        shares = contrib.sum(axis=0)
        states = np.zeros((M, X.shape[1]))
        nonzero = shares > 0
        if nonzero.any():
            states[nonzero] = (contrib[:, nonzero].T @ X) / shares[nonzero, None]
    else:
        new_W = (1.0 - p_d) * W
        shares = np.zeros(0)
        states = np.zeros((0, X.shape[1]))

    count = float(new_W.sum())
    if count <= 0.0:
        if len(X):
            raise DegenerateWeightsError("PHD intensity mass collapsed to zero")
        # an empty scene (nothing survived, nothing born) is a valid state
        empty = PhdParticleSet(np.zeros((0, pset.particles.shape[1])), np.zeros(0))
        report = SmcPhdReport(
            count=0.0,
            measurement_shares=shares,
            measurement_states=states,
            extracted=states[:0],
            mass_before_resample=0.0,
        )
        return empty, report

    extracted = states[shares > extract_threshold]

    n_out = max(min_particles, int(round(n_per_target * count)))
    idx = resample_indices(new_W / count, n_out, rng.child(_SELECT), "multinomial")
    new_set = PhdParticleSet(X[idx], np.full(n_out, count / n_out))

    report = SmcPhdReport(
        count=count,
        measurement_shares=shares,
        measurement_states=states,
        extracted=extracted,
        mass_before_resample=count,
    )
    return new_set, report


# ---------------------------------------------------------------------------
# conditional PHD


@dataclass
class ClosedBirth:
    """Gaussian birth components updated in closed form: undetected and
    per-measurement detected masses plus the conditioned component moments,
    playing the role of w2/w4 without any sampling noise.

    ``standing`` distinguishes prior components that exist every scan (spawn
    sites) from transient ones derived from the data (measurement pairs).
    Standing components may extract a target on the scan that confirms them
    and keep an undetected entry through a missed scan; transient ones must
    survive into the persistent cloud first, since a single confirmation of
    a measurement-derived component is as likely a clutter coincidence as a
    birth."""

    weights: np.ndarray             # (C,)   prior component masses
    means: np.ndarray               # (C, p)
    covs: np.ndarray                # (C, p, p)
    w2: np.ndarray                  # (C,)   undetected masses
    w4: np.ndarray                  # (C, M) detected masses per measurement
    post_means: np.ndarray          # (C, M, p) conditioned means
    post_covs: np.ndarray           # (C, p, p) conditioned covariances
    standing: np.ndarray | None = None  # (C,) bool; None means all standing

    @property
    def mass(self) -> float:
        return float(self.w2.sum() + self.w4.sum())


@dataclass
class CmcTables:
    """The four exact weight groups of one conditional PHD update, kept for
    extraction and diagnostics.  All weights share the same per-measurement
    normalizers ``btilde``.  When part of the birth intensity is a Gaussian
    mixture handled in closed form, its masses live in ``closed`` instead of
    the sampled w2/w4 rows."""

    prev_particles: np.ndarray      # (L, p) persistent cloud before the step
    w1: np.ndarray                  # (L,)   persistent, undetected
    w3: np.ndarray                  # (L, M) persistent, detected per z
    birth_particles: np.ndarray     # (Lb, p)
    w2: np.ndarray                  # (Lb,)  newborn, undetected
    w4: np.ndarray                  # (Lb, M) newborn, detected per z
    btilde: np.ndarray              # (M,)
    clutter: np.ndarray             # (M,)
    measurements: np.ndarray        # (M, q)
    closed: ClosedBirth | None = None
    ages: np.ndarray | None = None      # (L,) chain ages of the persistent rows
    lam_idx: np.ndarray | None = None   # (L,) spread class of each row
    lams: list | None = None            # class covariances; index 0 is None

    @property
    def count(self) -> float:
        total = float(
            self.w1.sum() + self.w3.sum() + self.w2.sum() + self.w4.sum()
        )
        if self.closed is not None:
            total += self.closed.mass
        return total


@dataclass
class CmcPhdState:
    # ages count scans a particle has gone undetected since its state was
    # last drawn; lam_idx points into lams for particles that stand for a
    # whole Gaussian component rather than a point (None = all point, age 0)
    persistent: PhdParticleSet
    tables: CmcTables | None = None
    ages: np.ndarray | None = None
    lam_idx: np.ndarray | None = None
    lams: list | None = None


@dataclass
class CmcPhdReport:
    count: float
    tables: CmcTables
    extracted: np.ndarray


def _cmc_tables(
    persistent: PhdParticleSet,
    born: np.ndarray,
    w_born: np.ndarray,
    params: PhdModelParams,
    Z: np.ndarray,
    closed_mix: GaussianMixture | None = None,
    ages: np.ndarray | None = None,
    lam_idx: np.ndarray | None = None,
    lams: list | None = None,
    closed_standing: np.ndarray | None = None,
) -> CmcTables:
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    X, W = persistent.particles, persistent.weights
    p_d = params.detection_prob
    p_s = params.survival(X)
    M = Z.shape[0]
    p = X.shape[1]

    w1 = (1.0 - p_d) * p_s * W
    w2 = (1.0 - p_d) * w_born

    closed = None
    if closed_mix is not None and len(closed_mix):
        C = len(closed_mix)
        H, R = params.motion.H, params.motion.R
        q = np.zeros((C, M))
        post_means = np.zeros((C, M, p))
        post_covs = np.zeros((C, p, p))
        from .gaussian import mvn_logpdf

        for c, (m_c, P_c) in enumerate(zip(closed_mix.means, closed_mix.covs)):
            S = H @ P_c @ H.T + R
            K = P_c @ H.T @ np.linalg.inv(S)
            innov = Z - (H @ m_c)[None, :]
            if M:
                q[c] = np.exp(mvn_logpdf(innov, S))
                post_means[c] = m_c[None, :] + innov @ K.T
            post_covs[c] = P_c - K @ H @ P_c
        closed = ClosedBirth(
            weights=closed_mix.weights,
            means=closed_mix.means,
            covs=closed_mix.covs,
            w2=(1.0 - p_d) * closed_mix.weights,
            w4=np.zeros((C, M)),
            post_means=post_means,
            post_covs=post_covs,
            standing=closed_standing,
        )

    spread = ages is not None and (
        ages.any() or (lam_idx is not None and lam_idx.any())
    )
    if M > 0:
        if spread:
            pred = np.exp(
                _aged_pred_matrix(params.motion, X, ages, lam_idx, lams, Z)
            )                                                            # (L, M)
        else:
            pred = np.exp(_predictive_matrix(params.motion, X, Z)[2])    # (L, M)
        g_born = (
            np.exp(_obs_loglik_matrix(params.motion, born, Z))
            if len(born)
            else np.zeros((0, M))
        )
        detected_persistent = p_d * ((p_s * W) @ pred)                 # (M,)
        birth_term = p_d * (w_born @ g_born) if len(born) else np.zeros(M)
        if closed is not None:
            birth_term = birth_term + p_d * (closed.weights @ q)
        btilde = params.clutter(Z) + birth_term + detected_persistent
        w3 = (p_d * (p_s * W))[:, None] * pred / btilde[None, :]
        w4 = (
            (p_d * w_born)[:, None] * g_born / btilde[None, :]
            if len(born)
            else np.zeros((0, M))
        )
        if closed is not None:
            closed.w4 = (p_d * closed.weights)[:, None] * q / btilde[None, :]
    else:
        btilde = np.zeros(0)
        w3 = np.zeros((len(X), 0))
        w4 = np.zeros((len(born), 0))

    return CmcTables(
        prev_particles=X,
        w1=w1,
        w3=w3,
        birth_particles=np.atleast_2d(born) if len(born) else born.reshape(0, X.shape[1]),
        w2=w2,
        w4=w4,
        btilde=btilde,
        clutter=params.clutter(Z),
        measurements=Z,
        closed=closed,
        ages=ages,
        lam_idx=lam_idx,
        lams=lams,
    )


def cmc_phd_step(
    state: CmcPhdState,
    params: PhdModelParams,
    Z: np.ndarray,
    rng: RngStream,
    n_per_target: int = 200,
    min_particles: int = 200,
    extract_threshold: float = 0.5,
    birth_measurements: np.ndarray | None = None,
) -> tuple[CmcPhdState, CmcPhdReport]:
    """One conditional PHD step.

    All four weight groups are functions of the previous cloud, the birth
    draws, and the measurements only; no transition sampling enters the
    weights or the count.  The cloud is then advanced by drawing each
    persistent particle's successor from its own mixture of the transition
    (undetected share) and the per-measurement conditional kernels (detected
    shares), carrying the particle's total mass; newborn particles join the
    persistent cloud with theirs.

    ``birth_measurements`` anchors measurement-driven birth; pass the
    previous scan's measurements so fresh clutter cannot spawn mass at its
    own location within the same update.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if birth_measurements is None:
        birth_measurements = Z

    # with the closed-form option, Gaussian-mixture birth components skip the
    # sampled w2/w4 path entirely; only the remaining birth models draw
    # particles that enter the tables
    parts = (
        params.birth.parts
        if isinstance(params.birth, CompositeBirth)
        else [params.birth]
    )
    closed_mix = None
    closed_standing = None
    if params.birth_predictive == "closed_form":
        blocks = []
        rest = []
        for b in parts:
            if isinstance(b, GaussianMixtureBirth):
                blocks.append(
                    (b.mixture.weights, b.mixture.means, b.mixture.covs, True)
                )
            elif isinstance(b, TwoPointBirth):
                w, m, c = b.components(birth_measurements)
                if len(w):
                    blocks.append((w, m, c, False))
            else:
                rest.append(b)
        if blocks:
            closed_mix = GaussianMixture(
                np.concatenate([b[0] for b in blocks]),
                np.concatenate([b[1] for b in blocks]),
                np.concatenate([b[2] for b in blocks]),
            )
            closed_standing = np.concatenate(
                [np.full(len(b[0]), b[3]) for b in blocks]
            )
        parts = rest
    if parts:
        sampler = parts[0] if len(parts) == 1 else CompositeBirth(parts)
        born, w_born = sampler.sample(birth_measurements, rng.child(_BIRTH))
    else:
        born = np.empty((0, state.persistent.particles.shape[1]))
        w_born = np.empty(0)

    # chain ages and component spreads are usable only when the transition is
    # linear, where the blind steps integrate out in closed form
    linear = hasattr(params.motion, "transition_matrix")
    ages = (
        state.ages
        if state.ages is not None
        else np.zeros(len(state.persistent), dtype=np.int64)
    )
    lam_idx = (
        state.lam_idx
        if state.lam_idx is not None
        else np.zeros(len(state.persistent), dtype=np.int64)
    )
    lams = state.lams if state.lams is not None else [None]

    tables = _cmc_tables(
        state.persistent, born, w_born, params, Z, closed_mix,
        ages if linear else None,
        lam_idx if linear else None,
        lams if linear else None,
        closed_standing,
    )
    count = tables.count
    if count <= 0.0:
        if len(state.persistent) or len(born):
            raise DegenerateWeightsError("PHD intensity mass collapsed to zero")
        # an empty scene (nothing persistent, nothing born) is a valid state
        p = state.persistent.particles.shape[1]
        empty = CmcPhdState(PhdParticleSet(np.zeros((0, p)), np.zeros(0)), tables)
        return empty, CmcPhdReport(count=0.0, tables=tables, extracted=np.zeros((0, p)))

    extracted = extract_targets(tables, params.motion, extract_threshold)

    # advance the persistent cloud through two channels.  detected mass is
    # resampled: parents are selected by their detected row sums, then every
    # copy draws its own successor from the parent's per-measurement kernel
    # mixture, so a cluster whose mass sits on a few particles still explores
    # the kernel noise with all its copies.  the undetected channel never
    # resamples: every parent advances one blind transition copy at its miss
    # weight, so a missed cluster keeps its full particle resolution at
    # reduced mass (the cloud spread must cover the velocity drift accumulated
    # during the gap) and dies only once consecutive misses push its weights
    # below the prune floor
    X = state.persistent.particles
    L, p = X.shape
    M = Z.shape[0]

    # spread covariances are registered through a quantized key so that the
    # many copies sharing one analytic update land on a single registry slot;
    # chains that have converged to the steady-state posterior also collapse
    new_lams: list = [None]
    lam_keys: dict = {}

    def _register_lam(cov: np.ndarray) -> int:
        k = np.round(cov, 6).tobytes()
        i = lam_keys.get(k)
        if i is None:
            new_lams.append(cov)
            i = len(new_lams) - 1
            lam_keys[k] = i
        return i

    prune = _UNDETECTED_PRUNE / n_per_target
    det_rows = tables.w3.sum(axis=1) if M else np.zeros(L)

    # rows that stand for whole Gaussian components (nonzero age or spread
    # class) advance exactly: each retained (row, measurement) pair becomes
    # one child at the conditional mean, carrying the posterior covariance
    # and the exact table mass.  no selection noise enters, so a mature
    # linear-Gaussian track is propagated with mixture-filter fidelity
    analytic = (
        ((ages > 0) | (lam_idx > 0)) if linear else np.zeros(L, dtype=bool)
    )
    exact_parts: list = []
    if M and analytic.any():
        H = params.motion.H
        Xa = X[analytic]
        W3a = tables.w3[analytic]
        for rows, a, li in _spread_groups(ages[analytic], lam_idx[analytic]):
            w3g = W3a[rows]
            keep = w3g >= prune
            if not keep.any():
                continue
            lam = lams[li] if li else None
            Fe, _, _, K, postcov = _group_moments(params.motion, a + 1, lam)
            fx = Xa[rows] @ Fe.T
            cond = (
                fx[:, None, :]
                + (Z[None, :, :] - (fx @ H.T)[:, None, :]) @ K.T
            )
            li_new = _register_lam(postcov)
            ii, jj = np.nonzero(keep)
            exact_parts.append((cond[ii, jj], w3g[ii, jj], li_new))
    if exact_parts:
        exact_X = np.concatenate([e[0] for e in exact_parts])
        exact_W = np.concatenate([e[1] for e in exact_parts])
        exact_lam = np.concatenate(
            [np.full(len(e[0]), e[2], dtype=np.int64) for e in exact_parts]
        )
    else:
        exact_X = np.zeros((0, p))
        exact_W = np.zeros(0)
        exact_lam = np.zeros(0, dtype=np.int64)

    # point-mass parents keep the sampled channel: select by detected row
    # sums, then every copy draws its own successor from the parent's
    # per-measurement kernel mixture
    det_point = np.where(analytic, 0.0, det_rows)
    det_mass = float(det_point.sum())
    if det_mass > 0.0:
        n_det = max(min_particles, int(round(n_per_target * det_mass)))
        idx = resample_indices(
            det_point / det_mass, n_det, rng.child(_SELECT), "multinomial"
        )
        parents = X[idx]
        probs = tables.w3[idx] / det_rows[idx, None]

        cum = np.cumsum(probs, axis=1)
        cum[:, -1] = 1.0
        u = rng.child(_PROPOSE).generator.random((n_det, 1))
        choice = (u > cum).sum(axis=1)      # kernel for z_choice

        kept_X = np.empty((n_det, p))
        for j in range(M):
            sel = choice == j
            if not sel.any():
                continue
            gen_j = rng.child(_PROPOSE, j + 1).generator
            means, covs, _ = params.motion.kernel_params(parents[sel], Z[j])
            kept_X[sel] = sample_gaussians(means, covs, gen_j)
        kept_W = np.full(n_det, det_mass / n_det)
    else:
        kept_X = np.zeros((0, p))
        kept_W = np.zeros(0)
    undet = tables.w1 >= prune
    undet_lam = np.zeros(int(undet.sum()), dtype=np.int64)
    if undet.any():
        if linear:
            # no draw: the blind step is carried analytically by the age
            undet_X = X[undet]
            undet_ages = ages[undet] + 1
            remap: dict = {}
            for k, li in enumerate(lam_idx[undet]):
                if li == 0:
                    continue
                if li not in remap:
                    remap[li] = _register_lam(lams[li])
                undet_lam[k] = remap[li]
        else:
            undet_X = params.motion.sample_transition(
                X[undet], rng.child(_PROPOSE, 0)
            )
            undet_ages = np.zeros(int(undet.sum()), dtype=np.int64)
        undet_W = tables.w1[undet]
    else:
        undet_X = np.zeros((0, p))
        undet_W = np.zeros(0)
        undet_ages = np.zeros(0, dtype=np.int64)

    # newborn clusters keep their particles and exact masses for one scan so
    # a low-mass cluster is not starved of particles before it has had a
    # chance to be confirmed

    birth_mass = tables.w2 + tables.w4.sum(axis=1)
    pool_X = [exact_X, kept_X, undet_X]
    pool_W = [exact_W, kept_W, undet_W]
    pool_ages = [
        np.zeros(len(exact_X), dtype=np.int64),
        np.zeros(len(kept_X), dtype=np.int64),
        undet_ages,
    ]
    pool_lam = [
        exact_lam,
        np.zeros(len(kept_X), dtype=np.int64),
        undet_lam,
    ]
    if len(born):
        pool_X.append(tables.birth_particles)
        pool_W.append(birth_mass)
        pool_ages.append(np.zeros(len(born), dtype=np.int64))
        pool_lam.append(np.zeros(len(born), dtype=np.int64))
    if tables.closed is not None:
        # each closed component's masses join the pool as analytic entries
        # carrying the component covariance as their spread class: one entry
        # per explaining measurement for the detected share (conditioned
        # moments) and one at the prior moments for the undetected share.
        # the first-scan uncertainty thereby stays a single wide Gaussian
        # instead of being scattered over a handful of draws whose
        # point-sharp predictives a lucky clutter return could confirm, and
        # the undetected entry gives a component missed on its birth scan
        # the same second chance a mixture filter keeps.  entries widen into
        # ordinary clouds at their next detection
        cb = tables.closed
        for c in range(len(cb.weights)):
            keep = np.nonzero(cb.w4[c] >= prune)[0]
            miss = cb.w2[c] >= prune and (
                cb.standing is None or bool(cb.standing[c])
            )
            if not len(keep) and not miss:
                continue
            li_post = li_prior = 0
            if linear:
                if len(keep):
                    li_post = _register_lam(cb.post_covs[c])
                if miss:
                    li_prior = _register_lam(cb.covs[c])
            if len(keep):
                pool_X.append(cb.post_means[c, keep])
                pool_W.append(cb.w4[c, keep])
                pool_ages.append(np.zeros(len(keep), dtype=np.int64))
                pool_lam.append(np.full(len(keep), li_post, dtype=np.int64))
            if miss:
                pool_X.append(cb.means[c][None, :])
                pool_W.append(np.array([cb.w2[c]]))
                pool_ages.append(np.zeros(1, dtype=np.int64))
                pool_lam.append(np.array([li_prior], dtype=np.int64))
    all_X = np.concatenate(pool_X)
    all_W = np.concatenate(pool_W)
    all_ages = np.concatenate(pool_ages)
    all_lam = np.concatenate(pool_lam)

    if linear and len(all_X):
        # children of one physical component conditioned on the same
        # measurement contract onto a common mean within a few scans; rows
        # that agree to a micrometer in mean, age, and spread class are the
        # same Gaussian written several times, so their masses are summed.
        # without this the slowly-decaying detected lineages of every miss
        # branch pile up as tens of thousands of near-duplicate rows
        key = np.concatenate(
            [
                np.round(all_X, 6),
                all_ages[:, None].astype(float),
                all_lam[:, None].astype(float),
            ],
            axis=1,
        )
        uniq, first, inv = np.unique(
            key, axis=0, return_index=True, return_inverse=True
        )
        if len(uniq) < len(all_X):
            merged_W = np.zeros(len(uniq))
            np.add.at(merged_W, inv, all_W)
            all_X = all_X[first]
            all_W = merged_W
            all_ages = all_ages[first]
            all_lam = all_lam[first]

    new_state = CmcPhdState(
        persistent=PhdParticleSet(all_X, all_W),
        tables=tables,
        ages=all_ages,
        lam_idx=all_lam,
        lams=new_lams,
    )
    return new_state, CmcPhdReport(count=count, tables=tables, extracted=extracted)


def extract_targets(
    tables: CmcTables,
    motion: SemiLinearGaussianModel,
    threshold: float = 0.5,
    merge_radius: float = 4.0,
) -> np.ndarray:
    """Measurement-driven extraction from a conditional PHD update.

    A measurement whose detected persistent mass exceeds the threshold
    yields the weight-averaged conditional kernel mean; one whose detected
    newborn mass exceeds it yields the weight-averaged birth particle.  Only
    above-threshold measurements require kernel means, so the cost scales
    with the number of confirmed targets.

    Extractions closer than ``merge_radius`` in observation space are fused
    into their share-weighted mean: a clutter point a few metres from a
    tracked target is explained by the same cluster and would otherwise be
    reported as a second target.  Pass 0 to disable.
    """
    states = []
    shares = []
    M = tables.measurements.shape[0]
    persistent_mass = tables.w3.sum(axis=0) if M else np.zeros(0)
    newborn_mass = tables.w4.sum(axis=0) if M else np.zeros(0)
    closed = tables.closed
    if closed is not None and M:
        newborn_mass = newborn_mass + closed.w4.sum(axis=0)
    aged = tables.ages is not None and bool(
        tables.ages.any()
        or (tables.lam_idx is not None and tables.lam_idx.any())
    )
    # a measurement's persistent and newborn masses describe the same
    # physical target, so the threshold applies to their sum; splitting the
    # decision per channel would drop a target whose unit mass happens to be
    # divided between its cloud and its own trailing measurement pair
    for j in range(M):
        total = persistent_mass[j] + newborn_mass[j]
        if total <= threshold:
            continue
        acc = np.zeros(tables.prev_particles.shape[1])
        if persistent_mass[j] > 0.0:
            if aged:
                means, _ = _aged_kernel(
                    motion, tables.prev_particles, tables.ages,
                    tables.lam_idx, tables.lams, tables.measurements[j],
                )
            else:
                means, _, _ = motion.kernel_params(
                    tables.prev_particles, tables.measurements[j]
                )
            acc = tables.w3[:, j] @ means
        if len(tables.birth_particles):
            acc = acc + tables.w4[:, j] @ tables.birth_particles
        if closed is not None:
            acc = acc + closed.w4[:, j] @ closed.post_means[:, j]
        states.append(acc / total)
        shares.append(total)
    if not states:
        p = tables.prev_particles.shape[1]
        return np.empty((0, p))
    out = np.asarray(states)
    if merge_radius <= 0.0 or len(out) < 2:
        return out
    return _merge_extracted(out, np.asarray(shares), motion.H, merge_radius)


def _merge_extracted(
    states: np.ndarray, shares: np.ndarray, H: np.ndarray, radius: float
) -> np.ndarray:
    obs = states @ H.T
    order = np.argsort(shares)[::-1]
    used = np.zeros(len(states), dtype=bool)
    merged = []
    for i in order:
        if used[i]:
            continue
        d = np.linalg.norm(obs - obs[i], axis=1)
        group = (~used) & (d <= radius)
        used |= group
        w = shares[group]
        merged.append(w @ states[group] / w.sum())
    return np.asarray(merged)


def cmc_phd_moment_pair(
    tables: CmcTables,
    motion: SemiLinearGaussianModel,
    f: MomentFunction,
    rng: RngStream,
) -> tuple[np.ndarray, np.ndarray]:
    """Crude and conditional estimates of int f dv_n from one update's
    weight tables.

    The crude estimate evaluates f at fresh draws (transition draws for the
    undetected group, conditional kernel draws per measurement for the
    detected group); the conditional one integrates f in closed form under
    the same weights.  Newborn groups use the birth particles in both, so
    averaging the crude estimate over redraws recovers the conditional one
    exactly.
    """
    X = tables.prev_particles
    Z = tables.measurements
    gen = rng.generator
    aged = tables.ages is not None and bool(
        tables.ages.any()
        or (tables.lam_idx is not None and tables.lam_idx.any())
    )

    if aged:
        trans_means = np.empty_like(X)
        trans_covs = np.empty((len(X),) + motion.process_cov.shape)
        for rows, a, li in _spread_groups(tables.ages, tables.lam_idx):
            lam = tables.lams[li] if li else None
            Fe, Ce, _, _, _ = _group_moments(motion, a + 1, lam)
            trans_means[rows] = X[rows] @ Fe.T
            trans_covs[rows] = Ce
    else:
        trans_means = motion.drift(X)
        trans_covs = motion.noise_cov(X)
    crude = tables.w1 @ f.evaluate(
        sample_gaussians(trans_means, trans_covs, gen)
    )
    cmc = tables.w1 @ f.conditional(trans_means, trans_covs)

    for j in range(Z.shape[0]):
        if aged:
            means, cov_by_group = _aged_kernel(
                motion, X, tables.ages, tables.lam_idx, tables.lams, Z[j]
            )
            covs = np.empty((len(X),) + motion.process_cov.shape)
            for (a, li), cov in cov_by_group.items():
                key = tables.ages == a
                if tables.lam_idx is not None:
                    key &= tables.lam_idx == li
                covs[key] = cov
        else:
            means, covs, _ = motion.kernel_params(X, Z[j])
        crude = crude + tables.w3[:, j] @ f.evaluate(
            sample_gaussians(means, covs, gen)
        )
        cmc = cmc + tables.w3[:, j] @ f.conditional(means, covs)

    if len(tables.birth_particles):
        fb = f.evaluate(tables.birth_particles)
        birth_part = tables.w2 @ fb + tables.w4.sum(axis=1) @ fb
        crude = crude + birth_part
        cmc = cmc + birth_part
    if tables.closed is not None:
        cb = tables.closed
        closed_part = cb.w2 @ f.conditional(cb.means, cb.covs)
        for j in range(Z.shape[0]):
            closed_part = closed_part + cb.w4[:, j] @ f.conditional(
                cb.post_means[:, j], cb.post_covs
            )
        crude = crude + closed_part
        cmc = cmc + closed_part
    return crude, cmc


# ---------------------------------------------------------------------------
# Gaussian mixture PHD


@dataclass(frozen=True)
class GmConfig:
    prune_threshold: float = 1e-5
    merge_threshold: float = 4.0      # squared Mahalanobis distance bound
    max_components: int = 100


def gm_phd_step(
    mixture: GaussianMixture,
    params: PhdModelParams,
    Z: np.ndarray,
    config: GmConfig = GmConfig(),
) -> GaussianMixture:
    """Closed-form PHD step for linear Gaussian single-target models with
    Gaussian mixture birth, with the usual prune / merge / cap reduction."""
    motion = params.motion
    if not hasattr(motion, "transition_matrix"):
        raise ValueError("gm_phd_step needs a linear Gaussian motion model")
    if not isinstance(params.birth, GaussianMixtureBirth):
        raise ValueError("gm_phd_step needs a Gaussian mixture birth model")
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    F, Q = motion.transition_matrix, motion.process_cov
    H, R = motion.H, motion.R
    p_d, p_s = params.detection_prob, params.survival_prob

    # predict survivors, then append birth components
    pred_w = p_s * mixture.weights
    pred_m = mixture.means @ F.T
    pred_P = np.einsum("ij,njk,lk->nil", F, mixture.covs, F) + Q
    birth = params.birth.mixture
    pred_w = np.concatenate([pred_w, birth.weights])
    pred_m = np.concatenate([pred_m, birth.means])
    pred_P = np.concatenate([pred_P, birth.covs])
    J, p = pred_m.shape

    out_w = [(1.0 - p_d) * pred_w]
    out_m = [pred_m]
    out_P = [pred_P]

    if Z.shape[0] > 0:
        PHt = pred_P @ H.T                                    # (J, p, q)
        S = H @ PHt + R
        S = 0.5 * (S + np.swapaxes(S, 1, 2))
        cholS = np.linalg.cholesky(S)
        gains = np.swapaxes(np.linalg.solve(S, np.swapaxes(PHt, 1, 2)), 1, 2)
        A = np.eye(p)[None] - gains @ H
        upd_P = A @ pred_P @ np.swapaxes(A, 1, 2) + np.einsum(
            "npq,qr,nsr->nps", gains, R, gains
        )
        q = H.shape[0]
        logdet = 2.0 * np.log(np.diagonal(cholS, axis1=1, axis2=2)).sum(axis=1)
        innov = Z[None, :, :] - (pred_m @ H.T)[:, None, :]     # (J, M, q)
        zsolve = np.linalg.solve(cholS[:, None], innov[..., None])[..., 0]
        maha = np.einsum("jmq,jmq->jm", zsolve, zsolve)
        logq = -0.5 * (q * np.log(2.0 * np.pi) + logdet[:, None] + maha)  # (J, M)
        qz = np.exp(logq)
        denom = params.clutter(Z) + p_d * (pred_w @ qz)        # (M,)
        upd_w = p_d * pred_w[:, None] * qz / denom[None, :]    # (J, M)
        upd_m = pred_m[:, None, :] + np.einsum("jpq,jmq->jmp", gains, innov)
        out_w.append(upd_w.T.reshape(-1))
        out_m.append(upd_m.transpose(1, 0, 2).reshape(-1, p))
        out_P.append(np.tile(upd_P, (Z.shape[0], 1, 1)))

    w = np.concatenate(out_w)
    m = np.concatenate(out_m)
    P = np.concatenate(out_P)

    keep = w > config.prune_threshold
    w, m, P = w[keep], m[keep], P[keep]

    # merge: greedily absorb components near the current heaviest one
    merged_w, merged_m, merged_P = [], [], []
    alive = np.ones(len(w), dtype=bool)
    while alive.any():
        i = int(np.argmax(np.where(alive, w, -np.inf)))
        diff = m[alive] - m[i]
        dist = np.einsum(
            "nj,jk,nk->n", diff, np.linalg.inv(P[i]), diff
        )
        group = np.where(alive)[0][dist <= config.merge_threshold]
        gw = w[group]
        tot = gw.sum()
        gm_mean = gw @ m[group] / tot
        spread = m[group] - gm_mean
        gm_cov = np.einsum("n,njk->jk", gw, P[group]) / tot + np.einsum(
            "n,nj,nk->jk", gw, spread, spread
        ) / tot
        merged_w.append(tot)
        merged_m.append(gm_mean)
        merged_P.append(0.5 * (gm_cov + gm_cov.T))
        alive[group] = False

    w = np.asarray(merged_w)
    m = np.asarray(merged_m)
    P = np.asarray(merged_P)
    if len(w) > config.max_components:
        order = np.argsort(w)[::-1][: config.max_components]
        w, m, P = w[order], m[order], P[order]
    return GaussianMixture(w, m, P)


def gm_extract(mixture: GaussianMixture, threshold: float = 0.5) -> np.ndarray:
    """States of components heavier than the threshold; a component with
    weight near k counts as k coincident targets."""
    states = []
    for w, mean in zip(mixture.weights, mixture.means):
        if w > threshold:
            states.extend([mean] * max(1, int(round(w))))
    if not states:
        return np.empty((0, mixture.means.shape[1]))
    return np.asarray(states)
