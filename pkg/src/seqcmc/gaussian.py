"""Gaussian beliefs, Kalman recursions, and batched Gaussian densities.

The filters in this package lean on two closed-form facts about linear
Gaussian observation models: the one-step posterior is Gaussian with
moments given by the Kalman update, and the predictive density of the
measurement is Gaussian with the innovation covariance.  Both are exposed
here for a single belief and, for the particle hot paths, for stacked
arrays of beliefs at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

__all__ = [
    "DegenerateInnovationError",
    "GaussianBelief",
    "kalman_predict",
    "kalman_update",
    "gauss_logpdf",
    "mvn_logpdf",
    "mvn_logpdf_batch",
    "batch_kalman_update",
    "sample_gaussians",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


class DegenerateInnovationError(RuntimeError):
    """Innovation covariance is singular; the Kalman update is undefined."""


def _symmetrize(cov: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    scale = max(1.0, float(np.abs(cov).max()))
    if float(np.abs(cov - cov.T).max()) > tol * scale:
        raise ValueError("covariance is not symmetric")
    return 0.5 * (cov + cov.T)


@dataclass
class GaussianBelief:
    """Mean and covariance of a Gaussian state belief.

    The covariance is symmetrized on construction.  Eigenvalues in
    [-1e-10 * scale, 0) are treated as rounding noise and clamped to zero;
    anything more negative is a genuine error.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = _symmetrize(np.atleast_2d(self.cov))
        if cov.shape != (self.mean.size, self.mean.size):
            raise ValueError("covariance shape must match the mean dimension")
        eigvals = np.linalg.eigvalsh(cov)
        scale = max(1.0, float(np.abs(cov).max()))
        if eigvals.min() < -1e-10 * scale:
            raise ValueError(f"covariance has negative eigenvalue {eigvals.min():g}")
        if eigvals.min() < 0.0:
            # rounding noise only: project onto the PSD cone
            vals, vecs = np.linalg.eigh(cov)
            cov = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
            cov = 0.5 * (cov + cov.T)
        self.cov = cov

    @property
    def dim(self) -> int:
        return self.mean.size


def kalman_predict(
    belief: GaussianBelief,
    transition: np.ndarray,
    noise_cov: np.ndarray,
    noise_gain: np.ndarray | None = None,
) -> GaussianBelief:
    """Propagate a belief through x' = F x + G u with u ~ N(0, Q)."""
    F = np.atleast_2d(np.asarray(transition, dtype=float))
    Q = np.atleast_2d(np.asarray(noise_cov, dtype=float))
    if noise_gain is not None:
        G = np.atleast_2d(np.asarray(noise_gain, dtype=float))
        Q = G @ Q @ G.T
    mean = F @ belief.mean
    cov = F @ belief.cov @ F.T + Q
    return GaussianBelief(mean, cov)


def kalman_update(
    belief: GaussianBelief,
    obs_matrix: np.ndarray,
    obs_cov: np.ndarray,
    observation: np.ndarray,
) -> tuple[GaussianBelief, float]:
    """Condition a belief on y = H x + v, v ~ N(0, R).

    Returns the posterior belief and the log predictive density
    log N(y; H m, H P H^T + R).  A singular innovation covariance raises
    DegenerateInnovationError.
    """
    H = np.atleast_2d(np.asarray(obs_matrix, dtype=float))
    R = np.atleast_2d(np.asarray(obs_cov, dtype=float))
    y = np.atleast_1d(np.asarray(observation, dtype=float))
    m, P = belief.mean, belief.cov

    innovation = y - H @ m
    S = H @ P @ H.T + R
    S = 0.5 * (S + S.T)
    try:
        chol = cho_factor(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise DegenerateInnovationError("degenerate innovation covariance") from exc
    if not np.isfinite(chol[0]).all():
        raise DegenerateInnovationError("degenerate innovation covariance")

    gain = cho_solve(chol, (P @ H.T).T).T
    mean = m + gain @ innovation
    # Joseph form keeps the posterior covariance PSD under roundoff
    A = np.eye(P.shape[0]) - gain @ H
    cov = A @ P @ A.T + gain @ R @ gain.T

    q = y.size
    maha = innovation @ cho_solve(chol, innovation)
    logdet = 2.0 * float(np.log(np.diag(chol[0])).sum())
    loglik = -0.5 * (q * _LOG_2PI + logdet + float(maha))
    return GaussianBelief(mean, cov), loglik


def gauss_logpdf(x: np.ndarray, mean: np.ndarray, var: np.ndarray | float) -> np.ndarray:
    """Elementwise scalar Gaussian log density, broadcasting its arguments."""
    x = np.asarray(x, dtype=float)
    d = x - np.asarray(mean, dtype=float)
    v = np.asarray(var, dtype=float)
    return -0.5 * (_LOG_2PI + np.log(v) + d * d / v)


def mvn_logpdf(diff: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """log N(diff; 0, cov) for rows of diff (n, q) under one shared covariance."""
    diff = np.atleast_2d(np.asarray(diff, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    q = cov.shape[0]
    if q == 1:
        return gauss_logpdf(diff[:, 0], 0.0, cov[0, 0])
    try:
        chol = cho_factor(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise DegenerateInnovationError("degenerate innovation covariance") from exc
    solved = cho_solve(chol, diff.T)
    maha = np.einsum("qn,qn->n", diff.T, solved)
    logdet = 2.0 * float(np.log(np.diag(chol[0])).sum())
    return -0.5 * (q * _LOG_2PI + logdet + maha)


def mvn_logpdf_batch(diff: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """log N(diff_i; 0, covs_i) with per-row covariances (n, q, q)."""
    diff = np.atleast_2d(np.asarray(diff, dtype=float))
    covs = np.asarray(covs, dtype=float)
    n, q = diff.shape
    if q == 1:
        return gauss_logpdf(diff[:, 0], 0.0, covs.reshape(n))
    chol = np.linalg.cholesky(covs)
    z = np.linalg.solve(chol, diff[:, :, None])[:, :, 0]
    maha = np.einsum("nq,nq->n", z, z)
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
    return -0.5 * (q * _LOG_2PI + logdet + maha)


def sample_gaussians(
    means: np.ndarray, covs: np.ndarray, generator: np.random.Generator
) -> np.ndarray:
    """One draw from each row Gaussian N(means_i, covs_i).

    covs may be shared (p, p) or per-row (n, p, p).  Uses mean + chol(cov) z
    with standard normals drawn in row order, so two callers with identical
    moments and generator state produce identical samples.
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    covs = np.asarray(covs, dtype=float)
    n, p = means.shape
    z = generator.standard_normal((n, p))
    if p == 1:
        var = covs.reshape(-1) if covs.ndim == 3 else covs.reshape(1)
        return means + (np.sqrt(var) * z[:, 0]).reshape(n, 1)
    if covs.ndim == 2:
        return means + z @ np.linalg.cholesky(covs).T
    chol = np.linalg.cholesky(covs)
    return means + np.einsum("npq,nq->np", chol, z)


def batch_kalman_update(
    means: np.ndarray,
    covs: np.ndarray,
    obs_matrix: np.ndarray,
    obs_cov: np.ndarray,
    observation: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Kalman-update a stack of beliefs against one observation.

    means: (n, p); covs: (n, p, p) or shared (p, p); returns updated means,
    updated covariances (Joseph form), and the log predictive densities.
    """
    means = np.asarray(means, dtype=float)
    H = np.atleast_2d(np.asarray(obs_matrix, dtype=float))
    R = np.atleast_2d(np.asarray(obs_cov, dtype=float))
    y = np.atleast_1d(np.asarray(observation, dtype=float))
    n, p = means.shape
    q = H.shape[0]

    covs = np.asarray(covs, dtype=float)
    shared_cov = covs.ndim == 2
    if shared_cov:
        covs = np.broadcast_to(covs, (n, p, p))

    innovation = y[None, :] - means @ H.T
    PHt = covs @ H.T                                # (n, p, q)
    S = H @ PHt + R                                 # (n, q, q) via broadcasting
    S = 0.5 * (S + np.swapaxes(S, 1, 2))
    try:
        cholS = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise DegenerateInnovationError("degenerate innovation covariance") from exc

    # gain_i = P_i H^T S_i^{-1}
    Sinv_Ht_P = np.linalg.solve(S, np.swapaxes(PHt, 1, 2))  # (n, q, p)
    gains = np.swapaxes(Sinv_Ht_P, 1, 2)                    # (n, p, q)
    upd_means = means + np.einsum("npq,nq->np", gains, innovation)
    A = np.eye(p)[None, :, :] - gains @ H
    upd_covs = A @ covs @ np.swapaxes(A, 1, 2) + np.einsum(
        "npq,qr,nsr->nps", gains, R, gains
    )
    upd_covs = 0.5 * (upd_covs + np.swapaxes(upd_covs, 1, 2))

    z = np.linalg.solve(cholS, innovation[:, :, None])[:, :, 0]
    maha = np.einsum("nq,nq->n", z, z)
    logdet = 2.0 * np.log(np.diagonal(cholS, axis1=1, axis2=2)).sum(axis=1)
    logliks = -0.5 * (q * _LOG_2PI + logdet + maha)
    return upd_means, upd_covs, logliks
