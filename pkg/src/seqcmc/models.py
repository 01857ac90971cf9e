"""State-space models with closed-form conditional transition kernels.

The central object is the semi-linear Gaussian model

    x_n = f(x_{n-1}) + K(x_{n-1}) u_n,   u_n ~ N(0, I)
    y_n = H x_n + v_n,                    v_n ~ N(0, R)

whose drift and noise gain may be nonlinear in the previous state while the
observation stays linear Gaussian.  Writing Q(x) = K(x) K(x)^T and
L(x) = H Q(x) H^T + R, conditioning the transition on the current
measurement is exact:

    p(x_n | x_{n-1}, y_n) = N(x_n; m(x_{n-1}, y_n), P(x_{n-1}))
    m(x, y) = f(x) + Q(x) H^T L(x)^{-1} (y - H f(x))
    P(x)    = Q(x) - Q(x) H^T L(x)^{-1} H Q(x)
    p(y_n | x_{n-1}) = N(y_n; H f(x_{n-1}), L(x_{n-1}))

These two densities are what make conditional (Rao-Blackwellized) particle
estimators computable: weights can be updated before sampling, and moments
of the next state can be integrated in closed form instead of sampled.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .gaussian import (
    GaussianBelief,
    gauss_logpdf,
    mvn_logpdf,
    mvn_logpdf_batch,
)
from .rng import RngStream

__all__ = [
    "MomentFunction",
    "state_moment",
    "process_variance_moment",
    "volatility_moment",
    "StateSpaceModel",
    "SemiLinearGaussianModel",
    "LinearGaussianModel",
    "ArchModel",
    "StochasticVolatilityModel",
    "LinearGaussianJmss",
    "SemiLinearJmss",
    "validate_mode_transition",
]


# ---------------------------------------------------------------------------
# moment functions


@dataclass(frozen=True)
class MomentFunction:
    """A statistic f(x) together with its Gaussian conditional expectation.

    ``evaluate`` maps states (n, p) to values (n, m).  ``conditional`` maps
    Gaussian moments (means (n, p), covs (n, p, p) or shared (p, p)) to
    E[f(X)] under those Gaussians, shape (n, m); it is None when no closed
    form is available.
    """

    dim: int
    evaluate: Callable[[np.ndarray], np.ndarray]
    conditional: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    name: str = "moment"


def _cov_diag(covs: np.ndarray, n: int, p: int) -> np.ndarray:
    covs = np.asarray(covs, dtype=float)
    if covs.ndim == 2:
        return np.broadcast_to(np.diag(covs), (n, p))
    return np.diagonal(covs, axis1=1, axis2=2)


def state_moment(dim: int) -> MomentFunction:
    """f(x) = x, whose conditional expectation is the Gaussian mean."""
    return MomentFunction(
        dim=dim,
        evaluate=lambda x: np.asarray(x, dtype=float),
        conditional=lambda means, covs: np.asarray(means, dtype=float),
        name="state",
    )


def process_variance_moment(beta0: float, beta1: float) -> MomentFunction:
    """f(x) = beta0 + beta1 x^2 for scalar states.

    Under N(m, P): E f(X) = beta0 + beta1 (m^2 + P).
    """

    def evaluate(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, 1)
        return beta0 + beta1 * x * x

    def conditional(means: np.ndarray, covs: np.ndarray) -> np.ndarray:
        m = np.asarray(means, dtype=float).reshape(-1, 1)
        v = _cov_diag(covs, m.shape[0], 1)
        return beta0 + beta1 * (m * m + v)

    return MomentFunction(1, evaluate, conditional, name="process_variance")


def volatility_moment(obs_scale: float) -> MomentFunction:
    """f(x) = obs_scale * exp(x / 2) for scalar states.

    Under N(m, P) the lognormal mean is obs_scale * exp(m/2 + P/8).
    """

    def evaluate(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, 1)
        return obs_scale * np.exp(0.5 * x)

    def conditional(means: np.ndarray, covs: np.ndarray) -> np.ndarray:
        m = np.asarray(means, dtype=float).reshape(-1, 1)
        v = _cov_diag(covs, m.shape[0], 1)
        return obs_scale * np.exp(0.5 * m + 0.125 * v)

    return MomentFunction(1, evaluate, conditional, name="volatility")


# ---------------------------------------------------------------------------
# base model


class StateSpaceModel:
    """Minimal interface shared by every model in the package."""

    state_dim: int
    obs_dim: int

    def sample_prior(self, n: int, rng: RngStream) -> np.ndarray:
        raise NotImplementedError

    def sample_transition(self, x_prev: np.ndarray, rng: RngStream) -> np.ndarray:
        raise NotImplementedError

    def transition_logpdf(self, x_new: np.ndarray, x_prev: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def obs_logpdf(self, y: np.ndarray, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample_obs(self, x: np.ndarray, rng: RngStream) -> np.ndarray:
        raise NotImplementedError


def _as_rows(x: np.ndarray, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1 and dim == 1:
        return x.reshape(-1, 1)
    return np.atleast_2d(x)


# ---------------------------------------------------------------------------
# semi-linear Gaussian model


class SemiLinearGaussianModel(StateSpaceModel):
    """Nonlinear-drift, state-dependent-noise transition with linear Gaussian
    observations; see the module docstring for the closed-form kernels.

    ``drift`` maps state rows (n, p) to (n, p); None means zero drift.
    ``noise_gain`` is either a constant (p, du) matrix or a callable mapping
    (n, p) rows to (n, p, du) gains.
    """

    def __init__(
        self,
        drift: Callable[[np.ndarray], np.ndarray] | None,
        noise_gain: np.ndarray | Callable[[np.ndarray], np.ndarray],
        obs_matrix: np.ndarray,
        obs_cov: np.ndarray,
        prior: GaussianBelief,
    ):
        self.H = np.atleast_2d(np.asarray(obs_matrix, dtype=float))
        self.R = np.atleast_2d(np.asarray(obs_cov, dtype=float))
        self.obs_dim, self.state_dim = self.H.shape
        self.prior = prior
        if prior.dim != self.state_dim:
            raise ValueError("prior dimension does not match the observation matrix")
        self._drift = drift

        if callable(noise_gain):
            self._gain_fn = noise_gain
            self._const_gain = None
        else:
            self._const_gain = np.atleast_2d(np.asarray(noise_gain, dtype=float))
            self._gain_fn = None
            Q = self._const_gain @ self._const_gain.T
            L = self.H @ Q @ self.H.T + self.R
            gain = np.linalg.solve(L.T, (Q @ self.H.T).T).T   # Q H^T L^{-1}
            Pk = Q - gain @ self.H @ Q
            self._const_Q = Q
            self._const_L = L
            self._const_kgain = gain
            self._const_kcov = 0.5 * (Pk + Pk.T)

        self._scalar = self.state_dim == 1 and self.obs_dim == 1
        self._chol_R = np.linalg.cholesky(self.R)

    # -- transition pieces

    def drift(self, x_prev: np.ndarray) -> np.ndarray:
        x_prev = _as_rows(x_prev, self.state_dim)
        if self._drift is None:
            return np.zeros_like(x_prev)
        return np.asarray(self._drift(x_prev), dtype=float).reshape(x_prev.shape)

    def noise_gain(self, x_prev: np.ndarray) -> np.ndarray:
        x_prev = _as_rows(x_prev, self.state_dim)
        if self._const_gain is not None:
            return np.broadcast_to(
                self._const_gain, (x_prev.shape[0],) + self._const_gain.shape
            )
        return np.asarray(self._gain_fn(x_prev), dtype=float)

    def noise_cov(self, x_prev: np.ndarray) -> np.ndarray:
        K = self.noise_gain(x_prev)
        return K @ np.swapaxes(K, 1, 2)

    # -- conditional kernel and predictive

    def kernel_params(
        self, x_prev: np.ndarray, y: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Moments of p(x_n | x_{n-1}, y_n) and the log predictive density.

        Returns (means (n, p), covs, logliks (n,)) where covs is (p, p) when
        the noise gain is constant and (n, p, p) otherwise.
        """
        x_prev = _as_rows(x_prev, self.state_dim)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        fx = self.drift(x_prev)
        n = x_prev.shape[0]

        if self._const_gain is not None:
            innov = y[None, :] - fx @ self.H.T
            means = fx + innov @ self._const_kgain.T
            logliks = mvn_logpdf(innov, self._const_L)
            return means, self._const_kcov, logliks

        if self._scalar:
            h = float(self.H[0, 0])
            r = float(self.R[0, 0])
            K = self.noise_gain(x_prev).reshape(n)
            qv = K * K
            L = h * h * qv + r
            innov = y[0] - h * fx[:, 0]
            gain = qv * h / L
            means = (fx[:, 0] + gain * innov).reshape(n, 1)
            pvar = qv * r / L
            logliks = gauss_logpdf(y[0], h * fx[:, 0], L)
            return means, pvar.reshape(n, 1, 1), logliks

        Q = self.noise_cov(x_prev)                          # (n, p, p)
        QHt = Q @ self.H.T                                  # (n, p, q)
        L = self.H @ QHt + self.R                           # (n, q, q)
        L = 0.5 * (L + np.swapaxes(L, 1, 2))
        innov = y[None, :] - fx @ self.H.T
        gains = np.swapaxes(np.linalg.solve(L, np.swapaxes(QHt, 1, 2)), 1, 2)
        means = fx + np.einsum("npq,nq->np", gains, innov)
        covs = Q - gains @ np.swapaxes(QHt, 1, 2)
        covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
        logliks = mvn_logpdf_batch(innov, L)
        return means, covs, logliks

    def optimal_kernel(self, x_prev: np.ndarray, y: np.ndarray) -> GaussianBelief:
        """Conditional transition kernel for a single previous state."""
        means, covs, _ = self.kernel_params(
            np.asarray(x_prev, dtype=float).reshape(1, -1), y
        )
        cov = covs if covs.ndim == 2 else covs[0]
        return GaussianBelief(means[0], cov)

    def predictive_loglik(self, x_prev: np.ndarray, y: np.ndarray) -> np.ndarray:
        """log p(y_n | x_{n-1}) for each row of x_prev."""
        return self.kernel_params(x_prev, y)[2]

    def conditional_moment(
        self, f: MomentFunction, x_prev: np.ndarray, y: np.ndarray
    ) -> np.ndarray:
        """E[f(X_n) | x_{n-1}, y_n] for each row of x_prev, shape (n, m)."""
        if f.conditional is None:
            raise ValueError(f"moment {f.name!r} has no closed conditional form")
        means, covs, _ = self.kernel_params(x_prev, y)
        return f.conditional(means, covs)

    # -- sampling and densities

    def sample_prior(self, n: int, rng: RngStream) -> np.ndarray:
        z = rng.generator.standard_normal((n, self.state_dim))
        chol = np.linalg.cholesky(self.prior.cov) if self.prior.cov.any() else np.zeros_like(self.prior.cov)
        return self.prior.mean[None, :] + z @ chol.T

    def sample_transition(self, x_prev: np.ndarray, rng: RngStream) -> np.ndarray:
        x_prev = _as_rows(x_prev, self.state_dim)
        fx = self.drift(x_prev)
        if self._const_gain is not None:
            z = rng.generator.standard_normal((x_prev.shape[0], self._const_gain.shape[1]))
            return fx + z @ self._const_gain.T
        K = self.noise_gain(x_prev)
        z = rng.generator.standard_normal((x_prev.shape[0], K.shape[2]))
        return fx + np.einsum("npu,nu->np", K, z)

    def transition_logpdf(self, x_new: np.ndarray, x_prev: np.ndarray) -> np.ndarray:
        x_new = _as_rows(x_new, self.state_dim)
        x_prev = _as_rows(x_prev, self.state_dim)
        diff = x_new - self.drift(x_prev)
        if self._const_gain is not None:
            return mvn_logpdf(diff, self._const_Q)
        if self._scalar:
            K = self.noise_gain(x_prev).reshape(-1)
            return gauss_logpdf(diff[:, 0], 0.0, K * K)
        return mvn_logpdf_batch(diff, self.noise_cov(x_prev))

    def obs_logpdf(self, y: np.ndarray, x: np.ndarray) -> np.ndarray:
        x = _as_rows(x, self.state_dim)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return mvn_logpdf(y[None, :] - x @ self.H.T, self.R)

    def sample_obs(self, x: np.ndarray, rng: RngStream) -> np.ndarray:
        x = _as_rows(x, self.state_dim)
        z = rng.generator.standard_normal((x.shape[0], self.obs_dim))
        return x @ self.H.T + z @ self._chol_R.T


class LinearGaussianModel(SemiLinearGaussianModel):
    """Fully linear Gaussian special case; keeps its matrices for exact
    Kalman reference filtering."""

    def __init__(
        self,
        transition_matrix: np.ndarray,
        process_cov: np.ndarray,
        obs_matrix: np.ndarray,
        obs_cov: np.ndarray,
        prior: GaussianBelief,
    ):
        A = np.atleast_2d(np.asarray(transition_matrix, dtype=float))
        Q = np.atleast_2d(np.asarray(process_cov, dtype=float))
        super().__init__(
            drift=lambda x: x @ A.T,
            noise_gain=np.linalg.cholesky(Q),
            obs_matrix=obs_matrix,
            obs_cov=obs_cov,
            prior=prior,
        )
        self.transition_matrix = A
        self.process_cov = Q


class ArchModel(SemiLinearGaussianModel):
    """Scalar ARCH(1) state with additive Gaussian observation noise.

    x_n = sqrt(beta0 + beta1 x_{n-1}^2) u_n,  y_n = x_n + v_n.  The noise
    gain depends on the previous state, so the conditional kernel variance
    varies per particle.
    """

    def __init__(
        self,
        beta0: float,
        beta1: float,
        obs_var: float,
        prior: GaussianBelief | None = None,
    ):
        if beta0 <= 0:
            raise ValueError("beta0 must be positive")
        if beta1 < 0:
            raise ValueError("beta1 must be non-negative")
        if obs_var <= 0:
            raise ValueError("obs_var must be positive")
        self.beta0 = float(beta0)
        self.beta1 = float(beta1)
        if prior is None:
            # stationary variance of the squared-ARCH recursion
            var0 = beta0 / (1.0 - beta1) if beta1 < 1.0 else beta0
            prior = GaussianBelief(np.zeros(1), np.array([[var0]]))

        def gain(x: np.ndarray) -> np.ndarray:
            return np.sqrt(beta0 + beta1 * x[:, 0] * x[:, 0]).reshape(-1, 1, 1)

        super().__init__(
            drift=None,
            noise_gain=gain,
            obs_matrix=np.array([[1.0]]),
            obs_cov=np.array([[float(obs_var)]]),
            prior=prior,
        )


# ---------------------------------------------------------------------------
# stochastic volatility


class StochasticVolatilityModel(StateSpaceModel):
    """Scalar log-volatility AR(1) with multiplicative observation noise.

    x_n = phi x_{n-1} + u_n, u_n ~ N(0, sigma^2);  y_n = beta exp(x_n/2) v_n,
    v_n ~ N(0, 1).  The observation is not linear in x, so the conditional
    kernel has no closed form; ``taylor_kernel_params`` provides a Gaussian
    approximation obtained by linearizing the log observation density.
    """

    def __init__(self, ar_coeff: float, noise_std: float, obs_scale: float):
        if not 0.0 <= abs(ar_coeff) < 1.0:
            raise ValueError("ar_coeff must satisfy |phi| < 1")
        if noise_std <= 0 or obs_scale <= 0:
            raise ValueError("noise_std and obs_scale must be positive")
        self.phi = float(ar_coeff)
        self.sigma = float(noise_std)
        self.beta = float(obs_scale)
        self.state_dim = 1
        self.obs_dim = 1
        self.prior = GaussianBelief(
            np.zeros(1), np.array([[self.sigma**2 / (1.0 - self.phi**2)]])
        )

    def sample_prior(self, n: int, rng: RngStream) -> np.ndarray:
        sd = float(np.sqrt(self.prior.cov[0, 0]))
        return sd * rng.generator.standard_normal((n, 1))

    def sample_transition(self, x_prev: np.ndarray, rng: RngStream) -> np.ndarray:
        x_prev = _as_rows(x_prev, 1)
        z = rng.generator.standard_normal(x_prev.shape)
        return self.phi * x_prev + self.sigma * z

    def transition_logpdf(self, x_new: np.ndarray, x_prev: np.ndarray) -> np.ndarray:
        x_new = _as_rows(x_new, 1)
        x_prev = _as_rows(x_prev, 1)
        return gauss_logpdf(x_new[:, 0], self.phi * x_prev[:, 0], self.sigma**2)

    def obs_logpdf(self, y: np.ndarray, x: np.ndarray) -> np.ndarray:
        x = _as_rows(x, 1)[:, 0]
        yv = float(np.atleast_1d(np.asarray(y, dtype=float))[0])
        return (
            -0.5 * np.log(2.0 * np.pi)
            - np.log(self.beta)
            - 0.5 * x
            - 0.5 * (yv * yv / self.beta**2) * np.exp(-x)
        )

    def sample_obs(self, x: np.ndarray, rng: RngStream) -> np.ndarray:
        x = _as_rows(x, 1)
        z = rng.generator.standard_normal(x.shape)
        return self.beta * np.exp(0.5 * x) * z

    def taylor_kernel_params(
        self, x_prev: np.ndarray, y: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Gaussian approximation of the conditional kernel and predictive.

        Expanding log g(y|x) to first order around the prior mean
        xbar = phi x_{n-1} gives log g(y|x) ~ log g(y|xbar) + b (x - xbar)
        with b = -1/2 + (y^2 / (2 beta^2)) exp(-xbar).  Multiplying the
        Gaussian transition by exp(b (x - xbar)) tilts its mean and leaves
        the variance unchanged:

            q(x | x_{n-1}, y) = N(x; xbar + b sigma^2, sigma^2)
            log p(y | x_{n-1}) ~ log g(y | xbar) + b^2 sigma^2 / 2

        Returns (means (n, 1), covs (n, 1, 1), approx logliks (n,)).
        """
        x_prev = _as_rows(x_prev, 1)
        yv = float(np.atleast_1d(np.asarray(y, dtype=float))[0])
        n = x_prev.shape[0]
        xbar = self.phi * x_prev[:, 0]
        b = -0.5 + (yv * yv / (2.0 * self.beta**2)) * np.exp(-xbar)
        means = (xbar + b * self.sigma**2).reshape(n, 1)
        covs = np.full((n, 1, 1), self.sigma**2)
        log_g_at_bar = (
            -0.5 * np.log(2.0 * np.pi)
            - np.log(self.beta)
            - 0.5 * xbar
            - 0.5 * (yv * yv / self.beta**2) * np.exp(-xbar)
        )
        logliks = log_g_at_bar + 0.5 * b * b * self.sigma**2
        return means, covs, logliks

    # the approximate kernel doubles as this model's conditional-moment rule
    kernel_params = taylor_kernel_params

    def predictive_loglik(self, x_prev: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.taylor_kernel_params(x_prev, y)[2]

    def conditional_moment(
        self, f: MomentFunction, x_prev: np.ndarray, y: np.ndarray
    ) -> np.ndarray:
        if f.conditional is None:
            raise ValueError(f"moment {f.name!r} has no closed conditional form")
        means, covs, _ = self.taylor_kernel_params(x_prev, y)
        return f.conditional(means, covs)


# ---------------------------------------------------------------------------
# jump Markov models


def validate_mode_transition(matrix: np.ndarray) -> np.ndarray:
    mat = np.atleast_2d(np.asarray(matrix, dtype=float))
    if mat.shape[0] != mat.shape[1]:
        raise ValueError("mode transition matrix must be square")
    if (mat < 0).any() or np.abs(mat.sum(axis=1) - 1.0).max() > 1e-9:
        raise ValueError("rows of mode transition matrix must sum to 1")
    return mat


class LinearGaussianJmss:
    """Jump Markov linear system: conditionally on the mode sequence the
    state is linear Gaussian, so per-mode Kalman recursions are exact.

    x_n = F(r_n) x_{n-1} + G(r_n) u_n,  y_n = H(r_n) x_n + L(r_n) v_n,
    u ~ N(0, Q), v ~ N(0, R), r_n a Markov chain on {0..K-1}.
    """

    def __init__(
        self,
        mode_transition: np.ndarray,
        F: np.ndarray,
        G: np.ndarray,
        H: np.ndarray,
        L: np.ndarray,
        process_cov: np.ndarray,
        obs_cov: np.ndarray,
        prior: GaussianBelief,
        initial_mode_probs: np.ndarray | None = None,
    ):
        self.mode_transition = validate_mode_transition(mode_transition)
        self.n_modes = self.mode_transition.shape[0]
        self.F = np.asarray(F, dtype=float)
        self.G = np.asarray(G, dtype=float)
        self.H = np.asarray(H, dtype=float)
        self.L = np.asarray(L, dtype=float)
        for name, arr in (("F", self.F), ("G", self.G), ("H", self.H), ("L", self.L)):
            if arr.shape[0] != self.n_modes:
                raise ValueError(f"{name} must stack one matrix per mode")
        Q = np.atleast_2d(np.asarray(process_cov, dtype=float))
        R = np.atleast_2d(np.asarray(obs_cov, dtype=float))
        self.process_cov = Q
        self.obs_cov = R
        # effective per-mode noise covariances
        self.Qeff = np.einsum("kpu,uv,kqv->kpq", self.G, Q, self.G)
        self.Reff = np.einsum("kpu,uv,kqv->kpq", self.L, R, self.L)
        self.prior = prior
        self.state_dim = self.F.shape[1]
        self.obs_dim = self.H.shape[1]
        if initial_mode_probs is None:
            initial_mode_probs = np.full(self.n_modes, 1.0 / self.n_modes)
        self.initial_mode_probs = np.asarray(initial_mode_probs, dtype=float)
        self.chol_Qeff = np.linalg.cholesky(self.Qeff)
        self.chol_Reff = np.linalg.cholesky(self.Reff)


class SemiLinearJmss:
    """Jump Markov system whose per-mode dynamics are semi-linear Gaussian.

    Conditionally on the mode, the optimal kernel and predictive density of
    each mode's SemiLinearGaussianModel apply, which is what the
    mode-marginalized estimators exploit.
    """

    def __init__(
        self,
        mode_transition: np.ndarray,
        mode_models: tuple[SemiLinearGaussianModel, ...],
        initial_mode_probs: np.ndarray | None = None,
    ):
        self.mode_transition = validate_mode_transition(mode_transition)
        self.n_modes = self.mode_transition.shape[0]
        if len(mode_models) != self.n_modes:
            raise ValueError("need one per-mode model per transition row")
        dims = {(m.state_dim, m.obs_dim) for m in mode_models}
        if len(dims) != 1:
            raise ValueError("per-mode models must share state and obs dimensions")
        self.mode_models = tuple(mode_models)
        self.state_dim, self.obs_dim = dims.pop()
        if initial_mode_probs is None:
            initial_mode_probs = np.full(self.n_modes, 1.0 / self.n_modes)
        self.initial_mode_probs = np.asarray(initial_mode_probs, dtype=float)
