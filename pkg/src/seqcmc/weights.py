"""Particle weights: log-domain normalization, effective sample size, resampling.

Importance weights are carried as log values until the last moment and
normalized with the max-subtraction trick, so filters survive likelihoods
hundreds of log-units apart without overflow or silent underflow to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import RngStream

__all__ = [
    "DegenerateWeightsError",
    "WeightedParticleSet",
    "normalize_log_weights",
    "ess",
    "resample_indices",
    "resample",
]


class DegenerateWeightsError(RuntimeError):
    """All particle weights vanished (every log weight is -inf)."""


def normalize_log_weights(log_weights: np.ndarray) -> tuple[np.ndarray, float]:
    """Normalize unnormalized log weights.

    Returns ``(weights, log_normalizer)`` where ``weights`` sums to one and
    ``log_normalizer = log sum_i exp(lw_i)``.  Entries equal to -inf get
    weight zero.  NaN or +inf entries are rejected, and if no entry is
    finite the weights are degenerate and an error is raised.
    """
    lw = np.asarray(log_weights, dtype=float)
    if lw.ndim != 1 or lw.size == 0:
        raise ValueError("log_weights must be a non-empty 1-d array")
    if np.isnan(lw).any() or np.isposinf(lw).any():
        raise ValueError("log weights must be finite or -inf")
    m = lw.max()
    if np.isneginf(m):
        raise DegenerateWeightsError("degenerate weights: all log weights are -inf")
    shifted = np.exp(lw - m)
    total = shifted.sum()
    return shifted / total, float(m + np.log(total))


def ess(weights: np.ndarray, tol: float = 1e-8) -> float:
    """Effective sample size 1 / sum_i w_i^2 of normalized weights."""
    w = np.asarray(weights, dtype=float)
    if abs(w.sum() - 1.0) > tol or (w < 0).any():
        raise ValueError("ess expects normalized non-negative weights")
    return float(1.0 / np.sum(w * w))


@dataclass
class WeightedParticleSet:
    """Particles with normalized importance weights.

    ``particles`` has shape (n, state_dim) and ``weights`` shape (n,); the
    weights are validated to be non-negative and to sum to one.
    """

    particles: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 1 or self.weights.shape[0] != self.particles.shape[0]:
            raise ValueError("weights must be 1-d and match the particle count")
        if (self.weights < 0).any() or abs(self.weights.sum() - 1.0) > 1e-8:
            raise ValueError("weights must be non-negative and sum to one")

    def __len__(self) -> int:
        return self.particles.shape[0]

    @property
    def ess(self) -> float:
        return ess(self.weights)

    def mean(self) -> np.ndarray:
        return self.weights @ self.particles


def resample_indices(
    weights: np.ndarray,
    n_out: int,
    rng: RngStream | np.random.Generator,
    scheme: str = "multinomial",
) -> np.ndarray:
    """Draw ancestor indices proportional to normalized weights.

    ``multinomial`` draws i.i.d. ancestors; ``systematic`` uses a single
    uniform offset and stratified positions.  Both are unbiased: particle i
    receives n_out * w_i copies in expectation.
    """
    w = np.asarray(weights, dtype=float)
    if n_out <= 0:
        raise ValueError("n_out must be positive")
    gen = rng.generator if isinstance(rng, RngStream) else rng
    cum = np.cumsum(w)
    cum[-1] = 1.0  # guard against cumulative rounding
    if scheme == "multinomial":
        u = gen.random(n_out)
    elif scheme == "systematic":
        u = (gen.random() + np.arange(n_out)) / n_out
    else:
        raise ValueError(f"unknown resampling scheme: {scheme!r}")
    return np.searchsorted(cum, u, side="right").astype(np.intp)


def resample(
    particle_set: WeightedParticleSet,
    n_out: int,
    rng: RngStream | np.random.Generator,
    scheme: str = "multinomial",
) -> WeightedParticleSet:
    """Resample a weighted set into n_out equally weighted particles."""
    idx = resample_indices(particle_set.weights, n_out, rng, scheme)
    return WeightedParticleSet(
        particles=particle_set.particles[idx],
        weights=np.full(n_out, 1.0 / n_out),
    )
