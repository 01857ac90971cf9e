"""Benchmark scenario configuration and ground-truth simulation.

A scenario is a JSON document with a ``kind`` (single, jmss, phd), a model
block, filter definitions, estimator selections, and run controls (seed,
repetitions, horizon).  ``load_config`` validates the document into typed
dataclasses and raises ConfigError with a readable message on any problem;
``generate_truth`` simulates one ground-truth tape per seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gaussian import GaussianBelief
from .models import (
    ArchModel,
    LinearGaussianJmss,
    LinearGaussianModel,
    MomentFunction,
    SemiLinearGaussianModel,
    StochasticVolatilityModel,
    process_variance_moment,
    state_moment,
    volatility_moment,
)
from .phd import (
    CompositeBirth,
    GaussianMixture,
    GaussianMixtureBirth,
    MeasurementDrivenBirth,
    PhdModelParams,
    TwoPointBirth,
)
from .rng import RngStream
from .single import ResamplePolicy

__all__ = [
    "ConfigError",
    "FilterSpec",
    "EstimatorSpec",
    "ScenarioConfig",
    "TruthTape",
    "load_config",
    "parse_config",
    "generate_truth",
    "coordinated_turn_jmss",
    "constant_velocity_model",
]


class ConfigError(ValueError):
    """A scenario config failed validation."""


def _need(block: dict, key: str, ctx: str):
    if key not in block:
        raise ConfigError(f"{ctx}: missing required key {key!r}")
    return block[key]


def _number(block: dict, key: str, ctx: str, default=None) -> float:
    if key not in block:
        if default is None:
            raise ConfigError(f"{ctx}: missing required key {key!r}")
        return float(default)
    value = block[key]
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"{ctx}: {key!r} must be a number, got {value!r}")
    return float(value)


def _integer(block: dict, key: str, ctx: str, default=None) -> int:
    value = _number(block, key, ctx, default)
    if value != int(value):
        raise ConfigError(f"{ctx}: {key!r} must be an integer")
    return int(value)


@dataclass(frozen=True)
class FilterSpec:
    id: str
    algorithm: str          # sir | fa | bootstrap | generic | rbpf | smc_phd | cmc_phd | gm_phd
    n_particles: int = 1000
    proposal: str = "optimal"      # generic only: optimal | taylor
    options: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EstimatorSpec:
    name: str
    filter: str | None
    estimate: str           # crude | cmc | cmc_weighted | cmc_kernel_only |
    #                         cmc_kernel_and_predictive | kalman


@dataclass
class ScenarioConfig:
    kind: str
    name: str
    seed: int
    repetitions: int
    horizon: int
    model: dict
    filters: tuple[FilterSpec, ...]
    estimators: tuple[EstimatorSpec, ...]
    moment: dict
    resampling: ResamplePolicy
    reference: dict
    timing: str = "none"             # none | monotonic
    ospa: dict = field(default_factory=dict)
    phd: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @property
    def seeds(self) -> list[int]:
        explicit = self.raw.get("seeds")
        if explicit is not None:
            return [int(s) for s in explicit]
        return [self.seed + i for i in range(self.repetitions)]


_SINGLE_ALGOS = {"sir", "fa", "bootstrap", "generic"}
_JMSS_ALGOS = {"rbpf"}
_PHD_ALGOS = {"smc_phd", "cmc_phd", "gm_phd"}
_ESTIMATES = {
    "crude",
    "cmc",
    "cmc_weighted",
    "cmc_kernel_only",
    "cmc_kernel_and_predictive",
    "kalman",
}
# which estimate series each algorithm actually produces
_ALGO_ESTIMATES = {
    "sir": {"crude", "cmc"},
    "fa": {"crude", "cmc", "cmc_weighted"},
    "bootstrap": {"crude"},
    "generic": {"crude", "cmc", "cmc_kernel_only", "cmc_kernel_and_predictive"},
    "rbpf": {"crude", "cmc"},
}


def parse_config(doc: dict) -> ScenarioConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    kind = _need(doc, "kind", "config")
    if kind not in ("single", "jmss", "phd"):
        raise ConfigError(f"config: unknown kind {kind!r}")
    name = doc.get("name", "scenario")
    seed = _integer(doc, "seed", "config")
    repetitions = _integer(doc, "repetitions", "config")
    horizon = _integer(doc, "horizon", "config")
    if repetitions <= 0 or horizon <= 0:
        raise ConfigError("config: repetitions and horizon must be positive")
    model = _need(doc, "model", "config")
    if not isinstance(model, dict) or "type" not in model:
        raise ConfigError("config: model must be an object with a 'type'")

    res = doc.get("resampling", {})
    scheme = res.get("scheme", "multinomial")
    if scheme not in ("multinomial", "systematic"):
        raise ConfigError(f"resampling: unknown scheme {scheme!r}")
    mode = res.get("mode", "adaptive")
    if mode not in ("adaptive", "always", "never"):
        raise ConfigError(f"resampling: unknown mode {mode!r}")
    policy = ResamplePolicy(
        scheme=scheme,
        ess_fraction=_number(res, "ess_fraction", "resampling", 0.5),
        mode=mode,
    )

    filters = []
    seen = set()
    for i, f in enumerate(doc.get("filters", [])):
        ctx = f"filters[{i}]"
        fid = _need(f, "id", ctx)
        algo = _need(f, "algorithm", ctx)
        allowed = {"single": _SINGLE_ALGOS, "jmss": _JMSS_ALGOS, "phd": _PHD_ALGOS}[kind]
        if algo not in allowed:
            raise ConfigError(f"{ctx}: algorithm {algo!r} not valid for kind {kind!r}")
        if fid in seen:
            raise ConfigError(f"{ctx}: duplicate filter id {fid!r}")
        seen.add(fid)
        filters.append(
            FilterSpec(
                id=fid,
                algorithm=algo,
                n_particles=_integer(f, "n_particles", ctx, 1000),
                proposal=f.get("proposal", "optimal"),
                options={
                    k: v
                    for k, v in f.items()
                    if k not in ("id", "algorithm", "n_particles", "proposal")
                },
            )
        )

    algo_by_id = {f.id: f.algorithm for f in filters}
    estimators = []
    est_names = set()
    for i, e in enumerate(doc.get("estimators", [])):
        ctx = f"estimators[{i}]"
        ename = _need(e, "name", ctx)
        estimate = _need(e, "estimate", ctx)
        if estimate not in _ESTIMATES:
            raise ConfigError(f"{ctx}: unknown estimate {estimate!r}")
        fref = e.get("filter")
        if estimate != "kalman":
            if fref not in seen:
                raise ConfigError(f"{ctx}: references unknown filter {fref!r}")
            if estimate not in _ALGO_ESTIMATES[algo_by_id[fref]]:
                raise ConfigError(
                    f"{ctx}: filter {fref!r} ({algo_by_id[fref]}) does not "
                    f"produce estimate {estimate!r}"
                )
        if ename in est_names:
            raise ConfigError(f"{ctx}: duplicate estimator name {ename!r}")
        est_names.add(ename)
        estimators.append(EstimatorSpec(name=ename, filter=fref, estimate=estimate))
    if kind in ("single", "jmss") and not estimators:
        raise ConfigError("config: at least one estimator is required")
    if kind == "phd" and not filters:
        raise ConfigError("config: at least one filter is required")

    default_ref = {"single": {"kind": "kalman"}, "jmss": {"kind": "bootstrap"}, "phd": {"kind": "none"}}
    reference = doc.get("reference", default_ref[kind])
    if reference.get("kind") not in ("kalman", "bootstrap", "none"):
        raise ConfigError(f"reference: unknown kind {reference.get('kind')!r}")
    if kind in ("single", "jmss") and reference.get("kind") == "none":
        raise ConfigError("reference: single and jmss runs need a kalman or bootstrap reference")
    needs_exact = reference.get("kind") == "kalman" or any(
        e.estimate == "kalman" for e in estimators
    )
    if needs_exact:
        if model.get("type") != "linear_gaussian":
            raise ConfigError("config: the exact reference requires a linear Gaussian model")
        if doc.get("moment", {}).get("type", "state") != "state":
            raise ConfigError("config: the exact reference requires the state moment")

    timing = doc.get("timing", "none")
    if timing not in ("none", "monotonic"):
        raise ConfigError(f"config: unknown timing mode {timing!r}")
    if timing == "monotonic" and kind != "jmss":
        raise ConfigError("config: per-estimator timing is only collected for jmss runs")

    cfg = ScenarioConfig(
        kind=kind,
        name=name,
        seed=seed,
        repetitions=repetitions,
        horizon=horizon,
        model=model,
        filters=tuple(filters),
        estimators=tuple(estimators),
        moment=doc.get("moment", {}),
        resampling=policy,
        reference=reference,
        timing=timing,
        ospa=doc.get("ospa", {}),
        phd=doc.get("phd", {}),
        raw=doc,
    )
    # building the model surfaces model-block errors at validation time
    build_model(cfg)
    build_moment(cfg)
    return cfg


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(doc)


# ---------------------------------------------------------------------------
# model builders


def build_model(cfg: ScenarioConfig):
    m = cfg.model
    mtype = m["type"]
    ctx = f"model({mtype})"
    if cfg.kind == "single":
        if mtype == "linear_gaussian":
            return LinearGaussianModel(
                np.array([[_number(m, "coeff", ctx)]]),
                np.array([[_number(m, "process_var", ctx)]]),
                np.array([[1.0]]),
                np.array([[_number(m, "obs_var", ctx)]]),
                GaussianBelief(
                    np.array([_number(m, "prior_mean", ctx, 0.0)]),
                    np.array([[_number(m, "prior_var", ctx, 1.0)]]),
                ),
            )
        if mtype == "arch":
            return ArchModel(
                _number(m, "beta0", ctx),
                _number(m, "beta1", ctx),
                _number(m, "obs_var", ctx),
            )
        if mtype == "stochastic_volatility":
            return StochasticVolatilityModel(
                _number(m, "ar_coeff", ctx),
                _number(m, "noise_std", ctx),
                _number(m, "obs_scale", ctx),
            )
        raise ConfigError(f"{ctx}: unknown single-object model type")
    if cfg.kind == "jmss":
        if mtype == "coordinated_turn":
            return coordinated_turn_jmss(
                turn_rates_deg=tuple(_need(m, "turn_rates_deg", ctx)),
                self_prob=_number(m, "self_prob", ctx),
                period=_number(m, "period", ctx, 2.0),
                accel_std=_number(m, "accel_std", ctx, 3.0),
                obs_std=_number(m, "obs_std", ctx, 10.0),
                prior_mean=m.get("prior_mean"),
                prior_std=m.get("prior_std"),
            )
        raise ConfigError(f"{ctx}: unknown jmss model type")
    if mtype == "constant_velocity":
        return constant_velocity_model(
            period=_number(m, "period", ctx, 2.0),
            accel_std=_number(m, "accel_std", ctx, 3.0),
            obs_std=_number(m, "obs_std", ctx, 0.3),
        )
    raise ConfigError(f"{ctx}: unknown phd model type")


def build_moment(cfg: ScenarioConfig) -> MomentFunction:
    m = cfg.moment
    mtype = m.get("type")
    model = cfg.model
    if mtype is None:
        mtype = "volatility" if model["type"] == "stochastic_volatility" else "state"
    if mtype == "state":
        return state_moment(1 if cfg.kind == "single" else 4)
    if mtype == "process_variance":
        return process_variance_moment(
            _number(m, "beta0", "moment", model.get("beta0")),
            _number(m, "beta1", "moment", model.get("beta1")),
        )
    if mtype == "volatility":
        return volatility_moment(
            _number(m, "obs_scale", "moment", model.get("obs_scale"))
        )
    raise ConfigError(f"moment: unknown type {mtype!r}")


def _cv_process_cov(period: float, accel_std: float) -> np.ndarray:
    T = period
    block = accel_std**2 * np.array([[T**3 / 3.0, T**2 / 2.0], [T**2 / 2.0, T]])
    Q = np.zeros((4, 4))
    Q[:2, :2] = block
    Q[2:, 2:] = block
    return Q


def _turn_matrix(omega: float, T: float) -> np.ndarray:
    # state ordering (px, vx, py, vy)
    if abs(omega) < 1e-12:
        return np.array(
            [[1, T, 0, 0], [0, 1, 0, 0], [0, 0, 1, T], [0, 0, 0, 1]], dtype=float
        )
    s, c = math.sin(omega * T), math.cos(omega * T)
    return np.array(
        [
            [1, s / omega, 0, -(1 - c) / omega],
            [0, c, 0, -s],
            [0, (1 - c) / omega, 1, s / omega],
            [0, s, 0, c],
        ],
        dtype=float,
    )


def coordinated_turn_jmss(
    turn_rates_deg: tuple[float, ...],
    self_prob: float,
    period: float = 2.0,
    accel_std: float = 3.0,
    obs_std: float = 10.0,
    prior_mean=None,
    prior_std=None,
) -> LinearGaussianJmss:
    """Maneuvering-target jump system: one near-constant-turn mode per turn
    rate, position-only observations, uniform off-diagonal mode switching."""
    K = len(turn_rates_deg)
    if K < 1:
        raise ConfigError("coordinated_turn: need at least one turn rate")
    if not 0.0 < self_prob <= 1.0:
        raise ConfigError("coordinated_turn: self_prob must be in (0, 1]")
    if K > 1:
        off = (1.0 - self_prob) / (K - 1)
        trans = np.full((K, K), off)
        np.fill_diagonal(trans, self_prob)
    else:
        trans = np.ones((1, 1))
    F = np.stack([_turn_matrix(math.radians(w), period) for w in turn_rates_deg])
    eye4 = np.broadcast_to(np.eye(4), (K, 4, 4)).copy()
    eye2 = np.broadcast_to(np.eye(2), (K, 2, 2)).copy()
    H = np.broadcast_to(
        np.array([[1.0, 0, 0, 0], [0, 0, 1.0, 0]]), (K, 2, 4)
    ).copy()
    if prior_mean is None:
        prior_mean = [0.0, 8.0, 0.0, 8.0]
    if prior_std is None:
        prior_std = [50.0, 5.0, 50.0, 5.0]
    prior = GaussianBelief(
        np.asarray(prior_mean, dtype=float),
        np.diag(np.square(np.asarray(prior_std, dtype=float))),
    )
    return LinearGaussianJmss(
        mode_transition=trans,
        F=F,
        G=eye4,
        H=H,
        L=eye2,
        process_cov=_cv_process_cov(period, accel_std),
        obs_cov=obs_std**2 * np.eye(2),
        prior=prior,
    )


def constant_velocity_model(
    period: float = 2.0, accel_std: float = 3.0, obs_std: float = 0.3
) -> LinearGaussianModel:
    """Planar constant-velocity single-target model with position
    observations; the default observation noise is much sharper than the
    transition spread."""
    F = _turn_matrix(0.0, period)
    H = np.array([[1.0, 0, 0, 0], [0, 0, 1.0, 0]])
    prior = GaussianBelief(np.zeros(4), np.diag([100.0**2, 10.0**2, 100.0**2, 10.0**2]))
    return LinearGaussianModel(
        F, _cv_process_cov(period, accel_std), H, obs_std**2 * np.eye(2), prior
    )


def build_phd_params(cfg: ScenarioConfig, birth_kind: str) -> PhdModelParams:
    """Multi-target layers shared by all PHD filters, with the configured
    birth placement (``sites``, ``measurement``, or ``two_point``)."""
    p = cfg.phd
    ctx = "phd"
    motion = build_model(cfg)
    region = np.asarray(_need(p, "region", ctx), dtype=float)
    if region.shape != (2, 2):
        raise ConfigError("phd: region must be [[xmin, xmax], [ymin, ymax]]")
    area = float((region[0, 1] - region[0, 0]) * (region[1, 1] - region[1, 0]))
    clutter_rate = _number(p, "clutter_rate", ctx)

    birth_cfg = _need(p, "birth", ctx)
    n_birth = _integer(birth_cfg, "n_particles_per_component", "phd.birth", 20)
    if "+" in birth_kind:
        parts = [
            build_phd_params(cfg, part).birth for part in birth_kind.split("+")
        ]
        birth = CompositeBirth(parts)
    elif birth_kind == "sites":
        sites = np.asarray(_need(birth_cfg, "sites", "phd.birth"), dtype=float)
        w = _number(birth_cfg, "weight_per_site", "phd.birth")
        pos_std = _number(birth_cfg, "position_std", "phd.birth")
        vel_std = _number(birth_cfg, "velocity_std", "phd.birth")
        means = np.zeros((sites.shape[0], 4))
        means[:, 0] = sites[:, 0]
        means[:, 2] = sites[:, 1]
        cov = np.diag([pos_std**2, vel_std**2, pos_std**2, vel_std**2])
        mixture = GaussianMixture(
            np.full(sites.shape[0], w),
            means,
            np.broadcast_to(cov, (sites.shape[0], 4, 4)).copy(),
        )
        birth = GaussianMixtureBirth(mixture, n_birth)
    elif birth_kind == "measurement":
        birth = MeasurementDrivenBirth(
            mass_per_scan=_number(birth_cfg, "mass_per_scan", "phd.birth"),
            position_cov=_number(birth_cfg, "measurement_position_std", "phd.birth")
            ** 2
            * np.eye(2),
            position_indices=(0, 2),
            state_dim=4,
            rest_std=_number(birth_cfg, "velocity_std", "phd.birth"),
            n_per_measurement=n_birth,
        )
    elif birth_kind == "two_point":
        speed_std = birth_cfg.get("pair_speed_std")
        birth = TwoPointBirth(
            mass_per_scan=_number(birth_cfg, "mass_per_scan", "phd.birth"),
            gate_radius=_number(birth_cfg, "gate_radius", "phd.birth"),
            period=_number(cfg.model, "period", "model", 1.0),
            position_std=_number(birth_cfg, "measurement_position_std", "phd.birth"),
            velocity_std=_number(birth_cfg, "velocity_std", "phd.birth"),
            position_indices=(0, 2),
            velocity_indices=(1, 3),
            state_dim=4,
            n_per_pair=n_birth,
            speed_std=None if speed_std is None else float(speed_std),
        )
    else:
        raise ConfigError(f"phd: unknown birth kind {birth_kind!r}")

    return PhdModelParams(
        motion=motion,
        detection_prob=_number(p, "detection_prob", ctx),
        survival_prob=_number(p, "survival_prob", ctx),
        clutter_density=clutter_rate / area,
        birth=birth,
    )


# ---------------------------------------------------------------------------
# ground truth


@dataclass
class TruthTape:
    """One simulated trajectory: states and observations indexed 0..horizon.
    Multi-target tapes store per-step target state arrays instead."""

    observations: list
    states: np.ndarray | None = None
    modes: np.ndarray | None = None
    target_states: list | None = None


def generate_truth(cfg: ScenarioConfig, seed: int) -> TruthTape:
    stream = RngStream(seed).child(0)
    if cfg.kind == "single":
        return _single_truth(cfg, stream)
    if cfg.kind == "jmss":
        return _jmss_truth(cfg, stream)
    return _phd_truth(cfg, stream)


def _single_truth(cfg: ScenarioConfig, stream: RngStream) -> TruthTape:
    model = build_model(cfg)
    T = cfg.horizon
    states = np.empty((T + 1, model.state_dim))
    obs = np.empty((T + 1, model.obs_dim))
    states[0] = model.sample_prior(1, stream.child(0))[0]
    obs[0] = model.sample_obs(states[:1], stream.child(1))[0]
    for n in range(1, T + 1):
        states[n] = model.sample_transition(states[n - 1 : n], stream.child(2, n))[0]
        obs[n] = model.sample_obs(states[n : n + 1], stream.child(3, n))[0]
    return TruthTape(observations=list(obs), states=states)


def _jmss_truth(cfg: ScenarioConfig, stream: RngStream) -> TruthTape:
    model = build_model(cfg)
    T = cfg.horizon
    gen = stream.generator
    modes = np.empty(T + 1, dtype=np.intp)
    states = np.empty((T + 1, model.state_dim))
    obs = np.empty((T + 1, model.obs_dim))
    modes[0] = np.searchsorted(np.cumsum(model.initial_mode_probs), gen.random())
    chol_prior = np.linalg.cholesky(model.prior.cov)
    states[0] = model.prior.mean + chol_prior @ gen.standard_normal(model.state_dim)
    cum_trans = np.cumsum(model.mode_transition, axis=1)
    for n in range(T + 1):
        if n > 0:
            modes[n] = np.searchsorted(cum_trans[modes[n - 1]], gen.random())
            r = modes[n]
            states[n] = model.F[r] @ states[n - 1] + model.chol_Qeff[
                r
            ] @ gen.standard_normal(model.state_dim)
        r = modes[n]
        obs[n] = model.H[r] @ states[n] + model.chol_Reff[r] @ gen.standard_normal(
            model.obs_dim
        )
    return TruthTape(observations=list(obs), states=states, modes=modes)


def _phd_truth(cfg: ScenarioConfig, stream: RngStream) -> TruthTape:
    motion = build_model(cfg)
    p = cfg.phd
    T = cfg.horizon
    region = np.asarray(p["region"], dtype=float)
    p_d = _number(p, "detection_prob", "phd")
    clutter_rate = _number(p, "clutter_rate", "phd")
    targets = p.get("targets", [])
    if not targets:
        raise ConfigError("phd: at least one target is required")
    births = [int(t["birth"]) for t in targets]
    initial = [np.asarray(t["state"], dtype=float) for t in targets]

    gen = stream.generator
    trajectories = []
    for b, x0 in zip(births, initial):
        traj = {b: x0}
        x = x0
        for n in range(b + 1, T + 1):
            x = motion.sample_transition(x.reshape(1, -1), stream.child(4, len(trajectories), n))[0]
            traj[n] = x
        trajectories.append(traj)

    target_states = []
    observations = []
    H, cholR = motion.H, np.linalg.cholesky(motion.R)
    for n in range(T + 1):
        alive = np.array(
            [traj[n] for traj in trajectories if n in traj], dtype=float
        ).reshape(-1, 4)
        target_states.append(alive)
        zs = []
        for x in alive:
            if gen.random() < p_d:
                zs.append(H @ x + cholR @ gen.standard_normal(2))
        n_clutter = gen.poisson(clutter_rate)
        for _ in range(n_clutter):
            zs.append(
                np.array(
                    [
                        gen.uniform(region[0, 0], region[0, 1]),
                        gen.uniform(region[1, 0], region[1, 1]),
                    ]
                )
            )
        observations.append(np.asarray(zs, dtype=float).reshape(-1, 2))
    return TruthTape(observations=observations, target_states=target_states)
