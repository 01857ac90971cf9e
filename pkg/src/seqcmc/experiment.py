"""Benchmark driver: run a scenario over repeated seeds, aggregate per-step
accuracy (and, for jump-Markov runs, timing) per estimator, and write the
results as deterministic CSV/JSON files.

Stream layout per seed: child(0) generates the ground truth, child(1, i)
drives filter i, child(2) drives the reference run.  Filters never share
draws with the truth or the reference, so adding a filter to a config does
not perturb the others.
"""

from __future__ import annotations

import json
import os
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .gaussian import mvn_logpdf
from .jmss import rbpf_init, rbpf_step
from .ospa import OspaParams, ospa
from .phd import (
    CmcPhdState,
    GaussianMixture,
    GmConfig,
    PhdParticleSet,
    cmc_phd_step,
    gm_extract,
    gm_phd_step,
    smc_phd_step,
)
from .rng import RngStream
from .scenarios import (
    ScenarioConfig,
    build_model,
    build_moment,
    build_phd_params,
    generate_truth,
    parse_config,
)
from .single import (
    ResamplePolicy,
    bootstrap_step,
    fa_step,
    generic_proposal_step,
    init_filter,
    kalman_reference_means,
    optimal_kernel_proposal,
    sir_step,
    taylor_proposal,
)
from .weights import DegenerateWeightsError, ess, normalize_log_weights, resample_indices

__all__ = ["RunResult", "run_experiment", "emit_results"]

_REFERENCE_PARTICLES = 100_000


@dataclass
class RunResult:
    """Aggregated output of one scenario run."""

    kind: str
    name: str
    columns: list
    rows: list
    metadata: dict
    n_seeds: int
    n_degenerate: int

    @property
    def degenerate_fraction(self) -> float:
        return self.n_degenerate / max(self.n_seeds, 1)


# ---------------------------------------------------------------------------
# per-seed runners


def _single_reference(cfg: ScenarioConfig, model, f, ys, stream: RngStream):
    if cfg.reference.get("kind", "kalman") == "kalman":
        return kalman_reference_means(model, ys)[1:]
    # large-sample bootstrap stands in for the intractable posterior
    n_ref = int(cfg.reference.get("n_particles", _REFERENCE_PARTICLES))
    state = init_filter(model, ys[0], n_ref, stream.child(0))
    out = np.empty((cfg.horizon, f.dim))
    for n in range(1, cfg.horizon + 1):
        state, rep = bootstrap_step(state, model, ys[n], f, stream.child(n))
        out[n - 1] = rep.crude
    return out


def _single_seed(cfg: ScenarioConfig, seed: int) -> dict:
    model = build_model(cfg)
    f = build_moment(cfg)
    tape = generate_truth(cfg, seed)
    ys = np.asarray(tape.observations)
    stream = RngStream(seed)
    T = cfg.horizon

    per_filter = {}
    for fi, spec in enumerate(cfg.filters):
        frng = stream.child(1, fi)
        state = init_filter(model, ys[0], spec.n_particles, frng.child(0))
        proposal = None
        if spec.algorithm == "generic":
            proposal = (
                taylor_proposal(model)
                if spec.proposal == "taylor"
                else optimal_kernel_proposal(model)
            )
        collected: dict = {}
        for n in range(1, T + 1):
            rng_n = frng.child(n)
            if spec.algorithm == "sir":
                state, rep = sir_step(state, model, ys[n], f, rng_n, cfg.resampling)
            elif spec.algorithm == "fa":
                state, rep = fa_step(state, model, ys[n], f, rng_n)
            elif spec.algorithm == "bootstrap":
                state, rep = bootstrap_step(
                    state, model, ys[n], f, rng_n, cfg.resampling
                )
            else:
                state, rep = generic_proposal_step(
                    state, model, ys[n], f, proposal, rng_n, cfg.resampling
                )
            values = {"crude": rep.crude}
            if rep.cmc is not None:
                values["cmc"] = rep.cmc
            values.update(rep.extra)
            for key, v in values.items():
                collected.setdefault(key, []).append(np.asarray(v, dtype=float))
        per_filter[spec.id] = {k: np.asarray(v) for k, v in collected.items()}

    reference = np.asarray(_single_reference(cfg, model, f, ys, stream.child(2)))

    estimates = {}
    for est in cfg.estimators:
        if est.estimate == "kalman":
            series = kalman_reference_means(model, ys)[1:]
        else:
            series = per_filter[est.filter][est.estimate]
        estimates[est.name] = np.asarray(series, dtype=float).reshape(T, -1)
    return {
        "ok": True,
        "seed": seed,
        "estimates": estimates,
        "reference": reference.reshape(T, -1),
    }


def _jmss_reference(cfg: ScenarioConfig, model, phi, ys, stream: RngStream):
    """Large-sample bootstrap over the hybrid chain: sample modes from the
    transition rows, states from the mode-conditional dynamics, and weight
    by the observation likelihood."""
    n = int(cfg.reference.get("n_particles", _REFERENCE_PARTICLES))
    gen = stream.generator
    K = model.n_modes

    modes = np.searchsorted(
        np.cumsum(model.initial_mode_probs), gen.random(n), side="right"
    ).astype(np.intp)
    chol_prior = np.linalg.cholesky(model.prior.cov)
    x = model.prior.mean + gen.standard_normal((n, model.state_dim)) @ chol_prior.T
    logw = np.empty(n)
    for r in range(K):
        sel = modes == r
        if sel.any():
            logw[sel] = mvn_logpdf(ys[0] - x[sel] @ model.H[r].T, model.Reff[r])
    w, _ = normalize_log_weights(logw)

    out = np.empty((cfg.horizon, phi.dim))
    cum_trans = np.cumsum(model.mode_transition, axis=1)
    for step in range(1, cfg.horizon + 1):
        u = gen.random(n)
        modes = (u[:, None] > cum_trans[modes]).sum(axis=1).astype(np.intp)
        nxt = np.empty_like(x)
        ll = np.empty(n)
        for r in range(K):
            sel = modes == r
            if not sel.any():
                continue
            nxt[sel] = (
                x[sel] @ model.F[r].T
                + gen.standard_normal((int(sel.sum()), model.state_dim))
                @ model.chol_Qeff[r].T
            )
            ll[sel] = mvn_logpdf(ys[step] - nxt[sel] @ model.H[r].T, model.Reff[r])
        x = nxt
        w, _ = normalize_log_weights(np.log(np.maximum(w, 1e-300)) + ll)
        out[step - 1] = w @ phi.evaluate(x)
        if ess(w) < n / 2:
            idx = resample_indices(w, n, gen, "multinomial")
            x, modes = x[idx], modes[idx]
            w = np.full(n, 1.0 / n)
    return out


def _jmss_seed(cfg: ScenarioConfig, seed: int) -> dict:
    model = build_model(cfg)
    phi = build_moment(cfg)
    tape = generate_truth(cfg, seed)
    ys = np.asarray(tape.observations)
    stream = RngStream(seed)
    T = cfg.horizon
    timing = cfg.timing == "monotonic"

    per_filter = {}
    for fi, spec in enumerate(cfg.filters):
        frng = stream.child(1, fi)
        cloud = rbpf_init(model, ys[0], spec.n_particles, frng.child(0))
        est = {"crude": [], "cmc": []}
        cost = {"crude": [], "cmc": []}
        for n in range(1, T + 1):
            cloud, rep = rbpf_step(
                cloud, model, ys[n], phi, frng.child(n), cfg.resampling, timing=timing
            )
            est["crude"].append(rep.crude)
            est["cmc"].append(rep.cmc)
            if timing:
                cost["crude"].append(rep.cost_crude)
                cost["cmc"].append(rep.cost_cmc)
        per_filter[spec.id] = {
            "est": {k: np.asarray(v) for k, v in est.items()},
            "cost": {k: np.asarray(v) for k, v in cost.items()} if timing else None,
        }

    reference = _jmss_reference(cfg, model, phi, ys, stream.child(2))

    estimates, costs = {}, {}
    for e in cfg.estimators:
        block = per_filter[e.filter]
        estimates[e.name] = block["est"][e.estimate].reshape(T, -1)
        if timing:
            costs[e.name] = block["cost"][e.estimate]
    out = {
        "ok": True,
        "seed": seed,
        "estimates": estimates,
        "reference": reference.reshape(T, -1),
    }
    if timing:
        out["costs"] = costs
    return out


def _positions(states: np.ndarray, pos_idx) -> np.ndarray:
    if states.size == 0:
        return np.empty((0, len(pos_idx)))
    return states[:, list(pos_idx)]


def _phd_seed(cfg: ScenarioConfig, seed: int) -> dict:
    tape = generate_truth(cfg, seed)
    Zs = tape.observations
    truth = tape.target_states
    stream = RngStream(seed)
    T = cfg.horizon
    pos_idx = tuple(cfg.ospa.get("position_indices", (0, 2)))
    dist_params = OspaParams(
        order=float(cfg.ospa.get("order", 1.0)),
        cutoff=float(cfg.ospa.get("cutoff", 10.0)),
    )

    # birth is anchored on past scans so current clutter cannot spawn mass
    # at its own location within the update; two_point pairs the two previous
    # scans to give newborn clusters a data-derived velocity
    none = np.zeros((0, 2))

    def birth_anchor(kind: str, n: int):
        if "two_point" in kind:
            return (Zs[n - 2] if n > 2 else none, Zs[n - 1] if n > 1 else none)
        return Zs[n - 1] if n > 1 else none

    per_filter = {}
    for fi, spec in enumerate(cfg.filters):
        frng = stream.child(1, fi)
        counts = np.empty(T)
        dists = np.empty(T)
        n_per = int(spec.options.get("n_per_target", spec.n_particles))

        if spec.algorithm == "smc_phd":
            bkind = spec.options.get("birth", "measurement")
            params = build_phd_params(cfg, bkind)
            pset = PhdParticleSet(np.zeros((0, 4)), np.zeros(0))
            for n in range(1, T + 1):
                pset, rep = smc_phd_step(
                    pset, params, Zs[n], frng.child(n),
                    n_per_target=n_per, min_particles=n_per,
                    birth_measurements=birth_anchor(bkind, n),
                )
                counts[n - 1] = rep.count
                dists[n - 1] = ospa(
                    _positions(rep.extracted, pos_idx),
                    _positions(truth[n], pos_idx),
                    dist_params,
                )
        elif spec.algorithm == "cmc_phd":
            bkind = spec.options.get("birth", "measurement")
            params = build_phd_params(cfg, bkind)
            params.birth_predictive = spec.options.get("birth_predictive", "particle")
            state = CmcPhdState(PhdParticleSet(np.zeros((0, 4)), np.zeros(0)))
            for n in range(1, T + 1):
                state, rep = cmc_phd_step(
                    state, params, Zs[n], frng.child(n),
                    n_per_target=n_per, min_particles=n_per,
                    birth_measurements=birth_anchor(bkind, n),
                )
                counts[n - 1] = rep.count
                dists[n - 1] = ospa(
                    _positions(rep.extracted, pos_idx),
                    _positions(truth[n], pos_idx),
                    dist_params,
                )
        else:
            params = build_phd_params(cfg, "sites")
            gconfig = GmConfig(
                prune_threshold=float(spec.options.get("prune_threshold", 1e-5)),
                merge_threshold=float(spec.options.get("merge_threshold", 4.0)),
                max_components=int(spec.options.get("max_components", 100)),
            )
            mix = GaussianMixture(np.zeros(0), np.zeros((0, 4)), np.zeros((0, 4, 4)))
            for n in range(1, T + 1):
                mix = gm_phd_step(mix, params, Zs[n], gconfig)
                counts[n - 1] = float(mix.weights.sum())
                dists[n - 1] = ospa(
                    _positions(gm_extract(mix), pos_idx),
                    _positions(truth[n], pos_idx),
                    dist_params,
                )
        per_filter[spec.id] = {"count": counts, "ospa": dists}
    return {"ok": True, "seed": seed, "per_filter": per_filter}


def _run_seed(cfg: ScenarioConfig, seed: int) -> dict:
    try:
        if cfg.kind == "single":
            return _single_seed(cfg, seed)
        if cfg.kind == "jmss":
            return _jmss_seed(cfg, seed)
        return _phd_seed(cfg, seed)
    except DegenerateWeightsError as exc:
        return {"ok": False, "seed": seed, "error": str(exc)}


def _seed_worker(args) -> dict:
    # module-level so ProcessPoolExecutor can pickle it
    raw, seed = args
    return _run_seed(parse_config(raw), seed)


# ---------------------------------------------------------------------------
# aggregation


def _aggregate_series(cfg: ScenarioConfig, good: list) -> tuple[list, list]:
    T = cfg.horizon
    timing = cfg.timing == "monotonic"
    columns = ["step", "estimator", "mse"]
    if timing:
        columns += ["cost_s", "efficiency"]
    rows = []
    for est in cfg.estimators:
        err = np.stack(
            [
                ((p["estimates"][est.name] - p["reference"]) ** 2).sum(axis=1)
                for p in good
            ]
        )
        mse = err.mean(axis=0)
        if timing:
            cost = np.median(np.stack([p["costs"][est.name] for p in good]), axis=0)
        for n in range(T):
            row = {"step": n + 1, "estimator": est.name, "mse": float(mse[n])}
            if timing:
                c = max(float(cost[n]), 1e-12)  # clock resolution guard
                row["cost_s"] = float(cost[n])
                row["efficiency"] = float(1.0 / (max(mse[n], 1e-300) * c))
            rows.append(row)
    return columns, rows


def _aggregate_phd(cfg: ScenarioConfig, good: list) -> tuple[list, list]:
    T = cfg.horizon
    columns = ["step", "estimator", "ospa_mean", "ospa_sd", "count_mean", "count_sd"]
    rows = []
    for spec in cfg.filters:
        co = np.stack([p["per_filter"][spec.id]["count"] for p in good])
        di = np.stack([p["per_filter"][spec.id]["ospa"] for p in good])
        many = co.shape[0] > 1
        for n in range(T):
            rows.append(
                {
                    "step": n + 1,
                    "estimator": spec.id,
                    "ospa_mean": float(di[:, n].mean()),
                    "ospa_sd": float(di[:, n].std(ddof=1)) if many else 0.0,
                    "count_mean": float(co[:, n].mean()),
                    "count_sd": float(co[:, n].std(ddof=1)) if many else 0.0,
                }
            )
    return columns, rows


def _git_revision() -> str | None:
    try:
        proc = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return None
    return proc.stdout.strip() if proc.returncode == 0 else None


def _notes(cfg: ScenarioConfig) -> list:
    notes = [
        "crude and conditional estimators share particles, weights, and seeds",
        f"resampling: {cfg.resampling.scheme}, mode {cfg.resampling.mode}, "
        f"trigger ESS < {cfg.resampling.ess_fraction:g} * n",
    ]
    if cfg.kind == "single":
        notes.append(
            "conditional estimates average exact kernel moments under weights "
            "available before the new draws"
        )
        if cfg.reference.get("kind") == "bootstrap":
            notes.append(
                "reference: bootstrap filter with "
                f"{int(cfg.reference.get('n_particles', _REFERENCE_PARTICLES))} particles"
            )
        else:
            notes.append("reference: exact Kalman posterior means")
    elif cfg.kind == "jmss":
        notes.append(
            "both estimators read one shared per-mode Kalman bank; timed "
            "sections cover only estimator-specific work"
        )
        notes.append("reported cost is the per-step median over seeds")
        if cfg.timing == "monotonic":
            notes.append("one warm-up repetition was run and discarded before timing")
    else:
        births = {
            f.id: "sites"
            if f.algorithm == "gm_phd"
            else f.options.get("birth", "measurement")
            for f in cfg.filters
        }
        notes.append(f"birth placement per filter: {births}")
        notes.append(
            "measurement-driven birth is anchored to the previous scan's "
            "measurement set"
        )
        notes.append(
            "extraction emits a state per measurement holding more than half "
            "a unit of detected mass"
        )
    return notes


def run_experiment(
    cfg: ScenarioConfig, seeds: list | None = None, workers: int | None = None
) -> RunResult:
    """Run every seed, aggregate, and return a RunResult.

    Degenerate repetitions (all weights collapsing) are excluded from the
    aggregates and counted; callers decide how many are tolerable.
    """
    seeds = list(cfg.seeds if seeds is None else seeds)
    if not seeds:
        raise ValueError("no seeds to run")
    if workers is None:
        env = os.environ.get("SEQCMC_THREADS", "").strip()
        workers = int(env) if env else (os.cpu_count() or 1)
    workers = max(1, min(int(workers), len(seeds)))

    if cfg.timing == "monotonic":
        _run_seed(cfg, seeds[0])  # warm-up, discarded

    if workers == 1:
        payloads = [_run_seed(cfg, s) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            payloads = list(pool.map(_seed_worker, [(cfg.raw, s) for s in seeds]))

    good = [p for p in payloads if p["ok"]]
    bad = [p for p in payloads if not p["ok"]]
    if not good:
        raise DegenerateWeightsError("every repetition degenerated")

    if cfg.kind == "phd":
        columns, rows = _aggregate_phd(cfg, good)
    else:
        columns, rows = _aggregate_series(cfg, good)

    metadata = {
        "name": cfg.name,
        "kind": cfg.kind,
        "package_version": __version__,
        "git_revision": _git_revision(),
        "seeds": seeds,
        "n_seeds": len(seeds),
        "n_degenerate": len(bad),
        "degenerate_seeds": sorted(p["seed"] for p in bad),
        "timing": cfg.timing,
        "notes": _notes(cfg),
        "config": cfg.raw,
    }
    return RunResult(
        kind=cfg.kind,
        name=cfg.name,
        columns=columns,
        rows=rows,
        metadata=metadata,
        n_seeds=len(seeds),
        n_degenerate=len(bad),
    )


# ---------------------------------------------------------------------------
# output


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _safe_name(name: str) -> str:
    return "".join(c if (c.isalnum() or c in "-_") else "_" for c in name) or "results"


def emit_results(result: RunResult, out_dir, formats=("csv", "json")) -> list:
    """Write the aggregated rows under out_dir and return the paths written.

    Output is deterministic: fixed column order, 17-significant-digit
    floats, newline line endings, and no timestamps anywhere.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = _safe_name(result.name)
    written = []

    if "csv" in formats:
        path = out / f"{base}.csv"
        lines = [",".join(result.columns)]
        for row in result.rows:
            lines.append(",".join(_fmt(row[c]) for c in result.columns))
        path.write_text("\n".join(lines) + "\n")
        written.append(path)

    if "json" in formats:
        path = out / f"{base}.json"
        doc = {
            "metadata": result.metadata,
            "columns": result.columns,
            "rows": result.rows,
        }
        path.write_text(json.dumps(doc, indent=2) + "\n")
        written.append(path)
    return written
