"""Experiments on the branching process: reduced-process law, the small-time
law, the constancy of ``W``, survival asymptotics and fixed-time marginals."""

import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ..config import ExperimentConfig
from ..models.assoc_walk import lattice_min_tail, norming_cn
from ..models.bpre_core import (
    ReducedObservation,
    backward_survival,
    j_plus_tightness,
    reduced_counts,
    reduced_observations,
    simulate_environments,
    simulate_population_batch,
    w_observable_batch,
)
from ..models.conditioned_walk import lattice_conditioned_paths
from ..models.offspring_env import EnvironmentModel
from ..utils.errors import InsufficientSampleError
from ..utils.logger import get_logger
from ..utils.rng import make_stream
from ..utils.statistics import EmpiricalCDF, ks_distance, ks_two_sample
from .experiment_common import (
    ExperimentResult,
    d_reference_cdf,
    increment_law,
    reference_limit_law,
)
from .parallel import chunk_plan, map_chunks

logger = get_logger(__name__)

W_EPSILON = 1e-12
W_U_GRID = (1.0, 2.0)
TIGHTNESS_CELLS = 2_000_000


def _reduced_chunk(task: Dict[str, Any]) -> Dict[str, np.ndarray]:
    """Environments, populations up to ``horizon`` and reduced counts there."""
    rng = make_stream(task["seed"], task["name"], task["n_index"], task["chunk"])
    model = EnvironmentModel.from_descriptor(task["environment"])
    batch = simulate_environments(model, task["n"], task["size"], rng)
    survival = backward_survival(batch.laws)
    horizon = task["horizon"]
    pop = simulate_population_batch(batch, task["z0"], horizon, rng, task["replicas"])
    env = pop.environment
    r_h = survival[env, horizon]
    zhn = reduced_counts(pop.counts[:, horizon], r_h, rng)
    out = {
        "Zp": pop.counts[:, task["p"]],
        "survival": r_h,
        "Zpn": zhn,
        "environment": env + task["first"],
        "approximated": pop.approximated,
    }
    if task.get("w_grid") is not None:
        times_walks = batch.walks[env]
        out["W"] = w_observable_batch(times_walks, pop.counts, task["w_grid"], task["q"], task["p"])
    return out


def _survival_chunk(task: Dict[str, Any]) -> Dict[str, np.ndarray]:
    """Exact conditional survival ``1 - q_0`` and ``1{L_n >= 0}`` per environment."""
    rng = make_stream(task["seed"], task["name"], task["n_index"], task["chunk"])
    model = EnvironmentModel.from_descriptor(task["environment"])
    batch = simulate_environments(model, task["n"], task["size"], rng)
    r0 = backward_survival(batch.laws)[:, 0]
    with np.errstate(divide="ignore"):
        survives = -np.expm1(task["z0"] * np.log1p(-r0))
    return {"survival": survives, "positive": batch.walks.min(axis=1) >= 0}


def _tasks(
    cfg: ExperimentConfig, n: int, n_index: int, round_index: int = 0, **extra: Any
) -> List[Dict[str, Any]]:
    """Chunk tasks for one round of ``cfg.replicates`` environments.

    Round ``k`` continues the chunk and environment numbering of round ``k - 1``.
    """
    plan = chunk_plan(cfg.replicates, cfg.chunk_size)
    return [
        dict(
            seed=cfg.seed,
            name=cfg.name,
            n_index=n_index,
            chunk=round_index * len(plan) + index,
            first=round_index * cfg.replicates + first,
            size=size,
            n=n,
            environment=cfg.environment,
            z0=cfg.z0,
            replicas=cfg.replicas_per_environment,
            **extra,
        )
        for index, first, size in plan
    ]


def _merge(parts: Sequence[Dict[str, np.ndarray]]) -> Dict[str, np.ndarray]:
    return {key: np.concatenate([part[key] for part in parts]) for key in parts[0]}


@dataclass(frozen=True, eq=False)
class ReducedSample:
    """Reduced counts for every replicate at one ``(n, p)`` pair."""

    n: int
    p: int
    c_p: float
    Zp: np.ndarray
    survival: np.ndarray
    Zpn: np.ndarray
    environment: np.ndarray
    approximated: np.ndarray
    W: Optional[np.ndarray] = None

    @property
    def survived(self) -> np.ndarray:
        return self.Zpn >= 1

    @property
    def survivors(self) -> int:
        return int(self.survived.sum())

    @property
    def scaled_reduced(self) -> np.ndarray:
        """``log Z_{p,n} / c_p`` on survivors only."""
        return np.log(self.Zpn[self.survived].astype(float)) / self.c_p

    @property
    def scaled_generation(self) -> np.ndarray:
        """``log Z_p / c_p`` on survivors only."""
        return np.log(self.Zp[self.survived].astype(float)) / self.c_p

    def observations(self) -> List[ReducedObservation]:
        return reduced_observations(self.n, self.p, self.Zp, self.survival, self.Zpn, self.c_p)


def simulate_reduced(
    cfg: ExperimentConfig,
    n: int,
    p: int,
    n_index: int,
    horizon: Optional[int] = None,
    q: int = 0,
    w_grid: Optional[Sequence[float]] = None,
    scale: Optional[float] = None,
    target_survivors: Optional[int] = None,
) -> ReducedSample:
    """Run all replicate chunks for one ``(n, p)``.

    Survival is conditioned at ``horizon`` (default ``p``). With
    ``target_survivors`` further rounds of ``cfg.replicates`` environments are
    drawn until that many survivors are collected or ``cfg.budget``
    environments have been used.
    """
    horizon = p if horizon is None else horizon
    law = increment_law(cfg)
    c_p = scale if scale is not None else norming_cn(law, p)
    parts: List[Dict[str, np.ndarray]] = []
    survivors = 0
    round_index = 0
    while True:
        tasks = _tasks(cfg, n, n_index, round_index, p=p, horizon=horizon, q=q, w_grid=w_grid)
        batch = map_chunks(_reduced_chunk, tasks, cfg.workers)
        parts.extend(batch)
        survivors += sum(int(np.count_nonzero(part["Zpn"] >= 1)) for part in batch)
        round_index += 1
        used = round_index * cfg.replicates
        if target_survivors is None or survivors >= target_survivors:
            break
        if used + cfg.replicates > cfg.budget:
            logger.warning(
                f"n={n}: replicate budget {cfg.budget} reached with {survivors} survivors"
            )
            break
        logger.debug(f"n={n}: {survivors}/{target_survivors} survivors after {used} replicates")
    merged = _merge(parts)
    sample = ReducedSample(
        n=n,
        p=p,
        c_p=c_p,
        Zp=merged["Zp"],
        survival=merged["survival"],
        Zpn=merged["Zpn"],
        environment=merged["environment"],
        approximated=merged["approximated"],
        W=merged.get("W"),
    )
    logger.info(
        f"n={n}, p={p}: {sample.survivors}/{len(sample.Zpn)} survivors"
        f" ({int(sample.approximated.sum())} normal-approximated)"
    )
    return sample


def _require_survivors(sample: ReducedSample, cfg: ExperimentConfig) -> None:
    if sample.survivors < cfg.min_survivors:
        raise InsufficientSampleError(
            f"only {sample.survivors} survivors at n={sample.n}, need {cfg.min_survivors}",
            achieved=sample.survivors,
            required=cfg.min_survivors,
        )


def _strictly_decreasing(values: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


def _sample_metrics(sample: ReducedSample) -> Dict[str, Any]:
    total = len(sample.Zpn)
    return {
        "n": sample.n,
        "p": sample.p,
        "c_p": sample.c_p,
        "replicates": total,
        "survivors": sample.survivors,
        "acceptance_rate": sample.survivors / total,
        "normal_approximated": int(sample.approximated.sum()),
    }


def run_reduced_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """KS distance of ``log Z_{p,n} / c_p`` given survival against ``D``."""
    result = ExperimentResult(cfg.name, warnings=cfg.condition_a_warnings())
    law = increment_law(cfg)
    reference = d_reference_cdf(reference_limit_law(law, cfg))
    rng = make_stream(cfg.seed, cfg.name, "bootstrap")

    statistics = []
    observations: List[Dict[str, Any]] = []
    per_n = []
    for n_index, n in enumerate(cfg.n_grid):
        p = cfg.p_for(n)
        sample = simulate_reduced(cfg, n, p, n_index)
        _require_survivors(sample, cfg)
        values = sample.scaled_reduced
        ecdf = EmpiricalCDF(values)
        ks = ks_distance(
            ecdf,
            reference,
            reference_name="D",
            threshold=cfg.ks_threshold,
            grid=cfg.x_grid,
            clusters=sample.environment[sample.survived],
            n_resamples=cfg.bootstrap_resamples,
            rng=rng,
        )
        ks.label = f"n={n},p={p}"
        result.ks.append(ks)
        statistics.append(ks.statistic)
        result.check(f"survival_at_zero_n{n}", float(ecdf.survival(0.0)) == 1.0)
        observations.extend(obs.to_row() for obs in sample.observations())
        metrics = _sample_metrics(sample)
        metrics["ks"] = ks.statistic
        per_n.append(metrics)

    result.check("ks_at_largest_n", statistics[-1] <= cfg.ks_threshold)
    if cfg.require_trend and len(statistics) > 1:
        result.check("ks_decreasing_in_n", _strictly_decreasing(statistics))
    result.metrics["per_n"] = per_n
    result.tables["observations"] = observations
    result.tables["ks"] = [k.to_dict() for k in result.ks]
    return result


def run_t_small(cfg: ExperimentConfig) -> ExperimentResult:
    """KS distance of ``log Z_p / c_p`` given survival against ``P+(B_1 <= z)``."""
    result = ExperimentResult(cfg.name, warnings=cfg.condition_a_warnings())
    law = increment_law(cfg)
    reference = reference_limit_law(law, cfg).t_small_reference()
    rng = make_stream(cfg.seed, cfg.name, "bootstrap")

    per_n = []
    for n_index, n in enumerate(cfg.n_grid):
        p = cfg.p_for(n)
        sample = simulate_reduced(cfg, n, p, n_index)
        _require_survivors(sample, cfg)
        values = sample.scaled_generation
        ks = ks_distance(
            EmpiricalCDF(values),
            reference,
            reference_name="P+(B_1 <= z)",
            threshold=cfg.ks_threshold,
            clusters=sample.environment[sample.survived],
            n_resamples=cfg.bootstrap_resamples,
            rng=rng,
        )
        ks.label = f"n={n},p={p}"
        result.ks.append(ks)

        alive = sample.Zp >= 1
        unconditioned = np.log(sample.Zp[alive].astype(float)) / sample.c_p
        above_given_survival = float(np.mean(values > 1.0))
        above_given_alive = float(np.mean(unconditioned > 1.0))
        result.check(f"dominates_unconditioned_n{n}", above_given_survival >= above_given_alive)
        metrics = _sample_metrics(sample)
        metrics.update(
            ks=ks.statistic,
            above_one_given_survival=above_given_survival,
            above_one_given_alive_at_p=above_given_alive,
        )
        per_n.append(metrics)

    result.check("ks_at_largest_n", result.ks[-1].statistic <= cfg.ks_threshold)
    result.metrics["per_n"] = per_n
    result.tables["ks"] = [k.to_dict() for k in result.ks]
    return result


def w_constancy_statistic(W: np.ndarray) -> float:
    """Median of ``|W_2 - W_1| / max(W_1, eps)`` over rows of ``(W_1, W_2)``."""
    first, second = W[:, 0], W[:, 1]
    return float(np.median(np.abs(second - first) / np.maximum(first, W_EPSILON)))


def run_w_constancy(cfg: ExperimentConfig) -> ExperimentResult:
    """``W_u`` at ``u = 1, 2`` for ``p = q^2``, ``n = 64 p`` and the trend over ``q``."""
    result = ExperimentResult(cfg.name)
    rows = []
    statistics = []
    for index, q in enumerate(cfg.q_grid):
        p = q * q
        n = 64 * p
        horizon = min(2 * p - q, n)
        sample = simulate_reduced(
            cfg,
            n,
            p,
            index,
            horizon=horizon,
            q=q,
            w_grid=W_U_GRID,
            scale=1.0,
            target_survivors=cfg.min_survivors,
        )
        _require_survivors(sample, cfg)
        assert sample.W is not None
        W = sample.W[sample.survived]
        finite = bool(np.all(np.isfinite(W)) and np.all(W > 0))
        result.check(f"w_positive_finite_q{q}", finite)
        statistic = w_constancy_statistic(W)
        statistics.append(statistic)
        rows.append(
            {"q": q, "p": p, "n": n, "survivors": sample.survivors, "statistic": statistic}
        )
        logger.info(f"W constancy at q={q}: {statistic:.4g}")

    if cfg.require_trend and len(statistics) > 1:
        result.check("statistic_decreasing_in_q", _strictly_decreasing(statistics))
    result.metrics["per_q"] = rows
    result.tables["w_constancy"] = rows
    return result


def run_survival_asymptotics(cfg: ExperimentConfig) -> ExperimentResult:
    """``P(Z_n > 0)`` as the environment average of ``1 - q_0`` against ``P(L_n >= 0)``."""
    result = ExperimentResult(cfg.name)
    law = increment_law(cfg)
    rows = []
    for n_index, n in enumerate(cfg.n_grid):
        tasks = _tasks(cfg, n, n_index)
        merged = _merge(map_chunks(_survival_chunk, tasks, cfg.workers))
        survives = merged["survival"]
        p_survive = float(survives.mean())
        se_survive = float(survives.std(ddof=1) / math.sqrt(survives.size))
        if law.is_lattice:
            p_positive, se_positive = float(lattice_min_tail(n, 0.0)), 0.0
        else:
            positive = merged["positive"].astype(float)
            p_positive = float(positive.mean())
            se_positive = float(positive.std(ddof=1) / math.sqrt(positive.size))
        ratio = p_survive / p_positive if p_positive > 0 else math.inf
        ratio_se = math.hypot(se_survive / p_positive, p_survive * se_positive / p_positive ** 2)
        rows.append(
            {
                "n": n,
                "p_survival": p_survive,
                "p_survival_se": se_survive,
                "p_positive": p_positive,
                "p_positive_se": se_positive,
                "ratio": ratio,
                "ratio_se": ratio_se,
            }
        )
        logger.info(f"n={n}: P(Z_n>0)={p_survive:.5g}, ratio={ratio:.4g}")

    ns = np.array([row["n"] for row in rows], dtype=float)
    probs = np.array([row["p_survival"] for row in rows])
    slope = float(np.polyfit(np.log(ns), np.log(probs), 1)[0]) if len(rows) > 1 else math.nan
    expected = law.stable.rho - 1.0

    window = rows[-min(3, len(rows)):]
    ratios = np.array([row["ratio"] for row in window])
    plateau = float(ratios.mean())
    ratio_ses = np.array([row["ratio_se"] for row in window])
    plateau_se = float(math.sqrt(np.sum(ratio_ses ** 2)) / len(window))
    ci = (plateau - 1.96 * plateau_se, plateau + 1.96 * plateau_se)

    last = rows[-1]
    earlier = [row for row in rows if row["n"] <= last["n"] / 4] or rows[:-1] or rows
    anchor = earlier[-1]
    variation = abs(last["ratio"] / anchor["ratio"] - 1.0)

    if len(rows) > 1:
        result.check("slope_matches_rho_minus_one", abs(slope - expected) <= cfg.tolerance)
        result.check("plateau_variation", variation <= 0.10)
    result.check("plateau_ci_excludes_zero", ci[0] > 0)

    n_tight = int(min(cfg.n_grid))
    tightness = j_plus_tightness(
        EnvironmentModel.from_descriptor(cfg.environment),
        n_tight,
        cfg.n_mc,
        make_stream(cfg.seed, cfg.name, "j-plus"),
        chunk=max(1, TIGHTNESS_CELLS // n_tight),
        budget=cfg.budget,
    )
    result.metrics["j_plus_tightness"] = {
        "n": n_tight,
        "ks_n_vs_2n": tightness.statistic,
        "accepted": [int(tightness.at_n.size), int(tightness.at_2n.size)],
        "proposals": tightness.proposals,
        "median_at_n": float(np.median(tightness.at_n)),
        "median_at_2n": float(np.median(tightness.at_2n)),
    }

    result.metrics.update(
        slope=slope,
        expected_slope=expected,
        theta_estimate=plateau,
        theta_ci=list(ci),
        plateau_window=[row["n"] for row in window],
        variation=variation,
        variation_between=[anchor["n"], last["n"]],
    )
    result.tables["survival_asymptotics"] = rows
    return result


def meander_infimum_reference(
    t: float, length: int, size: int, rng: np.random.Generator
) -> np.ndarray:
    """``min_{t <= v <= 1}`` of discrete meanders of ``length`` steps.

    Values are scaled by ``sqrt(length)``.
    """
    paths = lattice_conditioned_paths(length, 0.0, size, rng)
    start = int(math.floor(t * length))
    return paths[:, start:].min(axis=1) / math.sqrt(length)


def run_meander_marginal(cfg: ExperimentConfig) -> ExperimentResult:
    """Fixed-time marginals of ``log Z_{[tn],n} / c_n`` given survival."""
    result = ExperimentResult(cfg.name)
    law = increment_law(cfg)
    n = cfg.n_grid[-1]
    c_n = norming_cn(law, n)
    rng = make_stream(cfg.seed, cfg.name, "reference")
    rows = []
    for index, t in enumerate(cfg.t_values):
        p = max(1, int(math.floor(t * n)))
        sample = simulate_reduced(cfg, n, p, index, scale=c_n)
        _require_survivors(sample, cfg)
        observed = sample.scaled_reduced
        reference = meander_infimum_reference(t, cfg.truncation, cfg.n_mc, rng)
        statistic = ks_two_sample(observed, reference)
        result.check(f"ks_t{t}", statistic <= cfg.ks_threshold)
        rows.append({"t": t, "n": n, "p": p, "survivors": sample.survivors, "ks": statistic})

    result.metrics["per_t"] = rows
    result.tables["meander_marginal"] = rows
    return result
