"""Branching process in random environment.

Forward population simulation, backward composition of generating functions
for extinction probabilities, the reduced count ``Z_{p,n}`` and the
exponential functionals ``J+``, ``J-`` of the environment.

Indexing: ``laws[k]`` is ``Q_{k+1}``, the law acting on generation ``k``
to produce generation ``k + 1``, and ``walk[k]`` is ``S_k``.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from ..utils.errors import BudgetExhaustedError, DomainError
from ..utils.logger import get_logger
from ..utils.statistics import ks_two_sample
from .assoc_walk import WalkPath
from .offspring_env import (
    DEFAULT_CAP,
    DEFAULT_NORMAL_THRESHOLD,
    EnvironmentModel,
    LawArray,
    OffspringLaw,
    sample_offspring,
)

logger = get_logger(__name__)

MIN_CAP = 10 ** 6


def _accumulate(log_means: np.ndarray, deterministic: bool) -> np.ndarray:
    x = np.asarray(log_means, dtype=float)
    walk = np.zeros(x.shape[:-1] + (x.shape[-1] + 1,))
    if deterministic and x.shape[-1]:
        # S_j = j * x exactly for a constant environment
        steps = np.arange(1, x.shape[-1] + 1)
        with np.errstate(invalid="ignore"):
            walk[..., 1:] = steps * x[..., :1]
    else:
        with np.errstate(invalid="ignore"):
            np.cumsum(x, axis=-1, out=walk[..., 1:])
    return walk


@dataclass(frozen=True, eq=False)
class EnvironmentPath:
    """One environment ``Q_1, ..., Q_n`` with its associated walk."""

    laws: LawArray
    log_means: np.ndarray
    walk: WalkPath

    @classmethod
    def from_laws(cls, laws: Sequence[OffspringLaw]) -> "EnvironmentPath":
        array = LawArray.from_laws(laws)
        x = np.array([law.log_mean for law in laws])
        deterministic = len(set(laws)) == 1
        return cls(array, x, WalkPath(_accumulate(x, deterministic)))

    @property
    def n(self) -> int:
        return len(self.log_means)

    @property
    def S(self) -> np.ndarray:
        return self.walk.values

    @property
    def eta(self) -> np.ndarray:
        """``eta`` of each law; entry ``l`` belongs to the step ``l -> l + 1``."""
        return self.laws.eta()

    def law(self, k: int) -> OffspringLaw:
        """``Q_{k+1}``."""
        picked = self.laws[k]
        assert isinstance(picked, OffspringLaw)
        return picked


@dataclass(frozen=True, eq=False)
class EnvironmentBatch:
    """``size`` independent environments of common length ``n``."""

    laws: LawArray
    log_means: np.ndarray
    walks: np.ndarray

    @property
    def size(self) -> int:
        return self.log_means.shape[0]

    @property
    def n(self) -> int:
        return self.log_means.shape[1]

    def __len__(self) -> int:
        return self.size

    def __getitem__(self, i: int) -> EnvironmentPath:
        return EnvironmentPath(
            LawArray(self.laws.kind, self.laws.params[i]),
            self.log_means[i],
            WalkPath(self.walks[i]),
        )

    def eta(self) -> np.ndarray:
        return self.laws.eta()


def simulate_environment(
    model: EnvironmentModel, n: int, rng: np.random.Generator
) -> EnvironmentPath:
    """``n`` i.i.d. laws drawn from ``model``."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    x = model.sample_log_means(n, rng)
    walk = _accumulate(x, model.is_deterministic)
    return EnvironmentPath(model.law_array(x), x, WalkPath(walk))


def simulate_environments(
    model: EnvironmentModel, n: int, size: int, rng: np.random.Generator
) -> EnvironmentBatch:
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    x = model.sample_log_means((size, n), rng)
    walks = _accumulate(x, model.is_deterministic)
    return EnvironmentBatch(model.law_array(x), x, walks)


def _column(laws: LawArray, k: int) -> LawArray:
    return LawArray(laws.kind, laws.params[..., k, :])


@dataclass(frozen=True, eq=False)
class ExtinctionSchedule:
    """``q_p = f_{p,n}(0)`` for ``p = 0..n``, stored as ``1 - q_p``.

    ``f_{n,n}`` is the identity, so ``q_n = 0``.
    """

    n: int
    survival: np.ndarray

    @property
    def q(self) -> np.ndarray:
        return 1.0 - self.survival

    def q_at(self, p: int) -> Union[float, np.ndarray]:
        value = 1.0 - self.survival[..., p]
        return float(value) if np.ndim(value) == 0 else value

    def survival_at(self, p: int) -> Union[float, np.ndarray]:
        value = self.survival[..., p]
        return float(value) if np.ndim(value) == 0 else value


def backward_survival(laws: LawArray) -> np.ndarray:
    """``1 - f_{p,n}(0)`` for every ``p``, vectorised over leading axes.

    One backward pass of ``r_p = 1 - f_{p+1}(1 - r_{p+1})``; the survival
    form avoids cancellation when ``q_p`` is close to 1.
    """
    n = laws.params.shape[-2]
    survival = np.ones(laws.params.shape[:-2] + (n + 1,))
    for p in range(n - 1, -1, -1):
        survival[..., p] = _column(laws, p).survival_map(survival[..., p + 1])
    return np.clip(survival, 0.0, 1.0)


def extinction_schedule(env: Union[EnvironmentPath, EnvironmentBatch]) -> ExtinctionSchedule:
    n = env.n
    return ExtinctionSchedule(n, backward_survival(env.laws))


@dataclass(frozen=True, eq=False)
class PopulationTrajectory:
    """Generation sizes ``Z_0..Z_p``.

    ``approximated`` marks trajectories where a generation total came from the
    normal approximation above the exact-sum threshold.
    """

    counts: np.ndarray
    extinct_at: Optional[int] = None
    approximated: bool = False

    @property
    def p(self) -> int:
        return len(self.counts) - 1

    @property
    def final(self) -> int:
        return int(self.counts[-1])


def _check_population_args(n: int, z0: int, p: int, cap: int) -> None:
    if z0 < 1:
        raise DomainError(f"z0 must be >= 1, got {z0}")
    if not 0 <= p <= n:
        raise DomainError(f"p must lie in [0, {n}], got {p}")
    if cap < MIN_CAP:
        raise DomainError(f"cap must be >= {MIN_CAP}, got {cap}")


def simulate_population(
    env: EnvironmentPath,
    z0: int,
    p: int,
    rng: np.random.Generator,
    cap: int = DEFAULT_CAP,
    normal_threshold: float = DEFAULT_NORMAL_THRESHOLD,
) -> PopulationTrajectory:
    """Generation sizes up to ``p`` in the environment ``env``."""
    _check_population_args(env.n, z0, p, cap)
    counts = np.zeros(p + 1, dtype=np.int64)
    counts[0] = z0
    approximated = False
    extinct_at = None
    for k in range(p):
        if counts[k] == 0:
            extinct_at = extinct_at if extinct_at is not None else k
            continue
        law = LawArray(env.laws.kind, env.laws.params[k][None, :])
        total, flag = law.offspring_sum(counts[k:k + 1], rng, cap, normal_threshold)
        counts[k + 1] = total[0]
        approximated = approximated or bool(flag[0])
        if counts[k + 1] == 0 and extinct_at is None:
            extinct_at = k + 1
    return PopulationTrajectory(counts, extinct_at, approximated)


@dataclass(frozen=True, eq=False)
class PopulationBatch:
    """Trajectories of ``replicas`` populations per environment.

    Row ``i`` lives in environment ``environment[i]``; those ids are the
    bootstrap clusters.
    """

    counts: np.ndarray
    environment: np.ndarray
    approximated: np.ndarray

    def __len__(self) -> int:
        return self.counts.shape[0]

    def trajectory(self, i: int) -> PopulationTrajectory:
        row = self.counts[i]
        dead = np.flatnonzero(row == 0)
        return PopulationTrajectory(
            row, int(dead[0]) if dead.size else None, bool(self.approximated[i])
        )


def simulate_population_batch(
    batch: EnvironmentBatch,
    z0: int,
    p: int,
    rng: np.random.Generator,
    replicas: int = 1,
    cap: int = DEFAULT_CAP,
    normal_threshold: float = DEFAULT_NORMAL_THRESHOLD,
) -> PopulationBatch:
    """``replicas`` independent populations in each environment of ``batch``."""
    _check_population_args(batch.n, z0, p, cap)
    if replicas < 1:
        raise DomainError(f"replicas must be >= 1, got {replicas}")
    environment = np.repeat(np.arange(batch.size), replicas)
    rows = environment.size
    counts = np.zeros((rows, p + 1), dtype=np.int64)
    counts[:, 0] = z0
    approximated = np.zeros(rows, dtype=bool)
    params = batch.laws.params
    for k in range(p):
        alive = counts[:, k] > 0
        if not np.any(alive):
            break
        laws = LawArray(batch.laws.kind, params[environment[alive], k])
        total, flag = laws.offspring_sum(counts[alive, k], rng, cap, normal_threshold)
        counts[alive, k + 1] = total
        approximated[alive] |= flag
    return PopulationBatch(counts, environment, approximated)


def reduced_count(
    Zp: Union[int, np.ndarray], q: Union[float, np.ndarray], rng: np.random.Generator
) -> Union[int, np.ndarray]:
    """``Z_{p,n}`` given ``Z_p`` and ``q = f_{p,n}(0)``: a ``Binomial(Z_p, 1 - q)`` draw."""
    q_arr = np.asarray(q, dtype=float)
    if np.any((q_arr < 0.0) | (q_arr > 1.0)):
        raise DomainError("extinction probability must lie in [0, 1]")
    z = np.asarray(Zp, dtype=np.int64)
    if np.any(z < 0):
        raise DomainError("Z_p must be >= 0")
    return reduced_counts(z, 1.0 - q_arr, rng)


def reduced_counts(
    Zp: Union[int, np.ndarray], survival: Union[float, np.ndarray], rng: np.random.Generator
) -> Union[int, np.ndarray]:
    """Same draw parametrized by the survival probability ``1 - q``."""
    draws = rng.binomial(np.asarray(Zp, dtype=np.int64), np.clip(survival, 0.0, 1.0))
    return int(draws) if np.ndim(draws) == 0 else draws


@dataclass(frozen=True)
class ReducedObservation:
    replicate: int
    n: int
    p: int
    Z_p: int
    q_pn: float
    Z_pn: int
    survived: bool
    scaled_value: Optional[float]

    FIELDS = ("replicate", "n", "p", "Z_p", "q_pn", "Z_pn", "survived", "scaled_value")

    def to_row(self) -> Dict[str, Any]:
        return {name: getattr(self, name) for name in self.FIELDS}


def reduced_observations(
    n: int,
    p: int,
    Zp: np.ndarray,
    survival: np.ndarray,
    Zpn: np.ndarray,
    c_p: float,
    first_replicate: int = 0,
) -> List[ReducedObservation]:
    rows = []
    for i, (zp, r, zpn) in enumerate(zip(Zp, survival, Zpn)):
        survived = bool(zpn >= 1)
        rows.append(
            ReducedObservation(
                replicate=first_replicate + i,
                n=n,
                p=p,
                Z_p=int(zp),
                q_pn=float(1.0 - r),
                Z_pn=int(zpn),
                survived=survived,
                scaled_value=math.log(int(zpn)) / c_p if survived else None,
            )
        )
    return rows


@dataclass(frozen=True)
class JFunctionals:
    """J-functionals at ``p`` with the post-``p`` minimum at ``tau``.

    ``l_hat`` is ``S_tau - S_p``. The coefficients are ``eta_scale * eta``.
    """

    p: int
    n: int
    tau: int
    l_hat: float
    j_minus: float
    j_plus: float
    j_hat_minus: float
    eta_scale: float = 1.0

    @property
    def upper_bound(self) -> float:
        """``e^{L^_{p,n}}``, an upper bound for ``1 - f_{p,n}(0)``."""
        return math.exp(self.l_hat)

    @property
    def lower_bound(self) -> float:
        """``e^{L^_{p,n}} / (J- + J+)``; exact for linear-fractional laws at scale 1/2."""
        return math.exp(self.l_hat) / (self.j_minus + self.j_plus)


def _weighted_sum(eta: np.ndarray, exponents: np.ndarray) -> float:
    """``sum eta_l e^{exponent_l}`` with a shared shift."""
    if exponents.size == 0:
        return 0.0
    positive = eta > 0
    if not np.any(positive):
        return 0.0
    return float(
        math.exp(special.logsumexp(exponents[positive], b=eta[positive]))
    )


def j_plus(env: EnvironmentPath, p: int, r: int, eta_scale: float = 1.0) -> float:
    """``sum_{l=p}^{r-1} eta_l e^{S_p - S_l} + e^{S_p - S_r}``."""
    if not 0 <= p <= r <= env.n:
        raise DomainError(f"need 0 <= p <= r <= n, got p={p}, r={r}")
    S = env.S
    eta = eta_scale * env.eta[p:r]
    return _weighted_sum(eta, S[p] - S[p:r]) + math.exp(S[p] - S[r])


def j_minus(env: EnvironmentPath, p: int, r: int, eta_scale: float = 1.0) -> float:
    """``sum_{l=p}^{r-1} eta_l e^{S_r - S_l}``."""
    if not 0 <= p <= r <= env.n:
        raise DomainError(f"need 0 <= p <= r <= n, got p={p}, r={r}")
    S = env.S
    eta = eta_scale * env.eta[p:r]
    return _weighted_sum(eta, S[r] - S[p:r])


def j_hat_minus(env: EnvironmentPath, r: int, eta_scale: float = 1.0) -> float:
    """``sum_{l=0}^{r-1} eta_l e^{S_{l+1}}``."""
    if not 0 <= r <= env.n:
        raise DomainError(f"need 0 <= r <= n, got r={r}")
    S = env.S
    return _weighted_sum(eta_scale * env.eta[:r], S[1:r + 1])


def j_functionals(env: EnvironmentPath, p: int, eta_scale: float = 1.0) -> JFunctionals:
    """J-functionals around the first post-``p`` minimum ``tau_{p,n}``."""
    n = env.n
    if not 0 <= p <= n:
        raise DomainError(f"p must lie in [0, {n}], got {p}")
    S = env.S
    tau = p + int(np.argmin(S[p:]))
    return JFunctionals(
        p=p,
        n=n,
        tau=tau,
        l_hat=float(S[tau] - S[p]),
        j_minus=j_minus(env, p, tau, eta_scale),
        j_plus=j_plus(env, tau, n, eta_scale),
        j_hat_minus=j_hat_minus(env, p, eta_scale),
        eta_scale=eta_scale,
    )


def survival_probability(
    source: Union[EnvironmentPath, ExtinctionSchedule, float], z0: int = 1
) -> float:
    """``P(Z_n > 0 | env, Z_0 = z0) = 1 - q_0^{z0}``.

    ``source`` may be an environment, its schedule, or ``q_0`` itself.
    """
    if z0 < 1:
        raise DomainError(f"z0 must be >= 1, got {z0}")
    if isinstance(source, EnvironmentPath):
        source = extinction_schedule(source)
    if isinstance(source, ExtinctionSchedule):
        r0 = float(source.survival[0])
    else:
        if not 0.0 <= source <= 1.0:
            raise DomainError(f"q_0 must lie in [0, 1], got {source}")
        r0 = 1.0 - float(source)
    with np.errstate(divide="ignore"):
        return float(-np.expm1(z0 * np.log1p(-r0)))


def w_times(u_grid: Sequence[float], q: int, p: int, n: int) -> np.ndarray:
    """``m(u) = min(q + floor(u (p - q)), n)``."""
    if not 0 <= q <= p <= n:
        raise DomainError(f"need q <= p <= n, got q={q}, p={p}, n={n}")
    u = np.asarray(u_grid, dtype=float)
    if np.any(u < 0):
        raise DomainError("u must be >= 0")
    return np.minimum(q + np.floor(u * (p - q)).astype(np.int64), n)


def w_observable(
    env: EnvironmentPath,
    trajectory: PopulationTrajectory,
    u_grid: Sequence[float],
    q: int,
    p: int,
) -> np.ndarray:
    """``W_u = e^{-S_{m(u)}} Z_{m(u)}`` on the grid."""
    times = w_times(u_grid, q, p, env.n)
    if times.max(initial=0) > trajectory.p:
        raise DomainError(
            f"trajectory reaches generation {trajectory.p}, W needs {int(times.max())}"
        )
    counts = trajectory.counts[times].astype(float)
    return counts * np.exp(-env.S[times])


def w_observable_batch(
    walks: np.ndarray,
    counts: np.ndarray,
    u_grid: Sequence[float],
    q: int,
    p: int,
) -> np.ndarray:
    """Row-wise ``W_u`` for walks ``(R, n+1)`` and counts ``(R, >= m+1)``."""
    n = walks.shape[1] - 1
    times = w_times(u_grid, q, p, n)
    if times.max(initial=0) >= counts.shape[1]:
        raise DomainError("population counts do not reach the W grid")
    return counts[:, times].astype(float) * np.exp(-walks[:, times])


def simulate_genealogy(
    env: EnvironmentPath,
    z0: int,
    p: int,
    rng: np.random.Generator,
    limit: int = 10 ** 7,
) -> Tuple[int, int]:
    """Individual-level ``(Z_p, Z_{p,n})``.

    Every generation-``p`` individual carries its index as a label down to
    generation ``n``; ``Z_{p,n}`` is the number of labels still present.
    """
    n = env.n
    if not 0 <= p <= n:
        raise DomainError(f"p must lie in [0, {n}], got {p}")
    size = z0
    for k in range(p):
        if size == 0:
            return 0, 0
        size = int(np.sum(sample_offspring(env.law(k), rng, size)))
        if size > limit:
            raise DomainError(f"genealogy exceeds {limit} individuals")
    zp = size
    labels = np.arange(zp)
    for k in range(p, n):
        if labels.size == 0:
            break
        children = sample_offspring(env.law(k), rng, labels.size)
        labels = np.repeat(labels, children)
        if labels.size > limit:
            raise DomainError(f"genealogy exceeds {limit} individuals")
    return zp, int(np.unique(labels).size)


@dataclass(frozen=True, eq=False)
class TightnessReport:
    n: int
    at_n: np.ndarray
    at_2n: np.ndarray
    statistic: float
    proposals: int = 0
    extra: Dict[str, Any] = field(default_factory=dict)


def _j_plus_on_positive(
    model: EnvironmentModel,
    n: int,
    size: int,
    rng: np.random.Generator,
    chunk: int,
    budget: int,
) -> Tuple[np.ndarray, int]:
    values: List[np.ndarray] = []
    accepted = 0
    proposals = 0
    while accepted < size and proposals < budget:
        draw = min(chunk, budget - proposals)
        batch = simulate_environments(model, n, draw, rng)
        proposals += draw
        keep = batch.walks.min(axis=1) >= 0
        if not np.any(keep):
            continue
        walks = batch.walks[keep]
        eta = batch.eta()[keep]
        # J+(0, n) = sum_l eta_l e^{-S_l} + e^{-S_n}
        log_eta = np.log(np.maximum(eta, 1e-300))
        terms = np.concatenate([log_eta - walks[:, :-1], -walks[:, -1:]], axis=1)
        mask = np.concatenate([eta > 0, np.ones((eta.shape[0], 1), dtype=bool)], axis=1)
        terms = np.where(mask, terms, -np.inf)
        values.append(np.exp(special.logsumexp(terms, axis=1)))
        accepted += int(keep.sum())
    if accepted == 0:
        raise BudgetExhaustedError(
            f"no environment with L_{n} >= 0 in {proposals} proposals",
            rate_upper_bound=3.0 / proposals,
        )
    if accepted < size:
        logger.warning(f"J+ at n={n}: budget spent with {accepted}/{size} accepted")
    return np.concatenate(values)[:size], proposals


def j_plus_tightness(
    model: EnvironmentModel,
    n: int,
    size: int,
    rng: np.random.Generator,
    chunk: int = 2000,
    budget: int = 2_000_000,
) -> TightnessReport:
    """Laws of ``J+(0, n)`` on ``{L_n >= 0}`` at ``n`` and ``2n`` with their KS distance.

    Each of the two samples proposes at most ``budget`` environments.
    """
    if budget < 1:
        raise DomainError(f"budget must be >= 1, got {budget}")
    at_n, prop_n = _j_plus_on_positive(model, n, size, rng, chunk, budget)
    at_2n, prop_2n = _j_plus_on_positive(model, 2 * n, size, rng, chunk, budget)
    statistic = ks_two_sample(at_n, at_2n)
    logger.debug(f"J+ tightness at n={n}: KS {statistic:.4f}")
    return TightnessReport(n, at_n, at_2n, statistic, prop_n + prop_2n)
