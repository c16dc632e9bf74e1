"""Offspring laws and environment models.

An :class:`OffspringLaw` is one reproduction law ``Q`` with generating
function ``f``. A :class:`LawArray` holds many laws of the same kind as one
parameter array so that generating-function compositions and population
updates run vectorised over generations and replicates. An
:class:`EnvironmentModel` turns a drawn log-mean ``X`` into a law.

Parameter layout per kind (last axis of ``LawArray.params``):

* ``geometric``          ``(q, 1 - q)`` with ``Q({k}) = q (1 - q)^k``
* ``poisson``            ``(lambda,)``
* ``linear-fractional``  ``(1 - a, b, eta)`` with ``Q({0}) = a`` and
  ``Q({k}) = (1 - a)(1 - b) b^(k-1)``
* ``explicit``           ``(Q({0}), ..., Q({K-1}))``
"""

import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special, stats

from ..utils.errors import DomainError, UnsupportedLawError
from ..utils.logger import get_logger
from ..utils.statistics import bootstrap_ci
from .assoc_walk import IncrementLaw, sample_increments

logger = get_logger(__name__)

ArrayLike = Union[float, Sequence[float], np.ndarray]

GEOMETRIC = "geometric"
POISSON = "poisson"
LINEAR_FRACTIONAL = "linear-fractional"
EXPLICIT = "explicit"
LAW_KINDS = (GEOMETRIC, POISSON, LINEAR_FRACTIONAL, EXPLICIT)

FIXED = "fixed"
FAMILIES = (GEOMETRIC, POISSON, LINEAR_FRACTIONAL, FIXED)

DEFAULT_CAP = 2 ** 62
DEFAULT_NORMAL_THRESHOLD = 1e9


def _mean(kind: str, params: np.ndarray) -> np.ndarray:
    if kind == GEOMETRIC:
        return params[..., 1] / params[..., 0]
    if kind == POISSON:
        return params[..., 0]
    if kind == LINEAR_FRACTIONAL:
        return params[..., 0] / (1.0 - params[..., 1])
    return params @ np.arange(params.shape[-1], dtype=float)


def _second_factorial(kind: str, params: np.ndarray) -> np.ndarray:
    if kind == GEOMETRIC:
        ratio = params[..., 1] / params[..., 0]
        return 2.0 * ratio * ratio
    if kind == POISSON:
        return params[..., 0] ** 2
    if kind == LINEAR_FRACTIONAL:
        mean = _mean(kind, params)
        return params[..., 2] * mean * mean
    k = np.arange(params.shape[-1], dtype=float)
    return params @ (k * (k - 1.0))


def _gf(kind: str, params: np.ndarray, s: np.ndarray) -> np.ndarray:
    if kind == GEOMETRIC:
        return params[..., 0] / (1.0 - params[..., 1] * s)
    if kind == POISSON:
        return np.exp(params[..., 0] * (s - 1.0))
    if kind == LINEAR_FRACTIONAL:
        pos, b = params[..., 0], params[..., 1]
        return (1.0 - pos) + pos * (1.0 - b) * s / (1.0 - b * s)
    powers = np.asarray(s, dtype=float)[..., None] ** np.arange(params.shape[-1])
    return np.sum(params * powers, axis=-1)


def _survival_map(kind: str, params: np.ndarray, r: np.ndarray) -> np.ndarray:
    """``1 - f(1 - r)`` without cancellation."""
    if kind == GEOMETRIC:
        q, qbar = params[..., 0], params[..., 1]
        return qbar * r / (q + qbar * r)
    if kind == POISSON:
        return -np.expm1(-params[..., 0] * r)
    if kind == LINEAR_FRACTIONAL:
        pos, b = params[..., 0], params[..., 1]
        return pos * r / (1.0 - b + b * r)
    k = np.arange(1, params.shape[-1], dtype=float)
    with np.errstate(divide="ignore"):
        log_keep = np.log1p(-np.asarray(r, dtype=float))[..., None]
    return np.sum(params[..., 1:] * -np.expm1(k * log_keep), axis=-1)


def _pmf(kind: str, params: np.ndarray, ks: np.ndarray) -> np.ndarray:
    """``Q({k})`` for ``k`` in ``ks`` (nonnegative); shape ``params.shape[:-1] + ks.shape``."""
    k = np.asarray(ks, dtype=float)
    if kind == GEOMETRIC:
        return params[..., :1] * params[..., 1:2] ** k
    if kind == POISSON:
        return stats.poisson.pmf(k, params[..., :1])
    if kind == LINEAR_FRACTIONAL:
        pos, b = params[..., :1], params[..., 1:2]
        tail = pos * (1.0 - b) * b ** np.maximum(k - 1.0, 0.0)
        return np.where(k == 0, 1.0 - pos, tail)
    width = params.shape[-1]
    picked = params[..., np.clip(np.asarray(ks, dtype=int), 0, width - 1)]
    return np.where(k < width, picked, 0.0)


@dataclass(frozen=True)
class OffspringLaw:
    """One reproduction law ``Q``."""

    kind: str
    params: Tuple[float, ...]
    heavy_tail: bool = False

    def __post_init__(self) -> None:
        if self.kind not in LAW_KINDS:
            raise DomainError(f"unknown offspring law kind: {self.kind}")
        if any(not math.isfinite(v) or v < 0 for v in self.params):
            raise DomainError(f"offspring parameters must be finite and >= 0: {self.params}")

    @classmethod
    def geometric(cls, q: float) -> "OffspringLaw":
        """``Q({k}) = q (1 - q)^k``; ``q`` is the success probability."""
        if not 0.0 < q <= 1.0:
            raise DomainError(f"geometric success probability must lie in (0, 1], got {q}")
        return cls(GEOMETRIC, (float(q), 1.0 - float(q)))

    @classmethod
    def poisson(cls, mean: float) -> "OffspringLaw":
        if not mean > 0:
            raise DomainError(f"Poisson mean must be positive, got {mean}")
        return cls(POISSON, (float(mean),))

    @classmethod
    def linear_fractional(cls, mean: float, eta: float) -> "OffspringLaw":
        """Linear-fractional law with mean ``m`` and ``eta = f''(1)/m^2``.

        Such a law exists iff ``eta >= 2 - 2/m``; ``eta = 2`` is geometric.
        """
        params = _linear_fractional_params(np.asarray(mean, float), np.asarray(eta, float))
        return cls(LINEAR_FRACTIONAL, tuple(float(v) for v in params))

    @classmethod
    def explicit(cls, pmf: Sequence[float], heavy_tail: bool = False) -> "OffspringLaw":
        probs = np.asarray(pmf, dtype=float)
        if probs.ndim != 1 or probs.size == 0 or np.any(probs < 0):
            raise DomainError("explicit pmf must be a nonempty nonnegative vector")
        total = probs.sum()
        if abs(total - 1.0) > 1e-12:
            raise DomainError(f"explicit pmf sums to {total}, not 1")
        return cls(EXPLICIT, tuple(float(v) for v in probs / total), heavy_tail=heavy_tail)

    @classmethod
    def point_mass(cls, k: int) -> "OffspringLaw":
        pmf = np.zeros(int(k) + 1)
        pmf[int(k)] = 1.0
        return cls.explicit(pmf)

    @property
    def _array(self) -> np.ndarray:
        return np.asarray(self.params, dtype=float)

    @property
    def mean(self) -> float:
        return float(_mean(self.kind, self._array))

    @property
    def second_factorial(self) -> float:
        """``f''(1)``."""
        return float(_second_factorial(self.kind, self._array))

    @property
    def second_moment(self) -> float:
        return self.second_factorial + self.mean

    @property
    def variance(self) -> float:
        m = self.mean
        return self.second_factorial + m - m * m

    @property
    def eta(self) -> float:
        """``f''(1) / f'(1)^2``; 0 for the point mass at 0."""
        if self.kind == LINEAR_FRACTIONAL:
            return self.params[2]
        m = self.mean
        return 0.0 if m == 0 else self.second_factorial / (m * m)

    @property
    def log_mean(self) -> float:
        m = self.mean
        return -math.inf if m == 0 else math.log(m)

    def pmf(self, k: ArrayLike) -> np.ndarray:
        ks = np.asarray(k)
        if self.kind == GEOMETRIC:
            q, qbar = self.params
            return np.where(ks >= 0, q * qbar ** np.maximum(ks, 0), 0.0)
        if self.kind == POISSON:
            return stats.poisson.pmf(ks, self.params[0])
        if self.kind == LINEAR_FRACTIONAL:
            pos, b, _ = self.params
            tail = pos * (1.0 - b) * b ** np.maximum(ks - 1, 0)
            return np.where(ks == 0, 1.0 - pos, np.where(ks > 0, tail, 0.0))
        probs = self._array
        inside = (ks >= 0) & (ks < probs.size)
        return np.where(inside, probs[np.clip(ks, 0, probs.size - 1)], 0.0)

    def gf(self, s: ArrayLike) -> np.ndarray:
        return gf_eval(self, s)

    def sample(
        self, rng: np.random.Generator, size: Union[None, int, Tuple[int, ...]] = None
    ) -> Union[int, np.ndarray]:
        return sample_offspring(self, rng, size)


def _linear_fractional_params(mean: np.ndarray, eta: np.ndarray) -> np.ndarray:
    if np.any(mean <= 0):
        raise DomainError("linear-fractional mean must be positive")
    if np.any(eta < 2.0 - 2.0 / mean - 1e-12):
        raise DomainError("linear-fractional law needs eta >= 2 - 2/m")
    denominator = 2.0 + mean * eta
    positive = np.minimum(2.0 * mean / denominator, 1.0)
    b = eta * mean / denominator
    return np.stack([positive, b, eta * np.ones_like(b)], axis=-1)


def gf_eval(law: OffspringLaw, s: ArrayLike) -> np.ndarray:
    """Generating function ``f(s)`` on ``[0, 1]``."""
    s_arr = np.asarray(s, dtype=float)
    if np.any((s_arr < 0.0) | (s_arr > 1.0)):
        raise DomainError("generating function argument must lie in [0, 1]")
    value = _gf(law.kind, law._array, s_arr)
    return value if value.ndim else np.float64(value)


def sample_offspring(
    law: OffspringLaw,
    rng: np.random.Generator,
    size: Union[None, int, Tuple[int, ...]] = None,
) -> Union[int, np.ndarray]:
    """Offspring counts distributed as ``Q``."""
    if law.kind == GEOMETRIC:
        draws = rng.geometric(law.params[0], size) - 1
    elif law.kind == POISSON:
        draws = rng.poisson(law.params[0], size)
    elif law.kind == LINEAR_FRACTIONAL:
        pos, b, _ = law.params
        alive = rng.random(size) < pos
        draws = np.where(alive, rng.geometric(1.0 - b, size), 0)
    else:
        draws = rng.choice(len(law.params), size=size, p=law._array)
    if size is None:
        return int(draws)
    return np.asarray(draws, dtype=np.int64)


def _tail_second_moment(law: OffspringLaw, a: int, chunk: int = 256) -> float:
    total = 0.0
    start = a
    mean = law.mean
    spread = math.sqrt(max(law.variance, 1.0))
    for _ in range(100000):
        ks = np.arange(start, start + chunk)
        terms = ks.astype(float) ** 2 * law.pmf(ks)
        total += float(terms.sum())
        past_bulk = start + chunk > mean + 10.0 * spread
        if past_bulk and terms[-1] <= 1e-15 * max(total, 1e-300):
            return total
        start += chunk
    raise UnsupportedLawError("tail series for zeta did not converge")


def zeta(law: OffspringLaw, a: int) -> float:
    """``sum_{k >= a} k^2 Q({k}) / f'(1)^2``."""
    if a < 0:
        raise DomainError(f"zeta truncation level must be >= 0, got {a}")
    if law.heavy_tail:
        raise UnsupportedLawError("second moment of a heavy-tailed law diverges")
    m = law.mean
    if m == 0:
        raise DomainError("zeta is undefined for the point mass at 0")
    if a == 0:
        return (law.second_factorial + m) / (m * m)
    if law.kind == EXPLICIT:
        probs = law._array
        ks = np.arange(probs.size, dtype=float)
        return float(np.sum((ks * ks * probs)[a:])) / (m * m)
    return _tail_second_moment(law, a) / (m * m)


class LawArray:
    """Same-kind laws stored as one parameter array of shape ``(..., k)``."""

    def __init__(self, kind: str, params: np.ndarray):
        if kind not in LAW_KINDS:
            raise DomainError(f"unknown offspring law kind: {kind}")
        self.kind = kind
        self.params = np.asarray(params, dtype=float)

    @classmethod
    def from_laws(cls, laws: Sequence[OffspringLaw]) -> "LawArray":
        if not laws:
            raise DomainError("cannot build a law array from no laws")
        kinds = {law.kind for law in laws}
        if len(kinds) != 1:
            raise DomainError(f"laws of mixed kinds cannot share an array: {sorted(kinds)}")
        kind = kinds.pop()
        width = max(len(law.params) for law in laws)
        params = np.zeros((len(laws), width))
        for i, law in enumerate(laws):
            params[i, : len(law.params)] = law.params
        return cls(kind, params)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.params.shape[:-1]

    def __len__(self) -> int:
        return self.shape[0]

    def __getitem__(self, index: Any) -> Union["LawArray", OffspringLaw]:
        picked = self.params[index]
        if picked.ndim == 1:
            values = tuple(float(v) for v in picked)
            if self.kind == EXPLICIT:
                return OffspringLaw.explicit(values)
            return OffspringLaw(self.kind, values)
        return LawArray(self.kind, picked)

    def take(self, index: np.ndarray, axis: int = 0) -> "LawArray":
        return LawArray(self.kind, np.take(self.params, index, axis=axis))

    def mean(self) -> np.ndarray:
        return _mean(self.kind, self.params)

    def second_factorial(self) -> np.ndarray:
        return _second_factorial(self.kind, self.params)

    def eta(self) -> np.ndarray:
        if self.kind == LINEAR_FRACTIONAL:
            return self.params[..., 2].copy()
        m = self.mean()
        safe = np.where(m > 0, m, 1.0)
        return np.where(m > 0, self.second_factorial() / (safe * safe), 0.0)

    def zeta(self, a: int) -> np.ndarray:
        """:func:`zeta` for every law, as ``E k^2`` minus the head ``k < a``.

        A zero mean gives ``inf``.
        """
        if a < 0:
            raise DomainError(f"zeta truncation level must be >= 0, got {a}")
        m = self.mean()
        second = self.second_factorial() + m
        if a > 0:
            ks = np.arange(a)
            head = _pmf(self.kind, self.params, ks) @ (ks.astype(float) ** 2)
            second = np.maximum(second - head, 0.0)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            return np.where(m > 0, second / (m * m), np.inf)

    def gf(self, s: ArrayLike) -> np.ndarray:
        return _gf(self.kind, self.params, np.asarray(s, dtype=float))

    def survival_map(self, r: ArrayLike) -> np.ndarray:
        return _survival_map(self.kind, self.params, np.asarray(r, dtype=float))

    def offspring_sum(
        self,
        z: np.ndarray,
        rng: np.random.Generator,
        cap: int = DEFAULT_CAP,
        normal_threshold: float = DEFAULT_NORMAL_THRESHOLD,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Total offspring of ``z`` parents for each law in the array.

        Exact parametric totals are used for every ``z`` (negative binomial,
        Poisson, binomial-thinned negative binomial, multinomial). Above
        ``normal_threshold`` the total is a moment-matched normal draw and the
        returned flag is set.
        """
        z = np.asarray(z, dtype=np.int64)
        total = np.zeros(z.shape, dtype=np.int64)
        approx = z > normal_threshold
        exact = (z > 0) & ~approx
        if np.any(exact):
            total[exact] = self._exact_sum(z[exact], self.params[exact], rng)
        if np.any(approx):
            params = self.params[approx]
            zf = z[approx].astype(float)
            m = _mean(self.kind, params)
            var = _second_factorial(self.kind, params) + m - m * m
            draw = rng.normal(zf * m, np.sqrt(np.maximum(zf * var, 0.0)))
            total[approx] = np.clip(np.rint(draw), 0, float(cap)).astype(np.int64)
        return np.minimum(total, cap), approx

    def _exact_sum(
        self, z: np.ndarray, params: np.ndarray, rng: np.random.Generator
    ) -> np.ndarray:
        if self.kind == GEOMETRIC:
            return rng.negative_binomial(z, params[:, 0])
        if self.kind == POISSON:
            return rng.poisson(z * params[:, 0])
        if self.kind == LINEAR_FRACTIONAL:
            fertile = rng.binomial(z, params[:, 0])
            extra = np.zeros_like(fertile)
            some = fertile > 0
            extra[some] = rng.negative_binomial(fertile[some], 1.0 - params[some, 1])
            return fertile + extra
        counts = rng.multinomial(z, params)
        return counts @ np.arange(params.shape[-1], dtype=np.int64)


@dataclass(frozen=True)
class EnvironmentModel:
    """I.i.d. environment: draw ``X`` from ``increment``, build ``Q`` with mean ``e^X``.

    ``family`` is ``geometric``, ``poisson``, ``linear-fractional`` (with
    ``eta = max(eta, 2 - 2/m)`` so the law exists) or ``fixed`` (every
    generation uses ``fixed_law``).
    """

    increment: IncrementLaw
    family: str = GEOMETRIC
    eta: float = 2.0
    fixed_law: Optional[OffspringLaw] = None

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise DomainError(f"unknown offspring family: {self.family}")
        if self.family == FIXED and self.fixed_law is None:
            raise DomainError("fixed family needs a law")
        if self.family == LINEAR_FRACTIONAL and not self.eta > 0:
            raise DomainError(f"eta must be positive, got {self.eta}")

    @classmethod
    def constant(cls, law: OffspringLaw) -> "EnvironmentModel":
        return cls(IncrementLaw.lattice(), FIXED, fixed_law=law)

    @classmethod
    def from_descriptor(cls, descriptor: Dict[str, Any]) -> "EnvironmentModel":
        increment = IncrementLaw.from_descriptor(descriptor)
        family = descriptor.get("offspring", GEOMETRIC)
        fixed_law = None
        if family == FIXED:
            fixed_law = OffspringLaw.explicit(descriptor["pmf"])
        return cls(increment, family, float(descriptor.get("eta", 2.0)), fixed_law)

    def describe(self) -> Dict[str, Any]:
        descriptor = dict(self.increment.describe())
        descriptor["offspring"] = self.family
        if self.family == LINEAR_FRACTIONAL:
            descriptor["eta"] = self.eta
        if self.family == FIXED and self.fixed_law is not None:
            descriptor["pmf"] = list(self.fixed_law.params)
        return descriptor

    @property
    def law_kind(self) -> str:
        if self.family == FIXED and self.fixed_law is not None:
            return self.fixed_law.kind
        return self.family

    @property
    def is_deterministic(self) -> bool:
        return self.family == FIXED

    def sample_log_means(
        self, size: Union[int, Tuple[int, ...]], rng: np.random.Generator
    ) -> np.ndarray:
        if self.family == FIXED and self.fixed_law is not None:
            return np.full(size, self.fixed_law.log_mean)
        return sample_increments(self.increment, size, rng)

    def family_params(self, x: ArrayLike) -> np.ndarray:
        """Parameter array of the laws with log-means ``x``."""
        x_arr = np.asarray(x, dtype=float)
        if self.family == GEOMETRIC:
            return np.stack([special.expit(-x_arr), special.expit(x_arr)], axis=-1)
        if self.family == POISSON:
            return np.exp(x_arr)[..., None]
        if self.family == LINEAR_FRACTIONAL:
            mean = np.exp(x_arr)
            eta = np.maximum(self.eta, 2.0 - 2.0 / mean)
            return _linear_fractional_params(mean, eta)
        assert self.fixed_law is not None
        return np.broadcast_to(
            np.asarray(self.fixed_law.params), x_arr.shape + (len(self.fixed_law.params),)
        ).copy()

    def law_array(self, x: ArrayLike) -> LawArray:
        return LawArray(self.law_kind, self.family_params(x))


@dataclass(frozen=True)
class ConditionA2Report:
    estimate: float
    ci_low: float
    ci_high: float
    exponent: float
    growth_exponent: float
    verdict: str
    n_samples: int


def block_maxima_growth(values: ArrayLike, smallest: int = 32, blocks: int = 8) -> float:
    """Slope of ``log`` median block maximum against ``log log`` block size.

    Block sizes run geometrically from ``smallest`` to ``n / blocks``. A
    light tail gives a slope near 1 or below; a power tail of index
    ``kappa`` gives about ``log(b) / kappa``. Infinite maxima give ``inf``.
    """
    data = np.asarray(values, dtype=float)
    n = data.size
    sizes = np.unique(np.geomspace(smallest, max(smallest, n // blocks), 6).astype(int))
    if len(sizes) < 2:
        return 0.0
    medians = np.array(
        [np.median(data[: n - n % b].reshape(-1, b).max(axis=1)) for b in sizes]
    )
    if not np.all(np.isfinite(medians)):
        return math.inf
    if not np.all(medians > 0):
        return 0.0
    slope, _ = np.polyfit(np.log(np.log(sizes)), np.log(medians), 1)
    return float(slope)


def check_condition_A2(
    env: EnvironmentModel,
    a: int,
    eps: float,
    n_samples: int,
    rng: np.random.Generator,
    growth_threshold: float = 2.0,
    n_resamples: int = 1000,
) -> ConditionA2Report:
    """Monte Carlo diagnostic for ``E (log+ zeta(a))^(alpha + eps) < inf``.

    The verdict is ``suspect`` when the maxima of ``log+ zeta(a)`` grow faster
    than a power of ``log n`` (see :func:`block_maxima_growth`, compared with
    ``growth_threshold``); otherwise ``finite``.
    """
    if n_samples < 1000:
        raise DomainError(f"need at least 1000 samples, got {n_samples}")
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps}")
    exponent = env.increment.stable.alpha + eps
    x = env.sample_log_means(n_samples, rng)
    zetas = env.law_array(x).zeta(a)
    with np.errstate(divide="ignore"):
        logs = np.maximum(np.log(zetas), 0.0)
    # nan only where the mean overflowed, and zeta stays bounded there
    logs = np.nan_to_num(logs, nan=0.0, posinf=np.inf)
    terms = logs ** exponent

    growth = block_maxima_growth(logs)
    verdict = "suspect" if growth > growth_threshold else "finite"
    if not np.all(np.isfinite(terms)):
        low, high = math.inf, math.inf
    else:
        low, high = bootstrap_ci(terms, n_resamples=n_resamples, rng=rng)
    logger.debug(
        f"A2 diagnostic: estimate={terms.mean():.4g}, growth={growth:.3f}, {verdict}"
    )
    return ConditionA2Report(
        estimate=float(terms.mean()),
        ci_low=low,
        ci_high=high,
        exponent=exponent,
        growth_exponent=growth,
        verdict=verdict,
        n_samples=n_samples,
    )
