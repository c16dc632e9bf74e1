"""Associated random walk.

Increment laws in the domain of attraction of a stable law, the norming
sequence ``c_n``, the positivity parameter ``rho``, path statistics and
stable reference sampling. The stable parametrization is the standard one,

    E exp(itX) = exp(-c |t|^alpha (1 - i beta sgn(t) tan(pi alpha / 2))),

for which ``P(X > 0) = rho(alpha, beta)``.
"""

import math
from dataclasses import dataclass
from typing import Any, Dict, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, special

from ..utils.errors import DomainError
from ..utils.logger import get_logger

logger = get_logger(__name__)

ArrayLike = Union[float, Sequence[float], np.ndarray]

LATTICE = "lattice-ssrw"
GAUSSIAN = "gaussian"
EXACT_STABLE = "exact-stable"
PARETO = "two-sided-pareto"
INCREMENT_KINDS = (LATTICE, GAUSSIAN, EXACT_STABLE, PARETO)

DEFAULT_STABLE_SCALE = 0.5


def is_admissible(alpha: float, beta: float) -> bool:
    """Membership in the admissible parameter set of the stable limit."""
    if alpha == 2.0:
        return beta == 0.0
    if alpha == 1.0:
        return beta == 0.0
    if 0.0 < alpha < 2.0:
        return abs(beta) < 1.0
    return False


def rho(alpha: float, beta: float) -> float:
    """Positivity parameter ``lim P(S_n > 0)`` of the stable limit."""
    if not is_admissible(alpha, beta):
        raise DomainError(f"(alpha, beta) = ({alpha}, {beta}) is not admissible")
    if alpha in (1.0, 2.0):
        return 0.5
    return 0.5 + math.atan(beta * math.tan(math.pi * alpha / 2.0)) / (math.pi * alpha)


@dataclass(frozen=True)
class StableParams:
    """Stable law ``(alpha, beta, c)``."""

    alpha: float
    beta: float = 0.0
    scale: float = DEFAULT_STABLE_SCALE

    def __post_init__(self) -> None:
        if not is_admissible(self.alpha, self.beta):
            raise DomainError(
                f"(alpha, beta) = ({self.alpha}, {self.beta}) is not admissible"
            )
        if not self.scale > 0:
            raise DomainError(f"stable scale must be positive, got {self.scale}")

    @property
    def rho(self) -> float:
        return rho(self.alpha, self.beta)

    @property
    def harmonic_exponent(self) -> float:
        """Regular-variation index ``alpha (1 - rho)`` of V."""
        return self.alpha * (1.0 - self.rho)

    @property
    def sigma(self) -> float:
        """Scale in the ``|sigma t|^alpha`` form."""
        return float(self.scale ** (1.0 / self.alpha))

    def characteristic_function(self, t: ArrayLike) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        a = self.alpha
        skew = 0.0 if a in (1.0, 2.0) else self.beta * math.tan(math.pi * a / 2.0)
        return np.exp(-self.scale * np.abs(t) ** a * (1.0 - 1j * skew * np.sign(t)))


def stable_variates(
    params: StableParams, size: Union[int, Tuple[int, ...]], rng: np.random.Generator
) -> np.ndarray:
    """Chambers-Mallows-Stuck draws in the standard parametrization."""
    alpha, beta = params.alpha, params.beta
    v = rng.uniform(-math.pi / 2.0, math.pi / 2.0, size)
    w = rng.exponential(1.0, size)

    if alpha == 1.0:
        half_pi = math.pi / 2.0
        x = (2.0 / math.pi) * (
            (half_pi + beta * v) * np.tan(v)
            - beta * np.log(half_pi * w * np.cos(v) / (half_pi + beta * v))
        )
        return params.sigma * x

    skew = beta * math.tan(math.pi * alpha / 2.0)
    shift = math.atan(skew) / alpha
    factor = (1.0 + skew * skew) ** (1.0 / (2.0 * alpha))
    x = (
        factor
        * np.sin(alpha * (v + shift))
        / np.cos(v) ** (1.0 / alpha)
        * (np.cos(v - alpha * (v + shift)) / w) ** ((1.0 - alpha) / alpha)
    )
    return params.sigma * x


def sample_stable(params: StableParams, rng: np.random.Generator) -> float:
    """One draw from the stable law ``params``."""
    return float(stable_variates(params, 1, rng)[0])


@dataclass(frozen=True)
class IncrementLaw:
    """Law of the walk increment ``X = log f'(1)``.

    Build instances with the classmethods; ``params`` is kind specific:
    ``()`` for the simple walk, ``(sigma,)`` for gaussian, ``(alpha, beta, c)``
    for exact-stable and ``(alpha, p)`` for the two-sided Pareto law with
    ``P(|Y| > y) = y^-alpha`` (``y >= 1``), positive sign with probability ``p``.
    """

    kind: str
    params: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in INCREMENT_KINDS:
            raise DomainError(f"unknown increment kind: {self.kind}")
        # validates (alpha, beta) as a side effect
        self.stable

    @classmethod
    def lattice(cls) -> "IncrementLaw":
        return cls(LATTICE)

    @classmethod
    def gaussian(cls, sigma: float = 1.0) -> "IncrementLaw":
        if not sigma > 0:
            raise DomainError(f"sigma must be positive, got {sigma}")
        return cls(GAUSSIAN, (float(sigma),))

    @classmethod
    def exact_stable(
        cls, alpha: float, beta: float = 0.0, scale: float = DEFAULT_STABLE_SCALE
    ) -> "IncrementLaw":
        return cls(EXACT_STABLE, (float(alpha), float(beta), float(scale)))

    @classmethod
    def pareto(cls, alpha: float, asymmetry: float = 0.5) -> "IncrementLaw":
        if not 0.0 < asymmetry < 1.0:
            raise DomainError(f"asymmetry must lie in (0, 1), got {asymmetry}")
        return cls(PARETO, (float(alpha), float(asymmetry)))

    @classmethod
    def from_descriptor(cls, descriptor: Dict[str, Any]) -> "IncrementLaw":
        kind = descriptor.get("increment", descriptor.get("kind", GAUSSIAN))
        if kind == LATTICE:
            return cls.lattice()
        if kind == GAUSSIAN:
            return cls.gaussian(float(descriptor.get("sigma", 1.0)))
        if kind == EXACT_STABLE:
            return cls.exact_stable(
                float(descriptor["alpha"]),
                float(descriptor.get("beta", 0.0)),
                float(descriptor.get("scale", DEFAULT_STABLE_SCALE)),
            )
        if kind == PARETO:
            return cls.pareto(
                float(descriptor["alpha"]), float(descriptor.get("asymmetry", 0.5))
            )
        raise DomainError(f"unknown increment kind: {kind}")

    def describe(self) -> Dict[str, Any]:
        if self.kind == GAUSSIAN:
            return {"increment": self.kind, "sigma": self.params[0]}
        if self.kind == EXACT_STABLE:
            alpha, beta, scale = self.params
            return {"increment": self.kind, "alpha": alpha, "beta": beta, "scale": scale}
        if self.kind == PARETO:
            alpha, p = self.params
            return {"increment": self.kind, "alpha": alpha, "asymmetry": p}
        return {"increment": self.kind}

    @property
    def stable(self) -> StableParams:
        """Parameters of the attracting stable law."""
        if self.kind in (LATTICE, GAUSSIAN):
            return StableParams(2.0, 0.0)
        if self.kind == EXACT_STABLE:
            return StableParams(*self.params)
        alpha, p = self.params
        if not 0.0 < alpha < 2.0:
            raise DomainError(f"Pareto index must lie in (0, 2), got {alpha}")
        return StableParams(alpha, 2.0 * p - 1.0)

    @property
    def is_lattice(self) -> bool:
        return self.kind == LATTICE

    @property
    def has_mean(self) -> bool:
        return self.stable.alpha > 1.0

    @property
    def center(self) -> float:
        """Shift subtracted from the raw Pareto variable."""
        if self.kind != PARETO:
            return 0.0
        alpha, p = self.params
        if alpha <= 1.0:
            return 0.0
        return (2.0 * p - 1.0) * alpha / (alpha - 1.0)

    @property
    def support_floor(self) -> float:
        """Leftmost point where the truncated second moment is positive."""
        return 1.0 if self.kind == LATTICE else 0.0

    @property
    def typical_scale(self) -> float:
        if self.kind == GAUSSIAN:
            return self.params[0]
        if self.kind == EXACT_STABLE:
            return self.stable.sigma
        return 1.0

    def sample(
        self, size: Union[int, Tuple[int, ...]], rng: np.random.Generator
    ) -> np.ndarray:
        return sample_increments(self, size, rng)


def sample_increments(
    law: IncrementLaw, size: Union[int, Tuple[int, ...]], rng: np.random.Generator
) -> np.ndarray:
    """Array of i.i.d. increments."""
    if law.kind == LATTICE:
        return 2.0 * rng.integers(0, 2, size=size).astype(float) - 1.0
    if law.kind == GAUSSIAN:
        return rng.normal(0.0, law.params[0], size)
    if law.kind == EXACT_STABLE:
        return stable_variates(law.stable, size, rng)
    alpha, p = law.params
    radius = rng.pareto(alpha, size) + 1.0
    sign = np.where(rng.random(size) < p, 1.0, -1.0)
    return sign * radius - law.center


def _gaussian_truncated_moment(sigma: float, u: float) -> float:
    t = u / sigma
    mass = special.erf(t / math.sqrt(2.0))
    density = math.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)
    return sigma * sigma * (mass - 2.0 * t * density)


def _pareto_piece(alpha: float, s: float, lo: float, hi: float) -> float:
    """``int_lo^hi (r + s)^2 alpha r^(-alpha-1) dr`` for ``1 <= lo``."""
    if hi <= lo:
        return 0.0

    def antiderivative(r: float) -> float:
        square = r ** (2.0 - alpha) / (2.0 - alpha)
        linear = math.log(r) if alpha == 1.0 else r ** (1.0 - alpha) / (1.0 - alpha)
        constant = -(r ** (-alpha)) / alpha
        return alpha * (square + 2.0 * s * linear + s * s * constant)

    return antiderivative(hi) - antiderivative(lo)


def _pareto_truncated_moment(law: IncrementLaw, u: float) -> float:
    alpha, p = law.params
    mu = law.center
    # X = R - mu with probability p, X = -R - mu otherwise
    positive = _pareto_piece(alpha, -mu, max(1.0, mu - u), mu + u)
    negative = _pareto_piece(alpha, mu, max(1.0, -mu - u), u - mu)
    return p * positive + (1.0 - p) * negative


def _stable_truncated_moment(params: StableParams, u: float) -> float:
    if params.alpha == 2.0:
        return _gaussian_truncated_moment(math.sqrt(2.0 * params.scale), u)
    a, c = params.alpha, params.scale
    skew = 0.0 if a == 1.0 else params.beta * math.tan(math.pi * a / 2.0)

    # only the even part of the density meets the even weight x^2
    def integrand(t: float) -> float:
        if t == 0.0:
            return 2.0 * u ** 3 / 3.0
        decay = math.exp(-c * t ** a) * math.cos(c * skew * t ** a)
        ut = u * t
        if ut < 1e-3:
            kernel = 2.0 * u ** 3 * (1.0 / 3.0 - ut * ut / 10.0)
        else:
            kernel = 2.0 * ((ut * ut - 2.0) * math.sin(ut) + 2.0 * ut * math.cos(ut)) / t ** 3
        return decay * kernel

    upper = (50.0 / c) ** (1.0 / a)
    value, _ = integrate.quad(integrand, 0.0, upper, limit=2000, epsabs=1e-12)
    return max(value / math.pi, 0.0)


def truncated_second_moment(law: IncrementLaw, u: float) -> float:
    """``G(u) = u^-2 E[X^2; |X| <= u]``."""
    if not u > 0:
        raise DomainError(f"u must be positive, got {u}")
    if law.kind == LATTICE:
        return 1.0 / (u * u) if u >= 1.0 else 0.0
    if law.kind == GAUSSIAN:
        moment = _gaussian_truncated_moment(law.params[0], u)
    elif law.kind == PARETO:
        moment = _pareto_truncated_moment(law, u)
    else:
        moment = _stable_truncated_moment(law.stable, u)
    return moment / (u * u)


def norming_cn(law: IncrementLaw, n: int, rtol: float = 1e-9) -> float:
    """Norming constant ``c_n`` by bisection on the eventual branch of G.

    Returns ``inf{u >= u* : G(v) <= 1/n for all v >= u}``.
    """
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    target = 1.0 / n
    floor = law.support_floor
    tiny = 1e-12 * law.typical_scale

    def g(u: float) -> float:
        return truncated_second_moment(law, u)

    upper = max(floor, law.typical_scale)
    for _ in range(400):
        if g(upper) <= target and g(2.0 * upper) <= target:
            break
        upper *= 2.0
    else:
        raise DomainError(f"no bracket for c_n at n={n}")

    lower = max(upper / 2.0, floor)
    while g(lower) <= target:
        if lower <= floor or lower < tiny:
            return max(lower, floor)
        upper = lower
        lower = max(lower / 2.0, floor)

    while upper - lower > rtol * upper:
        mid = 0.5 * (lower + upper)
        if g(mid) <= target:
            upper = mid
        else:
            lower = mid
    return upper


def fit_cn_exponent(law: IncrementLaw, ns: Sequence[int]) -> float:
    """Least-squares slope of ``log c_n`` against ``log n``."""
    log_n = np.log(np.asarray(ns, dtype=float))
    log_c = np.log([norming_cn(law, int(n)) for n in ns])
    slope, _ = np.polyfit(log_n, log_c, 1)
    return float(slope)


@dataclass(frozen=True)
class PathStatistics:
    minimum: float
    maximum: float
    argmin: int


@dataclass(frozen=True, eq=False)
class WalkPath:
    """Walk values ``S_0 = 0, S_1, ..., S_n``."""

    values: np.ndarray

    @classmethod
    def from_increments(cls, increments: ArrayLike) -> "WalkPath":
        steps = np.asarray(increments, dtype=float)
        return cls(np.concatenate(([0.0], np.cumsum(steps))))

    @property
    def n(self) -> int:
        return len(self.values) - 1

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)

    @property
    def minimum(self) -> float:
        """``L_n``, including ``S_0``."""
        return float(self.values.min())

    @property
    def maximum(self) -> float:
        """``M_n = max(S_1, ..., S_n)``; 0 for the empty walk."""
        if self.n == 0:
            return 0.0
        return float(self.values[1:].max())

    @property
    def argmin(self) -> int:
        """First index attaining ``L_n``."""
        return int(np.argmin(self.values))

    def min_from(self, k: int) -> float:
        """``L_{k,n} = min_{k <= j <= n} S_j``."""
        return float(self.values[k:].min())

    def post_min(self, k: int) -> float:
        """``L^_{k,n} = min_{0 <= j <= n-k} (S_{k+j} - S_k)``."""
        return float(self.values[k:].min() - self.values[k])

    def statistics(self) -> PathStatistics:
        return PathStatistics(self.minimum, self.maximum, self.argmin)


def path_statistics(path: WalkPath) -> PathStatistics:
    return path.statistics()


def simulate_walks(
    law: IncrementLaw, n: int, size: int, rng: np.random.Generator
) -> np.ndarray:
    """``(size, n + 1)`` array of independent walk paths."""
    if n < 0:
        raise DomainError(f"n must be >= 0, got {n}")
    paths = np.zeros((size, n + 1))
    if n:
        np.cumsum(sample_increments(law, (size, n), rng), axis=1, out=paths[:, 1:])
    return paths


def simulate_walk(law: IncrementLaw, n: int, rng: np.random.Generator) -> WalkPath:
    return WalkPath(simulate_walks(law, n, 1, rng)[0])


def _lattice_cdf(m: np.ndarray, s: np.ndarray) -> np.ndarray:
    """``P(S_m <= s)`` for the simple walk."""
    k = np.floor((s + m) / 2.0)
    inside = np.clip(k, 0, np.maximum(m, 0))
    cdf = special.bdtr(inside, m, 0.5)
    cdf = np.where(k < 0, 0.0, cdf)
    return np.where(k >= m, 1.0, cdf)


def lattice_min_tail(m: ArrayLike, a: ArrayLike) -> np.ndarray:
    """Exact ``P(L_m >= -a)`` for the simple walk by reflection.

    ``P(L_m >= -a) = 1 - P(S_m <= -a-1) - P(S_m <= -a-2)`` for integer
    ``a >= 0``; negative ``a`` gives 0.
    """
    m_arr = np.asarray(m, dtype=float)
    a_arr = np.floor(np.asarray(a, dtype=float))
    value = 1.0 - _lattice_cdf(m_arr, -a_arr - 1.0) - _lattice_cdf(m_arr, -a_arr - 2.0)
    value = np.where(a_arr < 0, 0.0, value)
    return np.clip(value, 0.0, 1.0)


def lattice_pmf(m: int, y: ArrayLike) -> np.ndarray:
    """``P(S_m = y)`` for the simple walk."""
    y_arr = np.asarray(y, dtype=float)
    k = (y_arr + m) / 2.0
    ok = (k == np.floor(k)) & (k >= 0) & (k <= m)
    k = np.where(ok, k, 0.0)
    log_pmf = (
        special.gammaln(m + 1.0)
        - special.gammaln(k + 1.0)
        - special.gammaln(m - k + 1.0)
        - m * math.log(2.0)
    )
    return np.where(ok, np.exp(log_pmf), 0.0)


def lattice_meander_pmf(n: int, r: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """Support and joint probabilities ``P(S_n = y, L_n >= -r)``."""
    level = math.floor(r)
    y = np.arange(-level, n + 1, dtype=float)
    y = y[((y + n) % 2) == 0]
    reflected = -y - 2.0 * level - 2.0
    probs = lattice_pmf(n, y) - lattice_pmf(n, reflected)
    return y, np.clip(probs, 0.0, None)
