"""The limit tail ``D(x)`` of the scaled log reduced population.

``D(x) = C0 E_meander[(B_1 - x)^g ; B_1 >= x] = E+[(1 - x/B_1)^g ; B_1 >= x]``
with ``g = alpha (1 - rho)``. For ``alpha = 2`` it equals ``2 (1 - Phi(x))``.
Sample bundles passed in here are already scaled by the norming constant.
"""

import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import integrate, stats

from ..utils.errors import DomainError, InputError
from ..utils.logger import get_logger
from ..utils.statistics import EmpiricalCDF, weighted_mean_se
from .assoc_walk import IncrementLaw, StableParams, norming_cn
from .conditioned_walk import HarmonicEstimate, lattice_V, sample_pplus_batch

logger = get_logger(__name__)

ArrayLike = Union[float, Sequence[float], np.ndarray]

ROUTE_BROWNIAN = "closed-form-brownian"
ROUTE_MEANDER = "meander-mc"
ROUTE_PPLUS = "pplus-mc"
ROUTE_INFIMUM = "pplus-infimum-mc"

BROWNIAN_C0 = math.sqrt(2.0 / math.pi)
DEFAULT_X_GRID = (0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0)


def d_brownian(x: ArrayLike) -> Union[float, np.ndarray]:
    """``2 (1 - Phi(x))``, the tail for Brownian increments."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0):
        raise DomainError("D is defined on x >= 0")
    value = 2.0 * stats.norm.sf(x_arr)
    return float(value) if value.ndim == 0 else value


def d_brownian_quadrature(x: float) -> float:
    """``C0 * int_x^inf (z - x) z exp(-z^2/2) dz`` with ``C0 = sqrt(2/pi)``."""
    if x < 0:
        raise DomainError("D is defined on x >= 0")
    value, _ = integrate.quad(
        lambda z: (z - x) * z * math.exp(-0.5 * z * z), x, math.inf, epsabs=1e-14, epsrel=1e-13
    )
    return BROWNIAN_C0 * value


def maxwell_cdf(z: ArrayLike) -> Union[float, np.ndarray]:
    """``P(|Z_3| <= z)`` for a standard 3-dimensional normal ``Z_3``."""
    value = stats.maxwell.cdf(np.asarray(z, dtype=float))
    return float(value) if np.ndim(value) == 0 else value


def bessel3_endpoints(size: int, rng: np.random.Generator) -> np.ndarray:
    """Time-1 values of a Bessel(3) process started at 0."""
    return np.linalg.norm(rng.standard_normal((size, 3)), axis=1)


@dataclass(frozen=True)
class LimitEstimate:
    x: float
    estimate: float
    se: float
    route: str

    def to_row(self) -> Dict[str, Any]:
        return {"x": self.x, "route": self.route, "estimate": self.estimate, "se": self.se}


def _as_samples(samples: ArrayLike) -> np.ndarray:
    values = np.asarray(samples, dtype=float).ravel()
    if values.size == 0:
        raise InputError("no endpoint samples")
    return values


def d_mc_meander(
    x: float, endpoint_samples: ArrayLike, C0: float, exponent: float = 1.0
) -> LimitEstimate:
    """``C0`` times the meander mean of ``(b - x)^exponent 1{b >= x}``."""
    if x < 0:
        raise DomainError("D is defined on x >= 0")
    b = _as_samples(endpoint_samples)
    above = b >= x
    terms = np.where(above, np.maximum(b - x, 0.0) ** exponent, 0.0)
    if not np.any(above):
        return LimitEstimate(float(x), 0.0, 0.0, ROUTE_MEANDER)
    mean, se = weighted_mean_se(terms)
    return LimitEstimate(float(x), C0 * mean, C0 * se, ROUTE_MEANDER)


def d_mc_pplus(
    x: float,
    endpoint_samples: ArrayLike,
    weights: Optional[ArrayLike] = None,
    exponent: float = 1.0,
) -> LimitEstimate:
    """Self-normalized ``P+`` mean of ``(1 - x/b)^exponent 1{b >= x}``."""
    if x < 0:
        raise DomainError("D is defined on x >= 0")
    b = _as_samples(endpoint_samples)
    if x == 0:
        return LimitEstimate(0.0, 1.0, 0.0, ROUTE_PPLUS)
    above = b >= x
    safe = np.where(above, b, 1.0)
    terms = np.where(above, np.maximum(1.0 - x / safe, 0.0) ** exponent, 0.0)
    mean, se = weighted_mean_se(terms, weights)
    return LimitEstimate(float(x), mean, se, ROUTE_PPLUS)


def t_small_cdf(
    z: float, endpoint_samples: ArrayLike, weights: Optional[ArrayLike] = None
) -> LimitEstimate:
    """Weighted empirical ``P+(B_1 <= z)``."""
    b = _as_samples(endpoint_samples)
    indicator = (b <= z).astype(float)
    mean, se = weighted_mean_se(indicator, weights)
    return LimitEstimate(float(z), mean, se, ROUTE_PPLUS)


@dataclass(frozen=True, eq=False)
class InfimumBundle:
    """``P+`` paths of length ``2p`` reduced to what the infimum route needs.

    ``minima`` is the minimum over steps ``p..2p`` and ``endpoints`` the value
    at ``2p``, both unscaled.
    """

    minima: np.ndarray
    endpoints: np.ndarray
    weights: np.ndarray
    c_p: float
    lattice: bool


def pplus_infimum_bundle(
    law: IncrementLaw,
    p: int,
    size: int,
    rng: np.random.Generator,
    V: Optional[HarmonicEstimate] = None,
) -> InfimumBundle:
    batch = sample_pplus_batch(0.0, 2 * p, law, V, size, rng)
    return InfimumBundle(
        minima=batch.paths[:, p:].min(axis=1),
        endpoints=batch.endpoints,
        weights=batch.weights,
        c_p=norming_cn(law, p),
        lattice=law.is_lattice,
    )


def d_mc_pplus_infimum(x: float, bundle: InfimumBundle) -> LimitEstimate:
    """Fraction of ``P+`` continuations whose minimum after time ``p`` stays above ``x c_p``.

    For the simple walk the horizon beyond ``2p`` is closed exactly: from
    ``y`` the ``P+`` chain never drops below level ``a`` with probability
    ``1 - a / (y + 1)``.
    """
    if x < 0:
        raise DomainError("D is defined on x >= 0")
    level = x * bundle.c_p
    kept = bundle.minima >= level
    terms = kept.astype(float)
    if bundle.lattice:
        a = math.ceil(level)
        terms = terms * np.clip(1.0 - a / lattice_V(bundle.endpoints), 0.0, 1.0)
    mean, se = weighted_mean_se(terms, bundle.weights)
    return LimitEstimate(float(x), mean, se, ROUTE_INFIMUM)


@dataclass(frozen=True, eq=False)
class LimitLawSpec:
    """``D`` for one parameter set, evaluated by one route."""

    alpha: float
    beta: float
    rho: float
    C0: float
    route: str
    endpoints: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    infimum: Optional[InfimumBundle] = None

    def __post_init__(self) -> None:
        if self.route in (ROUTE_MEANDER, ROUTE_PPLUS) and self.endpoints is None:
            raise InputError(f"route {self.route} needs endpoint samples")
        if self.route == ROUTE_INFIMUM and self.infimum is None:
            raise InputError("the infimum route needs a path bundle")

    @classmethod
    def brownian(cls) -> "LimitLawSpec":
        return cls(2.0, 0.0, 0.5, BROWNIAN_C0, ROUTE_BROWNIAN)

    @classmethod
    def from_meander(
        cls, params: StableParams, C0: float, endpoints: ArrayLike
    ) -> "LimitLawSpec":
        return cls(params.alpha, params.beta, params.rho, C0, ROUTE_MEANDER, _as_samples(endpoints))

    @classmethod
    def from_pplus(
        cls,
        params: StableParams,
        endpoints: ArrayLike,
        weights: Optional[ArrayLike] = None,
        C0: float = math.nan,
    ) -> "LimitLawSpec":
        w = None if weights is None else np.asarray(weights, dtype=float)
        samples = _as_samples(endpoints)
        return cls(params.alpha, params.beta, params.rho, C0, ROUTE_PPLUS, samples, w)

    @classmethod
    def from_infimum(cls, params: StableParams, bundle: InfimumBundle) -> "LimitLawSpec":
        return cls(params.alpha, params.beta, params.rho, math.nan, ROUTE_INFIMUM, infimum=bundle)

    @property
    def exponent(self) -> float:
        return self.alpha * (1.0 - self.rho)

    def evaluate(self, x: float) -> LimitEstimate:
        if self.route == ROUTE_BROWNIAN:
            return LimitEstimate(float(x), float(d_brownian(x)), 0.0, self.route)
        if self.route == ROUTE_MEANDER:
            assert self.endpoints is not None
            return d_mc_meander(x, self.endpoints, self.C0, self.exponent)
        if self.route == ROUTE_PPLUS:
            assert self.endpoints is not None
            return d_mc_pplus(x, self.endpoints, self.weights, self.exponent)
        assert self.infimum is not None
        return d_mc_pplus_infimum(x, self.infimum)

    def reference(self) -> Callable[[np.ndarray], np.ndarray]:
        """``D`` as a vectorised callable (negative arguments give 1)."""
        if self.route == ROUTE_BROWNIAN:
            return lambda x: np.where(
                np.asarray(x) < 0, 1.0, 2.0 * stats.norm.sf(np.maximum(x, 0.0))
            )

        def tail(x: np.ndarray) -> np.ndarray:
            points = np.atleast_1d(np.asarray(x, dtype=float))
            values = [1.0 if v < 0 else self.evaluate(float(v)).estimate for v in points]
            return np.asarray(values).reshape(np.shape(x))

        return tail

    def t_small_reference(self) -> Callable[[np.ndarray], np.ndarray]:
        """Limit CDF of ``log Z_p / c_p`` given survival, ``P+(B_1 <= z)``."""
        if self.route == ROUTE_BROWNIAN:
            return lambda z: stats.maxwell.cdf(np.maximum(np.asarray(z, dtype=float), 0.0))
        if self.route != ROUTE_PPLUS:
            raise InputError(f"route {self.route} carries no P+ endpoint law")
        assert self.endpoints is not None
        ecdf = EmpiricalCDF(self.endpoints, self.weights)
        return ecdf

    def table(self, x_grid: Sequence[float] = DEFAULT_X_GRID) -> List[Dict[str, Any]]:
        return [self.evaluate(float(x)).to_row() for x in x_grid]
