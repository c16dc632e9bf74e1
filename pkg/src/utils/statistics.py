"""Empirical CDFs, KS distances and (cluster) bootstrap intervals."""

import math
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from .errors import InputError

ArrayLike = Union[float, Sequence[float], np.ndarray]
Reference = Callable[[np.ndarray], np.ndarray]


class EmpiricalCDF:
    """Right-continuous (optionally weighted) empirical distribution function."""

    def __init__(self, values: ArrayLike, weights: Optional[ArrayLike] = None):
        values = np.asarray(values, dtype=float).ravel()
        if values.size == 0:
            raise InputError("empirical CDF needs at least one sample")
        if weights is None:
            weights = np.ones_like(values)
        weights = np.asarray(weights, dtype=float).ravel()
        if weights.shape != values.shape:
            raise InputError("values and weights differ in length")
        if np.any(weights < 0) or not weights.sum() > 0:
            raise InputError("weights must be nonnegative with positive total")

        order = np.argsort(values, kind="stable")
        self.order = order
        self.values = values[order]
        self.weights = weights[order]
        total = self.weights.sum()
        self._cumulative = np.cumsum(self.weights) / total
        self._cumulative[-1] = 1.0
        # Kish effective sample size
        self.effective_size = float(total ** 2 / np.sum(self.weights ** 2))

    def __len__(self) -> int:
        return len(self.values)

    def __call__(self, x: ArrayLike) -> np.ndarray:
        idx = np.searchsorted(self.values, np.asarray(x, dtype=float), side="right")
        return np.where(idx > 0, self._cumulative[np.maximum(idx - 1, 0)], 0.0)

    def left_limit(self, x: ArrayLike) -> np.ndarray:
        """``F(x-)``."""
        idx = np.searchsorted(self.values, np.asarray(x, dtype=float), side="left")
        return np.where(idx > 0, self._cumulative[np.maximum(idx - 1, 0)], 0.0)

    def survival(self, x: ArrayLike) -> np.ndarray:
        """``P(Y >= x)``."""
        return 1.0 - self.left_limit(x)

    def quantile(self, level: float) -> float:
        idx = int(np.searchsorted(self._cumulative, level, side="left"))
        return float(self.values[min(idx, len(self.values) - 1)])


@dataclass
class KSResult:
    """Sup-distance between an empirical CDF and a reference."""

    statistic: float
    sample_size: int
    reference: str
    threshold: Optional[float] = None
    passed: Optional[bool] = None
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    dkw_band: Optional[float] = None
    label: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def dkw_band(n: float, level: float = 0.95) -> float:
    """Dvoretzky-Kiefer-Wolfowitz half width at confidence ``level``."""
    return math.sqrt(math.log(2.0 / (1.0 - level)) / (2.0 * float(n)))


def _sup_distance(
    ecdf: EmpiricalCDF, reference: Reference, grid: Optional[np.ndarray]
) -> float:
    points = np.unique(ecdf.values)
    ref = np.asarray(reference(points), dtype=float)
    upper = np.abs(ecdf(points) - ref)
    lower = np.abs(ecdf.left_limit(points) - ref)
    distance = float(max(upper.max(), lower.max()))
    if grid is not None and len(grid):
        grid = np.asarray(grid, dtype=float)
        distance = max(
            distance, float(np.abs(ecdf(grid) - np.asarray(reference(grid))).max())
        )
    return min(distance, 1.0)


def ks_distance(
    ecdf: EmpiricalCDF,
    reference: Reference,
    reference_name: str = "reference",
    threshold: Optional[float] = None,
    grid: Optional[ArrayLike] = None,
    clusters: Optional[ArrayLike] = None,
    n_resamples: int = 0,
    level: float = 0.95,
    rng: Optional[np.random.Generator] = None,
) -> KSResult:
    """KS distance over the sample points and an optional reference grid.

    With ``n_resamples > 0`` a bootstrap interval is attached; ``clusters``
    switches it to resampling whole clusters (environments).
    """
    grid_arr = None if grid is None else np.asarray(grid, dtype=float)
    statistic = _sup_distance(ecdf, reference, grid_arr)
    result = KSResult(
        statistic=statistic,
        sample_size=len(ecdf),
        reference=reference_name,
        threshold=threshold,
        passed=None if threshold is None else statistic <= threshold,
        dkw_band=dkw_band(ecdf.effective_size, level),
    )
    if n_resamples > 0:
        values, weights = ecdf.values, ecdf.weights

        def resampled(idx: np.ndarray) -> float:
            return _sup_distance(
                EmpiricalCDF(values[idx], weights[idx]), reference, grid_arr
            )

        # ecdf storage is sorted, so clusters must be permuted alike
        cluster_arr = None
        if clusters is not None:
            raw = np.asarray(clusters).ravel()
            if raw.shape != ecdf.values.shape:
                raise InputError("cluster labels differ in length from the sample")
            cluster_arr = raw[ecdf.order]
        result.ci_low, result.ci_high = bootstrap_ci(
            np.arange(len(values)),
            clusters=cluster_arr,
            statistic=resampled,
            n_resamples=n_resamples,
            level=level,
            rng=rng,
        )
    return result


def ks_two_sample(first: ArrayLike, second: ArrayLike) -> float:
    """Two-sample KS statistic."""
    a = np.asarray(first, dtype=float)
    b = np.asarray(second, dtype=float)
    if a.size == 0 or b.size == 0:
        raise InputError("two-sample KS needs nonempty samples")
    return float(stats.ks_2samp(a, b).statistic)


def bootstrap_ci(
    values: ArrayLike,
    clusters: Optional[ArrayLike] = None,
    statistic: Optional[Callable[[np.ndarray], float]] = None,
    n_resamples: int = 1000,
    level: float = 0.95,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[float, float]:
    """Percentile bootstrap interval, resampling clusters when given.

    ``statistic`` receives the resampled values; the default is the mean,
    which is computed from per-cluster sums without materializing resamples.
    """
    data = np.asarray(values)
    if data.size == 0:
        raise InputError("bootstrap needs at least one value")
    rng = rng if rng is not None else np.random.default_rng()
    if clusters is None:
        labels = np.arange(len(data))
    else:
        labels = np.asarray(clusters).ravel()
        if labels.shape[0] != data.shape[0]:
            raise InputError("cluster labels differ in length from the values")
    _, inverse = np.unique(labels, return_inverse=True)
    n_clusters = int(inverse.max()) + 1
    draws = rng.integers(0, n_clusters, size=(n_resamples, n_clusters))

    if statistic is None:
        sums = np.bincount(inverse, weights=data.astype(float), minlength=n_clusters)
        counts = np.bincount(inverse, minlength=n_clusters).astype(float)
        estimates = sums[draws].sum(axis=1) / counts[draws].sum(axis=1)
    else:
        order = np.argsort(inverse, kind="stable")
        bounds = np.searchsorted(inverse[order], np.arange(n_clusters + 1))
        members = [order[bounds[c]:bounds[c + 1]] for c in range(n_clusters)]
        estimates = np.empty(n_resamples)
        for i, row in enumerate(draws):
            idx = np.concatenate([members[c] for c in row])
            estimates[i] = statistic(data[idx])

    tail = 0.5 * (1.0 - level)
    low, high = np.quantile(estimates, [tail, 1.0 - tail])
    return float(low), float(high)


def weighted_mean_se(
    values: ArrayLike, weights: Optional[ArrayLike] = None
) -> Tuple[float, float]:
    """Self-normalized mean and its delta-method standard error."""
    f = np.asarray(values, dtype=float).ravel()
    if f.size == 0:
        raise InputError("cannot average an empty sample")
    if weights is None:
        if f.size == 1:
            return float(f[0]), 0.0
        return float(f.mean()), float(f.std(ddof=1) / math.sqrt(f.size))
    w = np.asarray(weights, dtype=float).ravel()
    total = w.sum()
    if not total > 0:
        raise InputError("weights sum to zero")
    mean = float(np.dot(w, f) / total)
    se = float(math.sqrt(np.sum(w * w * (f - mean) ** 2)) / total)
    return mean, se
