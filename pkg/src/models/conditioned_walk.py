"""Renewal functions and conditioned walks.

``V(x) = 1 + sum_k P(-S_k <= x, M_k < 0)`` for ``x >= 0`` and
``U(x) = 1 + sum_k P(-S_k > x, L_k >= 0)`` for ``x <= 0`` are harmonic for
the walk killed on leaving ``[0, inf)`` and ``(-inf, 0)`` respectively. They
define the Doob transforms ``P+`` and ``P-`` sampled here, and the constant
``C0 = lim V(c_n) P(L_n >= 0)``.

For the simple walk everything is exact: ``V(x) = 1 + floor(x)``,
``U(0) = 1`` and ``U(x) = 2 ceil(-x)`` for ``x < 0``.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..utils.errors import (
    BudgetExhaustedError,
    CoverageError,
    DomainError,
    EstimateQualityError,
)
from ..utils.logger import get_logger
from .assoc_walk import (
    IncrementLaw,
    WalkPath,
    lattice_meander_pmf,
    lattice_min_tail,
    norming_cn,
    sample_increments,
    simulate_walks,
)

logger = get_logger(__name__)

ArrayLike = Union[float, Sequence[float], np.ndarray]

SIDE_V = "V"
SIDE_U = "U"
EXACT_LATTICE = "lattice"
CHUNK_CELLS = 2 ** 22


def lattice_V(x: ArrayLike) -> np.ndarray:
    x_arr = np.asarray(x, dtype=float)
    return np.where(x_arr >= 0, 1.0 + np.floor(np.maximum(x_arr, 0.0)), 0.0)


def lattice_U(x: ArrayLike) -> np.ndarray:
    x_arr = np.asarray(x, dtype=float)
    inside = np.where(x_arr < 0, 2.0 * np.ceil(-np.minimum(x_arr, 0.0)), 0.0)
    return np.where(x_arr == 0, 1.0, inside)


@dataclass(frozen=True, eq=False)
class HarmonicEstimate:
    """Tabulated ``V`` (``side="V"``, grid in ``[0, inf)``) or ``U`` (grid in ``(-inf, 0]``)."""

    side: str
    grid: np.ndarray
    values: np.ndarray
    se: np.ndarray
    K: int
    n_mc: int
    exponent: float
    raw_violations: int = 0
    tail_share: Optional[np.ndarray] = None
    exact: Optional[str] = None

    @classmethod
    def exact_lattice(cls, grid: ArrayLike, side: str = SIDE_V) -> "HarmonicEstimate":
        points = np.asarray(grid, dtype=float)
        values = lattice_V(points) if side == SIDE_V else lattice_U(points)
        return cls(
            side=side,
            grid=points,
            values=values,
            se=np.zeros_like(points),
            K=0,
            n_mc=0,
            exponent=1.0,
            exact=EXACT_LATTICE,
        )

    def _depth(self, x: np.ndarray) -> np.ndarray:
        return x if self.side == SIDE_V else -x

    def interpolate(self, x: ArrayLike) -> np.ndarray:
        """Linear interpolation on the grid, power-law extrapolation beyond it.

        Points outside the function's domain evaluate to 0.
        """
        x_arr = np.asarray(x, dtype=float)
        if self.exact == EXACT_LATTICE:
            return lattice_V(x_arr) if self.side == SIDE_V else lattice_U(x_arr)
        depth = self._depth(x_arr)
        grid_depth = self._depth(self.grid)
        order = np.argsort(grid_depth)
        gd, gv = grid_depth[order], self.values[order]
        inside = np.interp(depth, gd, gv)
        top = gd[-1]
        beyond = gv[-1] * (np.maximum(depth, top) / top) ** self.exponent if top > 0 else gv[-1]
        value = np.where(depth > top, beyond, inside)
        return np.where(depth >= 0, value, 0.0)

    def interpolate_se(self, x: ArrayLike) -> np.ndarray:
        x_arr = np.asarray(x, dtype=float)
        depth = self._depth(x_arr)
        grid_depth = self._depth(self.grid)
        order = np.argsort(grid_depth)
        gd, gs, gv = grid_depth[order], self.se[order], self.values[order]
        inside = np.interp(depth, gd, gs)
        top = gd[-1]
        if top > 0 and gv[-1] > 0:
            scaled = gs[-1] * self.interpolate(x_arr) / gv[-1]
            inside = np.where(depth > top, scaled, inside)
        return np.where(depth >= 0, inside, 0.0)

    def rows(self) -> List[Dict[str, Any]]:
        return [
            {"x": float(x), "value": float(v), "se": float(s), "K": self.K, "n_mc": self.n_mc}
            for x, v, s in zip(self.grid, self.values, self.se)
        ]

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=["x", "value", "se", "K", "n_mc"])
            writer.writeheader()
            for row in self.rows():
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return path


def _estimate_renewal(
    law: IncrementLaw,
    grid: ArrayLike,
    K: int,
    n_mc: int,
    rng: np.random.Generator,
    side: str,
) -> HarmonicEstimate:
    points = np.asarray(grid, dtype=float)
    if points.ndim != 1 or points.size == 0:
        raise DomainError("grid must be a nonempty vector")
    if side == SIDE_V and np.any(points < 0):
        raise DomainError("V is estimated on x >= 0")
    if side == SIDE_U and np.any(points > 0):
        raise DomainError("U is estimated on x <= 0")
    if K < 1:
        raise DomainError(f"truncation depth must be >= 1, got {K}")
    if n_mc < 1000:
        raise DomainError(f"need at least 1000 paths, got {n_mc}")

    depth = np.abs(points)
    counts = np.zeros((n_mc, points.size))
    tail = np.zeros(points.size)
    tail_start = K - max(K // 10, 1)
    chunk = max(1, CHUNK_CELLS // K)

    for start in range(0, n_mc, chunk):
        size = min(chunk, n_mc - start)
        walk = np.cumsum(sample_increments(law, (size, K), rng), axis=1)
        if side == SIDE_V:
            alive = np.maximum.accumulate(walk, axis=1) < 0
            level = -walk
        else:
            alive = np.minimum.accumulate(walk, axis=1) >= 0
            level = walk
        for i, d in enumerate(depth):
            # V: -S_k <= x ; U: S_k < -x
            hit = alive & ((level <= d) if side == SIDE_V else (level < d))
            counts[start:start + size, i] = hit.sum(axis=1)
            tail[i] += hit[:, tail_start:].sum()

    values = 1.0 + counts.mean(axis=0)
    se = counts.std(axis=0, ddof=1) / math.sqrt(n_mc)
    anchor = depth == 0
    values[anchor] = 1.0
    se[anchor] = 0.0

    order = np.argsort(depth)
    monotone = values[order]
    steps = np.diff(monotone)
    joint = np.sqrt(se[order][1:] ** 2 + se[order][:-1] ** 2)
    raw_violations = int(np.sum(steps < -3.0 * joint))
    if raw_violations:
        logger.warning(f"{side} estimate: {raw_violations} monotonicity violations beyond 3 SE")
    projected = np.empty_like(values)
    projected[order] = np.maximum.accumulate(monotone)

    totals = counts.sum(axis=0)
    share = np.divide(tail, totals, out=np.zeros_like(tail), where=totals > 0)
    if np.any(share > 0.05):
        logger.warning(
            f"{side} estimate: last decade carries up to {share.max():.1%} of the series; "
            f"consider a larger K than {K}"
        )
    stable = law.stable
    exponent = stable.harmonic_exponent if side == SIDE_V else stable.alpha * stable.rho
    return HarmonicEstimate(
        side=side,
        grid=points,
        values=projected,
        se=se,
        K=K,
        n_mc=n_mc,
        exponent=exponent,
        raw_violations=raw_violations,
        tail_share=share,
    )


def estimate_V(
    law: IncrementLaw, grid: ArrayLike, K: int, n_mc: int, rng: np.random.Generator
) -> HarmonicEstimate:
    """Monte Carlo ``V`` from ``n_mc`` length-``K`` paths; ``V(0) = 1`` exactly."""
    return _estimate_renewal(law, grid, K, n_mc, rng, SIDE_V)


def estimate_U(
    law: IncrementLaw, grid: ArrayLike, K: int, n_mc: int, rng: np.random.Generator
) -> HarmonicEstimate:
    """Monte Carlo ``U`` on ``x <= 0``; ``U(0) = 1`` exactly."""
    return _estimate_renewal(law, grid, K, n_mc, rng, SIDE_U)


@dataclass(frozen=True, eq=False)
class HarmonicityResiduals:
    side: str
    grid: np.ndarray
    residuals: np.ndarray
    se: np.ndarray

    @property
    def z_scores(self) -> np.ndarray:
        safe = np.where(self.se > 0, self.se, 1.0)
        exact = np.where(self.residuals == 0, 0.0, np.inf)
        return np.where(self.se > 0, np.abs(self.residuals) / safe, exact)

    def passes(self, z: float = 3.0) -> bool:
        return bool(np.all(self.z_scores <= z))

    def rows(self) -> List[Dict[str, float]]:
        return [
            {"x": float(x), "residual": float(r), "se": float(s)}
            for x, r, s in zip(self.grid, self.residuals, self.se)
        ]


def verify_harmonicity(
    est: HarmonicEstimate, law: IncrementLaw, n_mc: int, rng: np.random.Generator
) -> HarmonicityResiduals:
    """Residuals of ``E[h(x + X); x + X in domain] - h(x)`` on the grid."""
    keep = (lambda y: y >= 0) if est.side == SIDE_V else (lambda y: y < 0)

    if law.is_lattice:
        residuals = []
        ses = []
        for x in est.grid:
            steps = np.array([x - 1.0, x + 1.0])
            mask = keep(steps)
            expected = 0.5 * np.sum(est.interpolate(steps) * mask)
            residuals.append(expected - float(est.interpolate(x)))
            ses.append(
                math.hypot(
                    float(est.interpolate_se(x)),
                    0.5 * float(np.sum(est.interpolate_se(steps) * mask)),
                )
            )
        return HarmonicityResiduals(est.side, est.grid, np.array(residuals), np.array(ses))

    pilot = sample_increments(law, 10000, rng)
    spread = float(np.quantile(pilot, 0.999) - np.quantile(pilot, 0.001))
    span = float(est.grid.max() - est.grid.min())
    if span < spread:
        raise CoverageError(
            f"grid span {span:.3g} is narrower than the increment spread {spread:.3g}"
        )

    draws = sample_increments(law, n_mc, rng)
    residuals = np.empty(est.grid.size)
    ses = np.empty(est.grid.size)
    for i, x in enumerate(est.grid):
        y = x + draws
        mask = keep(y)
        values = est.interpolate(y) * mask
        residuals[i] = values.mean() - float(est.interpolate(x))
        mc = values.std(ddof=1) / math.sqrt(n_mc)
        propagated = float(np.mean(est.interpolate_se(y) * mask))
        ses[i] = math.sqrt(mc ** 2 + float(est.interpolate_se(x)) ** 2 + propagated ** 2)
    return HarmonicityResiduals(est.side, est.grid, residuals, ses)


@dataclass(frozen=True, eq=False)
class ConditionedPathSample:
    """A conditioned path with its importance weight (1 for exact samplers)."""

    path: WalkPath
    weight: float
    descriptor: str


@dataclass(frozen=True, eq=False)
class ConditionedBatch:
    """``(size, n + 1)`` conditioned paths with weights."""

    paths: np.ndarray
    weights: np.ndarray
    descriptor: str

    @property
    def endpoints(self) -> np.ndarray:
        return self.paths[:, -1]

    def __len__(self) -> int:
        return self.paths.shape[0]

    def __getitem__(self, i: int) -> ConditionedPathSample:
        path = WalkPath(self.paths[i])
        return ConditionedPathSample(path, float(self.weights[i]), self.descriptor)


def _is_exact_lattice(law: IncrementLaw, h: Optional[HarmonicEstimate]) -> bool:
    return law.is_lattice and (h is None or h.exact == EXACT_LATTICE)


def _lattice_chain(
    x0: float, n: int, size: int, rng: np.random.Generator, side: str
) -> np.ndarray:
    h = lattice_V if side == SIDE_V else lattice_U
    inside = (lambda y: y >= 0) if side == SIDE_V else (lambda y: y < 0)
    paths = np.empty((size, n + 1))
    paths[:, 0] = x0
    position = np.full(size, float(x0))
    for k in range(1, n + 1):
        up = position + 1.0
        p_up = 0.5 * h(up) * inside(up) / h(position)
        position = np.where(rng.random(size) < p_up, up, position - 1.0)
        paths[:, k] = position
    return paths


def _weighted_proposal(
    x0: float,
    n: int,
    law: IncrementLaw,
    h: HarmonicEstimate,
    size: int,
    rng: np.random.Generator,
    side: str,
) -> Tuple[np.ndarray, np.ndarray]:
    paths = x0 + simulate_walks(law, n, size, rng)
    if side == SIDE_V:
        alive = np.all(paths[:, 1:] >= 0, axis=1)
    else:
        alive = np.all(paths[:, 1:] < 0, axis=1)
    start = float(h.interpolate(x0))
    if not start > 0:
        raise EstimateQualityError(f"harmonic estimate is {start} at the start point {x0}")
    visited = paths[alive]
    if visited.size:
        values = h.interpolate(visited)
        if np.any(values <= 0):
            raise EstimateQualityError("harmonic estimate is nonpositive at a visited point")
    weights = np.zeros(size)
    # the product of step weights telescopes to h(S_n)/h(x0) on survival
    weights[alive] = h.interpolate(paths[alive, -1]) / start
    return paths, weights


def sample_pplus_batch(
    x0: float,
    n: int,
    law: IncrementLaw,
    V: Optional[HarmonicEstimate],
    size: int,
    rng: np.random.Generator,
) -> ConditionedBatch:
    """``size`` paths of the walk under ``P+_{x0}``.

    The simple walk runs the exact chain; other laws use free proposals
    weighted by ``V(S_n) 1{L_n >= 0} / V(x0)`` (self-normalize downstream).
    """
    if x0 < 0:
        raise DomainError(f"P+ starts in [0, inf), got {x0}")
    descriptor = f"P+ from {x0}"
    if _is_exact_lattice(law, V):
        return ConditionedBatch(_lattice_chain(x0, n, size, rng, SIDE_V), np.ones(size), descriptor)
    if V is None:
        raise EstimateQualityError("a V estimate is required for non-lattice laws")
    paths, weights = _weighted_proposal(x0, n, law, V, size, rng, SIDE_V)
    return ConditionedBatch(paths, weights, descriptor)


def sample_pminus_batch(
    x0: float,
    n: int,
    law: IncrementLaw,
    U: Optional[HarmonicEstimate],
    size: int,
    rng: np.random.Generator,
) -> ConditionedBatch:
    """``size`` paths under ``P-_{x0}``; after step 0 they stay in ``(-inf, 0)``."""
    if x0 > 0:
        raise DomainError(f"P- starts in (-inf, 0], got {x0}")
    descriptor = f"P- from {x0}"
    if _is_exact_lattice(law, U):
        return ConditionedBatch(_lattice_chain(x0, n, size, rng, SIDE_U), np.ones(size), descriptor)
    if U is None:
        raise EstimateQualityError("a U estimate is required for non-lattice laws")
    paths, weights = _weighted_proposal(x0, n, law, U, size, rng, SIDE_U)
    return ConditionedBatch(paths, weights, descriptor)


def sample_Pplus(
    x0: float,
    n: int,
    law: IncrementLaw,
    V: Optional[HarmonicEstimate],
    rng: np.random.Generator,
) -> ConditionedPathSample:
    return sample_pplus_batch(x0, n, law, V, 1, rng)[0]


def sample_Pminus(
    x0: float,
    n: int,
    law: IncrementLaw,
    U: Optional[HarmonicEstimate],
    rng: np.random.Generator,
) -> ConditionedPathSample:
    return sample_pminus_batch(x0, n, law, U, 1, rng)[0]


@dataclass(frozen=True, eq=False)
class MeanderSample:
    """Accepted paths of a rejection sampler for ``{L_n >= -r}``."""

    n: int
    r: float
    endpoints: np.ndarray
    proposals: int
    paths: Optional[np.ndarray] = None

    @property
    def accepted(self) -> int:
        return int(self.endpoints.size)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposals

    @property
    def rate_se(self) -> float:
        p = self.acceptance_rate
        return math.sqrt(p * (1.0 - p) / self.proposals)

    @property
    def walk_paths(self) -> List[WalkPath]:
        if self.paths is None:
            return []
        return [WalkPath(row) for row in self.paths]


def sample_conditioned_min(
    n: int,
    r: float,
    law: IncrementLaw,
    rng: np.random.Generator,
    budget: int,
    target: Optional[int] = None,
    keep_paths: bool = True,
) -> MeanderSample:
    """Rejection sampler for ``{L_n >= -r}``.

    Proposes up to ``budget`` free paths (stopping early once ``target``
    acceptances are collected); the acceptance rate estimates ``P(L_n >= -r)``.
    """
    if r < 0:
        raise DomainError(f"r must be >= 0, got {r}")
    if budget < 1:
        raise DomainError(f"budget must be >= 1, got {budget}")
    chunk = max(1, min(budget, CHUNK_CELLS // max(n, 1)))
    endpoints: List[np.ndarray] = []
    kept: List[np.ndarray] = []
    proposals = 0
    accepted = 0
    while proposals < budget and (target is None or accepted < target):
        size = min(chunk, budget - proposals)
        paths = simulate_walks(law, n, size, rng)
        ok = paths.min(axis=1) >= -r
        endpoints.append(paths[ok, -1])
        if keep_paths:
            kept.append(paths[ok])
        proposals += size
        accepted += int(ok.sum())
    if accepted == 0:
        bound = 3.0 / proposals
        raise BudgetExhaustedError(
            f"no path with L_{n} >= {-r} in {proposals} proposals", rate_upper_bound=bound
        )
    logger.debug(f"conditioned-minimum sampler: {accepted}/{proposals} accepted at n={n}")
    return MeanderSample(
        n=n,
        r=r,
        endpoints=np.concatenate(endpoints),
        proposals=proposals,
        paths=np.concatenate(kept) if keep_paths else None,
    )


def lattice_meander_endpoints(
    n: int, r: float, size: int, rng: np.random.Generator
) -> np.ndarray:
    """Exact draws of ``S_n`` given ``L_n >= -r`` for the simple walk."""
    support, probs = lattice_meander_pmf(n, r)
    return rng.choice(support, size=size, p=probs / probs.sum())


def lattice_conditioned_paths(
    n: int, r: float, size: int, rng: np.random.Generator
) -> np.ndarray:
    """Exact simple-walk paths given ``{L_n >= -r}``.

    Runs the finite-horizon transform with ``h(m, y) = P(y + L_m >= -r)``.
    """
    level = math.floor(r)
    paths = np.zeros((size, n + 1))
    position = np.zeros(size)
    for k in range(1, n + 1):
        remaining = n - k
        here = lattice_min_tail(remaining + 1, position + level)
        up = lattice_min_tail(remaining, position + 1.0 + level)
        p_up = 0.5 * up / here
        position = np.where(rng.random(size) < p_up, position + 1.0, position - 1.0)
        paths[:, k] = position
    return paths


@dataclass(frozen=True)
class MinimumRatioRow:
    r: float
    tail: float
    ratio: float
    bound_holds: bool


def minimum_below_ratio(
    n: int, r_values: Sequence[float], bound: float = 1.2
) -> List[MinimumRatioRow]:
    """Exact ``P(L_n >= -r) / (V(r) P(L_n >= 0))`` for the simple walk."""
    base = float(lattice_min_tail(n, 0.0))
    rows = []
    for r in r_values:
        tail = float(lattice_min_tail(n, r))
        scale = float(lattice_V(r)) * base
        rows.append(MinimumRatioRow(float(r), tail, tail / scale, tail <= bound * scale))
    return rows


def pplus_weights_from_meander(endpoints: ArrayLike, exponent: float) -> np.ndarray:
    """Weights ``b^exponent`` turning meander endpoints into ``P+`` endpoints."""
    b = np.asarray(endpoints, dtype=float)
    return np.where(b > 0, np.maximum(b, 0.0) ** exponent, 0.0)


@dataclass
class AsymptoticConstants:
    """``C0`` by two routes with their plateau sequence."""

    route1: float
    route1_se: float
    route2: float
    route2_se: float
    window: List[int]
    sequence: List[Dict[str, float]] = field(default_factory=list)
    consistent: bool = True

    @property
    def ratio(self) -> float:
        return self.route1 / self.route2

    def to_dict(self) -> Dict[str, Any]:
        return {
            "C0_route1": self.route1,
            "C0_route1_se": self.route1_se,
            "C0_route2": self.route2,
            "C0_route2_se": self.route2_se,
            "route_ratio": self.ratio,
            "plateau_window": self.window,
            "consistent": self.consistent,
            "sequence": self.sequence,
        }


def estimate_C0(
    law: IncrementLaw,
    n_grid: Sequence[int],
    rng: np.random.Generator,
    V: Optional[HarmonicEstimate] = None,
    n_endpoints: int = 10000,
    budget: int = 2_000_000,
    window: int = 3,
) -> AsymptoticConstants:
    """``C0`` by plateau of ``V(c_n) P(L_n >= 0)`` and by the meander moment.

    The plateau is the average over the last ``window`` grid points; route 2
    is ``1 / E[(S_n / c_n)^{alpha(1-rho)} | L_n >= 0]`` at the largest ``n``.
    """
    ns = sorted(int(n) for n in n_grid)
    exact = law.is_lattice
    if not exact and V is None:
        raise EstimateQualityError("a V estimate is required for non-lattice laws")
    gamma = law.stable.harmonic_exponent

    sequence = []
    for n in ns:
        c_n = norming_cn(law, n)
        if exact:
            tail, tail_se = float(lattice_min_tail(n, 0.0)), 0.0
            v, v_se = float(lattice_V(c_n)), 0.0
        else:
            assert V is not None
            sample = sample_conditioned_min(n, 0.0, law, rng, budget, keep_paths=False)
            tail, tail_se = sample.acceptance_rate, sample.rate_se
            v, v_se = float(V.interpolate(c_n)), float(V.interpolate_se(c_n))
        value = v * tail
        se = math.hypot(v * tail_se, tail * v_se)
        sequence.append({"n": n, "c_n": c_n, "value": value, "se": se})

    last = sequence[-max(1, min(window, len(sequence))):]
    values = np.array([row["value"] for row in last])
    ses = np.array([row["se"] for row in last])
    route1 = float(values.mean())
    spread = values.std(ddof=1) / math.sqrt(len(values)) if len(values) > 1 else 0.0
    route1_se = float(math.sqrt(np.sum(ses ** 2) / len(values) ** 2 + spread ** 2))

    n_top = ns[-1]
    c_top = norming_cn(law, n_top)
    if exact:
        endpoints = lattice_meander_endpoints(n_top, 0.0, n_endpoints, rng)
    else:
        endpoints = sample_conditioned_min(
            n_top, 0.0, law, rng, budget, target=n_endpoints, keep_paths=False
        ).endpoints
    moments = (np.maximum(endpoints, 0.0) / c_top) ** gamma
    moment = float(moments.mean())
    moment_se = float(moments.std(ddof=1) / math.sqrt(moments.size))
    route2 = 1.0 / moment
    route2_se = moment_se / moment ** 2

    joint = math.hypot(route1_se, route2_se)
    consistent = abs(route1 - route2) <= 3.0 * joint
    if not consistent:
        logger.warning(
            f"C0 routes disagree: {route1:.4f} vs {route2:.4f} (joint SE {joint:.4f})"
        )
    return AsymptoticConstants(
        route1=route1,
        route1_se=route1_se,
        route2=route2,
        route2_se=route2_se,
        window=[int(row["n"]) for row in last],
        sequence=sequence,
        consistent=consistent,
    )
