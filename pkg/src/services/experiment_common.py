"""Pieces shared by all experiment runners."""

from dataclasses import dataclass, field
from typing import Any, Dict, List

import numpy as np

from ..config import ExperimentConfig
from ..models.assoc_walk import IncrementLaw, norming_cn
from ..models.conditioned_walk import estimate_V, sample_pplus_batch
from ..models.limit_law import LimitLawSpec
from ..models.offspring_env import EnvironmentModel
from ..utils.logger import get_logger
from ..utils.rng import make_stream
from ..utils.statistics import KSResult

logger = get_logger(__name__)

TOLERANCE_NOTE = (
    "Limits are proved without rates; thresholds are engineering choices sized "
    "against known-correct oracles."
)


@dataclass
class ExperimentResult:
    """Outcome of one experiment: named checks, metrics and output tables."""

    name: str
    checks: Dict[str, bool] = field(default_factory=dict)
    metrics: Dict[str, Any] = field(default_factory=dict)
    tables: Dict[str, List[Dict[str, Any]]] = field(default_factory=dict)
    ks: List[KSResult] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def check(self, name: str, ok: Any) -> bool:
        self.checks[name] = bool(ok)
        if not ok:
            logger.info(f"{self.name}: check '{name}' failed")
        return bool(ok)

    def summary(self, cfg: ExperimentConfig) -> Dict[str, Any]:
        return {
            "experiment": self.name,
            "passed": self.passed,
            "checks": self.checks,
            "metrics": self.metrics,
            "ks": [k.to_dict() for k in self.ks],
            "warnings": self.warnings,
            "tolerances": TOLERANCE_NOTE,
            "config": cfg.to_dict(),
        }


def environment_model(cfg: ExperimentConfig) -> EnvironmentModel:
    return EnvironmentModel.from_descriptor(cfg.environment)


def increment_law(cfg: ExperimentConfig) -> IncrementLaw:
    return IncrementLaw.from_descriptor(cfg.environment)


def reference_limit_law(law: IncrementLaw, cfg: ExperimentConfig) -> LimitLawSpec:
    """``D`` for the attracting stable law of ``law``.

    Closed form for ``alpha = 2``; otherwise ``P+`` endpoints of length
    ``cfg.truncation`` scaled by their norming constant.
    """
    params = law.stable
    if params.alpha == 2.0:
        return LimitLawSpec.brownian()
    rng = make_stream(cfg.seed, cfg.name, "reference")
    length = cfg.truncation
    V = None
    if not law.is_lattice:
        scale = norming_cn(law, length)
        grid = np.linspace(0.0, 4.0 * scale, 33)
        V = estimate_V(law, grid, cfg.truncation, cfg.n_mc, rng)
    batch = sample_pplus_batch(0.0, length, law, V, cfg.n_mc, rng)
    c = norming_cn(law, length)
    logger.info(f"reference limit law from {len(batch)} P+ paths of length {length}")
    return LimitLawSpec.from_pplus(params, batch.endpoints / c, batch.weights)


def d_reference_cdf(spec: LimitLawSpec):
    """CDF ``1 - D`` of the limit variable, ``0`` below the origin."""
    tail = spec.reference()
    return lambda x: np.where(np.asarray(x) < 0, 0.0, 1.0 - tail(np.maximum(x, 0.0)))
