"""
Risk sensitivity from evasive-behaviour features.

A multivariate Gaussian is fitted to the drivers' peak accelerations (and
optionally braking-initiation speed).  A driver's aggression score is the
Sigma^-1-weighted projection of their features onto the positive-acceleration
direction; its normal-CDF percentile gives the continuous sensitivity
R_s = 2p - 1 and a Low/Medium/High level by terciles.
"""

from __future__ import annotations
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.stats import norm

from utils.errors import SingularCovarianceError, ValidationError, require_finite
from utils.kinematics import ScenarioKind

logger = logging.getLogger(__name__)

DEFAULT_FEATURES: Tuple[str, ...] = ("a_x", "a_y")
ALL_FEATURES: Tuple[str, ...] = ("v_b", "a_x", "a_y")
# weight of each feature in the aggression direction
AGGRESSION_WEIGHTS: Dict[str, float] = {"a_x": 1.0, "a_y": 1.0, "v_b": 0.0}


@dataclass(frozen=True)
class BehaviorSample:
    v_b: float
    a_x: float
    a_y: float

    def __post_init__(self):
        require_finite(v_b=self.v_b, a_x=self.a_x, a_y=self.a_y)
        if min(self.v_b, self.a_x, self.a_y) < 0:
            raise ValidationError("behaviour magnitudes must be non-negative")

    def vector(self, features: Sequence[str] = DEFAULT_FEATURES) -> np.ndarray:
        return np.array([getattr(self, f) for f in features], dtype=float)


@dataclass(frozen=True, eq=False)
class MgdModel:
    mean: np.ndarray
    cov: np.ndarray
    n: int
    features: Tuple[str, ...] = DEFAULT_FEATURES

    @property
    def dim(self) -> int:
        return int(self.mean.size)

    @property
    def singular(self) -> bool:
        try:
            linalg.cholesky(self.cov, lower=True)
        except linalg.LinAlgError:
            return True
        return False

    def to_dict(self) -> dict:
        return {
            "features": list(self.features),
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
            "n": self.n,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MgdModel":
        try:
            mean = np.asarray(data["mean"], dtype=float)
            cov = np.asarray(data["cov"], dtype=float).reshape(mean.size, mean.size)
            features = tuple(data.get("features", DEFAULT_FEATURES))
            n = int(data.get("n", 0))
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"invalid model document: {e}") from e
        if len(features) != mean.size:
            raise ValidationError("feature names do not match the mean vector")
        if not np.allclose(cov, cov.T):
            raise ValidationError("covariance must be symmetric")
        return cls(mean, cov, n, features)


class SensitivityLevel(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


@dataclass(frozen=True)
class SensitivityAssignment:
    R_s: float
    level: SensitivityLevel
    percentile: float


def _ridge(cov: np.ndarray) -> float:
    return 1e-6 * max(float(np.trace(cov)) / max(cov.shape[0], 1), 1.0)


def _cholesky(cov: np.ndarray) -> np.ndarray:
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as e:
        raise SingularCovarianceError("covariance is not positive definite", _ridge(cov)) from e


def _as_matrix(samples, dim: int) -> np.ndarray:
    try:
        x = np.atleast_2d(np.asarray(samples, dtype=float))
    except (TypeError, ValueError) as e:
        raise ValidationError(f"samples must form a numeric matrix: {e}") from e
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValidationError(f"samples have dimension {x.shape[1]}, model has {dim}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("samples must be finite")
    return x


def log_likelihood(samples, mu, cov) -> float:
    """Gaussian log-likelihood of the rows of ``samples``."""
    mu = np.asarray(mu, dtype=float)
    cov = np.asarray(cov, dtype=float)
    x = _as_matrix(samples, mu.size)
    if x.shape[0] < 1:
        raise ValidationError("need at least one sample")
    L = _cholesky(cov)
    n, m = x.shape
    resid = linalg.solve_triangular(L, (x - mu).T, lower=True)
    log_det = 2.0 * float(np.log(np.diag(L)).sum())
    return float(-0.5 * n * m * math.log(2 * math.pi) - 0.5 * n * log_det - 0.5 * float((resid ** 2).sum()))


def mgd_pdf(x, model: MgdModel) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.dim,):
        raise ValidationError(f"expected a vector of length {model.dim}")
    return math.exp(log_likelihood(x[None, :], model.mean, model.cov))


def fit_mgd(samples, features: Sequence[str] = DEFAULT_FEATURES, unbiased: bool = False) -> MgdModel:
    """
    Closed-form estimates: sample mean and the 1/N covariance.

    ``unbiased`` switches to the 1/(N-1) normalisation.  A singular result is
    returned (and logged) rather than raised; evaluating its density raises.
    """
    x = _as_matrix(samples, len(features))
    n = x.shape[0]
    if n < 2:
        raise ValidationError("need at least two samples to fit")
    mu = x.mean(axis=0)
    resid = x - mu
    cov = resid.T @ resid / (n - 1 if unbiased else n)
    model = MgdModel(mu, cov, n, tuple(features))
    if model.singular:
        logger.warning("fitted covariance is singular (n=%d); consider a ridge of %.3g", n, _ridge(cov))
    return model


def level_for(percentile: float) -> SensitivityLevel:
    if percentile < 1.0 / 3.0:
        return SensitivityLevel.LOW
    if percentile > 2.0 / 3.0:
        return SensitivityLevel.HIGH
    return SensitivityLevel.MEDIUM


def assignment_for(percentile: float) -> SensitivityAssignment:
    return SensitivityAssignment(2.0 * percentile - 1.0, level_for(percentile), percentile)


def aggression_score(x, model: MgdModel, weights: Optional[Dict[str, float]] = None) -> float:
    """
    Signed Mahalanobis score of ``x`` along the aggression direction.

    The weights apply to standardised features and the direction is
    Sigma^-1-weighted, so correlated features are not counted twice and the
    score is unchanged by a positive rescaling or shift of any feature.
    """
    weights = weights or AGGRESSION_WEIGHTS
    w = np.array([weights.get(f, 0.0) for f in model.features], dtype=float)
    if not np.any(w > 0) or np.any(w < 0):
        raise ValidationError("aggression weights must be non-negative with at least one positive")
    sd = np.sqrt(np.diag(model.cov))
    if np.any(sd <= 0):
        raise SingularCovarianceError("a feature has zero variance", _ridge(model.cov))
    v = w * sd
    a = linalg.cho_solve((_cholesky(model.cov), True), v)
    scale = math.sqrt(float(v @ a))
    return float(a @ (np.asarray(x, dtype=float) - model.mean) / scale)


def classify_sensitivity(sample, model: MgdModel, weights: Optional[Dict[str, float]] = None) -> SensitivityAssignment:
    x = sample.vector(model.features) if isinstance(sample, BehaviorSample) else np.asarray(sample, dtype=float)
    return assignment_for(float(norm.cdf(aggression_score(x, model, weights))))


def scenario_population_fit(trials: Iterable, kind, features: Sequence[str] = DEFAULT_FEATURES,
                            unbiased: bool = False) -> MgdModel:
    """Fit the per-scenario population model over the trials' behaviour features."""
    kind = ScenarioKind.parse(kind)
    rows = []
    for tr in trials:
        if tr.scenario is not kind:
            continue
        beh = tr.behavior()
        if beh is not None:
            rows.append(beh.vector(features))
    if len(rows) < 2:
        raise ValidationError(f"insufficient data: {len(rows)} {kind.value} trials with behaviour features")
    return fit_mgd(np.vstack(rows), features, unbiased)


def sample_population(model: MgdModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` feature vectors, folded to non-negative magnitudes."""
    return np.abs(rng.multivariate_normal(model.mean, model.cov, size=n))
