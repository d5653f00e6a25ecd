"""Empirical score distributions and quantiles.

All quantiles are *lower* quantiles: the smallest atom score whose cumulative
weight reaches the requested fraction of the total mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# relative slack on cumulative-weight comparisons
CUM_SLACK = 1e-12


@dataclass(frozen=True)
class WeightedScoreDistribution:
    """Finite set of (score, weight) atoms.

    Atoms are stored sorted by score (stable), so repeated quantile queries
    on the same distribution only pay for the cumulative sum once.
    """

    scores: np.ndarray
    weights: np.ndarray
    total_weight: float = field(init=False)
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        if scores.shape != weights.shape:
            raise ValueError("scores and weights must have the same length")
        if np.isnan(scores).any():
            raise ValueError("NaN score")
        if not np.all(weights >= 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and nonnegative")
        order = np.argsort(scores, kind="stable")
        scores = scores[order]
        weights = weights[order]
        cum = np.cumsum(weights)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "_cum", cum)
        object.__setattr__(self, "total_weight", float(cum[-1]) if cum.size else 0.0)

    @classmethod
    def uniform(cls, scores) -> "WeightedScoreDistribution":
        scores = np.asarray(scores, dtype=float)
        return cls(scores, np.ones_like(scores))

    def __len__(self) -> int:
        return self.scores.size

    def normalized(self) -> "WeightedScoreDistribution":
        if self.total_weight <= 0:
            raise ValueError("cannot normalize a zero-mass distribution")
        return WeightedScoreDistribution(self.scores, self.weights / self.total_weight)

    def quantile(self, tau: float) -> float:
        return lower_quantile(tau, self)


def _check_level(tau: float) -> None:
    if not (0.0 <= tau <= 1.0):
        raise ValueError(f"invalid level: {tau!r}")


def sorted_lower_quantile(sorted_scores: np.ndarray, cum_weights: np.ndarray, tau: float) -> float:
    """Lower quantile from presorted scores and their cumulative weights.

    This is the hot path shared by every localized method; it performs no
    validation.
    """
    total = cum_weights[-1]
    if total <= 0.0:
        return math.inf
    target = tau * total - CUM_SLACK * total
    idx = int(np.searchsorted(cum_weights, target, side="left"))
    if idx >= sorted_scores.size:
        idx = sorted_scores.size - 1
    return float(sorted_scores[idx])


def lower_quantile(tau: float, dist: WeightedScoreDistribution) -> float:
    """Return ``inf{s : F(s) >= tau}`` for the atom distribution ``dist``.

    ``tau`` is read against ``dist.total_weight``, so unnormalized weights
    are fine. ``tau = 0`` returns the smallest atom score. A zero-mass
    distribution yields ``+inf``.
    """
    if len(dist) == 0:
        raise ValueError("empty distribution")
    _check_level(tau)
    return sorted_lower_quantile(dist.scores, dist._cum, tau)


def corrected_rank(r: int, alpha: float) -> int:
    """Finite-sample corrected rank ``ceil((1 - alpha)(r + 1))`` clipped to ``[1, r]``."""
    if r < 1:
        raise ValueError("r must be >= 1")
    # round first so that e.g. 0.9 * 10 = 9.000000000000002 does not ceil to 10
    k = math.ceil(round((1.0 - alpha) * (r + 1), 9))
    return min(max(k, 1), r)


def split_conformal_radius(scores, alpha: float) -> float:
    """k-th smallest score with ``k = corrected_rank(len(scores), alpha)``."""
    scores = np.asarray(scores, dtype=float).ravel()
    if scores.size == 0:
        raise ValueError("empty calibration window")
    k = corrected_rank(scores.size, alpha)
    return float(np.partition(scores, k - 1)[k - 1])


def pinball_loss(beta, theta, alpha: float):
    """``alpha * (beta - theta) - min(0, beta - theta)``; vectorizes over numpy inputs."""
    gap = np.subtract(beta, theta)
    out = alpha * gap - np.minimum(0.0, gap)
    return float(out) if np.ndim(out) == 0 else out
