"""Online conformal methods: CP, LCP, ACI, DtACI and OLCP.

Every method owns a rolling :class:`CalibrationWindow` and is driven one
observation at a time through :meth:`OnlineMethod.step`. The interval is
issued from the window *before* the outcome is seen; the realized score
enters the window afterwards. A step with an empty window issues nothing
and returns ``None``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .localization import CalibrationWindow, kernel_weights, standardized_distances
from .quantiles import corrected_rank, pinball_loss, sorted_lower_quantile

DTACI_GRID = (0.25, 0.5, 0.75, 1.0, 1.25, 1.5)
DTACI_I_SIZE = 500


@dataclass
class StepRecord:
    """One issued interval and everything the online update produced."""

    t: int
    method: str
    lower: float
    upper: float
    covered: bool
    alpha_t: Optional[float] = None
    L_t: Optional[float] = None
    U_t: Optional[float] = None
    queue: Optional[float] = None
    expert: Optional[int] = None
    expert_errs: Optional[tuple] = None

    @property
    def size(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class PredictionInterval:
    center: float
    radius: float

    def __post_init__(self):
        if not (self.radius >= 0 and math.isfinite(self.radius)):
            raise ValueError(f"radius must be finite and nonnegative, got {self.radius}")

    @property
    def lower(self) -> float:
        return self.center - self.radius

    @property
    def upper(self) -> float:
        return self.center + self.radius

    @property
    def size(self) -> float:
        return self.upper - self.lower

    def covers_score(self, score: float) -> bool:
        # closed interval
        return score <= self.radius


@dataclass(frozen=True)
class AciState:
    alpha_t: float
    gamma: float
    alpha_target: float


def project_level(z: float) -> tuple[float, float, float]:
    """Project ``z`` onto [0, 1]; return ``(projected, L, U)`` with ``L = (-z)+`` and ``U = (z-1)+``."""
    L = -z if z < 0.0 else 0.0
    U = z - 1.0 if z > 1.0 else 0.0
    return min(max(z, 0.0), 1.0), L, U


def aci_level_update(state: AciState, err: int) -> tuple[AciState, float, float]:
    """Projected ACI/OLCP level step. Returns the new state and the clipped amounts (L, U)."""
    if err not in (0, 1):
        raise ValueError("err must be 0 or 1")
    z = state.alpha_t + state.gamma * (state.alpha_target - err)
    alpha_next, L, U = project_level(z)
    return replace(state, alpha_t=alpha_next), L, U


def default_gamma(T_test: int) -> float:
    if T_test < 1:
        raise ValueError("T_test must be >= 1")
    return 1.0 / (2.0 * math.sqrt(T_test))


@dataclass
class BoundaryLedger:
    """Running sums for the projected-update coverage identity.

    After every step the residual of

        sum(err - alpha) - (alpha_1 - alpha_{T+1}) / gamma - sum(L - U) / gamma

    is recomputed; ``max_abs_residual`` is the worst value over all prefixes.
    """

    gamma: float
    alpha_target: float
    alpha_1: float
    alpha_last: float = field(default=None)
    cum_L: float = 0.0
    cum_U: float = 0.0
    cum_err: int = 0
    steps: int = 0
    max_abs_residual: float = 0.0

    def __post_init__(self):
        if self.alpha_last is None:
            self.alpha_last = self.alpha_1

    def record(self, err: int, L: float, U: float, alpha_next: float) -> None:
        self.cum_err += int(err)
        self.cum_L += L
        self.cum_U += U
        self.steps += 1
        self.alpha_last = alpha_next
        self.max_abs_residual = max(self.max_abs_residual, abs(self.residual()))

    def residual(self) -> float:
        lhs = self.cum_err - self.steps * self.alpha_target
        rhs = (self.alpha_1 - self.alpha_last) / self.gamma + (self.cum_L - self.cum_U) / self.gamma
        return lhs - rhs

    @property
    def miscoverage(self) -> float:
        return self.cum_err / self.steps if self.steps else float("nan")

    def lower_diagnostic(self) -> float:
        """``sum(L) / (T * gamma)``."""
        return self.cum_L / (self.steps * self.gamma) if self.steps else 0.0

    def upper_diagnostic(self) -> float:
        """``sum(U) / (T * gamma)``."""
        return self.cum_U / (self.steps * self.gamma) if self.steps else 0.0

    def deviation_bound(self) -> float:
        """Pathwise bound on ``|mean err - alpha|``."""
        return (1.0 + self.cum_L + self.cum_U) / (self.steps * self.gamma)


class OnlineMethod:
    """Base class: window bookkeeping, scoring, and the skip rule."""

    name = "base"

    def __init__(self, alpha: float, window: int, dim: int):
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        self.alpha = alpha
        self.window = CalibrationWindow(window, dim)

    def step(self, t: int, x, y_hat: float, y: float) -> Optional[StepRecord]:
        score = abs(y - y_hat)
        if len(self.window) == 0:
            self.window.push(x, score)
            return None
        rec = self._issue_and_update(t, np.atleast_1d(np.asarray(x, dtype=float)), y_hat, score)
        self.window.push(x, score)
        return rec

    def _issue_and_update(self, t, x, y_hat, score) -> StepRecord:
        raise NotImplementedError

    def _record(self, t, y_hat, radius, score, **extra) -> StepRecord:
        iv = PredictionInterval(y_hat, radius)
        return StepRecord(t, self.name, iv.lower, iv.upper, iv.covers_score(score), **extra)


class SplitCP(OnlineMethod):
    """Rolling split conformal with the finite-sample corrected rank."""

    name = "CP"

    def radius(self, x=None) -> float:
        s = self.window.scores
        k = corrected_rank(s.size, self.alpha)
        return float(np.partition(s, k - 1)[k - 1])

    def _issue_and_update(self, t, x, y_hat, score):
        return self._record(t, y_hat, self.radius(), score)


class LocalizedMethodMixin:
    """Sorted window scores plus standardized distances to the query covariate."""

    def _sorted_view(self, x):
        d = standardized_distances(self.window.covariates, x)
        order = np.argsort(self.window.scores, kind="stable")
        return self.window.scores[order], d[order]

    @staticmethod
    def _localized_radius(sorted_scores, sorted_dist, h, level):
        w = kernel_weights(sorted_dist, h)
        return sorted_lower_quantile(sorted_scores, np.cumsum(w), level)


class LCP(LocalizedMethodMixin, OnlineMethod):
    """Localized conformal at the fixed level ``1 - alpha`` (no rank correction)."""

    name = "LCP"

    def __init__(self, alpha, window, dim, h):
        super().__init__(alpha, window, dim)
        self.h = h

    def radius(self, x) -> float:
        s, d = self._sorted_view(np.atleast_1d(np.asarray(x, dtype=float)))
        return self._localized_radius(s, d, self.h, 1.0 - self.alpha)

    def _issue_and_update(self, t, x, y_hat, score):
        return self._record(t, y_hat, self.radius(x), score)


class _AdaptiveLevelMethod(OnlineMethod):
    """Shared projected level recursion with a boundary ledger."""

    def __init__(self, alpha, window, dim, gamma, alpha_1=None):
        super().__init__(alpha, window, dim)
        if not gamma > 0:
            raise ValueError("gamma must be positive")
        a1 = alpha if alpha_1 is None else alpha_1
        self.state = AciState(a1, gamma, alpha)
        self.ledger = BoundaryLedger(gamma, alpha, a1)

    def radius_at(self, x, level_alpha: float) -> float:
        raise NotImplementedError

    def _issue_and_update(self, t, x, y_hat, score):
        a_t = self.state.alpha_t
        q = self.radius_at(x, a_t)
        err = int(score > q)
        self.state, L, U = aci_level_update(self.state, err)
        self.ledger.record(err, L, U, self.state.alpha_t)
        return self._record(t, y_hat, q, score, alpha_t=a_t, L_t=L, U_t=U)


class ACI(_AdaptiveLevelMethod):
    """Projected ACI on the rolling unweighted corrected quantile."""

    name = "ACI"

    def radius_at(self, x, level_alpha):
        s = self.window.scores
        k = corrected_rank(s.size, level_alpha)
        return float(np.partition(s, k - 1)[k - 1])


class OLCP(LocalizedMethodMixin, _AdaptiveLevelMethod):
    """Online localized conformal: localized quantile at level ``1 - alpha_t``."""

    name = "OLCP"

    def __init__(self, alpha, window, dim, gamma, h, alpha_1=None):
        super().__init__(alpha, window, dim, gamma, alpha_1)
        self.h = h

    def radius_at(self, x, level_alpha):
        s, d = self._sorted_view(x)
        return self._localized_radius(s, d, self.h, 1.0 - level_alpha)


def dtaci_parameters(alpha: float, I_size: int = DTACI_I_SIZE, n_experts: int = len(DTACI_GRID)):
    """Learning rate and mixing mass for DtACI's expert weights."""
    denom = ((1 - alpha) ** 2 * alpha**3 + alpha**2 * (1 - alpha) ** 3) / 3.0
    eta = math.sqrt(3.0 / I_size) * math.sqrt((math.log(I_size * n_experts) + 2.0) / denom)
    sigma = 1.0 / (2.0 * I_size)
    return eta, sigma


def dtaci_weight_update(weights, losses, eta: float, sigma: float) -> np.ndarray:
    """Exponential weights on ``losses`` followed by fixed-share mixing with mass ``sigma`` per expert."""
    w_bar = np.asarray(weights) * np.exp(-eta * np.asarray(losses))
    K = w_bar.size
    w = (1.0 - sigma * K) * w_bar / w_bar.sum() + sigma
    return w / w.sum()


@dataclass
class DtaciState:
    expert_levels: np.ndarray
    expert_weights: np.ndarray
    gammas: np.ndarray
    eta: float
    sigma: float

    @property
    def mixture_level(self) -> float:
        return float(self.expert_weights @ self.expert_levels)


class DtACI(OnlineMethod):
    """ACI experts over a step-size grid, mixed by exponential weights on the pinball loss.

    Weights follow a fixed-share recursion
    ``w <- (1 - sigma*K) * w_bar / sum(w_bar) + sigma`` with
    ``w_bar = w * exp(-eta * pinball(beta_t, alpha_r))``.
    """

    name = "DtACI"

    def __init__(self, alpha, window, dim, gamma0, grid=DTACI_GRID, I_size=DTACI_I_SIZE):
        super().__init__(alpha, window, dim)
        K = len(grid)
        eta, sigma = dtaci_parameters(alpha, I_size, K)
        if sigma * K >= 1:
            raise ValueError("mixing mass sigma*K must be < 1")
        self.state = DtaciState(
            expert_levels=np.full(K, alpha),
            expert_weights=np.full(K, 1.0 / K),
            gammas=np.asarray(grid, dtype=float) * gamma0,
            eta=eta,
            sigma=sigma,
        )

    def _radius(self, sorted_scores, level_alpha):
        k = corrected_rank(sorted_scores.size, level_alpha)
        return float(sorted_scores[k - 1])

    def _issue_and_update(self, t, x, y_hat, score):
        st = self.state
        s = np.sort(self.window.scores)
        a_mix = min(max(st.mixture_level, 0.0), 1.0)
        q = self._radius(s, a_mix)

        beta = float(np.mean(s >= score))
        losses = pinball_loss(beta, st.expert_levels, self.alpha)
        weights = dtaci_weight_update(st.expert_weights, losses, st.eta, st.sigma)

        errs = np.array([score > self._radius(s, a) for a in st.expert_levels], dtype=float)
        levels = np.clip(st.expert_levels + st.gammas * (self.alpha - errs), 0.0, 1.0)
        self.state = replace(st, expert_levels=levels, expert_weights=weights)
        return self._record(t, y_hat, q, score, alpha_t=a_mix)
