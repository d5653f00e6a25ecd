"""Constrained expert aggregation over OLCP bandwidths.

``AdaHedge`` is the parameter-free learner on the simplex (FTRL form).
``ConstrainedHedge`` wraps it with a virtual queue on excess miscoverage and
feeds it the linearized surrogate loss. ``OLCPHedge`` runs a pool of OLCP
experts and delegates the choice among them to ``ConstrainedHedge``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .localization import kernel_weights, standardized_distances
from .online import OnlineMethod, project_level
from .quantiles import sorted_lower_quantile

HEDGE_GRID = (0.5, 0.75, 1.0, 1.25, 1.5)


class AdaHedge:
    """AdaHedge with learning-rate scale driven by cumulative mixability gaps.

    Parameters
    ----------
    K : int
        Number of experts (at least 2).
    alpha_ah : float, optional
        Scale divisor; defaults to ``sqrt(ln K)``.
    """

    def __init__(self, K: int, alpha_ah: float | None = None):
        if K < 2:
            raise ValueError("AdaHedge needs at least 2 experts")
        self.K = K
        self.alpha_ah = math.sqrt(math.log(K)) if alpha_ah is None else alpha_ah
        self.scale = 0.0
        self.theta = np.zeros(K)
        self.weights = np.full(K, 1.0 / K)
        self.t = 0

    def mixability_gap(self, xi: np.ndarray) -> float:
        p = self.weights
        mix_loss = float(xi @ p)
        if self.scale <= 0.0:
            # limit scale -> 0+: the mix loss tends to the best loss on the support of p
            delta = mix_loss - float(xi[p > 0].min())
        else:
            with np.errstate(divide="ignore"):
                logp = np.log(p)
            z = logp - xi / self.scale
            zmax = z.max()
            delta = self.scale * (zmax + math.log(np.exp(z - zmax).sum())) + mix_loss
        # nonnegative by Jensen; clip float noise
        return max(delta, 0.0)

    def update(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (self.K,):
            raise ValueError(f"loss vector must have length {self.K}")
        if not np.all(np.isfinite(xi)):
            raise ValueError("non-finite loss entry")
        delta = self.mixability_gap(xi)
        self.theta = self.theta - xi
        self.scale += delta / self.alpha_ah**2
        if self.scale > 0.0:
            z = self.theta / self.scale
            w = np.exp(z - z.max())
        else:
            w = (self.theta == self.theta.max()).astype(float)
        self.weights = w / w.sum()
        self.t += 1
        return self.weights


@dataclass(frozen=True)
class HedgeParameters:
    C_AH: float
    kappa: float
    lambda_pot: float
    V: float = 1.0


def hedge_parameters(K: int, T: int, G: float = 1.0) -> HedgeParameters:
    """Tuning that yields the size-regret and excess-miscoverage guarantees."""
    if K < 2 or T < 1 or not G > 0:
        raise ValueError("need K >= 2, T >= 1, G > 0")
    C_AH = 2.0 * math.sqrt(4.0 + math.log(K))
    return HedgeParameters(C_AH, 1.0 / (math.sqrt(2.0) * C_AH * G), 1.0 / (2.0 * math.sqrt(T)), 1.0)


def size_regret_bound(K: int, T: int, G: float = 1.0) -> float:
    return 4.0 * G * math.sqrt(2.0 * (4.0 + math.log(K)) * T)


def violation_bound(K: int, T: int, G: float = 1.0, m: int | None = None) -> float:
    m = T if m is None else m
    return size_regret_bound(K, T, G) * math.log(2.0 + (2.0 + math.sqrt(2.0) / 2.0) * m)


def queue_bound(lambda_pot: float, m: int) -> float:
    return math.log(2.0 + (2.0 + math.sqrt(2.0) / 2.0) * m) / lambda_pot


def normalize_sizes(widths) -> np.ndarray:
    """Min-max normalize expert widths to [0, 1]; all-equal widths map to zeros."""
    w = np.asarray(widths, dtype=float)
    lo, hi = w.min(), w.max()
    if hi - lo <= 0.0:
        return np.zeros_like(w)
    return (w - lo) / (hi - lo)


def surrogate_gradient(sizes, errs, p, alpha, queue, params: HedgeParameters) -> np.ndarray:
    """Subgradient of the queue-weighted surrogate at ``p``.

    ``queue`` must already include this round's increment. At the kink
    ``<errs, p> = alpha`` the constraint term is dropped.
    """
    sizes = np.asarray(sizes, dtype=float)
    errs = np.asarray(errs, dtype=float)
    xi = params.V * params.kappa * sizes
    g = float(errs @ p) - alpha
    if g > 0.0:
        dphi = params.lambda_pot * math.exp(params.lambda_pot * queue)
        xi = xi + dphi * params.kappa * errs
    return xi


class ConstrainedHedge:
    """AdaHedge on surrogate losses with a virtual queue for excess miscoverage."""

    def __init__(self, K: int, T: int, alpha: float, G: float = 1.0):
        self.alpha = alpha
        self.G = G
        self.params = hedge_parameters(K, T, G)
        self.adahedge = AdaHedge(K)
        self.queue = 0.0

    @property
    def K(self) -> int:
        return self.adahedge.K

    @property
    def weights(self) -> np.ndarray:
        return self.adahedge.weights

    def update(self, sizes, errs) -> np.ndarray:
        """Consume one round of full-information feedback; return the loss fed to AdaHedge."""
        p = self.adahedge.weights
        g = float(np.asarray(errs, dtype=float) @ p) - self.alpha
        self.queue += self.params.kappa * max(g, 0.0)
        xi = surrogate_gradient(sizes, errs, p, self.alpha, self.queue, self.params)
        self.adahedge.update(xi)
        return xi


def sample_index(p: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from ``p`` using one uniform variate."""
    cdf = np.cumsum(p)
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(i, p.size - 1)


class OLCPHedge(OnlineMethod):
    """Pool of OLCP experts (one per bandwidth), each with its own level, chosen by ConstrainedHedge.

    Sizes fed to the meta-learner are the experts' widths, min-max
    normalized within the round, so ``G = 1``.
    """

    name = "OLCP-Hedge"

    def __init__(self, alpha, window, dim, gamma, bandwidths, T, rng: np.random.Generator, alpha_1=None):
        super().__init__(alpha, window, dim)
        self.bandwidths = np.asarray(bandwidths, dtype=float)
        K = self.bandwidths.size
        self.gamma = gamma
        self.levels = np.full(K, alpha if alpha_1 is None else alpha_1)
        self.meta = ConstrainedHedge(K, T, alpha, G=1.0)
        self.rng = rng

    def expert_radii(self, x, levels=None) -> np.ndarray:
        levels = self.levels if levels is None else levels
        order = np.argsort(self.window.scores, kind="stable")
        s = self.window.scores[order]
        d = standardized_distances(self.window.covariates, x)[order]
        return np.array([
            sorted_lower_quantile(s, np.cumsum(kernel_weights(d, h)), 1.0 - a)
            for h, a in zip(self.bandwidths, levels)
        ])

    def _issue_and_update(self, t, x, y_hat, score):
        p = self.meta.weights.copy()
        i = sample_index(p, self.rng)
        radii = self.expert_radii(x)
        errs = (score > radii).astype(float)
        self.meta.update(normalize_sizes(2.0 * radii), errs)
        a_i = float(self.levels[i])
        self.levels = np.array([
            project_level(a + self.gamma * (self.alpha - e))[0] for a, e in zip(self.levels, errs)
        ])
        return self._record(
            t, y_hat, float(radii[i]), score,
            alpha_t=a_i, queue=self.meta.queue, expert=i,
            expert_errs=tuple(int(e) for e in errs),
        )


def feasibility_diagnostic(err_matrix, alpha: float) -> tuple[float, np.ndarray]:
    """Worst-round infeasibility of the best fixed expert mixture.

    Solves ``min rho`` over ``u`` in the simplex and ``rho >= 0`` subject to
    ``<e_t, u> - alpha <= rho`` for every round. ``rho = 0`` means some fixed
    mixture meets the miscoverage target on every round.
    """
    E = np.atleast_2d(np.asarray(err_matrix, dtype=float))
    T, K = E.shape
    if T < 1 or K < 1:
        raise ValueError("err_matrix must be non-empty")
    c = np.zeros(K + 1)
    c[-1] = 1.0
    A_ub = np.hstack([E, -np.ones((T, 1))])
    b_ub = np.full(T, alpha)
    A_eq = np.append(np.ones(K), 0.0)[None, :]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0],
                  bounds=[(0, None)] * (K + 1), method="highs")
    if not res.success:
        raise RuntimeError(f"feasibility LP failed: {res.message}")
    u = np.clip(res.x[:K], 0.0, None)
    return max(float(res.x[-1]), 0.0), u / u.sum()
