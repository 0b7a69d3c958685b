"""Pareto-smoothed importance sampling leave-one-out cross-validation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError

log = logging.getLogger(__name__)

K_THRESHOLD = 0.7
MIN_TAIL = 5


def fit_generalized_pareto(excesses, shrink: bool = False) -> tuple[float, float]:
    """Zhang-Stephens estimate ``(k_hat, sigma_hat)`` of a generalized Pareto tail.

    ``excesses`` are positive exceedances over a threshold. A quadrature grid
    over ``b = -k / sigma`` is weighted by the profile likelihood and the
    posterior mean of ``b`` gives both estimates. With ``shrink`` the shape is
    pulled toward 0.5 by a weak prior worth 10 observations, as loo does.
    Fewer than 5 excesses give ``(inf, nan)``.
    """
    x = np.sort(np.asarray(excesses, dtype=float))
    n = x.size
    if n < MIN_TAIL:
        return math.inf, math.nan
    if not np.all(np.isfinite(x)) or x[0] <= 0:
        raise DomainError("excesses must be finite and positive")
    n_grid = 30 + int(math.sqrt(n))
    quartile = x[int(n / 4 + 0.5) - 1]
    b = 1.0 / x[-1] + (1.0 - np.sqrt(n_grid / (np.arange(1, n_grid + 1) - 0.5))) / (3.0 * quartile)
    k_grid = np.mean(np.log1p(-b[:, None] * x), axis=1)
    profile = n * (np.log(-b / k_grid) - k_grid - 1.0)
    weights = np.exp(profile - logsumexp(profile))
    keep = weights >= 10 * np.finfo(float).eps
    weights = weights[keep] / weights[keep].sum()
    b_hat = float(weights @ b[keep])
    k_hat = float(np.mean(np.log1p(-b_hat * x)))
    sigma_hat = -k_hat / b_hat
    if shrink:
        k_hat = (n * k_hat + 10 * 0.5) / (n + 10)
    return k_hat, sigma_hat


def gpd_quantile(p, k: float, sigma: float) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if abs(k) < 1e-12:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-k * np.log1p(-p)) / k


def tail_length(n_draws: int) -> int:
    return int(min(math.ceil(0.2 * n_draws), math.ceil(3.0 * math.sqrt(n_draws))))


def smooth_log_ratios(log_ratios) -> tuple[np.ndarray, float]:
    """Pareto-smoothed log ratios (unnormalized) and the tail shape estimate.

    The largest ``M`` ratios are replaced by expected GPD order statistics and
    everything is capped at the largest raw ratio.
    """
    r = np.asarray(log_ratios, dtype=float)
    top = float(np.max(r))
    x = r - top
    n_tail = tail_length(r.size)
    if n_tail < MIN_TAIL or n_tail >= r.size:
        return r.copy(), math.inf
    order = np.argsort(x, kind="stable")
    cutoff = x[order[-n_tail - 1]]
    tail_idx = order[-n_tail:]
    tail = x[tail_idx]
    if np.all(tail == cutoff):
        # flat tail: the ratios do not vary there, so nothing to smooth
        return r.copy(), 0.0
    exp_cut = math.exp(cutoff)
    k_hat, sigma_hat = fit_generalized_pareto(np.exp(tail) - exp_cut, shrink=True)
    if not math.isfinite(k_hat):
        return r.copy(), k_hat
    smoothed = np.log(gpd_quantile((np.arange(n_tail) + 0.5) / n_tail, k_hat, sigma_hat) + exp_cut)
    out = x.copy()
    out[tail_idx] = np.minimum(smoothed, 0.0)  # tail_idx is ascending in x
    return out + top, k_hat


@dataclass(frozen=True)
class ParetoDiagnostic:
    k_hat: np.ndarray

    @property
    def flagged(self) -> np.ndarray:
        return self.k_hat > K_THRESHOLD

    @property
    def n_flagged(self) -> int:
        return int(np.sum(self.flagged))

    @property
    def max_k(self) -> float:
        return float(np.max(self.k_hat)) if self.k_hat.size else math.nan


@dataclass(frozen=True)
class LooResult:
    elpd_loo: float
    per_point: np.ndarray
    pareto: ParetoDiagnostic


def psis_loo(loglik) -> LooResult:
    """PSIS-LOO from an ``S x N`` matrix of pointwise log likelihoods."""
    ll = np.asarray(loglik, dtype=float)
    if ll.ndim != 2 or ll.shape[0] < 1 or ll.shape[1] < 1:
        raise DomainError(f"log likelihood must be a non-empty S x N matrix, got shape {ll.shape}")
    bad = np.argwhere(~np.isfinite(ll))
    if bad.size:
        s, i = bad[0]
        raise DomainError(f"non-finite log likelihood at draw {s}, point {i}")
    n_draws, n_points = ll.shape
    if n_draws < 100:
        log.warning("PSIS-LOO with only %d draws; at least 100 are recommended", n_draws)
    per_point = np.empty(n_points)
    k_hat = np.empty(n_points)
    for i in range(n_points):
        if np.all(ll[:, i] == ll[0, i]):
            per_point[i] = ll[0, i]
            k_hat[i] = 0.0
            continue
        lw, k_hat[i] = smooth_log_ratios(-ll[:, i])
        per_point[i] = logsumexp(lw + ll[:, i]) - logsumexp(lw)
    return LooResult(float(per_point.sum()), per_point, ParetoDiagnostic(k_hat))
