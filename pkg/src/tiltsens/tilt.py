"""Worst-case probability bounds and tilted Difference-in-Means statistics.

Everything is driven by the overlap count J between a fixed assignment and a
uniformly drawn one: J is hypergeometric with pmf
C(n1, j) C(n - n1, n1 - j) / C(n, n1). The bound-based rescaling of a stratum's
centered estimate equals E[gamma**(J - n1)] (shrink) or E[gamma**(n1 - J)]
(inflate), which needs O(n1) log-space terms and never forms C(n, n1).
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, logsumexp

from .augment import AugmentedStratum, AugmentedStudy


_LOG_MAX = math.log(np.finfo(float).max)


def _check_counts(n_tilde: int, n1: int) -> None:
    if n1 < 1:
        raise ValueError("n1 must be at least 1")
    if n1 > n_tilde:
        raise ValueError(f"n1={n1} exceeds stratum size {n_tilde}")


def _check_gamma(gamma) -> None:
    g = np.asarray(gamma, dtype=float)
    if np.any(np.isnan(g)) or np.any(g < 1.0):
        raise ValueError(f"gamma must be >= 1, got {gamma!r}")


def _log_binom(n, k):
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


@lru_cache(maxsize=65536)
def _overlap_support(n_tilde: int, n1: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Overlap values j, log term counts C(n1,j)C(n-n1,n1-j), and log C(n,n1)."""
    j = np.arange(max(0, 2 * n1 - n_tilde), n1 + 1, dtype=float)
    log_counts = _log_binom(n1, j) + _log_binom(n_tilde - n1, n1 - j)
    log_total = float(_log_binom(n_tilde, n1))
    j.setflags(write=False)
    log_counts.setflags(write=False)
    return j, log_counts, log_total


def overlap_pmf(n_tilde: int, n1: int) -> tuple[np.ndarray, np.ndarray]:
    """Support and pmf of the overlap count J.

    >>> j, p = overlap_pmf(4, 2)
    >>> j.tolist(), np.round(p * 6, 12).tolist()
    ([0, 1, 2], [1.0, 4.0, 1.0])
    """
    _check_counts(n_tilde, n1)
    j, log_counts, log_total = _overlap_support(int(n_tilde), int(n1))
    pmf = np.exp(log_counts - log_total)
    return j.astype(np.int64), pmf / pmf.sum()


def log_prob_bounds(n_tilde: int, n1: int, gamma: float) -> tuple[float, float]:
    """Logs of the smallest and largest conditional probability of one assignment."""
    _check_counts(n_tilde, n1)
    _check_gamma(gamma)
    j, log_counts, _ = _overlap_support(int(n_tilde), int(n1))
    lg = math.log(gamma)
    return float(-logsumexp(log_counts + (n1 - j) * lg)), float(n1 * lg - logsumexp(log_counts + j * lg))


def prob_bounds(n_tilde: int, n1: int, gamma: float) -> tuple[float, float]:
    """Smallest and largest conditional probability of one assignment.

    These underflow to 0 for large strata; use :func:`log_prob_bounds` there.
    """
    log_lower, log_upper = log_prob_bounds(n_tilde, n1, gamma)
    return math.exp(log_lower), math.exp(log_upper)


def prob_bounds_exact(n_tilde: int, n1: int, gamma) -> tuple[Fraction, Fraction]:
    """Rational version of :func:`prob_bounds` for a rational gamma."""
    _check_counts(n_tilde, n1)
    g = Fraction(gamma)
    if g < 1:
        raise ValueError("gamma must be >= 1")
    lo = max(0, 2 * n1 - n_tilde)
    counts = [(j, math.comb(n1, j) * math.comb(n_tilde - n1, n1 - j)) for j in range(lo, n1 + 1)]
    p_lower = 1 / sum(c * g ** (n1 - j) for j, c in counts)
    p_upper = g**n1 / sum(c * g**j for j, c in counts)
    return p_lower, p_upper


def tilt_multiplier(n_tilde: int, n1: int, gamma: float, shrink: bool) -> float:
    """E[gamma**(J - n1)] when shrinking, E[gamma**(n1 - J)] otherwise."""
    _check_counts(n_tilde, n1)
    _check_gamma(gamma)
    if gamma == 1.0:
        return 1.0
    j, log_counts, log_total = _overlap_support(int(n_tilde), int(n1))
    sign = 1.0 if shrink else -1.0
    log_value = logsumexp(log_counts + sign * (j - n1) * math.log(gamma)) - log_total
    # the inflating multiplier grows like gamma**n1 and may exceed the float range
    return math.exp(log_value) if log_value < _LOG_MAX else math.inf


def multiplier_matrix(n_tilde, n1, gamma) -> tuple[np.ndarray, np.ndarray]:
    """Shrink and inflate multipliers for many strata and gamma values at once.

    ``n_tilde`` and ``n1`` have one entry per stratum. ``gamma`` is either one
    value per stratum (shape ``(S,)``) or a matrix ``(S, m)`` of per-stratum
    gamma columns. Returns two arrays shaped like ``gamma``.
    """
    n_tilde = np.asarray(n_tilde, dtype=np.int64)
    n1 = np.asarray(n1, dtype=np.int64)
    gamma = np.asarray(gamma, dtype=float)
    squeeze = gamma.ndim == 1
    gmat = gamma[:, None] if squeeze else gamma
    if gmat.shape[0] != n_tilde.shape[0]:
        raise ValueError("gamma rows must match the number of strata")
    _check_gamma(gmat)
    log_g = np.log(gmat)
    shrink = np.ones_like(gmat)
    inflate = np.ones_like(gmat)
    for s in range(n_tilde.shape[0]):
        _check_counts(int(n_tilde[s]), int(n1[s]))
        row = log_g[s]
        active = row > 0.0
        if not active.any():
            continue
        j, log_counts, log_total = _overlap_support(int(n_tilde[s]), int(n1[s]))
        expo = (j - n1[s])[None, :] * row[active, None]
        shrink[s, active] = np.exp(logsumexp(log_counts + expo, axis=1) - log_total)
        with np.errstate(over="ignore"):
            inflate[s, active] = np.exp(logsumexp(log_counts - expo, axis=1) - log_total)
    if squeeze:
        return shrink[:, 0], inflate[:, 0]
    return shrink, inflate


@dataclass(frozen=True)
class TiltSpec:
    """Test configuration: gamma (uniform and/or per stratum), null value, direction."""

    gamma: float = 1.0
    tau0: float = 0.0
    direction: int = 1
    gamma_by_stratum: Mapping[str, float] | None = field(default=None)

    def __post_init__(self):
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        _check_gamma(self.gamma)
        if self.gamma_by_stratum:
            _check_gamma(list(self.gamma_by_stratum.values()))

    def gamma_for(self, stratum_id: str) -> float:
        if self.gamma_by_stratum and stratum_id in self.gamma_by_stratum:
            return float(self.gamma_by_stratum[stratum_id])
        return float(self.gamma)


@dataclass(frozen=True)
class TiltResult:
    lambda_by_stratum: dict[str, float]
    weights: dict[str, float]
    tau_tilt: float
    n_tilde_star: int


def tilted_lambdas(tau_hat, n_tilde, n1, gamma, tau0: float, direction: int) -> np.ndarray:
    """Stratum tilted statistics for arrays of strata (gamma per stratum)."""
    centered = np.asarray(tau_hat, dtype=float) - tau0
    shrink, inflate = multiplier_matrix(n_tilde, n1, np.broadcast_to(gamma, centered.shape))
    return np.where(direction * centered >= 0, centered * shrink, centered * inflate)


def stratum_tilted_stat(stratum: AugmentedStratum, spec: TiltSpec) -> float:
    c = stratum.tau_hat_aug - spec.tau0
    gamma = spec.gamma_for(stratum.stratum_id)
    return c * tilt_multiplier(stratum.n_tilde, stratum.n1, gamma, shrink=spec.direction * c >= 0)


def aggregate_tilted_stat(
    strata: Sequence[AugmentedStratum] | AugmentedStudy, spec: TiltSpec
) -> TiltResult:
    """Size-weighted average of stratum tilted statistics."""
    if isinstance(strata, AugmentedStudy):
        strata = strata.strata
    if len(strata) == 0:
        raise ValueError("no strata to aggregate")
    ids = [s.stratum_id for s in strata]
    n_tilde = np.array([s.n_tilde for s in strata], dtype=np.int64)
    gamma = np.array([spec.gamma_for(i) for i in ids])
    lambdas = tilted_lambdas(
        [s.tau_hat_aug for s in strata], n_tilde, [s.n1 for s in strata], gamma, spec.tau0, spec.direction
    )
    total = int(n_tilde.sum())
    weights = n_tilde / total
    return TiltResult(
        lambda_by_stratum=dict(zip(ids, lambdas.tolist())),
        weights=dict(zip(ids, weights.tolist())),
        tau_tilt=math.fsum(weights * lambdas),
        n_tilde_star=total,
    )
