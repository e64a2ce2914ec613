"""Brute-force enumeration over assignment space.

These routines deliberately avoid the closed forms in :mod:`tiltsens.tilt`:
they enumerate every assignment (and every vertex of the hidden-covariate
cube) and use exact rationals where feasible.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Sequence
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.special import expit

from ..augment import AugmentedStratum
from ..errors import NumericalGuardError, OracleMismatch
from ..tilt import TiltSpec

MAX_ASSIGNMENTS = 10**6
MAX_UNITS = 22
MAX_VERTEX_UNITS = 14


def _guard(n_tilde: int, n1: int) -> None:
    if not 0 <= n1 <= n_tilde:
        raise ValueError(f"need 0 <= n1 <= n, got n1={n1}, n={n_tilde}")
    if n_tilde > MAX_UNITS or math.comb(n_tilde, n1) > MAX_ASSIGNMENTS:
        raise NumericalGuardError(f"assignment space C({n_tilde},{n1}) too large to enumerate")


@lru_cache(maxsize=512)
def _assignments(n_tilde: int, n1: int) -> np.ndarray:
    out = np.zeros((math.comb(n_tilde, n1), n_tilde), dtype=np.int8)
    for row, treated in enumerate(itertools.combinations(range(n_tilde), n1)):
        out[row, list(treated)] = 1
    out.setflags(write=False)
    return out


def enumerate_assignments(n_tilde: int, n1: int) -> np.ndarray:
    """All 0/1 vectors of length ``n_tilde`` with ``n1`` ones, one per row.

    Rows follow lexicographic order of the treated positions, so (3, 1) gives
    (1,0,0), (0,1,0), (0,0,1).
    """
    _guard(n_tilde, n1)
    return _assignments(int(n_tilde), int(n1))


@dataclass(frozen=True)
class SubmodelSpec:
    """Logistic assignment model with hidden covariate ``u`` and intercept ``kappa``."""

    u: tuple[float, ...]
    kappa: float = 0.0
    gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "u", tuple(float(x) for x in self.u))
        if any(not 0.0 <= x <= 1.0 for x in self.u):
            raise ValueError("every u component must lie in [0, 1]")
        if self.gamma < 1.0:
            raise ValueError("gamma must be >= 1")


def submodel_conditional(spec: SubmodelSpec, n1: int) -> tuple[np.ndarray, np.ndarray]:
    """Distribution over assignments with ``n1`` treated, given independent logistic draws.

    Built from the unconditional Bernoulli product and renormalized, so the
    intercept's cancellation is observed rather than assumed.
    """
    assignments = enumerate_assignments(len(spec.u), n1)
    pi = expit(spec.kappa + math.log(spec.gamma) * np.asarray(spec.u))
    log_p = assignments @ np.log(pi) + (1 - assignments) @ np.log1p(-pi)
    p = np.exp(log_p - log_p.max())
    return assignments, p / p.sum()


def vertex_conditional_exact(u: Sequence[int], n1: int, gamma) -> list[Fraction]:
    """Exact conditional probabilities gamma**(z.u) / sum_a gamma**(a.u) at a 0/1 vertex ``u``."""
    g = Fraction(gamma)
    a = enumerate_assignments(len(u), n1)
    powers = [g ** int(k) for k in a @ np.asarray(u, dtype=np.int64)]
    total = sum(powers)
    return [p / total for p in powers]


def _all_vertices(n_tilde: int) -> np.ndarray:
    if n_tilde > MAX_VERTEX_UNITS:
        raise NumericalGuardError(f"vertex scan over 2**{n_tilde} points refused")
    codes = np.arange(2**n_tilde, dtype=np.int64)
    return ((codes[:, None] >> np.arange(n_tilde)[::-1]) & 1).astype(np.int64)


def brute_force_bounds(n_tilde: int, n1: int, gamma) -> tuple[Fraction, Fraction]:
    """Exact min and max probability of one fixed assignment over all vertex ``u``.

    Also checks that the minimum is attained at u = 1 - z and the maximum at
    u = z; raises :class:`OracleMismatch` otherwise.
    """
    _guard(n_tilde, n1)
    g = Fraction(gamma)
    assignments = enumerate_assignments(n_tilde, n1).astype(np.int64)
    z = assignments[0]
    vertices = _all_vertices(n_tilde)
    overlap = assignments @ vertices.T  # (assignments, vertices)
    numer_power = vertices @ z
    cache: dict[bytes, Fraction] = {}
    probs = []
    for col in range(vertices.shape[0]):
        hist = np.bincount(overlap[:, col], minlength=n1 + 1)
        key = hist.tobytes()
        if key not in cache:
            cache[key] = sum(int(c) * g**k for k, c in enumerate(hist) if c)
        probs.append(g ** int(numer_power[col]) / cache[key])
    p_min, p_max = min(probs), max(probs)
    idx = {tuple(v): i for i, v in enumerate(vertices.tolist())}
    at_min = probs[idx[tuple((1 - z).tolist())]]
    at_max = probs[idx[tuple(z.tolist())]]
    if at_min != p_min or at_max != p_max:
        raise OracleMismatch(f"extremes not attained at u=1-z / u=z for n={n_tilde}, n1={n1}, gamma={gamma}")
    return p_min, p_max


def _extreme_denominator(n_tilde: int, n1: int, g: Fraction, toward: bool) -> Fraction:
    """sum over assignments a of g**(a.u) at u = z (toward) or u = 1 - z."""
    if math.comb(n_tilde, n1) <= MAX_ASSIGNMENTS and n_tilde <= MAX_UNITS:
        a = enumerate_assignments(n_tilde, n1).astype(np.int64)
        z = a[0]
        u = z if toward else 1 - z
        return sum(g ** int(k) for k in a @ u)
    raise NumericalGuardError("assignment space too large for the literal statistic")


def literal_tilted_stat(stratum: AugmentedStratum, spec: TiltSpec) -> Fraction:
    """Stratum tilted statistic evaluated literally from the worst-case probabilities.

    (1/|Omega|)(tau_hat - tau0)/p_upper when the centered estimate points
    toward the alternative, (1/|Omega|)(tau_hat - tau0)/p_lower otherwise, in
    exact rationals.
    """
    n, n1 = stratum.n_tilde, stratum.n1
    g = Fraction(spec.gamma_for(stratum.stratum_id))
    size = math.comb(n, n1)
    c = stratum.tau_hat_exact - Fraction(spec.tau0)
    if spec.direction * c >= 0:
        p_upper = g**n1 / _extreme_denominator(n, n1, g, toward=True)
        return c / (size * p_upper)
    p_lower = 1 / _extreme_denominator(n, n1, g, toward=False)
    return c / (size * p_lower)


def overlap_counts(n_tilde: int, n1: int) -> dict[int, int]:
    """Number of assignments sharing j treated positions with a fixed assignment."""
    a = enumerate_assignments(n_tilde, n1).astype(np.int64)
    counts = np.bincount(a @ a[0], minlength=n1 + 1)
    return {j: int(c) for j, c in enumerate(counts) if c}


def null_expectation_upper(
    y1: Sequence[int], y0: Sequence[int], n1: int, gamma: float, tau0: float, multipliers: tuple[float, float]
) -> np.ndarray:
    """Expected upper-tailed tilted statistic under every vertex mechanism.

    ``multipliers`` is the (shrink, inflate) pair for this stratum size and
    gamma. Returns one expectation per vertex of the hidden-covariate cube.
    """
    y1 = np.asarray(y1, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    n = y1.shape[0]
    a = enumerate_assignments(n, n1).astype(np.int64)
    tau_hat = (a @ y1) / n1 - ((1 - a) @ y0) / (n - n1)
    centered = tau_hat - tau0
    shrink, inflate = multipliers
    lam = np.where(centered >= 0, centered * shrink, centered * inflate)
    vertices = _all_vertices(n)
    logits = (vertices @ a.T) * math.log(gamma)
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    return probs @ lam
