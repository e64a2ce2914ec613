"""Selection augmentation: posited missing controls from a lower bound on rho."""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .data import DataError, StratumSummary, StudySummary


def _check_size(n1: int, n0_obs: int) -> int:
    size = int(n1) + int(n0_obs)
    if size < 1:
        raise ValueError("n1 + n0_obs must be at least 1")
    return size


def rho_lb_from_w(w: int, n1: int, n0_obs: int) -> float:
    """Implied selection lower bound w / (n1 + n0_obs + w)."""
    size = _check_size(n1, n0_obs)
    if w < 0:
        raise ValueError("w must be nonnegative")
    return w / (size + w)


def w_from_rho_lb(rho: float, n1: int, n0_obs: int) -> int:
    """Nearest integer w to a target rho; ties go to the smaller w.

    Only the integers around the continuous inverse rho*size/(1-rho) can win,
    since w / (size + w) is increasing in w. Distances are compared exactly.
    """
    size = _check_size(n1, n0_obs)
    if not (0.0 <= rho < 1.0) or math.isnan(rho):
        raise ValueError(f"rho must lie in [0, 1), got {rho!r}")
    if rho == 0.0:
        return 0
    base = math.floor(rho * size / (1.0 - rho))
    target = Fraction(rho)
    best, best_gap = None, None
    for w in range(max(base - 1, 0), base + 3):
        gap = abs(target - Fraction(w, size + w))
        if best_gap is None or gap < best_gap:
            best, best_gap = w, gap
    return best


@dataclass(frozen=True)
class AugmentedStratum:
    base: StratumSummary
    w: int

    def __post_init__(self):
        if self.base.n1 < 1:
            raise DataError(f"stratum {self.base.stratum_id}: augmentation needs n1 >= 1")
        if self.w < 0:
            raise ValueError("w must be nonnegative")
        if self.base.n0_obs + self.w < 1:
            raise DataError(f"stratum {self.base.stratum_id}: no controls after augmentation")

    @property
    def stratum_id(self) -> str:
        return self.base.stratum_id

    @property
    def n1(self) -> int:
        return self.base.n1

    @property
    def n_tilde(self) -> int:
        return self.base.n1 + self.base.n0_obs + self.w

    @property
    def rho_lb_realized(self) -> float:
        return self.w / self.n_tilde

    @property
    def tau_hat_aug(self) -> float:
        """Difference in means with w zero-outcome controls appended."""
        b = self.base
        return b.sum_y1 / b.n1 - b.sum_y0 / (b.n0_obs + self.w)

    @property
    def tau_hat_exact(self) -> Fraction:
        b = self.base
        return Fraction(b.sum_y1, b.n1) - Fraction(b.sum_y0, b.n0_obs + self.w)


def augment(stratum: StratumSummary, rho: float) -> AugmentedStratum:
    if stratum.n1 < 1:
        raise DataError(f"stratum {stratum.stratum_id}: augmentation needs n1 >= 1")
    return AugmentedStratum(stratum, w_from_rho_lb(rho, stratum.n1, stratum.n0_obs))


@dataclass(frozen=True)
class AugmentedStudy:
    """Augmented strata of a study in array form."""

    strata: tuple[AugmentedStratum, ...]

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(s.stratum_id for s in self.strata)

    @property
    def n1(self) -> np.ndarray:
        return np.array([s.n1 for s in self.strata], dtype=np.int64)

    @property
    def n_tilde(self) -> np.ndarray:
        return np.array([s.n_tilde for s in self.strata], dtype=np.int64)

    @property
    def tau_hat(self) -> np.ndarray:
        return np.array([s.tau_hat_aug for s in self.strata], dtype=float)

    def __len__(self) -> int:
        return len(self.strata)


def augment_study(summary: StudySummary, rho: float | Mapping[str, float]) -> AugmentedStudy:
    """Augment every stratum.

    ``rho`` is a common scalar or a per-stratum mapping; strata missing from
    the mapping fall back to the summary's own ``rho_lb`` column, then to 0.
    """
    out = []
    for s in summary.strata:
        if isinstance(rho, Mapping):
            r = rho.get(s.stratum_id, (summary.rho_lb or {}).get(s.stratum_id, 0.0))
        else:
            r = rho
        out.append(augment(s, float(r)))
    return AugmentedStudy(tuple(out))
