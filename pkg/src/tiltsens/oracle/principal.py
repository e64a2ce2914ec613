"""Stratum configurations with Always-Stop and Only-Minority-Stop slots.

Slots are ordered Always-Stop first. A control on an Only-Minority-Stop slot
is never stopped, and its control outcome is structurally 0.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ..data import StratumSummary
from ..augment import AugmentedStratum
from ..errors import DataError
from .exact import enumerate_assignments


@dataclass(frozen=True)
class StratumConfig:
    n1: int
    n_as: int
    n_oms: int
    y1: tuple[int, ...]
    y0: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "y1", tuple(int(v) for v in self.y1))
        object.__setattr__(self, "y0", tuple(int(v) for v in self.y0))
        n = self.n_as + self.n_oms
        if min(self.n1, self.n_as, self.n_oms) < 0 or self.n1 > n:
            raise DataError("inconsistent counts")
        if len(self.y1) != n or len(self.y0) != n:
            raise DataError("outcome vectors must have one entry per slot")
        if any(self.y0[self.n_as :]):
            raise DataError("control outcomes on Only-Minority-Stop slots must be 0")

    @classmethod
    def from_means(cls, n1, n_as, n_oms, ones_as1: int, ones_oms1: int, ones_as0: int = 0):
        """Build from counts of outcome-1 slots per group."""
        y1 = [1] * ones_as1 + [0] * (n_as - ones_as1) + [1] * ones_oms1 + [0] * (n_oms - ones_oms1)
        y0 = [1] * ones_as0 + [0] * (n_as - ones_as0) + [0] * n_oms
        return cls(n1, n_as, n_oms, tuple(y1), tuple(y0))

    @property
    def n_tilde(self) -> int:
        return self.n_as + self.n_oms

    @property
    def n0(self) -> int:
        return self.n_tilde - self.n1

    @property
    def rho(self) -> Fraction:
        return Fraction(self.n_oms, self.n_tilde)

    def mean(self, values: Sequence[int], lo: int, hi: int) -> Fraction:
        if hi <= lo:
            return Fraction(0)
        return Fraction(sum(values[lo:hi]), hi - lo)

    @property
    def y1_as_mean(self) -> Fraction:
        return self.mean(self.y1, 0, self.n_as)

    @property
    def y1_oms_mean(self) -> Fraction:
        return self.mean(self.y1, self.n_as, self.n_tilde)

    @property
    def y0_as_mean(self) -> Fraction:
        return self.mean(self.y0, 0, self.n_as)


def stopped_control_support(config: StratumConfig) -> range:
    return range(max(0, config.n_as - config.n1), min(config.n_as, config.n0) + 1)


def hypergeom_stopped_controls(config: StratumConfig) -> dict[int, Fraction]:
    """Exact pmf of the number of stopped (Always-Stop) controls."""
    total = math.comb(config.n_tilde, config.n0)
    return {
        c: Fraction(math.comb(config.n_as, c) * math.comb(config.n_oms, config.n0 - c), total)
        for c in stopped_control_support(config)
    }


def enumerated_stopped_controls(config: StratumConfig) -> dict[int, Fraction]:
    a = enumerate_assignments(config.n_tilde, config.n1)
    counts = np.bincount((1 - a[:, : config.n_as]).sum(axis=1), minlength=config.n_as + 1)
    return {c: Fraction(int(k), a.shape[0]) for c, k in enumerate(counts) if k}


def conditional_treatment_formula(config: StratumConfig, c: int) -> tuple[Fraction, Fraction]:
    """Treatment probability on an Always-Stop slot and on an Only-Minority-Stop slot given c."""
    p_as = Fraction(config.n_as - c, config.n_as) if config.n_as else Fraction(0)
    p_oms = Fraction(config.n1 - (config.n_as - c), config.n_oms) if config.n_oms else Fraction(0)
    return p_as, p_oms


def conditional_treatment_enumerated(config: StratumConfig, c: int) -> tuple[list[Fraction], list[Fraction]]:
    """Per-slot treatment frequencies among assignments with exactly c stopped controls."""
    a = enumerate_assignments(config.n_tilde, config.n1)
    rows = a[(1 - a[:, : config.n_as]).sum(axis=1) == c]
    if rows.shape[0] == 0:
        raise DataError(f"c={c} outside the support")
    freq = [Fraction(int(k), rows.shape[0]) for k in rows.sum(axis=0)]
    return freq[: config.n_as], freq[config.n_as :]


def target_effect(config: StratumConfig, rho) -> Fraction:
    """Average treated outcome minus (1 - rho) times the Always-Stop control mean."""
    return Fraction(sum(config.y1), config.n_tilde) - (1 - Fraction(rho)) * config.y0_as_mean


def exact_bias(config: StratumConfig, rho) -> Fraction:
    """Bias of the rho-scaled plug-in estimator, conditional on at least one stopped control."""
    rho = Fraction(rho)
    pmf = hypergeom_stopped_controls(config)
    p_event = sum(p for c, p in pmf.items() if c >= 1)
    if p_event == 0:
        raise DataError("no assignment stops a control")
    gap = config.y1_as_mean - config.y1_oms_mean
    return sum(
        (Fraction(config.n_as - c, config.n1) - (1 - rho)) * gap * p / p_event for c, p in pmf.items() if c >= 1
    )


def exhaustive_bias(config: StratumConfig, rho) -> Fraction:
    """Average over assignments with a stopped control of plug-in estimate minus target."""
    rho = Fraction(rho)
    a = enumerate_assignments(config.n_tilde, config.n1)
    target = target_effect(config, rho)
    diffs = []
    for z in a.tolist():
        stopped = [i for i in range(config.n_as) if z[i] == 0]
        if not stopped:
            continue
        treated_mean = Fraction(sum(config.y1[i] for i, zi in enumerate(z) if zi), config.n1)
        control_mean = Fraction(sum(config.y0[i] for i in stopped), len(stopped))
        diffs.append(treated_mean - (1 - rho) * control_mean - target)
    if not diffs:
        raise DataError("no assignment stops a control")
    return sum(diffs) / len(diffs)


def observed_summary(config: StratumConfig, z: Sequence[int], stratum_id: str = "g") -> StratumSummary:
    """What the data show under assignment z: all treated plus stopped controls."""
    treated = [i for i, zi in enumerate(z) if zi]
    stopped = [i for i in range(config.n_as) if not z[i]]
    return StratumSummary(
        stratum_id,
        n1=len(treated),
        n0_obs=len(stopped),
        sum_y1=sum(config.y1[i] for i in treated),
        sum_y0=sum(config.y0[i] for i in stopped),
    )


def augmented_full_data_gap(config: StratumConfig) -> Fraction:
    """Largest gap over assignments between the augmented and full-data Difference-in-Means.

    The augmentation count is the realized number of unobserved controls.
    """
    worst = Fraction(0)
    for z in enumerate_assignments(config.n_tilde, config.n1).tolist():
        obs = observed_summary(config, z)
        if obs.n1 == 0 or config.n0 == 0:
            continue
        aug = AugmentedStratum(obs, config.n0 - obs.n0_obs)
        full = Fraction(sum(config.y1[i] for i, zi in enumerate(z) if zi), config.n1) - Fraction(
            sum(config.y0[i] for i, zi in enumerate(z) if not zi), config.n0
        )
        worst = max(worst, abs(aug.tau_hat_exact - full))
    return worst
