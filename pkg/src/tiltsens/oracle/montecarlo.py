"""Monte Carlo checks of size control and variance conservativeness.

Each stratum's assignment is drawn from the vertex-model distribution
P(z) proportional to gamma_true**(z.u) over its enumerated assignment space,
using one random stream per stratum. Data are the full potential outcomes
(no missing controls), so the stratum estimate is the plain Difference-in-Means.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from ..errors import DataError
from ..inference import conservative_variance_columns
from ..rng import spawn_generators
from ..tilt import multiplier_matrix
from .exact import enumerate_assignments
from .principal import StratumConfig

MIN_REPS = 100


@dataclass(frozen=True)
class Type1Result:
    rate: float
    mc_se: float
    reps: int
    seed: int
    alpha: float


@dataclass(frozen=True)
class VarianceResult:
    mean_se2: float
    var_tau_tilt: float
    z_score: float  # (mean_se2 - var) / Monte Carlo SE of the difference
    mc_se: float
    reps: int
    seed: int


def _draw_tilted(
    configs: Sequence[StratumConfig],
    gamma_tilt: float,
    u: Sequence[Sequence[float]],
    gamma_true: float,
    tau0: float,
    direction: int,
    reps: int,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Simulated (tau_tilt, se2) pairs, one per replication."""
    if reps < MIN_REPS:
        raise DataError(f"reps must be at least {MIN_REPS}")
    if len(u) != len(configs):
        raise DataError("need one u vector per stratum")
    n_tilde = np.array([c.n_tilde for c in configs], dtype=np.int64)
    n1 = np.array([c.n1 for c in configs], dtype=np.int64)
    shrink, inflate = multiplier_matrix(n_tilde, n1, np.full(len(configs), float(gamma_tilt)))
    streams = spawn_generators(seed, len(configs))
    lam = np.empty((len(configs), reps))
    for g, (cfg, ug, rng) in enumerate(zip(configs, u, streams)):
        a = enumerate_assignments(cfg.n_tilde, cfg.n1).astype(float)
        ug = np.asarray(ug, dtype=float)
        if ug.shape != (cfg.n_tilde,) or np.any((ug < 0) | (ug > 1)):
            raise DataError(f"stratum {g}: u must have one entry in [0, 1] per slot")
        logits = (a @ ug) * math.log(gamma_true)
        p = np.exp(logits - logits.max())
        p /= p.sum()
        y1, y0 = np.asarray(cfg.y1, float), np.asarray(cfg.y0, float)
        tau_hat = (a @ y1) / cfg.n1 - ((1 - a) @ y0) / cfg.n0
        centered = tau_hat[rng.choice(len(p), size=reps, p=p)] - tau0
        lam[g] = np.where(direction * centered >= 0, centered * shrink[g], centered * inflate[g])
    weights = n_tilde / n_tilde.sum()
    tau_tilt = weights @ lam
    se2 = conservative_variance_columns(lam, n_tilde)
    return tau_tilt, se2


def null_tau(configs: Sequence[StratumConfig]) -> float:
    """Size-weighted average of stratum full-data effects."""
    n = np.array([c.n_tilde for c in configs], dtype=float)
    eff = np.array([(sum(c.y1) - sum(c.y0)) / c.n_tilde for c in configs])
    return float(n @ eff / n.sum())


def monte_carlo_type1(
    configs: Sequence[StratumConfig],
    gamma: float,
    u: Sequence[Sequence[float]],
    reps: int,
    seed: int,
    alpha: float = 0.05,
    gamma_true: float | None = None,
) -> Type1Result:
    """Rejection rate of the upper-tailed tilted test at the true null value.

    Assignments follow the vertex model with ``gamma_true`` (default
    ``gamma``) and hidden covariates ``u``; the test tilts at ``gamma``.
    """
    tau0 = null_tau(configs)
    g_true = gamma if gamma_true is None else gamma_true
    tau_tilt, se2 = _draw_tilted(configs, gamma, u, g_true, tau0, 1, reps, seed)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(se2 > 0, ndtr(-tau_tilt / np.sqrt(se2)), np.where(tau_tilt > 0, 0.0, 1.0))
    rate = float(np.mean(p < alpha))
    return Type1Result(rate, math.sqrt(alpha * (1 - alpha) / reps), reps, seed, alpha)


def monte_carlo_variance_conservatism(
    configs: Sequence[StratumConfig],
    gamma: float,
    u: Sequence[Sequence[float]],
    reps: int,
    seed: int,
    tau0: float = 0.0,
    gamma_true: float | None = None,
) -> VarianceResult:
    """Compare the mean variance estimate with the simulated variance of the tilted statistic."""
    if len(configs) < 2:
        raise DataError("need at least 2 strata")
    g_true = gamma if gamma_true is None else gamma_true
    tau_tilt, se2 = _draw_tilted(configs, gamma, u, g_true, tau0, 1, reps, seed)
    dev = tau_tilt - tau_tilt.mean()
    var = float(np.mean(dev**2) * reps / (reps - 1))
    # delta-method SE of mean(se2) - sample variance
    diff_terms = se2 - dev**2
    mc_se = float(np.std(diff_terms, ddof=1) / math.sqrt(reps))
    gap = float(se2.mean()) - var
    z = gap / mc_se if mc_se > 0 else (math.inf if gap > 0 else 0.0)
    return VarianceResult(float(se2.mean()), var, z, mc_se, reps, seed)
