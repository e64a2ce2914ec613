"""Conservative variance, p-values, grid sweeps and confidence sets."""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .augment import AugmentedStudy, augment_study
from .data import StudySummary
from .errors import DataError, NumericalGuardError, SweepError
from .parallel import parallel_map
from .tilt import TiltSpec, multiplier_matrix

SWEEP_COLUMNS = ("rho_lb", "gamma", "tau0", "tau_tilt", "se2", "t_stat", "p_upper", "p_lower")
CONFSET_COLUMNS = ("rho_lb", "gamma", "ci_low", "ci_high", "tau_hl", "contains_zero")


@dataclass(frozen=True)
class SweepCell:
    rho_lb: float
    gamma: float
    tau0: float
    tau_tilt: float
    se2: float
    t_stat: float
    p_upper: float
    p_lower: float
    degenerate: bool = False  # se2 == 0, p-values follow the degenerate convention

    def row(self) -> tuple:
        return tuple(getattr(self, c) for c in SWEEP_COLUMNS)


@dataclass(frozen=True)
class ConfSetRow:
    rho_lb: float
    gamma: float
    ci_low: float
    ci_high: float
    tau_hl: float
    contains_zero: bool
    n_kept: int = 0

    @property
    def empty(self) -> bool:
        return self.n_kept == 0

    def row(self) -> tuple:
        return tuple(getattr(self, c) for c in CONFSET_COLUMNS)


def _fsum_columns(mat: np.ndarray) -> np.ndarray:
    # exactly rounded column sums: results do not depend on summation order
    return np.array([math.fsum(col) for col in mat.T])


def _leverage(n_tilde: np.ndarray) -> tuple[np.ndarray, float, np.ndarray]:
    n_tilde = np.asarray(n_tilde, dtype=float)
    groups = n_tilde.shape[0]
    if groups < 2:
        raise NumericalGuardError("conservative variance needs at least 2 strata")
    w = groups * n_tilde / n_tilde.sum()
    s_w = math.fsum(w**2)
    h = w**2 / s_w
    if np.any(h >= 1.0):
        raise NumericalGuardError("leverage 1: variance undefined")
    return w, s_w, h


def conservative_variance_columns(lambdas: np.ndarray, n_tilde) -> np.ndarray:
    """HC2-style variance for each column of a (strata, cells) lambda matrix."""
    w, s_w, h = _leverage(n_tilde)
    groups = w.shape[0]
    lambdas = np.asarray(lambdas, dtype=float)
    finite = np.all(np.isfinite(lambdas), axis=0)
    v = np.where(finite, lambdas, 0.0) / np.sqrt(1.0 - h)[:, None]
    # residual of y = w*v on w, written so that constant v gives exact zeros
    dv = v - v[0]
    beta = v[0] + _fsum_columns((w**2)[:, None] * dv) / s_w
    resid = w[:, None] * (v - beta)
    return np.where(finite, _fsum_columns(resid**2) / groups**2, np.inf)


def conservative_variance(lambdas, n_tildes) -> float:
    """Leverage-adjusted variance estimate for the aggregate tilted statistic."""
    lam = np.asarray(lambdas, dtype=float)
    if lam.shape != np.shape(n_tildes):
        raise DataError("lambdas and n_tildes must have equal length")
    return float(conservative_variance_columns(lam[:, None], n_tildes)[0])


def one_sided_pvalue(tau_tilt: float, se2: float, direction: int) -> float:
    """Normal-reference p-value; se2 == 0 gives 0 if the sign favors the alternative, else 1."""
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    if se2 < 0 or math.isnan(se2):
        raise NumericalGuardError(f"invalid variance {se2!r}")
    if se2 == 0.0:
        return 0.0 if direction * tau_tilt > 0 else 1.0
    return float(ndtr(-direction * tau_tilt / math.sqrt(se2)))


def _pvalues(tau_tilt: np.ndarray, se2: np.ndarray, direction: int) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        p = ndtr(-direction * tau_tilt / np.sqrt(se2))
    # zero variance or an overflowed (infinite) statistic: decided by sign alone
    by_sign = np.where(direction * tau_tilt > 0, 0.0, 1.0)
    return np.where((se2 == 0.0) | np.isinf(tau_tilt), by_sign, p)


def _t_stat(tau_tilt: np.ndarray, se2: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return tau_tilt / np.sqrt(se2)


def _ceiling_vector(ids: Sequence[str], ceilings) -> np.ndarray:
    if ceilings is None:
        return np.full(len(ids), np.inf)
    mapping = getattr(ceilings, "resolved", ceilings)
    if callable(mapping):
        mapping = mapping()
    out = np.array([float(mapping.get(i, np.inf)) for i in ids])
    if np.any(out < 1.0) or np.any(np.isnan(out)):
        raise DataError("ceilings must be >= 1")
    return out


def _gamma_matrix(gamma_grid: np.ndarray, ceil: np.ndarray) -> np.ndarray:
    return np.minimum(gamma_grid[None, :], ceil[:, None])


@dataclass(frozen=True)
class _DirectionStats:
    tau_tilt: np.ndarray
    se2: np.ndarray


def _tilted_columns(aug: AugmentedStudy, gamma_mat: np.ndarray, tau0: float, shrink, inflate, direction):
    centered = aug.tau_hat - tau0
    lam = np.where((direction * centered >= 0)[:, None], centered[:, None] * shrink, centered[:, None] * inflate)
    n_tilde = aug.n_tilde
    weights = n_tilde / n_tilde.sum()
    tau_tilt = _fsum_columns(weights[:, None] * lam)
    return _DirectionStats(tau_tilt, conservative_variance_columns(lam, n_tilde))


def _sweep_rho(summary, rho, gamma_grid, tau0, direction, ceil) -> list[SweepCell]:
    aug = augment_study(summary, rho)
    gamma_mat = _gamma_matrix(gamma_grid, ceil)
    shrink, inflate = multiplier_matrix(aug.n_tilde, aug.n1, gamma_mat)
    stats = {d: _tilted_columns(aug, gamma_mat, tau0, shrink, inflate, d) for d in (1, -1)}
    main = stats[direction]
    t = _t_stat(main.tau_tilt, main.se2)
    p_up = _pvalues(stats[1].tau_tilt, stats[1].se2, 1)
    p_lo = _pvalues(stats[-1].tau_tilt, stats[-1].se2, -1)
    return [
        SweepCell(
            rho_lb=float(rho),
            gamma=float(g),
            tau0=float(tau0),
            tau_tilt=float(main.tau_tilt[k]),
            se2=float(main.se2[k]),
            t_stat=float(t[k]),
            p_upper=float(p_up[k]),
            p_lower=float(p_lo[k]),
            degenerate=bool(stats[1].se2[k] == 0.0 or stats[-1].se2[k] == 0.0),
        )
        for k, g in enumerate(gamma_grid)
    ]


def _check_grid(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise DataError(f"{name} grid is empty")
    if np.any(np.isnan(arr)):
        raise DataError(f"{name} grid contains NaN")
    return arr


def _run_rho_cells(fn, rho_grid, gamma_grid, threads, extra: dict):
    def guarded(rho):
        try:
            return fn(rho)
        except (ValueError, ArithmeticError) as exc:
            cell = {"rho_lb": float(rho)}
            if len(gamma_grid) == 1:
                cell["gamma"] = float(gamma_grid[0])
            raise SweepError({**cell, **extra}, exc) from exc

    return parallel_map(guarded, list(rho_grid), threads)


def grid_sweep(
    summary: StudySummary,
    rho_grid,
    gamma_grid,
    tau0: float = 0.0,
    direction: int = 1,
    ceilings=None,
    threads: int | None = None,
) -> list[SweepCell]:
    """One cell per (rho, gamma), rho outer and gamma inner.

    ``tau_tilt``, ``se2`` and ``t_stat`` belong to the requested direction;
    ``p_upper`` and ``p_lower`` come from the upper- and lower-tilted
    statistics respectively. With ``ceilings`` each stratum uses
    min(gamma, ceiling).
    """
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    rho_grid = _check_grid(rho_grid, "rho")
    gamma_grid = _check_grid(gamma_grid, "gamma")
    if np.any(gamma_grid < 1.0):
        raise DataError("gamma grid values must be >= 1")
    ceil = _ceiling_vector(summary.ids, ceilings)
    blocks = _run_rho_cells(
        lambda r: _sweep_rho(summary, r, gamma_grid, tau0, direction, ceil),
        rho_grid,
        gamma_grid,
        threads,
        {"tau0": float(tau0)},
    )
    return [cell for block in blocks for cell in block]


def estimate(
    summary: StudySummary,
    rho: float | Mapping[str, float],
    spec: TiltSpec,
    ceilings=None,
) -> SweepCell:
    """Single-cell run; ``spec.gamma_by_stratum`` overrides the uniform gamma."""
    aug = augment_study(summary, rho)
    ceil = _ceiling_vector(aug.ids, ceilings)
    gammas = np.minimum([spec.gamma_for(i) for i in aug.ids], ceil)[:, None]
    shrink, inflate = multiplier_matrix(aug.n_tilde, aug.n1, gammas)
    stats = {d: _tilted_columns(aug, gammas, spec.tau0, shrink, inflate, d) for d in (1, -1)}
    main = stats[spec.direction]
    rho_value = float(rho) if not isinstance(rho, Mapping) else float("nan")
    return SweepCell(
        rho_lb=rho_value,
        gamma=float(spec.gamma),
        tau0=float(spec.tau0),
        tau_tilt=float(main.tau_tilt[0]),
        se2=float(main.se2[0]),
        t_stat=float(_t_stat(main.tau_tilt, main.se2)[0]),
        p_upper=float(_pvalues(stats[1].tau_tilt, stats[1].se2, 1)[0]),
        p_lower=float(_pvalues(stats[-1].tau_tilt, stats[-1].se2, -1)[0]),
        degenerate=bool(main.se2[0] == 0.0),
    )


class _TauScan:
    """Tilted mean and variance of one direction as functions of tau0.

    For fixed multipliers each stratum's tilted statistic is linear in tau0
    with a kink at its own estimate, so with strata sorted by estimate the
    aggregate and the variance's quadratic form come from prefix sums.
    """

    def __init__(self, tau_hat, n_tilde, shrink, inflate, direction):
        order = np.argsort(tau_hat, kind="stable")
        self.tau_sorted = tau_hat[order]
        self.direction = direction
        w, s_w, h = _leverage(n_tilde)
        self.s_w = s_w
        self.groups = w.shape[0]
        omega = (n_tilde / n_tilde.sum())[order]
        a = (w / np.sqrt(1.0 - h))[order]
        w = w[order]
        tau = self.tau_sorted

        def prefix(mult):
            m = mult[order]
            m = np.where(np.isfinite(m), m, 0.0)
            e = a * m
            x = e * tau
            parts = np.stack([omega * m * tau, omega * m, x * x, x * e, e * e, w * x, w * e])
            return np.concatenate([np.zeros((7, 1)), np.cumsum(parts, axis=1)], axis=1)

        self.shrink = prefix(shrink)
        self.inflate = prefix(inflate)
        # strata whose inflating multiplier overflowed make the statistic infinite
        self.overflow = np.concatenate([[0], np.cumsum(~np.isfinite(inflate[order]))])

    def evaluate(self, tau0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.direction == 1:
            # strata with estimate >= tau0 shrink, those below inflate
            k = np.searchsorted(self.tau_sorted, tau0, side="left")
            sums = self.inflate[:, k] + (self.shrink[:, -1:] - self.shrink[:, k])
            overflow = self.overflow[k] > 0
        else:
            k = np.searchsorted(self.tau_sorted, tau0, side="right")
            sums = self.shrink[:, k] + (self.inflate[:, -1:] - self.inflate[:, k])
            overflow = (self.overflow[-1] - self.overflow[k]) > 0
        mean_a, mean_b, xx, xe, ee, wx, we = sums
        tau_tilt = mean_a - tau0 * mean_b
        total = xx - 2.0 * tau0 * xe + tau0**2 * ee
        proj = wx - tau0 * we
        se2 = np.maximum(total - proj**2 / self.s_w, 0.0) / self.groups**2
        tau_tilt = np.where(overflow, -self.direction * np.inf, tau_tilt)
        return tau_tilt, np.where(overflow, np.inf, se2)


def _summarize_kept(rho, gamma, tau_grid, keep) -> ConfSetRow:
    kept = tau_grid[keep]
    if kept.size == 0:
        nan = float("nan")
        return ConfSetRow(float(rho), float(gamma), nan, nan, nan, False, 0)
    lo, hi = float(kept[0]), float(kept[-1])
    return ConfSetRow(
        float(rho), float(gamma), lo, hi, float(kept[(kept.size - 1) // 2]), bool(lo <= 0.0 <= hi), int(kept.size)
    )


def _confset_rho(summary, rho, gamma_grid, tau_grid, alpha, ceil) -> list[ConfSetRow]:
    aug = augment_study(summary, rho)
    shrink, inflate = multiplier_matrix(aug.n_tilde, aug.n1, _gamma_matrix(gamma_grid, ceil))
    tau_hat = aug.tau_hat
    n_tilde = aug.n_tilde.astype(float)
    rows = []
    for k, gamma in enumerate(gamma_grid):
        up = _TauScan(tau_hat, n_tilde, shrink[:, k], inflate[:, k], 1)
        lo = _TauScan(tau_hat, n_tilde, shrink[:, k], inflate[:, k], -1)
        p_upper = _pvalues(*up.evaluate(tau_grid), 1)
        p_lower = _pvalues(*lo.evaluate(tau_grid), -1)
        keep = (p_upper >= alpha / 2) & (p_lower >= alpha / 2)
        rows.append(_summarize_kept(rho, gamma, tau_grid, keep))
    return rows


def conf_set_sweep(
    summary: StudySummary,
    rho_grid,
    gamma_grid,
    tau_grid,
    alpha: float = 0.05,
    ceilings=None,
    threads: int | None = None,
) -> list[ConfSetRow]:
    """Invert two one-sided level alpha/2 tests over ``tau_grid`` at each (rho, gamma).

    The kept set's min, max and lower median give ci_low, ci_high and tau_hl.
    An empty kept set yields NaN bounds and ``n_kept == 0``.
    """
    if not 0.0 < alpha < 1.0:
        raise DataError("alpha must lie in (0, 1)")
    rho_grid = _check_grid(rho_grid, "rho")
    gamma_grid = _check_grid(gamma_grid, "gamma")
    tau_grid = _check_grid(tau_grid, "tau0")
    if np.any(np.diff(tau_grid) < 0):
        raise DataError("tau0 grid must be sorted ascending")
    if np.any(gamma_grid < 1.0):
        raise DataError("gamma grid values must be >= 1")
    ceil = _ceiling_vector(summary.ids, ceilings)
    blocks = _run_rho_cells(
        lambda r: _confset_rho(summary, r, gamma_grid, tau_grid, alpha, ceil),
        rho_grid,
        gamma_grid,
        threads,
        {},
    )
    return [row for block in blocks for row in block]


def conf_set_direct(summary, rho, gamma, tau_grid, alpha, ceilings=None) -> ConfSetRow:
    """Reference path: one full estimate per tau0 in each direction."""
    tau_grid = _check_grid(tau_grid, "tau0")
    keep = np.zeros(tau_grid.shape, dtype=bool)
    for i, tau0 in enumerate(tau_grid):
        up = estimate(summary, rho, TiltSpec(gamma=gamma, tau0=tau0, direction=1), ceilings)
        lo = estimate(summary, rho, TiltSpec(gamma=gamma, tau0=tau0, direction=-1), ceilings)
        keep[i] = up.p_upper >= alpha / 2 and lo.p_lower >= alpha / 2
    return _summarize_kept(rho, gamma, tau_grid, keep)


def changepoint(rows: Sequence[ConfSetRow], rho_lb: float, atol: float = 1e-12) -> float | None:
    """Smallest gamma whose confidence set contains zero at ``rho_lb``; None if none does."""
    at_rho = [r for r in rows if abs(r.rho_lb - rho_lb) <= atol]
    if not at_rho:
        raise DataError(f"no rows at rho_lb={rho_lb}")
    hits = [r.gamma for r in at_rho if r.contains_zero]
    return min(hits) if hits else None


def insignificance_onset(cells: Sequence[SweepCell], alpha: float = 0.05, rho_lb: float | None = None):
    """Smallest gamma at which the upper-tail test stops rejecting.

    With ``rho_lb`` given, only that rho is scanned. Otherwise the result is
    the smallest gamma at which no rho rejects.
    """
    if rho_lb is not None:
        cells = [c for c in cells if abs(c.rho_lb - rho_lb) <= 1e-12]
    by_gamma: dict[float, bool] = {}
    for c in cells:
        by_gamma[c.gamma] = by_gamma.get(c.gamma, False) or c.p_upper < alpha
    for g in sorted(by_gamma):
        if not by_gamma[g]:
            return g
    return None
