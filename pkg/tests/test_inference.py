import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from tiltsens.augment import augment_study
from tiltsens.data import StratumSummary, StudySummary
from tiltsens.errors import NumericalGuardError, SweepError
from tiltsens.inference import (
    ConfSetRow,
    changepoint,
    conf_set_direct,
    conf_set_sweep,
    conservative_variance,
    estimate,
    grid_sweep,
    insignificance_onset,
    one_sided_pvalue,
)
from tiltsens.tilt import TiltSpec, aggregate_tilted_stat


def rank_one_variance(lambdas, n_tilde):
    lam = np.asarray(lambdas, float)
    n = np.asarray(n_tilde, float)
    groups = len(lam)
    w = groups * n / n.sum()
    s_w = np.sum(w**2)
    h = w**2 / s_w
    y = w * lam / np.sqrt(1 - h)
    return (np.sum(y**2) - np.sum(w * y) ** 2 / s_w) / groups**2


def random_summary(rng, strata=12, max_n=30):
    out = []
    for k in range(strata):
        n1, n0 = int(rng.integers(1, max_n)), int(rng.integers(1, max_n))
        out.append(StratumSummary(f"g{k}", n1, n0, int(rng.integers(0, n1 + 1)), int(rng.integers(0, n0 + 1))))
    return StudySummary(tuple(out), informative_only=True)


def test_variance_examples():
    assert conservative_variance([0.3, 0.3], [5, 5]) == 0.0
    a = 0.37
    assert conservative_variance([a, -a], [5, 5]) == pytest.approx(a**2, rel=1e-14)
    assert conservative_variance([1, 0, 0], [3, 3, 3]) == pytest.approx(1 / 9, rel=1e-14)


def test_variance_matches_rank_one_expansion():
    rng = np.random.default_rng(42)
    for _ in range(50):
        g = int(rng.integers(2, 30))
        lam = rng.normal(size=g)
        n = rng.integers(2, 100, size=g)
        assert conservative_variance(lam, n) == pytest.approx(rank_one_variance(lam, n), rel=1e-10, abs=1e-15)


def test_variance_zero_when_proportional_to_weights():
    # y proportional to w means lambda * (1-h)**-0.5 is constant
    n = np.array([3.0, 5.0, 9.0])
    w = 3 * n / n.sum()
    h = w**2 / np.sum(w**2)
    lam = 0.8 * np.sqrt(1 - h)
    assert conservative_variance(lam, n) == pytest.approx(0.0, abs=1e-30)


def test_variance_guards():
    with pytest.raises(NumericalGuardError, match="at least 2"):
        conservative_variance([0.2], [5])
    # a dominant stratum pushes the leverage to 1 in floating point
    with pytest.raises(NumericalGuardError, match="leverage 1"):
        conservative_variance([0.2, 0.1], [10**9, 1])


def test_pvalue_examples():
    assert one_sided_pvalue(0.0, 1.0, 1) == 0.5
    se = 0.013
    assert one_sided_pvalue(1.6449 * se, se**2, 1) == pytest.approx(0.05, abs=1e-4)
    assert one_sided_pvalue(-2.0, 1.0, -1) == pytest.approx(0.022750131948179, abs=1e-12)


def test_pvalue_degenerate():
    assert one_sided_pvalue(0.2, 0.0, 1) == 0.0
    assert one_sided_pvalue(0.0, 0.0, 1) == 1.0
    assert one_sided_pvalue(-0.2, 0.0, -1) == 0.0
    assert one_sided_pvalue(0.2, 0.0, -1) == 1.0


def test_estimate_reduces_to_weighted_difference_in_means():
    summary = random_summary(np.random.default_rng(1))
    cell = estimate(summary, 0.0, TiltSpec(1.0))
    n = np.array([s.size for s in summary.strata], float)
    dim = np.array([s.sum_y1 / s.n1 - s.sum_y0 / s.n0_obs for s in summary.strata])
    assert cell.tau_tilt == pytest.approx(n @ dim / n.sum(), abs=1e-14)


def test_estimate_two_copies_of_worked_example():
    s = StratumSummary("a", 1, 1, 1, 1)
    summary = StudySummary((s, StratumSummary("b", 1, 1, 1, 1)))
    cell = estimate(summary, 0.5, TiltSpec(2.0))
    assert cell.tau_tilt == pytest.approx(5 / 12, abs=1e-12)
    assert cell.se2 == 0.0 and cell.degenerate


def test_sweep_single_stratum_errors():
    summary = StudySummary((StratumSummary("a", 1, 1, 1, 1),))
    with pytest.raises(SweepError) as info:
        grid_sweep(summary, [0.5], [2.0])
    assert info.value.cell["rho_lb"] == 0.5


def test_sweep_cells_match_single_cell_runs():
    summary = random_summary(np.random.default_rng(3), strata=2)
    rho, gam = [0.0, 0.2, 0.4], [1.0, 1.3, 2.0]
    cells = grid_sweep(summary, rho, gam, tau0=0.05, direction=1)
    assert len(cells) == 9
    assert [(c.rho_lb, c.gamma) for c in cells] == [(r, g) for r in rho for g in gam]
    for c in cells:
        up = estimate(summary, c.rho_lb, TiltSpec(c.gamma, 0.05, 1))
        lo = estimate(summary, c.rho_lb, TiltSpec(c.gamma, 0.05, -1))
        assert c.tau_tilt == up.tau_tilt and c.se2 == up.se2
        assert c.p_upper == up.p_upper and c.p_lower == lo.p_lower
        aug = augment_study(summary, c.rho_lb)
        agg = aggregate_tilted_stat(aug, TiltSpec(c.gamma, 0.05, 1))
        assert c.tau_tilt == pytest.approx(agg.tau_tilt, abs=1e-15)


def test_sweep_lower_direction_fields():
    summary = random_summary(np.random.default_rng(4))
    cell = grid_sweep(summary, [0.1], [1.4], tau0=0.0, direction=-1)[0]
    ref = estimate(summary, 0.1, TiltSpec(1.4, 0.0, -1))
    assert cell.tau_tilt == ref.tau_tilt
    assert cell.t_stat == ref.t_stat


def test_sweep_order_and_thread_independence():
    summary = random_summary(np.random.default_rng(5), strata=20)
    rho, gam = np.linspace(0, 0.6, 7), np.linspace(1, 2, 11)
    serial = grid_sweep(summary, rho, gam, threads=1)
    parallel = grid_sweep(summary, rho, gam, threads=4)
    assert serial == parallel
    reversed_run = grid_sweep(summary, rho[::-1], gam[::-1], threads=1)
    assert {(c.rho_lb, c.gamma): c for c in reversed_run} == {(c.rho_lb, c.gamma): c for c in serial}


def test_per_stratum_uniform_gamma_reproduces_cell():
    summary = random_summary(np.random.default_rng(6))
    for g in (1.0, 1.25, 3.0):
        base = estimate(summary, 0.3, TiltSpec(g))
        per = estimate(summary, 0.3, TiltSpec(g, gamma_by_stratum={i: g for i in summary.ids}))
        assert base == per


def test_infinite_ceilings_reproduce_uniform():
    summary = random_summary(np.random.default_rng(7))
    plain = grid_sweep(summary, [0.0, 0.3], [1.0, 1.5])
    capped = grid_sweep(summary, [0.0, 0.3], [1.0, 1.5], ceilings={i: math.inf for i in summary.ids})
    assert plain == capped


def test_ceilings_cap_gamma():
    summary = random_summary(np.random.default_rng(8))
    ceilings = {i: 1.2 for i in summary.ids}
    capped = grid_sweep(summary, [0.2], [3.0], ceilings=ceilings)[0]
    assert capped == grid_sweep(summary, [0.2], [1.2])[0].__class__(**{**capped.__dict__})
    assert capped.tau_tilt == grid_sweep(summary, [0.2], [1.2])[0].tau_tilt


def test_pvalue_monotone_in_tau0_at_gamma_one():
    summary = random_summary(np.random.default_rng(9))
    p = [grid_sweep(summary, [0.0], [1.0], tau0=t)[0].p_upper for t in np.linspace(-0.5, 0.5, 41)]
    assert np.all(np.diff(p) >= 0)


def symmetric_two_strata():
    return StudySummary((StratumSummary("a", 20, 20, 12, 8), StratumSummary("b", 20, 20, 10, 5)))


def test_confset_interval_around_estimate():
    summary = symmetric_two_strata()
    tau_grid = np.round(np.arange(-0.6, 0.6001, 0.005), 10)
    row = conf_set_sweep(summary, [0.0], [1.0], tau_grid, alpha=0.05)[0]
    point = estimate(summary, 0.0, TiltSpec(1.0)).tau_tilt
    assert row.ci_low < point < row.ci_high
    kept = [t for t in tau_grid if row.ci_low <= t <= row.ci_high]
    assert row.n_kept == len(kept)  # contiguous
    assert row.ci_low <= row.tau_hl <= row.ci_high


def test_confset_fast_matches_direct():
    rng = np.random.default_rng(11)
    tau_grid = np.round(np.arange(-0.5, 0.5001, 0.01), 10)
    for _ in range(3):
        summary = random_summary(rng, strata=6)
        for rho in (0.0, 0.3):
            for gamma in (1.0, 1.4, 2.5):
                fast = conf_set_sweep(summary, [rho], [gamma], tau_grid)[0]
                direct = conf_set_direct(summary, rho, gamma, tau_grid, 0.05)
                assert fast == direct


def test_confset_alpha_near_one_shrinks():
    summary = symmetric_two_strata()
    tau_grid = np.round(np.arange(-0.6, 0.6001, 0.001), 10)
    wide = conf_set_sweep(summary, [0.0], [1.0], tau_grid, alpha=0.05)[0]
    narrow = conf_set_sweep(summary, [0.0], [1.0], tau_grid, alpha=0.999)[0]
    assert narrow.n_kept < wide.n_kept
    assert narrow.n_kept <= 3


def test_confset_empty_row_flagged():
    summary = symmetric_two_strata()
    row = conf_set_sweep(summary, [0.0], [1.0], [0.9, 0.95], alpha=0.05)[0]
    assert row.empty and math.isnan(row.ci_low) and not row.contains_zero


def test_confset_lower_median():
    summary = symmetric_two_strata()
    tau_grid = np.round(np.arange(-0.6, 0.6001, 0.005), 10)
    row = conf_set_sweep(summary, [0.0], [1.0], tau_grid)[0]
    kept = [t for t in tau_grid if row.ci_low <= t <= row.ci_high]
    assert row.tau_hl == kept[(len(kept) - 1) // 2]


def test_confset_validation():
    summary = symmetric_two_strata()
    with pytest.raises(ValueError):
        conf_set_sweep(summary, [0.0], [1.0], [0.2, 0.1])
    with pytest.raises(ValueError):
        conf_set_sweep(summary, [0.0], [1.0], [0.1], alpha=1.0)
    with pytest.raises(ValueError):
        conf_set_sweep(summary, [], [1.0], [0.1])


def test_changepoint_scan():
    rows = [
        ConfSetRow(0.0, g, 0.1, 0.2, 0.15, z)
        for g, z in zip((1.0, 1.1, 1.2, 1.3), (False, False, True, True))
    ]
    assert changepoint(rows, 0.0) == 1.2
    assert changepoint([r.__class__(**{**r.__dict__, "contains_zero": False}) for r in rows], 0.0) is None
    with pytest.raises(ValueError):
        changepoint(rows, 0.5)


def heterogeneous_study():
    return StudySummary(
        (
            StratumSummary("a", 2, 20, 1, 8),
            StratumSummary("b", 20, 2, 10, 1),
            StratumSummary("c", 5, 5, 3, 2),
            StratumSummary("d", 10, 30, 5, 12),
            StratumSummary("e", 3, 12, 1, 3),
            StratumSummary("f", 15, 6, 8, 2),
        )
    )


def test_changepoint_widens_with_gamma():
    summary = heterogeneous_study()
    tau_grid = np.round(np.arange(-0.6, 0.6001, 0.002), 10)
    rows = conf_set_sweep(summary, [0.0], np.round(np.arange(1.0, 3.0001, 0.05), 10), tau_grid)
    widths = [r.ci_high - r.ci_low for r in rows]
    assert np.all(np.diff(widths) >= -1e-12)
    cp = changepoint(rows, 0.0)
    assert cp is not None and all(r.contains_zero for r in rows if r.gamma >= cp)


def test_insignificance_onset():
    summary = heterogeneous_study()
    cells = grid_sweep(summary, [0.0, 0.2], np.round(np.arange(1.0, 8.0001, 0.05), 10))
    onset0 = insignificance_onset(cells, alpha=0.02, rho_lb=0.0)
    onset_all = insignificance_onset(cells, alpha=0.02)
    assert onset0 is not None and onset_all >= onset0


def test_overflowing_multiplier_never_rejects():
    big = StratumSummary("big", 3000, 3000, 600, 900)  # estimate -0.1
    small = StratumSummary("small", 5, 5, 4, 1)
    summary = StudySummary((big, small))
    cell = estimate(summary, 0.0, TiltSpec(3.0, 0.0, 1))
    assert cell.tau_tilt == -math.inf and cell.p_upper == 1.0
    tau_grid = np.round(np.arange(-0.3, 0.3001, 0.01), 10)
    fast = conf_set_sweep(summary, [0.0], [3.0], tau_grid)[0]
    assert fast == conf_set_direct(summary, 0.0, 3.0, tau_grid, 0.05)
