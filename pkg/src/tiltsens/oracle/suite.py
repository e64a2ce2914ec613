"""Oracle verification suite behind the ``verify`` command."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ..augment import AugmentedStratum, rho_lb_from_w, w_from_rho_lb
from ..data import StratumSummary
from ..tilt import TiltSpec, multiplier_matrix, overlap_pmf, prob_bounds, prob_bounds_exact, stratum_tilted_stat
from .exact import (
    brute_force_bounds,
    null_expectation_upper,
    literal_tilted_stat,
    overlap_counts,
    submodel_conditional,
    SubmodelSpec,
)
from .montecarlo import monte_carlo_type1
from .principal import (
    StratumConfig,
    augmented_full_data_gap,
    conditional_treatment_enumerated,
    conditional_treatment_formula,
    enumerated_stopped_controls,
    exact_bias,
    exhaustive_bias,
    hypergeom_stopped_controls,
)

BOUND_GAMMAS = (1.0, 1.25, 2.0, 5.0)
DISCREPANCY_COLUMNS = ("check", "case", "expected", "observed", "abs_diff")


@dataclass
class CheckResult:
    name: str
    cases: int = 0
    discrepancies: list[tuple] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.discrepancies

    def compare(self, case: str, expected, observed, tol: float = 0.0) -> None:
        self.cases += 1
        diff = abs(expected - observed)
        if diff > tol:
            self.discrepancies.append((self.name, case, expected, observed, float(diff)))


def check_bounds(max_n: int) -> CheckResult:
    res = CheckResult("bounds_vs_vertex_scan")
    for n in range(2, max_n + 1):
        for n1 in range(1, n):
            for g in BOUND_GAMMAS:
                case = f"n={n} n1={n1} gamma={g}"
                brute = brute_force_bounds(n, n1, g)
                closed = prob_bounds_exact(n, n1, g)
                res.compare(case + " lower", brute[0], closed[0])
                res.compare(case + " upper", brute[1], closed[1])
                fl = prob_bounds(n, n1, g)
                res.compare(case + " lower float", float(brute[0]), fl[0], 1e-12 * float(brute[0]))
                res.compare(case + " upper float", float(brute[1]), fl[1], 1e-12 * float(brute[1]))
    return res


def check_overlap(max_n: int) -> CheckResult:
    res = CheckResult("overlap_pmf_vs_enumeration")
    for n in range(1, max_n + 1):
        for n1 in range(1, n + 1):
            counts = overlap_counts(n, n1)
            total = math.comb(n, n1)
            j, pmf = overlap_pmf(n, n1)
            for jj, p in zip(j.tolist(), pmf.tolist()):
                res.compare(f"n={n} n1={n1} j={jj}", counts.get(jj, 0) / total, p, 1e-12)
    return res


def check_one_treated(max_n: int = 50) -> CheckResult:
    res = CheckResult("one_treated_closed_forms")
    for n in range(2, max_n + 1):
        for g in range(1, 11):
            lo, hi = prob_bounds(n, 1, float(g))
            res.compare(f"n={n} gamma={g} lower", 1 / (g * (n - 1) + 1), lo, 1e-12)
            res.compare(f"n={n} gamma={g} upper", g / (n - 1 + g), hi, 1e-12)
    return res


def _random_stratum(rng, max_n: int) -> AugmentedStratum:
    n1 = int(rng.integers(1, max_n - 1))
    n0 = int(rng.integers(1, max_n - n1 + 1))
    w = int(rng.integers(0, max_n - n1 - n0 + 1))
    base = StratumSummary("r", n1, n0, int(rng.integers(0, n1 + 1)), int(rng.integers(0, n0 + 1)))
    return AugmentedStratum(base, w)


def check_literal_statistic(rng, cases: int = 60, max_n: int = 14) -> CheckResult:
    res = CheckResult("literal_statistic_vs_multiplier")
    for k in range(cases):
        s = _random_stratum(rng, max_n)
        spec = TiltSpec(
            gamma=float(rng.choice([1.0, 1.5, 2.0, 3.0])),
            tau0=float(rng.choice([-0.25, 0.0, 0.125, 0.5])),
            direction=int(rng.choice([1, -1])),
        )
        lit = float(literal_tilted_stat(s, spec))
        res.compare(f"case {k} n={s.n_tilde} n1={s.n1}", lit, stratum_tilted_stat(s, spec), 1e-12)
    return res


def check_gamma_one(rng, cases: int = 100) -> CheckResult:
    res = CheckResult("gamma_one_degeneracy")
    for k in range(cases):
        s = _random_stratum(rng, 10)
        tau0 = float(rng.uniform(-1, 1))
        direction = int(rng.choice([1, -1]))
        res.compare(f"case {k} multiplier", 1.0, multiplier_matrix([s.n_tilde], [s.n1], [1.0])[0][0], 1e-12)
        lam = stratum_tilted_stat(s, TiltSpec(1.0, tau0, direction))
        res.compare(f"case {k} statistic", s.tau_hat_aug - tau0, lam, 1e-12)
        u = tuple(rng.uniform(0, 1, s.n_tilde))
        _, probs = submodel_conditional(SubmodelSpec(u, float(rng.normal()), 1.0), s.n1)
        res.compare(f"case {k} submodel", 0.0, float(np.max(np.abs(probs - 1 / len(probs)))), 1e-12)
    return res


def check_augmentation(rng, cases: int = 200, scan: int = 2000) -> CheckResult:
    res = CheckResult("rounding_vs_scan")
    for k in range(cases):
        n1, n0 = int(rng.integers(1, 40)), int(rng.integers(0, 40))
        rho = float(rng.uniform(0, 0.95))
        w = w_from_rho_lb(rho, n1, n0)
        target = Fraction(rho)
        gaps = [abs(target - Fraction(v, n1 + n0 + v)) for v in range(scan + 1)]
        res.compare(f"case {k} rho={rho!r} n={n1 + n0}", gaps.index(min(gaps)), w)
        feasible = rho_lb_from_w(w, n1, n0)
        res.compare(f"case {k} round trip", w, w_from_rho_lb(feasible, n1, n0))
    return res


def _random_config(rng, max_n: int = 8) -> StratumConfig:
    n = int(rng.integers(2, max_n + 1))
    n_as = int(rng.integers(1, n + 1))
    n1 = int(rng.integers(1, n))
    y1 = tuple(int(x) for x in rng.integers(0, 2, n))
    y0 = tuple(int(x) for x in rng.integers(0, 2, n_as)) + (0,) * (n - n_as)
    return StratumConfig(n1, n_as, n - n_as, y1, y0)


def check_principal(rng, cases: int = 60) -> CheckResult:
    res = CheckResult("stopped_controls_and_bias")
    for k in range(cases):
        cfg = _random_config(rng)
        pmf, enum = hypergeom_stopped_controls(cfg), enumerated_stopped_controls(cfg)
        for c in sorted(set(pmf) | set(enum)):
            res.compare(f"case {k} pmf c={c}", enum.get(c, Fraction(0)), pmf.get(c, Fraction(0)))
        for c in pmf:
            p_as, p_oms = conditional_treatment_formula(cfg, c)
            e_as, e_oms = conditional_treatment_enumerated(cfg, c)
            for i, v in enumerate(e_as):
                res.compare(f"case {k} c={c} AS slot {i}", v, p_as)
            for i, v in enumerate(e_oms):
                res.compare(f"case {k} c={c} OMS slot {i}", v, p_oms)
        if any(c >= 1 for c in pmf):
            res.compare(f"case {k} bias", exhaustive_bias(cfg, cfg.rho), exact_bias(cfg, cfg.rho))
        res.compare(f"case {k} augmented vs full", Fraction(0), augmented_full_data_gap(cfg))
    return res


def check_null_expectation(rng, cases: int = 40, max_n: int = 8) -> CheckResult:
    res = CheckResult("null_expectation_nonpositive")
    for k in range(cases):
        n = int(rng.integers(2, max_n + 1))
        n1 = int(rng.integers(1, n))
        y1 = rng.integers(0, 2, n)
        y0 = rng.integers(0, 2, n)
        tau0 = float(y1.mean() - y0.mean())
        for g in (1.5, 3.0):
            mult = tuple(float(m[0]) for m in multiplier_matrix([n], [n1], [g]))
            worst = float(null_expectation_upper(y1, y0, n1, g, tau0, mult).max())
            res.compare(f"case {k} n={n} n1={n1} gamma={g}", 0.0, max(worst, 0.0), 1e-12)
    return res


def check_type1(seed: int, reps: int = 2000) -> CheckResult:
    res = CheckResult("type1_worst_case")
    rng = np.random.default_rng(seed)
    configs = []
    for _ in range(50):
        y = tuple(int(x) for x in rng.integers(0, 2, 6))
        configs.append(StratumConfig(3, 6, 0, y, y))
    out = monte_carlo_type1(configs, 1.5, [c.y1 for c in configs], reps, seed)
    res.compare("gamma=1.5 u=y", 0.0, max(0.0, out.rate - (out.alpha + 3 * out.mc_se)))
    return res


def run_suite(seed: int = 0, max_n: int = 8, monte_carlo: bool = True) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    checks = [
        check_bounds(max_n),
        check_overlap(max_n),
        check_one_treated(),
        check_literal_statistic(rng),
        check_gamma_one(rng),
        check_augmentation(rng),
        check_principal(rng),
        check_null_expectation(rng),
    ]
    if monte_carlo:
        checks.append(check_type1(seed))
    return checks


def format_report(results: list[CheckResult], seed: int, max_n: int) -> str:
    lines = [f"oracle suite seed={seed} max_n={max_n}"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{status} {r.name}: {r.cases} cases, {len(r.discrepancies)} discrepancies")
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} checks passed")
    return "\n".join(lines) + "\n"
