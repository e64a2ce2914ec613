"""Command-line interface: summarize, estimate, sweep, confset, changepoint, calibrate, verify."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import re
import sys
import time
from decimal import Decimal, InvalidOperation
from pathlib import Path

from . import _io
from .data import (
    SUMMARY_COLUMNS,
    StudySummary,
    filter_informative,
    load_encounters,
    read_summary,
    summarize,
)
from .errors import DataError, NumericalGuardError, OracleMismatch, SweepError
from .geo import (
    CEILING_COLUMNS,
    build_ceiling_table,
    coverage_share,
    inherit_ceilings,
    load_block_groups,
    load_donor_mapping,
)
from .inference import (
    CONFSET_COLUMNS,
    SWEEP_COLUMNS,
    ConfSetRow,
    changepoint,
    conf_set_sweep,
    estimate,
    grid_sweep,
)
from .parallel import default_threads
from .tilt import TiltSpec

EXIT_OK, EXIT_VALIDATION, EXIT_GUARD, EXIT_ORACLE = 0, 1, 2, 3

log = logging.getLogger("tiltsens")


class _StderrHandler(logging.Handler):
    """Writes to whatever sys.stderr is at emit time."""

    def emit(self, record):
        sys.stderr.write(self.format(record) + "\n")


def _setup_logging() -> None:
    root = logging.getLogger("tiltsens")
    if not any(isinstance(h, _StderrHandler) for h in root.handlers):
        handler = _StderrHandler()
        handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        root.addHandler(handler)
        root.setLevel(logging.INFO)
        root.propagate = False


def parse_grid(spec: str) -> list[float]:
    """Grid from "start:stop:step" (stop included), "a,b,c", or a single number."""
    text = str(spec).strip()
    try:
        if ":" in text:
            parts = text.split(":")
            if len(parts) != 3:
                raise DataError(f"grid spec {spec!r} must be start:stop:step")
            start, stop, step = (Decimal(p) for p in parts)
            if step <= 0:
                raise DataError(f"grid step must be > 0 in {spec!r}")
            if stop < start:
                raise DataError(f"grid stop below start in {spec!r}")
            count = int((stop - start) / step) + 1
            values = [float(start + k * step) for k in range(count)]
        else:
            values = [float(Decimal(p)) for p in text.split(",") if p.strip()]
    except InvalidOperation:
        raise DataError(f"cannot parse grid spec {spec!r}") from None
    if not values:
        raise DataError(f"grid spec {spec!r} is empty")
    return values


def _direction(text: str) -> int:
    mapping = {"+1": 1, "1": 1, "upper": 1, "-1": -1, "lower": -1}
    if text not in mapping:
        raise argparse.ArgumentTypeError("direction must be +1/upper or -1/lower")
    return mapping[text]


def _load_config_tokens(path: str) -> list[str]:
    """key=value lines turned into option tokens (placed before command-line flags)."""
    tokens = []
    p = Path(path)
    if not p.is_file():
        raise DataError(f"config file not found: {path}")
    for line_no, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"config line {line_no}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        flag = "--" + key.replace("_", "-")
        if value.lower() in ("true", "yes", "on"):
            tokens.append(flag)
        elif value.lower() in ("false", "no", "off"):
            continue
        else:
            tokens.append(f"{flag}={value}")
    return tokens


def _common(parser: argparse.ArgumentParser, output: bool = True) -> None:
    parser.add_argument("--config", help="key=value file of defaults; command-line flags take precedence")
    parser.add_argument(
        "--threads", type=int, default=None, help="worker threads; unset means $TILTSENS_THREADS, then the CPU count"
    )
    if output:
        parser.add_argument("-o", "--output", help="output CSV path")
        parser.add_argument("--stdout", action="store_true", help="write the table to standard output")


def _summary_inputs(parser: argparse.ArgumentParser) -> None:
    src = parser.add_argument_group("input")
    src.add_argument("--summary", help="stratum-summary CSV (stratum_id,n1,n0_obs,sum_y1,sum_y0[,rho_lb])")
    src.add_argument("--input", help="encounter-level CSV (summarized on the fly)")
    _schema_flags(src)


def _schema_flags(group) -> None:
    group.add_argument("--stratum-col", default="stratum_id", help="stratum column name")
    group.add_argument("--treated-col", default="treated", help="treated column name")
    group.add_argument("--outcome-col", default="outcome", help="outcome column name")
    group.add_argument("--delimiter", default=",", help="field delimiter")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tiltsens",
        description="Sensitivity analysis for stratified binary outcomes with missing controls and biased encounters.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("summarize", help="reduce encounter rows to per-stratum counts", formatter_class=fmt)
    _common(p)
    p.add_argument("--input", required=True, help="encounter-level CSV")
    _schema_flags(p)
    p.add_argument("--informative", action="store_true", help="drop strata lacking a treated or control encounter")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("estimate", help="tilted estimate at one (rho, gamma, tau0, direction)", formatter_class=fmt)
    _common(p, output=False)
    _summary_inputs(p)
    p.add_argument("--rho", type=float, default=0.0, help="selection lower bound")
    p.add_argument("--gamma", type=float, default=1.0, help="encounter odds bound")
    p.add_argument("--tau0", type=float, default=0.0, help="null value")
    p.add_argument("--direction", type=_direction, default=1, help="+1 (upper) or -1 (lower)")
    p.add_argument("--ceilings", help="ceiling CSV (stratum_id,ceiling,provenance)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("sweep", help="p-values over a (rho, gamma) grid", formatter_class=fmt)
    _common(p)
    _summary_inputs(p)
    p.add_argument("--rho-grid", required=True, help="start:stop:step or comma list")
    p.add_argument("--gamma-grid", required=True, help="start:stop:step or comma list")
    p.add_argument("--tau0", type=float, default=0.0, help="null value")
    p.add_argument("--direction", type=_direction, default=1, help="+1 (upper) or -1 (lower)")
    p.add_argument("--ceilings", help="ceiling CSV")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("confset", help="confidence sets by test inversion", formatter_class=fmt)
    _common(p)
    _summary_inputs(p)
    p.add_argument("--rho-grid", required=True, help="start:stop:step or comma list")
    p.add_argument("--gamma-grid", required=True, help="start:stop:step or comma list")
    p.add_argument("--tau-grid", required=True, help="null values, ascending; start:stop:step or comma list")
    p.add_argument("--alpha", type=float, default=0.05, help="two-sided level (alpha/2 per tail)")
    p.add_argument("--ceilings", help="ceiling CSV")
    p.set_defaults(func=cmd_confset)

    p = sub.add_parser("changepoint", help="smallest gamma whose confidence set contains 0", formatter_class=fmt)
    _common(p, output=False)
    p.add_argument("--confset", required=True, help="confset CSV written by the confset command")
    p.add_argument("--rho", type=float, default=None, help="report one rho only (default: every rho present)")
    p.set_defaults(func=cmd_changepoint)

    p = sub.add_parser("calibrate", help="per-stratum gamma ceilings from block groups", formatter_class=fmt)
    _common(p)
    p.add_argument("--blockgroups", required=True, help="CSV stratum_id,block_group_id,minority_frac,population")
    p.add_argument("--xi", type=float, default=0.0, help="trimming fraction in [0, 0.5)")
    p.add_argument("--donors", help="CSV stratum_id,donor_stratum_id for ceiling inheritance")
    p.add_argument("--summary", help="stratum-summary CSV; enables the coverage report")
    p.add_argument("--threshold", type=float, default=None, help="gamma threshold for the coverage share")
    p.add_argument("--rho", type=float, default=0.0, help="rho used for augmented coverage weights")
    p.add_argument("--observed-sizes", action="store_true", help="weight coverage by observed stratum sizes")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("verify", help="run the oracle suite", formatter_class=fmt)
    _common(p, output=False)
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--max-n", type=int, default=8, help="largest stratum size for exhaustive scans (<= 14)")
    p.add_argument("--no-monte-carlo", action="store_true", help="skip the simulation check")
    p.add_argument("--discrepancies", help="CSV path for any discrepancies found")
    p.add_argument("--report", help="also write the text report to this path")
    p.set_defaults(func=cmd_verify)
    return parser


def _resolved_config(args: argparse.Namespace) -> dict:
    out = {k: v for k, v in vars(args).items() if k not in ("func", "threads", "stdout")}
    return out


def _open_output(args):
    if getattr(args, "output", None):
        return open(args.output, "w", newline="")
    if getattr(args, "stdout", False):
        return None
    raise DataError("choose an output: -o PATH or --stdout")


def _emit_table(args, columns, rows) -> None:
    fh = _open_output(args)
    try:
        _io.write_table(fh or sys.stdout, columns, rows, _resolved_config(args))
    finally:
        if fh is not None:
            fh.close()


def _schema(args) -> dict[str, str]:
    return {"stratum_id": args.stratum_col, "treated": args.treated_col, "outcome": args.outcome_col}


def _load_study(args) -> StudySummary:
    if args.summary and args.input:
        raise DataError("pass either --summary or --input, not both")
    if args.summary:
        summary = read_summary(args.summary, delimiter=args.delimiter)
    elif args.input:
        summary = summarize(load_encounters(args.input, _schema(args), args.delimiter))
    else:
        raise DataError("an input is required: --summary or --input")
    result = filter_informative(summary)
    if result.n_excluded:
        log.info(
            "excluded %d non-informative strata (%.4f of encounters)", result.n_excluded, result.excluded_share
        )
    return result.summary


def _load_ceilings(path: str | None) -> dict[str, float] | None:
    if not path:
        return None
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        if not reader.fieldnames or "stratum_id" not in reader.fieldnames or "ceiling" not in reader.fieldnames:
            raise DataError("ceiling CSV needs stratum_id and ceiling columns")
        for row in reader:
            value = float(row["ceiling"])
            if row.get("provenance", "") == "absent":
                value = math.inf
            out[row["stratum_id"]] = value
    return out


def _threads(args) -> int:
    return args.threads if args.threads is not None else default_threads()


def cmd_summarize(args) -> int:
    summary = summarize(load_encounters(args.input, _schema(args), args.delimiter))
    if args.informative:
        result = filter_informative(summary)
        log.info("excluded %d strata (%.4f of encounters)", result.n_excluded, result.excluded_share)
        summary = result.summary
    rows = [(s.stratum_id, s.n1, s.n0_obs, s.sum_y1, s.sum_y0) for s in summary.strata]
    _emit_table(args, SUMMARY_COLUMNS, rows)
    log.info("wrote %d strata", len(rows))
    return EXIT_OK


def cmd_estimate(args) -> int:
    summary = _load_study(args)
    spec = TiltSpec(gamma=args.gamma, tau0=args.tau0, direction=args.direction)
    try:
        cell = estimate(summary, args.rho, spec, _load_ceilings(args.ceilings))
    except (ValueError, ArithmeticError) as exc:
        raise SweepError({"rho_lb": args.rho, "gamma": args.gamma, "tau0": args.tau0}, exc) from exc
    p_value = cell.p_upper if args.direction == 1 else cell.p_lower
    lines = [
        _io.config_line(_resolved_config(args)),
        f"strata {len(summary)}",
        f"tau_tilt {_io.format_value(cell.tau_tilt)}",
        f"se2 {_io.format_value(cell.se2)}",
        f"se {_io.format_value(math.sqrt(cell.se2))}",
        f"t_stat {_io.format_value(cell.t_stat)}",
        f"p_value {_io.format_value(p_value)}",
        f"degenerate {_io.format_value(cell.degenerate)}",
    ]
    if cell.degenerate:
        log.warning("variance estimate is 0; p-value uses the degenerate convention")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_sweep(args) -> int:
    summary = _load_study(args)
    rho, gamma = parse_grid(args.rho_grid), parse_grid(args.gamma_grid)
    log.info("sweep: %d rho x %d gamma over %d strata", len(rho), len(gamma), len(summary))
    start = time.perf_counter()
    cells = grid_sweep(
        summary, rho, gamma, args.tau0, args.direction, _load_ceilings(args.ceilings), threads=_threads(args)
    )
    log.info("sweep finished in %.2fs", time.perf_counter() - start)
    _emit_table(args, SWEEP_COLUMNS, [c.row() for c in cells])
    return EXIT_OK


def cmd_confset(args) -> int:
    summary = _load_study(args)
    rho, gamma, tau = parse_grid(args.rho_grid), parse_grid(args.gamma_grid), parse_grid(args.tau_grid)
    log.info("confset: %d rho x %d gamma x %d tau0 over %d strata", len(rho), len(gamma), len(tau), len(summary))
    start = time.perf_counter()
    rows = conf_set_sweep(
        summary, rho, gamma, tau, args.alpha, _load_ceilings(args.ceilings), threads=_threads(args)
    )
    log.info("confset finished in %.2fs", time.perf_counter() - start)
    empty = sum(r.empty for r in rows)
    if empty:
        log.warning("%d (rho, gamma) cells kept no tau0 value", empty)
    _emit_table(args, CONFSET_COLUMNS, [r.row() for r in rows])
    return EXIT_OK


def read_confset(path: str) -> list[ConfSetRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        missing = [c for c in CONFSET_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"missing column(s): {missing}")
        for r in reader:
            rows.append(
                ConfSetRow(
                    float(r["rho_lb"]),
                    float(r["gamma"]),
                    float(r["ci_low"]),
                    float(r["ci_high"]),
                    float(r["tau_hl"]),
                    r["contains_zero"].strip().lower() == "true",
                )
            )
    return rows


def cmd_changepoint(args) -> int:
    rows = read_confset(args.confset)
    rhos = [args.rho] if args.rho is not None else sorted({r.rho_lb for r in rows})
    out = [_io.config_line(_resolved_config(args))]
    for rho in rhos:
        cp = changepoint(rows, rho)
        out.append(f"rho_lb = {_io.format_value(rho)}: changepoint = {'none' if cp is None else _io.format_value(cp)}")
    sys.stdout.write("\n".join(out) + "\n")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    records = load_block_groups(args.blockgroups)
    summary = read_summary(args.summary) if args.summary else None
    ids = summary.ids if summary is not None else ()
    table = build_ceiling_table(records, args.xi, ids, threads=_threads(args))
    if args.donors:
        table = inherit_ceilings(table, load_donor_mapping(args.donors))
    _emit_table(args, CEILING_COLUMNS, table.rows())
    counts = {}
    for prov in table.provenance.values():
        counts[prov] = counts.get(prov, 0) + 1
    log.info("ceilings: %s", ", ".join(f"{k}={v}" for k, v in sorted(counts.items())))
    if summary is not None and args.threshold is not None:
        informative = filter_informative(summary).summary
        share = coverage_share(informative, table, args.threshold, args.rho, augmented=not args.observed_sizes)
        sys.stderr.write(f"coverage share at threshold {args.threshold}: {_io.format_value(share)}\n")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .oracle.suite import DISCREPANCY_COLUMNS, format_report, run_suite

    if not 1 <= args.max_n <= 14:
        raise DataError("--max-n must lie in 1..14")
    start = time.perf_counter()
    results = run_suite(seed=args.seed, max_n=args.max_n, monte_carlo=not args.no_monte_carlo)
    report = format_report(results, args.seed, args.max_n)
    sys.stdout.write(report)
    if args.report:
        Path(args.report).write_text(report)
    if args.discrepancies:
        rows = [d for r in results for d in r.discrepancies]
        _io.write_table_file(args.discrepancies, DISCREPANCY_COLUMNS, rows)
    sys.stderr.write(f"runtime {time.perf_counter() - start:.2f}s\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_ORACLE


def _expand_config(argv: list[str]) -> list[str]:
    for i, tok in enumerate(argv):
        path = None
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
        if path is not None and argv and not argv[0].startswith("-"):
            return argv[:1] + _load_config_tokens(path) + argv[1:]
    return argv


_NEGATIVE_VALUE = re.compile(r"^-(\d|\.\d)")


def _attach_negative_values(argv: list[str]) -> list[str]:
    """Join "--flag -0.5:..." into "--flag=-0.5:..." so argparse does not read the value as an option."""
    out: list[str] = []
    for tok in argv:
        if out and out[-1].startswith("--") and "=" not in out[-1] and _NEGATIVE_VALUE.match(tok):
            out[-1] = f"{out[-1]}={tok}"
        else:
            out.append(tok)
    return out


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_attach_negative_values(_expand_config(argv)))
        return args.func(args)
    except SweepError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_GUARD if isinstance(exc.cause, ArithmeticError) else EXIT_VALIDATION
    except NumericalGuardError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_GUARD
    except OracleMismatch as exc:
        sys.stderr.write(f"oracle failure: {exc}\n")
        return EXIT_ORACLE
    except (DataError, ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
