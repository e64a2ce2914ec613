"""Encounter records and per-stratum sufficient statistics."""

from __future__ import annotations

import csv
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DataError

CANONICAL_COLUMNS = ("stratum_id", "treated", "outcome")
SUMMARY_COLUMNS = ("stratum_id", "n1", "n0_obs", "sum_y1", "sum_y0")


@dataclass(frozen=True)
class EncounterRecord:
    stratum_id: str
    treated: int
    outcome: int

    def __post_init__(self):
        if not self.stratum_id:
            raise DataError("empty stratum_id")
        if self.treated not in (0, 1):
            raise DataError(f"treated must be 0 or 1, got {self.treated!r}")
        if self.outcome not in (0, 1):
            raise DataError(f"outcome must be 0 or 1, got {self.outcome!r}")


@dataclass(frozen=True)
class StratumSummary:
    """Tallies for one stratum.

    ``n0_obs`` counts the observed controls; ``sum_y1`` and ``sum_y0`` count
    outcome-1 encounters among treated and observed controls.
    """

    stratum_id: str
    n1: int
    n0_obs: int
    sum_y1: int
    sum_y0: int

    def __post_init__(self):
        if not self.stratum_id:
            raise DataError("empty stratum_id")
        for name in ("n1", "n0_obs", "sum_y1", "sum_y0"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise DataError(f"stratum {self.stratum_id}: {name} must be a nonnegative integer")
            object.__setattr__(self, name, int(value))
        if self.sum_y1 > self.n1:
            raise DataError(f"stratum {self.stratum_id}: sum_y1 exceeds n1")
        if self.sum_y0 > self.n0_obs:
            raise DataError(f"stratum {self.stratum_id}: sum_y0 exceeds n0_obs")
        if self.n1 + self.n0_obs < 1:
            raise DataError(f"stratum {self.stratum_id}: no encounters")

    @property
    def size(self) -> int:
        return self.n1 + self.n0_obs

    @property
    def informative(self) -> bool:
        return self.n1 >= 1 and self.n0_obs >= 1


@dataclass(frozen=True)
class StudySummary:
    strata: tuple[StratumSummary, ...] = ()
    informative_only: bool = False
    # optional per-stratum selection lower bounds, keyed by stratum_id
    rho_lb: Mapping[str, float] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "strata", tuple(self.strata))
        ids = [s.stratum_id for s in self.strata]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate stratum_id in summary")
        if self.informative_only and not all(s.informative for s in self.strata):
            raise DataError("informative_only summary contains a non-informative stratum")

    def __len__(self) -> int:
        return len(self.strata)

    def __iter__(self):
        return iter(self.strata)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(s.stratum_id for s in self.strata)

    @cached_property
    def arrays(self) -> dict[str, np.ndarray]:
        """Column arrays (int64) for vectorized downstream work."""
        return {
            name: np.array([getattr(s, name) for s in self.strata], dtype=np.int64)
            for name in SUMMARY_COLUMNS[1:]
        }

    @property
    def total_encounters(self) -> int:
        return sum(s.size for s in self.strata)


@dataclass(frozen=True)
class FilterResult:
    summary: StudySummary
    n_excluded: int
    excluded_share: float


def _parse_binary(raw: str, column: str, row: int) -> int:
    text = raw.strip()
    if text not in ("0", "1"):
        raise DataError(f"row {row}: column {column!r} must be 0 or 1, got {raw!r}")
    return int(text)


def load_encounters(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    delimiter: str = ",",
) -> list[EncounterRecord]:
    """Read encounter rows from a delimited file with a header.

    ``schema`` maps canonical names (stratum_id, treated, outcome) to the
    file's column names. Row numbers in errors count data rows from 1.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"input file not found: {path}")
    names = {c: c for c in CANONICAL_COLUMNS}
    if schema:
        unknown = set(schema) - set(CANONICAL_COLUMNS)
        if unknown:
            raise DataError(f"unknown canonical column(s) in schema: {sorted(unknown)}")
        names.update(schema)

    records = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        header = reader.fieldnames or []
        missing = [names[c] for c in CANONICAL_COLUMNS if names[c] not in header]
        if missing:
            raise DataError(f"missing column(s): {missing}")
        for row_no, row in enumerate(reader, start=1):
            sid = (row[names["stratum_id"]] or "").strip()
            if not sid:
                raise DataError(f"row {row_no}: empty stratum_id")
            records.append(
                EncounterRecord(
                    sid,
                    _parse_binary(row[names["treated"]] or "", names["treated"], row_no),
                    _parse_binary(row[names["outcome"]] or "", names["outcome"], row_no),
                )
            )
    return records


def summarize(records: Iterable[EncounterRecord]) -> StudySummary:
    """Tally records per stratum, in order of first appearance."""
    tallies: dict[str, list[int]] = {}
    for rec in records:
        t = tallies.setdefault(rec.stratum_id, [0, 0, 0, 0])
        if rec.treated:
            t[0] += 1
            t[2] += rec.outcome
        else:
            t[1] += 1
            t[3] += rec.outcome
    return StudySummary(tuple(StratumSummary(sid, *t) for sid, t in tallies.items()))


def filter_informative(summary: StudySummary) -> FilterResult:
    """Keep strata with at least one treated and one observed control."""
    kept = tuple(s for s in summary.strata if s.informative)
    if not kept:
        raise DataError("no informative strata")
    total = summary.total_encounters
    dropped = total - sum(s.size for s in kept)
    rho = summary.rho_lb
    if rho is not None:
        rho = {s.stratum_id: rho[s.stratum_id] for s in kept if s.stratum_id in rho}
    return FilterResult(
        StudySummary(kept, informative_only=True, rho_lb=rho),
        n_excluded=len(summary.strata) - len(kept),
        excluded_share=dropped / total if total else 0.0,
    )


def read_summary(path: str | Path, delimiter: str = ",") -> StudySummary:
    """Load a stratum-summary CSV; an optional ``rho_lb`` column is kept."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"input file not found: {path}")
    strata = []
    rho: dict[str, float] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader((line for line in fh if not line.startswith("#")), delimiter=delimiter)
        header = reader.fieldnames or []
        missing = [c for c in SUMMARY_COLUMNS if c not in header]
        if missing:
            raise DataError(f"missing column(s): {missing}")
        for row_no, row in enumerate(reader, start=1):
            try:
                counts = [int(row[c]) for c in SUMMARY_COLUMNS[1:]]
            except ValueError as exc:
                raise DataError(f"row {row_no}: non-integer count ({exc})") from None
            try:
                strata.append(StratumSummary(row["stratum_id"].strip(), *counts))
            except DataError as exc:
                raise DataError(f"row {row_no}: {exc}") from None
            if "rho_lb" in header and row["rho_lb"].strip():
                rho[row["stratum_id"].strip()] = float(row["rho_lb"])
    return StudySummary(tuple(strata), rho_lb=rho or None)
