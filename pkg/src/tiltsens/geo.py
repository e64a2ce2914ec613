"""Per-stratum gamma ceilings from block-group population composition."""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .augment import augment_study
from .data import StudySummary
from .errors import DataError
from .parallel import parallel_map

log = logging.getLogger(__name__)

COMPUTED, INHERITED, ABSENT = "computed", "inherited", "absent"
BLOCKGROUP_COLUMNS = ("stratum_id", "block_group_id", "minority_frac", "population")
CEILING_COLUMNS = ("stratum_id", "ceiling", "provenance")


class DegenerateBlockGroup(DataError):
    """Block group with no white population (minority fraction 1)."""


class NoUsableBlockGroups(DataError):
    """Every block group of a stratum was excluded or has zero population."""


@dataclass(frozen=True)
class BlockGroupRecord:
    stratum_id: str
    block_group_id: str
    minority_frac: float
    weight: float

    def __post_init__(self):
        if not 0.0 <= self.minority_frac <= 1.0:
            raise DataError(f"block group {self.block_group_id}: minority_frac outside [0, 1]")
        if not self.weight >= 0.0 or math.isinf(self.weight):
            raise DataError(f"block group {self.block_group_id}: population must be finite and >= 0")


def odds(f: float) -> float:
    """Minority-to-white population odds f / (1 - f)."""
    if math.isnan(f) or f < 0.0 or f > 1.0:
        raise DataError(f"minority fraction must lie in [0, 1), got {f!r}")
    if f == 1.0:
        raise DegenerateBlockGroup("degenerate block group: no white population")
    return f / (1.0 - f)


def weighted_quantile(values: Sequence[float], weights: Sequence[float], q: float) -> float:
    """Smallest value whose cumulative weight share is at least ``q``.

    Zero-weight entries are ignored, so q=0 gives the minimum over positive
    weights. Shares are compared in exact rational arithmetic.
    """
    vals = np.asarray(values, dtype=float)
    wts = np.asarray(weights, dtype=float)
    if vals.shape != wts.shape or vals.ndim != 1:
        raise DataError("values and weights must be 1-d and equally long")
    if not 0.0 <= q <= 1.0:
        raise DataError(f"q must lie in [0, 1], got {q!r}")
    if np.any(~np.isfinite(vals)):
        raise DataError("values must be finite")
    if np.any(wts < 0) or np.any(~np.isfinite(wts)):
        raise DataError("weights must be finite and nonnegative")
    keep = wts > 0
    if not keep.any():
        raise DataError("all weights are zero")
    vals, wts = vals[keep], wts[keep]
    order = np.argsort(vals, kind="stable")
    weight_fracs = [Fraction(float(x)) for x in wts[order]]
    threshold = Fraction(q) * sum(weight_fracs)
    running = Fraction(0)
    for idx, wt in zip(order, weight_fracs):
        running += wt
        if running >= threshold:
            return float(vals[idx])
    return float(vals[order[-1]])


def _valid_odds(records: Iterable[BlockGroupRecord]) -> tuple[list[float], list[float]]:
    etas, wts = [], []
    for r in records:
        try:
            eta = odds(r.minority_frac)
        except DegenerateBlockGroup:
            log.warning("excluding block group %s in stratum %s: no white population", r.block_group_id, r.stratum_id)
            continue
        etas.append(eta)
        wts.append(r.weight)
    return etas, wts


def geo_ceiling(records: Sequence[BlockGroupRecord], xi: float) -> float:
    """Ratio of the (1 - xi) to the xi population-weighted quantile of block-group odds.

    Returns +inf (with a warning) when the lower quantile is 0 but the upper
    one is not.
    """
    if not 0.0 <= xi < 0.5:
        raise DataError(f"xi must lie in [0, 0.5), got {xi!r}")
    etas, wts = _valid_odds(records)
    if not etas or sum(wts) <= 0:
        raise NoUsableBlockGroups("no valid block-group records")
    low = weighted_quantile(etas, wts, xi)
    high = weighted_quantile(etas, wts, 1.0 - xi)
    if high == low:
        return 1.0
    if low == 0.0:
        sid = records[0].stratum_id if records else "?"
        log.warning("stratum %s: lower odds quantile is 0, ceiling is unbounded", sid)
        return math.inf
    return high / low


@dataclass(frozen=True)
class CeilingTable:
    xi: float
    ceilings: dict[str, float] = field(default_factory=dict)
    provenance: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for sid, value in self.ceilings.items():
            if not value >= 1.0:
                raise DataError(f"stratum {sid}: ceiling {value!r} is below 1")

    def resolved(self) -> dict[str, float]:
        """Ceilings keyed by stratum; strata without one are unconstrained (+inf)."""
        out = {sid: math.inf for sid in self.provenance}
        out.update(self.ceilings)
        return out

    def rows(self) -> list[tuple]:
        ids = list(self.provenance) + [s for s in self.ceilings if s not in self.provenance]
        return [(sid, self.ceilings.get(sid, math.inf), self.provenance.get(sid, COMPUTED)) for sid in ids]


def build_ceiling_table(
    records: Iterable[BlockGroupRecord],
    xi: float,
    strata_ids: Iterable[str] = (),
    threads: int | None = 1,
) -> CeilingTable:
    """Compute ceilings for every stratum with block-group data.

    Ids in ``strata_ids`` with no usable records are listed as absent.
    """
    grouped: dict[str, list[BlockGroupRecord]] = {}
    for rec in records:
        grouped.setdefault(rec.stratum_id, []).append(rec)

    def one(sid):
        try:
            return geo_ceiling(grouped[sid], xi)
        except NoUsableBlockGroups:
            log.warning("stratum %s has no usable block groups; left absent", sid)
            return None

    ids = list(grouped)
    values = parallel_map(one, ids, threads)
    ceilings, provenance = {}, {}
    for sid, value in zip(ids, values):
        if value is None:
            provenance[sid] = ABSENT
        else:
            ceilings[sid] = value
            provenance[sid] = COMPUTED
    for sid in strata_ids:
        provenance.setdefault(sid, ABSENT)
    return CeilingTable(xi, ceilings, provenance)


def inherit_ceilings(table: CeilingTable, mapping: Mapping[str, str]) -> CeilingTable:
    """Copy donor ceilings to mapped strata (one level only)."""
    ceilings = dict(table.ceilings)
    provenance = dict(table.provenance)
    for target, donor in mapping.items():
        if table.provenance.get(donor) == INHERITED or donor in mapping:
            raise DataError(f"transitive inheritance not allowed: {target} -> {donor}")
        if donor not in table.ceilings:
            log.warning("stratum %s: donor %s has no ceiling; stratum left unchanged", target, donor)
            provenance.setdefault(target, ABSENT)
            continue
        ceilings[target] = table.ceilings[donor]
        provenance[target] = INHERITED
    return CeilingTable(table.xi, ceilings, provenance)


def coverage_share(
    summary: StudySummary,
    table: CeilingTable | Mapping[str, float],
    threshold: float,
    rho: float | Mapping[str, float] = 0.0,
    augmented: bool = True,
) -> float:
    """Encounter-weighted share of strata whose ceiling is at least ``threshold``.

    Weights are augmented stratum sizes at ``rho`` (or observed sizes when
    ``augmented`` is false). Strata without a ceiling count as unbounded.
    """
    if threshold < 1.0:
        raise DataError("threshold must be >= 1")
    ceilings = table.resolved() if isinstance(table, CeilingTable) else dict(table)
    if augmented:
        sizes = augment_study(summary, rho).n_tilde
    else:
        sizes = np.array([s.size for s in summary.strata], dtype=np.int64)
    covered = np.array([ceilings.get(sid, math.inf) >= threshold for sid in summary.ids])
    total = int(sizes.sum())
    if total == 0:
        raise DataError("empty summary")
    return int(sizes[covered].sum()) / total


def load_block_groups(path: str | Path, delimiter: str = ",") -> list[BlockGroupRecord]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"input file not found: {path}")
    out = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        missing = [c for c in BLOCKGROUP_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"missing column(s): {missing}")
        for row_no, row in enumerate(reader, start=1):
            try:
                out.append(
                    BlockGroupRecord(
                        row["stratum_id"].strip(),
                        row["block_group_id"].strip(),
                        float(row["minority_frac"]),
                        float(row["population"]),
                    )
                )
            except (DataError, ValueError) as exc:
                raise DataError(f"row {row_no}: {exc}") from None
    return out


def load_donor_mapping(path: str | Path, delimiter: str = ",") -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"input file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        missing = [c for c in ("stratum_id", "donor_stratum_id") if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"missing column(s): {missing}")
        return {row["stratum_id"].strip(): row["donor_stratum_id"].strip() for row in reader}
