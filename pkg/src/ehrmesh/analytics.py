"""Anonymized zone-level aggregates for public-health use.

Counts encounters per (zone, month, diagnosis code), then withdraws rows
that could identify individuals: every row whose zone has fewer than k
registered patients, and every row whose own count is below k (a populous
zone can still have one identifiable case). Withdrawn means absent from the
output, not zeroed. Exports carry no patient identifiers at all.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .errors import EhrError
from .model import month_of_ms
from .store import ReplicatedStore

DEFAULT_K = 5

_PERIOD_RE = re.compile(r"^\d{4}-(0[1-9]|1[0-2])$")


@dataclass(frozen=True)
class ZoneAggregate:
    zone_id: str
    period: str
    condition_code: str
    count: int

    def to_dict(self) -> dict:
        return {
            "zone_id": self.zone_id,
            "period": self.period,
            "condition_code": self.condition_code,
            "count": self.count,
        }


def require_period(period: str) -> str:
    if not isinstance(period, str) or not _PERIOD_RE.match(period):
        raise EhrError("VALIDATION", f"period must be YYYY-MM, got {period!r}")
    return period


def zone_populations(store: ReplicatedStore) -> dict[str, int]:
    """Registered patients per zone (the population-density proxy)."""
    counts: Counter[str] = Counter()
    for _, patient in store.view.all("patient"):
        counts[patient["zone_id"]] += 1
    return dict(counts)


def build_aggregates(store: ReplicatedStore, period: str) -> list[ZoneAggregate]:
    """One row per (zone, condition) with a positive count in the period.

    An encounter carrying several diagnosis codes contributes to each code's
    cell; the patient's registered zone locates the row.
    """
    require_period(period)
    zones: dict[str, str] = {
        patient_id: patient["zone_id"] for patient_id, patient in store.view.all("patient")
    }
    cells: Counter[tuple[str, str]] = Counter()
    for _, encounter in store.view.all("encounter"):
        if month_of_ms(encounter["occurred_at"]) != period:
            continue
        zone_id = zones.get(encounter["patient_id"])
        if zone_id is None:
            continue
        for code in encounter["diagnosis_codes"]:
            cells[(zone_id, code)] += 1
    return [
        ZoneAggregate(zone_id, period, code, count)
        for (zone_id, code), count in sorted(cells.items())
        if count > 0
    ]


def suppress_small_zones(rows: list[ZoneAggregate], store: ReplicatedStore, k: int) -> list[ZoneAggregate]:
    """Withdraw rows from under-populated zones and rows with small counts."""
    if k < 1:
        raise EhrError("VALIDATION", "k must be >= 1")
    populations = zone_populations(store)
    return [
        row
        for row in rows
        if populations.get(row.zone_id, 0) >= k and row.count >= k
    ]


def export_anonymized(
    rows: list[ZoneAggregate],
    store: ReplicatedStore,
    k: int,
    period: str,
    sink: str | Path | None = None,
) -> dict:
    """Emit the export document; refuses input that was not suppressed."""
    populations = zone_populations(store)
    for row in rows:
        if populations.get(row.zone_id, 0) < k or row.count < k:
            raise EhrError(
                "UNSUPPRESSED_INPUT",
                f"row ({row.zone_id}, {row.condition_code}) violates k={k}",
            )
    document = {
        "period": period,
        "k": k,
        "rows": [row.to_dict() for row in rows],
    }
    if sink is not None:
        Path(sink).write_text(
            json.dumps(document, sort_keys=True, indent=1) + "\n", encoding="utf-8"
        )
    return document
