"""Clinical domain records and field-level validation."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone

from .errors import EhrError

SEXES = ("F", "M", "X")
RX_STATUSES = ("ACTIVE", "REFILL_REQUESTED", "EXPIRED")
# How a facility reaches records: web clients, an offline-capable mobile
# replica, or USSD feature phones.
MODALITIES = ("WES", "MES", "UES")


@dataclass(frozen=True)
class Zone:
    zone_id: str
    name: str


@dataclass(frozen=True)
class Facility:
    facility_id: str
    name: str
    zone_id: str
    modality: str


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    name: str
    birth_date: str
    sex: str
    zone_id: str
    allergies: tuple[str, ...]
    registered_at: int


@dataclass(frozen=True)
class Encounter:
    encounter_id: str
    patient_id: str
    facility_id: str
    clinician_id: str
    occurred_at: int
    diagnosis_codes: tuple[str, ...]
    note: str


@dataclass(frozen=True)
class Prescription:
    rx_id: str
    patient_id: str
    drug_code: str
    dose: str
    refills_remaining: int
    status: str
    prescribed_at: int


def date_of_ms(ms: int) -> str:
    return datetime.fromtimestamp(ms / 1000.0, tz=timezone.utc).strftime("%Y-%m-%d")


def month_of_ms(ms: int) -> str:
    return datetime.fromtimestamp(ms / 1000.0, tz=timezone.utc).strftime("%Y-%m")


def require_text(value: object, field: str) -> str:
    if not isinstance(value, str) or not value.strip():
        raise EhrError("VALIDATION", f"{field} must be non-empty text")
    return value


def require_sex(value: object) -> str:
    if value not in SEXES:
        raise EhrError("VALIDATION", f"sex must be one of {SEXES}")
    return value  # type: ignore[return-value]


def require_birth_date(value: object, now_ms: int) -> str:
    text = require_text(value, "birth_date")
    try:
        parsed = datetime.strptime(text, "%Y-%m-%d")
    except ValueError as exc:
        raise EhrError("VALIDATION", f"birth_date not a calendar date: {text!r}") from exc
    if parsed.strftime("%Y-%m-%d") > date_of_ms(now_ms):
        raise EhrError("VALIDATION", "birth_date is in the future")
    return text


def require_codes(value: object, field: str) -> list[str]:
    if value is None:
        return []
    if not isinstance(value, (list, tuple)) or not all(isinstance(c, str) and c for c in value):
        raise EhrError("VALIDATION", f"{field} must be a sequence of coded terms")
    return list(value)
