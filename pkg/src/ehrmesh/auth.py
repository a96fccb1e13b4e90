"""Authentication, role authorization, and account lockout.

Clinicians authenticate over two channels: USSD (msisdn + PIN, identity bound
to the live session) and web (username + password, identity carried by a
bearer token with an expiry). Secrets are stored only as salted PBKDF2 hashes.
Three consecutive failures lock the account for fifteen minutes; every
authorization denial is audited.
"""

from __future__ import annotations

import hashlib
import secrets
from dataclasses import dataclass, field
from typing import Callable

from .audit import AuditLog
from .errors import EhrError

ROLES = ("PHYSICIAN", "NURSE", "PHARMACIST", "ADMIN")

LOCKOUT_ATTEMPTS = 3
LOCKOUT_WINDOW_MS = 15 * 60 * 1000
TOKEN_TTL_MS = 60 * 60 * 1000

_PBKDF2_ITERATIONS = 50_000

CLINICAL = {"PHYSICIAN", "NURSE", "PHARMACIST"}
EVERYONE = set(ROLES)

# Static role-permission table. Actions are the audit action names.
PERMISSIONS: dict[str, set[str]] = {
    "zone.register": {"ADMIN"},
    "facility.register": {"ADMIN"},
    "patient.register": {"PHYSICIAN", "NURSE", "ADMIN"},
    "patient.get": CLINICAL,
    "patient.update": {"PHYSICIAN", "NURSE"},
    "patient.history": CLINICAL,
    "encounter.record": {"PHYSICIAN", "NURSE"},
    "encounter.list": CLINICAL,
    "rx.create": {"PHYSICIAN"},
    "rx.list": CLINICAL,
    "rx.refill_request": CLINICAL,
    "rx.refill_grant": {"PHYSICIAN", "PHARMACIST"},
    "rx.expire": {"PHYSICIAN", "PHARMACIST"},
    "sync.push": EVERYONE,
    "sync.pull": EVERYONE,
    "aggregates.export": {"ADMIN"},
    "audit.verify": {"ADMIN"},
}


def hash_secret(secret: str, salt: str) -> str:
    return hashlib.pbkdf2_hmac(
        "sha256", secret.encode("utf-8"), bytes.fromhex(salt), _PBKDF2_ITERATIONS
    ).hex()


@dataclass
class Credential:
    clinician_id: str
    role: str
    facility_id: str
    msisdn: str | None
    pin_salt: str
    pin_hash: str
    password_salt: str
    password_hash: str
    failed_attempts: int = 0
    locked_until: int | None = None

    def to_dict(self) -> dict:
        return {
            "clinician_id": self.clinician_id,
            "role": self.role,
            "facility_id": self.facility_id,
            "msisdn": self.msisdn,
            "pin_salt": self.pin_salt,
            "pin_hash": self.pin_hash,
            "password_salt": self.password_salt,
            "password_hash": self.password_hash,
            "failed_attempts": self.failed_attempts,
            "locked_until": self.locked_until,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Credential":
        return cls(**doc)


@dataclass(frozen=True)
class Identity:
    clinician_id: str
    role: str
    channel: str
    facility_id: str = ""
    token: str | None = None
    expires_at: int | None = None


@dataclass
class _TokenRecord:
    clinician_id: str
    role: str
    facility_id: str
    expires_at: int


class AuthService:
    """Credential registry plus the two authentication channels."""

    def __init__(
        self,
        clock: Callable[[], int],
        audit: AuditLog,
        token_factory: Callable[[], str] | None = None,
    ):
        self._clock = clock
        self._audit = audit
        self._token_factory = token_factory or (lambda: secrets.token_hex(16))
        self._credentials: dict[str, Credential] = {}
        self._by_msisdn: dict[str, str] = {}
        self._tokens: dict[str, _TokenRecord] = {}
        self.on_change: Callable[[], None] | None = None

    # -- registry ----------------------------------------------------------

    def register_clinician(
        self,
        clinician_id: str,
        role: str,
        facility_id: str,
        pin: str,
        password: str,
        msisdn: str | None = None,
    ) -> Credential:
        if role not in ROLES:
            raise EhrError("VALIDATION", f"role must be one of {ROLES}")
        if clinician_id in self._credentials:
            raise EhrError("DUPLICATE_ID", f"clinician {clinician_id} already registered")
        if msisdn is not None and msisdn in self._by_msisdn:
            raise EhrError("DUPLICATE_ID", f"msisdn {msisdn} already bound")
        pin_salt = secrets.token_hex(8)
        password_salt = secrets.token_hex(8)
        cred = Credential(
            clinician_id=clinician_id,
            role=role,
            facility_id=facility_id,
            msisdn=msisdn,
            pin_salt=pin_salt,
            pin_hash=hash_secret(pin, pin_salt),
            password_salt=password_salt,
            password_hash=hash_secret(password, password_salt),
        )
        self._credentials[clinician_id] = cred
        if msisdn is not None:
            self._by_msisdn[msisdn] = clinician_id
        self._changed()
        return cred

    def credential(self, clinician_id: str) -> Credential | None:
        return self._credentials.get(clinician_id)

    def clinician_for_msisdn(self, msisdn: str) -> Credential | None:
        clinician_id = self._by_msisdn.get(msisdn)
        return self._credentials.get(clinician_id) if clinician_id else None

    def load_credentials(self, docs: list[dict]) -> None:
        for doc in docs:
            cred = Credential.from_dict(doc)
            self._credentials[cred.clinician_id] = cred
            if cred.msisdn is not None:
                self._by_msisdn[cred.msisdn] = cred.clinician_id

    def dump_credentials(self) -> list[dict]:
        return [c.to_dict() for c in self._credentials.values()]

    def _changed(self) -> None:
        if self.on_change is not None:
            self.on_change()

    # -- authentication ----------------------------------------------------

    def authenticate_ussd(self, msisdn: str, pin: str, now: int | None = None) -> Identity:
        now = self._clock() if now is None else now
        cred = self.clinician_for_msisdn(msisdn)
        if cred is None:
            self._audit.append(msisdn, "auth.login", "ussd", "UNKNOWN_PRINCIPAL")
            raise EhrError("UNKNOWN_PRINCIPAL", "msisdn not registered")
        self._verify_secret(cred, pin, cred.pin_salt, cred.pin_hash, "ussd", now)
        return Identity(cred.clinician_id, cred.role, "ussd", cred.facility_id)

    def authenticate_web(self, username: str, password: str, now: int | None = None) -> Identity:
        now = self._clock() if now is None else now
        cred = self._credentials.get(username)
        if cred is None:
            self._audit.append(username, "auth.login", "web", "UNKNOWN_PRINCIPAL")
            raise EhrError("UNKNOWN_PRINCIPAL", "unknown username")
        self._verify_secret(cred, password, cred.password_salt, cred.password_hash, "web", now)
        token = self._token_factory()
        expires_at = now + TOKEN_TTL_MS
        self._tokens[token] = _TokenRecord(cred.clinician_id, cred.role, cred.facility_id, expires_at)
        return Identity(
            cred.clinician_id, cred.role, "web", cred.facility_id, token=token, expires_at=expires_at
        )

    def _verify_secret(self, cred: Credential, secret: str, salt: str, expected: str, channel: str, now: int) -> None:
        if cred.locked_until is not None:
            if now < cred.locked_until:
                self._audit.append(cred.clinician_id, "auth.login", channel, "LOCKED")
                raise EhrError("LOCKED", "account locked")
            cred.locked_until = None
            cred.failed_attempts = 0
        if hash_secret(secret, salt) != expected:
            cred.failed_attempts += 1
            if cred.failed_attempts >= LOCKOUT_ATTEMPTS:
                cred.locked_until = now + LOCKOUT_WINDOW_MS
            self._changed()
            self._audit.append(cred.clinician_id, "auth.login", channel, "BAD_CREDENTIALS")
            raise EhrError("BAD_CREDENTIALS", "credential mismatch")
        cred.failed_attempts = 0
        self._changed()
        self._audit.append(cred.clinician_id, "auth.login", channel, "OK")

    # -- tokens and authorization ------------------------------------------

    def resolve_token(self, token: str, now: int | None = None) -> Identity:
        now = self._clock() if now is None else now
        record = self._tokens.get(token)
        if record is None:
            raise EhrError("BAD_CREDENTIALS", "unknown token")
        if now >= record.expires_at:
            raise EhrError("EXPIRED_TOKEN", "token expired")
        return Identity(
            record.clinician_id, record.role, "web", record.facility_id,
            token=token, expires_at=record.expires_at,
        )

    def authorize(self, identity: Identity, action: str, entity: str = "") -> None:
        allowed = PERMISSIONS.get(action)
        if allowed is None or identity.role not in allowed:
            self._audit.append(identity.clinician_id, "auth.deny", entity or action, "FORBIDDEN")
            raise EhrError("FORBIDDEN", f"{identity.role} may not {action}")
