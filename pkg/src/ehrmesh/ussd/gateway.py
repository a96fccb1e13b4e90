"""USSD gateway: the interface between the phone network and the EHR system.

Accepts PDUs ({session_id, msisdn, kind, text}), owns the session table, and
routes authenticated input into the menu engine. All store access goes
through the backend service object; when the gateway's uplink is down those
calls raise LINK_DOWN and the dialogue ends with a service-unavailable
message, but the session machinery itself never touches the network.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..auth import Identity
from ..errors import EhrError, LinkDown
from .menu import (
    MAX_TEXT,
    CommandOutcome,
    MenuEngine,
    MenuItem,
    Command,
    MenuTree,
    StepResult,
    default_tree,
)
from ..model import date_of_ms

PDU_KINDS = ("BEGIN", "CONTINUE", "END", "ABORT")

DEFAULT_SHORTCODE = "*384#"
DEFAULT_TIMEOUT_S = 90

MSG_ENTER_PIN = "Enter PIN:"
MSG_BAD_PIN = "Incorrect PIN. Enter PIN:"
MSG_LOCKED = "Account locked. Try again later."
MSG_UNREGISTERED = "This number is not registered."
MSG_EXPIRED = "Session expired. Dial again."
MSG_UNAVAILABLE = "Service unavailable. Try again later."
MSG_OVERLONG = "Input too long."
MSG_WRONG_CODE = "Unknown service code."

# Dynamic item sources that emit actionable items, and the command they bind.
SOURCE_COMMANDS = {"refillable": "request_refill"}


@dataclass(frozen=True)
class UssdPdu:
    session_id: str
    msisdn: str
    kind: str
    text: str

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "msisdn": self.msisdn,
            "kind": self.kind,
            "text": self.text,
        }

    @classmethod
    def from_dict(cls, doc: object) -> "UssdPdu":
        if not isinstance(doc, dict):
            raise EhrError("VALIDATION", "pdu must be an object")
        try:
            pdu = cls(
                session_id=str(doc["session_id"]),
                msisdn=str(doc["msisdn"]),
                kind=str(doc["kind"]),
                text=str(doc["text"]),
            )
        except KeyError as exc:
            raise EhrError("VALIDATION", f"pdu missing field {exc}") from exc
        if pdu.kind not in PDU_KINDS:
            raise EhrError("VALIDATION", f"pdu kind must be one of {PDU_KINDS}")
        return pdu


@dataclass
class UssdSession:
    session_id: str
    msisdn: str
    created_at: int
    last_activity: int
    state: str = "AWAIT_PIN"  # AWAIT_PIN | MENU | PROMPT | CLOSED
    authenticated: Optional[str] = None
    identity: Optional[Identity] = None
    menu_stack: list = field(default_factory=list)
    pending_prompt: Optional[tuple] = None
    context: dict = field(default_factory=dict)
    current_items: list = field(default_factory=list)
    page_count: int = 1
    exchanges: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


class GatewayBindings:
    """Menu bindings that resolve dynamic screens and commands via the backend."""

    def __init__(self, gateway: "UssdGateway"):
        self.gateway = gateway

    def items_for(self, source: str, session: UssdSession) -> list[MenuItem]:
        service = self.gateway.service
        identity = session.identity
        patient_id = session.context.get("patient_id", "")
        if source == "history":
            entries = service.patient_history(identity, patient_id)
            return [MenuItem(_history_label(entry)) for entry in entries]
        if source == "prescriptions":
            rows = service.prescriptions_for(identity, patient_id)
            return [MenuItem(_rx_label(row)) for row in rows]
        if source == "refillable":
            rows = service.prescriptions_for(identity, patient_id)
            return [
                MenuItem(_rx_label(row), Command("request_refill"), arg=row["rx_id"])
                for row in rows
                if row["status"] == "ACTIVE" and row["refills_remaining"] > 0
            ]
        if source == "inbox":
            rows = service.encounters_at(identity, identity.facility_id)
            return [MenuItem(_inbox_label(row)) for row in rows]
        raise EhrError("VALIDATION", f"unknown item source {source!r}")

    def prompt_error(self, prompt_field: str, value: str, session: UssdSession) -> Optional[str]:
        if not value:
            return "Cannot be empty."
        if prompt_field == "patient_id":
            try:
                self.gateway.service.get_patient(session.identity, value)
            except LinkDown:
                raise
            except EhrError as err:
                if err.code == "NOT_FOUND":
                    return "Patient not found."
                if err.code == "FORBIDDEN":
                    return "Not allowed."
                return "Lookup failed."
        return None

    def run_command(self, op: str, session: UssdSession, arg: Optional[str]) -> CommandOutcome:
        service = self.gateway.service
        identity = session.identity
        now = self.gateway.current_ms
        try:
            if op == "record_observation":
                service.record_encounter(
                    identity,
                    {
                        "patient_id": session.context["patient_id"],
                        "facility_id": identity.facility_id,
                        "clinician_id": identity.clinician_id,
                        "occurred_at": now,
                        "diagnosis_codes": ["OBS"],
                        "note": session.context["observation"],
                    },
                )
                return CommandOutcome("Observation recorded.")
            if op == "record_note":
                service.record_encounter(
                    identity,
                    {
                        "patient_id": session.context["patient_id"],
                        "facility_id": identity.facility_id,
                        "clinician_id": identity.clinician_id,
                        "occurred_at": now,
                        "diagnosis_codes": ["NOTE"],
                        "note": session.context["note"],
                    },
                )
                return CommandOutcome("Note recorded.")
            if op == "request_refill":
                service.request_refill(identity, arg)
                return CommandOutcome("Refill requested.")
        except LinkDown:
            raise
        except EhrError as err:
            if err.code == "NO_REFILLS_LEFT":
                return CommandOutcome("No refills left.")
            if err.code == "NOT_ACTIVE":
                return CommandOutcome("Not refillable.")
            if err.code == "FORBIDDEN":
                return CommandOutcome("Not allowed.")
            return CommandOutcome(f"Error: {err.code}")
        raise EhrError("VALIDATION", f"unknown command {op!r}")


def _history_label(entry: dict) -> str:
    date = date_of_ms(entry["occurred_at"] if entry["kind"] == "encounter" else entry["prescribed_at"])
    if entry["kind"] == "prescription":
        return f"{date} Rx {entry['drug_code']}"
    codes = ",".join(entry["diagnosis_codes"]) or "visit"
    note = f" {entry['note']}" if entry.get("note") else ""
    return f"{date} {codes}{note}"


def _rx_label(row: dict) -> str:
    return f"{row['drug_code']} {row['dose']} R{row['refills_remaining']} {row['status']}"


def _inbox_label(row: dict) -> str:
    codes = ",".join(row["diagnosis_codes"]) or "visit"
    return f"{date_of_ms(row['occurred_at'])} {row['patient_id'][:10]} {codes}"


class UssdGateway:
    """Session table plus PDU dispatch.

    PDUs for distinct sessions may be handled concurrently; within one
    session they are serialized by the session lock. Every response is capped
    at 182 characters by the renderer.
    """

    def __init__(
        self,
        service,
        tree: MenuTree | None = None,
        shortcode: str = DEFAULT_SHORTCODE,
        timeout_s: int = DEFAULT_TIMEOUT_S,
    ):
        self.service = service
        self.shortcode = shortcode
        self.timeout_ms = timeout_s * 1000
        self.engine = MenuEngine(tree or default_tree(), GatewayBindings(self))
        self.sessions: dict[str, UssdSession] = {}
        self.current_ms = 0
        self._table_lock = threading.Lock()
        self._by_msisdn: dict[str, str] = {}

    # -- session table -------------------------------------------------------

    def _close(self, session: UssdSession) -> None:
        session.state = "CLOSED"
        with self._table_lock:
            if self._by_msisdn.get(session.msisdn) == session.session_id:
                del self._by_msisdn[session.msisdn]

    def abort_session(self, session_id: str) -> None:
        """Network-signalled abort (e.g. the USSD channel dropped)."""
        session = self.sessions.get(session_id)
        if session is not None and session.state != "CLOSED":
            self._close(session)

    def expire_sessions(self, now: int) -> int:
        """Close every session idle past the timeout; returns how many."""
        expired = 0
        with self._table_lock:
            candidates = list(self.sessions.values())
        for session in candidates:
            if session.state != "CLOSED" and now - session.last_activity > self.timeout_ms:
                self._close(session)
                expired += 1
        return expired

    def live_session_count(self) -> int:
        return sum(1 for s in self.sessions.values() if s.state != "CLOSED")

    # -- dispatch -------------------------------------------------------------

    def handle_pdu(self, pdu: UssdPdu | dict, now: int) -> UssdPdu:
        pdu = UssdPdu.from_dict(pdu) if isinstance(pdu, dict) else pdu
        self.current_ms = now
        if pdu.kind == "BEGIN":
            return self._begin(pdu, now)
        if pdu.kind in ("END", "ABORT"):
            self.abort_session(pdu.session_id)
            return self._reply(pdu, "END", "")
        return self._continue(pdu, now)

    def _begin(self, pdu: UssdPdu, now: int) -> UssdPdu:
        if pdu.text != self.shortcode:
            return self._reply(pdu, "END", MSG_WRONG_CODE)
        with self._table_lock:
            previous = self._by_msisdn.get(pdu.msisdn)
        if previous is not None:
            # Real networks allow one live dialogue per subscriber.
            self.abort_session(previous)
        try:
            registered = self.service.msisdn_registered(pdu.msisdn)
        except LinkDown:
            return self._reply(pdu, "END", MSG_UNAVAILABLE)
        if not registered:
            return self._reply(pdu, "END", MSG_UNREGISTERED)
        session = UssdSession(
            session_id=pdu.session_id,
            msisdn=pdu.msisdn,
            created_at=now,
            last_activity=now,
            exchanges=1,
        )
        with self._table_lock:
            self.sessions[pdu.session_id] = session
            self._by_msisdn[pdu.msisdn] = pdu.session_id
        return self._reply(pdu, "CONTINUE", MSG_ENTER_PIN)

    def _continue(self, pdu: UssdPdu, now: int) -> UssdPdu:
        session = self.sessions.get(pdu.session_id)
        if session is None or session.state == "CLOSED":
            return self._reply(pdu, "END", MSG_EXPIRED)
        with session.lock:
            if now - session.last_activity > self.timeout_ms:
                self._close(session)
                return self._reply(pdu, "END", MSG_EXPIRED)
            session.last_activity = now
            session.exchanges += 1
            if len(pdu.text) > MAX_TEXT:
                return self._overlong(pdu, session)
            try:
                if session.state == "AWAIT_PIN":
                    return self._check_pin(pdu, session, now)
                result = self.engine.step(session, pdu.text)
            except LinkDown:
                self._close(session)
                return self._reply(pdu, "END", MSG_UNAVAILABLE)
            return self._finish_step(pdu, session, result)

    def _check_pin(self, pdu: UssdPdu, session: UssdSession, now: int) -> UssdPdu:
        try:
            identity = self.service.authenticate_ussd(pdu.msisdn, pdu.text.strip(), now)
        except LinkDown:
            self._close(session)
            return self._reply(pdu, "END", MSG_UNAVAILABLE)
        except EhrError as err:
            if err.code == "LOCKED":
                self._close(session)
                return self._reply(pdu, "END", MSG_LOCKED)
            if err.code == "UNKNOWN_PRINCIPAL":
                self._close(session)
                return self._reply(pdu, "END", MSG_UNREGISTERED)
            return self._reply(pdu, "CONTINUE", MSG_BAD_PIN)
        session.identity = identity
        session.authenticated = identity.clinician_id
        result = self.engine.enter_root(session)
        return self._finish_step(pdu, session, result)

    def _overlong(self, pdu: UssdPdu, session: UssdSession) -> UssdPdu:
        if session.state == "AWAIT_PIN":
            return self._reply(pdu, "CONTINUE", f"{MSG_OVERLONG}\n{MSG_ENTER_PIN}")
        if session.state == "PROMPT":
            hint = session.pending_prompt[1]
            return self._reply(pdu, "CONTINUE", f"{MSG_OVERLONG}\n{hint}")
        result = self.engine.render_current(session, prefix=MSG_OVERLONG)
        return self._reply(pdu, "CONTINUE", result.text)

    def _finish_step(self, pdu: UssdPdu, session: UssdSession, result: StepResult) -> UssdPdu:
        if result.end:
            self._close(session)
            return self._reply(pdu, "END", result.text)
        return self._reply(pdu, "CONTINUE", result.text)

    def _reply(self, pdu: UssdPdu, kind: str, text: str) -> UssdPdu:
        if len(text) > MAX_TEXT:  # pragma: no cover - renderer enforces the budget
            text = text[: MAX_TEXT - 2] + ".."
        return UssdPdu(session_id=pdu.session_id, msisdn=pdu.msisdn, kind=kind, text=text)
