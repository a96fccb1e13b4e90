"""Deterministic simulated network and power environment.

A discrete-event world in virtual milliseconds: the central store, one
replica per facility, the USSD gateway, and the links between them all read
time and randomness from the simulation, so a scenario script plus its seed
fully determines the trace, byte for byte. Links carry latency and an UP/DOWN
schedule; a facility power cut drops its links and wipes the replica's
in-memory state (the durable log survives and is replayed on restore).

Scenario scripts are JSON: ``{"seed": N, "horizon_ms": T, "links": [...],
"commands": [{"at_ms": T, "type": ...}, ...]}``. Traces are JSON lines, one
record per command, delivery, drop, and assertion.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .audit import AuditLog
from .auth import AuthService
from .errors import EhrError, LinkDown
from .events import random_id_factory
from .service import EhrService
from .store import ReplicatedStore
from .sync import CentralEndpoint, sync_round
from .ussd.gateway import UssdGateway, UssdPdu

UPLINK = "UPLINK"
DEFAULT_LATENCY_MS = 20
# Scenario time is relative; stores see epoch + t so calendar fields
# (birth dates, months) behave. 2026-01-01T00:00:00Z.
DEFAULT_EPOCH_MS = 1_767_225_600_000


def internet_link(facility_id: str) -> str:
    return f"INTERNET:{facility_id}"


def ussd_link(msisdn: str) -> str:
    return f"USSD:{msisdn}"


@dataclass
class Link:
    key: str
    base_latency_ms: int = DEFAULT_LATENCY_MS
    jitter_ms: int = 0
    jitter_seed: int = 0
    transitions: list[tuple[int, str]] = field(default_factory=list)
    _rng: random.Random | None = None

    def state_at(self, at_ms: int) -> str:
        state = "UP"
        for when, new_state in self.transitions:
            if when <= at_ms:
                state = new_state
            else:
                break
        return state

    def set_state(self, at_ms: int, state: str) -> None:
        self.transitions.append((at_ms, state))

    def jitter(self) -> int:
        if not self.jitter_ms:
            return 0
        return self._rng.randint(0, self.jitter_ms)


class Trace:
    """Ordered record of everything the world did."""

    def __init__(self) -> None:
        self.records: list[dict] = []

    def add(self, record: dict) -> None:
        self.records.append(record)

    @property
    def failures(self) -> list[dict]:
        return [r for r in self.records if r.get("type") == "assert" and r.get("outcome") == "FAIL"]

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n"
            for record in self.records
        )

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


class LinkedService:
    """Backend proxy that moves every call over a simulated link."""

    _METHODS = {
        "authenticate_ussd",
        "msisdn_registered",
        "get_patient",
        "patient_history",
        "prescriptions_for",
        "record_encounter",
        "request_refill",
        "encounters_at",
    }

    def __init__(self, world: "World", link_key: str, inner: EhrService):
        self._world = world
        self._link_key = link_key
        self._inner = inner

    def __getattr__(self, name: str):
        if name not in self._METHODS:
            raise AttributeError(name)
        inner_fn = getattr(self._inner, name)

        def call(*args, **kwargs):
            self._world.deliver(f"svc.{name}", self._link_key)
            result = inner_fn(*args, **kwargs)
            self._world.deliver(f"svc.{name}.resp", self._link_key)
            return result

        return call


class LinkedEndpoint:
    """Sync endpoint reached over a facility's internet link."""

    def __init__(self, world: "World", link_key: str, inner: CentralEndpoint):
        self._world = world
        self._link_key = link_key
        self._inner = inner

    def push(self, replica_id: str, events: list[dict]) -> dict:
        self._world.deliver(f"sync.push[{len(events)}]", self._link_key)
        response = self._inner.push(replica_id, events)
        self._world.deliver("sync.push.resp", self._link_key)
        return response

    def pull(self, replica_id: str, cursor: int) -> dict:
        self._world.deliver(f"sync.pull[{cursor}]", self._link_key)
        response = self._inner.pull(replica_id, cursor)
        self._world.deliver(f"sync.pull.resp[{len(response['events'])}]", self._link_key)
        return response


class World:
    """One simulated deployment driven by a scenario script."""

    def __init__(self, script: dict, seed: int | None = None):
        self.script = script
        self.seed = script.get("seed", 0) if seed is None else seed
        self.epoch = int(script.get("epoch_ms", DEFAULT_EPOCH_MS))
        self.horizon = int(script["horizon_ms"])
        self.rng = random.Random(self.seed)
        self.now = self.epoch
        self.trace = Trace()
        self._screens: list[dict] = []

        clock = lambda: self.now  # noqa: E731 - the world is the clock
        self.clock = clock
        ids = random_id_factory(self.rng)
        audit = AuditLog(clock)
        self.central = ReplicatedStore("central", clock=clock, id_factory=ids, audit=audit)
        self.auth = AuthService(
            clock, audit, token_factory=lambda: format(self.rng.getrandbits(128), "032x")
        )
        self.service = EhrService(self.central, self.auth)
        self.endpoint = CentralEndpoint(self.central)
        self.replicas: dict[str, ReplicatedStore] = {}
        self.links: dict[str, Link] = {}
        self.auto_sync = bool(script.get("auto_sync_on_link_up", False))
        self._register_link(UPLINK, {})

        gateway_cfg = script.get("gateway", {})
        self.gateway = UssdGateway(
            LinkedService(self, UPLINK, self.service),
            shortcode=gateway_cfg.get("shortcode", "*384#"),
            timeout_s=int(gateway_cfg.get("session_timeout_s", 90)),
        )

        for link_doc in script.get("links", []):
            self._register_link(link_doc["link"], link_doc)

        self._queue: list[tuple[int, int, dict]] = []
        previous = 0
        for index, command in enumerate(script.get("commands", [])):
            at_ms = int(command["at_ms"])
            if at_ms < previous:
                raise EhrError("VALIDATION", "commands must be sorted by at_ms")
            if at_ms > self.horizon:
                raise EhrError("VALIDATION", f"command at {at_ms} beyond horizon {self.horizon}")
            previous = at_ms
            self._queue.append((self.epoch + at_ms, index, command))

    # -- links ---------------------------------------------------------------

    def _register_link(self, key: str, doc: dict) -> Link:
        link = Link(
            key=key,
            base_latency_ms=int(doc.get("base_latency_ms", DEFAULT_LATENCY_MS)),
            jitter_ms=int(doc.get("jitter_ms", 0)),
            jitter_seed=int(doc.get("jitter_seed", 0)),
        )
        # Per-link stream: stable regardless of traffic on other links.
        digest = hashlib.sha256(f"{self.seed}:{key}:{link.jitter_seed}".encode()).digest()
        link._rng = random.Random(int.from_bytes(digest[:8], "big"))
        intervals = doc.get("intervals", [])
        self._load_intervals(link, intervals)
        self.links[key] = link
        return link

    def _load_intervals(self, link: Link, intervals: list[dict]) -> None:
        if not intervals:
            return
        cursor = 0
        for interval in intervals:
            start, end = int(interval["from_ms"]), int(interval["to_ms"])
            if start != cursor or end <= start:
                raise EhrError(
                    "VALIDATION",
                    f"link {link.key}: intervals must ascend contiguously from 0",
                )
            if interval["state"] not in ("UP", "DOWN"):
                raise EhrError("VALIDATION", "interval state must be UP or DOWN")
            link.set_state(self.epoch + start, interval["state"])
            cursor = end
        if cursor < self.horizon:
            raise EhrError("VALIDATION", f"link {link.key}: intervals must cover the horizon")

    def deliver(self, message: str, link_key: str, at_ms: int | None = None) -> int:
        """Send one message; returns the arrival time or raises LINK_DOWN.

        Every call lands in the trace as exactly one delivery or one drop.
        """
        at = self.now if at_ms is None else at_ms
        link = self.links.get(link_key)
        if link is None:
            raise EhrError("UNKNOWN_LINK", link_key)
        if link.state_at(at) == "DOWN":
            self.trace.add(
                {"type": "drop", "at": at - self.epoch, "link": link_key, "message": message}
            )
            raise LinkDown(link_key)
        arrival = at + link.base_latency_ms + link.jitter()
        self.trace.add(
            {
                "type": "delivery",
                "at": at - self.epoch,
                "arrival": arrival - self.epoch,
                "link": link_key,
                "message": message,
            }
        )
        return arrival

    # -- time ------------------------------------------------------------------

    def advance(self, to_ms: int) -> "World":
        """Process everything due through (relative) to_ms, ties in insertion order."""
        target = self.epoch + to_ms
        if target < self.now:
            raise EhrError("VALIDATION", "time cannot go backwards")
        while self._queue and self._queue[0][0] <= target:
            at, _, command = self._queue.pop(0)
            self.now = at
            self._execute(command)
        self.now = target
        return self

    def run(self) -> Trace:
        self.advance(self.horizon)
        return self.trace

    # -- command dispatch --------------------------------------------------------

    def _execute(self, command: dict) -> None:
        handler = getattr(self, f"_cmd_{command['type']}", None)
        if handler is None:
            raise EhrError("VALIDATION", f"unknown command type {command['type']!r}")
        result, traced = handler(command)
        self.trace.add(
            {"type": "command", "at": self.now - self.epoch, "command": traced, "result": result}
        )

    def _cmd_seed(self, command: dict):
        data = command["data"]
        counts = {"zones": 0, "facilities": 0, "clinicians": 0, "patients": 0,
                  "prescriptions": 0, "encounters": 0}
        for zone in data.get("zones", []):
            self.central.register_zone(zone["zone_id"], zone["name"], actor="seed")
            counts["zones"] += 1
        for facility in data.get("facilities", []):
            self.central.register_facility(
                facility["facility_id"], facility["name"], facility["zone_id"],
                facility.get("modality", "MES"), actor="seed",
            )
            self._add_facility(facility["facility_id"])
            counts["facilities"] += 1
        for clinician in data.get("clinicians", []):
            self.auth.register_clinician(
                clinician["clinician_id"], clinician["role"], clinician["facility_id"],
                pin=clinician.get("pin", ""), password=clinician.get("password", ""),
                msisdn=clinician.get("msisdn"),
            )
            if clinician.get("msisdn"):
                self._register_link(ussd_link(clinician["msisdn"]), {})
            counts["clinicians"] += 1
        for patient in data.get("patients", []):
            self.central.register_patient(patient, actor="seed")
            counts["patients"] += 1
        for rx in data.get("prescriptions", []):
            self.central.create_prescription(rx, actor="seed")
            counts["prescriptions"] += 1
        for encounter in data.get("encounters", []):
            self.central.record_encounter(encounter, actor="seed")
            counts["encounters"] += 1
        redacted = {"data": {k: v for k, v in counts.items() if v}}
        return counts, {"type": "seed", **redacted}

    def _add_facility(self, facility_id: str) -> None:
        replica = ReplicatedStore(
            facility_id,
            clock=self.clock,
            id_factory=random_id_factory(self.rng),
            audit=AuditLog(self.clock),
        )
        self.replicas[facility_id] = replica
        if internet_link(facility_id) not in self.links:
            self._register_link(internet_link(facility_id), {})

    _WRITE_OPS = {
        "register_patient": lambda store, args, actor: store.register_patient(args, actor=actor),
        "update_patient": lambda store, args, actor: store.update_patient(
            args["patient_id"], args["changes"], actor=actor
        ),
        "record_encounter": lambda store, args, actor: store.record_encounter(args, actor=actor),
        "create_prescription": lambda store, args, actor: store.create_prescription(args, actor=actor),
        "request_refill": lambda store, args, actor: store.request_refill(args["rx_id"], actor=actor),
        "grant_refill": lambda store, args, actor: store.grant_refill(args["rx_id"], actor=actor),
    }

    def _cmd_client_write(self, command: dict):
        facility = command["facility"]
        write = command["write"]
        replica = self.replicas.get(facility)
        if replica is None:
            raise EhrError("VALIDATION", f"unknown facility {facility!r}")
        op = self._WRITE_OPS.get(write["op"])
        if op is None:
            raise EhrError("VALIDATION", f"unknown write op {write['op']!r}")
        try:
            value = op(replica, write.get("args", {}), write.get("actor", "clinician"))
            result = {"ok": True, "value": value}
        except EhrError as err:
            result = {"ok": False, "error": err.code}
        return result, command

    def _cmd_sync(self, command: dict):
        facility = command["facility"]
        replica = self.replicas.get(facility)
        if replica is None:
            raise EhrError("VALIDATION", f"unknown facility {facility!r}")
        endpoint = LinkedEndpoint(self, internet_link(facility), self.endpoint)
        try:
            report = sync_round(replica, endpoint)
            result = {"pushed": report.pushed, "pulled": report.pulled, "cursor": report.new_cursor}
        except LinkDown:
            result = {"error": "LINK_DOWN"}
        except EhrError as err:
            result = {"error": err.code}
        return result, command

    def _cmd_link_down(self, command: dict):
        self._require_link(command["link"]).set_state(self.now, "DOWN")
        return {"state": "DOWN"}, command

    def _cmd_link_up(self, command: dict):
        self._require_link(command["link"]).set_state(self.now, "UP")
        result: dict = {"state": "UP"}
        if self.auto_sync and command["link"].startswith("INTERNET:"):
            facility = command["link"].split(":", 1)[1]
            if facility in self.replicas:
                sync_result, _ = self._cmd_sync({"type": "sync", "facility": facility})
                result["auto_sync"] = sync_result
        return result, command

    def _require_link(self, key: str) -> Link:
        link = self.links.get(key)
        if link is None:
            raise EhrError("UNKNOWN_LINK", key)
        return link

    def _cmd_power_cut(self, command: dict):
        facility = command["facility"]
        replica = self.replicas.get(facility)
        if replica is None:
            raise EhrError("VALIDATION", f"unknown facility {facility!r}")
        self._require_link(internet_link(facility)).set_state(self.now, "DOWN")
        replica.crash()
        return {"power": "OFF"}, command

    def _cmd_power_restore(self, command: dict):
        facility = command["facility"]
        replica = self.replicas.get(facility)
        if replica is None:
            raise EhrError("VALIDATION", f"unknown facility {facility!r}")
        replica.recover()
        self._require_link(internet_link(facility)).set_state(self.now, "UP")
        result: dict = {"power": "ON"}
        if self.auto_sync:
            sync_result, _ = self._cmd_sync({"type": "sync", "facility": facility})
            result["auto_sync"] = sync_result
        return result, command

    def _cmd_ussd_dial(self, command: dict):
        pdu = UssdPdu(
            session_id=command["session_id"],
            msisdn=command["msisdn"],
            kind="BEGIN",
            text=command.get("text", self.gateway.shortcode),
        )
        return self._ussd_exchange(pdu), command

    def _cmd_ussd_input(self, command: dict):
        session = self.gateway.sessions.get(command["session_id"])
        redact = session is not None and session.state == "AWAIT_PIN"
        pdu = UssdPdu(
            session_id=command["session_id"],
            msisdn=command["msisdn"],
            kind="CONTINUE",
            text=command["text"],
        )
        traced = {**command, "text": "***"} if redact else command
        return self._ussd_exchange(pdu), traced

    def _ussd_exchange(self, pdu: UssdPdu) -> dict:
        link = ussd_link(pdu.msisdn)
        try:
            arrival = self.deliver(f"ussd.{pdu.kind}", link)
        except LinkDown:
            # USSD is session-oriented: a dead channel aborts the dialogue.
            self.gateway.abort_session(pdu.session_id)
            return {"error": "CHANNEL_DOWN", "aborted": True}
        try:
            response = self.gateway.handle_pdu(pdu, now=arrival)
        except LinkDown:  # pragma: no cover - gateway converts these itself
            self.gateway.abort_session(pdu.session_id)
            return {"error": "LINK_DOWN", "aborted": True}
        try:
            self.deliver(f"ussd.{response.kind}.resp", link, at_ms=arrival)
        except LinkDown:
            self.gateway.abort_session(pdu.session_id)
            return {"error": "CHANNEL_DOWN", "aborted": True}
        self._screens.append(
            {"session_id": pdu.session_id, "kind": response.kind, "text": response.text}
        )
        return {"response": {"kind": response.kind, "text": response.text}}

    def _cmd_expire_sessions(self, command: dict):
        return {"expired": self.gateway.expire_sessions(self.now)}, command

    def _cmd_assert(self, command: dict):
        check = command["check"]
        ok, detail = self._evaluate(check)
        self.trace.add(
            {
                "type": "assert",
                "at": self.now - self.epoch,
                "check": check,
                "outcome": "PASS" if ok else "FAIL",
                "detail": detail,
            }
        )
        return {"outcome": "PASS" if ok else "FAIL"}, command

    # -- assertions -----------------------------------------------------------

    def _view(self, where: str):
        if where == "central":
            return self.central.view
        replica = self.replicas.get(where)
        if replica is None:
            raise EhrError("VALIDATION", f"unknown store {where!r}")
        return replica.view

    def _evaluate(self, check: dict) -> tuple[bool, str]:
        kind = check["kind"]
        if kind == "patient_exists":
            present = self._view(check["where"]).exists("patient", check["patient_id"])
            expected = check.get("expect", "PRESENT") == "PRESENT"
            return present == expected, f"present={present}"
        if kind == "history_contains":
            view = self._view(check["where"])
            needle = check["needle"]
            present = any(
                record.get("patient_id") == check["patient_id"]
                and (needle in record.get("note", "") or needle in record.get("diagnosis_codes", []))
                for _, record in view.all("encounter")
            )
            expected = check.get("expect", "PRESENT") == "PRESENT"
            return present == expected, f"present={present}"
        if kind == "rx_status":
            record = self._view(check["where"]).get("prescription", check["rx_id"])
            status = record["status"] if record else "MISSING"
            return status == check["expect"], f"status={status}"
        if kind == "views_equal":
            digests = {name: self._view(name).digest() for name in check["stores"]}
            reference = next(iter(digests.values()))
            equal = all(d == reference for d in digests.values())
            return equal, "equal" if equal else "diverged"
        if kind == "max_screen_len":
            worst = max((len(s["text"]) for s in self._screens), default=0)
            return worst <= int(check["max"]), f"max_seen={worst}"
        if kind == "exchange_count":
            session = self.gateway.sessions.get(check["session_id"])
            count = session.exchanges if session else 0
            return count <= int(check["max"]), f"exchanges={count}"
        if kind == "last_response_contains":
            texts = [s["text"] for s in self._screens if s["session_id"] == check["session_id"]]
            last = texts[-1] if texts else ""
            return check["needle"] in last, f"last={last!r}"
        if kind == "audit_ok":
            result = self.central.audit.verify()
            return result.ok, str(result)
        raise EhrError("VALIDATION", f"unknown check kind {kind!r}")

    # -- inspection ----------------------------------------------------------------

    def state_digest(self) -> dict:
        return {
            "now": self.now - self.epoch,
            "central": self.central.view.digest(),
            "replicas": {fid: r.view.digest() for fid, r in sorted(self.replicas.items())},
            "cursors": {fid: r.pull_cursor for fid, r in sorted(self.replicas.items())},
        }

    def screens(self, session_id: str | None = None) -> list[dict]:
        if session_id is None:
            return list(self._screens)
        return [s for s in self._screens if s["session_id"] == session_id]


def load_script(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def run_scenario(script: dict, trace_path: str | Path | None = None, seed: int | None = None) -> Trace:
    """Run a script; persist the trace; raise ASSERTION_FAILED on any failed check."""
    world = World(script, seed=seed)
    trace = world.run()
    if trace_path is not None:
        trace.write(trace_path)
    failures = trace.failures
    if failures:
        first = failures[0]
        raise EhrError("ASSERTION_FAILED", f"at_ms={first['at']}: {first['detail']}")
    return trace
