"""Durable storage for a store directory.

Layout: ``events.log`` (append-only, one JSON document per line),
``snapshot.json`` (periodic view snapshot so restarts replay only the tail),
``audit.log`` (one JSON line per audit entry, plaintext by contract), and
``credentials.json`` (salted hashes only). When an encryption key is present
in the environment, event log lines are stored as Fernet tokens; the seam is
transparent to everything above it.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
from pathlib import Path

from cryptography.fernet import Fernet, InvalidToken

from .errors import EhrError
from .events import ChangeEvent

KEY_ENV = "EHRMESH_KEY"

SNAPSHOT_EVERY = 100


class LineCipher:
    """Keyed cipher applied to individual log lines."""

    def __init__(self, passphrase: str):
        digest = hashlib.sha256(passphrase.encode("utf-8")).digest()
        self._fernet = Fernet(base64.urlsafe_b64encode(digest))

    @classmethod
    def from_env(cls, env_var: str = KEY_ENV) -> "LineCipher | None":
        passphrase = os.environ.get(env_var)
        return cls(passphrase) if passphrase else None

    def encrypt(self, line: str) -> str:
        return self._fernet.encrypt(line.encode("utf-8")).decode("ascii")

    def decrypt(self, token: str) -> str:
        try:
            return self._fernet.decrypt(token.encode("ascii")).decode("utf-8")
        except (InvalidToken, UnicodeDecodeError) as exc:
            raise EhrError("VALIDATION", "cannot decrypt log line; wrong key?") from exc


class EventJournal:
    """Append-only event log plus periodic snapshot in one directory."""

    def __init__(self, directory: str | Path, cipher: LineCipher | None = None,
                 snapshot_every: int = SNAPSHOT_EVERY):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.cipher = cipher
        self.snapshot_every = snapshot_every
        self.events_path = self.directory / "events.log"
        self.snapshot_path = self.directory / "snapshot.json"

    def append(self, event: ChangeEvent) -> None:
        line = json.dumps(event.to_dict(), sort_keys=True, separators=(",", ":"))
        if self.cipher is not None:
            line = self.cipher.encrypt(line)
        with self.events_path.open("a", encoding="utf-8") as handle:
            handle.write(line + "\n")

    def load(self) -> tuple[dict | None, list[ChangeEvent]]:
        snapshot = None
        if self.snapshot_path.exists():
            snapshot = json.loads(self.snapshot_path.read_text(encoding="utf-8"))
        events: list[ChangeEvent] = []
        if self.events_path.exists():
            with self.events_path.open(encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    if self.cipher is not None:
                        line = self.cipher.decrypt(line)
                    events.append(ChangeEvent.from_dict(json.loads(line)))
        return snapshot, events

    def write_snapshot(self, snapshot: dict) -> None:
        tmp = self.snapshot_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(snapshot, sort_keys=True), encoding="utf-8")
        tmp.replace(self.snapshot_path)


class AuditSink:
    """Line sink for the audit log file (exact fields, one JSON line each)."""

    def __init__(self, directory: str | Path):
        self.path = Path(directory) / "audit.log"
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def __call__(self, line: str) -> None:
        with self.path.open("a", encoding="utf-8") as handle:
            handle.write(line + "\n")

    def lines(self) -> list[str]:
        if not self.path.exists():
            return []
        return self.path.read_text(encoding="utf-8").splitlines()


def save_credentials(directory: str | Path, docs: list[dict]) -> None:
    path = Path(directory) / "credentials.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(docs, sort_keys=True, indent=1), encoding="utf-8")
    tmp.replace(path)


def load_credentials(directory: str | Path) -> list[dict]:
    path = Path(directory) / "credentials.json"
    if not path.exists():
        return []
    return json.loads(path.read_text(encoding="utf-8"))
