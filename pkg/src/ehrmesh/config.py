"""Runtime configuration: JSON file merged with flag overrides (flags win)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import EhrError

DEFAULTS = {
    "store_dir": "store",
    "http_port": 8700,
    "gateway_port": 8701,
    "shortcode": "*384#",
    "session_timeout_s": 90,
    "suppression_k": 5,
}


@dataclass
class AppConfig:
    store_dir: str
    http_port: int
    gateway_port: int
    shortcode: str
    session_timeout_s: int
    suppression_k: int

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: dict | None = None) -> "AppConfig":
        merged = dict(DEFAULTS)
        if path is not None:
            try:
                doc = json.loads(Path(path).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise EhrError("VALIDATION", f"cannot read config {path}: {exc}") from exc
            unknown = set(doc) - set(DEFAULTS)
            if unknown:
                raise EhrError("VALIDATION", f"unknown config keys: {sorted(unknown)}")
            merged.update(doc)
        for key, value in (overrides or {}).items():
            if value is not None:
                merged[key] = value
        return cls(
            store_dir=str(merged["store_dir"]),
            http_port=int(merged["http_port"]),
            gateway_port=int(merged["gateway_port"]),
            shortcode=str(merged["shortcode"]),
            session_timeout_s=int(merged["session_timeout_s"]),
            suppression_k=int(merged["suppression_k"]),
        )
