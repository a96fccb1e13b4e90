"""Stable error codes shared across the platform."""

from __future__ import annotations


class EhrError(Exception):
    """Domain failure carrying a machine-readable code."""

    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


class LinkDown(EhrError):
    """The network link needed for this call is currently down."""

    def __init__(self, detail: str = ""):
        super().__init__("LINK_DOWN", detail)
