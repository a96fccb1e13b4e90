"""Offline-first EHR platform for low-connectivity settings.

A central record store with an HTTP interface, facility-side replicas that
reconcile through a cursor-based sync protocol, a USSD gateway exposing
clinical workflows to feature phones, and a deterministic network simulator
that exercises all of it under link failures and power cuts.
"""

__version__ = "0.1.0"
