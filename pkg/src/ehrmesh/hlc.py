"""Hybrid logical clocks.

Every change in the system is stamped with (physical_ms, counter, replica_id).
The triple is compared lexicographically, which yields one total order across
all replicas even when wall clocks disagree or stand still: the counter breaks
ties within a millisecond and the replica id breaks ties between replicas.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import EhrError

# Facility clocks in the target setting are unreliable; reject observed
# timestamps only when they disagree with local time by more than a day.
DEFAULT_DRIFT_BOUND_MS = 24 * 60 * 60 * 1000


@dataclass(frozen=True, order=True)
class HlcTimestamp:
    physical_ms: int
    counter: int
    replica_id: str

    def to_dict(self) -> dict:
        return {
            "physical_ms": self.physical_ms,
            "counter": self.counter,
            "replica_id": self.replica_id,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "HlcTimestamp":
        try:
            return cls(int(doc["physical_ms"]), int(doc["counter"]), str(doc["replica_id"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise EhrError("MALFORMED_EVENT", f"bad hlc document: {exc}") from exc

    def __str__(self) -> str:
        return f"{self.physical_ms}:{self.counter}:{self.replica_id}"


class HlcClock:
    """Per-replica clock issuing strictly increasing timestamps.

    ``event`` advances the clock for a local write; passing ``observed``
    additionally merges a timestamp received from another replica so that
    later local writes sort after everything already seen.
    """

    def __init__(self, replica_id: str, drift_bound_ms: int = DEFAULT_DRIFT_BOUND_MS):
        self.replica_id = replica_id
        self.drift_bound_ms = drift_bound_ms
        self._last: HlcTimestamp | None = None

    @property
    def last(self) -> HlcTimestamp | None:
        return self._last

    def event(self, physical_now: int, observed: HlcTimestamp | None = None) -> HlcTimestamp:
        """Issue the next timestamp, merging ``observed`` when given."""
        if observed is not None and abs(physical_now - observed.physical_ms) > self.drift_bound_ms:
            raise EhrError(
                "CLOCK_DRIFT",
                f"observed {observed.physical_ms} vs local {physical_now} "
                f"exceeds bound {self.drift_bound_ms}",
            )
        last = self._last
        physical = physical_now
        if last is not None:
            physical = max(physical, last.physical_ms)
        if observed is not None:
            physical = max(physical, observed.physical_ms)

        counter = 0
        if last is not None and physical == last.physical_ms:
            counter = last.counter + 1
        if observed is not None and physical == observed.physical_ms:
            counter = max(counter, observed.counter + 1)

        ts = HlcTimestamp(physical, counter, self.replica_id)
        self._last = ts
        return ts

    def observe(self, remote: HlcTimestamp, physical_now: int) -> HlcTimestamp:
        """Fold a remote timestamp into the clock (used when applying pulled events)."""
        return self.event(physical_now, observed=remote)
