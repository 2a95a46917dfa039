"""Binding caches with dual-entry support.

A cache maps a home or regional address to care-of entries.  When dual-entry
mode is on, installing a new primary demotes the standing one to `previous`
instead of replacing it, which keeps the old forwarding channel alive during
a handover window.  The previous entry is evicted the first time a packet is
seen using the new primary care-of address, and in any case after a safety
lifetime so a crashed handover cannot leave it behind.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .packet import Ipv6Addr

# Safety bound on dangling previous entries; the protocol normally evicts
# them earlier, on first use of the new care-of address.
DEFAULT_PREVIOUS_LIFETIME_US = 3_000_000


class EntryKind(enum.Enum):
    PRIMARY = "primary"
    PREVIOUS = "previous"


@dataclass
class BindingEntry:
    key: Ipv6Addr
    coa: Ipv6Addr
    kind: EntryKind
    expires_at: int | None      # None = no expiry
    multicast_groups: set[Ipv6Addr] = field(default_factory=set)


class BindingCache:
    def __init__(self, previous_lifetime_us: int = DEFAULT_PREVIOUS_LIFETIME_US):
        self.previous_lifetime_us = previous_lifetime_us
        self._primary: dict[int, BindingEntry] = {}
        self._previous: dict[int, BindingEntry] = {}

    def update(self, key: Ipv6Addr, coa: Ipv6Addr, lifetime_us: int,
               now: int, *, dual: bool = False,
               kind: EntryKind = EntryKind.PRIMARY) -> None:
        """Install or refresh a binding; lifetime 0 removes the entry."""
        if lifetime_us == 0:
            self.remove(key)
            return
        expires = None if lifetime_us is None else now + lifetime_us
        if kind is EntryKind.PREVIOUS:
            self._previous[key.value] = BindingEntry(key, coa, kind, expires)
            return
        old = self._lookup_live(self._primary, key, now)
        if old is not None and dual and old.coa != coa:
            old.kind = EntryKind.PREVIOUS
            old.expires_at = now + self.previous_lifetime_us
            self._previous[key.value] = old
        groups = old.multicast_groups if old is not None else set()
        self._primary[key.value] = BindingEntry(
            key, coa, EntryKind.PRIMARY, expires, groups
        )

    def remove(self, key: Ipv6Addr) -> None:
        self._primary.pop(key.value, None)
        self._previous.pop(key.value, None)

    def lookup(self, key: Ipv6Addr, now: int) -> BindingEntry | None:
        return self._lookup_live(self._primary, key, now)

    def lookup_previous(self, key: Ipv6Addr, now: int) -> BindingEntry | None:
        return self._lookup_live(self._previous, key, now)

    def lookup_by_coa(self, coa: Ipv6Addr, now: int) -> BindingEntry | None:
        """Reverse lookup used when forwarding outbound traffic at an anchor."""
        for entry in self._primary.values():
            if entry.coa == coa and self._live(entry, now):
                return entry
        for entry in self._previous.values():
            if entry.coa == coa and self._live(entry, now):
                return entry
        return None

    def accepts_source(self, key: Ipv6Addr, source: Ipv6Addr, now: int) -> bool:
        """True when `source` matches the primary or previous care-of address."""
        primary = self.lookup(key, now)
        if primary is not None and primary.coa == source:
            return True
        prev = self.lookup_previous(key, now)
        return prev is not None and prev.coa == source

    def note_source_seen(self, key: Ipv6Addr, source: Ipv6Addr, now: int) -> bool:
        """Evict the previous entry once the new primary address is in use.

        Returns True when an eviction happened.
        """
        primary = self.lookup(key, now)
        if primary is not None and primary.coa == source:
            if self._lookup_live(self._previous, key, now) is not None:
                del self._previous[key.value]
                return True
        return False

    def primary_entries(self, now: int) -> list[BindingEntry]:
        return [e for e in self._primary.values() if self._live(e, now)]

    def entry_count(self, key: Ipv6Addr, now: int) -> int:
        n = 0
        if self._lookup_live(self._primary, key, now) is not None:
            n += 1
        if self._lookup_live(self._previous, key, now) is not None:
            n += 1
        return n

    def _lookup_live(self, table: dict[int, BindingEntry], key: Ipv6Addr,
                     now: int) -> BindingEntry | None:
        entry = table.get(key.value)
        if entry is None:
            return None
        if not self._live(entry, now):
            del table[key.value]
            return None
        return entry

    @staticmethod
    def _live(entry: BindingEntry, now: int) -> bool:
        return entry.expires_at is None or now < entry.expires_at
