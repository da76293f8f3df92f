"""Identifiers and vector-clock machinery for the replication protocol.

A run has a fixed set of data centres, indexed densely from 0. Each DC
summarises the transactions it has processed with a version vector; a
client-side scout extends that vector with one extra counter for its own
locally-committed transactions. Transactions carry two identities: an
origin id (OTID) assigned by the scout, which is globally unique, and one
or more global ids (GTID) assigned sequentially by DC sequencers, which
are compact enough to live in dependency vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

DcId = int
ScoutId = str


@dataclass(frozen=True, order=True)
class Otid:
    """Client-assigned transaction identifier, unique per run."""

    counter: int
    origin: ScoutId


@dataclass(frozen=True, order=True)
class Gtid:
    """DC-assigned transaction identifier; counters are gapless per DC."""

    counter: int
    origin: DcId


class DomainError(ValueError):
    """Vector operands with mismatched DC domains, or an unknown DC index."""


@dataclass(frozen=True)
class VersionVector:
    """One counter per DC: entry i counts DC i's transactions included."""

    entries: tuple[int, ...]

    @classmethod
    def zero(cls, num_dcs: int) -> "VersionVector":
        return cls((0,) * num_dcs)

    def _check_domain(self, other: "VersionVector") -> None:
        if len(self.entries) != len(other.entries):
            raise DomainError(
                f"vector domains differ: {len(self.entries)} vs {len(other.entries)}"
            )

    def leq(self, other: "VersionVector") -> bool:
        """Partial order: true iff every entry of self <= the other's."""
        self._check_domain(other)
        return all(a <= b for a, b in zip(self.entries, other.entries))

    __le__ = leq

    def __ge__(self, other: "VersionVector") -> bool:
        return other.leq(self)

    def join(self, other: "VersionVector") -> "VersionVector":
        """Least upper bound: component-wise maximum."""
        self._check_domain(other)
        return VersionVector(tuple(max(a, b) for a, b in zip(self.entries, other.entries)))

    def meet(self, other: "VersionVector") -> "VersionVector":
        """Component-wise minimum (used for the prune frontier)."""
        self._check_domain(other)
        return VersionVector(tuple(min(a, b) for a, b in zip(self.entries, other.entries)))

    def covers(self, gtid: Gtid) -> bool:
        """True iff the transaction with this GTID is in the summarised set."""
        if not 0 <= gtid.origin < len(self.entries):
            raise DomainError(f"unknown DC index {gtid.origin}")
        return self.entries[gtid.origin] >= gtid.counter

    def with_entry(self, dc: DcId, value: int) -> "VersionVector":
        if not 0 <= dc < len(self.entries):
            raise DomainError(f"unknown DC index {dc}")
        e = list(self.entries)
        e[dc] = value
        return VersionVector(tuple(e))

    def __getitem__(self, dc: DcId) -> int:
        return self.entries[dc]

    def __len__(self) -> int:
        return len(self.entries)

    def __str__(self) -> str:
        return "[" + ",".join(str(c) for c in self.entries) + "]"


def join_all(vectors: Iterable[VersionVector]) -> VersionVector:
    vs = list(vectors)
    if not vs:
        raise DomainError("join_all of empty collection")
    out = vs[0]
    for v in vs[1:]:
        out = out.join(v)
    return out


def k_stable_vector(known: Sequence[VersionVector], k: int) -> VersionVector:
    """Summarise the transactions known durable at >= k replicas.

    ``known`` holds the last-known version vector of every DC (including
    the caller's own). Per component the k-th largest value is taken, so
    any GTID covered by the result is covered by at least k of the inputs.
    """
    if not known:
        raise DomainError("k_stable_vector needs at least one vector")
    if not 1 <= k <= len(known):
        raise DomainError(f"k={k} out of range for {len(known)} vectors")
    n = len(known[0])
    for v in known[1:]:
        known[0]._check_domain(v)
    out = []
    for i in range(n):
        column = sorted((v.entries[i] for v in known), reverse=True)
        out.append(column[k - 1])
    return VersionVector(tuple(out))


@dataclass(frozen=True)
class CausalClock:
    """A version vector plus one scout-local commit counter.

    The DC part summarises globally-committed transactions; the local
    part counts the owning scout's committed transactions that may not be
    globally visible yet. Local parts are only comparable between clocks
    of the same scout.
    """

    dc_part: VersionVector
    local_part: int

    @classmethod
    def zero(cls, num_dcs: int) -> "CausalClock":
        return cls(VersionVector.zero(num_dcs), 0)

    def leq(self, other: "CausalClock") -> bool:
        return self.dc_part.leq(other.dc_part) and self.local_part <= other.local_part

    __le__ = leq

    def with_dc_part(self, v: VersionVector) -> "CausalClock":
        return CausalClock(v, self.local_part)

    def with_local(self, local: int) -> "CausalClock":
        return CausalClock(self.dc_part, local)

    def __str__(self) -> str:
        inner = ",".join(str(c) for c in self.dc_part.entries)
        return f"[{inner}|{self.local_part}]"
