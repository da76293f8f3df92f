"""Data-centre replica: versioned store, sequenced commit, gossip, pruning.

A DC is a single logical state machine; the simulator invokes one handler
at a time. Durable state (the commit log with its per-object checkpoints,
the per-scout high-water OTID map, and the prune frontier) survives a
crash; sessions, peer knowledge and deferred work do not.

Commit identity is tracked at slot granularity: every alias GTID of a
record occupies one slot in its origin DC's gapless sequence, and the
replica's version vector advances along the contiguous prefix of applied
slots. Dependency checks therefore treat all aliases of a transaction
equivalently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from causalsim.clocks import (
    CausalClock,
    DcId,
    Gtid,
    Otid,
    ScoutId,
    VersionVector,
    k_stable_vector,
)
from causalsim.crdt import (
    EffectOp,
    EffectTag,
    ObjectId,
    apply_effect,
    new_state,
    prepare,
    value_of,
    value_to_wire,
)
from causalsim.crdt import CrdtType, effect_to_wire, state_from_wire, state_to_wire
from causalsim.messages import (
    CommitRecord,
    CommitReply,
    CommitRequest,
    FetchReply,
    FetchRequest,
    GossipBatch,
    NotifyBatch,
    SessionReply,
    SessionRequest,
    StoredTxReply,
    StoredTxRequest,
    record_from_wire,
    record_to_wire,
)

# a stored procedure reads through `reader(obj) -> value` and returns
# (results, [(obj, intent), ...]); it must be deterministic given the reader
StoredProcedure = Callable[[Any, Callable[[ObjectId], Any]], tuple]


class VersionPruned(Exception):
    """Requested snapshot falls below the prune frontier."""


@dataclass
class StoredObject:
    checkpoint: Any
    base: VersionVector
    entries: list[tuple[EffectOp, CommitRecord]] = field(default_factory=list)


@dataclass
class Session:
    scout: ScoutId
    epoch: int
    subscriptions: set[ObjectId]
    last_announced: VersionVector
    acked: set[Otid] = field(default_factory=set)


class DataCenter:
    def __init__(
        self,
        dc_id: DcId,
        num_dcs: int,
        k: int,
        procedures: Optional[dict[str, StoredProcedure]] = None,
        notify_mode: str = "effects",
        disable_dedup: bool = False,
        disable_k_gating: bool = False,
    ):
        self.id = dc_id
        self.num_dcs = num_dcs
        self.k = k
        self.procedures = procedures or {}
        self.notify_mode = notify_mode
        self.disable_dedup = disable_dedup
        self.disable_k_gating = disable_k_gating

        # durable
        self.log: list[CommitRecord] = []
        self.by_otid: dict[Otid, CommitRecord] = {}
        self.by_gtid: dict[Gtid, CommitRecord] = {}
        self.max_otid: dict[ScoutId, int] = {}
        self.prune_vector = VersionVector.zero(num_dcs)
        self.store: dict[ObjectId, StoredObject] = {}
        self.slots: list[set[int]] = [set() for _ in range(num_dcs)]
        self.vdc = VersionVector.zero(num_dcs)
        self.apply_counts: dict[tuple[ObjectId, tuple], int] = {}

        # volatile
        self.known_vectors: dict[DcId, VersionVector] = {}
        self.sessions: dict[ScoutId, Session] = {}
        self.pending_remote: list[CommitRecord] = []
        self.pending_commits: list[CommitRequest] = []
        self.pending_fetches: list[FetchRequest] = []
        self.pending_stored: list[StoredTxRequest] = []
        self.crash_on_next_commit = False
        self.crashed = False

    # -- lifecycle ---------------------------------------------------------

    def crash(self) -> None:
        """Drop volatile state; the durable log and store survive."""
        self.known_vectors = {}
        self.sessions = {}
        self.pending_remote = []
        self.pending_commits = []
        self.pending_fetches = []
        self.pending_stored = []
        self.crash_on_next_commit = False
        self.crashed = True

    def recover(self) -> None:
        self.crashed = False

    def durable_snapshot(self) -> dict:
        """The crash-surviving state as an append-only record stream plus a
        checkpoint section, in canonical form."""
        return {
            "schema": "causalsim-log-1",
            "dc": self.id,
            "records": [record_to_wire(r) for r in self.log],
            "checkpoints": [
                [
                    [obj.key, obj.crdt_type.value],
                    list(so.base.entries),
                    state_to_wire(so.checkpoint),
                ]
                for obj, so in sorted(self.store.items())
            ],
            "max_otid": dict(sorted(self.max_otid.items())),
            "prune_vector": list(self.prune_vector.entries),
        }

    @classmethod
    def from_durable(cls, snapshot: dict, num_dcs: int, k: int, **kw) -> "DataCenter":
        """Rebuild a replica from its durable stream, as crash recovery does."""
        dc = cls(snapshot["dc"], num_dcs, k, **kw)
        dc.max_otid = dict(snapshot["max_otid"])
        dc.prune_vector = VersionVector(tuple(snapshot["prune_vector"]))
        for obj_w, base, cp in snapshot["checkpoints"]:
            obj = ObjectId(obj_w[0], CrdtType(obj_w[1]))
            dc.store[obj] = StoredObject(state_from_wire(cp), VersionVector(tuple(base)))
        for rw in snapshot["records"]:
            record = record_from_wire(rw)
            dc.log.append(record)
            dc.by_otid[record.otid] = record
            for g in record.gtids:
                dc.by_gtid[g] = record
                dc.slots[g.origin].add(g.counter)
            for e in record.effects:
                so = dc.store.get(e.target)
                if so is None:
                    so = StoredObject(
                        new_state(e.target.crdt_type), VersionVector.zero(num_dcs)
                    )
                    dc.store[e.target] = so
                so.entries.append((e, record))
        # slots below the prune frontier were folded into checkpoints
        vdc = list(dc.prune_vector.entries)
        for origin in range(num_dcs):
            for counter in range(1, vdc[origin] + 1):
                dc.slots[origin].add(counter)
            while vdc[origin] + 1 in dc.slots[origin]:
                vdc[origin] += 1
        dc.vdc = VersionVector(tuple(vdc))
        return dc

    def seed_store(self, states: dict[ObjectId, Any]) -> None:
        """Install pre-run object states as checkpoints at the zero vector."""
        for obj, state in states.items():
            self.store[obj] = StoredObject(checkpoint=state, base=VersionVector.zero(self.num_dcs))

    # -- frontiers ---------------------------------------------------------

    def k_durable_frontier(self, k: Optional[int] = None) -> VersionVector:
        known = [self.vdc] + [
            self.known_vectors.get(j, VersionVector.zero(self.num_dcs))
            for j in range(self.num_dcs)
            if j != self.id
        ]
        return k_stable_vector(known, k or self.k)

    def announceable_frontier(self) -> VersionVector:
        """The K-durable frontier capped at what this replica has applied."""
        if self.disable_k_gating:
            return self.vdc
        return self.k_durable_frontier().meet(self.vdc)

    # -- dependency machinery ------------------------------------------------

    def deps_satisfied(self, deps: CausalClock, origin: ScoutId) -> bool:
        if not deps.dc_part.leq(self.vdc):
            return False
        if deps.local_part > 0 and self.max_otid.get(origin, 0) < deps.local_part:
            return False
        return True

    def _admit_record(self, env, record: CommitRecord, via: str) -> None:
        """Durably log a record, apply its effects once, then advance vdc."""
        self.log.append(record)
        self.by_otid[record.otid] = record
        for g in record.gtids:
            self.by_gtid[g] = record
        prev = self.max_otid.get(record.otid.origin, 0)
        if record.otid.counter > prev:
            self.max_otid[record.otid.origin] = record.otid.counter
        for e in record.effects:
            so = self.store.get(e.target)
            if so is None:
                so = StoredObject(new_state(e.target.crdt_type), VersionVector.zero(self.num_dcs))
                self.store[e.target] = so
            so.entries.append((e, record))
            key = (e.target, (e.tag.counter, e.tag.origin, e.tag.seq))
            self.apply_counts[key] = self.apply_counts.get(key, 0) + 1
        self._mark_slots(record.gtids)
        env.trace(
            {
                "ev": "apply",
                "node": f"dc{self.id}",
                "otid": [record.otid.counter, record.otid.origin],
                "gtids": [[g.counter, g.origin] for g in record.gtids],
                "via": via,
                "objs": [[o.key, o.crdt_type.value] for o in record.objects()],
                "deps": [list(record.deps.dc_part.entries), record.deps.local_part],
                "effects": [effect_to_wire(e) for e in record.effects] if via == "commit" else None,
            }
        )

    def _mark_slots(self, gtids: list[Gtid]) -> None:
        for g in gtids:
            self.slots[g.origin].add(g.counter)
        vdc = list(self.vdc.entries)
        for origin in range(self.num_dcs):
            while vdc[origin] + 1 in self.slots[origin]:
                vdc[origin] += 1
        self.vdc = VersionVector(tuple(vdc))

    def _merge_aliases(self, existing: CommitRecord, incoming: CommitRecord) -> None:
        new = [g for g in incoming.gtids if g not in existing.gtids]
        if not new:
            return
        existing.gtids.extend(new)
        for g in new:
            self.by_gtid[g] = existing
        self._mark_slots(new)

    # -- global commit (scout -> DC) ----------------------------------------

    def on_commit_request(self, env, msg: CommitRequest) -> None:
        if not self._try_commit(env, msg):
            if all(p.otid != msg.otid for p in self.pending_commits):
                self.pending_commits.append(msg)
        else:
            self._drain(env)

    def _try_commit(self, env, msg: CommitRequest) -> bool:
        dup = self._duplicate_reply(msg.scout, msg.otid)
        if dup is not None:
            env.send(f"dc{self.id}", msg.scout, dup)
            return True
        if not self.deps_satisfied(msg.deps, msg.scout):
            return False
        gtid = Gtid(self.vdc[self.id] + 1, self.id)
        record = CommitRecord(msg.otid, [gtid], msg.deps, msg.effects, msg.scout)
        self._admit_record(env, record, via="commit")
        if self.crash_on_next_commit:
            # fault hook: the record is durably logged but the reply is lost
            self.crash_on_next_commit = False
            env.request_crash(self.id)
            return True
        env.send(f"dc{self.id}", msg.scout, CommitReply(msg.otid, "new", gtid))
        return True

    def _duplicate_reply(self, scout: ScoutId, otid: Otid) -> Optional[CommitReply]:
        if self.disable_dedup:
            return None
        if otid.counter > self.max_otid.get(scout, 0):
            return None
        record = self.by_otid.get(otid)
        if record is not None:
            return CommitReply(otid, "existing", record.primary_gtid)
        # seen but no longer in the log: pruned everywhere, so any
        # dependency on it is already satisfied at every DC
        return CommitReply(otid, "null", None)

    # -- epidemic propagation ------------------------------------------------

    def on_gossip(self, env, msg: GossipBatch) -> None:
        for record in msg.records:
            self._receive_remote(env, record)
        prior = self.known_vectors.get(msg.src, VersionVector.zero(self.num_dcs))
        self.known_vectors[msg.src] = prior.join(msg.vdc)
        if msg.records:
            env.trace(
                {
                    "ev": "gossip",
                    "node": f"dc{self.id}",
                    "src": msg.src,
                    "vdc": list(msg.vdc.entries),
                    "records": len(msg.records),
                }
            )
        self._drain(env)

    def _receive_remote(self, env, record: CommitRecord) -> None:
        existing = self.by_otid.get(record.otid)
        if existing is not None:
            self._merge_aliases(existing, record)
            return
        if record.otid.counter <= self.max_otid.get(record.otid.origin, 0):
            # known but pruned here: effects are already folded into the
            # checkpoints, so only acknowledge the alias slots
            self._mark_slots(record.gtids)
            return
        if self.deps_satisfied(record.deps, record.otid.origin):
            self._admit_record(env, record, via="gossip")
        else:
            if all(p.otid != record.otid for p in self.pending_remote):
                self.pending_remote.append(record)

    def gossip_tick(self, env) -> None:
        for peer in range(self.num_dcs):
            if peer == self.id:
                continue
            known = self.known_vectors.get(peer, VersionVector.zero(self.num_dcs))
            # resend until the peer covers every alias, so alias slots learned
            # here eventually fill the peer's sequence gaps too
            suffix = [r for r in self.log if not all(known.covers(g) for g in r.gtids)]
            env.send(f"dc{self.id}", f"dc{peer}", GossipBatch(self.id, suffix, self.vdc))

    # -- deferred work -------------------------------------------------------

    def _drain(self, env) -> None:
        progress = True
        while progress and not self.crashed:
            progress = False
            for record in list(self.pending_remote):
                if self.by_otid.get(record.otid) is not None:
                    self.pending_remote.remove(record)
                    self._merge_aliases(self.by_otid[record.otid], record)
                    progress = True
                elif self.deps_satisfied(record.deps, record.otid.origin):
                    self.pending_remote.remove(record)
                    self._admit_record(env, record, via="gossip")
                    progress = True
            for msg in list(self.pending_commits):
                if self.crashed:
                    return
                if self._duplicate_reply(msg.scout, msg.otid) is not None or self.deps_satisfied(
                    msg.deps, msg.scout
                ):
                    self.pending_commits.remove(msg)
                    self._try_commit(env, msg)
                    progress = True
            for msg in list(self.pending_stored):
                if self.crashed:
                    return
                if self._stored_ready(msg):
                    self.pending_stored.remove(msg)
                    self._run_stored(env, msg)
                    progress = True
            for msg in list(self.pending_fetches):
                if self._fetch_ready(msg):
                    self.pending_fetches.remove(msg)
                    self._serve_fetch(env, msg)
                    progress = True

    # -- reads ----------------------------------------------------------------

    def materialize(self, obj: ObjectId, snapshot: CausalClock, own: ScoutId = ""):
        """Object state at a snapshot: checkpoint plus covered effects, plus
        the reading scout's own effects up to its local counter."""
        if not self.prune_vector.leq(snapshot.dc_part):
            raise VersionPruned(f"{obj} at {snapshot} below prune frontier {self.prune_vector}")
        so = self.store.get(obj)
        if so is None:
            return new_state(obj.crdt_type)
        state = so.checkpoint
        for effect, record in so.entries:
            if self._covered(record, snapshot, own):
                state = apply_effect(state, effect)
        return state

    @staticmethod
    def _covered(record: CommitRecord, snapshot: CausalClock, own: ScoutId) -> bool:
        if any(snapshot.dc_part.covers(g) for g in record.gtids):
            return True
        return record.otid.origin == own and record.otid.counter <= snapshot.local_part

    def on_fetch_request(self, env, msg: FetchRequest) -> None:
        session = self.sessions.get(msg.scout)
        if session is not None:
            for obj in msg.unsubscribe:
                session.subscriptions.discard(obj)
        if not self.prune_vector.leq(msg.snapshot.dc_part):
            env.send(f"dc{self.id}", msg.scout, FetchReply(msg.scout, msg.req_id, "pruned"))
            return
        if self._fetch_ready(msg):
            self._serve_fetch(env, msg)
        else:
            self.pending_fetches.append(msg)

    def _fetch_ready(self, msg: FetchRequest) -> bool:
        if self.disable_k_gating:
            return True  # mutation: serve whatever is local, never wait
        if not self.deps_satisfied(msg.snapshot, msg.scout):
            return False
        session = self.sessions.get(msg.scout)
        admit = session.last_announced if session else msg.snapshot.dc_part
        return admit.leq(self.vdc)

    def _serve_fetch(self, env, msg: FetchRequest) -> None:
        session = self.sessions.get(msg.scout)
        admit_frontier = session.last_announced if session else msg.snapshot.dc_part
        admit_clock = CausalClock(admit_frontier, msg.snapshot.local_part)
        versions = []
        try:
            for obj in msg.objects:
                snap_state = self.materialize(obj, msg.snapshot, msg.scout)
                admit_state = self.materialize(obj, admit_clock, msg.scout)
                versions.append((obj, state_to_wire(snap_state), state_to_wire(admit_state)))
        except VersionPruned:
            env.send(f"dc{self.id}", msg.scout, FetchReply(msg.scout, msg.req_id, "pruned"))
            return
        if session is not None:
            for obj in msg.objects:
                session.subscriptions.add(obj)
        env.send(
            f"dc{self.id}",
            msg.scout,
            FetchReply(msg.scout, msg.req_id, "ok", versions, admit_frontier),
        )

    # -- sessions and notification --------------------------------------------

    def on_session_request(self, env, msg: SessionRequest) -> None:
        eligible = msg.dc_part.leq(self.k_durable_frontier())
        if self.disable_k_gating:
            eligible = True
        if eligible:
            self.sessions[msg.scout] = Session(
                scout=msg.scout,
                epoch=msg.epoch,
                subscriptions=set(msg.cached_objects),
                last_announced=msg.dc_part,
            )
        env.send(
            f"dc{self.id}",
            msg.scout,
            SessionReply(msg.scout, self.id, msg.epoch, eligible, self.k_durable_frontier()),
        )

    def drop_session(self, scout: ScoutId) -> None:
        self.sessions.pop(scout, None)

    def notify_tick(self, env) -> None:
        target = self.announceable_frontier()
        for session in list(self.sessions.values()):
            self._notify_session(env, session, target)

    def _notify_session(self, env, session: Session, target: VersionVector) -> None:
        if not session.last_announced.leq(target):
            if not self.disable_k_gating:
                return
            # mutation: announce a non-monotonic frontier instead of waiting
        delta_records = []
        gap_in_log = False
        seen: set[Otid] = set()
        for origin in range(self.num_dcs):
            lo, hi = session.last_announced[origin], target[origin]
            for counter in range(lo + 1, hi + 1):
                record = self.by_gtid.get(Gtid(counter, origin))
                if record is None:
                    # already pruned: effects cannot be delivered piecemeal
                    gap_in_log = True
                    continue
                if record.otid in seen:
                    continue
                seen.add(record.otid)
                # a record can surface in a new slot range through an alias
                # even though an older alias was announced long ago
                if any(session.last_announced.covers(g) for g in record.gtids):
                    continue
                delta_records.append(record)
        items: list[tuple[str, list]] = []
        if gap_in_log and session.subscriptions:
            items.append(("invalidate", sorted(session.subscriptions)))
        for record in delta_records:
            if record.otid.origin == session.scout:
                continue  # the scout applied its own updates at local commit
            touched = [o for o in record.objects() if o in session.subscriptions]
            if not touched:
                continue
            if self.notify_mode == "effects":
                effects = [e for e in record.effects if e.target in session.subscriptions]
                items.append(("effects", effects))
            else:
                items.append(("invalidate", touched))
        acks = []
        for record in self.log:
            if record.otid.origin == session.scout and record.otid not in session.acked:
                session.acked.add(record.otid)
                acks.append((record.otid, record.primary_gtid))
        if target == session.last_announced and not acks:
            return
        env.send(
            f"dc{self.id}",
            session.scout,
            NotifyBatch(self.id, session.epoch, session.last_announced, target, items, acks),
        )
        session.last_announced = target

    # -- pruning ---------------------------------------------------------------

    def prune_tick(self, env) -> VersionVector:
        """Fold effects processed by every DC into checkpoints, drop records."""
        pv = self.vdc
        for j in range(self.num_dcs):
            if j == self.id:
                continue
            pv = pv.meet(self.known_vectors.get(j, VersionVector.zero(self.num_dcs)))
        if not (self.prune_vector.leq(pv) and pv != self.prune_vector):
            return self.prune_vector
        self.prune_vector = pv
        pruned: set[Otid] = set()
        for so in self.store.values():
            keep = []
            for effect, record in so.entries:
                # all aliases must be covered: a partially-covered record may
                # still carry slot information some replica has not marked
                if all(pv.covers(g) for g in record.gtids):
                    so.checkpoint = apply_effect(so.checkpoint, effect)
                    pruned.add(record.otid)
                else:
                    keep.append((effect, record))
            so.entries = keep
            so.base = pv
        if pruned:
            self.log = [r for r in self.log if r.otid not in pruned]
            for otid in pruned:
                record = self.by_otid.pop(otid, None)
                if record is not None:
                    for g in record.gtids:
                        self.by_gtid.pop(g, None)
        env.trace(
            {
                "ev": "prune",
                "node": f"dc{self.id}",
                "vector": list(pv.entries),
                "dropped": len(pruned),
            }
        )
        return pv

    # -- stored transactions -----------------------------------------------------

    def on_stored_request(self, env, msg: StoredTxRequest) -> None:
        if msg.name not in self.procedures:
            env.send(
                f"dc{self.id}",
                msg.scout,
                StoredTxReply(msg.otid, "unknown-proc", None),
            )
            return
        if self._stored_ready(msg):
            self._run_stored(env, msg)
            self._drain(env)
        else:
            if all(p.otid != msg.otid for p in self.pending_stored):
                self.pending_stored.append(msg)

    def _stored_ready(self, msg: StoredTxRequest) -> bool:
        if self._stored_duplicate(msg) is not None:
            return True
        return self.deps_satisfied(msg.deps, msg.scout)

    def _stored_duplicate(self, msg: StoredTxRequest) -> Optional[StoredTxReply]:
        if self.disable_dedup:
            return None
        if msg.otid.counter > self.max_otid.get(msg.scout, 0):
            return None
        record = self.by_otid.get(msg.otid)
        if record is not None:
            return StoredTxReply(msg.otid, "existing", record.primary_gtid, record.stored_results)
        return StoredTxReply(msg.otid, "pruned", None)

    def _run_stored(self, env, msg: StoredTxRequest) -> None:
        dup = self._stored_duplicate(msg)
        if dup is not None:
            env.send(f"dc{self.id}", msg.scout, dup)
            return
        if not self.prune_vector.leq(msg.deps.dc_part):
            env.send(f"dc{self.id}", msg.scout, StoredTxReply(msg.otid, "pruned", None))
            return
        # snapshot pinned to the client-supplied dependency clock so that a
        # retried request re-executes deterministically at any DC
        working: dict[ObjectId, Any] = {}

        def reader(obj: ObjectId):
            if obj not in working:
                working[obj] = self.materialize(obj, msg.deps, msg.scout)
            return value_of(working[obj])

        proc = self.procedures[msg.name]
        results, updates = proc(msg.params, reader)
        effects = []
        seq = 0
        for obj, intent in updates:
            if obj not in working:
                working[obj] = self.materialize(obj, msg.deps, msg.scout)
            tag = EffectTag(msg.otid.counter, msg.otid.origin, seq)
            seq += 1
            e = prepare(obj, working[obj], intent, tag)
            working[obj] = apply_effect(working[obj], e)
            effects.append(e)
        if effects:
            gtid = Gtid(self.vdc[self.id] + 1, self.id)
            record = CommitRecord(
                msg.otid, [gtid], msg.deps, tuple(effects), msg.scout, stored_results=results
            )
            self._admit_record(env, record, via="commit")
            env.send(f"dc{self.id}", msg.scout, StoredTxReply(msg.otid, "new", gtid, results))
        else:
            env.send(f"dc{self.id}", msg.scout, StoredTxReply(msg.otid, "new", None, results))

    # -- inspection ---------------------------------------------------------------

    def object_values(self) -> dict[ObjectId, Any]:
        """Materialized value of every object at this replica's full state."""
        out = {}
        for obj in sorted(self.store):
            out[obj] = value_to_wire(self.materialize(obj, CausalClock(self.vdc, 0)))
        return out

    def dispatch(self, env, msg) -> None:
        if isinstance(msg, CommitRequest):
            self.on_commit_request(env, msg)
        elif isinstance(msg, GossipBatch):
            self.on_gossip(env, msg)
        elif isinstance(msg, FetchRequest):
            self.on_fetch_request(env, msg)
        elif isinstance(msg, SessionRequest):
            self.on_session_request(env, msg)
        elif isinstance(msg, StoredTxRequest):
            self.on_stored_request(env, msg)
        else:
            raise TypeError(f"dc{self.id} cannot handle {msg!r}")
