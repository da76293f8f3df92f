"""Client-side replica: cache, interactive transactions, commit pump, failover.

A scout executes one transaction at a time against a frozen snapshot
clock. Reads are served from the cache when possible; misses fetch the
snapshot version from the session DC in one round trip per batch. Commits
are local and immediate: effects apply to the cache, the record joins a
durable pending queue, and global commit happens asynchronously with
at-least-once retries (the DC-side OTID filter removes duplicates).

A pending record leaves the queue only once it is K-durable. On failover
the scout connects to a DC whose K-durable frontier covers its own clock
and replays the whole queue there, so the new DC never misses one of the
scout's causal dependencies.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Optional

from causalsim.clocks import CausalClock, DcId, Gtid, Otid, ScoutId
from causalsim.crdt import (
    EffectOp,
    EffectTag,
    ObjectId,
    apply_effect,
    effect_to_wire,
    prepare,
    state_from_wire,
    value_of,
    value_to_wire,
)
from causalsim.messages import (
    CommitRecord,
    CommitReply,
    CommitRequest,
    FetchReply,
    FetchRequest,
    NotifyBatch,
    SessionReply,
    SessionRequest,
    StoredTxReply,
    StoredTxRequest,
)


class Unavailable(Exception):
    """Cache miss while disconnected: the scout cannot make progress."""


class ReadFailed(Exception):
    """The DC pruned the snapshot version; the transaction may abort."""


class UsageError(Exception):
    """API misuse: overlapping transactions, update without read."""


class CachePinOverflow(Exception):
    """Every cache entry is pinned and the capacity is exceeded."""


class ProtocolError(Exception):
    """Session contract broken (non-monotonic notify frontier)."""


@dataclass
class CacheEntry:
    state: Any
    clock: CausalClock
    pinned: bool = False
    valid: bool = True


@dataclass
class PendingCommit:
    record: CommitRecord
    gtids: list[Gtid] = field(default_factory=list)
    acked: bool = False


@dataclass
class TxHandle:
    otid: Otid
    snapshot: CausalClock
    begin_time: int
    status: str = "active"
    working: dict[ObjectId, Any] = field(default_factory=dict)
    read_set: list[ObjectId] = field(default_factory=list)
    effects: list[EffectOp] = field(default_factory=list)
    seq: int = 0
    round_trips: int = 0
    fetched: set[ObjectId] = field(default_factory=set)


@dataclass
class _OutstandingFetch:
    req_id: int
    objects: list[ObjectId]


@dataclass
class _OutstandingStored:
    name: str
    params: Any
    otid: Otid
    deps: CausalClock
    reply: Optional[StoredTxReply] = None


class Scout:
    def __init__(
        self,
        scout_id: ScoutId,
        num_dcs: int,
        cache_capacity: int,
        dc_preference: Optional[list[DcId]] = None,
        commit_dc: Optional[DcId] = None,
        disable_guards: bool = False,
    ):
        self.id = scout_id
        self.num_dcs = num_dcs
        self.capacity = cache_capacity
        self.dc_preference = dc_preference or list(range(num_dcs))
        self.commit_dc = commit_dc
        self.disable_guards = disable_guards

        self.clock = CausalClock.zero(num_dcs)
        self.cache: OrderedDict[ObjectId, CacheEntry] = OrderedDict()
        self.pending: list[PendingCommit] = []
        self.durability: dict[int, str] = {}
        self.otid_counter = 0
        self.session: Optional[DcId] = None
        self.session_epoch = 0
        self.probe_idx = 0
        self.probe_inflight: Optional[DcId] = None
        self.forced_target: Optional[DcId] = None
        self.tx: Optional[TxHandle] = None
        self.tx_stash: dict[ObjectId, Optional[CacheEntry]] = {}
        self.fetch: Optional[_OutstandingFetch] = None
        self.stored: Optional[_OutstandingStored] = None
        self.notify_backlog: list[NotifyBatch] = []
        self.pending_unsub: list[ObjectId] = []
        self.req_counter = 0
        self.wake = False
        self.pruned_read = False
        self.stored_result = None
        self.ever_connected = False

    # -- identity helpers ----------------------------------------------------

    def _dc_addr(self, dc: DcId) -> str:
        return f"dc{dc}"

    @property
    def connected(self) -> bool:
        return self.session is not None

    # -- transaction API -------------------------------------------------------

    def begin(self, env) -> TxHandle:
        if self.tx is not None:
            raise UsageError(f"{self.id}: transaction already active")
        self.otid_counter += 1
        tx = TxHandle(
            otid=Otid(self.otid_counter, self.id),
            snapshot=self.clock,
            begin_time=env.now(),
        )
        self.tx = tx
        self.tx_stash = {}
        env.trace(
            {
                "ev": "tx_begin",
                "node": self.id,
                "otid": [tx.otid.counter, tx.otid.origin],
                "snap": [list(tx.snapshot.dc_part.entries), tx.snapshot.local_part],
            }
        )
        return tx

    def read(self, env, tx: TxHandle, obj: ObjectId):
        """Return the readable value, or None after issuing a fetch."""
        got = self.multi_read(env, tx, [obj])
        return None if got is None else got[0]

    def multi_read(self, env, tx: TxHandle, objs: list[ObjectId]):
        if tx is not self.tx or tx.status != "active":
            raise UsageError("read on inactive transaction")
        missing = []
        for obj in objs:
            if obj in tx.working:
                continue
            base = self._resolve_base(obj)
            if base is None:
                missing.append(obj)
            else:
                tx.working[obj] = base
        if missing:
            if not self.connected:
                raise Unavailable(f"{self.id}: miss on {missing} while disconnected")
            self._issue_fetch(env, tx, missing)
            return None
        out = []
        for obj in objs:
            if obj not in tx.read_set:
                tx.read_set.append(obj)
                src = "dc" if obj in tx.fetched else "cache"
                self._trace_read(env, tx, obj, src)
            out.append(value_of(tx.working[obj]))
        return out

    def _resolve_base(self, obj: ObjectId):
        if obj in self.tx_stash:
            stashed = self.tx_stash[obj]
            if stashed is None or not stashed.valid:
                return None
            return stashed.state
        entry = self.cache.get(obj)
        if entry is not None and entry.valid:
            self.cache.move_to_end(obj)
            return entry.state
        return None

    def _issue_fetch(self, env, tx: TxHandle, objs: list[ObjectId]) -> None:
        self.req_counter += 1
        tx.round_trips += 1
        self.fetch = _OutstandingFetch(self.req_counter, objs)
        env.send(
            self.id,
            self._dc_addr(self.session),
            FetchRequest(self.id, self.req_counter, objs, tx.snapshot, self.pending_unsub),
        )
        self.pending_unsub = []

    def _trace_read(self, env, tx: TxHandle, obj: ObjectId, src: str) -> None:
        env.trace(
            {
                "ev": "read",
                "node": self.id,
                "otid": [tx.otid.counter, tx.otid.origin],
                "obj": [obj.key, obj.crdt_type.value],
                "value": value_to_wire(tx.working[obj]),
                "ver": [list(tx.snapshot.dc_part.entries), tx.snapshot.local_part],
                "src": src,
                "dc": self.session,
            }
        )

    def update(self, env, tx: TxHandle, obj: ObjectId, intent: tuple) -> None:
        if tx is not self.tx or tx.status != "active":
            raise UsageError("update on inactive transaction")
        if obj not in tx.working:
            raise UsageError(f"update of {obj} before reading it")
        tag = EffectTag(tx.otid.counter, tx.otid.origin, tx.seq)
        tx.seq += 1
        effect = prepare(obj, tx.working[obj], intent, tag)
        tx.working[obj] = apply_effect(tx.working[obj], effect)
        tx.effects.append(effect)
        env.trace(
            {
                "ev": "update",
                "node": self.id,
                "otid": [tx.otid.counter, tx.otid.origin],
                "obj": [obj.key, obj.crdt_type.value],
                "effect": effect_to_wire(effect),
            }
        )

    def commit(self, env, tx: TxHandle) -> None:
        if tx is not self.tx or tx.status != "active":
            raise UsageError("commit on inactive transaction")
        tx.status = "committed"
        read_only = not tx.effects
        if not read_only:
            for effect in tx.effects:
                entry = self.cache.get(effect.target)
                if entry is not None and entry.valid:
                    entry.state = apply_effect(entry.state, effect)
                    entry.clock = CausalClock(entry.clock.dc_part, tx.otid.counter)
            self.clock = self.clock.with_local(tx.otid.counter)
            record = CommitRecord(tx.otid, [], tx.snapshot, tuple(tx.effects), self.id)
            self.pending.append(PendingCommit(record))
            self.durability[tx.otid.counter] = "local"
        touched = []
        for e in tx.effects:
            pair = [e.target.key, e.target.crdt_type.value]
            if pair not in touched:
                touched.append(pair)
        env.trace(
            {
                "ev": "local_commit",
                "node": self.id,
                "otid": [tx.otid.counter, tx.otid.origin],
                "deps": [list(tx.snapshot.dc_part.entries), tx.snapshot.local_part],
                "objs": touched,
                "read_only": read_only,
                "rts": tx.round_trips,
                "dur": env.now() - tx.begin_time,
            }
        )
        self.tx = None
        self.tx_stash = {}
        if not read_only and self.connected:
            self._send_commit(env, self.pending[-1])

    def rollback(self, env, tx: TxHandle) -> None:
        if tx is not self.tx or tx.status != "active":
            raise UsageError("rollback on inactive transaction")
        tx.status = "rolledBack"
        env.trace(
            {
                "ev": "tx_abort",
                "node": self.id,
                "otid": [tx.otid.counter, tx.otid.origin],
                "rts": tx.round_trips,
            }
        )
        self.tx = None
        self.tx_stash = {}
        self.fetch = None

    def tx_status(self, counter: int) -> str:
        return self.durability.get(counter, "unknown")

    # -- commit pump -------------------------------------------------------------

    def _commit_target(self) -> Optional[str]:
        if self.commit_dc is not None:
            return self._dc_addr(self.commit_dc)
        if self.session is not None:
            return self._dc_addr(self.session)
        return None

    def _send_commit(self, env, pc: PendingCommit) -> None:
        target = self._commit_target()
        if target is None:
            return
        r = pc.record
        env.send(self.id, target, CommitRequest(self.id, r.otid, r.deps, r.effects))

    def pump_tick(self, env) -> None:
        """Resend every unacknowledged pending record, oldest first."""
        if not self.connected:
            return
        for pc in self.pending:
            if not pc.acked:
                self._send_commit(env, pc)

    def on_commit_reply(self, env, reply: CommitReply) -> None:
        pc = next((p for p in self.pending if p.record.otid == reply.otid), None)
        env.trace(
            {
                "ev": "commit_reply",
                "node": self.id,
                "otid": [reply.otid.counter, reply.otid.origin],
                "status": reply.status,
                "gtid": None if reply.gtid is None else [reply.gtid.counter, reply.gtid.origin],
            }
        )
        if pc is None:
            return
        if reply.status == "null":
            # pruned everywhere: globally processed, safe to forget
            self.pending.remove(pc)
            self.durability[reply.otid.counter] = "k_durable"
            return
        pc.acked = True
        if reply.gtid is not None and reply.gtid not in pc.gtids:
            pc.gtids.append(reply.gtid)
        self.durability[reply.otid.counter] = "global"
        self._sweep_k_durable()

    def _sweep_k_durable(self) -> None:
        kept = []
        for pc in self.pending:
            if any(self.clock.dc_part.covers(g) for g in pc.gtids):
                self.durability[pc.record.otid.counter] = "k_durable"
            else:
                kept.append(pc)
        self.pending = kept

    # -- cache ----------------------------------------------------------------------

    def admit(self, env, obj: ObjectId, state, clock: CausalClock, pin: bool = False) -> None:
        entry = self.cache.get(obj)
        if entry is not None:
            entry.state = state
            entry.clock = clock
            entry.valid = True
            entry.pinned = entry.pinned or pin
            self.cache.move_to_end(obj)
            return
        if self.capacity == 0:
            if pin:
                raise CachePinOverflow(f"{self.id}: cannot pin with a zero-capacity cache")
            return
        while len(self.cache) >= self.capacity:
            victim = next((k for k, e in self.cache.items() if not e.pinned), None)
            if victim is None:
                raise CachePinOverflow(f"{self.id}: all {len(self.cache)} entries pinned")
            del self.cache[victim]
            self.pending_unsub.append(victim)
        self.cache[obj] = CacheEntry(state, clock, pinned=pin)

    def pin(self, objs: list[ObjectId]) -> None:
        pinned = sum(1 for e in self.cache.values() if e.pinned)
        for obj in objs:
            entry = self.cache.get(obj)
            if entry is None or entry.pinned:
                continue
            if pinned >= self.capacity:
                raise CachePinOverflow(f"{self.id}: cannot pin beyond capacity")
            entry.pinned = True
            pinned += 1

    def unpin(self, objs: list[ObjectId]) -> None:
        for obj in objs:
            entry = self.cache.get(obj)
            if entry is not None:
                entry.pinned = False

    def _stash_protect(self, obj: ObjectId) -> None:
        # keep the version an open snapshot needs before changing the entry
        if self.tx is not None and obj not in self.tx_stash:
            entry = self.cache.get(obj)
            if entry is None:
                self.tx_stash[obj] = None
            else:
                self.tx_stash[obj] = CacheEntry(entry.state, entry.clock, entry.pinned, entry.valid)

    # -- notifications -----------------------------------------------------------------

    def on_notify(self, env, batch: NotifyBatch) -> None:
        if batch.dc != self.session or batch.epoch != self.session_epoch:
            return  # stale batch from a previous session
        if self.fetch is not None:
            self.notify_backlog.append(batch)
            return
        self._apply_notify(env, batch)

    def _apply_notify(self, env, batch: NotifyBatch) -> None:
        if batch.prev != self.clock.dc_part or not self.clock.dc_part.leq(batch.frontier):
            if not self.disable_guards:
                raise ProtocolError(
                    f"{self.id}: notify base {batch.prev} does not match clock {self.clock}"
                )
        for kind, payload in batch.items:
            if kind == "effects":
                for effect in payload:
                    if effect.tag.origin == self.id:
                        continue
                    entry = self.cache.get(effect.target)
                    if entry is None or not entry.valid:
                        continue
                    if not self.disable_guards and entry.clock.dc_part != batch.prev:
                        if batch.prev.leq(entry.clock.dc_part):
                            continue  # admitted ahead of this batch already
                        entry.valid = False
                        entry.state = None
                        continue
                    self._stash_protect(effect.target)
                    # the entry clock advances in the sweep below, after every
                    # effect of this batch has been applied
                    entry.state = apply_effect(entry.state, effect)
            else:
                for obj in payload:
                    entry = self.cache.get(obj)
                    if entry is not None:
                        self._stash_protect(obj)
                        entry.valid = False
                        entry.state = None
        # entries untouched by this batch are still current at the frontier
        for obj, entry in self.cache.items():
            if entry.valid and entry.clock.dc_part == batch.prev:
                entry.clock = CausalClock(batch.frontier, entry.clock.local_part)
        self.clock = self.clock.with_dc_part(batch.frontier)
        for otid, gtid in batch.acks:
            pc = next((p for p in self.pending if p.record.otid == otid), None)
            if pc is not None:
                pc.acked = True
                if gtid not in pc.gtids:
                    pc.gtids.append(gtid)
                if self.durability.get(otid.counter) == "local":
                    self.durability[otid.counter] = "global"
        self._sweep_k_durable()
        env.trace(
            {
                "ev": "notify",
                "node": self.id,
                "dc": batch.dc,
                "frontier": list(batch.frontier.entries),
                "acks": [[o.counter, o.origin] for o, _ in batch.acks],
            }
        )

    # -- fetch replies --------------------------------------------------------------------

    def _drain_notify_backlog(self, env) -> None:
        backlog, self.notify_backlog = self.notify_backlog, []
        for batch in backlog:
            if batch.dc == self.session and batch.epoch == self.session_epoch:
                self._apply_notify(env, batch)

    def on_fetch_reply(self, env, reply: FetchReply) -> None:
        if self.fetch is None or reply.req_id != self.fetch.req_id:
            return  # stale reply from a previous session
        self.fetch = None
        tx = self.tx
        if reply.status == "pruned":
            self._drain_notify_backlog(env)
            env.trace({"ev": "read_failed", "node": self.id, "reason": "pruned"})
            self.wake = True
            self.pruned_read = True
            return
        for obj, snap_wire, admit_wire in reply.versions:
            if tx is not None and tx.status == "active":
                tx.working[obj] = state_from_wire(snap_wire)
                tx.fetched.add(obj)
            admit_clock = CausalClock(reply.admit_frontier, self.clock.local_part)
            self._stash_protect(obj)
            self.admit(env, obj, state_from_wire(admit_wire), admit_clock)
        self._drain_notify_backlog(env)
        self.wake = True

    # -- stored transactions -----------------------------------------------------------------

    def exec_stored_tx(self, env, name: str, params) -> None:
        if self.tx is not None:
            raise UsageError("stored transaction during an open transaction")
        if not self.connected:
            raise Unavailable(f"{self.id}: stored call while disconnected")
        self.otid_counter += 1
        otid = Otid(self.otid_counter, self.id)
        self.stored = _OutstandingStored(name, params, otid, self.clock)
        env.send(
            self.id,
            self._dc_addr(self.session),
            StoredTxRequest(self.id, name, params, otid, self.clock),
        )

    def on_stored_reply(self, env, reply: StoredTxReply) -> None:
        if self.stored is None or reply.otid != self.stored.otid:
            return
        call, self.stored = self.stored, None
        if reply.gtid is not None:
            self.clock = self.clock.with_local(reply.otid.counter)
            self.durability[reply.otid.counter] = "global"
        env.trace(
            {
                "ev": "stored_tx",
                "node": self.id,
                "otid": [reply.otid.counter, reply.otid.origin],
                "name": call.name,
                "status": reply.status,
                "gtid": None if reply.gtid is None else [reply.gtid.counter, reply.gtid.origin],
                "results": reply.results,
            }
        )
        self.stored_result = reply.results
        self.wake = True

    # -- sessions and failover ------------------------------------------------------------------

    def on_session_lost(self, env) -> None:
        if self.session is None:
            return
        env.trace({"ev": "session", "node": self.id, "dc": self.session, "result": "lost"})
        self.session = None
        self.probe_inflight = None
        self.notify_backlog = []

    def ensure_session(self, env) -> None:
        """Probe candidate DCs until one whose frontier covers us accepts."""
        if self.connected or self.probe_inflight is not None:
            return
        if self.forced_target is not None:
            candidate = self.forced_target
        else:
            candidate = self.dc_preference[self.probe_idx % len(self.dc_preference)]
            self.probe_idx += 1
        self.probe_inflight = candidate
        self.session_epoch += 1
        cached = sorted(o for o, e in self.cache.items() if e.valid)
        env.send(
            self.id,
            self._dc_addr(candidate),
            SessionRequest(self.id, self.session_epoch, self.clock.dc_part, cached),
        )

    def on_session_reply(self, env, reply: SessionReply) -> None:
        if reply.dc != self.probe_inflight or reply.epoch != self.session_epoch:
            return  # late reply from an earlier probe
        candidate, self.probe_inflight = self.probe_inflight, None
        if not reply.accepted:
            env.trace({"ev": "session", "node": self.id, "dc": candidate, "result": "rejected"})
            return
        self.session = candidate
        self.ever_connected = True
        self.forced_target = None
        env.trace({"ev": "session", "node": self.id, "dc": candidate, "result": "connected"})
        # replay every record that is not yet K-durable, in OTID order; the
        # DC's duplicate filter turns re-deliveries into alias lookups
        for pc in sorted(self.pending, key=lambda p: p.record.otid.counter):
            self._send_commit(env, pc)
        if self.stored is not None:
            call = self.stored
            env.send(
                self.id,
                self._dc_addr(self.session),
                StoredTxRequest(self.id, call.name, call.params, call.otid, call.deps),
            )
        if self.fetch is not None and self.tx is not None and self.tx.status == "active":
            objs = self.fetch.objects
            self.fetch = None
            self.tx.round_trips -= 1  # reissue, not a new application round trip
            self._issue_fetch(env, self.tx, objs)
        self.wake = True

    def retry_tick(self, env) -> None:
        """Periodic at-least-once machinery: reconnects and resends."""
        if not self.connected:
            # a probe that got no reply within a tick hit a dead DC: move on
            self.probe_inflight = None
            self.ensure_session(env)
            return
        self.pump_tick(env)
        if self.stored is not None:
            call = self.stored
            env.send(
                self.id,
                self._dc_addr(self.session),
                StoredTxRequest(self.id, call.name, call.params, call.otid, call.deps),
            )
        if self.fetch is not None and self.tx is not None and self.tx.status == "active":
            objs = self.fetch.objects
            self.fetch = None
            self.tx.round_trips -= 1
            self._issue_fetch(env, self.tx, objs)

    # -- dispatch -----------------------------------------------------------------------

    def dispatch(self, env, msg) -> None:
        if isinstance(msg, CommitReply):
            self.on_commit_reply(env, msg)
        elif isinstance(msg, FetchReply):
            self.on_fetch_reply(env, msg)
        elif isinstance(msg, NotifyBatch):
            self.on_notify(env, msg)
        elif isinstance(msg, SessionReply):
            self.on_session_reply(env, msg)
        elif isinstance(msg, StoredTxReply):
            self.on_stored_reply(env, msg)
        else:
            raise TypeError(f"{self.id} cannot handle {msg!r}")
