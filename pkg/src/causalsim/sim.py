"""Seeded discrete-event simulator for the replication protocol.

Nodes are actors driven by a single priority queue of timed events; a
(config, seed) pair fully determines the trace, byte for byte. The
network model delivers messages over per-pair FIFO links with configured
one-way delays (half the round-trip time) and optional seeded jitter.
Messages are dropped while a link is partitioned, an endpoint is crashed,
or a scout is disconnected; nothing is ever reordered within a link.

Faults are scheduled or scripted: DC crash (volatile state lost, durable
log kept), DC recovery, link partitions, scout disconnection, and a
targeted crash armed to fire right after a commit is durably logged but
before its reply is sent.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field
from typing import Any, Optional

from causalsim.crdt import ObjectId
from causalsim.dc import DataCenter
from causalsim.messages import message_from_wire, message_to_wire
from causalsim.scout import Scout, Unavailable

TRACE_SCHEMA = "causalsim-trace-1"


@dataclass
class FaultEvent:
    at: int
    kind: str  # dc_crash | dc_recover | dc_crash_on_commit | partition | heal
    #           | scout_disconnect | scout_reconnect
    dc: Optional[int] = None
    scout: Optional[str] = None
    to: Optional[int] = None
    links: Optional[list[list[str]]] = None


@dataclass
class SimConfig:
    num_dcs: int = 3
    num_scouts: int = 1
    k: int = 2
    rtt_dc_ms: Optional[list[list[int]]] = None
    scout_rtt_ms: Optional[list[list[int]]] = None  # per-scout profile, cycled
    gossip_ms: int = 20
    notify_ms: int = 25
    prune_ms: int = 5000
    retry_ms: int = 400
    think_ms: int = 10
    cache_capacity: int = 512  # the evaluation's per-client cache size
    jitter_ms: int = 0
    seed: int = 1
    commit_target: str = "session"  # or "farthest"
    notify_mode: str = "effects"  # or "invalidations"
    faults: list[FaultEvent] = field(default_factory=list)
    mutations: list[str] = field(default_factory=list)
    horizon_ms: int = 600_000
    drain_ms: int = 2000

    def validate(self) -> None:
        if not 1 <= self.k <= self.num_dcs:
            raise ValueError(f"k={self.k} must be within 1..{self.num_dcs}")
        if self.num_scouts < 0 or self.num_dcs < 1:
            raise ValueError("need at least one DC and non-negative scouts")
        if self.commit_target not in ("session", "farthest"):
            raise ValueError(f"unknown commit_target {self.commit_target!r}")
        if self.notify_mode not in ("effects", "invalidations"):
            raise ValueError(f"unknown notify_mode {self.notify_mode!r}")
        for f in self.faults:
            if f.at < 0:
                raise ValueError("fault times must be non-negative")

    def dc_rtt(self, a: int, b: int) -> int:
        if a == b:
            return 0
        if self.rtt_dc_ms is None:
            return 100
        return self.rtt_dc_ms[a][b]

    def scout_rtt(self, scout_idx: int, dc: int) -> int:
        if self.scout_rtt_ms is None:
            return 30
        profile = self.scout_rtt_ms[scout_idx % len(self.scout_rtt_ms)]
        return profile[dc]


@dataclass
class RunResult:
    config: SimConfig
    trace: list[dict]
    dcs: list[DataCenter]
    scouts: dict[str, Scout]
    synced: bool
    stats: dict

    def trace_bytes(self) -> bytes:
        lines = [json.dumps(ev, sort_keys=True, separators=(",", ":")) for ev in self.trace]
        return ("\n".join(lines) + "\n").encode()


class ScriptDriver:
    """Runs a scout's scripted transactions, suspending on round trips."""

    def __init__(self, scout: Scout, script: list[dict], think_ms: int):
        self.scout = scout
        self.script = script
        self.think_ms = think_ms
        self.idx = 0
        self.op_idx = 0
        self.tx = None
        self.stored_issued = False
        self.done = len(script) == 0
        self.sleeping = False

    def advance(self, sim) -> None:
        if self.done or self.sleeping:
            return
        scout = self.scout
        while self.idx < len(self.script):
            if not scout.ever_connected:
                return  # hold the very first transaction until storage is up
            spec = self.script[self.idx]
            if spec["kind"] == "stored":
                if self.stored_issued:
                    if scout.stored is not None:
                        return
                    self.stored_issued = False
                    self._next(sim)
                    if self.sleeping:
                        return
                    continue
                if not scout.connected:
                    return self._retry_later(sim)
                try:
                    scout.exec_stored_tx(sim, spec["name"], spec["params"])
                except Unavailable:
                    return self._retry_later(sim)
                self.stored_issued = True
                return
            if self.tx is None:
                self.tx = scout.begin(sim)
                self.op_idx = 0
            if scout.pruned_read:
                scout.pruned_read = False
                scout.rollback(sim, self.tx)
                self.tx = None
                return self._retry_later(sim)
            ops = spec["ops"]
            try:
                while self.op_idx < len(ops):
                    op = ops[self.op_idx]
                    if op[0] == "read":
                        if scout.read(sim, self.tx, op[1]) is None:
                            return
                    elif op[0] == "multi":
                        if scout.multi_read(sim, self.tx, op[1]) is None:
                            return
                    elif op[0] == "update":
                        scout.update(sim, self.tx, op[1], op[2])
                    elif op[0] == "pin":
                        scout.pin(op[1])
                    elif op[0] == "unpin":
                        scout.unpin(op[1])
                    else:
                        raise ValueError(f"unknown op {op[0]!r}")
                    self.op_idx += 1
            except Unavailable:
                scout.rollback(sim, self.tx)
                self.tx = None
                return self._retry_later(sim)
            scout.commit(sim, self.tx)
            self.tx = None
            self._next(sim)
            if self.sleeping:
                return
        self.done = True

    def _next(self, sim) -> None:
        self.idx += 1
        self.op_idx = 0
        if self.idx >= len(self.script):
            self.done = True
        elif self.think_ms > 0:
            self.sleeping = True
            sim.schedule(sim.now() + self.think_ms, "script", self.scout.id)

    def _retry_later(self, sim) -> None:
        self.sleeping = True
        sim.schedule(sim.now() + max(self.think_ms, sim.config.retry_ms), "script", self.scout.id)


class Simulation:
    """Event loop, network model and fault injector; also the nodes' env."""

    def __init__(
        self,
        config: SimConfig,
        scripts: Optional[dict[str, list[dict]]] = None,
        initial_states: Optional[dict[ObjectId, Any]] = None,
        procedures: Optional[dict] = None,
    ):
        config.validate()
        self.config = config
        self.rng = random.Random(f"{config.seed}/net")
        self.time = 0
        self.seq = 0
        self.heap: list = []
        self.trace_log: list[dict] = []
        self.inflight = 0
        self._fifo: dict = {}
        self.partitions: set[frozenset] = set()
        self.disconnected: set[str] = set()
        self.crashed: set[int] = set()
        self.stats = {
            "messages": {},
            "dropped": 0,
            "max_pending_remote": 0,
            "max_pending_commits": 0,
            "frontier_lag_max": 0,
        }

        mut = set(config.mutations)
        self.dcs = [
            DataCenter(
                i,
                config.num_dcs,
                config.k,
                procedures=dict(procedures or {}),
                notify_mode="invalidations" if config.notify_mode == "invalidations" else "effects",
                disable_dedup="disable_dedup" in mut,
                disable_k_gating="disable_k_gating" in mut,
            )
            for i in range(config.num_dcs)
        ]
        if initial_states:
            for dc in self.dcs:
                dc.seed_store(dict(initial_states))

        self.scouts: dict[str, Scout] = {}
        self.drivers: dict[str, ScriptDriver] = {}
        scripts = scripts or {}
        for idx in range(config.num_scouts):
            sid = f"s{idx}"
            prefs = sorted(range(config.num_dcs), key=lambda d: (config.scout_rtt(idx, d), d))
            commit_dc = None
            if config.commit_target == "farthest":
                commit_dc = max(range(config.num_dcs), key=lambda d: (config.scout_rtt(idx, d), d))
            scout = Scout(
                sid,
                config.num_dcs,
                config.cache_capacity,
                dc_preference=prefs,
                commit_dc=commit_dc,
                disable_guards="disable_guards" in mut or "disable_k_gating" in mut,
            )
            self.scouts[sid] = scout
            self.drivers[sid] = ScriptDriver(scout, scripts.get(sid, []), config.think_ms)

        self._reorder_armed = "reorder_session" in mut
        self.meta: dict = {}

    # -- env interface -------------------------------------------------------

    def now(self) -> int:
        return self.time

    def trace(self, ev: dict) -> None:
        out = {"t": self.time}
        out.update(ev)
        self.trace_log.append(out)

    def schedule(self, at: int, kind: str, payload) -> None:
        self.seq += 1
        heapq.heappush(self.heap, (at, self.seq, kind, payload))

    def send(self, src: str, dst: str, msg) -> None:
        wire = message_to_wire(msg)
        kind = wire["m"]
        self.stats["messages"][kind] = self.stats["messages"].get(kind, 0) + 1
        if self._blocked(src, dst):
            self.stats["dropped"] += 1
            return
        delay = self._one_way(src, dst) + (
            self.rng.randint(0, self.config.jitter_ms) if self.config.jitter_ms else 0
        )
        at = self.time + delay
        last = self._fifo.get((src, dst), 0)
        at = max(at, last)
        self._fifo[(src, dst)] = at
        if (
            self._reorder_armed
            and kind == "notify"
            and dst == "s0"
            and wire["frontier"] != wire["prev"]
        ):
            # session-reorder mutation: hold one frontier-advancing notify and
            # deliver it long after its successors, breaking FIFO once
            self._reorder_armed = False
            self.inflight += 1
            self.schedule(at + 120, "deliver", (src, dst, wire))
            return
        self.inflight += 1
        self.schedule(at, "deliver", (src, dst, wire))

    def request_crash(self, dc_id: int) -> None:
        self._crash_dc(dc_id)

    # -- network model ---------------------------------------------------------

    def _one_way(self, src: str, dst: str) -> int:
        def parse(n):
            return ("dc", int(n[2:])) if n.startswith("dc") else ("s", int(n[1:]))

        (ka, ia), (kb, ib) = parse(src), parse(dst)
        if ka == "dc" and kb == "dc":
            return max(self.config.dc_rtt(ia, ib) // 2, 0)
        if ka == "s":
            return max(self.config.scout_rtt(ia, ib) // 2, 0)
        return max(self.config.scout_rtt(ib, ia) // 2, 0)

    def _blocked(self, a: str, b: str) -> bool:
        if frozenset((a, b)) in self.partitions:
            return True
        for n in (a, b):
            if n.startswith("dc") and int(n[2:]) in self.crashed:
                return True
            if n in self.disconnected:
                return True
        return False

    # -- faults ------------------------------------------------------------------

    def _crash_dc(self, dc_id: int) -> None:
        self.crashed.add(dc_id)
        self.dcs[dc_id].crash()
        self.trace({"ev": "fault", "kind": "dc_crash", "dc": dc_id})
        for scout in self.scouts.values():
            if scout.session == dc_id:
                scout.on_session_lost(self)
                scout.ensure_session(self)

    def _apply_fault(self, f: FaultEvent) -> None:
        if f.kind == "dc_crash":
            self._crash_dc(f.dc)
        elif f.kind == "dc_crash_on_commit":
            self.dcs[f.dc].crash_on_next_commit = True
            self.trace({"ev": "fault", "kind": "dc_crash_on_commit", "dc": f.dc})
        elif f.kind == "dc_recover":
            self.crashed.discard(f.dc)
            self.dcs[f.dc].recover()
            self.trace({"ev": "fault", "kind": "dc_recover", "dc": f.dc})
        elif f.kind == "partition":
            for a, b in f.links:
                self.partitions.add(frozenset((a, b)))
            self.trace({"ev": "fault", "kind": "partition", "links": f.links})
        elif f.kind == "heal":
            for a, b in f.links:
                self.partitions.discard(frozenset((a, b)))
            self.trace({"ev": "fault", "kind": "heal", "links": f.links})
        elif f.kind == "scout_disconnect":
            self.disconnected.add(f.scout)
            self.trace({"ev": "fault", "kind": "scout_disconnect", "scout": f.scout})
            self.scouts[f.scout].on_session_lost(self)
        elif f.kind == "scout_reconnect":
            self.disconnected.discard(f.scout)
            scout = self.scouts[f.scout]
            if f.to is not None:
                scout.forced_target = f.to
                if scout.session is not None and scout.session != f.to:
                    scout.on_session_lost(self)
            self.trace({"ev": "fault", "kind": "scout_reconnect", "scout": f.scout, "to": f.to})
            scout.ensure_session(self)
        else:
            raise ValueError(f"unknown fault kind {f.kind!r}")

    # -- main loop -------------------------------------------------------------------

    def run(self) -> RunResult:
        header = {
            "ev": "config",
            "schema": TRACE_SCHEMA,
            "seed": self.config.seed,
            "k": self.config.k,
            "num_dcs": self.config.num_dcs,
            "num_scouts": self.config.num_scouts,
            "mutations": list(self.config.mutations),
        }
        header.update(self.meta)
        self.trace(header)
        for f in sorted(self.config.faults, key=lambda f: f.at):
            self.schedule(f.at, "fault", f)
        for dc in self.dcs:
            self.schedule(self.config.gossip_ms, "gossip", dc.id)
            self.schedule(self.config.notify_ms, "notify", dc.id)
            self.schedule(self.config.prune_ms, "prune", dc.id)
        for sid, scout in self.scouts.items():
            self.schedule(0, "init", sid)
            self.schedule(self.config.retry_ms, "retry", sid)

        scripts_done_at: Optional[int] = None
        fault_horizon = max((f.at for f in self.config.faults), default=-1)
        synced = False
        while self.heap:
            at, _, kind, payload = heapq.heappop(self.heap)
            if at > self.config.horizon_ms:
                break
            self.time = at
            self._handle(kind, payload)
            if scripts_done_at is None and all(d.done for d in self.drivers.values()):
                scripts_done_at = self.time
            if scripts_done_at is not None and self.time > fault_horizon:
                # in-flight heartbeats cannot unsync an already-synced state,
                # so the stop check ignores them
                if self._fully_synced():
                    synced = True
                    break
                if self.time >= max(scripts_done_at, fault_horizon) + self.config.drain_ms:
                    break
        self._finalize(synced)
        return RunResult(
            config=self.config,
            trace=self.trace_log,
            dcs=self.dcs,
            scouts=self.scouts,
            synced=synced,
            stats=self.stats,
        )

    def _handle(self, kind: str, payload) -> None:
        if kind == "deliver":
            self.inflight -= 1
            src, dst, wire = payload
            if self._blocked(src, dst):
                self.stats["dropped"] += 1
                return
            msg = message_from_wire(wire)
            if dst.startswith("dc"):
                dc = self.dcs[int(dst[2:])]
                dc.dispatch(self, msg)
                self.stats["max_pending_remote"] = max(
                    self.stats["max_pending_remote"], len(dc.pending_remote)
                )
                self.stats["max_pending_commits"] = max(
                    self.stats["max_pending_commits"], len(dc.pending_commits)
                )
            else:
                scout = self.scouts[dst]
                scout.dispatch(self, msg)
                if scout.wake:
                    scout.wake = False
                    self.drivers[dst].advance(self)
        elif kind == "fault":
            self._apply_fault(payload)
        elif kind == "gossip":
            dc = self.dcs[payload]
            if payload not in self.crashed:
                dc.gossip_tick(self)
                lag = sum(dc.vdc.entries) - sum(dc.announceable_frontier().entries)
                self.stats["frontier_lag_max"] = max(self.stats["frontier_lag_max"], lag)
            self.schedule(self.time + self.config.gossip_ms, "gossip", payload)
        elif kind == "notify":
            if payload not in self.crashed:
                self.dcs[payload].notify_tick(self)
            self.schedule(self.time + self.config.notify_ms, "notify", payload)
        elif kind == "prune":
            if payload not in self.crashed:
                self.dcs[payload].prune_tick(self)
            self.schedule(self.time + self.config.prune_ms, "prune", payload)
        elif kind == "init":
            self.scouts[payload].ensure_session(self)
        elif kind == "retry":
            scout = self.scouts[payload]
            if payload not in self.disconnected:
                scout.retry_tick(self)
            self.schedule(self.time + self.config.retry_ms, "retry", payload)
        elif kind == "script":
            driver = self.drivers[payload]
            driver.sleeping = False
            driver.advance(self)
        else:
            raise ValueError(f"unknown event kind {kind!r}")

    def _fully_synced(self) -> bool:
        live = [dc for dc in self.dcs if dc.id not in self.crashed]
        if not live:
            return False
        for dc in live:
            if dc.pending_remote or dc.pending_commits or dc.pending_fetches or dc.pending_stored:
                return False
            if dc.vdc != live[0].vdc:
                return False
            for peer in live:
                if peer.id != dc.id and dc.known_vectors.get(peer.id) != peer.vdc:
                    return False
        for sid, scout in self.scouts.items():
            if sid in self.disconnected:
                continue
            if not scout.connected or scout.probe_inflight is not None:
                return False
            if scout.pending or scout.fetch is not None or scout.stored is not None:
                return False
        return True

    def _finalize(self, synced: bool) -> None:
        dcs_out = {}
        for dc in self.dcs:
            if dc.id in self.crashed:
                continue
            dcs_out[f"dc{dc.id}"] = {
                "vdc": list(dc.vdc.entries),
                "values": {
                    f"{obj.key}#{obj.crdt_type.value}": value
                    for obj, value in dc.object_values().items()
                },
            }
        scouts_out = {
            sid: {
                "clock": [list(s.clock.dc_part.entries), s.clock.local_part],
                "pending": len(s.pending),
                "connected": s.connected,
            }
            for sid, s in sorted(self.scouts.items())
        }
        self.trace(
            {
                "ev": "quiesce",
                "synced": synced,
                "dcs": dcs_out,
                "scouts": scouts_out,
                "crashed": sorted(self.crashed),
            }
        )
