"""Offline oracle over traces: consistency checks and metrics.

All checks work from the trace alone (plus the workload's deterministic
initial states), reconstructing transaction metadata from commit records
rather than inferring it from values. Read values are verified against an
independent materialization: replay every covered record's effects over
the initial state in a linear extension of the causality order.

A quiesced, healed run must additionally show every replica with equal
object values matching a full brute-force replay, and every counter equal
to the sum of increments over distinct transaction identities.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from causalsim import workload
from causalsim.crdt import CrdtType, ObjectId, apply_effect, effect_from_wire, new_state, value_to_wire


@dataclass
class Verdict:
    name: str
    ok: bool
    violations: list[str] = field(default_factory=list)
    skipped: Optional[str] = None

    def as_dict(self) -> dict:
        return {
            "ok": self.ok,
            "violations": self.violations[:10],
            "violation_count": len(self.violations),
            "skipped": self.skipped,
        }


@dataclass
class RecordInfo:
    otid: tuple  # (counter, origin)
    origin: str
    deps_dc: tuple
    deps_local: int
    effects: list
    objs: set
    aliases: list[tuple]  # (counter, dc)
    commit_time: int
    apply_times: dict[int, int]  # dc -> first durable apply time


@dataclass
class ReadInfo:
    scout: str
    tx: tuple
    obj: tuple
    value: Any
    ver_dc: tuple
    ver_local: int
    t: int
    src: str
    dc: Optional[int]
    updates_before: int  # own effects of this tx applied before the read


@dataclass
class TxInfo:
    scout: str
    otid: tuple
    snap_dc: tuple
    snap_local: int
    t_begin: int
    committed: bool = False
    read_only: bool = True
    aborted: bool = False
    rts: int = 0
    dur: int = 0
    objs: list = field(default_factory=list)
    label: Optional[str] = None


class TraceAnalysis:
    """Indexes a trace for the checkers."""

    def __init__(self, trace: list[dict]):
        if not trace or trace[0].get("ev") != "config":
            raise ValueError("trace must start with a config header")
        self.header = trace[0]
        self.k = self.header["k"]
        self.num_dcs = self.header["num_dcs"]
        self.records: dict[tuple, RecordInfo] = {}
        self.reads: list[ReadInfo] = []
        self.txs: dict[tuple, TxInfo] = {}
        self.tx_order: dict[str, list[tuple]] = {}
        self.tx_updates: dict[tuple, list] = {}
        self.quiesce: Optional[dict] = None
        self.by_alias: dict[tuple, tuple] = {}
        self.duplicate_applies: list[str] = []
        self._parse(trace)
        scenario = self.header.get("scenario", {})
        self.initial = workload.initial_states_for(
            scenario.get("workload", {"kind": "none"}), self.header.get("seed", 0)
        )
        self._oracle_cache: dict = {}

    def _parse(self, trace: list[dict]) -> None:
        seen_applies = set()
        for ev in trace:
            kind = ev["ev"]
            if kind == "tx_begin":
                otid = tuple(ev["otid"])
                self.txs[otid] = TxInfo(
                    scout=ev["node"],
                    otid=otid,
                    snap_dc=tuple(ev["snap"][0]),
                    snap_local=ev["snap"][1],
                    t_begin=ev["t"],
                )
                self.tx_order.setdefault(ev["node"], []).append(otid)
                self.tx_updates[otid] = []
            elif kind == "read":
                otid = tuple(ev["otid"])
                self.reads.append(
                    ReadInfo(
                        scout=ev["node"],
                        tx=otid,
                        obj=tuple(ev["obj"]),
                        value=ev["value"],
                        ver_dc=tuple(ev["ver"][0]),
                        ver_local=ev["ver"][1],
                        t=ev["t"],
                        src=ev["src"],
                        dc=ev.get("dc"),
                        updates_before=len(self.tx_updates.get(otid, [])),
                    )
                )
            elif kind == "update":
                self.tx_updates[tuple(ev["otid"])].append(ev["effect"])
            elif kind == "local_commit":
                otid = tuple(ev["otid"])
                tx = self.txs[otid]
                tx.committed = True
                tx.read_only = ev["read_only"]
                tx.rts = ev["rts"]
                tx.dur = ev["dur"]
                tx.objs = [tuple(o) for o in ev["objs"]]
                tx.label = ev.get("label")
            elif kind == "tx_abort":
                self.txs[tuple(ev["otid"])].aborted = True
            elif kind == "apply":
                otid = tuple(ev["otid"])
                dc = int(ev["node"][2:])
                if (dc, otid) in seen_applies:
                    self.duplicate_applies.append(f"record {otid} applied twice at dc{dc}")
                seen_applies.add((dc, otid))
                rec = self.records.get(otid)
                if rec is None:
                    rec = RecordInfo(
                        otid=otid,
                        origin=otid[1],
                        deps_dc=tuple(ev["deps"][0]),
                        deps_local=ev["deps"][1],
                        effects=[],
                        objs={tuple(o) for o in ev["objs"]},
                        aliases=[],
                        commit_time=ev["t"],
                        apply_times={},
                    )
                    self.records[otid] = rec
                if ev.get("effects"):
                    rec.effects = ev["effects"]
                for g in ev["gtids"]:
                    alias = (g[0], g[1])
                    if alias not in rec.aliases:
                        rec.aliases.append(alias)
                    self.by_alias[alias] = otid
                rec.commit_time = min(rec.commit_time, ev["t"])
                rec.apply_times.setdefault(dc, ev["t"])
            elif kind == "quiesce":
                self.quiesce = ev
        # a tx's label arrives via the driver script, which the sim does not
        # know; recover labels from the scenario if present
        self._recover_labels()

    def _recover_labels(self) -> None:
        scenario = self.header.get("scenario")
        if not scenario:
            return
        wl = scenario.get("workload", {})
        if wl.get("kind") != "social":
            return
        sim_cfg = scenario.get("sim", {})
        scripts = workload.build(
            wl,
            sim_cfg.get("num_scouts", self.header.get("num_scouts", 0)),
            self.header.get("seed", 0),
            sim_cfg.get("cache_capacity", 64),
        )[0]
        for scout, order in self.tx_order.items():
            script = scripts.get(scout, [])
            # transactions map to script entries in order, with retries of an
            # aborted entry consuming extra OTIDs
            spec_idx = 0
            for otid in order:
                tx = self.txs[otid]
                if spec_idx < len(script):
                    tx.label = script[spec_idx].get("label")
                if not tx.aborted:
                    spec_idx += 1

    # -- coverage and materialization ------------------------------------------

    def covers(self, rec: RecordInfo, ver_dc: tuple, ver_local: int, reader: str) -> bool:
        if rec.origin == reader and rec.otid[0] <= ver_local:
            return True
        return any(counter <= ver_dc[dc] for counter, dc in rec.aliases)

    def causal_order(self) -> list[RecordInfo]:
        return sorted(self.records.values(), key=lambda r: (r.commit_time, r.otid[0], r.otid[1]))

    def oracle_value(self, obj: tuple, ver_dc: tuple, ver_local: int, reader: str):
        """Independent replay of every covered record's effects on one object."""
        key = (obj, ver_dc, ver_local, reader)
        if key in self._oracle_cache:
            return self._oracle_cache[key]
        oid = ObjectId(obj[0], CrdtType(obj[1]))
        state = self.initial.get(oid, new_state(oid.crdt_type))
        for rec in self.causal_order():
            if obj not in rec.objs:
                continue
            if not self.covers(rec, ver_dc, ver_local, reader):
                continue
            for ew in rec.effects:
                effect = effect_from_wire(ew)
                if (effect.target.key, effect.target.crdt_type.value) == obj:
                    state = apply_effect(state, effect)
        self._oracle_cache[key] = state
        return state


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------


def check_history_acyclic(tr: TraceAnalysis) -> Verdict:
    """The reconstructed potential-causality relation must be a partial order."""
    order = {otid: i for i, otid in enumerate(r.otid for r in tr.causal_order())}
    violations = []
    for rec in tr.records.values():
        my = order[rec.otid]
        for dc in range(tr.num_dcs):
            counter = rec.deps_dc[dc]
            while counter > 0:
                dep = tr.by_alias.get((counter, dc))
                if dep is not None:
                    if order[dep] > my and dep != rec.otid:
                        violations.append(f"{rec.otid} depends on later record {dep}")
                    break
                counter -= 1
        if rec.deps_local:
            prev = next(
                (o for o in tr.records if o[1] == rec.origin and o[0] == rec.deps_local), None
            )
            if prev is not None and order[prev] > my:
                violations.append(f"{rec.otid} precedes its own dependency {prev}")
    return Verdict("history_acyclic", not violations, violations)


def check_causal_snapshots(tr: TraceAnalysis) -> Verdict:
    """Every read observes one snapshot plus its own prior updates, and the
    snapshot's transaction set is transitively closed over dependencies."""
    violations = []
    for read in tr.reads:
        tx = tr.txs[read.tx]
        if (read.ver_dc, read.ver_local) != (tx.snap_dc, tx.snap_local):
            violations.append(f"{read.scout} tx {read.tx}: read outside the frozen snapshot")
            continue
        state = tr.oracle_value(read.obj, read.ver_dc, read.ver_local, read.scout)
        for ew in tr.tx_updates[read.tx][: read.updates_before]:
            effect = effect_from_wire(ew)
            if (effect.target.key, effect.target.crdt_type.value) == read.obj:
                state = apply_effect(state, effect)
        expected = value_to_wire(state)
        if expected != read.value:
            violations.append(
                f"{read.scout} tx {read.tx} read {read.obj}: got {read.value!r}, "
                f"snapshot materializes {expected!r}"
            )
    violations.extend(_closure_violations(tr))
    return Verdict("causal_snapshots", not violations, violations)


def _closure_violations(tr: TraceAnalysis) -> list[str]:
    out = []
    for scout, order in tr.tx_order.items():
        prev_dc = tuple([0] * tr.num_dcs)
        for otid in order:
            tx = tr.txs[otid]
            ver = tx.snap_dc
            for dc in range(tr.num_dcs):
                for counter in range(prev_dc[dc] + 1, ver[dc] + 1):
                    dep = tr.by_alias.get((counter, dc))
                    if dep is None:
                        continue  # pruned before this trace window closed it
                    rec = tr.records[dep]
                    if not all(rec.deps_dc[j] <= ver[j] for j in range(tr.num_dcs)):
                        out.append(
                            f"{scout} snapshot {ver} includes {dep} but not its deps {rec.deps_dc}"
                        )
                    if rec.deps_local and rec.origin != scout:
                        chain = next(
                            (
                                o
                                for o in tr.records
                                if o[1] == rec.origin and o[0] == rec.deps_local
                            ),
                            None,
                        )
                        if chain is not None and not tr.covers(
                            tr.records[chain], ver, tx.snap_local, scout
                        ):
                            out.append(
                                f"{scout} snapshot {ver} includes {dep} but not "
                                f"its origin-chain dependency {chain}"
                            )
            prev_dc = tuple(max(prev_dc[j], ver[j]) for j in range(tr.num_dcs))
    return out


def check_atomicity(tr: TraceAnalysis) -> Verdict:
    """No snapshot reflects a proper subset of a transaction's effects."""
    violations = []
    reads_by_tx: dict[tuple, list[ReadInfo]] = {}
    for read in tr.reads:
        reads_by_tx.setdefault(read.tx, []).append(read)
    for tx_otid, reads in reads_by_tx.items():
        objs = {r.obj for r in reads}
        if len(objs) < 2:
            continue
        for rec in tr.records.values():
            touched = rec.objs & objs
            if len(touched) < 2 or rec.otid == tx_otid:
                continue
            presence = {}
            for read in reads:
                if read.obj not in touched:
                    continue
                reader = read.scout
                with_r = tr.oracle_value(read.obj, read.ver_dc, read.ver_local, reader)
                without = _oracle_without(tr, read, rec)
                vw, vo = value_to_wire(with_r), value_to_wire(without)
                if vw == vo:
                    continue  # record not distinguishable on this object
                if read.value == vw:
                    presence[read.obj] = True
                elif read.value == vo:
                    presence[read.obj] = False
            if True in presence.values() and False in presence.values():
                violations.append(
                    f"tx {tx_otid} observed a partial application of {rec.otid}: {presence}"
                )
    return Verdict("atomicity", not violations, violations)


def _oracle_without(tr: TraceAnalysis, read: ReadInfo, skip: RecordInfo):
    oid = ObjectId(read.obj[0], CrdtType(read.obj[1]))
    state = tr.initial.get(oid, new_state(oid.crdt_type))
    for rec in tr.causal_order():
        if rec.otid == skip.otid or read.obj not in rec.objs:
            continue
        if not tr.covers(rec, read.ver_dc, read.ver_local, read.scout):
            continue
        for ew in rec.effects:
            effect = effect_from_wire(ew)
            if (effect.target.key, effect.target.crdt_type.value) == read.obj:
                state = apply_effect(state, effect)
    for ew in tr.tx_updates[read.tx][: read.updates_before]:
        effect = effect_from_wire(ew)
        if (effect.target.key, effect.target.crdt_type.value) == read.obj:
            state = apply_effect(state, effect)
    return state


def check_session_guarantees(tr: TraceAnalysis) -> Verdict:
    """Read-your-writes, monotonic reads and writes-follow-reads per scout,
    across failover events included."""
    violations = []
    for scout, order in tr.tx_order.items():
        prev_dc = None
        prev_local = 0
        committed_updates: list[tuple] = []
        for otid in order:
            tx = tr.txs[otid]
            if prev_dc is not None:
                if not all(a <= b for a, b in zip(prev_dc, tx.snap_dc)) or tx.snap_local < prev_local:
                    violations.append(
                        f"{scout}: snapshot regressed from {prev_dc}|{prev_local} "
                        f"to {tx.snap_dc}|{tx.snap_local}"
                    )
            prev_dc, prev_local = tx.snap_dc, tx.snap_local
            for read in (r for r in tr.reads if r.tx == otid):
                for up_otid in committed_updates:
                    up = tr.records.get(up_otid)
                    if up is None or read.obj not in up.objs:
                        continue
                    if not tr.covers(up, read.ver_dc, read.ver_local, scout):
                        violations.append(
                            f"{scout}: read of {read.obj} in {otid} misses own write {up_otid}"
                        )
            if tx.committed and not tx.read_only and not tx.aborted:
                committed_updates.append(otid)
    return Verdict("session_guarantees", not violations, violations)


def check_exactly_once(tr: TraceAnalysis) -> Verdict:
    """Each replica's counters equal the sum over the distinct transaction
    identities it has applied; no record applies twice at one replica."""
    violations = list(tr.duplicate_applies)
    if tr.quiesce is None:
        return Verdict("exactly_once", False, ["trace has no quiesce event"])
    for dc_name, info in tr.quiesce["dcs"].items():
        dc = int(dc_name[2:])
        sums: dict[str, int] = {}
        for rec in tr.records.values():
            if dc not in rec.apply_times:
                continue
            for ew in rec.effects:
                if ew["kind"] == "inc" and ew["obj"][1] == "counter":
                    key = f"{ew['obj'][0]}#counter"
                    sums[key] = sums.get(key, 0) + ew["payload"][0]
        for key, value in info["values"].items():
            if key.endswith("#counter") and value != sums.get(key, 0):
                violations.append(
                    f"{dc_name} {key} = {value}, distinct-identity sum over "
                    f"applied records = {sums.get(key, 0)}"
                )
        for key, expected in sums.items():
            if key not in info["values"]:
                violations.append(f"{dc_name} applied records for {key} but holds no value")
    return Verdict("exactly_once", not violations, violations)


def check_convergence(tr: TraceAnalysis) -> Verdict:
    """At quiescence all replicas hold equal values matching a full replay."""
    if tr.quiesce is None:
        return Verdict("convergence", False, ["trace has no quiesce event"])
    if not tr.quiesce.get("synced", False):
        return Verdict(
            "convergence", True, skipped="run did not quiesce fully (unhealed faults)"
        )
    violations = []
    dcs = tr.quiesce["dcs"]
    names = sorted(dcs)
    reference = dcs[names[0]]["values"]
    for name in names[1:]:
        if dcs[name]["values"] != reference:
            diff = {
                k
                for k in set(reference) | set(dcs[name]["values"])
                if reference.get(k) != dcs[name]["values"].get(k)
            }
            violations.append(f"{names[0]} and {name} disagree on {sorted(diff)[:5]}")
    oracle = _full_replay(tr)
    for key, expected in oracle.items():
        got = reference.get(key)
        if got != expected:
            violations.append(f"replay oracle {key}: replicas hold {got!r}, oracle {expected!r}")
    vdc = dcs[names[0]]["vdc"]
    for sid, info in tr.quiesce["scouts"].items():
        sc_dc = info["clock"][0]
        if not all(a <= b for a, b in zip(sc_dc, vdc)):
            violations.append(f"{sid} frontier {sc_dc} cannot advance to common vdc {vdc}")
    return Verdict("convergence", not violations, violations)


def _full_replay(tr: TraceAnalysis) -> dict:
    states: dict[ObjectId, Any] = dict(tr.initial)
    for rec in tr.causal_order():
        for ew in rec.effects:
            effect = effect_from_wire(ew)
            obj = effect.target
            states[obj] = apply_effect(states.get(obj, new_state(obj.crdt_type)), effect)
    return {f"{o.key}#{o.crdt_type.value}": value_to_wire(s) for o, s in sorted(states.items())}


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def measure_staleness(tr: TraceAnalysis) -> dict:
    """Fraction of reads returning a K-durable version while a fresher,
    not-yet-K-durable one existed somewhere at read time."""
    apply_times = {
        otid: sorted(rec.apply_times.values()) for otid, rec in tr.records.items()
    }
    stale_reads = 0
    total = 0
    stale_txs: set[tuple] = set()
    tx_seen: set[tuple] = set()
    for read in tr.reads:
        total += 1
        tx_seen.add(read.tx)
        for rec in tr.records.values():
            if read.obj not in rec.objs or rec.origin == read.scout:
                continue
            if rec.commit_time > read.t:
                continue
            if tr.covers(rec, read.ver_dc, read.ver_local, read.scout):
                continue
            durable_count = bisect.bisect_right(apply_times[rec.otid], read.t)
            if durable_count < tr.k:
                stale_reads += 1
                stale_txs.add(read.tx)
                break
    return {
        "reads": total,
        "stale_reads": stale_reads,
        "stale_read_fraction": stale_reads / total if total else 0.0,
        "transactions": len(tx_seen),
        "stale_transactions": len(stale_txs),
        "stale_tx_fraction": len(stale_txs) / len(tx_seen) if tx_seen else 0.0,
    }


def measure_latency(tr: TraceAnalysis, warmup_labels: Optional[list[str]] = None) -> dict:
    """Per-transaction round trips and simulated durations, with CDF points."""
    if warmup_labels is None:
        scenario = tr.header.get("scenario", {})
        warmup_labels = scenario.get("expected", {}).get("warmup_labels", [])
    committed = [t for t in tr.txs.values() if t.committed and not t.aborted]
    measured = [t for t in committed if t.label not in warmup_labels]
    if not measured:
        return {"transactions": 0}
    rts = np.array([t.rts for t in measured])
    durs = np.array(sorted(t.dur for t in measured), dtype=float)
    fractions = np.arange(1, len(durs) + 1) / len(durs)
    cdf = [[float(d), float(f)] for d, f in zip(durs, fractions)]
    # thin the CDF for reporting
    step = max(len(cdf) // 100, 1)
    by_label: dict[str, list[int]] = {}
    for t in measured:
        by_label.setdefault(t.label or "tx", []).append(t.rts)
    return {
        "transactions": len(measured),
        "zero_rt_fraction": float(np.mean(rts == 0)),
        "mean_rts": float(np.mean(rts)),
        "mean_duration_ms": float(np.mean(durs)),
        "p50_duration_ms": float(np.percentile(durs, 50)),
        "p95_duration_ms": float(np.percentile(durs, 95)),
        "cdf": cdf[::step],
        "rts_by_label": {k: float(np.mean(v)) for k, v in sorted(by_label.items())},
        "aborted": sum(1 for t in tr.txs.values() if t.aborted),
    }


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

ALL_CHECKS = [
    check_history_acyclic,
    check_causal_snapshots,
    check_atomicity,
    check_session_guarantees,
    check_exactly_once,
    check_convergence,
]


def run_checks(trace: list[dict]) -> dict:
    tr = TraceAnalysis(trace)
    verdicts = {}
    ok = True
    for check in ALL_CHECKS:
        v = check(tr)
        verdicts[v.name] = v.as_dict()
        ok = ok and (v.ok or v.skipped is not None)
    return {
        "ok": ok,
        "verdicts": verdicts,
        "staleness": measure_staleness(tr),
        "latency": measure_latency(tr),
    }
