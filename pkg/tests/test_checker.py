from causalsim.checker import (
    TraceAnalysis,
    check_atomicity,
    check_causal_snapshots,
    check_convergence,
    check_exactly_once,
    check_history_acyclic,
    check_session_guarantees,
    measure_latency,
    measure_staleness,
    run_checks,
)
from causalsim.crdt import CrdtType, EffectTag, ObjectId, new_state, prepare
from causalsim.crdt import effect_to_wire

CTR = ("ctr", "counter")
SET = ("s", "awset")


def inc_effect(amount, counter=1, origin="w", seq=0):
    e = prepare(
        ObjectId("ctr", CrdtType.COUNTER),
        new_state(CrdtType.COUNTER),
        ("inc", amount),
        EffectTag(counter, origin, seq),
    )
    return effect_to_wire(e)


def add_effect(elem, counter=1, origin="w", seq=0):
    e = prepare(
        ObjectId("s", CrdtType.AW_SET),
        new_state(CrdtType.AW_SET),
        ("add", elem),
        EffectTag(counter, origin, seq),
    )
    return effect_to_wire(e)


def header(num_dcs=2, k=2):
    return {
        "t": 0,
        "ev": "config",
        "schema": "causalsim-trace-1",
        "seed": 0,
        "k": k,
        "num_dcs": num_dcs,
        "num_scouts": 2,
        "mutations": [],
        "scenario": {"workload": {"kind": "none"}},
    }


def apply_ev(t, dc, otid, gtids, objs, effects=None, deps=None, via="commit"):
    return {
        "t": t,
        "ev": "apply",
        "node": f"dc{dc}",
        "otid": list(otid),
        "gtids": [list(g) for g in gtids],
        "via": via,
        "objs": [list(o) for o in objs],
        "deps": deps or [[0, 0], 0],
        "effects": effects,
    }


def begin_ev(t, scout, otid, snap):
    return {"t": t, "ev": "tx_begin", "node": scout, "otid": list(otid), "snap": snap}


def read_ev(t, scout, otid, obj, value, ver, src="cache", dc=0):
    return {
        "t": t,
        "ev": "read",
        "node": scout,
        "otid": list(otid),
        "obj": list(obj),
        "value": value,
        "ver": ver,
        "src": src,
        "dc": dc,
    }


def commit_ev(t, scout, otid, deps, objs=(), read_only=True, rts=0, dur=0):
    return {
        "t": t,
        "ev": "local_commit",
        "node": scout,
        "otid": list(otid),
        "deps": deps,
        "objs": [list(o) for o in objs],
        "read_only": read_only,
        "rts": rts,
        "dur": dur,
    }


def quiesce_ev(t, values_by_dc, vdc, synced=True):
    return {
        "t": t,
        "ev": "quiesce",
        "synced": synced,
        "dcs": {
            name: {"vdc": list(vdc), "values": values} for name, values in values_by_dc.items()
        },
        "scouts": {"r": {"clock": [list(vdc), 0], "pending": 0, "connected": True}},
        "crashed": [],
    }


def writer_record(t=10, amount=5):
    return apply_ev(t, 0, (1, "w"), [(1, 0)], [CTR], effects=[inc_effect(amount)])


def base_trace():
    """One increment of 5, fully replicated; one reader transaction."""
    return [
        header(),
        writer_record(),
        apply_ev(50, 1, (1, "w"), [(1, 0)], [CTR], via="gossip"),
        begin_ev(60, "r", (1, "r"), [[1, 0], 0]),
        read_ev(60, "r", (1, "r"), CTR, 5, [[1, 0], 0]),
        commit_ev(60, "r", (1, "r"), [[1, 0], 0]),
        quiesce_ev(100, {"dc0": {"ctr#counter": 5}, "dc1": {"ctr#counter": 5}}, (1, 0)),
    ]


class TestCleanTrace:
    def test_all_checks_pass(self):
        report = run_checks(base_trace())
        assert report["ok"], report["verdicts"]


class TestCausalSnapshots:
    def test_read_missing_covered_update_flagged(self):
        trace = base_trace()
        trace[4] = read_ev(60, "r", (1, "r"), CTR, 0, [[1, 0], 0])  # claims 0, covers the inc
        v = check_causal_snapshots(TraceAnalysis(trace))
        assert not v.ok and "materializes" in v.violations[0]

    def test_read_outside_snapshot_flagged(self):
        trace = base_trace()
        trace[4] = read_ev(60, "r", (1, "r"), CTR, 5, [[0, 0], 0])  # differs from tx snapshot
        v = check_causal_snapshots(TraceAnalysis(trace))
        assert not v.ok

    def test_snapshot_not_closed_under_deps_flagged(self):
        # record 2 depends on record 1; a snapshot holding only record 2
        # violates transitive closure
        trace = [
            header(),
            writer_record(),
            apply_ev(
                20,
                1,
                (1, "x"),
                [(1, 1)],
                [CTR],
                effects=[inc_effect(3, counter=1, origin="x")],
                deps=[[1, 0], 0],
            ),
            begin_ev(30, "r", (1, "r"), [[0, 1], 0]),
            read_ev(30, "r", (1, "r"), CTR, 3, [[0, 1], 0]),
            commit_ev(30, "r", (1, "r"), [[0, 1], 0]),
            quiesce_ev(100, {"dc0": {"ctr#counter": 8}, "dc1": {"ctr#counter": 8}}, (1, 1)),
        ]
        v = check_causal_snapshots(TraceAnalysis(trace))
        assert not v.ok
        assert any("deps" in viol for viol in v.violations)


class TestAtomicity:
    def test_partial_observation_flagged(self):
        rec_effects = [inc_effect(5, seq=0), add_effect("x", seq=1)]
        trace = [
            header(),
            apply_ev(10, 0, (1, "w"), [(1, 0)], [CTR, SET], effects=rec_effects),
            begin_ev(30, "r", (1, "r"), [[1, 0], 0]),
            read_ev(30, "r", (1, "r"), CTR, 5, [[1, 0], 0]),
            read_ev(30, "r", (1, "r"), SET, [], [[1, 0], 0]),  # the add is missing
            commit_ev(30, "r", (1, "r"), [[1, 0], 0]),
            quiesce_ev(100, {"dc0": {"ctr#counter": 5, "s#awset": ["x"]}}, (1, 0)),
        ]
        v = check_atomicity(TraceAnalysis(trace))
        assert not v.ok and "partial application" in v.violations[0]

    def test_single_object_tx_vacuous(self):
        v = check_atomicity(TraceAnalysis(base_trace()))
        assert v.ok


class TestSessionGuarantees:
    def test_snapshot_regression_flagged(self):
        trace = base_trace()[:-1] + [
            begin_ev(70, "r", (2, "r"), [[0, 0], 0]),  # regressed from [1,0]
            read_ev(70, "r", (2, "r"), CTR, 0, [[0, 0], 0]),
            commit_ev(70, "r", (2, "r"), [[0, 0], 0]),
            quiesce_ev(100, {"dc0": {"ctr#counter": 5}, "dc1": {"ctr#counter": 5}}, (1, 0)),
        ]
        v = check_session_guarantees(TraceAnalysis(trace))
        assert not v.ok and "regressed" in v.violations[0]

    def test_read_your_writes_violation_flagged(self):
        trace = [
            header(),
            begin_ev(5, "w", (1, "w"), [[0, 0], 0]),
            commit_ev(5, "w", (1, "w"), [[0, 0], 0], objs=[CTR], read_only=False),
            writer_record(t=10),
            begin_ev(20, "w", (2, "w"), [[0, 0], 0]),
            read_ev(20, "w", (2, "w"), CTR, 0, [[0, 0], 0]),  # misses own write
            commit_ev(20, "w", (2, "w"), [[0, 0], 0]),
            quiesce_ev(100, {"dc0": {"ctr#counter": 5}}, (1, 0)),
        ]
        v = check_session_guarantees(TraceAnalysis(trace))
        assert not v.ok and "own write" in v.violations[0]


class TestExactlyOnce:
    def test_duplicate_apply_flagged(self):
        trace = base_trace()
        trace.insert(3, apply_ev(55, 1, (1, "w"), [(2, 1)], [CTR], via="gossip"))
        v = check_exactly_once(TraceAnalysis(trace))
        assert not v.ok and "applied twice" in v.violations[0]

    def test_value_mismatch_with_applied_sum_flagged(self):
        trace = base_trace()
        trace[-1] = quiesce_ev(100, {"dc0": {"ctr#counter": 10}, "dc1": {"ctr#counter": 5}}, (1, 0))
        v = check_exactly_once(TraceAnalysis(trace))
        assert not v.ok and "distinct-identity" in v.violations[0]


class TestConvergence:
    def test_diverged_replicas_flagged(self):
        trace = base_trace()
        trace[-1] = quiesce_ev(100, {"dc0": {"ctr#counter": 5}, "dc1": {"ctr#counter": 3}}, (1, 0))
        v = check_convergence(TraceAnalysis(trace))
        assert not v.ok

    def test_replay_oracle_mismatch_flagged(self):
        trace = base_trace()
        trace[-1] = quiesce_ev(100, {"dc0": {"ctr#counter": 6}, "dc1": {"ctr#counter": 6}}, (1, 0))
        v = check_convergence(TraceAnalysis(trace))
        assert not v.ok and any("oracle" in s for s in v.violations)

    def test_unhealed_run_skipped_explicitly(self):
        trace = base_trace()
        trace[-1]["synced"] = False
        v = check_convergence(TraceAnalysis(trace))
        assert v.ok and v.skipped is not None

    def test_scout_beyond_common_vdc_flagged(self):
        trace = base_trace()
        trace[-1]["scouts"]["r"]["clock"] = [[9, 0], 0]
        v = check_convergence(TraceAnalysis(trace))
        assert not v.ok and "frontier" in v.violations[0]


class TestAcyclicity:
    def test_dependency_on_later_record_flagged(self):
        trace = [
            header(),
            # committed first but depends on the record committed later
            apply_ev(20, 0, (1, "a"), [(1, 0)], [CTR], effects=[inc_effect(1, origin="a")],
                     deps=[[0, 1], 0]),
            apply_ev(30, 1, (1, "b"), [(1, 1)], [CTR], effects=[inc_effect(2, origin="b")]),
            quiesce_ev(100, {"dc0": {"ctr#counter": 3}}, (1, 1)),
        ]
        v = check_history_acyclic(TraceAnalysis(trace))
        assert not v.ok


class TestStaleness:
    def _trace(self, read_t, ver):
        return [
            header(k=2),
            writer_record(t=10),
            apply_ev(50, 1, (1, "w"), [(1, 0)], [CTR], via="gossip"),
            begin_ev(read_t, "r", (1, "r"), [list(ver), 0]),
            read_ev(read_t, "r", (1, "r"), CTR, 0 if ver == (0, 0) else 5, [list(ver), 0]),
            commit_ev(read_t, "r", (1, "r"), [list(ver), 0]),
            quiesce_ev(100, {"dc0": {"ctr#counter": 5}, "dc1": {"ctr#counter": 5}}, (1, 0)),
        ]

    def test_read_during_window_is_stale(self):
        m = measure_staleness(TraceAnalysis(self._trace(20, (0, 0))))
        assert m["stale_reads"] == 1 and m["stale_tx_fraction"] == 1.0

    def test_read_after_k_durable_not_stale(self):
        m = measure_staleness(TraceAnalysis(self._trace(60, (0, 0))))
        assert m["stale_reads"] == 0

    def test_covering_read_not_stale(self):
        m = measure_staleness(TraceAnalysis(self._trace(20, (1, 0))))
        assert m["stale_reads"] == 0

    def test_k1_by_definition_zero(self):
        trace = self._trace(20, (0, 0))
        trace[0]["k"] = 1
        m = measure_staleness(TraceAnalysis(trace))
        assert m["stale_reads"] == 0


class TestLatencyMetrics:
    def test_zero_rt_fraction_and_cdf(self):
        trace = base_trace()[:-1] + [
            begin_ev(70, "r", (2, "r"), [[1, 0], 0]),
            read_ev(70, "r", (2, "r"), CTR, 5, [[1, 0], 0], src="dc"),
            commit_ev(100, "r", (2, "r"), [[1, 0], 0], rts=1, dur=30),
            quiesce_ev(120, {"dc0": {"ctr#counter": 5}, "dc1": {"ctr#counter": 5}}, (1, 0)),
        ]
        m = measure_latency(TraceAnalysis(trace))
        assert m["transactions"] == 2
        assert m["zero_rt_fraction"] == 0.5
        assert m["cdf"][-1][1] == 1.0

    def test_checker_is_deterministic_over_a_trace(self):
        trace = base_trace()
        assert run_checks(trace) == run_checks(trace)
