#!/usr/bin/env python3
"""Follow one client as it is diverted to a far DC and back.

The fault schedule moves scout s0 to another continent mid-run and
returns it later. Cache hits stay at zero latency throughout; misses pay
the RTT of whichever DC currently serves the session. The checkers
confirm that session guarantees hold across both switches and that every
replica converges.
"""

from causalsim.checker import run_checks
from causalsim.scenarios import load_scenario, run_scenario

scenario = load_scenario("failover-demo")
result = run_scenario(scenario, seed=3)

switches = [e for e in result.trace if e["ev"] in ("session", "fault")]
print("session timeline for s0:")
for e in switches:
    if e.get("node") == "s0" or e.get("scout") == "s0":
        detail = e.get("result") or f"{e['kind']} -> dc{e.get('to')}"
        print(f"  t={e['t']:5d}  {detail}")

phases = {"before (dc0)": (0, 800), "diverted (dc1)": (800, 1800), "back (dc0)": (1800, 10**9)}
print("\nper-phase transaction latency for s0 (simulated ms):")
for name, (lo, hi) in phases.items():
    durs = [
        e["dur"]
        for e in result.trace
        if e["ev"] == "local_commit" and e["node"] == "s0" and lo <= e["t"] < hi
    ]
    if not durs:
        continue
    zero = sum(1 for d in durs if d == 0) / len(durs)
    print(f"  {name:15s} txs={len(durs):3d}  zero-latency={zero:5.1%}  max={max(durs):4d}")

report = run_checks(result.trace)
print("\nverdicts across the switches:")
for name, v in report["verdicts"].items():
    status = "SKIP" if v["skipped"] else ("PASS" if v["ok"] else "FAIL")
    print(f"  {name:20s} {status}")
assert report["ok"]
print("\nno gaps, no regressions: the protocol absorbs the handoff.")
