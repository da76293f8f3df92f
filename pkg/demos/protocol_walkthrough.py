#!/usr/bin/env python3
"""A guided tour of the protocol pieces, bottom up.

Walks the friendship example by hand: mergeable objects with a
prepare/effect split, a transaction at a client-side scout, global commit
at a DC sequencer, epidemic spread to a second DC, and the K-durable
frontier that gates what other clients may observe.
"""

from causalsim.clocks import CausalClock, Otid, VersionVector, k_stable_vector
from causalsim.crdt import (
    CrdtType,
    EffectTag,
    ObjectId,
    apply_effect,
    new_state,
    prepare,
    value_of,
)
from causalsim.dc import DataCenter
from causalsim.messages import CommitRequest, GossipBatch


class Env:
    """Just enough environment for driving nodes by hand."""

    def __init__(self):
        self.outbox = []

    def now(self):
        return 0

    def send(self, src, dst, msg):
        self.outbox.append((src, dst, msg))

    def trace(self, ev):
        pass

    def request_crash(self, dc_id):
        raise AssertionError("no crashes in this demo")


print("== 1. Mergeable objects commute ==")
wall = ObjectId("user:B/wall", CrdtType.AW_SET)
state = new_state(CrdtType.AW_SET)
# two clients add posts concurrently against the same observed version
ea = prepare(wall, state, ("add", "post from A"), EffectTag(1, "clientA", 0))
ec = prepare(wall, state, ("add", "post from C"), EffectTag(1, "clientC", 0))
one_order = apply_effect(apply_effect(state, ea), ec)
other_order = apply_effect(apply_effect(state, ec), ea)
print("  apply A then C:", sorted(value_of(one_order)))
print("  apply C then A:", sorted(value_of(other_order)))
assert one_order == other_order

print("\n== 2. A transaction commits at the sequencer ==")
env = Env()
dc0 = DataCenter(0, num_dcs=2, k=2)
b_frd = ObjectId("user:B/friends", CrdtType.AW_SET)
a_frd = ObjectId("user:A/friends", CrdtType.AW_SET)
# T1: A and B become friends (two objects, atomically)
t1 = Otid(1, "clientA")
effects = (
    prepare(b_frd, new_state(CrdtType.AW_SET), ("add", "A"), EffectTag(1, "clientA", 0)),
    prepare(a_frd, new_state(CrdtType.AW_SET), ("add", "B"), EffectTag(1, "clientA", 1)),
)
dc0.on_commit_request(env, CommitRequest("clientA", t1, CausalClock.zero(2), effects))
reply = env.outbox[-1][2]
print(f"  T1 assigned {reply.gtid}, dc0 vector now {dc0.vdc}")

print("\n== 3. Snapshots select versions ==")
old = dc0.materialize(b_frd, CausalClock(VersionVector((0, 0)), 0))
new = dc0.materialize(b_frd, CausalClock(VersionVector((1, 0)), 0))
print(f"  B's friends at [0,0]: {sorted(value_of(old))}  (T1 invisible)")
print(f"  B's friends at [1,0]: {sorted(value_of(new))}")

print("\n== 4. Epidemic propagation and K-durability ==")
dc1 = DataCenter(1, num_dcs=2, k=2)
dc1.on_gossip(env, GossipBatch(0, list(dc0.log), dc0.vdc))
print(f"  dc1 vector after gossip: {dc1.vdc}")
print(f"  dc0 2-durable frontier before hearing back: {dc0.k_durable_frontier()}")
dc0.known_vectors[1] = dc1.vdc
print(f"  dc0 2-durable frontier after hearing back:  {dc0.k_durable_frontier()}")
print("  only now may other scouts observe T1")

print("\n== 5. The K-stable vector in general ==")
known = [VersionVector((3, 1)), VersionVector((2, 2)), VersionVector((2, 0))]
for k in (1, 2, 3):
    print(f"  k_stable(known, K={k}) = {k_stable_vector(known, k)}")
