"""Operation-based mergeable data types with a prepare/effect split.

An update is issued against the version a transaction read. ``prepare``
turns the intent into a self-contained effect operation that can be
replayed on any replica of the object; ``apply`` folds an effect into a
state. Effects carry a globally unique tag and, where the semantics need
it, the set of tags they supersede (observed-remove metadata). Any two
effects with distinct tags commute, so replicas that apply the same set
of effects exactly once converge regardless of delivery interleaving.

Supported types: add-wins set, multi-value register, last-writer-wins
register, integer counter, and a map whose entries are nested mergeable
objects merged recursively under a (name, type) key.

Counter increments are deliberately not idempotent: applying the same
effect twice changes the value. That is what forces the replication layer
to deliver effects exactly once rather than merely at least once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from causalsim.clocks import Otid, ScoutId


class CrdtType(str, Enum):
    COUNTER = "counter"
    LWW_REGISTER = "lww"
    MV_REGISTER = "mv"
    AW_SET = "awset"
    CMAP = "cmap"


@dataclass(frozen=True, order=True)
class ObjectId:
    """Lookup key with the type embedded: same key, different type means
    a different object."""

    key: str
    crdt_type: CrdtType


@dataclass(frozen=True, order=True)
class EffectTag:
    """Unique effect identity: producing transaction plus intra-tx sequence."""

    counter: int
    origin: ScoutId
    seq: int

    @property
    def otid(self) -> Otid:
        return Otid(self.counter, self.origin)


@dataclass(frozen=True)
class EffectOp:
    """A replayable update: what to do, where, and which versions it saw."""

    target: ObjectId
    kind: str
    payload: tuple
    tag: EffectTag
    deps: tuple[EffectTag, ...] = ()


class TypeMismatch(TypeError):
    """Intent or effect applied to a state of the wrong mergeable type."""


# ---------------------------------------------------------------------------
# States. All immutable; apply() returns a fresh state.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CounterState:
    value: int = 0


@dataclass(frozen=True)
class LwwState:
    value: Any = None
    ts: int = 0
    origin: ScoutId = ""


@dataclass(frozen=True)
class MvState:
    # candidates maps tag -> value; overwritten remembers superseded tags so
    # assign effects commute even when delivered before their predecessors
    candidates: dict[EffectTag, Any] = field(default_factory=dict)
    overwritten: frozenset[EffectTag] = frozenset()


@dataclass(frozen=True)
class AwSetState:
    # alive maps element -> surviving add tags; tombstones are removed tags
    alive: dict[Any, frozenset[EffectTag]] = field(default_factory=dict)
    tombstones: frozenset[EffectTag] = frozenset()


@dataclass(frozen=True)
class CmapState:
    entries: dict[tuple[str, CrdtType], Any] = field(default_factory=dict)


_STATE_CLASSES = {
    CrdtType.COUNTER: CounterState,
    CrdtType.LWW_REGISTER: LwwState,
    CrdtType.MV_REGISTER: MvState,
    CrdtType.AW_SET: AwSetState,
    CrdtType.CMAP: CmapState,
}


def new_state(crdt_type: CrdtType):
    """Empty state for the type: zero counter, unset register, empty set/map."""
    return _STATE_CLASSES[crdt_type]()


def type_of(state) -> CrdtType:
    for t, cls in _STATE_CLASSES.items():
        if isinstance(state, cls):
            return t
    raise TypeMismatch(f"not a mergeable state: {state!r}")


# ---------------------------------------------------------------------------
# prepare: intent + observed state -> effect
# ---------------------------------------------------------------------------


def prepare(obj: ObjectId, state, intent: tuple, tag: EffectTag) -> EffectOp:
    """Turn an update intent into an effect against the state that was read.

    Intents are small tuples: ``("inc", n)``, ``("assign", v)``,
    ``("add", x)``, ``("remove", x)``, and for maps
    ``("entry", name, CrdtType, inner_intent)``.
    """
    kind, payload, deps = _prepare(state, obj.crdt_type, intent, tag)
    return EffectOp(obj, kind, payload, tag, deps)


def _prepare(state, crdt_type: CrdtType, intent: tuple, tag: EffectTag):
    if not isinstance(state, _STATE_CLASSES[crdt_type]):
        raise TypeMismatch(f"{crdt_type} intent against {type(state).__name__}")
    op = intent[0]
    if crdt_type is CrdtType.COUNTER:
        if op != "inc":
            raise TypeMismatch(f"counter cannot {op}")
        return "inc", (int(intent[1]),), ()
    if crdt_type is CrdtType.LWW_REGISTER:
        if op != "assign":
            raise TypeMismatch(f"lww register cannot {op}")
        # logical timestamp grows past the observed one, so a causally later
        # assign always wins; ties across scouts break on the origin id
        return "assign", (intent[1], state.ts + 1, tag.origin), ()
    if crdt_type is CrdtType.MV_REGISTER:
        if op != "assign":
            raise TypeMismatch(f"mv register cannot {op}")
        return "assign", (intent[1],), tuple(sorted(state.candidates))
    if crdt_type is CrdtType.AW_SET:
        if op == "add":
            return "add", (intent[1],), ()
        if op == "remove":
            observed = state.alive.get(intent[1], frozenset())
            return "remove", (intent[1],), tuple(sorted(observed))
        raise TypeMismatch(f"set cannot {op}")
    if crdt_type is CrdtType.CMAP:
        if op != "entry":
            raise TypeMismatch(f"map cannot {op}")
        name, entry_type, inner = intent[1], intent[2], intent[3]
        sub = state.entries.get((name, entry_type), new_state(entry_type))
        inner_kind, inner_payload, inner_deps = _prepare(sub, entry_type, inner, tag)
        return "entry", (name, entry_type, inner_kind, inner_payload), inner_deps
    raise TypeMismatch(f"unknown type {crdt_type}")


# ---------------------------------------------------------------------------
# apply: state + effect -> state
# ---------------------------------------------------------------------------


def apply_effect(state, effect: EffectOp):
    if type_of(state) is not effect.target.crdt_type:
        raise TypeMismatch(
            f"effect for {effect.target.crdt_type} applied to {type(state).__name__}"
        )
    return _apply(state, effect.kind, effect.payload, effect.tag, effect.deps)


def _apply(state, kind: str, payload: tuple, tag: EffectTag, deps: tuple):
    if isinstance(state, CounterState):
        return CounterState(state.value + payload[0])

    if isinstance(state, LwwState):
        value, ts, origin = payload
        if (ts, origin) > (state.ts, state.origin):
            return LwwState(value, ts, origin)
        return state

    if isinstance(state, MvState):
        overwritten = state.overwritten | frozenset(deps)
        candidates = {t: v for t, v in state.candidates.items() if t not in overwritten}
        if tag not in overwritten:
            candidates[tag] = payload[0]
        return MvState(candidates, overwritten)

    if isinstance(state, AwSetState):
        if kind == "add":
            elem = payload[0]
            if tag in state.tombstones:
                return state
            alive = dict(state.alive)
            alive[elem] = alive.get(elem, frozenset()) | {tag}
            return AwSetState(alive, state.tombstones)
        if kind == "remove":
            dead = frozenset(deps)
            tombstones = state.tombstones | dead
            alive = {}
            for elem, tags in state.alive.items():
                remaining = tags - dead
                if remaining:
                    alive[elem] = remaining
            return AwSetState(alive, tombstones)
        raise TypeMismatch(f"set cannot apply {kind}")

    if isinstance(state, CmapState):
        name, entry_type, inner_kind, inner_payload = payload
        key = (name, entry_type)
        sub = state.entries.get(key, new_state(entry_type))
        entries = dict(state.entries)
        entries[key] = _apply(sub, inner_kind, inner_payload, tag, deps)
        return CmapState(entries)

    raise TypeMismatch(f"cannot apply to {type(state).__name__}")


# ---------------------------------------------------------------------------
# read
# ---------------------------------------------------------------------------


def value_of(state):
    """Readable value: int, register value, candidate set, element set, or
    a dict of (name, type) to nested values."""
    if isinstance(state, CounterState):
        return state.value
    if isinstance(state, LwwState):
        return state.value
    if isinstance(state, MvState):
        return frozenset(state.candidates.values())
    if isinstance(state, AwSetState):
        return frozenset(state.alive)
    if isinstance(state, CmapState):
        return {key: value_of(sub) for key, sub in state.entries.items()}
    raise TypeMismatch(f"no value for {type(state).__name__}")


# ---------------------------------------------------------------------------
# canonical serialization (self-describing; stable across a run)
# ---------------------------------------------------------------------------


def _tag_to_wire(tag: EffectTag) -> list:
    return [tag.counter, tag.origin, tag.seq]


def _tag_from_wire(w) -> EffectTag:
    return EffectTag(w[0], w[1], w[2])


def effect_to_wire(effect: EffectOp) -> dict:
    return {
        "obj": [effect.target.key, effect.target.crdt_type.value],
        "kind": effect.kind,
        "payload": _payload_to_wire(effect.kind, effect.payload),
        "tag": _tag_to_wire(effect.tag),
        "deps": [_tag_to_wire(t) for t in effect.deps],
    }


def effect_from_wire(w: dict) -> EffectOp:
    kind = w["kind"]
    return EffectOp(
        ObjectId(w["obj"][0], CrdtType(w["obj"][1])),
        kind,
        _payload_from_wire(kind, w["payload"]),
        _tag_from_wire(w["tag"]),
        tuple(_tag_from_wire(t) for t in w["deps"]),
    )


def _payload_to_wire(kind: str, payload: tuple) -> list:
    if kind == "entry":
        name, entry_type, inner_kind, inner_payload = payload
        return [name, entry_type.value, inner_kind, _payload_to_wire(inner_kind, inner_payload)]
    return list(payload)


def _payload_from_wire(kind: str, w: list) -> tuple:
    if kind == "entry":
        return (w[0], CrdtType(w[1]), w[2], _payload_from_wire(w[2], w[3]))
    return tuple(w)


def state_to_wire(state) -> dict:
    if isinstance(state, CounterState):
        return {"t": "counter", "value": state.value}
    if isinstance(state, LwwState):
        return {"t": "lww", "value": state.value, "ts": state.ts, "origin": state.origin}
    if isinstance(state, MvState):
        return {
            "t": "mv",
            "candidates": [[_tag_to_wire(t), v] for t, v in sorted(state.candidates.items())],
            "overwritten": [_tag_to_wire(t) for t in sorted(state.overwritten)],
        }
    if isinstance(state, AwSetState):
        return {
            "t": "awset",
            "alive": [
                [elem, [_tag_to_wire(t) for t in sorted(tags)]]
                for elem, tags in sorted(state.alive.items())
            ],
            "tombstones": [_tag_to_wire(t) for t in sorted(state.tombstones)],
        }
    if isinstance(state, CmapState):
        return {
            "t": "cmap",
            "entries": [
                [name, entry_type.value, state_to_wire(sub)]
                for (name, entry_type), sub in sorted(state.entries.items())
            ],
        }
    raise TypeMismatch(f"cannot serialize {type(state).__name__}")


def state_from_wire(w: dict):
    t = w["t"]
    if t == "counter":
        return CounterState(w["value"])
    if t == "lww":
        return LwwState(w["value"], w["ts"], w["origin"])
    if t == "mv":
        return MvState(
            {_tag_from_wire(tw): v for tw, v in w["candidates"]},
            frozenset(_tag_from_wire(tw) for tw in w["overwritten"]),
        )
    if t == "awset":
        return AwSetState(
            {elem: frozenset(_tag_from_wire(tw) for tw in tws) for elem, tws in w["alive"]},
            frozenset(_tag_from_wire(tw) for tw in w["tombstones"]),
        )
    if t == "cmap":
        return CmapState(
            {(name, CrdtType(tv)): state_from_wire(sw) for name, tv, sw in w["entries"]}
        )
    raise TypeMismatch(f"cannot deserialize type tag {t!r}")


def state_to_bytes(state) -> bytes:
    """Canonical byte form: self-describing type tag plus payload."""
    return json.dumps(state_to_wire(state), sort_keys=True, separators=(",", ":")).encode()


def state_from_bytes(data: bytes):
    return state_from_wire(json.loads(data.decode()))


def effect_to_bytes(effect: EffectOp) -> bytes:
    return json.dumps(effect_to_wire(effect), sort_keys=True, separators=(",", ":")).encode()


def effect_from_bytes(data: bytes) -> EffectOp:
    return effect_from_wire(json.loads(data.decode()))


def value_to_wire(state) -> Any:
    """Canonical JSON form of a readable value, for traces and comparisons."""
    if isinstance(state, CounterState):
        return state.value
    if isinstance(state, LwwState):
        return state.value
    if isinstance(state, MvState):
        return sorted(state.candidates.values(), key=repr)
    if isinstance(state, AwSetState):
        return sorted(state.alive, key=repr)
    if isinstance(state, CmapState):
        return {
            f"{name}#{entry_type.value}": value_to_wire(sub)
            for (name, entry_type), sub in sorted(state.entries.items())
        }
    raise TypeMismatch(f"no value for {type(state).__name__}")
