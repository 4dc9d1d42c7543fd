"""Knowledge-based decision program, its implementations, and builtin protocols.

The program template is: do noop until some value's decision condition
holds, then decide the least such value, then noop forever.  A concrete
protocol implements the program when, in the system the protocol itself
induces, every point's tabled action coincides with the program's selection.
Construction proceeds layer by layer: actions at earlier times fully
determine each layer, whose points are then labeled with the condition's
truth to fix the actions taken there.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

from .epistemic import A, B, CB, CK, Exists, K, N, evaluator
from .errors import ConstructionError
from .kernel import NOOP, Context, decide_code
from .system import System, build_system, gc_paused


@dataclass(frozen=True)
class DecisionCondition:
    """A per-(agent, value) epistemic guard selecting when to decide."""

    key: str

    def formula(self, agent: int, value_index: int):
        if self.key == "bn-cbn":
            return B(N, agent, CB(N, Exists(value_index)))
        if self.key == "ba-cba":
            return B(A, agent, CB(A, Exists(value_index)))
        if self.key == "k-cka":
            return K(agent, CK(A, Exists(value_index)))
        raise ValueError(f"unknown decision condition {self.key!r}")


BN_CBN = DecisionCondition("bn-cbn")
BA_CBA = DecisionCondition("ba-cba")
K_CKA = DecisionCondition("k-cka")

CONDITIONS = {c.key: c for c in (BN_CBN, BA_CBA, K_CKA)}


def resolve_condition(cond) -> DecisionCondition:
    if isinstance(cond, DecisionCondition):
        return cond
    try:
        return CONDITIONS[cond]
    except KeyError:
        raise ValueError(f"unknown decision condition {cond!r}") from None


class TableProtocol:
    """An explicit map from reachable local states to actions."""

    def __init__(self, n: int, name: str = "table"):
        self.name = name
        self.tables: list[dict] = [dict() for _ in range(n)]

    def action(self, agent: int, state) -> int:
        try:
            return self.tables[agent][state]
        except KeyError:
            raise ConstructionError(
                f"protocol {self.name!r} has no action for agent {agent + 1} at state {state!r}"
            ) from None


class PPrimeProtocol:
    """Wait until the deadline round, unless known to be the only candidate nonfaulty agent.

    Defined over the fault-report exchange: decide the least known value when
    undecided and either the state's time reached t+1 or every other agent is
    known faulty; otherwise noop.
    """

    def __init__(self, t: int, context: Context):
        if context.exchange.name != "fault-report":
            raise ValueError("this protocol is defined over the fault-report exchange")
        self.t = t
        self.n = context.n
        self.name = f"fault-report-pprime(t={t})"
        self._ex = context.exchange

    def action(self, agent: int, state) -> int:
        if self._ex.is_crashed(state):
            return NOOP
        init, known, new, kfaulty, done, time = state
        if done:
            return NOOP
        others = ((1 << self.n) - 1) & ~(1 << agent)
        if time == self.t + 1 or kfaulty == others:
            return decide_code((known & -known).bit_length() - 1)
        return NOOP


class WaitUntilProtocol:
    """Decide the least value heard of, exactly at the given time."""

    def __init__(self, k: int, context: Context):
        self.k = k
        self.name = f"wait-until({k})"
        self._ex = context.exchange

    def action(self, agent: int, state) -> int:
        ex = self._ex
        if ex.is_crashed(state):
            return NOOP
        if ex.done_flag(state):
            return NOOP
        if ex.time_of(state) != self.k:
            return NOOP
        known = ex.known_values(state)
        return decide_code((known & -known).bit_length() - 1)


class AlwaysNoopProtocol:
    name = "always-noop"

    def action(self, agent: int, state) -> int:
        return NOOP


def builtin_protocol(name: str, context: Context, **params):
    """Named concrete protocols: fault-report-pprime(t), wait-until(k), always-noop."""
    if name in ("fault-report-pprime", "pprime"):
        return PPrimeProtocol(int(params["t"]), context)
    if name == "wait-until":
        return WaitUntilProtocol(int(params.get("round", params.get("k"))), context)
    if name == "always-noop":
        return AlwaysNoopProtocol()
    raise ValueError(f"unknown builtin protocol {name!r}")


@dataclass
class Implementation:
    protocol: TableProtocol
    system: System
    condition: DecisionCondition


def construct_implementation(
    context: Context,
    condition,
    horizon: int,
    keep_slices: bool = True,
    keep_preds: bool = True,
    preds_until: Optional[int] = None,
    name: Optional[str] = None,
) -> Implementation:
    """Build the implementation of the decision program layer by layer.

    At each time, every point of the layer is labeled with the guard's truth
    per value; undecided local states where some guard holds map to the
    least such value.  An agent's guard is constant across the points
    sharing its local state, but whether it has already decided need not be
    recorded in the state (full-information states do not store actions), so
    that consistency is asserted per local state and a violation aborts the
    construction naming the state.
    """
    cond = resolve_condition(condition)
    ex = context.exchange
    proto = TableProtocol(context.n, name or f"kbp({cond.key})")
    system = System(
        context, proto, horizon, keep_preds=keep_preds and keep_slices, preds_until=preds_until
    )
    num_values = len(context.values)
    with gc_paused():
        sl = system.initial_slice()
        for m in range(horizon + 1):
            ev = evaluator(sl)
            decided = sl.decided
            for i in range(context.n):
                phi = [ev.vector(cond.formula(i, vi)) for vi in range(num_values)]
                bit = 1 << i
                table = proto.tables[i]
                for cls, members in sl.buckets(i).items():
                    state = system.state_of(i, cls)
                    if ex.is_crashed(state):
                        table[state] = NOOP
                        continue
                    first = members[0]
                    dec = decided[first] & bit
                    if len(members) > 1:
                        for q in members:
                            if (decided[q] & bit) != dec:
                                raise ConstructionError(
                                    f"agent {i + 1} cannot read off whether it already decided "
                                    f"at state {state!r}: points {sl.describe_point(first)} and "
                                    f"{sl.describe_point(q)} disagree"
                                )
                        last = members[-1]
                        for vi in range(num_values):
                            if phi[vi][first] != phi[vi][last]:
                                raise ConstructionError(
                                    f"guard for agent {i + 1}, value {context.values[vi]!r} is "
                                    f"not local at state {state!r}"
                                )
                    if dec:
                        table[state] = NOOP
                        continue
                    act = NOOP
                    for vi in range(num_values):
                        if phi[vi][first]:
                            act = decide_code(vi)
                            break
                    table[state] = act
            system.fill_actions(sl)
            system.sizes.append(len(sl))
            if keep_slices:
                system.slices.append(sl)
            if m < horizon:
                sl = system.step_slice(sl)
    return Implementation(proto, system, cond)


class StopBuild(Exception):
    """Raised by a layer hook to cut a streaming build short."""


def verify_implementation(context: Context, protocol, condition, horizon: int, stop_early: bool = True):
    """Re-derive the program's selection over the protocol's own system.

    This is the whole-system fixed-point check: the system induced by the
    protocol is rebuilt and at every point the tabled action is compared
    with what the program would select there.  Returns (ok, witness).
    """
    cond = resolve_condition(condition)
    ex = context.exchange
    num_values = len(context.values)
    witness: dict = {}

    def hook(sl):
        ev = evaluator(sl)
        phi = [
            [ev.vector(cond.formula(i, vi)) for vi in range(num_values)]
            for i in range(context.n)
        ]
        crashed = [
            {sid: ex.is_crashed(system_state)
             for sid, system_state in ((s, sl.system.state_of(i, s)) for s in sl.buckets(i))}
            for i in range(context.n)
        ]
        for idx in range(len(sl)):
            loc = sl.locals[idx]
            acts = sl.acts[idx]
            decided = sl.decided[idx]
            for i in range(context.n):
                if crashed[i][loc[i]] or decided >> i & 1:
                    expected = NOOP
                else:
                    expected = NOOP
                    for vi in range(num_values):
                        if phi[i][vi][idx]:
                            expected = decide_code(vi)
                            break
                if acts[i] != expected:
                    witness.update(
                        point=sl.describe_point(idx),
                        agent=i + 1,
                        expected=expected,
                        actual=acts[i],
                    )
                    if stop_early:
                        raise StopBuild

    try:
        build_system(context, protocol, horizon, keep_slices=False, keep_preds=False, layer_hook=hook)
    except StopBuild:
        pass
    return (not witness), (witness or None)


def serialize_protocol(protocol, system: System, values) -> str:
    """Canonical text form: one sorted "agent <tab> state <tab> action" line per entry."""
    ex = system.context.exchange
    lines = []
    if isinstance(protocol, TableProtocol):
        per_agent = [table.items() for table in protocol.tables]
    else:
        per_agent = [
            ((st, protocol.action(i, st)) for st in system._i2s[i])
            for i in range(system.n)
        ]
    for i, items in enumerate(per_agent):
        for state, act in items:
            desc = json.dumps(ex.describe_state(state, values), sort_keys=True)
            label = "noop" if act == NOOP else f"decide({values[act - 1]})"
            lines.append((i + 1, desc, label))
    return "\n".join(f"{a}\t{d}\t{l}" for a, d, l in sorted(lines))
