"""Concrete information exchanges and structural property checkers.

An exchange fixes, per agent, the local state schema, the initial states,
the message alphabet, the send rule, and the update rule.  Decision logic
lives in protocols; exchanges only move information.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .kernel import NOOP, decide_code, is_decide

CRASH_MARK = "crashed"


class Exchange:
    """Shared conveniences; concrete exchanges override the schema methods."""

    name = "abstract"
    uniform_broadcast = True

    def send_vector(self, agent, state, action, n):
        msg = self.send(agent, state, action)
        return (msg,) * n

    def crashed_state(self, time):
        return (CRASH_MARK, time)

    def is_crashed(self, state) -> bool:
        return isinstance(state, tuple) and len(state) == 2 and state[0] == CRASH_MARK

    # Overridden by concrete exchanges.
    def initial_state(self, agent, value_index, n, num_values):
        raise NotImplementedError

    def send(self, agent, state, action):
        raise NotImplementedError

    def update(self, agent, state, action, received):
        raise NotImplementedError

    def time_of(self, state) -> int:
        raise NotImplementedError

    def init_of(self, state) -> Optional[int]:
        raise NotImplementedError

    def known_values(self, state) -> int:
        raise NotImplementedError

    def done_flag(self, state) -> Optional[bool]:
        return None

    def describe_state(self, state, values):
        raise NotImplementedError

    def state_sort_key(self, state):
        return repr(state)


class FullInfoExchange(Exchange):
    """Every agent broadcasts its complete local state each round.

    States are nested records: the initial state is the initial value, and
    each update appends the full vector of received states.  Neither the
    time nor past actions are stored; both are recoverable from the nesting
    depth and, given the protocol, the state itself.  Under hard crashes the
    distinguished crashed state (which does carry the time, to preserve
    synchrony) replaces the record.
    """

    name = "fip"

    def __init__(self):
        self._times: dict = {}
        self._known: dict = {}

    def initial_state(self, agent, value_index, n, num_values):
        return (value_index,)

    def send(self, agent, state, action):
        if self.is_crashed(state):
            return None
        return state

    def update(self, agent, state, action, received):
        if self.is_crashed(state):
            return (CRASH_MARK, state[1] + 1)
        return (state, received)

    def time_of(self, state) -> int:
        if self.is_crashed(state):
            return state[1]
        t = self._times.get(state)
        if t is None:
            t = 0 if len(state) == 1 else self.time_of(state[0]) + 1
            self._times[state] = t
        return t

    def init_of(self, state):
        if self.is_crashed(state):
            return None
        while len(state) == 2:
            state = state[0]
        return state[0]

    def known_values(self, state) -> int:
        if self.is_crashed(state):
            return 0
        got = self._known.get(state)
        if got is None:
            if len(state) == 1:
                got = 1 << state[0]
            else:
                got = self.known_values(state[0])
                for msg in state[1]:
                    if msg is not None:
                        got |= self.known_values(msg)
            self._known[state] = got
        return got

    def describe_state(self, state, values):
        if self.is_crashed(state):
            return {"crashed": True, "time": state[1]}
        if len(state) == 1:
            return values[state[0]]
        prev, received = state
        return [
            self.describe_state(prev, values),
            [None if m is None else self.describe_state(m, values) for m in received],
        ]


class FaultReportExchange(Exchange):
    """Agents report newly learned values and known-faulty peers.

    A local state is (init, known, new, kfaulty, done, time) with the value
    sets as bitmasks over the value indexes and kfaulty as a bitmask over
    agents.  An undecided agent sends (new, kfaulty); a decided or deciding
    agent sends the empty report, which still serves as a heartbeat: its
    reception tells the recipient that no omission hit the channel.  Updates
    union reported values into known, record the senders whose message was
    missing as faulty (the self-channel included, so an agent can see its
    own omissions), and merge reported fault sets.
    """

    name = "fault-report"

    def initial_state(self, agent, value_index, n, num_values):
        return (value_index, 1 << value_index, 1 << value_index, 0, 0, 0)

    def send(self, agent, state, action):
        if self.is_crashed(state):
            return None
        init, known, new, kfaulty, done, time = state
        if done or is_decide(action):
            return (0, 0)
        return (new, kfaulty)

    def update(self, agent, state, action, received):
        if self.is_crashed(state):
            return (CRASH_MARK, state[1] + 1)
        init, known, new, kfaulty, done, time = state
        known2 = known
        kf2 = kfaulty
        for sender, msg in enumerate(received):
            if msg is None:
                kf2 |= 1 << sender
            else:
                known2 |= msg[0]
                kf2 |= msg[1]
        done2 = 1 if (done or is_decide(action)) else done
        return (init, known2, known2 & ~known, kf2, done2, time + 1)

    def time_of(self, state) -> int:
        if self.is_crashed(state):
            return state[1]
        return state[5]

    def init_of(self, state):
        if self.is_crashed(state):
            return None
        return state[0]

    def known_values(self, state) -> int:
        if self.is_crashed(state):
            return 0
        return state[1]

    def done_flag(self, state):
        if self.is_crashed(state):
            return None
        return bool(state[4])

    def describe_state(self, state, values):
        if self.is_crashed(state):
            return {"crashed": True, "time": state[1]}
        init, known, new, kfaulty, done, time = state
        return {
            "init": values[init],
            "known": [values[i] for i in range(len(values)) if known >> i & 1],
            "new": [values[i] for i in range(len(values)) if new >> i & 1],
            "kfaulty": [i + 1 for i in range(kfaulty.bit_length()) if kfaulty >> i & 1],
            "done": done,
            "time": time,
        }


EXCHANGES: dict[str, Callable[[], Exchange]] = {
    "fip": FullInfoExchange,
    "fault-report": FaultReportExchange,
}


def make_exchange(name: str) -> Exchange:
    try:
        return EXCHANGES[name]()
    except KeyError:
        raise ValueError(f"unknown exchange {name!r}") from None


@dataclass(frozen=True)
class MemoryFactorization:
    """A declared split of local states into message memory and action memory.

    ``split`` maps (agent, state) to the two components; ``act_class`` maps
    an action-memory value to 1 (no decision recorded) or 2 (decision
    recorded).  Crashed states fall outside the split; state perturbation is
    assessed separately by the failure-model prerequisites.
    """

    name: str
    split: Callable
    act_class: Callable


def fault_report_factorization() -> MemoryFactorization:
    return MemoryFactorization(
        name="fault-report-done-bit",
        split=lambda agent, s: ((s[0], s[1], s[2], s[3]), (s[4], s[5])),
        act_class=lambda agent, d: 2 if d[0] else 1,
    )


def fip_factorization() -> MemoryFactorization:
    return MemoryFactorization(
        name="fip-trivial",
        split=lambda agent, s: (s, ()),
        act_class=lambda agent, d: 1,
    )


FACTORIZATIONS: dict[str, Callable[[], MemoryFactorization]] = {
    "fault-report-done-bit": fault_report_factorization,
    "fip-trivial": fip_factorization,
}


@dataclass
class ReachabilitySample:
    """Reachable states and delivered-message vectors gathered from a build."""

    states: set = field(default_factory=set)        # (agent, state)
    receptions: set = field(default_factory=set)    # (agent, state, received tuple)
    initials: set = field(default_factory=set)      # (agent, state)


def check_no_decision_info(exchange, sample: ReachabilitySample, num_values: int):
    """True iff sends and updates cannot distinguish which value was decided."""
    codes = [decide_code(vi) for vi in range(num_values)]
    for agent, state in sorted(sample.states, key=lambda p: (p[0], exchange.state_sort_key(p[1]))):
        if exchange.is_crashed(state):
            continue
        outs = [exchange.send(agent, state, c) for c in codes]
        for vi in range(1, num_values):
            if outs[vi] != outs[0]:
                return False, {"agent": agent + 1, "state": state, "values": (0, vi), "rule": "send"}
    for agent, state, received in sorted(
        sample.receptions, key=lambda p: (p[0], exchange.state_sort_key(p[1]), repr(p[2]))
    ):
        if exchange.is_crashed(state):
            continue
        nexts = [exchange.update(agent, state, c, received) for c in codes]
        for vi in range(1, num_values):
            if nexts[vi] != nexts[0]:
                return False, {"agent": agent + 1, "state": state, "values": (0, vi), "rule": "update"}
    return True, None


def check_no_action_info(exchange, factorization, sample: ReachabilitySample, num_values: int):
    """True iff messages depend only on message memory and updates factor.

    Verifies, over the reachable sample, that the send rule is a function of
    the declared message memory alone, that the message memory evolves from
    (message memory, received vector) alone, and that the action memory
    evolves from (action memory, action) alone.
    """
    if factorization is None:
        return None, {"reason": "no factorization declared"}
    codes = [NOOP] + [decide_code(vi) for vi in range(num_values)]
    send_of: dict = {}
    for agent, state in sample.states:
        if exchange.is_crashed(state):
            continue
        mm, _ = factorization.split(agent, state)
        for a in codes:
            out = exchange.send(agent, state, a)
            key = (agent, mm)
            if key in send_of and send_of[key] != out:
                return False, {"agent": agent + 1, "message_memory": mm, "rule": "send"}
            send_of[key] = out
    mm_step: dict = {}
    am_step: dict = {}
    for agent, state, received in sample.receptions:
        if exchange.is_crashed(state):
            continue
        mm, am = factorization.split(agent, state)
        for a in codes:
            nxt = exchange.update(agent, state, a, received)
            mm2, am2 = factorization.split(agent, nxt)
            key = (agent, mm, received)
            if key in mm_step and mm_step[key] != mm2:
                return False, {"agent": agent + 1, "message_memory": mm, "rule": "update-message-memory"}
            mm_step[key] = mm2
            akey = (agent, am, a)
            if akey in am_step and am_step[akey] != am2:
                return False, {"agent": agent + 1, "action_memory": am, "rule": "update-action-memory"}
            am_step[akey] = am2
    return True, None


def check_records_decision_info(exchange, factorization, sample: ReachabilitySample, num_values: int):
    """True iff the action memory soundly latches whether a decision was made."""
    if factorization is None:
        return None, {"reason": "no factorization declared"}
    for agent, state in sample.initials:
        _, am = factorization.split(agent, state)
        if factorization.act_class(agent, am) != 1:
            return False, {"agent": agent + 1, "state": state, "rule": "initial-in-undecided-class"}
    codes = [NOOP] + [decide_code(vi) for vi in range(num_values)]
    for agent, state, received in sample.receptions:
        if exchange.is_crashed(state):
            continue
        _, am = factorization.split(agent, state)
        cls = factorization.act_class(agent, am)
        for a in codes:
            nxt = exchange.update(agent, state, a, received)
            if exchange.is_crashed(nxt):
                continue
            _, am2 = factorization.split(agent, nxt)
            cls2 = factorization.act_class(agent, am2)
            if cls == 2 and cls2 != 2:
                return False, {"agent": agent + 1, "state": state, "rule": "decided-class-absorbing"}
            if cls == 1 and not is_decide(a) and cls2 != 1:
                return False, {"agent": agent + 1, "state": state, "rule": "noop-keeps-undecided"}
            if cls == 1 and is_decide(a) and cls2 != 2:
                return False, {"agent": agent + 1, "state": state, "rule": "decide-enters-decided-class"}
    return True, None
