"""Global states, synchronous round semantics, and explicit run prefixes.

A round from time k to k+1 applies, in order: action selection by the
decision protocol, message emission by the information exchange, sender-side
and receiver-side channel perturbation by the adversary, the local state
update, and finally the adversary's state perturbation.  Fault flags are
derived semantically: a perturbation that does not change anything (dropping
an absent message, re-crashing a crashed state) is not a fault.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import ConstructionError, IntegrityError
from .failures import Commitment, FailureModel, RoundBehavior, check_behavior_legal

NOOP = 0


def decide_code(value_index: int) -> int:
    return value_index + 1


def is_decide(code: int) -> bool:
    return code > 0


def decided_value_index(code: int) -> int:
    if code <= 0:
        raise ValueError("noop carries no value")
    return code - 1


def action_label(code: int, values: Sequence) -> str:
    return "noop" if code == NOOP else f"decide({values[code - 1]})"


class EnvSpec:
    """Environment state hook; the default is the single-point environment."""

    initial = 0

    def update(self, state, actions):
        return state


@dataclass(frozen=True)
class Context:
    """An information exchange paired with a failure model over n agents."""

    n: int
    values: tuple
    exchange: object
    model: FailureModel
    env: EnvSpec = field(default_factory=EnvSpec)

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least two agents")
        if len(self.values) < 1:
            raise ValueError("need at least one value")
        if len(set(self.values)) != len(self.values):
            raise ValueError("values must be distinct")
        if len(self.values) < 2:
            warnings.warn("single-valued agreement is degenerate", stacklevel=2)
        self.model.validate(self.n)

    def value_index(self, v) -> int:
        try:
            return self.values.index(v)
        except ValueError:
            raise ValueError(f"{v!r} is not a scenario value") from None

    def agent_mask(self) -> int:
        return (1 << self.n) - 1


@dataclass(frozen=True)
class GlobalState:
    """One time slice of one run: the agents' local states plus environment."""

    time: int
    locals: tuple
    env: object = 0


@dataclass(frozen=True)
class FaultRecord:
    """Per-round semantic fault flags, one bit per agent."""

    transmission: int = 0
    reception: int = 0
    state: int = 0

    def flagged(self) -> int:
        return self.transmission | self.reception | self.state


def step(
    context: Context,
    protocol,
    gstate: GlobalState,
    behavior: RoundBehavior,
    commitment: Optional[Commitment] = None,
) -> tuple[GlobalState, FaultRecord]:
    """Advance one global state by one round under the given behavior.

    Raises ConstructionError when the protocol has no entry for a local state
    it is asked about, and IntegrityError when the behavior is not legal for
    the commitment (if one is supplied).
    """
    n = context.n
    ex = context.exchange
    if commitment is not None:
        check_behavior_legal(context.model, commitment, behavior, gstate.time + 1, n)

    locs = gstate.locals
    acts = tuple(protocol.action(i, locs[i]) for i in range(n))
    sent = [ex.send_vector(i, locs[i], acts[i], n) for i in range(n)]

    delivered = [list(sent[i]) for i in range(n)]
    tmask = 0
    for (i, j) in behavior.tdrops:
        if delivered[i][j] is not None:
            tmask |= 1 << i
        delivered[i][j] = None
    rmask = 0
    for (i, j) in behavior.rdrops:
        if delivered[i][j] is not None:
            rmask |= 1 << j
        delivered[i][j] = None

    new_locals = []
    smask = 0
    for j in range(n):
        received = tuple(delivered[i][j] for i in range(n))
        updated = ex.update(j, locs[j], acts[j], received)
        if j in behavior.crashes:
            forced = ex.crashed_state(gstate.time + 1)
            if forced != updated:
                smask |= 1 << j
            updated = forced
        new_locals.append(updated)

    env = context.env.update(gstate.env, acts)
    nxt = GlobalState(gstate.time + 1, tuple(new_locals), env)
    return nxt, FaultRecord(tmask, rmask, smask)


@dataclass
class RunPrefix:
    """An explicit run through a bounded number of rounds.

    Successive states are produced by ``step``; the whole prefix is
    determined by the initial local states, the commitment, the behavior
    choices, and the protocol.  ``actions[m]`` holds the action tuple chosen
    at time m, and ``decided[m]`` the agents that performed a decide action
    strictly before time m.
    """

    context: Context
    protocol: object
    inits: tuple[int, ...]
    commitment: Commitment
    states: list[GlobalState]
    behaviors: list[RoundBehavior]
    faults: list[FaultRecord]
    actions: list[tuple[int, ...]]
    decided: list[int]

    @property
    def horizon(self) -> int:
        return len(self.behaviors)

    def flagged_by(self, m: int) -> int:
        mask = 0
        for rec in self.faults[:m]:
            mask |= rec.flagged()
        return mask

    def dtime(self, agent: int) -> Optional[int]:
        """Earliest time whose selected action is a decision, None if none."""
        for m, acts in enumerate(self.actions):
            if is_decide(acts[agent]):
                return m
        return None

    def decision(self, agent: int) -> Optional[tuple[int, int]]:
        m = self.dtime(agent)
        if m is None:
            return None
        return m, decided_value_index(self.actions[m][agent])


def initial_global_state(context: Context, inits: Sequence[int]) -> GlobalState:
    locs = tuple(
        context.exchange.initial_state(i, vi, context.n, len(context.values))
        for i, vi in enumerate(inits)
    )
    return GlobalState(0, locs, context.env.initial)


def simulate_run(
    context: Context,
    protocol,
    inits: Sequence[int],
    commitment: Commitment,
    behaviors: Sequence[RoundBehavior],
    check_legal: bool = True,
) -> RunPrefix:
    """Materialize the run determined by initial values, adversary, and protocol."""
    n = context.n
    if any(not 0 <= vi < len(context.values) for vi in inits) or len(inits) != n:
        raise ValueError("inits must give one value index per agent")
    g = initial_global_state(context, inits)
    states = [g]
    faults: list[FaultRecord] = []
    actions: list[tuple[int, ...]] = []
    decided = [0]
    for behavior in behaviors:
        acts = tuple(protocol.action(i, g.locals[i]) for i in range(n))
        actions.append(acts)
        g, rec = step(context, protocol, g, behavior, commitment if check_legal else None)
        states.append(g)
        faults.append(rec)
        dmask = decided[-1]
        for i, a in enumerate(acts):
            if is_decide(a):
                dmask |= 1 << i
        decided.append(dmask)
    actions.append(tuple(protocol.action(i, g.locals[i]) for i in range(n)))
    return RunPrefix(
        context, protocol, tuple(inits), commitment, states, list(behaviors), faults, actions, decided
    )


def classify_sets(
    run: RunPrefix, m: int, commitment: Optional[Commitment] = None
) -> tuple[frozenset[int], frozenset[int]]:
    """Split agents at time m into (active, possibly-nonfaulty) sets.

    Active agents have no semantic fault flag in rounds 1..m.  The
    possibly-nonfaulty set is everything outside the adversary's committed
    faulty set, which upper-bounds who may ever fail; a flag outside that set
    is an integrity violation.
    """
    if m > run.horizon:
        raise ValueError(f"time {m} beyond explored horizon {run.horizon}")
    commitment = commitment or run.commitment
    n = run.context.n
    flagged = run.flagged_by(m)
    fmask = commitment.faulty_mask()
    if flagged & ~fmask:
        raise IntegrityError(
            f"fault flags {flagged:b} are not contained in the committed faulty set {fmask:b}"
        )
    active = frozenset(i for i in range(n) if not flagged >> i & 1)
    nonfaulty = frozenset(i for i in range(n) if not fmask >> i & 1)
    return active, nonfaulty


def corresponding_run(system_a, system_b, run: RunPrefix) -> RunPrefix:
    """The unique run of system_b sharing the run's initial state and adversary."""
    ctx_a, ctx_b = system_a.context, system_b.context
    if (ctx_a.n, ctx_a.values, ctx_a.model) != (ctx_b.n, ctx_b.values, ctx_b.model):
        raise LookupError("systems do not share a context")
    if ctx_a.exchange.name != ctx_b.exchange.name:
        raise LookupError("systems do not share an information exchange")
    if run.horizon > system_b.horizon:
        raise LookupError(
            f"run horizon {run.horizon} exceeds target system horizon {system_b.horizon}"
        )
    return simulate_run(ctx_b, system_b.protocol, run.inits, run.commitment, run.behaviors)
