"""Failure models, adversary commitments, and per-round behavior enumeration.

An adversary is represented as a *commitment* (a designated set of agents
permitted to fail, plus crash parameters where the model calls for them)
together with per-round behavior choices drawn lazily during exploration.
Whole-horizon behavior tables are never materialized for omission models;
their number grows as (2^n)^(|F| * horizon) and is infeasible beyond toy
sizes.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from itertools import combinations, product
from typing import Iterator, Optional

from .errors import IntegrityError, SchemaError

HARD_CRASH = "hard-crash"
COM_CRASH = "com-crash"
SEND_OMIT = "send-omit"
RECV_OMIT = "recv-omit"
GEN_OMIT = "gen-omit"

KINDS = (HARD_CRASH, COM_CRASH, SEND_OMIT, RECV_OMIT, GEN_OMIT)
CRASH_KINDS = (HARD_CRASH, COM_CRASH)


@dataclass(frozen=True)
class FailureModel:
    """A named benign failure model with an upper bound t on faulty agents."""

    kind: str
    t: int

    def validate(self, n: int) -> None:
        if self.kind not in KINDS:
            raise SchemaError(f"unknown failure model kind {self.kind!r}", "failure_model.kind")
        if not 0 <= self.t <= n:
            raise SchemaError(f"t={self.t} outside 0..n={n}", "failure_model.t")
        if self.t == n:
            warnings.warn(
                f"t = n = {n}: the nonfaulty set may be empty, so belief-based "
                "decision conditions lose truthfulness",
                stacklevel=2,
            )

    @property
    def crash_like(self) -> bool:
        return self.kind in CRASH_KINDS

    @property
    def perturbs_state(self) -> bool:
        return self.kind == HARD_CRASH

    @property
    def sender_may_omit(self) -> bool:
        return self.kind in (SEND_OMIT, GEN_OMIT)

    @property
    def receiver_may_omit(self) -> bool:
        return self.kind in (RECV_OMIT, GEN_OMIT)


@dataclass(frozen=True, order=True)
class CrashPlan:
    """Crash schedule for one committed agent.

    ``round`` ranges over 1..horizon, or horizon+1 meaning "no crash within
    the explored window".  ``receivers`` is the set of agents whose incoming
    message from this agent is still dropped in the crash round itself; it is
    None exactly when the crash never happens in the window.
    """

    agent: int
    round: int
    receivers: Optional[frozenset[int]]


@dataclass(frozen=True)
class Commitment:
    """A designated faulty set, with crash schedules under crash-like models."""

    faulty: frozenset[int]
    crashes: tuple[CrashPlan, ...] = ()

    def faulty_mask(self) -> int:
        m = 0
        for i in self.faulty:
            m |= 1 << i
        return m

    def crash_plan(self, agent: int) -> Optional[CrashPlan]:
        for plan in self.crashes:
            if plan.agent == agent:
                return plan
        return None

    def describe(self) -> dict:
        out: dict = {"faulty": sorted(i + 1 for i in self.faulty)}
        if self.crashes:
            out["crashes"] = [
                {
                    "agent": p.agent + 1,
                    "round": p.round,
                    "receivers": None if p.receivers is None else sorted(j + 1 for j in p.receivers),
                }
                for p in self.crashes
            ]
        return out


@dataclass(frozen=True)
class RoundBehavior:
    """One round's worth of adversary choices.

    ``tdrops`` are sender-side suppressed channels, ``rdrops`` receiver-side
    suppressed channels (both as (sender, receiver) pairs), and ``crashes``
    the agents whose post-update local state is forced to the crashed state
    this round.  Only committed-faulty agents may appear on the perturbed
    side of any entry.
    """

    tdrops: frozenset[tuple[int, int]] = frozenset()
    rdrops: frozenset[tuple[int, int]] = frozenset()
    crashes: frozenset[int] = frozenset()

    def is_identity(self) -> bool:
        return not (self.tdrops or self.rdrops or self.crashes)


IDENTITY_BEHAVIOR = RoundBehavior()


def enumerate_commitments(model: FailureModel, n: int, horizon: int) -> list[Commitment]:
    """All adversary commitments for the model at the given agent count.

    Crash-like models carry, per committed agent, a crash round in
    1..horizon+1 (horizon+1 encoding "not within the window") and a receiver
    set for the crash round.  Omission models carry the faulty set only.
    """
    model.validate(n)
    agents = range(n)
    out: list[Commitment] = []
    for size in range(model.t + 1):
        for fs in combinations(agents, size):
            if not model.crash_like:
                out.append(Commitment(faulty=frozenset(fs)))
                continue
            per_agent: list[list[CrashPlan]] = []
            for a in fs:
                plans = [
                    CrashPlan(a, rnd, frozenset(js))
                    for rnd in range(1, horizon + 1)
                    for js in _subsets(agents)
                ]
                plans.append(CrashPlan(a, horizon + 1, None))
                per_agent.append(plans)
            for combo in product(*per_agent):
                out.append(Commitment(faulty=frozenset(fs), crashes=tuple(sorted(combo))))
    return out


def _subsets(agents) -> Iterator[tuple[int, ...]]:
    items = tuple(agents)
    for size in range(len(items) + 1):
        yield from combinations(items, size)


def enumerate_round_behaviors(
    model: FailureModel, commitment: Commitment, round_num: int, n: int
) -> Iterator[RoundBehavior]:
    """All legal behaviors of the committed adversary in the given round.

    Crash-like commitments determine their behavior completely, so the result
    is a singleton.  Omission models branch over every assignment of dropped
    channels to committed agents; the count is (2^n)^|F| per perturbed side.
    """
    if model.crash_like:
        tdrops = set()
        crashes = set()
        for plan in commitment.crashes:
            if plan.receivers is None:
                continue
            if plan.round == round_num:
                tdrops.update((plan.agent, j) for j in plan.receivers)
            elif plan.round < round_num:
                tdrops.update((plan.agent, j) for j in range(n))
            if model.kind == HARD_CRASH and plan.round <= round_num:
                crashes.add(plan.agent)
        yield RoundBehavior(frozenset(tdrops), frozenset(), frozenset(crashes))
        return

    faulty = sorted(commitment.faulty)
    receiver_sets = [tuple((i, j) for j in range(n)) for i in range(n)]
    sender_sets = [tuple((i, j) for i in range(n)) for j in range(n)]

    t_choices: list[list[frozenset]] = []
    if model.sender_may_omit:
        for i in faulty:
            t_choices.append([frozenset(sub) for sub in _subsets_of(receiver_sets[i])])
    r_choices: list[list[frozenset]] = []
    if model.receiver_may_omit:
        for j in faulty:
            r_choices.append([frozenset(sub) for sub in _subsets_of(sender_sets[j])])

    for t_combo in product(*t_choices) if t_choices else ((),):
        tdrops = frozenset().union(*t_combo) if t_combo else frozenset()
        for r_combo in product(*r_choices) if r_choices else ((),):
            rdrops = frozenset().union(*r_combo) if r_combo else frozenset()
            yield RoundBehavior(tdrops, rdrops, frozenset())


def _subsets_of(items: tuple) -> Iterator[tuple]:
    for size in range(len(items) + 1):
        yield from combinations(items, size)


def check_behavior_legal(
    model: FailureModel, commitment: Commitment, behavior: RoundBehavior, round_num: int, n: int
) -> None:
    """Raise IntegrityError unless the behavior is one the commitment allows."""
    fset = commitment.faulty
    for (i, _j) in behavior.tdrops:
        if i not in fset:
            raise IntegrityError(f"sender {i + 1} drops a message but is not committed faulty")
    for (_i, j) in behavior.rdrops:
        if j not in fset:
            raise IntegrityError(f"receiver {j + 1} suppresses a message but is not committed faulty")
    for a in behavior.crashes:
        if a not in fset:
            raise IntegrityError(f"agent {a + 1} crashes but is not committed faulty")
    if model.crash_like:
        expected = next(enumerate_round_behaviors(model, commitment, round_num, n))
        if behavior != expected:
            raise IntegrityError("crash-like behavior differs from the committed schedule")
    else:
        if behavior.crashes:
            raise IntegrityError(f"{model.kind} adversaries never perturb local states")
        if behavior.tdrops and not model.sender_may_omit:
            raise IntegrityError(f"{model.kind} adversaries never perturb transmission")
        if behavior.rdrops and not model.receiver_may_omit:
            raise IntegrityError(f"{model.kind} adversaries never perturb reception")


def reconcile_semantic_faults(system) -> dict:
    """Cross-check observed fault flags against every point's commitment.

    Every semantically flagged agent must be committed faulty (hard failure,
    raises IntegrityError).  Committed agents that stay clean through the
    final explored layer in some run are reported informationally; their
    faults may simply lie beyond the window.
    """
    unrealized: set[tuple[int, int]] = set()
    commitments = system.commitments
    for sl in system.iter_slices():
        for idx in range(len(sl)):
            ci = sl.commit[idx]
            fmask = system.commit_fmask[ci]
            flg = sl.flagged[idx]
            if flg & ~fmask:
                raise IntegrityError(
                    f"point at time {sl.time} has fault flags {flg:b} outside the committed set {fmask:b}"
                )
            if sl.time == system.horizon:
                for a in commitments[ci].faulty:
                    if not flg >> a & 1:
                        unrealized.add((ci, a))
    return {
        "consistent": True,
        "unrealized": [
            {"commitment": commitments[ci].describe(), "agent": a + 1}
            for ci, a in sorted(unrealized)
        ],
    }
