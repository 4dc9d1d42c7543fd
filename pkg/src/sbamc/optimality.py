"""Decision-time extraction, the dominance order on protocols, and probes.

Protocol a is below protocol b when, in every pair of corresponding runs
(same initial values, same adversary behavior), any agent that decides under
a decides under b no earlier, or not at all.  Refuting a direction needs one
witness run; certifying it needs exhaustive search, which is feasible only
at small scale.  The report always states which of the two it did.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Iterator, Optional

from .failures import IDENTITY_BEHAVIOR, RoundBehavior, enumerate_round_behaviors
from .kernel import (
    Context,
    GlobalState,
    RunPrefix,
    initial_global_state,
    is_decide,
    simulate_run,
    step,
)

HOLDS = "holds"
REFUTED = "refuted"
INCONCLUSIVE = "inconclusive"


@dataclass
class Direction:
    status: str = INCONCLUSIVE
    reason: str = "not examined"
    witness: Optional[dict] = None


@dataclass
class DominanceReport:
    verdict: str
    a_name: str
    b_name: str
    a_le_b: Direction
    b_le_a: Direction
    method: str
    runs_scanned: int
    agents_mode: str

    def describe(self) -> dict:
        def side(d: Direction):
            return {"status": d.status, "reason": d.reason, "witness": d.witness}

        return {
            "verdict": self.verdict,
            "a": self.a_name,
            "b": self.b_name,
            "a_le_b": side(self.a_le_b),
            "b_le_a": side(self.b_le_a),
            "method": self.method,
            "runs_scanned": self.runs_scanned,
            "agents_mode": self.agents_mode,
        }


def run_dtimes(run: RunPrefix) -> list[Optional[int]]:
    """Earliest decision time per agent within the run's window, None if none."""
    return [run.dtime(i) for i in range(run.context.n)]


def _run_desc(context: Context, inits, commitment, behaviors) -> dict:
    return {
        "inits": [context.values[vi] for vi in inits],
        "commitment": commitment.describe(),
        "drops": [
            {
                "round": k + 1,
                "sender_side": sorted((i + 1, j + 1) for (i, j) in b.tdrops),
                "receiver_side": sorted((i + 1, j + 1) for (i, j) in b.rdrops),
            }
            for k, b in enumerate(behaviors)
            if b.tdrops or b.rdrops
        ],
    }


def seed_runs(context: Context, commitments, horizon: int) -> Iterator[tuple]:
    """A deterministic family of adversary behaviors worth scanning first.

    Crash-like commitments determine their single behavior sequence.  For
    omission models the family covers the failure-free pattern and all
    single-round bursts in which a subset of the committed agents hits one
    receiver, or every receiver, on one side of the channel.
    """
    model = context.model
    n = context.n
    identity = [IDENTITY_BEHAVIOR] * horizon
    for commitment in commitments:
        if model.crash_like:
            behaviors = [
                next(enumerate_round_behaviors(model, commitment, k + 1, n))
                for k in range(horizon)
            ]
            yield commitment, behaviors
            continue
        yield commitment, identity
        faulty = sorted(commitment.faulty)
        if not faulty:
            continue
        groups = [(i,) for i in faulty]
        if len(faulty) > 1:
            groups.append(tuple(faulty))
        targets = [(j,) for j in range(n)] + [tuple(range(n))]
        for k in range(horizon):
            for group in groups:
                for target in targets:
                    edges = frozenset((i, j) for i in group for j in target)
                    if model.sender_may_omit:
                        b = RoundBehavior(tdrops=edges)
                        yield commitment, identity[:k] + [b] + identity[k + 1 :]
                    if model.receiver_may_omit:
                        redges = frozenset((i, j) for (i, j) in edges if j in commitment.faulty)
                        if redges:
                            b = RoundBehavior(rdrops=redges)
                            yield commitment, identity[:k] + [b] + identity[k + 1 :]


def _scan_direction(da, db, nmask: int, mode: str):
    """Violations and inconclusive pairs of 'a below b' on one run pair.

    A violation is an agent deciding under b strictly before it decides
    under a; the pair is inconclusive when b decides but a is still
    undecided at the end of the window.
    """
    viol = []
    inconclusive = []
    for i in range(len(da)):
        if mode == "nonfaulty-only" and not nmask >> i & 1:
            continue
        if db[i] is None:
            continue
        if da[i] is None:
            inconclusive.append(i)
        elif db[i] < da[i]:
            viol.append(i)
    return viol, inconclusive


def dominance(
    context: Context,
    proto_a,
    proto_b,
    horizon: int,
    agents_mode: str = "all",
    method: str = "auto",
    budget: int = 500_000,
    extra_runs: Optional[list] = None,
) -> DominanceReport:
    """Compare two protocols under the decides-no-later order, both directions.

    ``method`` is "auto" (witness scan, then exhaustive search within the
    budget when a direction is still open), "witness" (scan only), or
    "exhaustive".  Refutations are certified by explicit witness runs and
    are sound regardless of method; a direction only *holds* when the
    exhaustive search completed.
    """
    from .system import System  # local import; only commitment enumeration is needed

    shell = System(context, proto_a, horizon, keep_preds=False)
    commitments = shell.commitments
    dir_ab = Direction()
    dir_ba = Direction()
    runs_scanned = 0

    def consider(inits, commitment, behaviors) -> bool:
        nonlocal runs_scanned
        runs_scanned += 1
        run_a = simulate_run(context, proto_a, inits, commitment, behaviors)
        run_b = simulate_run(context, proto_b, inits, commitment, behaviors)
        da, db = run_dtimes(run_a), run_dtimes(run_b)
        nmask = shell.commit_nmask[shell.commit_index[commitment]]
        for direction, first, second in ((dir_ab, da, db), (dir_ba, db, da)):
            if direction.status == REFUTED:
                continue
            viol, _ = _scan_direction(first, second, nmask, agents_mode)
            if viol:
                i = viol[0]
                direction.status = REFUTED
                direction.reason = "witness run found"
                direction.witness = {
                    "run": _run_desc(context, inits, commitment, behaviors),
                    "agent": i + 1,
                    "dtime_first": first[i],
                    "dtime_second": second[i],
                }
        return dir_ab.status == REFUTED and dir_ba.status == REFUTED

    if method in ("auto", "witness"):
        done = False
        for commitment, behaviors in seed_runs(context, commitments, horizon):
            for inits in product(range(len(context.values)), repeat=context.n):
                if consider(inits, commitment, behaviors):
                    done = True
                    break
            if done:
                break
        if extra_runs and not done:
            for (inits, commitment, behaviors) in extra_runs:
                if consider(inits, commitment, behaviors):
                    break

    both_refuted = dir_ab.status == REFUTED and dir_ba.status == REFUTED
    if method == "exhaustive" or (method == "auto" and not both_refuted):
        _exhaustive(context, proto_a, proto_b, commitments, horizon, agents_mode, budget, dir_ab, dir_ba, shell)
    elif method == "witness":
        for d in (dir_ab, dir_ba):
            if d.status != REFUTED:
                d.reason = "witness scan found no violation; exhaustive search not attempted"

    verdict = _verdict(dir_ab, dir_ba)
    return DominanceReport(
        verdict,
        getattr(proto_a, "name", "a"),
        getattr(proto_b, "name", "b"),
        dir_ab,
        dir_ba,
        method,
        runs_scanned,
        agents_mode,
    )


def _verdict(ab: Direction, ba: Direction) -> str:
    if ab.status == INCONCLUSIVE or ba.status == INCONCLUSIVE:
        return "inconclusive"
    if ab.status == HOLDS and ba.status == HOLDS:
        return "both"
    if ab.status == HOLDS:
        return "a<=b"
    if ba.status == HOLDS:
        return "b<=a"
    return "incomparable"


def _exhaustive(context, proto_a, proto_b, commitments, horizon, agents_mode, budget, dir_ab, dir_ba, shell):
    """Joint forward exploration of both systems under shared behaviors.

    Points pair the two protocols' global states under identical adversary
    choices; a first decision on one side while the other side has already
    decided refutes one direction.  Exceeding the budget leaves open
    directions inconclusive.
    """
    n = context.n
    model = context.model
    spent = 0
    incomplete = False
    for ci, commitment in enumerate(commitments):
        nmask = shell.commit_nmask[ci]
        behaviors_by_round = [
            list(enumerate_round_behaviors(model, commitment, k + 1, n)) for k in range(horizon)
        ]
        layer: dict = {}
        for inits in product(range(len(context.values)), repeat=n):
            ga = initial_global_state(context, inits)
            key = (ga.locals, ga.locals, 0, 0, inits)
            layer.setdefault(key, None)
        for k in range(horizon):
            nxt: dict = {}
            for (la, lb, deca, decb, inits), _ in layer.items():
                ga = GlobalState(k, la)
                gb = GlobalState(k, lb)
                acts_a = tuple(proto_a.action(i, la[i]) for i in range(n))
                acts_b = tuple(proto_b.action(i, lb[i]) for i in range(n))
                for i in range(n):
                    if agents_mode == "nonfaulty-only" and not nmask >> i & 1:
                        continue
                    first_a = is_decide(acts_a[i]) and not deca >> i & 1
                    first_b = is_decide(acts_b[i]) and not decb >> i & 1
                    if first_a and decb >> i & 1 and dir_ab.status != REFUTED:
                        dir_ab.status = REFUTED
                        dir_ab.reason = "exhaustive search found a violation"
                        dir_ab.witness = {
                            "run": {"inits": [context.values[v] for v in inits],
                                    "commitment": commitment.describe()},
                            "agent": i + 1,
                            "dtime_first": k,
                            "dtime_second": "earlier",
                        }
                    if first_b and deca >> i & 1 and dir_ba.status != REFUTED:
                        dir_ba.status = REFUTED
                        dir_ba.reason = "exhaustive search found a violation"
                        dir_ba.witness = {
                            "run": {"inits": [context.values[v] for v in inits],
                                    "commitment": commitment.describe()},
                            "agent": i + 1,
                            "dtime_first": k,
                            "dtime_second": "earlier",
                        }
                deca2 = deca
                decb2 = decb
                for i in range(n):
                    if is_decide(acts_a[i]):
                        deca2 |= 1 << i
                    if is_decide(acts_b[i]):
                        decb2 |= 1 << i
                for behavior in behaviors_by_round[k]:
                    spent += 1
                    if spent > budget:
                        incomplete = True
                        break
                    na, _ = step(context, proto_a, ga, behavior)
                    nb, _ = step(context, proto_b, gb, behavior)
                    nxt.setdefault((na.locals, nb.locals, deca2, decb2, inits), None)
                if incomplete:
                    break
            if incomplete:
                break
            layer = nxt
        if incomplete:
            break
        # Final layer: decisions at the horizon and undecided-versus-decided pairs.
        for (la, lb, deca, decb, inits), _ in layer.items():
            acts_a = tuple(proto_a.action(i, la[i]) for i in range(n))
            acts_b = tuple(proto_b.action(i, lb[i]) for i in range(n))
            for i in range(n):
                if agents_mode == "nonfaulty-only" and not nmask >> i & 1:
                    continue
                first_a = is_decide(acts_a[i]) and not deca >> i & 1
                first_b = is_decide(acts_b[i]) and not decb >> i & 1
                if first_a and decb >> i & 1 and dir_ab.status != REFUTED:
                    dir_ab.status = REFUTED
                    dir_ab.reason = "exhaustive search found a violation"
                    dir_ab.witness = {"agent": i + 1, "time": horizon,
                                      "run": {"inits": [context.values[v] for v in inits],
                                              "commitment": commitment.describe()}}
                if first_b and deca >> i & 1 and dir_ba.status != REFUTED:
                    dir_ba.status = REFUTED
                    dir_ba.reason = "exhaustive search found a violation"
                    dir_ba.witness = {"agent": i + 1, "time": horizon,
                                      "run": {"inits": [context.values[v] for v in inits],
                                              "commitment": commitment.describe()}}
                fin_a = deca >> i & 1 or first_a
                fin_b = decb >> i & 1 or first_b
                for direction, fa, fb in ((dir_ab, fin_a, fin_b), (dir_ba, fin_b, fin_a)):
                    if direction.status == INCONCLUSIVE and fb and not fa:
                        direction.reason = (
                            "one side undecided at the horizon while the other decided; "
                            "cannot distinguish later decision from none"
                        )
    for d in (dir_ab, dir_ba):
        if d.status == INCONCLUSIVE:
            if incomplete:
                d.reason = f"exhaustive search exceeded the budget of {budget} steps"
            elif d.reason == "not examined" or d.reason.startswith("witness scan"):
                d.status = HOLDS
                d.reason = "exhaustive search completed without violation"


def decision_table(context: Context, protocol, horizon: int, runs) -> list[dict]:
    """Decision times per (run, agent) over an explicit family of runs."""
    out = []
    for (inits, commitment, behaviors) in runs:
        run = simulate_run(context, protocol, inits, commitment, behaviors)
        out.append(
            {
                "run": _run_desc(context, inits, commitment, behaviors),
                "dtimes": [run.dtime(i) for i in range(context.n)],
            }
        )
    return out


def optimality_probe(
    context: Context,
    protocol,
    candidates,
    horizon: int,
    agents_mode: str = "all",
    method: str = "auto",
) -> dict:
    """Probe whether some candidate refutes the protocol's optimality.

    A candidate refutes optimality when it is itself a specification-passing
    protocol, decides nowhere later than the probed protocol, and somewhere
    strictly earlier.  A clean pass certifies optimality relative to the
    candidate set only.
    """
    from .speccheck import check_sba

    entries = []
    refuted = False
    for cand in candidates:
        verdict = check_sba(context, cand, horizon)
        if not verdict.passed:
            entries.append(
                {
                    "candidate": getattr(cand, "name", "candidate"),
                    "rejected": True,
                    "sba": verdict.describe(),
                }
            )
            continue
        rep = dominance(context, cand, protocol, horizon, agents_mode=agents_mode, method=method)
        dominates = rep.a_le_b.status == HOLDS
        beats = rep.b_le_a.status == REFUTED
        refutes = dominates and beats
        refuted = refuted or refutes
        entries.append(
            {
                "candidate": getattr(cand, "name", "candidate"),
                "rejected": False,
                "dominance": rep.describe(),
                "refutes_optimality": refutes,
            }
        )
    return {
        "protocol": getattr(protocol, "name", "protocol"),
        "optimality_refuted": refuted,
        "scope": "relative to the explicit candidate set only",
        "candidates": entries,
    }


def reproduce_counterexample(horizon: int = 5, jobs: int = 1) -> dict:
    """Self-configuring reproduction of the four-agent separation scenario.

    Builds the constructed implementation and the deadline protocol over the
    fault-report exchange with three possible sending omitters, replays the
    run in which agents 1, 2, and 3 omit their round-1 message to agent 1,
    and checks every headline fact, including the incomparability of the two
    protocols and the indistinguishability chain out of the failure-free run.
    Returns a report whose "ok" field is the conjunction of all facts.
    """
    from .epistemic import CB, Exists, N as SEL_N, holds, witness_chain
    from .exchanges import make_exchange
    from .failures import Commitment, FailureModel, RoundBehavior, SEND_OMIT
    from .kbp import BN_CBN, builtin_protocol, construct_implementation

    del jobs  # single-process engine; accepted for interface stability
    n, t = 4, 3
    context = Context(
        n=n, values=(0, 1), exchange=make_exchange("fault-report"), model=FailureModel(SEND_OMIT, t)
    )
    impl = construct_implementation(context, BN_CBN, horizon, preds_until=2)
    proto_p = impl.protocol
    proto_pp = builtin_protocol("fault-report-pprime", context, t=t)

    facts: list[dict] = []

    def fact(name: str, expected, actual):
        facts.append({"fact": name, "expected": expected, "actual": actual, "ok": expected == actual})

    commitment = Commitment(faulty=frozenset({0, 1, 2}))
    round1 = RoundBehavior(tdrops=frozenset({(0, 0), (1, 0), (2, 0)}))
    behaviors = [round1] + [IDENTITY_BEHAVIOR] * (horizon - 1)
    inits = (0, 1, 1, 1)
    run_r = simulate_run(context, proto_p, inits, commitment, behaviors)
    run_rp = simulate_run(context, proto_pp, inits, commitment, behaviors)

    kf1 = run_r.states[1].locals[0][3]
    fact("kfaulty of agent 1 at time 1 in run r", [1, 2, 3], _mask_list(kf1))
    fact("agent 1 decision time in run r under the constructed protocol", 1, run_r.dtime(0))
    fact(
        "kfaulty of agents 2..4 at time 2 in run r under the constructed protocol",
        [[], [], []],
        [_mask_list(run_r.states[2].locals[i][3]) for i in (1, 2, 3)],
    )
    fact("agent 4 decides at time 2 in run r under the constructed protocol", False, run_r.dtime(3) == 2)
    fact("agent 4 decision time in run r under the constructed protocol", 3, run_r.dtime(3))

    fact("agent 1 decision time in run r' under the deadline protocol", t + 1, run_rp.dtime(0))
    st1 = run_rp.states[1].locals[0]
    msg = context.exchange.send(0, st1, run_rp.actions[1][0])
    fact(
        "agent 1's round-2 report in run r' carries its fault set",
        [1, 2, 3],
        _mask_list(msg[1]) if msg else None,
    )
    fact(
        "round-2 report carries the values newly learned at time 1",
        _mask_list_vals(st1[2], context.values),
        _mask_list_vals(msg[0], context.values) if msg else None,
    )
    fact(
        "kfaulty of the nonfaulty agent at time 2 in run r'",
        [1, 2, 3],
        _mask_list(run_rp.states[2].locals[3][3]),
    )
    fact("agent 4 decision time in run r' under the deadline protocol", 2, run_rp.dtime(3))

    rep = dominance(
        context,
        proto_p,
        proto_pp,
        horizon,
        method="witness",
        extra_runs=[(inits, commitment, behaviors)],
    )
    fact("dominance verdict", "incomparable", rep.verdict)
    rep_nf = dominance(
        context,
        proto_p,
        proto_pp,
        horizon,
        agents_mode="nonfaulty-only",
        method="witness",
        extra_runs=[(inits, commitment, behaviors)],
    )
    fact(
        "restricting to nonfaulty agents still refutes the constructed protocol's dominance",
        REFUTED,
        rep_nf.a_le_b.status,
    )

    # Failure-free mixed-value run: nobody can decide at time 2; everyone decides at time 3.
    ff = simulate_run(
        context, proto_p, inits, Commitment(faulty=frozenset()), [IDENTITY_BEHAVIOR] * horizon
    )
    fact(
        "decision time of every agent in the failure-free mixed run",
        [t] * n,
        [ff.dtime(i) for i in range(n)],
    )
    sl2, ff_idx = impl.system.locate(ff, 2)
    chains = {}
    guards = {}
    for vi, v in enumerate(context.values):
        guards[str(v)] = holds(sl2, ff_idx, CB(SEL_N, Exists(vi)))
        chain = witness_chain(
            sl2,
            ff_idx,
            SEL_N,
            lambda q, vi=vi: not holds(sl2, q, Exists(vi)),
        )
        chains[str(v)] = chain
    fact(
        "common belief of each value's presence fails at time 2 of the failure-free run",
        {"0": False, "1": False},
        guards,
    )
    fact(
        "a chain out of the failure-free run reaches runs missing each value",
        {"0": True, "1": True},
        {k: c is not None for k, c in chains.items()},
    )

    report = {
        "ok": all(f["ok"] for f in facts),
        "context": {
            "n": n,
            "t": t,
            "exchange": "fault-report",
            "failure_model": "send-omit",
            "horizon": horizon,
        },
        "facts": facts,
        "dominance": rep.describe(),
        "dominance_nonfaulty_only": rep_nf.describe(),
        "slice_sizes": impl.system.sizes,
    }
    report["_chains"] = chains
    report["_system"] = impl.system
    report["_slice2"] = sl2
    return report


def _mask_list(mask: int) -> list[int]:
    return [i + 1 for i in range(mask.bit_length()) if mask >> i & 1]


def _mask_list_vals(mask: int, values) -> list:
    return [values[i] for i in range(mask.bit_length()) if mask >> i & 1]


def optimum_probe(
    context: Context,
    protocol,
    candidates,
    horizon: int,
    agents_mode: str = "all",
    method: str = "auto",
    factorization=None,
) -> dict:
    """Probe whether the protocol decides nowhere later than every candidate."""
    from .exchanges import check_no_action_info, check_records_decision_info
    from .speccheck import check_sba
    from .system import collect_reachability

    sample = collect_reachability(context, protocol, horizon)
    no_action, na_wit = check_no_action_info(
        context.exchange, factorization, sample, len(context.values)
    )
    records, rec_wit = check_records_decision_info(
        context.exchange, factorization, sample, len(context.values)
    )
    prerequisites = {
        "no_action_info": no_action,
        "no_action_info_witness": na_wit,
        "records_decision_info": records,
        "records_decision_info_witness": rec_wit,
        "state_perturbation": (
            "only the hard-crash model perturbs local states, and the crashed state "
            "forces noop, so the action record stays accurate"
            if context.model.perturbs_state
            else "this model never perturbs local states"
        ),
    }
    entries = []
    refuted = False
    for cand in candidates:
        verdict = check_sba(context, cand, horizon)
        if not verdict.passed:
            entries.append(
                {
                    "candidate": getattr(cand, "name", "candidate"),
                    "rejected": True,
                    "sba": verdict.describe(),
                }
            )
            continue
        rep = dominance(context, protocol, cand, horizon, agents_mode=agents_mode, method=method)
        holds = rep.a_le_b.status == HOLDS
        broken = rep.a_le_b.status == REFUTED
        refuted = refuted or broken
        entries.append(
            {
                "candidate": getattr(cand, "name", "candidate"),
                "rejected": False,
                "below_candidate": rep.a_le_b.status,
                "dominance": rep.describe(),
            }
        )
    return {
        "protocol": getattr(protocol, "name", "protocol"),
        "optimum_refuted": refuted,
        "scope": "relative to the explicit candidate set only",
        "prerequisites": prerequisites,
        "candidates": entries,
    }
