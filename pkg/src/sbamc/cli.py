"""Command-line front end: scenario ingestion, dispatch, artifact emission.

Scenario files are JSON; the schema is documented in the README.  All
machine-readable artifacts are emitted with sorted keys and deterministic
ordering, so identical invocations produce byte-identical files.  Exit
codes: 0 success, 1 failed counterexample assertion, 2 schema violation,
3 integrity failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import dot
from .epistemic import A, N, parse_formula
from .errors import FormulaError, IntegrityError, SchemaError
from .exchanges import EXCHANGES, FACTORIZATIONS, make_exchange
from .failures import KINDS, Commitment, CrashPlan, FailureModel, RoundBehavior
from .kbp import (
    CONDITIONS,
    builtin_protocol,
    construct_implementation,
    serialize_protocol,
    verify_implementation,
)
from .kernel import Context, simulate_run
from .optimality import dominance, reproduce_counterexample
from .speccheck import check_sba
from .system import build_system

DEFAULT_HORIZON = 6


def _expect(cond: bool, message: str, location: str):
    if not cond:
        raise SchemaError(message, location)


def load_scenario(path: str) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise SchemaError("scenario file not found", path) from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}", path) from None
    validate_scenario(data)
    return data


def validate_scenario(s: dict) -> None:
    _expect(isinstance(s, dict), "scenario must be a JSON object", "$")
    _expect(isinstance(s.get("n"), int) and s["n"] >= 2, "n must be an integer >= 2", "$.n")
    _expect(
        isinstance(s.get("values"), list) and len(s["values"]) >= 1,
        "values must be a non-empty list",
        "$.values",
    )
    fm = s.get("failure_model")
    _expect(isinstance(fm, dict), "failure_model must be an object", "$.failure_model")
    _expect(fm.get("kind") in KINDS, f"kind must be one of {KINDS}", "$.failure_model.kind")
    _expect(
        isinstance(fm.get("t"), int) and 0 <= fm["t"] <= s["n"],
        "t must be an integer in 0..n",
        "$.failure_model.t",
    )
    _expect(s.get("exchange") in EXCHANGES, f"exchange must be one of {sorted(EXCHANGES)}", "$.exchange")
    horizon = s.get("horizon", DEFAULT_HORIZON)
    _expect(isinstance(horizon, int) and horizon >= 1, "horizon must be an integer >= 1", "$.horizon")
    protos = s.get("protocols", [])
    _expect(isinstance(protos, list) and protos, "protocols must be a non-empty list", "$.protocols")
    seen = set()
    for k, p in enumerate(protos):
        loc = f"$.protocols[{k}]"
        _expect(isinstance(p, dict), "protocol entries are objects", loc)
        _expect(isinstance(p.get("id"), str) and p["id"], "protocol needs a string id", loc + ".id")
        _expect(p["id"] not in seen, f"duplicate protocol id {p['id']!r}", loc + ".id")
        seen.add(p["id"])
        kind = p.get("kind")
        _expect(
            kind in ("kbp", "fault-report-pprime", "wait-until", "always-noop"),
            "unknown protocol kind",
            loc + ".kind",
        )
        if kind == "kbp":
            cond = p.get("condition", "bn-cbn")
            _expect(cond in CONDITIONS, f"condition must be one of {sorted(CONDITIONS)}", loc + ".condition")
        if kind == "fault-report-pprime":
            _expect(isinstance(p.get("t"), int), "pprime needs integer t", loc + ".t")
        if kind == "wait-until":
            _expect(isinstance(p.get("round"), int), "wait-until needs integer round", loc + ".round")
    for k, f in enumerate(s.get("formulas", [])):
        _expect(isinstance(f, str), "formulas are strings", f"$.formulas[{k}]")
    for k, pair in enumerate(s.get("comparisons", [])):
        loc = f"$.comparisons[{k}]"
        _expect(
            isinstance(pair, list) and len(pair) == 2 and all(p in seen for p in pair),
            "comparisons are [idA, idB] pairs over declared protocol ids",
            loc,
        )


def make_context(s: dict) -> Context:
    return Context(
        n=s["n"],
        values=tuple(s["values"]),
        exchange=make_exchange(s["exchange"]),
        model=FailureModel(s["failure_model"]["kind"], s["failure_model"]["t"]),
    )


def make_protocol(spec: dict, context: Context, horizon: int, condition_override=None):
    kind = spec["kind"]
    if kind == "kbp":
        cond = condition_override or spec.get("condition", "bn-cbn")
        impl = construct_implementation(context, cond, horizon, keep_slices=False, keep_preds=False)
        return impl.protocol
    if kind == "fault-report-pprime":
        return builtin_protocol("fault-report-pprime", context, t=spec["t"])
    if kind == "wait-until":
        return builtin_protocol("wait-until", context, round=spec["round"])
    return builtin_protocol("always-noop", context)


def _protocol_spec(s: dict, proto_id) -> dict:
    protos = s["protocols"]
    if proto_id is None:
        return protos[0]
    for p in protos:
        if p["id"] == proto_id:
            return p
    raise SchemaError(f"protocol id {proto_id!r} not declared", "$.protocols")


def emit(payload: dict, args, name: str) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2, default=str) + "\n"
    sys.stdout.write(text)
    if args.output:
        outdir = Path(args.output)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / name).write_text(text)


def _selector(name: str):
    if name == "N":
        return N
    if name == "A":
        return A
    raise SchemaError("selector must be N or A", "--selector")


# ----- commands -----


def cmd_build(args) -> int:
    s = load_scenario(args.scenario)
    horizon = args.horizon or s.get("horizon", DEFAULT_HORIZON)
    context = make_context(s)
    spec = _protocol_spec(s, args.protocol)
    protocol = make_protocol(spec, context, horizon, args.condition)
    system = build_system(context, protocol, horizon, keep_slices=False, keep_preds=False)
    emit(
        {
            "command": "build",
            "protocol": protocol.name,
            "horizon": horizon,
            "commitments": len(system.commitments),
            "slice_sizes": system.sizes,
            "points_total": sum(system.sizes),
        },
        args,
        "build.json",
    )
    return 0


def cmd_implement(args) -> int:
    s = load_scenario(args.scenario)
    horizon = args.horizon or s.get("horizon", DEFAULT_HORIZON)
    context = make_context(s)
    condition = args.condition or "bn-cbn"
    impl = construct_implementation(context, condition, horizon, keep_slices=False, keep_preds=False)
    table = serialize_protocol(impl.protocol, impl.system, context.values)
    ok, witness = verify_implementation(context, impl.protocol, condition, horizon)
    if args.output:
        outdir = Path(args.output)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "protocol_table.txt").write_text(table + "\n")
    emit(
        {
            "command": "implement",
            "condition": condition,
            "horizon": horizon,
            "table_entries": len(table.splitlines()),
            "verified": ok,
            "verification_witness": witness,
            "slice_sizes": impl.system.sizes,
        },
        args,
        "implement.json",
    )
    return 0


def cmd_check_sba(args) -> int:
    s = load_scenario(args.scenario)
    horizon = args.horizon or s.get("horizon", DEFAULT_HORIZON)
    context = make_context(s)
    spec = _protocol_spec(s, args.protocol)
    protocol = make_protocol(spec, context, horizon, args.condition)
    verdict = check_sba(context, protocol, horizon, selector=_selector(args.selector))
    emit(
        {"command": "check-sba", "protocol": protocol.name, **verdict.describe()},
        args,
        "check_sba.json",
    )
    return 0


def cmd_check_formula(args) -> int:
    s = load_scenario(args.scenario)
    horizon = args.horizon or s.get("horizon", DEFAULT_HORIZON)
    context = make_context(s)
    spec = _protocol_spec(s, args.protocol)
    protocol = make_protocol(spec, context, horizon, args.condition)
    texts = args.formula or s.get("formulas", [])
    if not texts:
        raise SchemaError("no formulas given (use --formula or the scenario's formulas list)", "$.formulas")
    from .speccheck import check_valid

    results = []
    for text in texts:
        formula = parse_formula(text, context.n, context.values)
        ok, cex = check_valid(context, protocol, horizon, formula)
        results.append({"formula": text, "valid_up_to_horizon": ok, "counterexample": cex})
    emit(
        {"command": "check-formula", "protocol": protocol.name, "horizon": horizon, "results": results},
        args,
        "check_formula.json",
    )
    return 0


def cmd_compare(args) -> int:
    s = load_scenario(args.scenario)
    horizon = args.horizon or s.get("horizon", DEFAULT_HORIZON)
    context = make_context(s)
    pairs = [tuple(args.pair)] if args.pair else [tuple(p) for p in s.get("comparisons", [])]
    if not pairs:
        raise SchemaError("no comparison pairs (use --pair or the scenario's comparisons)", "$.comparisons")
    cache: dict = {}

    def proto(pid):
        if pid not in cache:
            cache[pid] = make_protocol(_protocol_spec(s, pid), context, horizon, args.condition)
        return cache[pid]

    reports = []
    for (a, b) in pairs:
        rep = dominance(
            context, proto(a), proto(b), horizon, agents_mode=args.agents_mode, method=args.method
        )
        reports.append({"pair": [a, b], **rep.describe()})
    emit({"command": "compare", "horizon": horizon, "reports": reports}, args, "compare.json")
    return 0


def cmd_witness(args) -> int:
    s = load_scenario(args.scenario)
    horizon = args.horizon or s.get("horizon", DEFAULT_HORIZON)
    context = make_context(s)
    w = s.get("witness")
    _expect(isinstance(w, dict), "scenario needs a witness block for this command", "$.witness")
    time_m = w.get("time", 2)
    _expect(isinstance(time_m, int) and 0 <= time_m <= horizon, "witness time outside horizon", "$.witness.time")
    spec = _protocol_spec(s, w.get("protocol"))
    protocol = make_protocol(spec, context, horizon, args.condition)
    system = build_system(context, protocol, time_m, keep_slices=True, keep_preds=True)
    inits = tuple(context.value_index(v) for v in w.get("inits", [s["values"][0]] * context.n))
    _expect(len(inits) == context.n, "witness inits must list one value per agent", "$.witness.inits")
    commitment = _commitment_from(w.get("commitment", {"faulty": []}), context, horizon)
    behaviors = _behaviors_from(w.get("drops", []), time_m)
    run = simulate_run(context, protocol, inits, commitment, behaviors)
    sl, idx = system.locate(run, time_m)
    from .epistemic import Exists, holds as ep_holds, witness_chain

    target_value = context.value_index(w.get("target_value", s["values"][-1]))
    sel = _selector(w.get("selector", "N"))
    chain = witness_chain(sl, idx, sel, lambda q: not ep_holds(sl, q, Exists(target_value)))
    payload = {
        "command": "witness",
        "time": time_m,
        "selector": w.get("selector", "N"),
        "target": f"no agent started with {s['values'][target_value]}",
        "found": chain is not None,
        "chain_length": None if chain is None else len(chain) - 1,
        "chain": None
        if chain is None
        else [{"point": sl.describe_point(q), "linking_agent": None if a is None else a + 1} for q, a in chain],
    }
    if chain is not None and args.output:
        outdir = Path(args.output)
        outdir.mkdir(parents=True, exist_ok=True)
        caption = f"chain to a run without value {s['values'][target_value]}"
        (outdir / "witness.dot").write_text(dot.render_chain(system, sl, chain, caption))
    emit(payload, args, "witness.json")
    return 0


def _commitment_from(blob: dict, context: Context, horizon: int) -> Commitment:
    faulty = frozenset(int(a) - 1 for a in blob.get("faulty", []))
    _expect(all(0 <= a < context.n for a in faulty), "faulty agents outside 1..n", "$.witness.commitment")
    crashes = []
    for c in blob.get("crashes", []):
        receivers = c.get("receivers")
        crashes.append(
            CrashPlan(
                int(c["agent"]) - 1,
                int(c.get("round", horizon + 1)),
                None if receivers is None else frozenset(int(j) - 1 for j in receivers),
            )
        )
    return Commitment(faulty=faulty, crashes=tuple(sorted(crashes)))


def _behaviors_from(drops: list, horizon: int) -> list[RoundBehavior]:
    by_round: dict[int, dict] = {}
    for d in drops:
        k = int(d["round"])
        _expect(1 <= k <= horizon, "drop round outside 1..horizon", "$.witness.drops")
        entry = by_round.setdefault(k, {"t": set(), "r": set()})
        for (i, j) in d.get("sender_side", []):
            entry["t"].add((int(i) - 1, int(j) - 1))
        for (i, j) in d.get("receiver_side", []):
            entry["r"].add((int(i) - 1, int(j) - 1))
    return [
        RoundBehavior(
            frozenset(by_round.get(k + 1, {"t": set()})["t"]),
            frozenset(by_round.get(k + 1, {"r": set()}).get("r", set())),
            frozenset(),
        )
        for k in range(horizon)
    ]


def cmd_counterexample(args) -> int:
    horizon = args.horizon or 5
    report = reproduce_counterexample(horizon=horizon, jobs=args.jobs)
    chains = report.pop("_chains")
    system = report.pop("_system")
    sl2 = report.pop("_slice2")
    if args.output:
        outdir = Path(args.output)
        outdir.mkdir(parents=True, exist_ok=True)
        for value, chain in sorted(chains.items()):
            if chain is not None:
                caption = f"from the failure-free run to a run without value {value}"
                (outdir / f"chain_missing_{value}.dot").write_text(
                    dot.render_chain(system, sl2, chain, caption)
                )
    emit(report, args, "counterexample.json")
    if not report["ok"]:
        sys.stderr.write("counterexample reproduction FAILED; see the facts list\n")
        return 1
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sbamc",
        description="Simulate and model-check simultaneous agreement protocols under benign failures.",
    )
    parser.add_argument("--jobs", type=int, default=1, help="worker cap (the engine currently runs one)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario_required=True):
        if scenario_required:
            p.add_argument("--scenario", required=True, help="path to a scenario JSON file")
        p.add_argument("--horizon", type=int, default=None, help="override the scenario horizon")
        p.add_argument("--output", default=None, help="directory for JSON/DOT artifacts")
        p.add_argument(
            "--condition",
            choices=sorted(CONDITIONS),
            default=None,
            help="decision condition for constructed protocols",
        )

    p = sub.add_parser("build", help="generate a system and report slice statistics")
    common(p)
    p.add_argument("--protocol", default=None, help="protocol id from the scenario (default: first)")
    p.set_defaults(fn=cmd_build)

    p = sub.add_parser("implement", help="construct and verify a decision-program implementation")
    common(p)
    p.set_defaults(fn=cmd_implement)

    p = sub.add_parser("check-sba", help="check the agreement specification")
    common(p)
    p.add_argument("--protocol", default=None)
    p.add_argument("--selector", choices=("N", "A"), default="N")
    p.set_defaults(fn=cmd_check_sba)

    p = sub.add_parser("check-formula", help="check validity of formulas up to the horizon")
    common(p)
    p.add_argument("--protocol", default=None)
    p.add_argument("--formula", action="append", default=None, help="prefix-syntax formula (repeatable)")
    p.set_defaults(fn=cmd_check_formula)

    p = sub.add_parser("compare", help="dominance comparison of protocol pairs")
    common(p)
    p.add_argument("--pair", nargs=2, metavar=("A", "B"), default=None)
    p.add_argument("--agents-mode", choices=("all", "nonfaulty-only"), default="all")
    p.add_argument("--method", choices=("auto", "witness", "exhaustive"), default="auto")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("witness", help="emit an indistinguishability chain as DOT")
    common(p)
    p.set_defaults(fn=cmd_witness)

    p = sub.add_parser("counterexample", help="reproduce the packaged four-agent separation scenario")
    common(p, scenario_required=False)
    p.set_defaults(fn=cmd_counterexample)

    args = parser.parse_args(argv)
    if args.jobs < 1:
        parser.error("--jobs must be at least 1")
    try:
        return args.fn(args)
    except SchemaError as exc:
        sys.stderr.write(f"schema error: {exc}\n")
        return 2
    except FormulaError as exc:
        sys.stderr.write(f"formula error: {exc}\n")
        return 2
    except IntegrityError as exc:
        sys.stderr.write(f"integrity error: {exc}\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
