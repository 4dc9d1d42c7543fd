"""Checks of the simultaneous-agreement specification and of formula schemas.

All checks stream over the generated layers, so systems never need to be
retained.  Results are horizon-bounded: a pass means "no violation at any
point up to the explored horizon", never an unconditional claim, since the
specification carries no termination clause.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .epistemic import A, Formula, N, Selector, evaluator
from .kernel import Context, decided_value_index, is_decide
from .kbp import StopBuild
from .system import build_system

UNIQUE_DECISION = "unique-decision"
SIMULTANEOUS_AGREEMENT = "simultaneous-agreement"
VALIDITY = "validity"
CLAUSES = (UNIQUE_DECISION, SIMULTANEOUS_AGREEMENT, VALIDITY)


@dataclass
class ClauseResult:
    passed: bool = True
    counterexample: Optional[dict] = None


@dataclass
class SpecVerdict:
    selector: str
    horizon: int
    clauses: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses.values())

    def describe(self) -> dict:
        return {
            "passed": self.passed,
            "selector": self.selector,
            "horizon": self.horizon,
            "clauses": {
                name: {"passed": c.passed, "counterexample": c.counterexample}
                for name, c in self.clauses.items()
            },
        }


def check_sba(
    context: Context,
    protocol,
    horizon: int,
    selector: Selector = N,
    unique_scope: str = "all",
) -> SpecVerdict:
    """Check unique decision, simultaneous agreement, and validity up to the horizon.

    Unique decision is checked for every agent by default; pass
    ``unique_scope="selector"`` to restrict it to selector members.
    """
    verdict = SpecVerdict(selector.render(), horizon, {name: ClauseResult() for name in CLAUSES})
    clauses = verdict.clauses
    n = context.n

    def note(clause: str, sl, idx: int, detail: str):
        res = clauses[clause]
        if res.passed:
            res.passed = False
            res.counterexample = {"detail": detail, "point": sl.describe_point(idx)}

    def hook(sl):
        ev = evaluator(sl)
        masks = ev.selector_masks(selector)
        sys = sl.system
        for idx in range(len(sl)):
            acts = sl.acts[idx]
            smask = masks[idx]
            decided = sl.decided[idx]
            deciders = 0
            val = -1
            mixed = False
            for i in range(n):
                a = acts[i]
                if not is_decide(a):
                    continue
                if decided >> i & 1 and (unique_scope == "all" or smask >> i & 1):
                    note(UNIQUE_DECISION, sl, idx, f"agent {i + 1} decides a second time")
                if smask >> i & 1:
                    deciders |= 1 << i
                    vi = decided_value_index(a)
                    if val < 0:
                        val = vi
                    elif val != vi:
                        mixed = True
                    inits = sys.unpack_inits(sl.initsp[idx])
                    if vi not in inits:
                        note(
                            VALIDITY,
                            sl,
                            idx,
                            f"agent {i + 1} decides {context.values[vi]!r}, nobody started with it",
                        )
            if deciders:
                if mixed:
                    note(SIMULTANEOUS_AGREEMENT, sl, idx, "selector members decide different values")
                elif deciders != smask:
                    lag = [i + 1 for i in range(n) if smask >> i & 1 and not deciders >> i & 1]
                    note(
                        SIMULTANEOUS_AGREEMENT,
                        sl,
                        idx,
                        f"selector members {lag} do not decide alongside the others",
                    )
        if not any(c.passed for c in clauses.values()):
            raise StopBuild

    try:
        build_system(context, protocol, horizon, keep_slices=False, keep_preds=False, layer_hook=hook)
    except StopBuild:
        pass
    return verdict


def check_valid(context: Context, protocol, horizon: int, formula: Formula):
    """Universal truth of a formula over all points up to the horizon."""
    box: dict = {}

    def hook(sl):
        vec = evaluator(sl).vector(formula)
        for idx, ok in enumerate(vec):
            if not ok:
                box["counterexample"] = sl.describe_point(idx)
                raise StopBuild

    try:
        build_system(context, protocol, horizon, keep_slices=False, keep_preds=False, layer_hook=hook)
    except StopBuild:
        pass
    return ("counterexample" not in box), box.get("counterexample")


def check_valid_on_system(system, formula: Formula):
    """Like check_valid but over an already retained system."""
    for sl in system.iter_slices():
        vec = evaluator(sl).vector(formula)
        for idx, ok in enumerate(vec):
            if not ok:
                return False, sl.describe_point(idx)
    return True, None


def check_sba_transfer(
    context: Context, protocol, horizon: int, small: Selector = N, big: Selector = A
) -> dict:
    """Compare the specification under two selectors, one contained in the other.

    For crash and omission models with t < n the two verdicts must agree;
    the report notes when that equivalence precondition fails instead of
    asserting anything.
    """
    v_small = check_sba(context, protocol, horizon, selector=small)
    v_big = check_sba(context, protocol, horizon, selector=big)
    precondition = context.model.t < context.n
    report = {
        "small": {"selector": small.render(), **v_small.describe()},
        "big": {"selector": big.render(), **v_big.describe()},
        "agree": v_small.passed == v_big.passed,
        "equivalence_asserted": precondition,
    }
    if not precondition:
        report["note"] = (
            "t = n allows an empty nonfaulty set; the selector equivalence is not asserted"
        )
    elif not report["agree"]:
        report["note"] = "verdicts disagree although the equivalence precondition holds"
    return report
