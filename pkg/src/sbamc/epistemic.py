"""Epistemic formulas and their evaluation over one time layer.

Synchrony confines every indistinguishability relation to a single layer, so
group operators close within a slice.  Common-belief style operators are
evaluated through the reflexive-transitive closure of the one-step group
relations: the symmetric variant (both endpoints must contain the linking
agent) via connected components, the knowledge variant (only the source
point must) via directed marking.

Surface syntax is prefix notation with 1-based agents, e.g.::

    (implies (decides 1 0) (B N 1 (CB N (exists 0))))

Selectors are ``N`` (committed-nonfaulty), ``A`` (no fault so far), ``Agt``,
or an explicit ``(agents 1 3)``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from .errors import FormulaError
from .kernel import NOOP, decide_code

# ----- indexical selectors -----


@dataclass(frozen=True)
class Selector:
    kind: str
    members: frozenset = frozenset()

    def render(self) -> str:
        if self.kind == "set":
            return "(agents " + " ".join(str(i + 1) for i in sorted(self.members)) + ")"
        return self.kind


N = Selector("N")
A = Selector("A")
AGT = Selector("Agt")


def explicit(agents) -> Selector:
    return Selector("set", frozenset(agents))


# ----- formula AST -----


@dataclass(frozen=True)
class Formula:
    def render(self, values) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class TrueF(Formula):
    def render(self, values):
        return "true"


@dataclass(frozen=True)
class Decides(Formula):
    agent: int
    value: int

    def render(self, values):
        return f"(decides {self.agent + 1} {values[self.value]})"


@dataclass(frozen=True)
class DecidesAll(Formula):
    sel: Selector
    value: int

    def render(self, values):
        return f"(decides-all {self.sel.render()} {values[self.value]})"


@dataclass(frozen=True)
class Decided(Formula):
    agent: int

    def render(self, values):
        return f"(decided {self.agent + 1})"


@dataclass(frozen=True)
class InSel(Formula):
    agent: int
    sel: Selector

    def render(self, values):
        return f"(in {self.agent + 1} {self.sel.render()})"


@dataclass(frozen=True)
class SubsetSel(Formula):
    small: Selector
    big: Selector

    def render(self, values):
        return f"(subset {self.small.render()} {self.big.render()})"


@dataclass(frozen=True)
class EmptySel(Formula):
    sel: Selector

    def render(self, values):
        return f"(empty {self.sel.render()})"


@dataclass(frozen=True)
class Exists(Formula):
    value: int

    def render(self, values):
        return f"(exists {values[self.value]})"


@dataclass(frozen=True)
class Not(Formula):
    sub: Formula

    def render(self, values):
        return f"(not {self.sub.render(values)})"


@dataclass(frozen=True)
class And(Formula):
    subs: tuple

    def render(self, values):
        return "(and " + " ".join(s.render(values) for s in self.subs) + ")"


@dataclass(frozen=True)
class Or(Formula):
    subs: tuple

    def render(self, values):
        return "(or " + " ".join(s.render(values) for s in self.subs) + ")"


@dataclass(frozen=True)
class Implies(Formula):
    left: Formula
    right: Formula

    def render(self, values):
        return f"(implies {self.left.render(values)} {self.right.render(values)})"


@dataclass(frozen=True)
class K(Formula):
    agent: int
    sub: Formula

    def render(self, values):
        return f"(K {self.agent + 1} {self.sub.render(values)})"


@dataclass(frozen=True)
class B(Formula):
    sel: Selector
    agent: int
    sub: Formula

    def render(self, values):
        return f"(B {self.sel.render()} {self.agent + 1} {self.sub.render(values)})"


@dataclass(frozen=True)
class EK(Formula):
    sel: Selector
    sub: Formula

    def render(self, values):
        return f"(EK {self.sel.render()} {self.sub.render(values)})"


@dataclass(frozen=True)
class EB(Formula):
    sel: Selector
    sub: Formula

    def render(self, values):
        return f"(EB {self.sel.render()} {self.sub.render(values)})"


@dataclass(frozen=True)
class CK(Formula):
    sel: Selector
    sub: Formula

    def render(self, values):
        return f"(CK {self.sel.render()} {self.sub.render(values)})"


@dataclass(frozen=True)
class CB(Formula):
    sel: Selector
    sub: Formula

    def render(self, values):
        return f"(CB {self.sel.render()} {self.sub.render(values)})"


# ----- parsing -----


def _tokenize(text: str) -> list[str]:
    return text.replace("(", " ( ").replace(")", " ) ").split()


def _read(tokens: list[str], pos: int):
    if pos >= len(tokens):
        raise FormulaError("unexpected end of formula")
    tok = tokens[pos]
    if tok == "(":
        out = []
        pos += 1
        while pos < len(tokens) and tokens[pos] != ")":
            node, pos = _read(tokens, pos)
            out.append(node)
        if pos >= len(tokens):
            raise FormulaError("missing closing parenthesis")
        return out, pos + 1
    if tok == ")":
        raise FormulaError("unexpected closing parenthesis")
    return tok, pos + 1


def parse_formula(text: str, n: int, values) -> Formula:
    """Parse the documented prefix syntax; agents are 1-based in the surface."""
    tokens = _tokenize(text)
    tree, pos = _read(tokens, 0)
    if pos != len(tokens):
        raise FormulaError("trailing tokens after formula")
    return _build(tree, n, values)


def _agent(tok, n: int) -> int:
    try:
        i = int(tok)
    except (TypeError, ValueError):
        raise FormulaError(f"expected an agent index, got {tok!r}") from None
    if not 1 <= i <= n:
        raise FormulaError(f"agent index {i} outside 1..{n}")
    return i - 1


def _value(tok, values) -> int:
    for vi, v in enumerate(values):
        if str(v) == str(tok):
            return vi
    raise FormulaError(f"{tok!r} is not a scenario value (values: {list(values)})")


def _selector(node, n: int) -> Selector:
    if isinstance(node, str):
        if node == "N":
            return N
        if node == "A":
            return A
        if node == "Agt":
            return AGT
        raise FormulaError(f"unknown selector {node!r}")
    if node and node[0] == "agents":
        return explicit(_agent(t, n) for t in node[1:])
    raise FormulaError(f"bad selector {node!r}")


def _build(node, n: int, values) -> Formula:
    if isinstance(node, str):
        if node == "true":
            return TrueF()
        if node == "false":
            return Not(TrueF())
        raise FormulaError(f"bare token {node!r} is not a formula")
    if not node:
        raise FormulaError("empty formula")
    head, *rest = node
    if head == "decides" and len(rest) == 2:
        return Decides(_agent(rest[0], n), _value(rest[1], values))
    if head == "decides-all" and len(rest) == 2:
        return DecidesAll(_selector(rest[0], n), _value(rest[1], values))
    if head == "decided" and len(rest) == 1:
        return Decided(_agent(rest[0], n))
    if head == "in" and len(rest) == 2:
        return InSel(_agent(rest[0], n), _selector(rest[1], n))
    if head == "subset" and len(rest) == 2:
        return SubsetSel(_selector(rest[0], n), _selector(rest[1], n))
    if head == "empty" and len(rest) == 1:
        return EmptySel(_selector(rest[0], n))
    if head == "exists" and len(rest) == 1:
        return Exists(_value(rest[0], values))
    if head == "not" and len(rest) == 1:
        return Not(_build(rest[0], n, values))
    if head == "and":
        return And(tuple(_build(r, n, values) for r in rest))
    if head == "or":
        return Or(tuple(_build(r, n, values) for r in rest))
    if head == "implies" and len(rest) == 2:
        return Implies(_build(rest[0], n, values), _build(rest[1], n, values))
    if head == "K" and len(rest) == 2:
        return K(_agent(rest[0], n), _build(rest[1], n, values))
    if head == "B" and len(rest) == 3:
        return B(_selector(rest[0], n), _agent(rest[1], n), _build(rest[2], n, values))
    if head in ("EK", "EB", "CK", "CB") and len(rest) == 2:
        cls = {"EK": EK, "EB": EB, "CK": CK, "CB": CB}[head]
        return cls(_selector(rest[0], n), _build(rest[1], n, values))
    raise FormulaError(f"cannot parse {node!r}")


# ----- evaluation over a slice -----


class SliceEvaluator:
    """Memoized truth vectors for formulas over one slice."""

    def __init__(self, sl):
        self.sl = sl
        self.sys = sl.system
        self.n = self.sys.n
        self._vectors: dict = {}
        self._sel_masks: dict = {}
        self._components: dict = {}
        self._exists_masks: dict = {}

    # -- selector membership, one agent mask per point --

    def selector_masks(self, sel: Selector) -> list[int]:
        got = self._sel_masks.get(sel)
        if got is not None:
            return got
        sl, sys = self.sl, self.sys
        if sel.kind == "N":
            nmask = sys.commit_nmask
            got = [nmask[ci] for ci in sl.commit]
        elif sel.kind == "A":
            full = sys.agent_mask
            got = [full & ~f for f in sl.flagged]
        elif sel.kind == "Agt":
            got = [sys.agent_mask] * len(sl)
        else:
            m = 0
            for i in sel.members:
                m |= 1 << i
            got = [m] * len(sl)
        self._sel_masks[sel] = got
        return got

    def _exists_vec(self, vi: int) -> list[bool]:
        got = self._exists_masks.get(vi)
        if got is None:
            sys = self.sys
            table = [
                vi in sys.unpack_inits(ip) for ip in range(sys.num_values**sys.n)
            ]
            got = [table[ip] for ip in self.sl.initsp]
            self._exists_masks[vi] = got
        return got

    # -- symmetric closure components (both endpoints contain the linking agent) --

    def components(self, sel: Selector) -> list[int]:
        got = self._components.get(sel)
        if got is not None:
            return got
        sl = self.sl
        size = len(sl)
        masks = self.selector_masks(sel)
        parent = list(range(size))

        def find(x):
            root = x
            while parent[root] != root:
                root = parent[root]
            while parent[x] != root:
                parent[x], x = root, parent[x]
            return root

        for i in range(self.n):
            bit = 1 << i
            for members in sl.buckets(i).values():
                prev = -1
                for idx in members:
                    if masks[idx] & bit:
                        if prev >= 0:
                            ra, rb = find(prev), find(idx)
                            if ra != rb:
                                parent[rb] = ra
                        prev = idx
        got = [find(x) for x in range(size)]
        self._components[sel] = got
        return got

    # -- generic vector evaluation --

    def vector(self, f: Formula) -> list[bool]:
        got = self._vectors.get(f)
        if got is None:
            got = self._compute(f)
            self._vectors[f] = got
        return got

    def holds(self, idx: int, f: Formula) -> bool:
        return self.vector(f)[idx]

    def _compute(self, f: Formula) -> list[bool]:
        sl = self.sl
        size = len(sl)
        n = self.n
        if isinstance(f, TrueF):
            return [True] * size
        if isinstance(f, Decides):
            if not sl.acts:
                raise FormulaError("slice has no actions; build the system with a protocol")
            code = decide_code(f.value)
            ag = f.agent
            return [acts[ag] == code for acts in sl.acts]
        if isinstance(f, DecidesAll):
            code = decide_code(f.value)
            masks = self.selector_masks(f.sel)
            out = []
            for idx in range(size):
                m = masks[idx]
                acts = sl.acts[idx]
                ok = True
                mm = m
                while mm:
                    i = (mm & -mm).bit_length() - 1
                    if acts[i] != code:
                        ok = False
                        break
                    mm &= mm - 1
                out.append(ok)
            return out
        if isinstance(f, Decided):
            bit = 1 << f.agent
            return [bool(d & bit) for d in sl.decided]
        if isinstance(f, InSel):
            bit = 1 << f.agent
            masks = self.selector_masks(f.sel)
            return [bool(m & bit) for m in masks]
        if isinstance(f, SubsetSel):
            small = self.selector_masks(f.small)
            big = self.selector_masks(f.big)
            return [not (s & ~b) for s, b in zip(small, big)]
        if isinstance(f, EmptySel):
            masks = self.selector_masks(f.sel)
            return [m == 0 for m in masks]
        if isinstance(f, Exists):
            return list(self._exists_vec(f.value))
        if isinstance(f, Not):
            return [not v for v in self.vector(f.sub)]
        if isinstance(f, And):
            vecs = [self.vector(s) for s in f.subs]
            return [all(v[i] for v in vecs) for i in range(size)]
        if isinstance(f, Or):
            vecs = [self.vector(s) for s in f.subs]
            return [any(v[i] for v in vecs) for i in range(size)]
        if isinstance(f, Implies):
            lv, rv = self.vector(f.left), self.vector(f.right)
            return [(not l) or r for l, r in zip(lv, rv)]
        if isinstance(f, K):
            sub = self.vector(f.sub)
            agg: dict = {}
            for cls, members in sl.buckets(f.agent).items():
                agg[cls] = all(sub[q] for q in members)
            return [agg[loc[f.agent]] for loc in sl.locals]
        if isinstance(f, B):
            sub = self.vector(f.sub)
            masks = self.selector_masks(f.sel)
            bit = 1 << f.agent
            agg = {}
            for cls, members in sl.buckets(f.agent).items():
                agg[cls] = all(sub[q] for q in members if masks[q] & bit)
            return [agg[loc[f.agent]] for loc in sl.locals]
        if isinstance(f, (EK, EB)):
            masks = self.selector_masks(f.sel)
            sub = self.vector(f.sub)
            per_agent: list[dict] = []
            for i in range(n):
                agg = {}
                if isinstance(f, EK):
                    for cls, members in sl.buckets(i).items():
                        agg[cls] = all(sub[q] for q in members)
                else:
                    bit = 1 << i
                    for cls, members in sl.buckets(i).items():
                        agg[cls] = all(sub[q] for q in members if masks[q] & bit)
                per_agent.append(agg)
            out = []
            for idx in range(size):
                m = masks[idx]
                loc = sl.locals[idx]
                ok = True
                while m:
                    i = (m & -m).bit_length() - 1
                    if not per_agent[i][loc[i]]:
                        ok = False
                        break
                    m &= m - 1
                out.append(ok)
            return out
        if isinstance(f, CB):
            sub = self.vector(f.sub)
            roots = self.components(f.sel)
            agg: dict = {}
            for idx in range(size):
                r = roots[idx]
                if not sub[idx]:
                    agg[r] = False
                elif r not in agg:
                    agg[r] = True
            return [agg[roots[idx]] for idx in range(size)]
        if isinstance(f, CK):
            return self._ck_vector(f.sel, self.vector(f.sub))
        raise FormulaError(f"unsupported formula node {type(f).__name__}")

    def _ck_vector(self, sel: Selector, sub: list[bool]) -> list[bool]:
        """Directed closure: false at points that can reach a refuting point."""
        sl = self.sl
        masks = self.selector_masks(sel)
        size = len(sl)
        marked = [not v for v in sub]
        queue = deque(idx for idx in range(size) if marked[idx])
        seen_buckets: set = set()
        locs = sl.locals
        while queue:
            q = queue.popleft()
            loc = locs[q]
            for i in range(self.n):
                bkey = (i, loc[i])
                if bkey in seen_buckets:
                    continue
                seen_buckets.add(bkey)
                bit = 1 << i
                for p in sl.buckets(i)[loc[i]]:
                    if not marked[p] and masks[p] & bit:
                        marked[p] = True
                        queue.append(p)
        return [not m for m in marked]


def evaluator(sl) -> SliceEvaluator:
    ev = getattr(sl, "_eval", None)
    if ev is None:
        ev = SliceEvaluator(sl)
        sl._eval = ev
    return ev


def holds(sl, idx: int, f: Formula) -> bool:
    """Truth of a formula at one point of a slice."""
    return evaluator(sl).holds(idx, f)


def cb_reachable(sl, idx: int, sel: Selector):
    """Closure of the symmetric group relation from a point, with predecessors.

    Returns (reachable index set, predecessor map); each predecessor entry is
    (previous point, linking agent).
    """
    ev = evaluator(sl)
    masks = ev.selector_masks(sel)
    n = sl.system.n
    preds: dict[int, Optional[tuple[int, int]]] = {idx: None}
    queue = deque([idx])
    seen_buckets: set = set()
    while queue:
        p = queue.popleft()
        mp = masks[p]
        loc = sl.locals[p]
        for i in range(n):
            bit = 1 << i
            if not mp & bit:
                continue
            bkey = (i, loc[i])
            if bkey in seen_buckets:
                continue
            seen_buckets.add(bkey)
            for q in sl.buckets(i)[loc[i]]:
                if q not in preds and masks[q] & bit:
                    preds[q] = (p, i)
                    queue.append(q)
    return set(preds), preds


def witness_chain(sl, idx: int, sel: Selector, target: Callable[[int], bool]):
    """Shortest chain through the symmetric group relation to a target point.

    Each element is (point index, linking agent into that point); the first
    element carries None.  Returns None when no reachable point satisfies
    the target, which itself certifies common belief of the negation.
    """
    if target(idx):
        return [(idx, None)]
    ev = evaluator(sl)
    masks = ev.selector_masks(sel)
    n = sl.system.n
    par: dict[int, Optional[tuple[int, int]]] = {idx: None}
    queue = deque([idx])
    seen_buckets: set = set()
    goal = None
    while queue and goal is None:
        p = queue.popleft()
        mp = masks[p]
        loc = sl.locals[p]
        for i in range(n):
            bit = 1 << i
            if not mp & bit:
                continue
            bkey = (i, loc[i])
            if bkey in seen_buckets:
                continue
            seen_buckets.add(bkey)
            for q in sl.buckets(i)[loc[i]]:
                if q not in par and masks[q] & bit:
                    par[q] = (p, i)
                    if target(q):
                        goal = q
                        break
                    queue.append(q)
            if goal is not None:
                break
    if goal is None:
        return None
    chain = []
    cur = goal
    while True:
        entry = par[cur]
        if entry is None:
            chain.append((cur, None))
            break
        chain.append((cur, entry[1]))
        cur = entry[0]
    chain.reverse()
    return chain
