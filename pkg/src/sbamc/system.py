"""Layered construction of the deduplicated state space of a protocol.

A *point* at time m is a run prefix compressed to what every in-scope
observation can see: the agents' local states, the adversary commitment, the
cumulative semantic fault flags, the agents that have already decided, and
the initial value vector.  Two prefixes with equal compressions have
identical futures and identical epistemic surroundings, so each time layer
is a deduplicated set of points.

Omission adversaries branch per round; successors of a point are generated
receiver by receiver (each receiver's possible post-round states are few)
and recombined, which avoids touching the full (2^n)^|F| behavior product
point by point.
"""
from __future__ import annotations

import gc
from contextlib import contextmanager
from itertools import product
from typing import Callable, Iterator, Optional

from .errors import ConstructionError
from .exchanges import ReachabilitySample
from .failures import (
    GEN_OMIT,
    RECV_OMIT,
    SEND_OMIT,
    Commitment,
    enumerate_commitments,
    enumerate_round_behaviors,
)
from .kernel import NOOP, Context, RunPrefix, is_decide


@contextmanager
def gc_paused():
    """Suspend the cyclic collector during allocation-heavy layer sweeps."""
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was_enabled:
            gc.enable()


class Slice:
    """All points of one time layer, with lazily built local-state buckets."""

    __slots__ = (
        "system",
        "time",
        "index",
        "locals",
        "commit",
        "flagged",
        "decided",
        "initsp",
        "acts",
        "preds",
        "_buckets",
        "_eval",
    )

    def __init__(self, system, time):
        self.system = system
        self.time = time
        self.index: dict = {}
        self.locals: list[tuple[int, ...]] = []
        self.commit: list[int] = []
        self.flagged: list[int] = []
        self.decided: list[int] = []
        self.initsp: list[int] = []
        self.acts: list[tuple[int, ...]] = []
        self.preds: Optional[list] = None
        self._buckets: dict = {}
        self._eval = None

    def __len__(self) -> int:
        return len(self.locals)

    def buckets(self, agent: int) -> dict:
        """Point indexes grouped by the agent's local state id."""
        got = self._buckets.get(agent)
        if got is None:
            got = {}
            bget = got.get
            for idx, loc in enumerate(self.locals):
                sid = loc[agent]
                lst = bget(sid)
                if lst is None:
                    got[sid] = [idx]
                else:
                    lst.append(idx)
            self._buckets[agent] = got
        return got

    def nonfaulty_mask(self, idx: int) -> int:
        return self.system.commit_nmask[self.commit[idx]]

    def active_mask(self, idx: int) -> int:
        return self.system.agent_mask & ~self.flagged[idx]

    def point_key(self, idx: int):
        """Flat dedup key: local-state ids then commitment, flags, decided, inits."""
        return self.locals[idx] + (
            self.commit[idx],
            self.flagged[idx],
            self.decided[idx],
            self.initsp[idx],
        )

    def describe_point(self, idx: int) -> dict:
        sys = self.system
        ctx = sys.context
        return {
            "time": self.time,
            "locals": [
                ctx.exchange.describe_state(sys.state_of(i, sid), ctx.values)
                for i, sid in enumerate(self.locals[idx])
            ],
            "commitment": sys.commitments[self.commit[idx]].describe(),
            "flagged": _mask_agents(self.flagged[idx]),
            "decided": _mask_agents(self.decided[idx]),
            "inits": [ctx.values[vi] for vi in sys.unpack_inits(self.initsp[idx])],
            "actions": [
                "noop" if a == NOOP else f"decide({ctx.values[a - 1]})" for a in self.acts[idx]
            ]
            if self.acts
            else None,
        }


def _mask_agents(mask: int) -> list[int]:
    return [i + 1 for i in range(mask.bit_length()) if mask >> i & 1]


class System:
    """A built (or streaming) interpreted system for one protocol and context."""

    def __init__(
        self,
        context: Context,
        protocol,
        horizon: int,
        keep_preds: bool = True,
        preds_until: Optional[int] = None,
    ):
        self.context = context
        self.protocol = protocol
        self.horizon = horizon
        self.preds_until = preds_until
        self.n = context.n
        self.agent_mask = (1 << context.n) - 1
        self.num_values = len(context.values)
        self.commitments = enumerate_commitments(context.model, context.n, horizon)
        self.commit_index = {c: ci for ci, c in enumerate(self.commitments)}
        self.commit_fmask = [c.faulty_mask() for c in self.commitments]
        self.commit_nmask = [self.agent_mask & ~m for m in self.commit_fmask]
        self.keep_preds = keep_preds
        self.slices: list[Optional[Slice]] = []
        self.sizes: list[int] = []
        # Interning tables: per-agent local states and messages (0 reserved for no message).
        self._s2i = [dict() for _ in range(self.n)]
        self._i2s = [[] for _ in range(self.n)]
        self._m2i = [{None: 0} for _ in range(self.n)]
        self._i2m = [[None] for _ in range(self.n)]
        self._initpow = [self.num_values**i for i in range(self.n)]
        # Per-build caches; the sid-indexed tables extend lazily as states appear.
        self._act_by_sid: list[list[int]] = [[] for _ in range(self.n)]
        self._msg_by_sid: list[list[int]] = [[] for _ in range(self.n)]
        self._upd_cache: dict = {}
        self._decbits: dict = {}
        self._crash_meta: dict = {}

    # ----- interning -----

    def intern_state(self, agent: int, state) -> int:
        tab = self._s2i[agent]
        sid = tab.get(state)
        if sid is None:
            sid = len(self._i2s[agent])
            tab[state] = sid
            self._i2s[agent].append(state)
        return sid

    def state_id(self, agent: int, state) -> int:
        sid = self._s2i[agent].get(state)
        if sid is None:
            raise LookupError(f"state of agent {agent + 1} not reachable in this system: {state!r}")
        return sid

    def state_of(self, agent: int, sid: int):
        return self._i2s[agent][sid]

    def intern_msg(self, agent: int, msg) -> int:
        tab = self._m2i[agent]
        mid = tab.get(msg)
        if mid is None:
            mid = len(self._i2m[agent])
            tab[msg] = mid
            self._i2m[agent].append(msg)
        return mid

    def pack_inits(self, inits) -> int:
        p = 0
        for i, vi in enumerate(inits):
            p += vi * self._initpow[i]
        return p

    def unpack_inits(self, packed: int) -> tuple[int, ...]:
        out = []
        for _ in range(self.n):
            out.append(packed % self.num_values)
            packed //= self.num_values
        return tuple(out)

    # ----- layers -----

    def initial_slice(self) -> Slice:
        sl = Slice(self, 0)
        if self.keep_preds:
            sl.preds = []
        ctx = self.context
        for inits in product(range(self.num_values), repeat=self.n):
            sids = tuple(
                self.intern_state(i, ctx.exchange.initial_state(i, vi, self.n, self.num_values))
                for i, vi in enumerate(inits)
            )
            ip = self.pack_inits(inits)
            for ci in range(len(self.commitments)):
                key = sids + (ci, 0, 0, ip)
                sl.index[key] = len(sl.locals)
                sl.locals.append(sids)
                sl.commit.append(ci)
                sl.flagged.append(0)
                sl.decided.append(0)
                sl.initsp.append(ip)
                if sl.preds is not None:
                    sl.preds.append(None)
        return sl

    def _act_array(self, i: int) -> list[int]:
        """Dense sid-indexed action table for one agent, extended lazily."""
        arr = self._act_by_sid[i]
        states = self._i2s[i]
        if len(arr) < len(states):
            ex = self.context.exchange
            proto = self.protocol
            for sid in range(len(arr), len(states)):
                state = states[sid]
                a = proto.action(i, state)
                if a != NOOP and ex.is_crashed(state):
                    raise ConstructionError(
                        f"protocol maps the crashed state of agent {i + 1} to a non-noop action"
                    )
                arr.append(a)
        return arr

    def _msg_array(self, i: int) -> list[int]:
        """Dense sid-indexed message table for one agent; requires actions filled."""
        arr = self._msg_by_sid[i]
        states = self._i2s[i]
        if len(arr) < len(states):
            ex = self.context.exchange
            acts = self._act_array(i)
            for sid in range(len(arr), len(states)):
                arr.append(self.intern_msg(i, ex.send(i, states[sid], acts[sid])))
        return arr

    def fill_actions(self, sl: Slice) -> None:
        """Compute each point's action tuple; actions are local-state functions."""
        if sl.acts:
            return
        n = self.n
        arrs = [self._act_array(i) for i in range(n)]
        out = sl.acts
        if n == 4:
            a0, a1, a2, a3 = arrs
            out.extend((a0[s0], a1[s1], a2[s2], a3[s3]) for (s0, s1, s2, s3) in sl.locals)
        elif n == 3:
            a0, a1, a2 = arrs
            out.extend((a0[s0], a1[s1], a2[s2]) for (s0, s1, s2) in sl.locals)
        elif n == 2:
            a0, a1 = arrs
            out.extend((a0[s0], a1[s1]) for (s0, s1) in sl.locals)
        else:
            rng = range(n)
            out.extend(tuple(arrs[i][sids[i]] for i in rng) for sids in sl.locals)

    def _decide_bits(self, acts: tuple[int, ...]) -> int:
        bits = self._decbits.get(acts)
        if bits is None:
            bits = 0
            for i, a in enumerate(acts):
                if a > 0:
                    bits |= 1 << i
            self._decbits[acts] = bits
        return bits

    def _update(self, agent: int, sid: int, act: int, recv_ids: tuple[int, ...]) -> int:
        key = (agent, sid, recv_ids)
        got = self._upd_cache.get(key)
        if got is None:
            i2m = self._i2m
            received = tuple(i2m[i][recv_ids[i]] for i in range(self.n))
            st = self.context.exchange.update(agent, self._i2s[agent][sid], act, received)
            got = self.intern_state(agent, st)
            self._upd_cache[key] = got
        return got

    # ----- successor generation -----

    def step_slice(self, sl: Slice) -> Slice:
        model = self.context.model
        if model.crash_like:
            return self._step_crash(sl)
        return self._step_omission(sl)

    def _keep_preds_at(self, sl: Slice) -> bool:
        if sl.preds is None:
            return False
        return self.preds_until is None or sl.time + 1 <= self.preds_until

    def _step_omission(self, sl: Slice) -> Slice:
        n = self.n
        nxt = Slice(self, sl.time + 1)
        keep_preds = self._keep_preds_at(sl)
        if keep_preds:
            nxt.preds = []
        index = nxt.index
        out_locals = nxt.locals
        out_commit = nxt.commit
        out_flagged = nxt.flagged
        out_decided = nxt.decided
        out_initsp = nxt.initsp
        out_preds = nxt.preds
        cls_cache: dict = {}
        cls_get = cls_cache.get
        mode = self.context.model.kind
        msg_arrs = [self._msg_array(i) for i in range(n)]
        loc_arr = sl.locals
        commit_arr = sl.commit
        acts_arr = sl.acts
        flagged_arr = sl.flagged
        decided_arr = sl.decided
        initsp_arr = sl.initsp
        commit_fmask = self.commit_fmask
        decbits = self._decbits
        receiver_classes = self._receiver_classes
        quad = n == 4

        for idx in range(len(sl)):
            sids = loc_arr[idx]
            ci = commit_arr[idx]
            acts = acts_arr[idx]
            fmask = commit_fmask[ci]
            msgs = tuple(msg_arrs[i][sids[i]] for i in range(n))
            bits = decbits.get(acts)
            if bits is None:
                bits = 0
                for i, a in enumerate(acts):
                    if a > 0:
                        bits |= 1 << i
                decbits[acts] = bits
            dec2 = decided_arr[idx] | bits
            ip = initsp_arr[idx]
            base_flag = flagged_arr[idx]
            classes = []
            for j in range(n):
                ck = (j, sids[j], msgs, ci)
                cls = cls_get(ck)
                if cls is None:
                    cls = receiver_classes(j, sids[j], acts[j], msgs, fmask, mode)
                    cls_cache[ck] = cls
                classes.append(cls)
            if quad:
                c0, c1, c2, c3 = classes
                for s0, f0, r0 in c0:
                    fl0 = base_flag | f0
                    for s1, f1, r1 in c1:
                        fl1 = fl0 | f1
                        for s2, f2, r2 in c2:
                            fl2 = fl1 | f2
                            for s3, f3, r3 in c3:
                                key = (s0, s1, s2, s3, ci, fl2 | f3, dec2, ip)
                                if key not in index:
                                    index[key] = len(out_locals)
                                    out_locals.append((s0, s1, s2, s3))
                                    out_commit.append(ci)
                                    out_flagged.append(fl2 | f3)
                                    out_decided.append(dec2)
                                    out_initsp.append(ip)
                                    if keep_preds:
                                        out_preds.append(
                                            (idx, self._edge_mask((r0, r1, r2, r3)), 0)
                                        )
            else:
                for combo in product(*classes):
                    flg = base_flag
                    for entry in combo:
                        flg |= entry[1]
                    locs = tuple(entry[0] for entry in combo)
                    key = locs + (ci, flg, dec2, ip)
                    if key not in index:
                        index[key] = len(out_locals)
                        out_locals.append(locs)
                        out_commit.append(ci)
                        out_flagged.append(flg)
                        out_decided.append(dec2)
                        out_initsp.append(ip)
                        if keep_preds:
                            out_preds.append(
                                (idx, self._edge_mask(tuple(e[2] for e in combo)), 0)
                            )
        return nxt

    def _edge_mask(self, reps: tuple[int, ...]) -> int:
        n = self.n
        edges = 0
        for j, dm in enumerate(reps):
            while dm:
                low = dm & -dm
                i = low.bit_length() - 1
                edges |= 1 << (i * n + j)
                dm ^= low
        return edges

    def _receiver_classes(self, j, sid_j, act_j, msgs, fmask, mode):
        """Distinct (post-state, fault-contribution, representative-drop) triples."""
        n = self.n
        if mode == SEND_OMIT:
            droppable = [i for i in range(n) if fmask >> i & 1]
        elif mode == RECV_OMIT:
            droppable = list(range(n)) if fmask >> j & 1 else []
        else:  # general omissions: sender-side for faulty senders, receiver-side everywhere if j faulty
            droppable = [i for i in range(n) if (fmask >> i & 1) or (fmask >> j & 1)]
        out: dict = {}
        if mode == GEN_OMIT:
            recv_faulty = bool(fmask >> j & 1)
            options = []
            for i in droppable:
                opts = [(0, 0)]
                if fmask >> i & 1:
                    opts.append((1 << i, 1 << i))  # sender-side drop flags the sender
                if recv_faulty:
                    opts.append((1 << i, 1 << j))  # receiver-side drop flags the receiver
                options.append(opts)
            for combo in product(*options):
                recv = list(msgs)
                fl = 0
                dm = 0
                for (dropbit, flag) in combo:
                    if dropbit:
                        i = dropbit.bit_length() - 1
                        if recv[i]:
                            fl |= flag
                        recv[i] = 0
                        dm |= dropbit
                sid2 = self._update(j, sid_j, act_j, tuple(recv))
                key = (sid2, fl)
                if key not in out:
                    out[key] = dm
            return tuple((s, f, d) for (s, f), d in out.items())

        upd_cache = self._upd_cache
        sender_flags = mode == SEND_OMIT
        jbit = 1 << j
        for dm in range(1 << len(droppable)):
            recv = list(msgs)
            fl = 0
            dmask = 0
            for b, i in enumerate(droppable):
                if dm >> b & 1:
                    if recv[i]:
                        fl |= (1 << i) if sender_flags else jbit
                    recv[i] = 0
                    dmask |= 1 << i
            rk = (j, sid_j, tuple(recv))
            sid2 = upd_cache.get(rk)
            if sid2 is None:
                sid2 = self._update_slow(rk, act_j)
            key = (sid2, fl)
            if key not in out:
                out[key] = dmask
        return tuple((s, f, d) for (s, f), d in out.items())

    def _update_slow(self, rk, act: int) -> int:
        agent, sid, recv_ids = rk
        i2m = self._i2m
        received = tuple(i2m[i][recv_ids[i]] for i in range(self.n))
        st = self.context.exchange.update(agent, self._i2s[agent][sid], act, received)
        got = self.intern_state(agent, st)
        self._upd_cache[rk] = got
        return got

    def _step_crash(self, sl: Slice) -> Slice:
        n = self.n
        ex = self.context.exchange
        model = self.context.model
        round_num = sl.time + 1
        nxt = Slice(self, sl.time + 1)
        keep_preds = self._keep_preds_at(sl)
        if keep_preds:
            nxt.preds = []
        crashed_sid = [
            self.intern_state(i, ex.crashed_state(sl.time + 1)) for i in range(n)
        ]
        msg_arrs = [self._msg_array(i) for i in range(n)]
        metas = {}
        for idx in range(len(sl)):
            ci = sl.commit[idx]
            meta = metas.get(ci)
            if meta is None:
                mkey = (ci, round_num)
                meta = self._crash_meta.get(mkey)
                if meta is None:
                    behavior = next(
                        enumerate_round_behaviors(model, self.commitments[ci], round_num, n)
                    )
                    dropto = [0] * n
                    for (i, jj) in behavior.tdrops:
                        dropto[i] |= 1 << jj
                    crashset = 0
                    for a in behavior.crashes:
                        crashset |= 1 << a
                    edges = 0
                    for i in range(n):
                        dm = dropto[i]
                        for jj in range(n):
                            if dm >> jj & 1:
                                edges |= 1 << (i * n + jj)
                    meta = (tuple(dropto), crashset, edges)
                    self._crash_meta[mkey] = meta
                metas[ci] = meta
            dropto, crashset, edges = meta
            sids = sl.locals[idx]
            acts = sl.acts[idx]
            msgs = tuple(msg_arrs[i][sids[i]] for i in range(n))
            fl = sl.flagged[idx]
            for i in range(n):
                if dropto[i] and msgs[i]:
                    fl |= 1 << i
            upd_cache = self._upd_cache
            locs = []
            for j in range(n):
                recv = tuple(0 if dropto[i] >> j & 1 else msgs[i] for i in range(n))
                rk = (j, sids[j], recv)
                sid2 = upd_cache.get(rk)
                if sid2 is None:
                    sid2 = self._update_slow(rk, acts[j])
                if crashset >> j & 1:
                    if sid2 != crashed_sid[j]:
                        fl |= 1 << j
                        sid2 = crashed_sid[j]
                locs.append(sid2)
            locs = tuple(locs)
            decided2 = sl.decided[idx] | self._decide_bits(acts)
            key = locs + (ci, fl, decided2, sl.initsp[idx])
            if key not in nxt.index:
                nxt.index[key] = len(nxt.locals)
                nxt.locals.append(locs)
                nxt.commit.append(ci)
                nxt.flagged.append(fl)
                nxt.decided.append(decided2)
                nxt.initsp.append(sl.initsp[idx])
                if keep_preds:
                    nxt.preds.append((idx, edges, 0))
        return nxt

    # ----- lookup and iteration -----

    def slice(self, m: int) -> Slice:
        if not self.slices or self.slices[m] is None:
            raise LookupError("slices were not retained for this system")
        return self.slices[m]

    def iter_slices(self) -> Iterator[Slice]:
        for sl in self.slices:
            if sl is not None:
                yield sl

    def locate(self, run: RunPrefix, m: int) -> tuple[Slice, int]:
        """Find the point of an explicit run at time m in the retained slices."""
        sl = self.slice(m)
        ci = self.commit_index.get(run.commitment)
        if ci is None:
            raise LookupError("run's commitment is not a commitment of this system")
        g = run.states[m]
        sids = tuple(self.state_id(i, g.locals[i]) for i in range(self.n))
        key = sids + (ci, run.flagged_by(m), run.decided[m], self.pack_inits(run.inits))
        idx = sl.index.get(key)
        if idx is None:
            raise LookupError(f"run point at time {m} not found in the system")
        return sl, idx

    def run_to_point(self, sl: Slice, idx: int) -> RunPrefix:
        """Reconstruct one run prefix reaching the point, from stored predecessors."""
        from .failures import RoundBehavior  # local to avoid import noise at top
        from .kernel import simulate_run

        if sl.preds is None:
            raise LookupError("predecessors were not retained for this system")
        chain = []
        cur_sl, cur = sl, idx
        while cur_sl.time > 0:
            prev_idx, tedges, redges = cur_sl.preds[cur]
            chain.append((tedges, redges))
            cur_sl = self.slice(cur_sl.time - 1)
            cur = prev_idx
        chain.reverse()
        n = self.n
        behaviors = []
        for (tedges, redges) in chain:
            tdrops = frozenset(
                (i, j) for i in range(n) for j in range(n) if tedges >> (i * n + j) & 1
            )
            rdrops = frozenset(
                (i, j) for i in range(n) for j in range(n) if redges >> (i * n + j) & 1
            )
            crashes = frozenset()
            if self.context.model.perturbs_state:
                behavior = next(
                    enumerate_round_behaviors(
                        self.context.model, self.commitments[sl.commit[idx]], len(behaviors) + 1, n
                    )
                )
                crashes = behavior.crashes
            behaviors.append(RoundBehavior(tdrops, rdrops, crashes))
        inits = self.unpack_inits(sl.initsp[idx])
        return simulate_run(
            self.context, self.protocol, inits, self.commitments[sl.commit[idx]], behaviors
        )


def build_system(
    context: Context,
    protocol,
    horizon: int,
    keep_slices: bool = True,
    keep_preds: bool = True,
    layer_hook: Optional[Callable[[Slice], None]] = None,
) -> System:
    """Generate the system induced by the protocol, layer by layer.

    With ``keep_slices`` false only layer sizes are retained; the hook still
    sees every slice (with actions filled) before it is discarded.
    """
    sys = System(context, protocol, horizon, keep_preds=keep_preds and keep_slices)
    with gc_paused():
        sl = sys.initial_slice()
        for m in range(horizon + 1):
            sys.fill_actions(sl)
            sys.sizes.append(len(sl))
            if layer_hook is not None:
                layer_hook(sl)
            if keep_slices:
                sys.slices.append(sl)
            if m < horizon:
                sl = sys.step_slice(sl)
    return sys


def collect_reachability(context: Context, protocol, horizon: int) -> ReachabilitySample:
    """Reachable (state, delivered-vector) data for the exchange checkers."""
    sample = ReachabilitySample()
    sys = build_system(context, protocol, horizon, keep_slices=False, keep_preds=False)
    for i in range(context.n):
        for st in sys._i2s[i]:
            sample.states.add((i, st))
    for vi in range(len(context.values)):
        for i in range(context.n):
            sample.initials.add(
                (i, context.exchange.initial_state(i, vi, context.n, len(context.values)))
            )
    for (agent, sid, recv_ids) in sys._upd_cache:
        received = tuple(sys._i2m[i][recv_ids[i]] for i in range(context.n))
        sample.receptions.add((agent, sys._i2s[agent][sid], received))
    return sample
