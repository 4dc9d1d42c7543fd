"""Graphviz output for runs and witness chains.

Each chain element renders as one run diagram: a grid of (agent, time)
nodes with per-round message edges.  Dropped messages are drawn dashed;
delivered ones are left out to keep the diagram readable.  Consecutive
diagrams are linked by an edge labeled with the agent that cannot tell
the two runs apart.
"""
from __future__ import annotations

from .kernel import NOOP, RunPrefix


def _run_cluster(run: RunPrefix, tag: str, caption: str) -> list[str]:
    n = run.context.n
    values = run.context.values
    horizon = run.horizon
    out = [f"  subgraph cluster_{tag} {{", f'    label="{caption}";', "    color=gray60;"]
    for i in range(n):
        for k in range(horizon + 1):
            bits = [f"{i + 1}"]
            if k == 0:
                bits.append(f"init={values[run.inits[i]]}")
            act = run.actions[k][i]
            if act != NOOP:
                bits.append(f"decide {values[act - 1]}")
            label = " ".join(bits)
            shape = "box" if act != NOOP else "plaintext"
            out.append(f'    {tag}_a{i}_t{k} [label="{label}", shape={shape}];')
        for k in range(horizon):
            out.append(
                f"    {tag}_a{i}_t{k} -> {tag}_a{i}_t{k + 1} [color=gray80, arrowhead=none];"
            )
    for k, behavior in enumerate(run.behaviors):
        for (i, j) in sorted(behavior.tdrops | behavior.rdrops):
            out.append(
                f"    {tag}_a{i}_t{k} -> {tag}_a{j}_t{k + 1} [style=dashed, color=red, "
                f'label="round {k + 1}"];'
            )
    out.append("  }")
    return out


def render_chain(system, sl, chain, caption: str) -> str:
    """DOT text for a chain of (point index, linking agent) pairs in a slice."""
    lines = ["digraph witness {", "  rankdir=LR;", f'  label="{caption}";']
    runs = []
    for pos, (idx, _link) in enumerate(chain):
        run = system.run_to_point(sl, idx)
        runs.append(run)
        nmask = system.commit_nmask[sl.commit[idx]]
        members = ",".join(str(i + 1) for i in range(system.n) if nmask >> i & 1)
        inits = ",".join(str(system.context.values[v]) for v in run.inits)
        lines.extend(
            _run_cluster(run, f"r{pos}", f"run {pos}: inits=[{inits}] nonfaulty={{{members}}}")
        )
    for pos in range(1, len(chain)):
        agent = chain[pos][1]
        lines.append(
            f"  r{pos - 1}_a{agent}_t{sl.time} -> r{pos}_a{agent}_t{sl.time} "
            f'[style=bold, color=blue, constraint=false, label="agent {agent + 1}"];'
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def render_run(run: RunPrefix, caption: str = "run") -> str:
    lines = ["digraph run {", "  rankdir=LR;"]
    lines.extend(_run_cluster(run, "r0", caption))
    lines.append("}")
    return "\n".join(lines) + "\n"
