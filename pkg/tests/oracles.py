"""Independent reference implementations used to cross-check the package.

Nothing here imports kpartition.mc or kpartition.analysis: graphs are built
with plain dicts on top of core.step, relations by explicit path
enumeration, distances by breadth-first search.
"""

from __future__ import annotations

import itertools
import random
from collections import deque

from kpartition.core import Configuration, step, validate_protocol


# -- protocol generators ------------------------------------------------------

def toy_protocol(rules, states, colors=None, k=2, P=None, bs_rules=(), bs_states=(-1,),
                 bs_initial=-1, name="toy"):
    """Small explicit protocol; omitted pairs are null."""
    colors = colors if colors is not None else {s: i % k for i, s in enumerate(states)}
    raw = {
        "name": name, "P": P if P is not None else len(states), "k": k,
        "agent_states": list(states), "colors": colors,
        "bs": {"states": list(bs_states)}, "bs_initial": bs_initial,
        "rules": [[list(a), list(b)] for a, b in list(rules) + list(bs_rules)],
    }
    return validate_protocol(raw, default_null=True)


def random_protocol(rng: random.Random, num_states: int, k: int = 2, P: int | None = None,
                    homonym_only=False, bs_states=1):
    """Random deterministic protocol on states 0..num_states-1 with a small explicit BS."""
    states = list(range(num_states))
    bs = [100 + b for b in range(bs_states)]
    rules = []
    for p in states:
        for q in states:
            if homonym_only and p != q:
                continue
            rules.append(((p, q), (rng.choice(states), rng.choice(states))))
    bs_rules = []
    if not homonym_only:
        for b in bs:
            for p in states:
                bs_rules.append(((b, p), (rng.choice(bs), rng.choice(states))))
                bs_rules.append(((p, b), (rng.choice(states), rng.choice(bs))))
    colors = {s: rng.randrange(k) for s in states}
    for c in range(min(k, num_states)):
        colors[states[c]] = c
    return toy_protocol(rules, states, colors, k=k, P=P or num_states, bs_rules=bs_rules,
                        bs_states=bs, bs_initial=bs[0])


# -- homonym relations --------------------------------------------------------

def brute_squiggle(spec, symmetric_only=False):
    """q ~> q' by enumerating every homonym path of length < |Q_p| from q."""
    out = {}
    L = len(spec.agent_states)

    def outs(x):
        y, z = spec.delta[(x, x)]
        if symmetric_only:
            return [y] if y == z else []
        return [y, z]

    for q in spec.agent_states:
        reached = {q}
        paths = [[q]]
        for _ in range(L - 1):
            nxt = []
            for path in paths:
                for y in outs(path[-1]):
                    nxt.append(path + [y])
                    reached.add(y)
            paths = nxt
        out[q] = reached
    return out


def brute_star(spec):
    sq = brute_squiggle(spec)
    return {q: {q2 for q2 in spec.agent_states if all(q2 in sq[x] for x in sq[q])}
            for q in spec.agent_states}


def bfs_distance(spec, start, goals, allowed):
    """Fewest homonym interactions to turn ``start`` into a goal, staying inside ``allowed``.

    A homonym interaction on x offers either output; this is the shortest-path
    reading of the min-over-outputs-plus-one distance.
    """
    if start in goals:
        return 0
    if start not in allowed:
        return float("inf")
    seen = {start}
    frontier = deque([(start, 0)])
    while frontier:
        x, d = frontier.popleft()
        for y in set(spec.delta[(x, x)]):
            if y in goals:
                return d + 1
            if y in allowed and y not in seen:
                seen.add(y)
                frontier.append((y, d + 1))
    return float("inf")


# -- explicit graphs ----------------------------------------------------------

def pair_list(n):
    return [(i, j) for i in range(n + 1) for j in range(n + 1) if i != j]


def build_graph(spec, n, bs_initial=None):
    """Forward closure from designated BS state x all agent vectors; dict adjacency."""
    b = spec.bs_initial if bs_initial is None else bs_initial
    bss = [b] if b is not None else list(spec.bs_states)
    init = [Configuration(bb, tuple(v)) for bb in bss
            for v in itertools.product(spec.agent_states, repeat=n)]
    succ = {}
    todo = list(init)
    seen = set(init)
    pairs = pair_list(n)
    while todo:
        c = todo.pop()
        edges = []
        for i, j in pairs:
            d = step(c, i, j, spec)
            edges.append(((min(i, j), max(i, j)), d))
            if d not in seen:
                seen.add(d)
                todo.append(d)
        succ[c] = edges
    return init, succ


def reach_from(succ, start, allowed=None):
    seen = {start}
    todo = [start]
    while todo:
        c = todo.pop()
        for _, d in succ[c]:
            if d not in seen and (allowed is None or d in allowed):
                seen.add(d)
                todo.append(d)
    return seen


def colors_of(spec, c):
    return tuple(spec.colors[s] for s in c.agents)


def balanced(spec, c):
    counts = [0] * spec.k
    for s in c.agents:
        counts[spec.colors[s]] += 1
    return max(counts) - min(counts) <= 1


def stable_set(spec, succ):
    out = set()
    for c in succ:
        if not balanced(spec, c):
            continue
        col = colors_of(spec, c)
        if all(colors_of(spec, d) == col for d in reach_from(succ, c)):
            out.add(c)
    return out


def weak_verdict(spec, n, bs_initial=None):
    """True iff every weakly-fair execution reaches a stable configuration.

    A bad execution exists iff some non-stable node v lies on closed walks,
    inside non-stable nodes, that together use every pair label: for each
    label there must be an edge x -> y with that label such that v reaches x
    and y reaches v without leaving the non-stable nodes.  Node v must also be
    reachable from an initial node through non-stable nodes.
    """
    init, succ = build_graph(spec, n, bs_initial)
    stable = stable_set(spec, succ)
    bad = set(succ) - stable
    labels = {(min(i, j), max(i, j)) for i, j in pair_list(n)}
    fwd = {c: reach_from(succ, c, bad) for c in bad}
    reach_init = set()
    for c in init:
        if c in bad:
            reach_init |= fwd[c]
    for v in reach_init:
        comp = {x for x in fwd[v] if v in fwd[x]}
        covered = {lab for x in comp for lab, y in succ[x] if y in comp}
        if covered >= labels:
            return False
    return True


def global_verdict(spec, n, bs_initial=None):
    """True iff every bottom SCC reachable from an initial node is stable."""
    init, succ = build_graph(spec, n, bs_initial)
    stable = stable_set(spec, succ)
    for v in succ:
        r = reach_from(succ, v)
        if all(v in reach_from(succ, x) for x in r) and v not in stable:
            return False
    return True
