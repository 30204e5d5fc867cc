"""Homonym-reachability analyses of a protocol's agent rules.

Everything here looks only at rules ``(x, x) -> (y, z)`` between two agents
holding the same state, plus the color map (with ``k = 2``, color 0 is red
and color 1 is blue).  Sink-state condition 3 is the one place that needs the
model checker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import total_ordering

from .core import Configuration, ProtocolSpec, is_symmetric_protocol
from .errors import NotBipartition, StateOutsideQstar

INF = math.inf

SQUIGGLE = "squiggle"
STAR_SQUIGGLE = "star_squiggle"
SYM_SQUIGGLE = "sym_squiggle"

RED, BLUE = 0, 1


def _closure(states, succ):
    reach = {}
    for q in states:
        seen = {q}
        stack = [q]
        while stack:
            x = stack.pop()
            for y in succ[x]:
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        reach[q] = frozenset(seen)
    return reach


def homonym_successors(spec: ProtocolSpec, kind: str = SQUIGGLE, sym_interpretation: str = "strict"):
    """One-step homonym successors of every agent state.

    ``squiggle`` follows either output of ``(x, x) -> (y, z)``.  The symmetric
    relation follows only rules of the shape ``(x, x) -> (y, y)`` under the
    strict reading; ``sym_interpretation="loose"`` makes it coincide with
    ``squiggle``.
    """
    succ = {}
    for x in spec.agent_states:
        y, z = spec.homonym_rule(x)
        if kind == SYM_SQUIGGLE and sym_interpretation == "strict":
            succ[x] = frozenset({y}) if y == z else frozenset()
        else:
            succ[x] = frozenset({y, z})
    return succ


@dataclass(frozen=True)
class HomonymRelation:
    kind: str
    states: tuple
    succ: dict  # one-step successors (empty for star_squiggle)
    reach: dict  # state -> frozenset of related states

    def holds(self, q, q2) -> bool:
        return q2 in self.reach[q]

    def pairs(self):
        return sorted((q, q2) for q in self.states for q2 in self.reach[q])


def homonym_reach(spec: ProtocolSpec, kind: str = SQUIGGLE, sym_interpretation: str = "strict") -> HomonymRelation:
    states = tuple(spec.agent_states)
    if kind == STAR_SQUIGGLE:
        base = homonym_reach(spec, SQUIGGLE)
        reach = {}
        for q in states:
            common = set(states)
            for x in base.reach[q]:
                common &= base.reach[x]
            reach[q] = frozenset(common)
        return HomonymRelation(kind, states, {}, reach)
    if kind not in (SQUIGGLE, SYM_SQUIGGLE):
        raise ValueError(f"unknown relation kind {kind!r}")
    succ = homonym_successors(spec, kind, sym_interpretation)
    return HomonymRelation(kind, states, succ, _closure(states, succ))


# ---------------------------------------------------------------------------
# blue states and distance to red

@dataclass
class BlueClassification:
    q_blue: frozenset
    q_red: frozenset
    q_bc: frozenset
    q_nbc: frozenset
    dtr: dict


def _shortest_homonym_distance(spec, states, goal, domain):
    """Least fixpoint of d(s) = 0 on goal, min(d(y), d(z)) + 1 on domain, inf elsewhere."""
    d = {s: (0 if s in goal else INF) for s in states}
    changed = True
    while changed:
        changed = False
        for s in states:
            if s in goal or s not in domain:
                continue
            y, z = spec.homonym_rule(s)
            v = min(d[y], d[z]) + 1
            if v < d[s]:
                d[s] = v
                changed = True
    return d


def dtr(spec: ProtocolSpec) -> dict:
    """Distance to red of every agent state (``inf`` when no red state is reachable)."""
    return classify_blue_states(spec).dtr


def classify_blue_states(spec: ProtocolSpec) -> BlueClassification:
    if spec.k != 2:
        raise NotBipartition(f"blue/red classification needs k=2, got k={spec.k}")
    rel = homonym_reach(spec, SQUIGGLE)
    blue = frozenset(s for s in spec.agent_states if spec.colors[s] == BLUE)
    red = frozenset(s for s in spec.agent_states if spec.colors[s] == RED)
    bc = frozenset(p for p in blue if rel.reach[p] & red)
    nbc = blue - bc
    dtr = _shortest_homonym_distance(spec, spec.agent_states, red, bc)
    return BlueClassification(blue, red, bc, nbc, dtr)


# ---------------------------------------------------------------------------
# Q* and the potential

@dataclass
class QStarResult:
    p_star: int
    q_star_set: frozenset
    dtq: dict  # (state, target) -> distance

    def distance(self, s, target):
        return self.dtq[(s, target)]


def qstar_for(spec: ProtocolSpec, p_star) -> QStarResult:
    """Build the homonym-closed set generated by ``p_star`` (needs ``p* *~> p*``)."""
    sq = homonym_reach(spec, SQUIGGLE)
    star = homonym_reach(spec, STAR_SQUIGGLE)
    if not star.holds(p_star, p_star):
        raise ValueError(f"state {p_star} is not robustly self-reachable")
    qset = sq.reach[p_star]
    if qset != star.reach[p_star]:
        raise AssertionError("the two descriptions of the closed set disagree")
    for p in qset:
        y, z = spec.homonym_rule(p)
        if y not in qset or z not in qset:
            raise AssertionError(f"homonym rule of {p} leaves the closed set")
    dtq = {}
    for target in spec.agent_states:
        if target in qset:
            d = _shortest_homonym_distance(spec, spec.agent_states, {target}, qset)
        else:
            d = {s: (0 if s == target else INF) for s in spec.agent_states}
        for s, v in d.items():
            dtq[(s, target)] = v
    return QStarResult(p_star, qset, dtq)


def find_qstar(spec: ProtocolSpec):
    """First non-convertible blue state ``p`` with ``p *~> p``, as a QStarResult, or None."""
    cls = classify_blue_states(spec)
    star = homonym_reach(spec, STAR_SQUIGGLE)
    for p in spec.agent_states:
        if p in cls.q_nbc and star.holds(p, p):
            return qstar_for(spec, p)
    return None


@total_ordering
class Potential:
    """Multiset of distances; more copies of the smallest differing value ranks lower."""

    def __init__(self, values):
        self.values = tuple(sorted(values))

    def _counts(self):
        out = {}
        for v in self.values:
            out[v] = out.get(v, 0) + 1
        return out

    def __eq__(self, other):
        return isinstance(other, Potential) and self.values == other.values

    def __hash__(self):
        return hash(self.values)

    def __lt__(self, other):
        a, b = self._counts(), other._counts()
        for v in sorted(set(a) | set(b)):
            if a.get(v, 0) != b.get(v, 0):
                return a.get(v, 0) > b.get(v, 0)
        return False

    def __repr__(self):
        return f"Potential({list(self.values)})"


def phi(config, target, qstar: QStarResult) -> Potential:
    agents = config.agents if isinstance(config, Configuration) else tuple(config)
    for s in agents:
        if s not in qstar.q_star_set:
            raise StateOutsideQstar(f"state {s} is outside {sorted(qstar.q_star_set)}")
    return Potential(qstar.dtq[(s, target)] for s in agents)


# ---------------------------------------------------------------------------
# loop states and sinks

def loop_states(spec: ProtocolSpec, sym_interpretation: str = "strict") -> frozenset:
    """States that return to themselves through a non-empty symmetric homonym chain."""
    succ = homonym_successors(spec, SYM_SQUIGGLE, sym_interpretation)
    reach = _closure(spec.agent_states, succ)
    out = set()
    for q in spec.agent_states:
        if any(q in reach[y] for y in succ[q]):
            out.add(q)
    return frozenset(out)


@dataclass
class SinkVerdict:
    kind: str  # sink_state | sink_pair | none | multiple_loop_states
    states: tuple = ()
    evidence: dict = field(default_factory=dict)

    @property
    def confirmed(self) -> bool:
        return self.kind in ("sink_state", "sink_pair") and bool(self.evidence.get("cond3"))


def _recurrent(spec, n, states, budget):
    from . import mc

    graph = mc.build_reach_graph(spec, n, budget=budget)
    return {s: mc.state_recurrence(graph, spec, s, "weak") for s in states}


def find_sink(spec: ProtocolSpec, check_ns=(), *, require_symmetric: bool = True,
              sym_interpretation: str = "strict", budget: int = 5_000_000) -> SinkVerdict:
    """Look for a sink state or a sink pair among the loop states.

    Condition 3 (no weakly-fair execution keeps visiting the candidate) is
    checked by model checking only at the population sizes in ``check_ns``
    that the definition covers; the evidence lists which sizes were used.
    """
    if require_symmetric and not is_symmetric_protocol(spec):
        raise ValueError("sink analysis expects a symmetric protocol (override with require_symmetric=False "
                         "or --allow-asymmetric)")
    loops = sorted(loop_states(spec, sym_interpretation))
    rel = homonym_reach(spec, SYM_SQUIGGLE, sym_interpretation)
    ev = {"loop_states": loops}
    if len(loops) == 1:
        (m,) = loops
        ev["cond1"] = spec.homonym_rule(m) == (m, m)
        ev["cond2"] = all(rel.holds(s, m) for s in spec.agent_states)
        ns = [n for n in check_ns if 1 <= n <= spec.P - 1]
        rec = {n: _recurrent(spec, n, [m], budget)[m] for n in ns}
        ev.update(cond3=not any(rec.values()), cond3_ns=ns, recurrence={str(n): v for n, v in rec.items()})
        kind = "sink_state" if ev["cond1"] and ev["cond2"] else "none"
        return SinkVerdict(kind, (m,), ev)
    if len(loops) == 2:
        m1, m2 = loops
        fixed = spec.homonym_rule(m1) == (m1, m1) and spec.homonym_rule(m2) == (m2, m2)
        swap = spec.homonym_rule(m1) == (m2, m2) and spec.homonym_rule(m2) == (m1, m1)
        ev["cond1"] = fixed or swap
        ev["cond1_form"] = "fixed" if fixed else "swap" if swap else None
        ev["cond2"] = all(rel.holds(s, m1) or rel.holds(s, m2) for s in spec.agent_states)
        ns = [n for n in check_ns if 1 <= n <= spec.P - 2]
        rec = {n: _recurrent(spec, n, [m1, m2], budget) for n in ns}
        ev.update(cond3=not any(v for r in rec.values() for v in r.values()), cond3_ns=ns,
                  recurrence={str(n): {str(s): v for s, v in r.items()} for n, r in rec.items()})
        kind = "sink_pair" if ev["cond1"] and ev["cond2"] else "none"
        return SinkVerdict(kind, (m1, m2), ev)
    return SinkVerdict("multiple_loop_states", tuple(loops), ev)


def trace_state_support(trace, from_step: int = 0) -> frozenset:
    """Agent states occurring in configuration ``from_step`` or any later one."""
    if not 0 <= from_step <= len(trace.steps):
        raise ValueError(f"step {from_step} outside trace of length {len(trace.steps)}")
    out = set()
    for t, config in enumerate(trace.configurations()):
        if t >= from_step:
            out.update(config.agents)
    return frozenset(out)


# ---------------------------------------------------------------------------

def _inf(v):
    return None if v == INF else v


def analysis_report(spec: ProtocolSpec, *, relations=True, blue=True, qstar=True,
                    sink=False, check_ns=(), sym_interpretation="strict",
                    require_symmetric=True) -> dict:
    """JSON-ready report; infinite distances are written as ``null``."""
    out = {"protocol": spec.name, "P": spec.P, "k": spec.k,
           "symmetric": is_symmetric_protocol(spec), "sym_interpretation": sym_interpretation}
    if relations:
        for kind in (SQUIGGLE, STAR_SQUIGGLE, SYM_SQUIGGLE):
            rel = homonym_reach(spec, kind, sym_interpretation)
            out[kind] = {str(q): sorted(rel.reach[q]) for q in spec.agent_states}
        out["loop_states"] = sorted(loop_states(spec, sym_interpretation))
    if spec.k == 2 and blue:
        cls = classify_blue_states(spec)
        out["blue"] = {"q_blue": sorted(cls.q_blue), "q_red": sorted(cls.q_red),
                       "q_bc": sorted(cls.q_bc), "q_nbc": sorted(cls.q_nbc),
                       "dtr": {str(s): _inf(v) for s, v in cls.dtr.items()}}
    if spec.k == 2 and qstar:
        res = find_qstar(spec)
        if res is None:
            out["qstar"] = None
        else:
            out["qstar"] = {"p_star": res.p_star, "q_star_set": sorted(res.q_star_set),
                            "dtq": {f"{s}->{t}": _inf(res.dtq[(s, t)])
                                    for s in sorted(res.q_star_set) for t in sorted(res.q_star_set)}}
    if sink:
        v = find_sink(spec, check_ns, require_symmetric=require_symmetric, sym_interpretation=sym_interpretation)
        out["sink"] = {"kind": v.kind, "states": list(v.states), "confirmed": v.confirmed,
                       "evidence": v.evidence}
    return out
