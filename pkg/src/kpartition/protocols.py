"""Builders for concrete uniform k-partition protocols with an initialized BS."""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import ProtocolSpec, validate_protocol
from .errors import EvenP, InvariantViolation, UnknownCandidate


@dataclass(frozen=True)
class BuiltProtocol:
    spec: ProtocolSpec
    provenance: dict
    expected_properties: dict = field(default_factory=dict)


def _bs_rule(m, s, m2, s2):
    """BS/agent rule in both orientations (the BS reacts the same either way)."""
    return [
        [[{"M": m}, s], [{"M": m2}, s2]],
        [[s, {"M": m}], [s2, {"M": m2}]],
    ]


def _finish(raw, builder, params, expected):
    spec = validate_protocol(raw, default_null=True)
    return BuiltProtocol(spec, {"builder": builder, **params}, expected)


def build_kpartition_asym(P: int, k: int) -> BuiltProtocol:
    """P-state asymmetric protocol.

    The BS hands out 0, 1, 2, ... through its counter ``M``: an agent whose
    state is at least ``M`` is overwritten with ``M`` and the counter
    advances.  Two agents sharing a state ``s < P-1`` push the initiator to
    ``s+1``.  Agent state ``s`` belongs to group ``s mod k``.
    """
    if P < 1 or k < 1:
        raise ValueError("P and k must be positive")
    rules = []
    for m in range(P + 1):
        for s in range(P):
            if m <= s:
                rules += _bs_rule(m, s, m + 1, m)
    for s in range(P - 1):
        rules.append([[s, s], [s + 1, s]])
    raw = {
        "name": f"kpartition_asym(P={P},k={k})",
        "P": P, "k": k,
        "agent_states": list(range(P)),
        "colors": {s: s % k for s in range(P)},
        "bs": {"registers": {"M": [0, P]}},
        "bs_initial": {"M": 0},
        "rules": rules,
    }
    return _finish(raw, "kpartition_asym", {"P": P, "k": k},
                   {"symmetric": False, "correct": True, "agent_states": P})


def build_bipartition_oddP(P: int) -> BuiltProtocol:
    """(P-1)-state bipartition variant for odd ``P``.

    Agent states are ``1..P-1`` and the counter starts at 1.  With ``P``
    agents the extra agent climbs to ``P-1``, which then holds two agents.
    """
    if P < 3 or P % 2 == 0:
        raise EvenP(f"P must be an odd integer >= 3, got {P}")
    rules = []
    for m in range(1, P + 1):
        for s in range(1, P):
            if m <= s:
                rules += _bs_rule(m, s, m + 1, m)
    for s in range(1, P - 1):
        rules.append([[s, s], [s + 1, s]])
    raw = {
        "name": f"bipartition_oddP(P={P})",
        "P": P, "k": 2,
        "agent_states": list(range(1, P)),
        "colors": {s: s % 2 for s in range(1, P)},
        "bs": {"registers": {"M": [1, P]}},
        "bs_initial": {"M": 1},
        "rules": rules,
    }
    return _finish(raw, "bipartition_oddP", {"P": P, "k": 2},
                   {"symmetric": False, "correct": "gate", "agent_states": P - 1})


def _sym_climb(P, k):
    rules = []
    for m in range(P + 2):
        for s in range(P + 1):
            if m <= s:
                rules += _bs_rule(m, s, m + 1, m)
    for s in range(P):
        rules.append([[s, s], [s + 1, s + 1]])
    return {
        "agent_states": list(range(P + 1)),
        "colors": {s: s % k for s in range(P + 1)},
        "bs": {"registers": {"M": [0, P + 1]}},
        "bs_initial": {"M": 0},
        "rules": rules,
    }


def _erase_monotone(P, k):
    # state 0 means "unnamed"; names 1..P map to groups (name-1) mod k
    rules = []
    for m in range(1, P + 1):
        rules += _bs_rule(m, 0, m + 1, m)
    for s in range(1, P + 1):
        rules.append([[s, s], [0, 0]])
    colors = {0: 0}
    colors.update({s: (s - 1) % k for s in range(1, P + 1)})
    return {
        "agent_states": list(range(P + 1)),
        "colors": colors,
        "bs": {"registers": {"M": [1, P + 1]}},
        "bs_initial": {"M": 1},
        "rules": rules,
    }


SYM_CANDIDATES = {
    "sym_climb": _sym_climb,
    "erase_monotone": _erase_monotone,
}


def build_kpartition_sym_candidate(name: str, P: int, k: int) -> BuiltProtocol:
    """A symmetric (P+1)-state candidate.

    Candidates carry no correctness promise; run them through
    :func:`kpartition.mc.verify_weakfair_convergence` before trusting them.
    """
    try:
        body = SYM_CANDIDATES[name](P, k)
    except KeyError:
        raise UnknownCandidate(name) from None
    raw = {"name": f"kpartition_sym_candidate:{name}(P={P},k={k})", "P": P, "k": k, **body}
    return _finish(raw, "kpartition_sym_candidate", {"candidate": name, "P": P, "k": k},
                   {"symmetric": True, "correct": "unknown", "agent_states": P + 1})


def build_builtin(descriptor: str, P: int, k: int = 2) -> BuiltProtocol:
    """Resolve the ``builtin`` shorthand of the protocol JSON format."""
    if descriptor == "kpartition_asym":
        return build_kpartition_asym(P, k)
    if descriptor == "bipartition_oddP":
        return build_bipartition_oddP(P)
    if descriptor.startswith("kpartition_sym_candidate:"):
        return build_kpartition_sym_candidate(descriptor.split(":", 1)[1], P, k)
    raise UnknownCandidate(descriptor)


# ---------------------------------------------------------------------------

@dataclass
class InvariantReport:
    ok: bool
    configurations_checked: int
    final_M: int
    silent: bool
    final_checked: bool


def check_algorithm1_invariants(trace, spec: ProtocolSpec) -> InvariantReport:
    """Check the counter invariants of the asymmetric protocol along a trace.

    For every configuration: each state below ``M`` is held by some agent and
    ``M <= n``.  Along every step ``M`` never decreases and an agent's state
    only goes down when the BS overwrites it.  If the trace ended silent under
    a fairness-enforcing scheduler, ``M == n`` and the agents hold exactly
    ``0..n-1``.  Raises :class:`InvariantViolation` at the first offending
    configuration index (0 is the initial configuration).
    """
    base = min(spec.agent_states)
    prev = None
    count = 0
    config = None
    for t, config in enumerate(trace.configurations()):
        M = spec.register(config.bs, "M")
        n = config.n
        present = set(config.agents)
        for s in range(base, M):
            if s not in present:
                raise InvariantViolation(t, f"M={M} but no agent holds state {s}")
        if M - base > n:
            raise InvariantViolation(t, f"M={M} exceeds n={n}")
        if prev is not None:
            rec = trace.steps[t - 1]
            if M < spec.register(prev.bs, "M"):
                raise InvariantViolation(t, "M decreased")
            for a, (old, new) in enumerate(zip(prev.agents, config.agents), start=1):
                if new < old and 0 not in (rec.i, rec.j):
                    raise InvariantViolation(t, f"agent {a} decreased without the BS")
        prev = config
        count += 1
    silent = trace.reason == "silent"
    final_checked = silent and trace.policy.fairness_enforcing
    M = spec.register(config.bs, "M")
    if final_checked:
        n = config.n
        if M - base != n:
            raise InvariantViolation(count - 1, f"silent with M={M} != n={n}")
        if sorted(config.agents) != list(range(base, base + n)):
            raise InvariantViolation(count - 1, f"silent with states {sorted(config.agents)}")
    return InvariantReport(True, count, M, silent, final_checked)
