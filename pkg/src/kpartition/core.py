"""Population-protocol model: states, pairwise transitions, configurations.

Participants are numbered ``0..n`` where ``0`` is the base station (BS) and
``1..n`` are the (anonymous) agents.  Agent states are small integers.  BS
states are either integers from an explicit finite set, or tuples of register
values when the BS is described by bounded integer registers.
"""

from __future__ import annotations

import enum
import hashlib
import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Mapping

import numpy as np

from .errors import BadIdentity, ProtocolValidationError

BS = 0


class TransitionClass(enum.Enum):
    NULL = "null"
    SYMMETRIC = "symmetric"
    ASYMMETRIC = "asymmetric"


def classify_transition(p, q, p2, q2) -> TransitionClass:
    if p == p2 and q == q2:
        return TransitionClass.NULL
    if p == q and p2 != q2:
        return TransitionClass.ASYMMETRIC
    return TransitionClass.SYMMETRIC


@dataclass(frozen=True)
class Tables:
    """Index-based transition tables used by the vectorised model checker."""

    agent_index: dict
    bs_index: dict
    aa: np.ndarray  # (S, S, 2) agent initiator, agent responder
    ba: np.ndarray  # (B, S, 2) BS initiator -> (bs', agent')
    ab: np.ndarray  # (S, B, 2) agent initiator -> (agent', bs')
    colors: np.ndarray  # (S,)


@dataclass(frozen=True, eq=False)
class ProtocolSpec:
    agent_states: tuple
    bs_states: tuple
    delta: Mapping
    colors: Mapping
    k: int
    P: int
    bs_initial: Any = None
    bs_registers: tuple | None = None  # ((name, lo, hi), ...) or None
    name: str = "custom"
    state_names: Mapping = field(default_factory=dict)

    # -- membership -------------------------------------------------------
    @cached_property
    def _agent_set(self):
        return frozenset(self.agent_states)

    @cached_property
    def _bs_set(self):
        return frozenset(self.bs_states)

    def is_agent_state(self, s) -> bool:
        return s in self._agent_set

    def is_bs_state(self, s) -> bool:
        return s in self._bs_set

    @property
    def initialized(self) -> bool:
        return self.bs_initial is not None

    def color(self, s) -> int:
        return self.colors[s]

    def rule(self, p, q):
        return self.delta[(p, q)]

    def agent_rules(self):
        """Yield ``((p, q), (p2, q2))`` for every agent-agent ordered pair."""
        for p in self.agent_states:
            for q in self.agent_states:
                yield (p, q), self.delta[(p, q)]

    def homonym_rule(self, x):
        return self.delta[(x, x)]

    # -- BS state (de)serialisation -----------------------------------------
    def bs_to_json(self, b):
        if self.bs_registers is None:
            return b
        return {name: v for (name, _, _), v in zip(self.bs_registers, b)}

    def bs_from_json(self, obj):
        if self.bs_registers is None:
            return obj
        if isinstance(obj, Mapping):
            return tuple(int(obj[name]) for name, _, _ in self.bs_registers)
        if isinstance(obj, (list, tuple)):
            return tuple(int(v) for v in obj)
        if len(self.bs_registers) == 1:
            return (int(obj),)
        raise ValueError(f"cannot read BS state {obj!r}")

    def register(self, b, name="M"):
        names = [r[0] for r in self.bs_registers]
        return b[names.index(name)]

    # -- compiled tables ------------------------------------------------------
    @cached_property
    def tables(self) -> Tables:
        ai = {s: i for i, s in enumerate(self.agent_states)}
        bi = {b: i for i, b in enumerate(self.bs_states)}
        S, B = len(ai), len(bi)
        aa = np.empty((S, S, 2), dtype=np.int64)
        ba = np.empty((B, S, 2), dtype=np.int64)
        ab = np.empty((S, B, 2), dtype=np.int64)
        for p, x in ai.items():
            for q, y in ai.items():
                p2, q2 = self.delta[(p, q)]
                aa[x, y] = ai[p2], ai[q2]
            for b, z in bi.items():
                b2, p2 = self.delta[(b, p)]
                ba[z, x] = bi[b2], ai[p2]
                p2, b2 = self.delta[(p, b)]
                ab[x, z] = ai[p2], bi[b2]
        colors = np.array([self.colors[s] for s in self.agent_states], dtype=np.int64)
        return Tables(ai, bi, aa, ba, ab, colors)

    def to_raw(self) -> dict:
        """Serialise to the protocol JSON format (all rules explicit)."""
        rules = []
        for (x, y), (x2, y2) in self.delta.items():
            if (x, y) == (x2, y2):
                continue
            rules.append([[self._st_json(x), self._st_json(y)],
                          [self._st_json(x2), self._st_json(y2)]])
        raw = {
            "name": self.name,
            "P": self.P,
            "k": self.k,
            "agent_states": list(self.agent_states),
            "colors": {str(s): c for s, c in self.colors.items()},
            "rules": rules,
            "default_null": True,
        }
        if self.bs_registers is None:
            raw["bs"] = {"states": list(self.bs_states)}
        else:
            raw["bs"] = {"registers": {n: [lo, hi] for n, lo, hi in self.bs_registers}}
        raw["bs_initial"] = None if self.bs_initial is None else self.bs_to_json(self.bs_initial)
        return raw

    def _st_json(self, s):
        return self.bs_to_json(s) if self.is_bs_state(s) else s

    @cached_property
    def digest(self) -> str:
        blob = json.dumps(self.to_raw(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_bs_initial(self, b) -> "ProtocolSpec":
        return ProtocolSpec(self.agent_states, self.bs_states, self.delta, self.colors,
                            self.k, self.P, b, self.bs_registers, self.name, self.state_names)


@dataclass(frozen=True)
class Configuration:
    bs: Any
    agents: tuple

    @property
    def n(self) -> int:
        return len(self.agents)

    def state_of(self, i):
        if i == BS:
            return self.bs
        return self.agents[i - 1]

    def replace(self, i, s) -> "Configuration":
        if i == BS:
            return Configuration(s, self.agents)
        agents = list(self.agents)
        agents[i - 1] = s
        return Configuration(self.bs, tuple(agents))


def make_configuration(spec: ProtocolSpec, bs, agents) -> Configuration:
    agents = tuple(agents)
    if not 1 <= len(agents) <= spec.P:
        raise ValueError(f"population size {len(agents)} outside 1..{spec.P}")
    for s in agents:
        if not spec.is_agent_state(s):
            raise ValueError(f"{s!r} is not an agent state")
    if not spec.is_bs_state(bs):
        raise ValueError(f"{bs!r} is not a BS state")
    return Configuration(bs, agents)


# ---------------------------------------------------------------------------
# validation

def _as_state(spec_bs_registers, bs_set, obj):
    if isinstance(obj, Mapping):
        if spec_bs_registers is None:
            raise ValueError(f"register-style BS state {obj!r} in explicit BS model")
        return tuple(int(obj[name]) for name, _, _ in spec_bs_registers)
    if isinstance(obj, list):
        return tuple(obj)
    return obj


def validate_protocol(raw: Mapping, default_null: bool = False) -> ProtocolSpec:
    """Check a parsed protocol description and build a :class:`ProtocolSpec`.

    Every admissible ordered pair (agent/agent, BS/agent, agent/BS) needs
    exactly one rule.  With ``default_null`` omitted pairs become null
    transitions instead of ``MissingRule`` errors.  All problems are
    collected and reported together.
    """
    errors = []
    try:
        P = int(raw["P"])
        k = int(raw["k"])
        agent_states = tuple(int(s) for s in raw["agent_states"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolValidationError([("Malformed", f"bad header: {exc!r}")]) from None
    if P < 1 or k < 1:
        errors.append(("Malformed", "P and k must be positive"))
    if len(set(agent_states)) != len(agent_states) or not agent_states:
        errors.append(("Malformed", "agent_states must be non-empty and distinct"))

    bs = raw.get("bs") or {"states": [-1]}
    registers = None
    if "registers" in bs:
        registers = tuple((name, int(lo), int(hi)) for name, (lo, hi) in bs["registers"].items())
        ranges = [range(lo, hi + 1) for _, lo, hi in registers]
        bs_states = tuple(itertools.product(*ranges))
    else:
        bs_states = tuple(int(b) for b in bs["states"])
        clash = set(bs_states) & set(agent_states)
        if clash:
            errors.append(("StateClash", f"states {sorted(clash)} are both BS and agent states"))
    if not bs_states:
        errors.append(("Malformed", "BS state set is empty"))
    agent_set, bs_set = set(agent_states), set(bs_states)

    colors_raw = raw.get("colors", {})
    colors = {}
    for key, c in colors_raw.items():
        colors[int(key)] = int(c)
    for s in agent_states:
        if s not in colors:
            errors.append(("ColorGap", f"state {s} has no color"))
        elif not 0 <= colors[s] < k:
            errors.append(("ColorGap", f"state {s} has color {colors[s]} outside 0..{k - 1}"))

    delta = {}
    for entry in raw.get("rules", []):
        try:
            (x, y), (x2, y2) = entry
            x, y, x2, y2 = (_as_state(registers, bs_set, v) for v in (x, y, x2, y2))
        except (TypeError, ValueError) as exc:
            errors.append(("Malformed", f"rule {entry!r}: {exc}"))
            continue
        kinds = tuple("a" if v in agent_set else "b" if v in bs_set else "?" for v in (x, y, x2, y2))
        if "?" in kinds:
            errors.append(("Malformed", f"rule {entry!r} mentions an unknown state"))
            continue
        if kinds[0] == kinds[1] == "b":
            errors.append(("Malformed", f"rule {entry!r} is a BS-BS rule"))
            continue
        if kinds[:2] != kinds[2:]:
            errors.append(("StateClash", f"rule {entry!r} moves a state between BS and agent sets"))
            continue
        if (x, y) in delta:
            errors.append(("DuplicateRule", f"pair {(x, y)!r} has more than one rule"))
            continue
        delta[(x, y)] = (x2, y2)

    pairs = [(p, q) for p in agent_states for q in agent_states]
    pairs += [(b, p) for b in bs_states for p in agent_states]
    pairs += [(p, b) for p in agent_states for b in bs_states]
    missing = [pq for pq in pairs if pq not in delta]
    if missing:
        if default_null:
            for pq in missing:
                delta[pq] = pq
        else:
            for pq in missing[:20]:
                errors.append(("MissingRule", f"no rule for ordered pair {pq!r}"))
            if len(missing) > 20:
                errors.append(("MissingRule", f"... and {len(missing) - 20} more"))

    bs_initial = raw.get("bs_initial")
    if bs_initial is not None:
        bs_initial = _as_state(registers, bs_set, bs_initial)
        if registers is not None and not isinstance(bs_initial, tuple):
            bs_initial = (int(bs_initial),)
        if bs_initial not in bs_set:
            errors.append(("Malformed", f"bs_initial {bs_initial!r} is not a BS state"))

    if errors:
        raise ProtocolValidationError(errors)
    names = {int(k_): v for k_, v in raw.get("state_names", {}).items()}
    return ProtocolSpec(agent_states=agent_states, bs_states=bs_states, delta=delta,
                        colors=colors, k=k, P=P, bs_initial=bs_initial,
                        bs_registers=registers, name=str(raw.get("name", "custom")),
                        state_names=names)


# ---------------------------------------------------------------------------
# semantics

def step(config: Configuration, i: int, j: int, spec: ProtocolSpec) -> Configuration:
    """Let participant ``i`` (initiator) interact with ``j`` (responder)."""
    n = len(config.agents)
    if i == j or not (0 <= i <= n and 0 <= j <= n):
        raise BadIdentity(f"invalid interaction ({i}, {j}) for n={n}")
    p, q = config.state_of(i), config.state_of(j)
    p2, q2 = spec.delta[(p, q)]
    if p2 == p and q2 == q:
        return config
    agents = list(config.agents)
    bs = config.bs
    if i == BS:
        bs = p2
    else:
        agents[i - 1] = p2
    if j == BS:
        bs = q2
    else:
        agents[j - 1] = q2
    if spec.bs_registers is not None and bs is not config.bs:
        _check_registers(spec, bs)
    return Configuration(bs, tuple(agents))


def _check_registers(spec, bs):
    from .errors import RegisterOverflow

    for (name, lo, hi), v in zip(spec.bs_registers, bs):
        if not lo <= v <= hi:
            raise RegisterOverflow(f"register {name}={v} outside [{lo}, {hi}]")


def is_symmetric_protocol(spec: ProtocolSpec) -> bool:
    """True iff no agent-agent rule is asymmetric.

    BS rules are not inspected: the BS is distinguishable from agents, so the
    homonym symmetry constraint has nothing to say about it.
    """
    return all(classify_transition(p, q, p2, q2) is not TransitionClass.ASYMMETRIC
               for (p, q), (p2, q2) in spec.agent_rules())


def group_counts(config: Configuration, spec: ProtocolSpec) -> tuple:
    counts = [0] * spec.k
    for s in config.agents:
        counts[spec.colors[s]] += 1
    return tuple(counts)


def is_balanced(counts) -> bool:
    return max(counts) - min(counts) <= 1


def canonicalize(config: Configuration) -> Configuration:
    return Configuration(config.bs, tuple(sorted(config.agents)))


def ordered_pairs(n: int):
    """All admissible ordered ``(initiator, responder)`` pairs for ``n`` agents."""
    return [(i, j) for i in range(n + 1) for j in range(n + 1) if i != j]


def unordered_pairs(n: int):
    return [(i, j) for i in range(n + 1) for j in range(i + 1, n + 1)]


def is_silent(config: Configuration, spec: ProtocolSpec) -> bool:
    for i, j in ordered_pairs(config.n):
        p, q = config.state_of(i), config.state_of(j)
        if spec.delta[(p, q)] != (p, q):
            return False
    return True
