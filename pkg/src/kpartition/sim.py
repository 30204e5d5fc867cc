"""Execution engine and interaction schedulers.

A run repeatedly asks a scheduler for an ordered pair ``(i, j)`` of
participants (``0`` is the BS) and applies :func:`kpartition.core.step`.
Runs are finite: they stop at silence, at a user predicate, or when the step
budget runs out, and the trace records which.
"""

from __future__ import annotations

import random
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import BS, Configuration, ProtocolSpec, is_silent, make_configuration, step, unordered_pairs
from .errors import PolicyInfeasible

UNIFORM_RANDOM = "uniform_random"
WEAKLY_FAIR = "weakly_fair_enforced"
SCRIPTED = "scripted"
PAIR_DOUBLING = "pair_doubling"
REDUCED = "reduced"


@dataclass(frozen=True)
class SchedulerPolicy:
    kind: str = UNIFORM_RANDOM
    seed: int = 0
    B: int | None = None
    script: tuple = ()
    pivot: int = 0
    inner: "SchedulerPolicy | None" = None
    exempt: frozenset = frozenset()

    @property
    def fairness_enforcing(self) -> bool:
        if self.kind == WEAKLY_FAIR:
            return True
        if self.kind in (PAIR_DOUBLING, REDUCED) and self.inner is not None:
            return self.inner.fairness_enforcing
        return False

    def to_json(self) -> dict:
        out = {"kind": self.kind, "seed": self.seed}
        if self.B is not None:
            out["B"] = self.B
        if self.script:
            out["script"] = [list(p) for p in self.script]
        if self.kind == PAIR_DOUBLING:
            out["pivot"] = self.pivot
        if self.inner is not None:
            out["inner"] = self.inner.to_json()
        if self.exempt:
            out["exempt"] = sorted(self.exempt)
        return out

    @classmethod
    def from_json(cls, obj) -> "SchedulerPolicy":
        inner = obj.get("inner")
        return cls(kind=obj["kind"], seed=obj.get("seed", 0), B=obj.get("B"),
                   script=tuple(tuple(p) for p in obj.get("script", ())),
                   pivot=obj.get("pivot", 0),
                   inner=cls.from_json(inner) if inner else None,
                   exempt=frozenset(obj.get("exempt", ())))


def weakly_fair(B, seed=0):
    return SchedulerPolicy(WEAKLY_FAIR, seed=seed, B=B)


def uniform_random(seed=0):
    return SchedulerPolicy(UNIFORM_RANDOM, seed=seed)


def scripted(pairs, seed=0):
    return SchedulerPolicy(SCRIPTED, seed=seed, script=tuple(tuple(p) for p in pairs))


def pair_doubling(pivot=0, inner=None, seed=0):
    return SchedulerPolicy(PAIR_DOUBLING, seed=seed, pivot=pivot, inner=inner or uniform_random(seed))


def reduced(inner=None, exempt=(), seed=0):
    return SchedulerPolicy(REDUCED, seed=seed, inner=inner or uniform_random(seed),
                           exempt=frozenset(exempt))


def parse_scheduler(text: str, seed: int = 0) -> SchedulerPolicy:
    """Parse CLI scheduler strings such as ``weakfair:B=10`` or ``random``."""
    kind, _, rest = text.partition(":")
    params = dict(item.split("=", 1) for item in rest.split(",") if item)
    if kind in ("random", UNIFORM_RANDOM):
        return uniform_random(seed)
    if kind in ("weakfair", WEAKLY_FAIR):
        return weakly_fair(int(params["B"]) if "B" in params else None, seed)
    if kind in ("doubling", PAIR_DOUBLING):
        inner = parse_scheduler(params["inner"].replace(";", ","), seed) if "inner" in params else None
        return pair_doubling(int(params.get("pivot", 0)), inner, seed)
    if kind in ("reduced", REDUCED):
        exempt = [int(x) for x in params.get("exempt", "").split("/") if x]
        return reduced(None, exempt, seed)
    if kind in ("scripted", SCRIPTED):
        pairs = [tuple(int(v) for v in p.split("-")) for p in params["pairs"].split("/")]
        return scripted(pairs, seed)
    raise ValueError(f"unknown scheduler {text!r}")


# ---------------------------------------------------------------------------
# schedulers

class _UniformRandom:
    def __init__(self, n, rng):
        self.n, self.rng = n, rng

    def choose(self, t, config):
        n = self.n
        i = self.rng.randrange(n + 1)
        j = self.rng.randrange(n)
        return i, j + (j >= i)

    def observe(self, t, i, j):
        pass


class _WeaklyFair:
    """Random pairs, except when an earliest-deadline choice is forced.

    Every unordered pair must appear in each window of ``B`` consecutive
    steps.  Pairs are kept in least-recently-served order; because every step
    serves one pair, checking the front of that order (and the count of
    never-served pairs) decides whether any slack is left.
    """

    def __init__(self, n, rng, B):
        self.pairs = unordered_pairs(n)
        L = len(self.pairs)
        if B is None:
            B = 2 * L
        if B < L:
            raise PolicyInfeasible(f"window B={B} smaller than the {L} unordered pairs")
        self.B, self.rng, self.n = B, rng, n
        self.last = {p: -1 for p in self.pairs}
        self.lru = OrderedDict((p, None) for p in self.pairs)
        self.unserved = L

    def choose(self, t, config):
        front = next(iter(self.lru))
        last = self.last[front]
        forced = (t >= self.B - self.unserved) if last < 0 else (t - last >= self.B)
        if forced:
            i, j = front
            return (i, j) if self.rng.random() < 0.5 else (j, i)
        n = self.n
        i = self.rng.randrange(n + 1)
        j = self.rng.randrange(n)
        return i, j + (j >= i)

    def observe(self, t, i, j):
        p = (i, j) if i < j else (j, i)
        if self.last[p] < 0:
            self.unserved -= 1
        self.last[p] = t
        self.lru.move_to_end(p)


class _Scripted:
    def __init__(self, n, script):
        if not script:
            raise PolicyInfeasible("empty script")
        for i, j in script:
            if i == j or not (0 <= i <= n and 0 <= j <= n):
                raise PolicyInfeasible(f"scripted pair {(i, j)} invalid for n={n}")
        self.script = list(script)

    def choose(self, t, config):
        return tuple(self.script[t % len(self.script)])

    def observe(self, t, i, j):
        pass


class _PairDoubling:
    """After ``pivot``, the pair chosen at ``pivot + 2u`` is repeated at ``pivot + 2u + 1``."""

    def __init__(self, inner, pivot):
        self.inner, self.pivot = inner, pivot
        self.held = None

    def choose(self, t, config):
        if t >= self.pivot and (t - self.pivot) % 2 == 1 and self.held is not None:
            return self.held
        choice = self.inner.choose(t, config)
        self.held = choice if t >= self.pivot else None
        return choice

    def observe(self, t, i, j):
        self.inner.observe(t, i, j)


class _Reduced:
    """Collapse homonyms in non-exempt states before anything else happens."""

    def __init__(self, inner, exempt):
        self.inner, self.exempt = inner, exempt

    def choose(self, t, config):
        seen = {}
        for a, s in enumerate(config.agents, start=1):
            if s in self.exempt:
                continue
            if s in seen:
                return seen[s], a
            seen[s] = a
        return self.inner.choose(t, config)

    def observe(self, t, i, j):
        self.inner.observe(t, i, j)


def make_scheduler(policy: SchedulerPolicy, n: int, rng: random.Random | None = None):
    rng = rng or random.Random(policy.seed)
    if policy.kind == UNIFORM_RANDOM:
        return _UniformRandom(n, rng)
    if policy.kind == WEAKLY_FAIR:
        return _WeaklyFair(n, rng, policy.B)
    if policy.kind == SCRIPTED:
        return _Scripted(n, policy.script)
    if policy.kind == PAIR_DOUBLING:
        return _PairDoubling(make_scheduler(policy.inner or uniform_random(), n, rng), policy.pivot)
    if policy.kind == REDUCED:
        return _Reduced(make_scheduler(policy.inner or uniform_random(), n, rng), policy.exempt)
    raise ValueError(f"unknown scheduler kind {policy.kind!r}")


# ---------------------------------------------------------------------------
# traces

@dataclass(frozen=True)
class StepRecord:
    t: int
    i: int
    j: int
    pre: tuple
    post: tuple


@dataclass
class ExecutionTrace:
    spec: ProtocolSpec
    initial: Configuration
    policy: SchedulerPolicy
    steps: list = field(default_factory=list)
    reason: str = "budget"

    @property
    def n(self):
        return self.initial.n

    def __len__(self):
        return len(self.steps)

    def configurations(self):
        """Yield ``C_0, C_1, ...`` by applying the recorded post-states."""
        config = self.initial
        yield config
        for rec in self.steps:
            if rec.pre != rec.post:
                config = config.replace(rec.i, rec.post[0]).replace(rec.j, rec.post[1])
            yield config

    @property
    def final(self) -> Configuration:
        config = self.initial
        for config in self.configurations():
            pass
        return config

    def pair_sequence(self):
        return [(r.i, r.j) for r in self.steps]

    def first_silent_index(self):
        """Index of the first configuration from which the run stayed silent, or None."""
        if self.reason != "silent":
            return None
        last_change = 0
        for rec in self.steps:
            if rec.pre != rec.post:
                last_change = rec.t + 1
        return last_change


def replay(spec: ProtocolSpec, initial: Configuration, pairs) -> list:
    """Apply ``pairs`` with :func:`core.step`; return every configuration visited."""
    out = [initial]
    config = initial
    for i, j in pairs:
        config = step(config, i, j, spec)
        out.append(config)
    return out


def verify_replay(trace: ExecutionTrace) -> bool:
    config = trace.initial
    for rec in trace.steps:
        pre = (config.state_of(rec.i), config.state_of(rec.j))
        if pre != tuple(rec.pre):
            return False
        config = step(config, rec.i, rec.j, trace.spec)
        if (config.state_of(rec.i), config.state_of(rec.j)) != tuple(rec.post):
            return False
    return True


def random_initial(spec: ProtocolSpec, n: int, rng: random.Random, bs=None) -> Configuration:
    bs = spec.bs_initial if bs is None else bs
    if bs is None:
        bs = rng.choice(spec.bs_states)
    return make_configuration(spec, bs, [rng.choice(spec.agent_states) for _ in range(n)])


def run(spec: ProtocolSpec, n: int, initial, policy: SchedulerPolicy, *,
        max_steps: int = 100_000, stop_on_silent: bool = True,
        stop_predicate: Callable[[Configuration], bool] | None = None) -> ExecutionTrace:
    """Simulate one execution.

    ``initial`` is a :class:`Configuration`, an explicit sequence of agent
    states, or ``"all_states_random"``.  When the protocol designates a BS
    initial state it overrides whatever BS state ``initial`` carries.
    """
    if not 1 <= n <= spec.P:
        raise ValueError(f"n={n} outside 1..P={spec.P}")
    rng = random.Random(policy.seed)
    if isinstance(initial, str):
        if initial != "all_states_random":
            raise ValueError(f"unknown initial mode {initial!r}")
        config = random_initial(spec, n, rng)
    elif isinstance(initial, Configuration):
        bs = spec.bs_initial if spec.bs_initial is not None else initial.bs
        config = make_configuration(spec, bs, initial.agents)
    else:
        if spec.bs_initial is None:
            raise ValueError("non-initialized BS needs a full Configuration")
        config = make_configuration(spec, spec.bs_initial, initial)
    if config.n != n:
        raise ValueError(f"initial configuration has {config.n} agents, expected {n}")

    sched = make_scheduler(policy, n, rng)
    trace = ExecutionTrace(spec, config, policy)
    steps = trace.steps
    delta = spec.delta
    silent = stop_on_silent and is_silent(config, spec)
    if silent:
        trace.reason = "silent"
        return trace
    if stop_predicate is not None and stop_predicate(config):
        trace.reason = "target"
        return trace
    for t in range(max_steps):
        i, j = sched.choose(t, config)
        p, q = config.state_of(i), config.state_of(j)
        p2, q2 = delta[(p, q)]
        if p2 != p or q2 != q:
            config = step(config, i, j, spec)
            steps.append(StepRecord(t, i, j, (p, q), (p2, q2)))
            sched.observe(t, i, j)
            if stop_on_silent and is_silent(config, spec):
                trace.reason = "silent"
                return trace
            if stop_predicate is not None and stop_predicate(config):
                trace.reason = "target"
                return trace
        else:
            steps.append(StepRecord(t, i, j, (p, q), (p, q)))
            sched.observe(t, i, j)
    trace.reason = "budget"
    return trace


def detect_silent(config: Configuration, spec: ProtocolSpec) -> bool:
    return is_silent(config, spec)


# ---------------------------------------------------------------------------

@dataclass
class FairnessReport:
    length: int
    counts: dict
    max_gap: dict
    flagged: list
    B: int | None

    @property
    def ok(self):
        return not self.flagged


def fairness_audit(trace: ExecutionTrace, B: int | None = None) -> FairnessReport:
    """Per-pair interaction counts and longest stretch without each pair.

    ``max_gap`` counts consecutive steps in which the pair did not interact
    (a pair never chosen has gap equal to the trace length).  Pairs with a gap
    of ``B`` or more broke the window contract; null interactions count.
    """
    pairs = unordered_pairs(trace.n)
    if B is None and trace.policy.kind == WEAKLY_FAIR:
        B = trace.policy.B or 2 * len(pairs)
    counts = {p: 0 for p in pairs}
    last = {p: -1 for p in pairs}
    gap = {p: 0 for p in pairs}
    for rec in trace.steps:
        p = (rec.i, rec.j) if rec.i < rec.j else (rec.j, rec.i)
        counts[p] += 1
        gap[p] = max(gap[p], rec.t - last[p] - 1)
        last[p] = rec.t
    T = len(trace.steps)
    for p in pairs:
        gap[p] = max(gap[p], T - last[p] - 1)
    if B is None:
        flagged = [p for p in pairs if counts[p] == 0]
    else:
        flagged = [p for p in pairs if gap[p] >= B]
    return FairnessReport(T, counts, gap, flagged, B)


def derive_seeds(root_seed: int, count: int) -> list:
    """Split a root seed into ``count`` independent run seeds."""
    children = np.random.SeedSequence(root_seed).spawn(count)
    return [int(c.generate_state(1)[0]) for c in children]
