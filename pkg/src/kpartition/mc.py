"""Explicit-state model checking of a protocol for a fixed population size.

Configurations are encoded as integers: agent ``a`` (1-based) is digit
``a-1`` in base ``S = |Q_p|`` and the BS state index sits above the agent
digits.  Agents stay identified (no quotient by permutation) because weak
fairness speaks about pairs of agents.  Edges are the ordered pairs
``(i, j)``; both orientations of an unordered pair carry the same label, and
null interactions are kept as self-loops.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .core import Configuration, ProtocolSpec, ordered_pairs, step, unordered_pairs
from .errors import BudgetExceeded

DEFAULT_BUDGET = 5_000_000

PROVED = "Proved"
REFUTED = "Refuted"
INCONCLUSIVE = "Inconclusive"


def _successor_codes(codes, spec, n, pairs):
    tb = spec.tables
    S = len(tb.agent_index)
    pw = S ** np.arange(n, dtype=np.int64)
    top = np.int64(S) ** n
    bs = codes // top
    digits = (codes[:, None] // pw[None, :]) % S
    out = np.empty((len(codes), len(pairs)), dtype=np.int64)
    for c, (i, j) in enumerate(pairs):
        if i == 0:
            dj = digits[:, j - 1]
            b2, q2 = tb.ba[bs, dj, 0], tb.ba[bs, dj, 1]
            out[:, c] = codes + (b2 - bs) * top + (q2 - dj) * pw[j - 1]
        elif j == 0:
            di = digits[:, i - 1]
            p2, b2 = tb.ab[di, bs, 0], tb.ab[di, bs, 1]
            out[:, c] = codes + (b2 - bs) * top + (p2 - di) * pw[i - 1]
        else:
            di, dj = digits[:, i - 1], digits[:, j - 1]
            p2, q2 = tb.aa[di, dj, 0], tb.aa[di, dj, 1]
            out[:, c] = codes + (p2 - di) * pw[i - 1] + (q2 - dj) * pw[j - 1]
    return out


@dataclass
class ReachGraph:
    spec: ProtocolSpec
    n: int
    codes: np.ndarray  # node id -> configuration code
    succ: np.ndarray  # (N, C) node id of the target of each ordered pair
    initial: np.ndarray  # node ids
    pairs: list  # ordered pairs, one per column of succ
    labels: np.ndarray  # (C,) unordered-pair label of each column
    label_pairs: list

    @property
    def num_nodes(self):
        return len(self.codes)

    @property
    def num_edges(self):
        return self.succ.size

    @cached_property
    def _S(self):
        return len(self.spec.agent_states)

    @cached_property
    def digits(self) -> np.ndarray:
        S = self._S
        pw = S ** np.arange(self.n, dtype=np.int64)
        return (self.codes[:, None] // pw[None, :]) % S

    @cached_property
    def bs_index(self) -> np.ndarray:
        return self.codes // (np.int64(self._S) ** self.n)

    def config(self, node: int) -> Configuration:
        st = self.spec.agent_states
        agents = tuple(st[d] for d in self.digits[node])
        return Configuration(self.spec.bs_states[self.bs_index[node]], agents)

    def node_of(self, config: Configuration) -> int:
        tb = self.spec.tables
        S = self._S
        code = tb.bs_index[config.bs] * S ** self.n
        for a, s in enumerate(config.agents):
            code += tb.agent_index[s] * S ** a
        hit = np.nonzero(self.codes == code)[0]
        if not len(hit):
            raise KeyError(f"{config} is not in the graph")
        return int(hit[0])

    # -- annotations ---------------------------------------------------------
    @cached_property
    def colors(self) -> np.ndarray:
        return self.spec.tables.colors[self.digits]

    @cached_property
    def group_counts(self) -> np.ndarray:
        cols = self.colors
        return np.stack([(cols == c).sum(axis=1) for c in range(self.spec.k)], axis=1)

    @cached_property
    def balanced(self) -> np.ndarray:
        gc = self.group_counts
        return gc.max(axis=1) - gc.min(axis=1) <= 1

    @cached_property
    def silent(self) -> np.ndarray:
        ids = np.arange(self.num_nodes)
        return np.all(self.succ == ids[:, None], axis=1)

    @cached_property
    def has_homonyms(self) -> np.ndarray:
        if self.n < 2:
            return np.zeros(self.num_nodes, dtype=bool)
        d = np.sort(self.digits, axis=1)
        return np.any(d[:, 1:] == d[:, :-1], axis=1)

    @cached_property
    def color_change(self) -> np.ndarray:
        """Nodes with an outgoing edge that changes some agent's color."""
        cols = self.colors
        changes = np.zeros(self.num_nodes, dtype=bool)
        for c, (i, j) in enumerate(self.pairs):
            tgt = self.succ[:, c]
            for a in (i, j):
                if a:
                    changes |= cols[:, a - 1] != cols[tgt, a - 1]
        return changes

    def _edge_arrays(self):
        N, C = self.succ.shape
        src = np.repeat(np.arange(N, dtype=np.int32), C)
        return src, self.succ.ravel()

    @cached_property
    def _forward_csr(self):
        N = self.num_nodes
        src, tgt = self._edge_arrays()
        return csr_matrix((np.ones(len(src), dtype=np.int32), (src, tgt)), shape=(N, N))

    @cached_property
    def _reverse_csr(self):
        # one spare row/column for a virtual source used by backward_closure
        N = self.num_nodes
        src, tgt = self._edge_arrays()
        return csr_matrix((np.ones(len(src), dtype=np.int32), (tgt, src)), shape=(N + 1, N + 1))

    def backward_closure(self, marked: np.ndarray) -> np.ndarray:
        """Nodes that can reach (in zero or more steps) some marked node."""
        N = self.num_nodes
        seeds = np.nonzero(marked)[0]
        if not len(seeds):
            return np.zeros(N, dtype=bool)
        extra = csr_matrix((np.ones(len(seeds), dtype=np.int32),
                            (np.full(len(seeds), N), seeds)), shape=(N + 1, N + 1))
        g = (self._reverse_csr + extra).tocsr()
        order = breadth_first_order(g, N, directed=True, return_predecessors=False)
        out = np.zeros(N + 1, dtype=bool)
        out[order] = True
        return out[:N]

    @cached_property
    def components(self) -> np.ndarray:
        _, comp = connected_components(self._forward_csr, directed=True, connection="strong")
        return comp

    def internal_label_comps(self, allowed=None) -> list:
        """For each label, the set of SCC ids that contain an internal edge with it."""
        comp = self.components
        per_label = [set() for _ in self.label_pairs]
        for c in range(len(self.pairs)):
            tgt = self.succ[:, c]
            mask = comp == comp[tgt]
            if allowed is not None:
                mask &= allowed
            per_label[self.labels[c]].update(np.unique(comp[mask]).tolist())
        return per_label

    def fair_components(self, allowed=None) -> set:
        per_label = self.internal_label_comps(allowed)
        fair = set(per_label[0])
        for s in per_label[1:]:
            fair &= s
        return fair

    @cached_property
    def bottom_components(self) -> set:
        comp = self.components
        leaving = np.zeros(comp.max() + 1, dtype=bool)
        for c in range(len(self.pairs)):
            cross = comp != comp[self.succ[:, c]]
            leaving[comp[cross]] = True
        return set(np.nonzero(~leaving)[0].tolist())


def build_reach_graph(spec: ProtocolSpec, n: int, initial="designated_bs_all_agent_states",
                      *, bs_initial=None, budget: int = DEFAULT_BUDGET) -> ReachGraph:
    """Explore every configuration reachable from the initial set.

    ``initial`` is ``"designated_bs_all_agent_states"`` (every agent vector,
    with the designated BS state, or ``bs_initial`` if given, or every BS
    state for a non-initialized BS) or an explicit list of configurations.
    Node ids follow breadth-first discovery, sorted by code within a level.
    """
    if not 1 <= n <= spec.P:
        raise ValueError(f"n={n} outside 1..P={spec.P}")
    tb = spec.tables
    S = len(tb.agent_index)
    top = S ** n
    if isinstance(initial, str):
        if initial != "designated_bs_all_agent_states":
            raise ValueError(f"unknown initial set {initial!r}")
        b0 = bs_initial if bs_initial is not None else spec.bs_initial
        bss = [b0] if b0 is not None else list(spec.bs_states)
        if len(bss) * top > budget:
            raise BudgetExceeded(f"{len(bss) * top} initial nodes exceed budget {budget}")
        start = np.concatenate([tb.bs_index[b] * top + np.arange(top, dtype=np.int64) for b in bss])
    else:
        start = []
        for cfg in initial:
            code = tb.bs_index[cfg.bs] * top
            for a, s in enumerate(cfg.agents):
                code += tb.agent_index[s] * S ** a
            start.append(code)
        start = np.array(start, dtype=np.int64)
    start = np.unique(start)
    if len(start) > budget:
        raise BudgetExceeded(f"{len(start)} initial nodes exceed budget {budget}")

    pairs = ordered_pairs(n)
    upairs = unordered_pairs(n)
    label_of = {p: k for k, p in enumerate(upairs)}
    labels = np.array([label_of[(min(i, j), max(i, j))] for i, j in pairs], dtype=np.int64)

    levels, level_succ = [], []
    visited = start
    frontier = start
    while len(frontier):
        sc = _successor_codes(frontier, spec, n, pairs)
        levels.append(frontier)
        level_succ.append(sc)
        new = np.setdiff1d(np.unique(sc), visited, assume_unique=True)
        if len(visited) + len(new) > budget:
            raise BudgetExceeded(f"more than {budget} reachable configurations")
        visited = np.union1d(visited, new)
        frontier = new

    codes = np.concatenate(levels)
    order = np.argsort(codes, kind="stable")
    sorted_codes = codes[order]
    succ_codes = np.concatenate(level_succ)
    del level_succ
    succ = order[np.searchsorted(sorted_codes, succ_codes)].astype(np.int32)
    init_ids = order[np.searchsorted(sorted_codes, start)]
    return ReachGraph(spec, n, codes, succ, np.sort(init_ids), pairs, labels, upairs)


# ---------------------------------------------------------------------------
# stability

def stable_mask(graph: ReachGraph) -> np.ndarray:
    """Balanced nodes from which no reachable edge changes any agent's color."""
    return graph.balanced & ~graph.backward_closure(graph.color_change)


def strongly_stable_mask(graph: ReachGraph) -> np.ndarray:
    return stable_mask(graph) & ~graph.backward_closure(graph.has_homonyms)


def stable_configs(graph: ReachGraph, spec: ProtocolSpec | None = None) -> set:
    """Node ids of stable configurations (``graph.config`` maps them back)."""
    return set(np.nonzero(stable_mask(graph))[0].tolist())


def strongly_stable_configs(graph: ReachGraph, spec: ProtocolSpec | None = None) -> set:
    return set(np.nonzero(strongly_stable_mask(graph))[0].tolist())


def check_stable_closure(graph: ReachGraph) -> bool:
    """Every edge out of a stable node lands on a stable node."""
    st = stable_mask(graph)
    return bool(np.all(st[graph.succ[st]]))


# ---------------------------------------------------------------------------
# verdicts and witnesses

@dataclass
class Lasso:
    initial: Configuration
    stem: list  # ordered pairs
    cycle: list

    def configurations(self, spec):
        from .sim import replay

        stem = replay(spec, self.initial, self.stem)
        cyc = replay(spec, stem[-1], self.cycle)
        return stem, cyc

    def replays(self, spec) -> bool:
        if not self.cycle:
            return False
        stem, cyc = self.configurations(spec)
        return cyc[-1] == stem[-1]

    def cycle_labels(self) -> set:
        return {(min(i, j), max(i, j)) for i, j in self.cycle}


@dataclass
class Verdict:
    status: str
    fairness: str
    witness: Lasso | None = None
    message: str = ""
    stats: dict = field(default_factory=dict)
    bottom_witness: bool = False  # the witness cycle lies in a bottom SCC

    @property
    def proved(self):
        return self.status == PROVED

    @property
    def refuted(self):
        return self.status == REFUTED


def _bfs(graph: ReachGraph, sources, allowed, targets=None):
    """Multi-source BFS; returns (pred_node, pred_col, hit) with -1 for undiscovered."""
    N, C = graph.succ.shape
    pred = np.full(N, -2, dtype=np.int64)
    pcol = np.full(N, -1, dtype=np.int64)
    sources = np.asarray(sources, dtype=np.int64)
    sources = sources[allowed[sources]]
    pred[sources] = -1
    if targets is not None:
        hit = sources[targets[sources]]
        if len(hit):
            return pred, pcol, int(hit[0])
    frontier = sources
    while len(frontier):
        tg = graph.succ[frontier].ravel()
        ok = allowed[tg] & (pred[tg] == -2)
        idx = np.nonzero(ok)[0]
        if not len(idx):
            break
        tgu, first = np.unique(tg[idx], return_index=True)
        pos = idx[first]
        pred[tgu] = frontier[pos // C]
        pcol[tgu] = pos % C
        if targets is not None:
            hits = tgu[targets[tgu]]
            if len(hits):
                return pred, pcol, int(hits[0])
        frontier = tgu
    return pred, pcol, None


def _path_to(pred, pcol, node):
    cols = []
    while pred[node] >= 0:
        cols.append(int(pcol[node]))
        node = int(pred[node])
    return node, cols[::-1]


def _cycle_through(graph: ReachGraph, anchor: int, comp_id: int) -> list:
    """Closed walk from ``anchor`` inside one SCC that uses every pair label."""
    comp = graph.components
    inside = comp == comp_id
    cols = []
    cur = anchor
    for lab in range(len(graph.label_pairs)):
        edge_src = None
        for c in np.nonzero(graph.labels == lab)[0]:
            tgt = graph.succ[:, c]
            cand = np.nonzero(inside & (comp[tgt] == comp_id))[0]
            if len(cand):
                if inside[cur] and comp[graph.succ[cur, c]] == comp_id:
                    edge_src, edge_col = cur, int(c)
                    break
                if edge_src is None:
                    edge_src, edge_col = int(cand[0]), int(c)
        if edge_src is None:
            raise AssertionError(f"label {lab} missing inside component {comp_id}")
        if edge_src != cur:
            tmask = np.zeros(len(inside), dtype=bool)
            tmask[edge_src] = True
            pred, pcol, hit = _bfs(graph, [cur], inside, tmask)
            _, path = _path_to(pred, pcol, hit)
            cols += path
        cols.append(edge_col)
        cur = int(graph.succ[edge_src, edge_col])
    if cur != anchor:
        tmask = np.zeros(len(inside), dtype=bool)
        tmask[anchor] = True
        pred, pcol, hit = _bfs(graph, [cur], inside, tmask)
        _, path = _path_to(pred, pcol, hit)
        cols += path
    return cols


def _lasso(graph: ReachGraph, allowed, target_comps: set) -> tuple:
    comp = graph.components
    targets = np.isin(comp, sorted(target_comps))
    pred, pcol, hit = _bfs(graph, graph.initial, allowed, targets & allowed)
    if hit is None:
        return None, None
    root, stem_cols = _path_to(pred, pcol, hit)
    cycle_cols = _cycle_through(graph, hit, int(comp[hit]))
    lasso = Lasso(graph.config(root),
                  [graph.pairs[c] for c in stem_cols],
                  [graph.pairs[c] for c in cycle_cols])
    return lasso, int(comp[hit])


def _stats(graph):
    return {"nodes": int(graph.num_nodes), "edges": int(graph.num_edges), "n": graph.n}


def verify_weakfair_convergence(graph: ReachGraph, spec: ProtocolSpec | None = None) -> Verdict:
    """Proved iff no weakly-fair execution avoids stable configurations forever.

    Looks for a strongly connected set of non-stable nodes whose internal
    edges carry every pair label; such a set yields a fair lasso.
    """
    st = stable_mask(graph)
    unstable = ~st
    fair = graph.fair_components(allowed=unstable)
    if not fair:
        return Verdict(PROVED, "weak", stats=_stats(graph))
    lasso, cid = _lasso(graph, unstable, fair)
    if lasso is None:
        return Verdict(PROVED, "weak", stats=_stats(graph))
    return Verdict(REFUTED, "weak", lasso,
                   "fair cycle through non-stable configurations",
                   _stats(graph), bottom_witness=cid in graph.bottom_components)


def verify_globalfair_convergence(graph: ReachGraph, spec: ProtocolSpec | None = None) -> Verdict:
    """Proved iff every bottom SCC consists of stable nodes."""
    st = stable_mask(graph)
    comp = graph.components
    bad_comps = set(np.unique(comp[~st]).tolist()) & graph.bottom_components
    if not bad_comps:
        return Verdict(PROVED, "global", stats=_stats(graph))
    allowed = np.ones(graph.num_nodes, dtype=bool)
    lasso, _ = _lasso(graph, allowed, bad_comps)
    return Verdict(REFUTED, "global", lasso, "bottom SCC with non-stable configurations",
                   _stats(graph), bottom_witness=True)


def check_convergence(spec: ProtocolSpec, n: int, fairness: str = "weak", *,
                      bs_initial=None, budget: int = DEFAULT_BUDGET) -> Verdict:
    """Build the graph and decide convergence; a blown budget is Inconclusive."""
    try:
        graph = build_reach_graph(spec, n, bs_initial=bs_initial, budget=budget)
    except BudgetExceeded as exc:
        return Verdict(INCONCLUSIVE, fairness, message=str(exc))
    if fairness == "weak":
        return verify_weakfair_convergence(graph, spec)
    if fairness == "global":
        return verify_globalfair_convergence(graph, spec)
    raise ValueError(f"unknown fairness {fairness!r}")


def find_bad_bs_init(spec: ProtocolSpec, n: int, candidates=None, *,
                     budget: int = DEFAULT_BUDGET):
    """First BS initial state under which weak-fair convergence is refuted.

    Returns ``(bs_state, verdict)`` or ``None``.
    """
    for b in (spec.bs_states if candidates is None else candidates):
        graph = build_reach_graph(spec, n, bs_initial=b, budget=budget)
        verdict = verify_weakfair_convergence(graph, spec)
        if verdict.refuted:
            return b, verdict
    return None


def state_recurrence(graph: ReachGraph, spec: ProtocolSpec, s, fairness: str = "weak") -> bool:
    """Can some fair execution keep visiting configurations that contain state ``s``?"""
    idx = spec.tables.agent_index[s]
    has_s = np.any(graph.digits == idx, axis=1)
    comps = set(np.unique(graph.components[has_s]).tolist())
    if fairness == "weak":
        return bool(comps & graph.fair_components())
    if fairness == "global":
        return bool(comps & graph.bottom_components)
    raise ValueError(f"unknown fairness {fairness!r}")


def export_dot(graph: ReachGraph, path) -> None:
    """Write the configuration graph; stable nodes green, strongly stable dark green."""
    st = stable_mask(graph)
    sst = strongly_stable_mask(graph)
    spec = graph.spec
    with open(path, "w") as fh:
        fh.write("digraph reach {\n  node [shape=box, style=filled];\n")
        for v in range(graph.num_nodes):
            cfg = graph.config(v)
            color = "darkgreen" if sst[v] else "palegreen" if st[v] else "lightpink"
            bs = spec.bs_to_json(cfg.bs)
            bs = ",".join(f"{k}={v}" for k, v in bs.items()) if isinstance(bs, dict) else bs
            label = f"{bs} | {' '.join(map(str, cfg.agents))}"
            fh.write(f'  n{v} [label="{label}", fillcolor={color}];\n')
        for v in range(graph.num_nodes):
            seen = {}
            for c, (i, j) in enumerate(graph.pairs):
                w = int(graph.succ[v, c])
                seen.setdefault(w, []).append(f"{i}{j}")
            for w, labs in seen.items():
                fh.write(f'  n{v} -> n{w} [label="{",".join(labs)}"];\n')
        fh.write("}\n")


def replay_lasso(spec: ProtocolSpec, lasso: Lasso) -> list:
    """Configurations of stem followed by cycle, validated through :func:`core.step`."""
    stem, cyc = lasso.configurations(spec)
    return stem + cyc[1:]


def lasso_steps(spec, lasso: Lasso):
    """Trace-format step records for the stem and the cycle."""
    records = []
    config = lasso.initial
    for t, (i, j) in enumerate(lasso.stem + lasso.cycle):
        pre = (config.state_of(i), config.state_of(j))
        config = step(config, i, j, spec)
        post = (config.state_of(i), config.state_of(j))
        records.append((t, i, j, pre, post))
    return records
