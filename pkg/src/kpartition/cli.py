"""``kpartition`` command line: simulate, check, analyze, sweep, replay, export.

Exit codes: 0 ok / Proved, 1 Refuted (or a failed replay), 2 validation
error, 3 budget exhausted / Inconclusive.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import analysis, formats, mc, sim
from .core import group_counts, make_configuration
from .errors import KPartitionError, ProtocolValidationError

log = logging.getLogger("kpartition")

EXIT_OK, EXIT_REFUTED, EXIT_INVALID, EXIT_BUDGET = 0, 1, 2, 3
_STATUS_EXIT = {mc.PROVED: EXIT_OK, mc.REFUTED: EXIT_REFUTED, mc.INCONCLUSIVE: EXIT_BUDGET}


class UsageError(Exception):
    pass


def worst(codes) -> int:
    """Combine exit codes; validation errors dominate, then budget, then refutation."""
    codes = set(codes)
    for c in (EXIT_INVALID, EXIT_BUDGET, EXIT_REFUTED):
        if c in codes:
            return c
    return EXIT_OK


# ---------------------------------------------------------------------------
# manifest

@dataclass
class RunManifest:
    command: str
    protocol: str = "kpartition_asym"
    P: list = field(default_factory=list)
    k: list = field(default_factory=lambda: [2])
    n: list = field(default_factory=list)
    seed: int = 0
    runs: int = 1
    scheduler: str = "weakfair"
    initial: str = "random"
    max_steps: int = 100_000
    budget: int = mc.DEFAULT_BUDGET
    fairness: list = field(default_factory=lambda: ["weak"])
    bs_init: str | None = None
    all_bs_init: bool = False
    out: str | None = None
    summary: str | None = None
    figures: str | None = None
    format: str = "json"
    jobs: int = 0  # 0: one worker per CPU
    options: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def parse_range(text) -> list:
    """``"2..6"``, ``"1,3,5"``, ``"4"`` or a list; an empty string is an empty range."""
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    if isinstance(text, int):
        return [text]
    text = str(text).strip()
    if not text:
        return []
    out = []
    for part in text.split(","):
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def _resolve_n(ns, P):
    """Population sizes for one P; ``0`` or empty means 1..P, negative means P+v."""
    if not ns:
        return list(range(1, P + 1))
    return [P + v if v <= 0 else v for v in ns]


# ---------------------------------------------------------------------------
# protocol resolution

def load_spec(protocol: str, P: int | None, k: int, bs_init=None):
    if protocol.endswith(".json") or os.path.exists(protocol):
        spec = formats.load_protocol(protocol)
    else:
        if P is None:
            raise UsageError("--P is required for builtin protocols")
        spec = formats.protocol_from_raw({"builtin": protocol, "P": P, "k": k})
    if bs_init is not None:
        spec = spec.with_bs_initial(parse_bs_init(spec, bs_init))
    return spec


def parse_bs_init(spec, text):
    """``M=4`` for register base stations, a bare integer otherwise."""
    if spec.bs_registers is None:
        b = int(text)
    else:
        values = dict(item.split("=", 1) for item in str(text).split(","))
        b = spec.bs_from_json({k: int(v) for k, v in values.items()})
    if not spec.is_bs_state(b):
        raise UsageError(f"{text!r} is not a BS state of {spec.name}")
    return b


# ---------------------------------------------------------------------------
# simulate

SUMMARY_COLUMNS = ["n", "seed", "steps_to_silence", "final_group_counts", "M_final",
                   "fairness_max_gap"]


def _initial(spec, n, text):
    if text == "random":
        return "all_states_random"
    states = [int(s) for s in text.split(",")]
    if len(states) != n:
        raise UsageError(f"--initial lists {len(states)} states, n={n}")
    return make_configuration(spec, spec.bs_initial, states)


def _summary_row(trace, spec):
    final = trace.final
    counts = group_counts(final, spec)
    M = ""
    if spec.bs_registers and any(r[0] == "M" for r in spec.bs_registers):
        M = spec.register(final.bs, "M")
    audit = sim.fairness_audit(trace)
    steps = len(trace.steps) if trace.reason == "silent" else ""
    return [trace.n, trace.policy.seed, steps, ";".join(map(str, counts)), M,
            max(audit.max_gap.values()) if audit.max_gap else 0]


def cmd_simulate(m: RunManifest) -> int:
    if len(m.P) > 1 or len(m.k) > 1:
        raise UsageError("simulate takes a single --P and --k")
    spec = load_spec(m.protocol, m.P[0] if m.P else None, m.k[0], m.bs_init)
    ns = _resolve_n(m.n, spec.P)
    for n in ns:
        if not 1 <= n <= spec.P:
            raise UsageError(f"n={n} outside 1..P={spec.P}")
    seeds = [m.seed] if m.runs == 1 else sim.derive_seeds(m.seed, m.runs)
    single = len(ns) * len(seeds) == 1
    out = Path(m.out) if m.out else None
    rows, code = [], EXIT_OK
    for n in ns:
        for seed in seeds:
            policy = sim.parse_scheduler(m.scheduler, seed)
            trace = sim.run(spec, n, _initial(spec, n, m.initial), policy, max_steps=m.max_steps)
            if trace.reason == "budget":
                code = EXIT_BUDGET
            rows.append(_summary_row(trace, spec))
            if out is not None and not m.options.get("no_traces"):
                path = out if single else out / f"trace_n{n}_seed{seed}.jsonl"
                formats.write_trace(trace, path)
    summary = m.summary
    if summary is None and out is not None:
        summary = out.with_suffix(".csv") if single else out / "summary.csv"
    text = formats.csv_text(SUMMARY_COLUMNS, rows)
    if summary is None:
        sys.stdout.write(text)
    else:
        formats.atomic_write(summary, text)
    if m.figures:
        from . import plotting

        dict_rows = [dict(zip(SUMMARY_COLUMNS, r)) for r in rows]
        plotting.plot_steps_to_silence(dict_rows, Path(m.figures) / "steps_to_silence.png", spec.name)
        plotting.plot_group_balance(dict_rows, Path(m.figures) / "group_balance.png", spec.name)
    return code


# ---------------------------------------------------------------------------
# check

def _check_one(spec, n, fairness, all_bs_init, budget):
    """Returns (verdict, bs_state_used)."""
    if not all_bs_init:
        return mc.check_convergence(spec, n, fairness, budget=budget), spec.bs_initial
    last = None
    for b in spec.bs_states:
        v = mc.check_convergence(spec, n, fairness, bs_initial=b, budget=budget)
        if not v.proved:
            return v, b
        last = v
    return last, spec.bs_initial


def _witness_trace(spec, verdict):
    lasso = verdict.witness
    pairs = list(lasso.stem) + list(lasso.cycle)
    steps = [sim.StepRecord(*rec) for rec in mc.lasso_steps(spec, lasso)]
    return sim.ExecutionTrace(spec, lasso.initial, sim.scripted(pairs), steps, "lasso")


def cmd_check(m: RunManifest) -> int:
    spec = load_spec(m.protocol, m.P[0] if m.P else None, m.k[0], m.bs_init)
    ns = _resolve_n(m.n, spec.P)
    docs, codes = [], []
    for n in ns:
        if not 1 <= n <= spec.P:
            raise UsageError(f"n={n} outside 1..P={spec.P}")
        for fairness in m.fairness:
            verdict, b = _check_one(spec, n, fairness, m.all_bs_init, m.budget)
            doc = formats.verdict_json(verdict, spec, n, b)
            docs.append(doc)
            codes.append(_STATUS_EXIT[verdict.status])
            log.info("n=%d %s: %s %s", n, fairness, verdict.status, verdict.stats)
            if verdict.witness is not None and m.out:
                stem = Path(m.out).with_suffix("")
                if len(ns) * len(m.fairness) > 1:
                    stem = stem.with_name(f"{stem.name}_n{n}_{fairness}")
                used = spec if b is None else spec.with_bs_initial(b)
                formats.write_trace(_witness_trace(used, verdict), f"{stem}.witness.jsonl")
    body = docs[0] if len(docs) == 1 else {"verdicts": docs}
    text = formats.dumps(body)
    if m.out:
        formats.atomic_write(m.out, text)
    for d in docs:
        print(f"n={d['n']} fairness={d['fairness']} bs_init={d['bs_initial']} -> {d['status']}")
    return worst(codes)


# ---------------------------------------------------------------------------
# analyze

def cmd_analyze(m: RunManifest) -> int:
    spec = load_spec(m.protocol, m.P[0] if m.P else None, m.k[0], m.bs_init)
    o = m.options
    sections = [o.get(s) for s in ("relations", "blue_classes", "qstar", "sink")]
    everything = not any(sections)
    if o.get("blue_classes") and spec.k != 2:
        raise UsageError("--blue-classes needs k=2")
    report = analysis.analysis_report(
        spec,
        relations=everything or bool(o.get("relations")),
        blue=everything or bool(o.get("blue_classes")),
        qstar=everything or bool(o.get("qstar")),
        sink=bool(o.get("sink")),
        check_ns=parse_range(o.get("check_ns", "")),
        sym_interpretation=o.get("sym_interpretation", "strict"),
        require_symmetric=not o.get("allow_asymmetric", False),
    )
    text = formats.dumps(report)
    if m.out:
        formats.atomic_write(m.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep

SWEEP_COLUMNS = ["protocol", "P", "k", "n", "fairness", "bs_mode", "bs_initial", "status",
                 "nodes", "edges", "witness"]


def _sweep_instance(args):
    protocol, P, k, n, fairness, bs_mode, budget, outdir = args
    name = f"{protocol.replace(':', '-')}_P{P}_k{k}_n{n}_{fairness}_{bs_mode}"
    row = {"protocol": protocol, "P": P, "k": k, "n": n, "fairness": fairness,
           "bs_mode": bs_mode, "bs_initial": "", "status": "Error", "nodes": "", "edges": "",
           "witness": ""}
    try:
        spec = load_spec(protocol, P, k)
        verdict, b = _check_one(spec, n, fairness, bs_mode == "arbitrary", budget)
        doc = formats.verdict_json(verdict, spec, n, b)
        row.update(status=verdict.status, bs_initial=json.dumps(doc["bs_initial"], sort_keys=True),
                   nodes=verdict.stats.get("nodes", ""), edges=verdict.stats.get("edges", ""))
        if outdir is not None:
            path = Path(outdir) / "instances" / f"{name}.json"
            formats.atomic_write(path, formats.dumps(doc))
            if verdict.witness is not None:
                row["witness"] = str(path.relative_to(outdir))
        code = _STATUS_EXIT[verdict.status]
    except (KPartitionError, UsageError, ValueError) as exc:
        row["status"] = "Error"
        row["witness"] = f"{type(exc).__name__}: {exc}"
        code = EXIT_INVALID
    return row, code


def _aggregate(rows):
    """One line per (protocol, P, k, fairness, BS mode), as in a results table."""
    groups = {}
    for r in rows:
        key = (r["protocol"], r["P"], r["k"], r["fairness"], r["bs_mode"])
        groups.setdefault(key, []).append(r)
    out = []
    for key, rs in groups.items():
        statuses = {r["status"] for r in rs}
        overall = next((s for s in ("Error", "Inconclusive", "Refuted") if s in statuses), "Proved")
        ns = sorted(r["n"] for r in rs)
        refuted_at = [r["n"] for r in rs if r["status"] == "Refuted"]
        out.append(list(key) + [f"{ns[0]}..{ns[-1]}", len(rs), overall,
                                ",".join(map(str, sorted(refuted_at)))])
    return out


def cmd_sweep(m: RunManifest) -> int:
    protocols = [p for p in m.protocol.split(";") if p]
    bs_modes = m.options.get("bs_modes", ["designated"])
    jobs = []
    outdir = m.out
    for protocol in protocols:
        for P in m.P:
            for k in m.k:
                for n in _resolve_n(m.n, P):
                    if not 1 <= n <= P:
                        continue
                    for fairness in m.fairness:
                        for mode in bs_modes:
                            jobs.append((protocol, P, k, n, fairness, mode, m.budget, outdir))
    workers = m.jobs or os.cpu_count() or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_instance, jobs))
    else:
        results = [_sweep_instance(j) for j in jobs]
    rows = [r for r, _ in results]
    codes = [c for _, c in results]
    table = formats.csv_text(SWEEP_COLUMNS, [[r[c] for c in SWEEP_COLUMNS] for r in rows])
    agg = formats.csv_text(["protocol", "P", "k", "fairness", "bs_mode", "n_range", "instances",
                            "verdict", "refuted_n"], _aggregate(rows))
    if outdir:
        formats.atomic_write(Path(outdir) / "sweep.csv", table)
        formats.atomic_write(Path(outdir) / "table.csv", agg)
        formats.atomic_write(Path(outdir) / "manifest.json", formats.dumps(m.to_json()))
    else:
        sys.stdout.write(table)
    if m.figures and rows:
        from . import plotting

        plotting.plot_sweep(rows, Path(m.figures) / "sweep_nodes.png")
    print(f"{len(rows)} instances: " + ", ".join(
        f"{s}={sum(r['status'] == s for r in rows)}"
        for s in ("Proved", "Refuted", "Inconclusive", "Error")), file=sys.stderr)
    return worst(codes)


# ---------------------------------------------------------------------------
# replay / export

def cmd_replay(m: RunManifest) -> int:
    path = m.options["file"]
    with open(path) as fh:
        first = fh.readline()
    try:
        head = json.loads(first)
    except json.JSONDecodeError:
        head = None
    if isinstance(head, dict) and head.get("type") == "header":
        trace = formats.read_trace(path)
        ok = sim.verify_replay(trace)
        msg = f"{len(trace.steps)} steps {'replay' if ok else 'do NOT replay'} through core.step"
    else:
        with open(path) as fh:
            doc = json.load(fh)
        docs = doc["verdicts"] if "verdicts" in doc else [doc]
        results = [formats.replay_verdict(d) for d in docs]
        ok = all(r[0] for r in results)
        msg = "; ".join(r[1] for r in results)
    print(("OK: " if ok else "FAILED: ") + msg)
    return EXIT_OK if ok else EXIT_REFUTED


def cmd_export(m: RunManifest) -> int:
    spec = load_spec(m.protocol, m.P[0] if m.P else None, m.k[0], m.bs_init)
    if len(m.n) != 1:
        raise UsageError("export needs a single --n")
    dot = m.options.get("dot") or m.out
    if not dot:
        raise UsageError("export needs --dot PATH")
    try:
        graph = mc.build_reach_graph(spec, m.n[0], budget=m.budget)
    except mc.BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    mc.export_dot(graph, dot)
    print(f"wrote {graph.num_nodes} configurations to {dot}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "check": cmd_check, "analyze": cmd_analyze,
            "sweep": cmd_sweep, "replay": cmd_replay, "export": cmd_export}


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common")
    g.add_argument("--manifest", help="JSON manifest; explicit flags override its values")
    g.add_argument("--protocol", help="builtin name or protocol JSON file (sweep: ';'-separated)")
    g.add_argument("--P", help="state budget (range allowed for sweep, e.g. 2..6)")
    g.add_argument("--k", help="number of groups (range allowed for sweep)")
    g.add_argument("--n", help="population size(s), e.g. 4, 1..8, or 0 for 1..P")
    g.add_argument("--seed", type=int)
    g.add_argument("--scheduler", help="random | weakfair[:B=..] | doubling:pivot=.. | reduced:exempt=a/b")
    g.add_argument("--budget", type=int, help="node budget for the model checker")
    g.add_argument("--out")
    g.add_argument("--format", choices=["json", "csv"])
    g.add_argument("--bs-init", help="designated BS initial state override, e.g. M=4")
    g.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="kpartition", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run the simulator")
    s.add_argument("--runs", type=int, help="seeds per n (derived from --seed)")
    s.add_argument("--max-steps", type=int)
    s.add_argument("--initial", help="'random' or comma-separated agent states")
    s.add_argument("--summary", help="summary CSV path")
    s.add_argument("--figures", help="directory for PNG figures")
    s.add_argument("--no-traces", action="store_true")

    c = sub.add_parser("check", parents=[common], help="model-check convergence")
    c.add_argument("--fairness", help="weak, global or weak,global")
    c.add_argument("--all-bs-init", action="store_true", help="try every BS initial state")

    a = sub.add_parser("analyze", parents=[common], help="homonym analyses")
    a.add_argument("--relations", action="store_true")
    a.add_argument("--blue-classes", action="store_true")
    a.add_argument("--qstar", action="store_true")
    a.add_argument("--sink", action="store_true")
    a.add_argument("--check-ns", default="", help="population sizes for sink condition 3")
    a.add_argument("--sym-interpretation", choices=["strict", "loose"], default="strict")
    a.add_argument("--allow-asymmetric", action="store_true")

    w = sub.add_parser("sweep", parents=[common], help="batch of check instances")
    w.add_argument("--fairness")
    w.add_argument("--bs-modes", default="designated", help="designated,arbitrary")
    w.add_argument("--jobs", type=int)
    w.add_argument("--figures")

    r = sub.add_parser("replay", parents=[common], help="replay a trace or verdict witness")
    r.add_argument("file")

    e = sub.add_parser("export", parents=[common], help="write the configuration graph")
    e.add_argument("--dot")
    return p


def manifest_from_args(ns) -> RunManifest:
    base = {}
    if ns.manifest:
        with open(ns.manifest) as fh:
            base = json.load(fh)
        if base.get("command", ns.command) != ns.command:
            raise UsageError(f"manifest is for {base['command']!r}, not {ns.command!r}")
    m = RunManifest(command=ns.command)
    for key, value in base.items():
        if key in ("P", "k", "n"):
            value = parse_range(value)
        elif key == "fairness" and isinstance(value, str):
            value = value.split(",")
        if key != "command":
            setattr(m, key, value)
    if ns.command == "sweep" and not base.get("P") and ns.P is None:
        m.P = []
    flags = vars(ns)
    for key in ("protocol", "seed", "scheduler", "budget", "out", "format", "bs_init"):
        if flags.get(key) is not None:
            setattr(m, key, flags[key])
    for key in ("P", "k", "n"):
        if flags.get(key) is not None:
            setattr(m, key, parse_range(flags[key]))
    for key in ("runs", "max_steps", "initial", "summary", "figures", "jobs"):
        if flags.get(key) is not None:
            setattr(m, key, flags[key])
    if flags.get("fairness"):
        m.fairness = flags["fairness"].split(",")
    if flags.get("all_bs_init"):
        m.all_bs_init = True
    opts = dict(m.options)
    for key in ("relations", "blue_classes", "qstar", "sink", "allow_asymmetric", "no_traces"):
        if flags.get(key):
            opts[key] = True
    for key in ("check_ns", "sym_interpretation", "file", "dot"):
        if flags.get(key):
            opts[key] = flags[key]
    if flags.get("bs_modes"):
        opts["bs_modes"] = flags["bs_modes"].split(",")
    m.options = opts
    return m


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        m = manifest_from_args(ns)
        return COMMANDS[m.command](m)
    except ProtocolValidationError as exc:
        for code, msg in exc.errors:
            print(f"{code}: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except (UsageError, KPartitionError, ValueError, FileNotFoundError) as exc:
        if isinstance(exc, mc.BudgetExceeded):
            print(f"budget exceeded: {exc}", file=sys.stderr)
            return EXIT_BUDGET
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
