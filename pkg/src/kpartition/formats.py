"""JSON / JSONL / CSV readers and writers shared by the CLI and the tests."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

from .core import Configuration, ProtocolSpec, make_configuration, validate_protocol
from .mc import Lasso, Verdict, lasso_steps
from .protocols import build_builtin
from .sim import ExecutionTrace, SchedulerPolicy, StepRecord


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temp file in the same directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


# -- protocols ----------------------------------------------------------------

def protocol_from_raw(raw: dict) -> ProtocolSpec:
    """Build a spec from a parsed protocol document (builtin shorthand allowed)."""
    if "builtin" in raw:
        spec = build_builtin(raw["builtin"], int(raw["P"]), int(raw.get("k", 2))).spec
        if raw.get("bs_initial") is not None:
            spec = spec.with_bs_initial(spec.bs_from_json(raw["bs_initial"]))
        return spec
    return validate_protocol(raw, default_null=raw.get("default_null", True))


def load_protocol(path) -> ProtocolSpec:
    with open(path) as fh:
        return protocol_from_raw(json.load(fh))


# -- configurations and steps -------------------------------------------------

def config_json(spec: ProtocolSpec, config: Configuration) -> dict:
    return {"bs": spec.bs_to_json(config.bs), "agents": list(config.agents)}


def config_from_json(spec: ProtocolSpec, obj) -> Configuration:
    return make_configuration(spec, spec.bs_from_json(obj["bs"]), obj["agents"])


def _participant_state(spec, who, obj):
    return spec.bs_from_json(obj) if who == 0 else obj


def step_json(spec, t, i, j, pre, post) -> dict:
    enc = [(lambda s, w=w: spec.bs_to_json(s) if w == 0 else s) for w in (i, j)]
    return {"t": t, "i": i, "j": j,
            "pre": [enc[0](pre[0]), enc[1](pre[1])],
            "post": [enc[0](post[0]), enc[1](post[1])]}


def step_from_json(spec, obj) -> StepRecord:
    i, j = obj["i"], obj["j"]
    pre = (_participant_state(spec, i, obj["pre"][0]), _participant_state(spec, j, obj["pre"][1]))
    post = (_participant_state(spec, i, obj["post"][0]), _participant_state(spec, j, obj["post"][1]))
    return StepRecord(obj["t"], i, j, pre, post)


# -- traces -------------------------------------------------------------------

def trace_lines(trace: ExecutionTrace) -> str:
    spec = trace.spec
    out = io.StringIO()
    header = {"type": "header", "spec_digest": spec.digest, "protocol": spec.to_raw(),
              "n": trace.n, "seed": trace.policy.seed, "policy": trace.policy.to_json(),
              "initial": config_json(spec, trace.initial)}
    out.write(json.dumps(header, sort_keys=True) + "\n")
    for r in trace.steps:
        out.write(json.dumps(step_json(spec, r.t, r.i, r.j, r.pre, r.post), sort_keys=True) + "\n")
    final = trace.final
    canon = Configuration(final.bs, tuple(sorted(final.agents)))
    footer = {"type": "footer", "reason": trace.reason, "final": config_json(spec, canon),
              "steps": len(trace.steps)}
    out.write(json.dumps(footer, sort_keys=True) + "\n")
    return out.getvalue()


def write_trace(trace: ExecutionTrace, path) -> None:
    atomic_write(path, trace_lines(trace))


def read_trace(path) -> ExecutionTrace:
    with open(path) as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    header = records[0]
    if header.get("type") != "header":
        raise ValueError("trace file does not start with a header record")
    spec = protocol_from_raw(header["protocol"])
    if spec.digest != header["spec_digest"]:
        raise ValueError("protocol digest mismatch")
    initial = config_from_json(spec, header["initial"])
    policy = SchedulerPolicy.from_json(header["policy"])
    steps, reason = [], "budget"
    for rec in records[1:]:
        if rec.get("type") == "footer":
            reason = rec["reason"]
        else:
            steps.append(step_from_json(spec, rec))
    return ExecutionTrace(spec, initial, policy, steps, reason)


# -- verdicts -----------------------------------------------------------------

def verdict_json(verdict: Verdict, spec: ProtocolSpec, n: int, bs_initial=None) -> dict:
    if bs_initial is not None:
        spec = spec.with_bs_initial(bs_initial)
    b = spec.bs_initial
    out = {"status": verdict.status, "fairness": verdict.fairness, "message": verdict.message,
           "stats": verdict.stats, "n": n, "protocol_name": spec.name,
           "spec_digest": spec.digest, "protocol": spec.to_raw(),
           "bs_initial": None if b is None else spec.bs_to_json(b),
           "bottom_witness": verdict.bottom_witness, "witness": None}
    lasso = verdict.witness
    if lasso is not None:
        out["witness"] = {
            "initial": config_json(spec, lasso.initial),
            "stem": [list(p) for p in lasso.stem],
            "cycle": [list(p) for p in lasso.cycle],
            "cycle_start": len(lasso.stem),
            "steps": [step_json(spec, *rec) for rec in lasso_steps(spec, lasso)],
        }
    return out


def lasso_from_json(spec: ProtocolSpec, obj) -> Lasso:
    return Lasso(config_from_json(spec, obj["initial"]),
                 [tuple(p) for p in obj["stem"]], [tuple(p) for p in obj["cycle"]])


def replay_verdict(doc: dict) -> tuple:
    """Re-execute a stored witness through core.step; returns (ok, message)."""
    spec = protocol_from_raw(doc["protocol"])
    if doc.get("witness") is None:
        return True, "no witness to replay"
    lasso = lasso_from_json(spec, doc["witness"])
    for rec_obj, rec in zip(doc["witness"]["steps"], lasso_steps(spec, lasso)):
        if step_json(spec, *rec) != rec_obj:
            return False, f"step {rec_obj['t']} differs from the recorded one"
    if not lasso.replays(spec):
        return False, "cycle does not return to its start"
    return True, f"witness replays: stem {len(lasso.stem)}, cycle {len(lasso.cycle)}"


# -- CSV ----------------------------------------------------------------------

def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()
