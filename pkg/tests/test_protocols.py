import pytest

from kpartition import sim
from kpartition.core import Configuration, group_counts, is_symmetric_protocol
from kpartition.errors import EvenP, InvariantViolation, UnknownCandidate
from kpartition.protocols import (build_bipartition_oddP, build_builtin, build_kpartition_asym,
                                  build_kpartition_sym_candidate, check_algorithm1_invariants)


def test_algorithm1_rules():
    spec = build_kpartition_asym(4, 2).spec
    assert spec.rule(2, 2) == (3, 2)
    assert spec.rule(3, 3) == (3, 3)
    assert spec.rule(1, 2) == (1, 2)
    assert spec.rule((1,), 3) == ((2,), 1)
    assert spec.rule((3,), 1) == ((3,), 1)


def test_degenerate_single_state():
    spec = build_kpartition_asym(1, 1).spec
    assert spec.agent_states == (0,)
    assert spec.rule(0, 0) == (0, 0)


def test_algorithm1_fair_run_partitions():
    spec = build_kpartition_asym(4, 2).spec
    for seed in range(20):
        tr = sim.run(spec, 4, "all_states_random", sim.weakly_fair(10, seed))
        assert tr.reason == "silent"
        assert sorted(tr.final.agents) == [0, 1, 2, 3]
        assert group_counts(tr.final, spec) == (2, 2)


def test_oddP_variant():
    built = build_bipartition_oddP(5)
    spec = built.spec
    assert spec.agent_states == (1, 2, 3, 4)
    assert spec.bs_initial == (1,)
    assert spec.k == 2
    finals = set()
    for seed in range(20):
        tr = sim.run(spec, 5, "all_states_random", sim.weakly_fair(None, seed))
        assert tr.reason == "silent"
        finals.add(tuple(sorted(tr.final.agents)))
    assert finals == {(1, 2, 3, 4, 4)}
    for seed in range(10):
        tr = sim.run(spec, 2, "all_states_random", sim.weakly_fair(None, seed))
        a, b = tr.final.agents
        assert a != b
        c = group_counts(tr.final, spec)
        assert abs(c[0] - c[1]) <= 1


@pytest.mark.parametrize("P", [4, 2, 1, 0])
def test_oddP_rejects_even(P):
    with pytest.raises(EvenP):
        build_bipartition_oddP(P)


@pytest.mark.parametrize("name", ["sym_climb", "erase_monotone"])
def test_sym_candidates_are_symmetric(name):
    built = build_kpartition_sym_candidate(name, 4, 2)
    assert is_symmetric_protocol(built.spec)
    assert len(built.spec.agent_states) == 5
    assert built.expected_properties["correct"] == "unknown"


def test_sym_candidate_rule_shapes():
    climb = build_kpartition_sym_candidate("sym_climb", 4, 2).spec
    assert climb.rule(2, 2) == (3, 3)
    assert climb.rule(4, 4) == (4, 4)
    erase = build_kpartition_sym_candidate("erase_monotone", 4, 2).spec
    assert erase.rule(3, 3) == (0, 0)
    assert erase.rule((2,), 0) == ((3,), 2)
    assert erase.rule((2,), 1) == ((2,), 1)


def test_unknown_candidate():
    with pytest.raises(UnknownCandidate):
        build_kpartition_sym_candidate("nope", 4, 2)
    with pytest.raises(UnknownCandidate):
        build_builtin("nope", 4, 2)


def test_builtin_shorthand():
    assert build_builtin("kpartition_asym", 6, 3).spec.k == 3
    assert build_builtin("bipartition_oddP", 5).spec.P == 5
    assert is_symmetric_protocol(build_builtin("kpartition_sym_candidate:sym_climb", 3, 2).spec)


def test_invariants_on_fair_run():
    spec = build_kpartition_asym(6, 2).spec
    tr = sim.run(spec, 4, "all_states_random", sim.weakly_fair(None, 7))
    rep = check_algorithm1_invariants(tr, spec)
    assert rep.ok and rep.final_checked and rep.final_M == 4


def test_invariants_single_agent():
    spec = build_kpartition_asym(3, 2).spec
    tr = sim.run(spec, 1, [2], sim.weakly_fair(None, 1))
    rep = check_algorithm1_invariants(tr, spec)
    assert rep.final_M == 1 and tr.final.agents == (0,)


def test_invariant_violation_detected():
    spec = build_kpartition_asym(4, 2).spec
    bad = sim.ExecutionTrace(spec, Configuration((2,), (1, 1)), sim.uniform_random(0), [], "budget")
    with pytest.raises(InvariantViolation) as exc:
        check_algorithm1_invariants(bad, spec)
    assert exc.value.step == 0


def test_invariant_violation_on_later_step():
    spec = build_kpartition_asym(4, 2).spec
    steps = [sim.StepRecord(0, 0, 1, ((1,), 3), ((2,), 1)),
             sim.StepRecord(1, 1, 2, (1, 3), (1, 2))]  # agent 2 drops without the BS
    tr = sim.ExecutionTrace(spec, Configuration((1,), (3, 3, 0)), sim.uniform_random(0), steps)
    with pytest.raises(InvariantViolation) as exc:
        check_algorithm1_invariants(tr, spec)
    assert exc.value.step == 2
