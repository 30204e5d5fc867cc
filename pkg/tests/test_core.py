import dataclasses

import pytest

from kpartition.core import (BS, Configuration, TransitionClass, canonicalize, classify_transition,
                             group_counts, is_balanced, is_silent, is_symmetric_protocol,
                             make_configuration, step, validate_protocol)
from kpartition.errors import BadIdentity, ProtocolValidationError, RegisterOverflow
from kpartition.protocols import build_kpartition_asym

from oracles import toy_protocol


@pytest.fixture
def alg4():
    return build_kpartition_asym(4, 2).spec


def _raw_alg(P=4, k=2):
    return build_kpartition_asym(P, k).spec.to_raw()


def test_algorithm1_spec_is_valid(alg4):
    assert alg4.agent_states == (0, 1, 2, 3)
    assert alg4.bs_states == tuple((m,) for m in range(5))
    assert alg4.bs_initial == (0,)
    assert alg4.colors == {0: 0, 1: 1, 2: 0, 3: 1}


def test_missing_pair_is_reported():
    raw = _raw_alg()
    raw["default_null"] = False
    with pytest.raises(ProtocolValidationError) as exc:
        validate_protocol(raw)
    msgs = [m for c, m in exc.value.errors if c == "MissingRule"]
    assert any("(2, 3)" in m for m in msgs)


def test_missing_rules_default_to_null_when_asked():
    spec = validate_protocol(_raw_alg(), default_null=True)
    assert spec.rule(2, 3) == (2, 3)


def test_color_gap():
    raw = _raw_alg()
    del raw["colors"]["2"]
    with pytest.raises(ProtocolValidationError) as exc:
        validate_protocol(raw, default_null=True)
    assert set(exc.value.codes) == {"ColorGap"}


def test_duplicate_rule():
    raw = _raw_alg()
    raw["rules"].append([[2, 2], [0, 0]])
    with pytest.raises(ProtocolValidationError) as exc:
        validate_protocol(raw, default_null=True)
    assert "DuplicateRule" in exc.value.codes


def test_state_clash():
    raw = {"P": 2, "k": 2, "agent_states": [0, 1], "colors": {"0": 0, "1": 1},
           "bs": {"states": [1, 5]}, "rules": []}
    with pytest.raises(ProtocolValidationError) as exc:
        validate_protocol(raw, default_null=True)
    assert "StateClash" in exc.value.codes


def test_rule_moving_agent_into_bs_state_rejected():
    raw = {"P": 2, "k": 2, "agent_states": [0, 1], "colors": {"0": 0, "1": 1},
           "bs": {"states": [7]}, "rules": [[[0, 0], [7, 0]]]}
    with pytest.raises(ProtocolValidationError) as exc:
        validate_protocol(raw, default_null=True)
    assert "StateClash" in exc.value.codes


def test_errors_are_collected_together():
    raw = _raw_alg()
    raw["default_null"] = False
    del raw["colors"]["1"]
    with pytest.raises(ProtocolValidationError) as exc:
        validate_protocol(raw)
    assert {"ColorGap", "MissingRule"} <= set(exc.value.codes)


@pytest.mark.parametrize("M,S,M2,S2", [(0, 2, 1, 0), (3, 1, 3, 1), (2, 3, 3, 2)])
def test_bs_step(alg4, M, S, M2, S2):
    c = make_configuration(alg4, (M,), [S, 0])
    d = step(c, BS, 1, alg4)
    assert d.bs == (M2,) and d.agents[0] == S2 and d.agents[1] == 0
    # the responder orientation behaves the same
    assert step(c, 1, BS, alg4) == d


def test_homonym_steps(alg4):
    c = make_configuration(alg4, (0,), [2, 2])
    assert step(c, 1, 2, alg4).agents == (3, 2)
    assert step(c, 2, 1, alg4).agents == (2, 3)
    c = make_configuration(alg4, (0,), [3, 3])
    assert step(c, 1, 2, alg4) == c


def test_step_is_local(alg4):
    c = make_configuration(alg4, (0,), [1, 1, 3, 0])
    d = step(c, 1, 2, alg4)
    assert d.agents[2:] == c.agents[2:] and d.bs == c.bs


@pytest.mark.parametrize("i,j", [(1, 1), (0, 0), (0, 5), (-1, 2)])
def test_bad_identity(alg4, i, j):
    c = make_configuration(alg4, (0,), [1, 2])
    with pytest.raises(BadIdentity):
        step(c, i, j, alg4)


def test_register_overflow_detected(alg4):
    # validated specs cannot leave their declared ranges; the runtime guard
    # catches a hand-edited table that does
    bad = dataclasses.replace(alg4, delta={**alg4.delta, ((4,), 3): ((5,), 3)})
    c = make_configuration(bad, (4,), [3])
    with pytest.raises(RegisterOverflow):
        step(c, BS, 1, bad)


def test_configuration_bounds(alg4):
    with pytest.raises(ValueError):
        make_configuration(alg4, (0,), [0] * 5)
    with pytest.raises(ValueError):
        make_configuration(alg4, (0,), [])
    with pytest.raises(ValueError):
        make_configuration(alg4, (0,), [7])


def test_classify_transition():
    assert classify_transition(2, 2, 3, 2) is TransitionClass.ASYMMETRIC
    assert classify_transition(3, 3, 3, 3) is TransitionClass.NULL
    assert classify_transition(1, 2, 2, 1) is TransitionClass.SYMMETRIC
    assert classify_transition(2, 2, 0, 0) is TransitionClass.SYMMETRIC


def test_symmetry_classification(alg4):
    assert not is_symmetric_protocol(alg4)
    assert is_symmetric_protocol(toy_protocol([], [0, 1, 2]))
    climb = toy_protocol([((s, s), (s + 1, s + 1)) for s in range(3)], [0, 1, 2, 3])
    assert is_symmetric_protocol(climb)


def test_group_counts(alg4):
    assert group_counts(Configuration((4,), (0, 1, 2, 3)), alg4) == (2, 2)
    assert group_counts(Configuration((4,), (3,)), alg4) == (0, 1)
    assert group_counts(Configuration((4,), (3, 3)), alg4) == (0, 2)
    assert is_balanced((2, 2)) and is_balanced((2, 1)) and not is_balanced((0, 2))


def test_canonicalize():
    c = Configuration((0,), (3, 0, 2))
    assert canonicalize(c).agents == (0, 2, 3)
    assert canonicalize(canonicalize(c)) == canonicalize(c)
    assert canonicalize(Configuration((0,), (2, 3, 0))) == canonicalize(c)


def test_silence(alg4):
    assert is_silent(Configuration((4,), (0, 1, 2, 3)), alg4)
    assert not is_silent(Configuration((0,), (0, 1, 2, 3)), alg4)
    assert is_silent(Configuration(-1, (0, 0, 1)), toy_protocol([], [0, 1]))
