import pytest

from kpartition import sim
from kpartition.core import Configuration, unordered_pairs
from kpartition.errors import PolicyInfeasible
from kpartition.protocols import build_kpartition_asym

from oracles import toy_protocol


@pytest.fixture
def alg4():
    return build_kpartition_asym(4, 2).spec


def _steps_only(spec, n, policy, T, initial=None):
    initial = initial or [spec.agent_states[0]] * n
    return sim.run(spec, n, initial, policy, max_steps=T, stop_on_silent=False)


def test_weakly_fair_run_converges(alg4):
    for seed in range(10):
        tr = sim.run(alg4, 4, [3, 3, 3, 3], sim.weakly_fair(10, seed))
        assert tr.reason == "silent"
        assert sorted(tr.final.agents) == [0, 1, 2, 3]


def test_single_agent_only_bs_pairs(alg4):
    tr = _steps_only(alg4, 1, sim.uniform_random(3), 50)
    assert set(tr.pair_sequence()) <= {(0, 1), (1, 0)}


def test_pair_doubling_pattern(alg4):
    tr = _steps_only(alg4, 3, sim.pair_doubling(0, sim.uniform_random(5)), 6)
    seq = tr.pair_sequence()
    assert seq[0] == seq[1] and seq[2] == seq[3] and seq[4] == seq[5]


def test_pair_doubling_after_pivot(alg4):
    tr = _steps_only(alg4, 3, sim.pair_doubling(3, sim.uniform_random(5)), 9)
    seq = tr.pair_sequence()
    assert seq[3] == seq[4] and seq[5] == seq[6] and seq[7] == seq[8]


def test_window_contract(alg4):
    for n in (1, 2, 3, 4):
        L = len(unordered_pairs(n))
        for B in (L, L + 1, 2 * L):
            tr = _steps_only(alg4, n, sim.weakly_fair(B, n * 31 + B), 3 * B)
            audit = sim.fairness_audit(tr)
            assert audit.ok, (n, B, audit.max_gap)
            assert max(audit.max_gap.values()) < B
            assert min(audit.counts.values()) >= 3


def test_infeasible_window(alg4):
    with pytest.raises(PolicyInfeasible):
        sim.run(alg4, 3, [0, 0, 0], sim.weakly_fair(5, 0))


def test_scripted_pair_out_of_range(alg4):
    with pytest.raises(PolicyInfeasible):
        sim.run(alg4, 2, [0, 0], sim.scripted([(1, 3)]))


def test_audit_flags_untouched_pairs(alg4):
    tr = _steps_only(alg4, 3, sim.scripted([(1, 2)]), 20)
    audit = sim.fairness_audit(tr)
    assert audit.counts[(1, 2)] == 20
    assert set(audit.flagged) == set(unordered_pairs(3)) - {(1, 2)}
    assert all(audit.max_gap[p] == 20 for p in audit.flagged)


def test_uniform_random_touches_every_pair(alg4):
    tr = _steps_only(alg4, 4, sim.uniform_random(2024), 2000)
    assert sim.fairness_audit(tr).flagged == []


def test_replay_determinism(alg4):
    a = sim.run(alg4, 4, "all_states_random", sim.weakly_fair(12, 99))
    b = sim.run(alg4, 4, "all_states_random", sim.weakly_fair(12, 99))
    assert a.steps == b.steps and a.initial == b.initial
    assert sim.verify_replay(a)
    configs = sim.replay(alg4, a.initial, a.pair_sequence())
    assert configs[-1] == a.final


def test_bs_initial_overrides_configuration(alg4):
    tr = sim.run(alg4, 2, Configuration((3,), (1, 1)), sim.weakly_fair(None, 0))
    assert tr.initial.bs == (0,)


def test_budget_recorded():
    spec = toy_protocol([((0, 0), (1, 1)), ((1, 1), (0, 0))], [0, 1])
    tr = sim.run(spec, 2, [0, 0], sim.uniform_random(1), max_steps=25)
    assert tr.reason == "budget" and len(tr.steps) == 25


def test_stop_predicate(alg4):
    tr = sim.run(alg4, 3, [2, 2, 2], sim.weakly_fair(None, 4),
                 stop_predicate=lambda c: 0 in c.agents)
    assert tr.reason == "target" and 0 in tr.final.agents


def test_detect_silent(alg4):
    assert sim.detect_silent(Configuration((4,), (0, 1, 2, 3)), alg4)
    assert not sim.detect_silent(Configuration((0,), (0, 1, 2, 3)), alg4)
    null = toy_protocol([], [0, 1, 2])
    assert sim.detect_silent(Configuration(-1, (2, 2, 0)), null)


def test_reduced_mode_collapses_homonyms_first():
    spec = toy_protocol([((0, 0), (1, 1)), ((1, 1), (2, 2)), ((0, 1), (1, 0))], [0, 1, 2], P=4)
    policy = sim.reduced(sim.uniform_random(8), exempt=[2])
    tr = _steps_only(spec, 4, policy, 60, initial=[0, 0, 1, 2])
    configs = list(tr.configurations())
    for rec, config in zip(tr.steps, configs):
        p, q = config.state_of(rec.i), config.state_of(rec.j)
        homonym_step = rec.i != 0 and rec.j != 0 and p == q and p not in policy.exempt
        if not homonym_step:
            live = [s for s in config.agents if s not in policy.exempt]
            assert len(live) == len(set(live))


def test_derive_seeds_is_deterministic():
    assert sim.derive_seeds(5, 4) == sim.derive_seeds(5, 4)
    assert len(set(sim.derive_seeds(5, 100))) == 100


@pytest.mark.parametrize("text,kind", [("random", "uniform_random"), ("weakfair:B=12", "weakly_fair_enforced"),
                                       ("doubling:pivot=2", "pair_doubling"),
                                       ("reduced:exempt=3/4", "reduced"),
                                       ("scripted:pairs=0-1/1-2", "scripted")])
def test_parse_scheduler(text, kind):
    pol = sim.parse_scheduler(text, 3)
    assert pol.kind == kind and pol.seed == 3
    assert sim.SchedulerPolicy.from_json(pol.to_json()) == pol
