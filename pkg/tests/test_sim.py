import math
import pickle

import numpy as np
import pytest

from gatedcomp import rng, sim
from gatedcomp.policy import PolicyParams
from gatedcomp.sim import DifficultyProfile, ProblemSpec, SimConfig, SimError


def small(**kw):
    return SimConfig(population_size=100, heldout_size=0, seed=7, **kw)


def test_population_is_deterministic():
    a_problems, a_params = sim.init_population(small())
    b_problems, b_params = sim.init_population(small())
    assert a_problems == b_problems
    assert pickle.dumps(a_params.state_dict()) == pickle.dumps(b_params.state_dict())


def test_population_differs_across_seeds():
    a, _ = sim.init_population(small())
    b, _ = sim.init_population(SimConfig(population_size=100, heldout_size=0, seed=8))
    assert [p.difficulty for p in a] != [p.difficulty for p in b]


def test_heldout_split_is_separate():
    problems, params = sim.init_population(SimConfig(population_size=20, heldout_size=5))
    assert sum(p.heldout for p in problems) == 5
    assert len(set(params.sample_ids)) == 25


def _gated_fraction(profile):
    cfg = small()
    problems, params = sim.init_population(cfg, profile)
    idx = np.arange(len(problems))
    keys = sim.step_keys(sim.sample_base_keys(cfg.seed, "rollout", params.sample_ids), 0)
    block = sim.sample_block(params, idx, keys, 8, cfg.context_cap)
    return float((block.correct.sum(axis=1) == 8).mean())


def test_all_mastered_profile_is_gated():
    assert _gated_fraction("all-mastered") >= 0.95


def test_all_impossible_profile_has_no_gate():
    assert _gated_fraction("all-impossible") == 0.0


def test_profiles_shift_gating():
    assert _gated_fraction("mastered-heavy") > _gated_fraction("uniform") > _gated_fraction("hard-heavy")


def test_bad_profile():
    with pytest.raises(SimError):
        DifficultyProfile(0.5, 0.5, 0.5)
    with pytest.raises(SimError):
        sim.get_profile("nope")


def test_config_validation():
    with pytest.raises(SimError):
        SimConfig(rollouts_per_sample=1)
    with pytest.raises(SimError):
        SimConfig(context_cap=0)
    with pytest.raises(SimError):
        SimConfig(length_correctness_correlation=0.3)


def test_problem_spec_finite():
    with pytest.raises(SimError):
        ProblemSpec("x", float("nan"), 5.0, 4.0)


def _one(logit=0.0, mu=8.0, sigma=0.4):
    return PolicyParams(["x"], [logit], [mu], [-100.0], sigma), ProblemSpec("x", logit, mu, -100.0)


def test_sample_rollouts_count_and_determinism():
    params, prob = _one()
    a = sim.sample_rollouts(params, prob, 8, stream_key=123, step=4)
    b = sim.sample_rollouts(params, prob, 8, stream_key=123, step=4)
    assert len(a) == 8
    assert pickle.dumps(a) == pickle.dumps(b)
    assert a != sim.sample_rollouts(params, prob, 8, stream_key=124, step=4)


def test_sample_rollouts_needs_two():
    params, prob = _one()
    with pytest.raises(SimError):
        sim.sample_rollouts(params, prob, 1, 0)


def test_cap_saturation():
    params, prob = _one(logit=10.0, mu=math.log(1e7))
    out = sim.sample_rollouts(params, prob, 8, 5, context_cap=65536)
    assert all(r.length == 65536 and r.correct == 0 for r in out)


def test_cap_rule_holds_everywhere():
    params, prob = _one(logit=3.0, mu=math.log(50000), sigma=0.5)
    out = sim.sample_rollouts(params, prob, 2000, 9, context_cap=65536)
    assert max(r.length for r in out) <= 65536
    assert all(r.correct == 0 for r in out if r.length == 65536)
    assert any(r.length == 65536 for r in out) and any(r.length < 65536 for r in out)


def test_order_independent_generation():
    cfg = small()
    _, params = sim.init_population(cfg)
    base = sim.sample_base_keys(cfg.seed, "rollout", params.sample_ids)
    keys = sim.step_keys(base, 3)
    idx = np.arange(len(params.sample_ids))
    full = sim.sample_block(params, idx, keys, 8, cfg.context_cap)
    rev = sim.sample_block(params, idx[::-1], keys[::-1], 8, cfg.context_cap)
    np.testing.assert_array_equal(full.length, rev.length[::-1])
    np.testing.assert_array_equal(full.correct, rev.correct[::-1])


def test_empirical_passrate_and_log_length():
    params, _ = _one(logit=0.7, mu=7.0, sigma=0.4)
    n = 10_000
    block = sim.sample_block(params, np.array([0]), np.array([rng.derive_key(1, "stat")], dtype=np.uint64), n, 65536)
    p = 1 / (1 + math.exp(-0.7))
    se = math.sqrt(p * (1 - p) / n)
    assert abs(block.correct.mean() - p) <= 3 * se
    # lengths are ceil(X); log of the integer length sits slightly above log X
    log_len = np.log(block.length[0])
    assert abs(log_len.mean() - 7.0) <= 3 * 0.4 / math.sqrt(n) + 1.0 / math.exp(7.0)


def test_evaluate_examples():
    params = PolicyParams(["a", "b"], [10.0, 10.0], [6.0, 7.0], [-100.0, -100.0], 0.4)
    probs = [ProblemSpec("a", 10.0, 6.0, -100.0), ProblemSpec("b", 10.0, 7.0, -100.0)]
    ev = sim.evaluate(params, probs, 32, stream_key=1)
    assert ev.accuracy >= 0.999
    assert ev.draws == 64
    assert ev.min_length <= ev.mean_length <= ev.max_length
    one = sim.evaluate(params, probs[:1], 32, stream_key=1)
    assert one.draws == 32
    assert sim.evaluate(params, probs, 1, stream_key=1).draws == 2


def test_evaluate_errors():
    params, prob = _one()
    with pytest.raises(SimError):
        sim.evaluate(params, [], 32, 0)
    with pytest.raises(SimError):
        sim.evaluate(params, [prob], 0, 0)


def test_eval_uses_reduced_spread():
    params, prob = _one(mu=8.0, sigma=0.5)
    wide = sim.evaluate(params, [prob], 4000, 3, exploration_scale=1.0)
    narrow = sim.evaluate(params, [prob], 4000, 3, exploration_scale=0.6)
    assert narrow.max_length - narrow.min_length < wide.max_length - wide.min_length


def test_overcompression_lowers_success():
    params = PolicyParams(["x"], [3.0], [8.0], [8.0], 0.4, coupling=30.0, softness=0.05)
    before = params.success_prob([0])[0]
    params.log_length[0] = 7.5
    assert params.success_prob([0])[0] < before - 0.5
