from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gatedcomp.rewards import (
    LengthTargets,
    RewardError,
    RolloutRecord,
    build_sample_state,
    compute_length_targets,
    compute_passrate,
    gated_rewards_array,
    global_soft_penalty,
    hard_truncate,
    shape_group,
    shaped_reward,
    soft_length_penalty,
)


def rolls(lengths, correct=None, sid="s"):
    correct = correct if correct is not None else [1] * len(lengths)
    return [RolloutRecord(sid, 0, l, c) for l, c in zip(lengths, correct)]


# -- passrate --


@pytest.mark.parametrize(
    "rewards, expected",
    [([1] * 8, Fraction(1)), ([1, 0, 1, 0], Fraction(1, 2)), ([0] * 8, Fraction(0))],
)
def test_passrate_examples(rewards, expected):
    assert compute_passrate(rewards) == expected


def test_passrate_is_exact_rational():
    assert compute_passrate([1, 1, 0]) == Fraction(2, 3)
    assert isinstance(compute_passrate([1, 1, 0]), Fraction)


def test_passrate_empty_errors():
    with pytest.raises(RewardError, match="no rollouts"):
        compute_passrate([])


def test_gate_uses_integer_count():
    state = build_sample_state("s", rolls([10] * 8, [1] * 7 + [0]))
    assert state.passrate == Fraction(7, 8)
    assert not state.gate_open
    assert state.targets is None


# -- length targets --


@pytest.mark.parametrize(
    "lengths, start, stop",
    [([100, 200, 300], 200, 300), ([100, 200, 300, 400], 200, 400), ([150, 150, 150, 150], 150, 150)],
)
def test_length_target_examples(lengths, start, stop):
    assert compute_length_targets(rolls(lengths)) == LengthTargets(start, stop)


def test_length_targets_ignore_input_order():
    assert compute_length_targets(rolls([400, 100, 300, 200])) == LengthTargets(200, 400)


def test_length_targets_empty_errors():
    with pytest.raises(RewardError):
        compute_length_targets([])


def test_length_targets_reject_incorrect_rollouts():
    with pytest.raises(RewardError):
        compute_length_targets(rolls([100, 200], [1, 0]))


@given(st.lists(st.integers(1, 70000), min_size=1, max_size=16))
def test_targets_are_observed_and_ordered(lengths):
    t = compute_length_targets(rolls(lengths))
    assert t.l_start <= t.l_max
    assert t.l_start in lengths and t.l_max in lengths


# -- soft penalty --


@pytest.mark.parametrize(
    "length, targets, expected",
    [(100, (100, 200), 0.0), (150, (100, 200), -0.5), (250, (100, 200), -1.0), (999, (150, 150), 0.0)],
)
def test_soft_penalty_examples(length, targets, expected):
    assert soft_length_penalty(length, LengthTargets(*targets)) == expected


def test_soft_penalty_at_max_is_minus_one():
    assert soft_length_penalty(200, LengthTargets(100, 200)) == -1.0


@given(st.integers(1, 50000), st.integers(0, 50000), st.integers(1, 60000))
def test_soft_penalty_bounded_and_monotone(start, span, length):
    t = LengthTargets(start, start + span)
    p = soft_length_penalty(length, t)
    assert -1.0 <= p <= 0.0
    assert soft_length_penalty(length + 1, t) <= p
    if span == 0:
        assert p == 0.0


def test_invalid_targets_rejected():
    with pytest.raises(RewardError):
        LengthTargets(300, 200)


# -- shaped reward --


@pytest.mark.parametrize("args, expected", [((1, True, -0.5), 0.5), ((1, False, 0.0), 1.0), ((0, False, 0.0), 0.0)])
def test_shaped_reward_examples(args, expected):
    assert shaped_reward(*args) == expected


def test_shaped_reward_contract_violation():
    with pytest.raises(RewardError):
        shaped_reward(1, False, -0.25)


def test_shape_group_with_failure_has_no_penalty():
    state, penalties, shaped = shape_group(rolls([100, 5000, 90000], [1, 1, 0]))
    assert not state.gate_open
    assert penalties == [0.0, 0.0, 0.0]
    assert shaped == [1.0, 1.0, 0.0]


def test_shape_group_all_correct():
    _, penalties, shaped = shape_group(rolls([100, 200, 300]))
    assert penalties == [0.0, 0.0, -1.0]
    assert shaped == [1.0, 1.0, 0.0]


# -- baselines --


@pytest.mark.parametrize("length, expected", [(26000, 0.0), (45000, -0.5), (70000, -1.0)])
def test_global_soft_penalty_examples(length, expected):
    assert global_soft_penalty(length, 26000, 64000) == expected


def test_global_soft_penalty_bad_bounds():
    with pytest.raises(RewardError):
        global_soft_penalty(100, 500, 500)


def test_hard_truncate_examples():
    r = RolloutRecord("s", 3, 300, 1)
    cut = hard_truncate(r, 200)
    assert (cut.length, cut.correct, cut.sample_id, cut.step) == (200, 0, "s", 3)
    assert hard_truncate(RolloutRecord("s", 0, 150, 1), 200) == RolloutRecord("s", 0, 150, 1)
    assert hard_truncate(RolloutRecord("s", 0, 200, 1), 200) == RolloutRecord("s", 0, 200, 1)


def test_record_validation():
    with pytest.raises(RewardError):
        RolloutRecord("s", 0, 0, 1)
    with pytest.raises(RewardError):
        RolloutRecord("s", 0, 10, 2)
    with pytest.raises(RewardError):
        RolloutRecord("s", -1, 10, 1)


# -- vectorized forms must agree exactly with the scalar path --


@settings(max_examples=200)
@given(
    st.lists(
        st.lists(st.tuples(st.integers(1, 70000), st.integers(0, 1)), min_size=8, max_size=8),
        min_size=1,
        max_size=6,
    ).map(lambda gs: [[(l, c) if i % 3 else (l, 1) for i, (l, c) in enumerate(g)] for g in gs])
)
def test_vectorized_matches_scalar(groups):
    L = np.array([[l for l, _ in g] for g in groups])
    C = np.array([[c for _, c in g] for g in groups])
    gate, penalty, reward = gated_rewards_array(L, C)
    for g, grp in enumerate(groups):
        state, pens, shaped = shape_group(rolls([l for l, _ in grp], [c for _, c in grp]))
        assert bool(gate[g]) == state.gate_open
        assert penalty[g].tolist() == pens
        assert reward[g].tolist() == shaped


@given(st.lists(st.lists(st.integers(1, 70000), min_size=8, max_size=8), min_size=1, max_size=6))
def test_vectorized_matches_scalar_on_gated_groups(groups):
    L = np.array(groups)
    gate, penalty, reward = gated_rewards_array(L, np.ones_like(L))
    assert gate.all()
    for g, lengths in enumerate(groups):
        _, pens, shaped = shape_group(rolls(lengths))
        assert penalty[g].tolist() == pens
        assert reward[g].tolist() == shaped
