import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gatedcomp.rewards import RolloutRecord, build_sample_state
from gatedcomp.rng import Stream
from gatedcomp.sampler import MixtureConfig, SamplerError, draw_batch, draw_uniform, partition


def state(sid, correct):
    return build_sample_state(sid, [RolloutRecord(sid, 0, 100 + i, c) for i, c in enumerate(correct)])


def test_partition_examples():
    all_gated = [state(f"s{i}", [1] * 8) for i in range(3)]
    comp, rest = partition(all_gated)
    assert (comp, rest) == (all_gated, [])
    states = [state("a", [1, 1]), state("b", [1, 0]), state("c", [0, 0]), state("d", [1, 1])]
    comp, rest = partition(states)
    assert [s.sample_id for s in comp] == ["a", "d"]
    assert [s.sample_id for s in rest] == ["b", "c"]
    comp, rest = partition([state("e", [1] * 7 + [0])])
    assert comp == [] and len(rest) == 1


def test_quota_rounding():
    assert MixtureConfig(0.1, 256).compressible_quota == 26
    assert MixtureConfig(0.5, 2).compressible_quota == 1
    assert MixtureConfig(0.25, 10).compressible_quota == 3  # 2.5 rounds up


def test_mixture_validation():
    for rho in (0.0, 1.0, -0.1):
        with pytest.raises(SamplerError):
            MixtureConfig(rho, 256)
    with pytest.raises(SamplerError):
        MixtureConfig(0.1, 1)


def test_draw_examples():
    comp, rest = list(range(100)), list(range(100, 400))
    b = draw_batch(comp, rest, MixtureConfig(0.1, 256), Stream(1))
    assert (b.n_compressible, b.n_rest, b.shortfall) == (26, 230, 0)
    b = draw_batch(list(range(10)), list(range(10, 200)), MixtureConfig(0.4, 100), Stream(2))
    assert (b.n_compressible, b.n_rest, b.shortfall) == (10, 90, 30)
    assert b.metadata() == {"quota": 40, "compressible": 10, "rest": 90, "shortfall": 30}
    b = draw_batch([0, 1], [2, 3], MixtureConfig(0.5, 2), Stream(3))
    assert (b.n_compressible, b.n_rest) == (1, 1)


def test_backfill_from_compressible_when_rest_is_short():
    b = draw_batch(list(range(50)), [50, 51], MixtureConfig(0.1, 20), Stream(4))
    assert (b.n_compressible, b.n_rest, b.shortfall) == (18, 2, 16)


def test_draw_errors():
    with pytest.raises(SamplerError):
        draw_batch([1], [2], MixtureConfig(0.5, 4), Stream(0))
    with pytest.raises(SamplerError, match="overlap"):
        draw_batch([1, 2], [2, 3], MixtureConfig(0.5, 2), Stream(0))
    with pytest.raises(SamplerError):
        draw_uniform([1], 2, Stream(0))


@given(
    st.integers(0, 120),
    st.integers(0, 120),
    st.floats(0.01, 0.99),
    st.integers(2, 64),
    st.integers(0, 2**32),
)
def test_batch_invariants(n_comp, n_rest, rho, size, key):
    comp, rest = list(range(n_comp)), list(range(1000, 1000 + n_rest))
    cfg = MixtureConfig(rho, size)
    if n_comp + n_rest < size:
        with pytest.raises(SamplerError):
            draw_batch(comp, rest, cfg, Stream(key))
        return
    b = draw_batch(comp, rest, cfg, Stream(key))
    assert len(b.sample_ids) == size
    assert len(set(b.sample_ids)) == size
    assert b.n_compressible == sum(1 for s in b.sample_ids if s < 1000)
    assert b.shortfall == abs(cfg.compressible_quota - b.n_compressible)


def test_mean_fraction_matches_rho():
    cfg = MixtureConfig(0.1, 256)
    comp, rest = list(range(400)), list(range(400, 1400))
    stream = Stream(99)
    fractions = []
    for _ in range(1000):
        b = draw_batch(comp, rest, cfg, stream)
        fractions.append(b.n_compressible / 256)
    assert abs(np.mean(fractions) - 0.1) <= 0.01


def test_draws_are_uniform_within_pool():
    comp = list(range(50))
    counts = np.zeros(50)
    stream = Stream(5)
    for _ in range(2000):
        b = draw_batch(comp, list(range(50, 300)), MixtureConfig(0.1, 100), stream)
        for s in b.sample_ids:
            if s < 50:
                counts[s] += 1
    expected = 2000 * 10 / 50
    assert np.all(np.abs(counts - expected) < 5 * np.sqrt(expected))


def test_partition_is_fresh_each_step():
    step0 = [state("a", [1] * 8), state("b", [0] * 8)]
    step1 = [state("a", [1] * 7 + [0]), state("b", [0] * 8)]
    assert [s.sample_id for s in partition(step0)[0]] == ["a"]
    assert partition(step1)[0] == []
    assert [s.sample_id for s in partition(step1)[1]] == ["a", "b"]
