import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bcast.channel import (
    ChannelError,
    ChannelModel,
    from_spec,
    load_channel,
    make_spatially_independent,
    make_symmetric,
    mask_of,
    members,
    subsets,
    symmetric_independent_q,
)


def test_single_receiver():
    ch = make_spatially_independent([0.7])
    assert ch.probs.tolist() == pytest.approx([0.3, 0.7])


def test_perfect_pair():
    ch = make_spatially_independent([1, 1])
    assert ch.probs.tolist() == [0, 0, 0, 1]


def test_uniform_three_and_marginalization():
    ch = make_spatially_independent([0.5, 0.5, 0.5])
    assert np.allclose(ch.probs, 0.125)
    assert ch.probs.sum() == pytest.approx(1.0)
    for k in range(3):
        # re-derive each marginal by summing the patterns that contain k
        assert sum(ch.probs[S] for S in range(8) if S >> k & 1) == pytest.approx(0.5)


def test_invalid_marginals():
    for bad in ([1.2], [-0.1, 0.5], [], [float("nan")]):
        with pytest.raises(ChannelError):
            make_spatially_independent(bad)


def test_probabilities_must_normalize():
    with pytest.raises(ChannelError, match="sum"):
        ChannelModel(2, [0.5, 0.2, 0.2, 0.2])
    with pytest.raises(ChannelError):
        ChannelModel(2, [0.5, 0.5, 0.0])
    with pytest.raises(ChannelError):
        ChannelModel(2, [1.5, -0.5, 0.0, 0.0])


@pytest.mark.parametrize("K", [2, 3, 5])
@pytest.mark.parametrize("p", [0.1, 0.5, 0.93])
def test_symmetric_constructors_agree(K, p):
    a = make_symmetric(K, symmetric_independent_q(K, p))
    b = make_spatially_independent([p] * K)
    np.testing.assert_allclose(a.probs, b.probs, atol=1e-15)
    assert a.is_symmetric() and a.is_spatially_independent()


def test_symmetric_perfect_and_negative():
    ch = make_symmetric(2, [0, 0, 1])
    assert ch.p_union(1) == ch.p_union(2) == 1
    with pytest.raises(ChannelError):
        make_symmetric(3, [0.5, -0.1, 0.1, 0.2])


def test_p_union():
    ch = make_spatially_independent([0.2, 0.5, 0.8])
    assert ch.p_union(0) == 0
    assert ch.p_union(0b011) == pytest.approx(1 - 0.8 * 0.5)
    assert ch.p_union(ch.full) == pytest.approx(1 - ch.probs[0])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=5))
def test_p_union_closed_form(p):
    ch = make_spatially_independent(p)
    for S in range(1 << len(p)):
        expect = 1 - math.prod(1 - p[k] for k in members(S))
        assert ch.p_union(S) == pytest.approx(expect, abs=1e-12)


def test_f_p():
    ch = make_spatially_independent([0.2, 0.5, 0.8])
    assert ch.f_p(0, 0) == pytest.approx(1.0)
    assert ch.f_p(0b001, 0b100) == pytest.approx(0.2 * 0.2)
    for S in range(8):
        assert ch.f_p(S, 7 & ~S) == ch.probs[S]
    with pytest.raises(ChannelError):
        ch.f_p(1, 1)
    with pytest.raises(ChannelError):
        ch.p_union(8)


def test_general_channel_is_neither():
    ch = ChannelModel(2, [0.1, 0.1, 0.0, 0.8])
    assert not ch.is_spatially_independent()
    assert not ch.is_symmetric()
    assert ch.p_union(1) == pytest.approx(0.9)
    assert ch.p_union(2) == pytest.approx(0.8)


def test_deterministic_sampling():
    ch = ChannelModel(2, [0, 0, 0, 1])
    rng = np.random.default_rng(0)
    assert set(ch.sample_many(rng, 1000).tolist()) == {3}
    assert ch.sample(rng) == 3


def test_sampling_frequencies_within_4_sigma():
    ch = make_spatially_independent([0.2, 0.5, 0.9])
    n = 10**6
    draws = ch.sample_many(np.random.default_rng(42), n)
    counts = np.bincount(draws, minlength=8)
    for S in range(8):
        p = ch.probs[S]
        sigma = math.sqrt(n * p * (1 - p))
        assert abs(counts[S] - n * p) <= 4 * sigma + 1e-9, S


def test_sampling_is_reproducible():
    ch = make_spatially_independent([0.3, 0.6])
    a = ch.sample_many(np.random.default_rng(7), 100)
    b = ch.sample_many(np.random.default_rng(7), 100)
    assert np.array_equal(a, b)


def test_permuted_relabels_receivers():
    ch = make_spatially_independent([0.1, 0.5, 0.9])
    swapped = ch.permuted([2, 0, 1])
    np.testing.assert_allclose(swapped.marginals(), [0.9, 0.1, 0.5])


def test_mask_helpers():
    assert mask_of([0, 2]) == 5
    assert members(5) == [0, 2]
    assert sorted(subsets(5)) == [0, 1, 4, 5]


def test_json_round_trip(tmp_path):
    ch = ChannelModel(2, [0.25, 0.25, 0.0, 0.5])
    path = tmp_path / "ch.json"
    path.write_text(json.dumps(ch.to_json()))
    assert load_channel(str(path)) == ch
    ind = make_spatially_independent([0.3, 0.4])
    assert np.allclose(from_spec(ind.to_json()).probs, ind.probs)


def test_spec_diagnostics(tmp_path):
    with pytest.raises(ChannelError, match="unknown channel type"):
        from_spec({"type": "gaussian"})
    with pytest.raises(ChannelError, match="missing field"):
        from_spec({"type": "independent"})
    with pytest.raises(ChannelError, match="bitmask"):
        from_spec({"type": "general", "K": 2, "probs": {"9": 1.0}})
    bad = tmp_path / "bad.json"
    bad.write_text('{"type": "independent", "p": [0.5,}')
    with pytest.raises(ChannelError, match="line 1"):
        load_channel(str(bad))
