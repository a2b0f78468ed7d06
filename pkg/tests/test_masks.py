import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mriprime.masks import Mask, MaskSpec, Pattern, apply_mask, center_block, gen_mask, mask_to_channel

PATTERNS = list(Pattern)


def test_w32_example():
    spec = MaskSpec(32, 4, 0.08, "random", 7)
    assert spec.num_low == 3
    m = gen_mask(spec)
    assert m.num_sampled == 8
    assert np.all(m.sampled[center_block(32, 3)])
    np.testing.assert_array_equal(center_block(32, 3), [15, 16, 17])


def test_w368_arithmetic():
    spec = MaskSpec(368, 4, 0.08, "equispaced_fixed", 0)
    assert (spec.num_low, spec.num_total, spec.num_outer) == (29, 92, 63)


def test_center_block_even_sizes_left_biased():
    np.testing.assert_array_equal(center_block(10, 4), [3, 4, 5, 6])
    np.testing.assert_array_equal(center_block(9, 3), [3, 4, 5])


@pytest.mark.parametrize("pattern", PATTERNS)
def test_deterministic(pattern):
    spec = MaskSpec(64, 4, 0.08, pattern, 11)
    assert gen_mask(spec).sampled.tobytes() == gen_mask(spec).sampled.tobytes()


@pytest.mark.parametrize("width", [32, 64, 128, 320, 368])
@pytest.mark.parametrize("r", [4, 8])
@pytest.mark.parametrize("pattern", PATTERNS)
def test_cardinality_and_acceleration(width, r, pattern):
    cf = 0.08 if r == 4 else 0.04
    for seed in range(20):
        spec = MaskSpec(width, r, cf, pattern, seed)
        m = gen_mask(spec)
        total = round(width / r)
        if pattern is Pattern.RANDOM_UNIFORM:
            assert m.num_sampled == spec.num_total
        else:
            assert abs(m.num_sampled - total) <= 2
        assert abs(width / m.num_sampled - r) <= 0.1 * r
        assert np.all(m.sampled[center_block(width, spec.num_low)])


def test_random_offset_distribution():
    """10^4 seeds: every integer start occurs and marginals match outer/(W-low)."""
    spec = MaskSpec(64, 4, 0.08, "equispaced_random_offset", 0)
    low, outer = spec.num_low, spec.num_outer
    cand = np.setdiff1d(np.arange(64), center_block(64, low))
    n_seeds = 10_000
    counts = np.zeros(64)
    first = set()
    for s in range(n_seeds):
        m = gen_mask(spec.with_seed(s))
        counts += m.sampled
        first.add(int(np.flatnonzero(m.sampled[cand])[0]))
    p = outer / cand.size
    se = np.sqrt(p * (1 - p) / n_seeds)
    assert np.all(np.abs(counts[cand] / n_seeds - p) < 3 * se)
    step = cand.size / outer
    assert first == set(range(int(np.ceil(step))))


def test_random_uniform_marginals():
    spec = MaskSpec(32, 4, 0.08, "random", 0)
    cand = np.setdiff1d(np.arange(32), center_block(32, spec.num_low))
    counts = np.zeros(32)
    for s in range(10_000):
        counts += gen_mask(spec.with_seed(s)).sampled
    p = spec.num_outer / cand.size
    se = np.sqrt(p * (1 - p) / 10_000)
    assert np.all(np.abs(counts[cand] / 10_000 - p) < 4 * se)


def test_fixed_pattern_ignores_seed():
    a = gen_mask(MaskSpec(64, 4, 0.08, "equispaced_fixed", 1))
    b = gen_mask(MaskSpec(64, 4, 0.08, "equispaced_fixed", 2))
    np.testing.assert_array_equal(a.sampled, b.sampled)


def test_spec_errors():
    with pytest.raises(ValueError):
        MaskSpec(32, 1, 0.08)
    with pytest.raises(ValueError):
        MaskSpec(32, 4, 0.0)
    with pytest.raises(ValueError):
        MaskSpec(32, 4, 0.01)  # empty centre block
    with pytest.raises(ValueError):
        MaskSpec(32, 4, 0.5)  # centre exceeds floor(W/R)
    with pytest.raises(ValueError):
        gen_mask(MaskSpec(32, 4, 0.25))  # outer == 0
    with pytest.raises(ValueError):
        Pattern.parse("spiral")


def test_mask_to_channel_examples():
    ch = mask_to_channel(Mask(3, np.array([True, False, False])), 2)
    np.testing.assert_array_equal(ch.data[0, 0], [[1, 0, 0], [1, 0, 0]])
    ones = mask_to_channel(Mask(4, np.ones(4, bool)), 3)
    assert np.all(ones.data == 1.0) and ones.shape == (1, 1, 3, 4)
    ch = mask_to_channel(gen_mask(MaskSpec(64, 4, 0.08, "random", 2)), 64)
    assert set(np.unique(ch.data)) <= {0.0, 1.0}


def test_apply_mask_examples():
    rng = np.random.default_rng(0)
    k = rng.standard_normal((4, 8)) + 1j
    np.testing.assert_array_equal(apply_mask(k, Mask(8, np.ones(8, bool))), k)
    sampled = np.zeros(8, bool)
    sampled[center_block(8, 3)] = True
    out = apply_mask(k, Mask(8, sampled))
    assert np.count_nonzero(np.abs(out).sum(axis=0)) == 3
    np.testing.assert_array_equal(apply_mask(out, Mask(8, sampled)), out)
    with pytest.raises(ValueError):
        apply_mask(k, Mask(6, np.ones(6, bool)))


def test_json_round_trip(tmp_path):
    m = gen_mask(MaskSpec(64, 8, 0.04, "equispaced_random_offset", 9))
    doc = m.to_json()
    assert set(doc) == {"width", "sampled_indices", "spec"}
    assert doc["sampled_indices"] == sorted(doc["sampled_indices"])
    back = Mask.from_json(json.loads(json.dumps(doc)))
    np.testing.assert_array_equal(back.sampled, m.sampled)
    doc["sampled_indices"] = doc["sampled_indices"][1:]
    with pytest.raises(ValueError):
        Mask.from_json(doc)
    m.save(tmp_path / "m.json")
    np.testing.assert_array_equal(Mask.load(tmp_path / "m.json").sampled, m.sampled)


@settings(max_examples=60, deadline=None)
@given(
    st.integers(16, 400),
    st.sampled_from([2, 3, 4, 6, 8]),
    st.floats(0.02, 0.2),
    st.sampled_from(PATTERNS),
    st.integers(0, 2**32),
)
def test_invariants_property(width, r, cf, pattern, seed):
    try:
        spec = MaskSpec(width, r, cf, pattern, seed)
        m = gen_mask(spec)
    except ValueError:
        return  # spec outside the valid region
    assert np.all(m.sampled[center_block(width, spec.num_low)])
    if pattern is Pattern.RANDOM_UNIFORM:
        assert m.num_sampled == spec.num_total
    else:
        assert abs(m.num_sampled - spec.num_total) <= 2
