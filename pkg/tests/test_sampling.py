import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vsrcheck.sampling import (ADVERSARIAL_KINDS, KINDS, SamplingSequence, SequenceSpec, accumulate, gen_adversarial,
                               gen_constant, gen_random, parse_seq_arg, standard_batch)


def test_constant():
    assert gen_constant(0.1, 3).values == (0.1, 0.1, 0.1)
    s = gen_constant(1.0, 1)
    assert s.values == (1.0,) and s.t_bar == pytest.approx(1.0 + 1e-9)
    assert accumulate(gen_constant(0.5, 4)).tolist() == [0, 0.5, 1.0, 1.5, 2.0]


def test_accumulate_examples():
    assert accumulate([]).tolist() == [0.0]
    assert accumulate([0.2, 0.3]).tolist() == [0, 0.2, 0.5]


def test_random_bounds_and_seeding():
    s = gen_random(0.3, 500, seed=3)
    v = s.array
    assert np.all(v > 0.01 * 0.3) and np.all(v < 0.3)
    assert gen_random(0.3, 50, 3) == gen_random(0.3, 50, 3)
    assert gen_random(0.3, 50, 3) != gen_random(0.3, 50, 4)


def test_adversarial_examples():
    tb = 2.0
    assert gen_adversarial("alternating", tb, 4, big=0.9, small=0.1).array == pytest.approx([1.8, 0.2, 1.8, 0.2])
    assert gen_adversarial("front_loaded", tb, 3, start=0.8, ratio=0.5).array == pytest.approx([1.6, 0.8, 0.4])
    d = gen_adversarial("dwell", tb, 5).array
    assert np.all(d >= 0.99 * tb) and np.all(d < tb)
    b = gen_adversarial("back_loaded", tb, 300).array
    assert np.all(np.diff(b) >= 0) and np.all(b < tb)
    with pytest.raises(ValueError):
        gen_adversarial("sawtooth", tb, 3)


def test_membership_is_enforced():
    with pytest.raises(ValueError):
        SamplingSequence(1.0, (0.5, 1.0))
    with pytest.raises(ValueError):
        SamplingSequence(1.0, ())


def test_standard_batch_prefix_covers_every_kind():
    batch = standard_batch(0.1, N=20)
    assert {s.kind for s in batch[:6]} == set(KINDS)
    assert len(batch) == 16


def test_json_round_trip_and_regeneration():
    for s in standard_batch(0.25, N=30, seed=2):
        again = SamplingSequence.from_json(s.to_json())
        assert again == s
        assert again.spec.generate().values == s.values


def test_parse_seq_arg():
    spec = parse_seq_arg("alternating:tbar=0.2,big=0.8,small=0.3,n=4")
    assert spec.generate().array == pytest.approx([0.16, 0.06, 0.16, 0.06])
    assert parse_seq_arg("constant:T=0.1,n=2").generate().values == (0.1, 0.1)
    assert parse_seq_arg("random:tbar=1,seed=5,n=3") == SequenceSpec("random", 1.0, 3, 5, ())
    for bad in ("random:n=3", "constant:n=3", "dwell:tbar=1,level=2", "alternating:tbar=1,bogus=1", "x:tbar=1"):
        with pytest.raises(ValueError):
            parse_seq_arg(bad)


specs = st.one_of(
    st.builds(lambda tb, n, s: SequenceSpec("random", tb, n, s, ()), st.floats(1e-3, 10), st.integers(1, 100),
              st.integers(0, 2 ** 31)),
    st.builds(lambda kind, tb, n: SequenceSpec(kind, tb, n, None, ()), st.sampled_from(ADVERSARIAL_KINDS),
              st.floats(1e-3, 10), st.integers(1, 300)),
    st.builds(lambda tb, n, f: SequenceSpec("constant", tb, n, None, (("T", f * tb),)), st.floats(1e-3, 10),
              st.integers(1, 50), st.floats(1e-6, 1 - 1e-6)),
)


@given(specs)
@settings(max_examples=200, deadline=None)
def test_generated_sequences_lie_in_phi(spec):
    s = spec.generate()
    v = s.array
    assert np.all(v > 0) and np.all(v < spec.t_bar) and len(v) == spec.n
    t = accumulate(s)
    assert t[0] == 0 and np.all(np.diff(t) > 0)
    # differencing partial sums loses precision relative to the total, not to each step
    assert np.allclose(np.diff(t), v, rtol=0, atol=4 * np.finfo(float).eps * t[-1])
    assert spec.generate() == s
