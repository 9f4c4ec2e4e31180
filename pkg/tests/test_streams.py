import numpy as np
from hypothesis import given, strategies as st

from ergolab import streams


@given(st.integers(0, 2**63), st.integers(0, 10**6))
def test_path_streams_are_deterministic(seed, i):
    a = streams.path_generator(seed, i).standard_normal(4)
    b = streams.path_generator(seed, i).standard_normal(4)
    assert np.array_equal(a, b)


def test_purposes_and_paths_are_distinct():
    draws = {(i, p): streams.path_generator(7, i, p).random() for i in range(5)
             for p in (streams.NOISE, streams.ACTION, streams.BRIDGE, streams.AUX)}
    assert len(set(draws.values())) == len(draws)


def test_child_seeds():
    assert streams.child_seed(1, "a") == streams.child_seed(1, "a")
    assert streams.child_seed(1, "a") != streams.child_seed(1, "b")
    assert streams.child_seed(1, "a") != streams.child_seed(2, "a")
    assert streams.child_seed(1, "rep", 0) != streams.child_seed(1, "rep", 1)
    assert 0 <= streams.child_seed(3, "x") < 2**64


def test_aux_generator_is_separate_from_paths():
    a = streams.aux_generator(5, "boot").random()
    b = streams.path_generator(5, 0).random()
    assert a != b
    assert a == streams.aux_generator(5, "boot").random()
