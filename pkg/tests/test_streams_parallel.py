import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from ergolab import streams
from ergolab.parallel import map_chunks


@given(st.integers(0, 2**40), st.integers(0, 10**6), st.integers(0, 10**4))
def test_uniform_is_pure_function_of_key(seed, traj, step):
    a = streams.uniform(seed, streams.LETTERS, traj, step)
    b = streams.uniform(seed, streams.LETTERS, np.array([traj]), np.array([step]))
    assert a[0] == b[0]
    assert 0.0 <= a[0] < 1.0


def test_streams_are_independent_of_stream_id():
    a = streams.uniform(0, streams.LETTERS, np.arange(1000), 0)
    b = streams.uniform(0, streams.PAIRS, np.arange(1000), 0)
    assert not np.array_equal(a, b)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.1


def test_uniform_moments():
    u = streams.uniform(3, streams.LETTERS, np.arange(200_000), 7)
    assert abs(u.mean() - 0.5) < 3e-3
    assert abs(u.var() - 1 / 12) < 2e-3


def test_categorical_frequencies():
    cdf = np.cumsum([0.2, 0.3, 0.5])
    k = streams.categorical(cdf, 1, streams.LETTERS, np.arange(100_000), 0)
    freq = np.bincount(k, minlength=3) / len(k)
    assert np.allclose(freq, [0.2, 0.3, 0.5], atol=6e-3)


def test_map_chunks_order_independent_of_threads():
    fn = lambda a, b: np.sin(np.arange(a, b) * 0.1).sum()
    one = map_chunks(fn, 50_000, threads=1, chunk=1000)
    many = map_chunks(fn, 50_000, threads=8, chunk=1000)
    assert one == many
