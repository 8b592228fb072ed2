import numpy as np
import pytest

from mebm.rng import RngStream, counter_normal, counter_u64, counter_uniform, derive_key, fnv1a64


def test_fnv1a_reference_values():
    assert fnv1a64("") == 0xCBF29CE484222325
    assert fnv1a64("a") == 0xAF63DC4C8601EC8C


def test_splitmix64_reference_sequence():
    assert counter_u64(1234567, 3).tolist() == [6457827717110365317, 3203168211198807973, 9817491932198370423]


def test_xoshiro256starstar_reference_sequence():
    r = RngStream(0)
    r._s = [1, 2, 3, 4]
    assert [r.next_u64() for _ in range(4)] == [11520, 0, 1509978240, 1215971899390074240]


def test_named_streams_are_independent_and_reproducible():
    assert derive_key(5, "train", 0, 3) == 5 ^ fnv1a64("train/0/3")
    a = RngStream.from_names(5, "x")
    b = RngStream.from_names(5, "x")
    c = RngStream.from_names(5, "y")
    sa = [a.next_u64() for _ in range(5)]
    assert sa == [b.next_u64() for _ in range(5)]
    assert sa != [c.next_u64() for _ in range(5)]


def test_bounded_draws_cover_range_uniformly():
    r = RngStream(9)
    draws = r.integers_array(-3, 3, 7000)
    counts = np.bincount(draws + 3, minlength=7)
    assert draws.min() == -3 and draws.max() == 3
    assert np.all(np.abs(counts - 1000) < 4 * np.sqrt(1000 * 6 / 7))
    with pytest.raises(ValueError):
        r.below(0)
    with pytest.raises(ValueError):
        r.integers(3, 2)


def test_counter_draws_are_position_addressable():
    full = counter_uniform(77, 100)
    np.testing.assert_array_equal(counter_uniform(77, 30, offset=50), full[50:80])
    n = counter_normal(77, 200_000)
    assert abs(n.mean()) < 0.01 and abs(n.std() - 1) < 0.01
    np.testing.assert_array_equal(counter_normal(77, 10, offset=5), n[5:15])


def test_shuffle_is_a_permutation():
    items = list(range(50))
    RngStream(3).shuffle(items)
    assert sorted(items) == list(range(50)) and items != list(range(50))
