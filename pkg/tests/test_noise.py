import numpy as np
import pytest
from scipy import stats

from monitored_lmg.noise import BlockNoise, NoiseStream, outcome_generator


def test_replay_is_identical():
    a = NoiseStream(42, 7)
    first = a.normals(1000)
    again = a.replay().normals(1000)
    assert np.array_equal(first, again)


def test_split_draws_match_single_draw():
    a = NoiseStream(5, 1)
    chunks = np.concatenate([a.normals(3), a.normals(10), a.normals(87)])
    assert np.array_equal(chunks, NoiseStream(5, 1).normals(100))
    assert a.consumed == 100


def test_increments_have_variance_dt():
    dt = 1e-3
    x = NoiseStream(1, 0).increments(200_000, dt)
    assert abs(x.mean()) < 4 * np.sqrt(dt / x.size)
    assert x.var() / dt == pytest.approx(1.0, rel=0.02)


def test_streams_are_distinct_and_uncorrelated():
    a = NoiseStream(3, 0).normals(50_000)
    b = NoiseStream(3, 1).normals(50_000)
    c = NoiseStream(4, 0).normals(50_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.02
    assert abs(np.corrcoef(a, c)[0, 1]) < 0.02
    assert stats.kstest(a, "norm").pvalue > 1e-3


def test_block_rows_equal_individual_streams():
    idx = [4, 0, 9]
    block = BlockNoise(11, idx)
    z = np.hstack([block.normals(5), block.normals(6)])
    for row, i in enumerate(idx):
        assert np.array_equal(z[row], NoiseStream(11, i).normals(11))


def test_inactive_rows_do_not_advance():
    block = BlockNoise(2, [0, 1])
    block.normals(4, active=np.array([True, False]))
    z = block.normals(3)
    assert np.array_equal(z[1], NoiseStream(2, 1).normals(3))


def test_outcome_stream_is_separate_from_gaussian_stream():
    u = outcome_generator(8, 2).random(5)
    assert np.array_equal(u, outcome_generator(8, 2).random(5))
    assert not np.array_equal(u, outcome_generator(8, 3).random(5))


@pytest.mark.parametrize("seed,idx", [(-1, 0), (0, -1), (2**64, 0)])
def test_rejects_bad_keys(seed, idx):
    with pytest.raises(ValueError):
        NoiseStream(seed, idx)
