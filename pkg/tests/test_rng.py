import numpy as np

from abblab.rng import draws, node_key


def test_draws_are_deterministic():
    np.testing.assert_array_equal(draws(7, 3, (0, 2)), draws(7, 3, (0, 2)))


def test_streams_differ_by_seed_trial_and_path():
    base = draws(1, 0, (0,))
    assert not np.array_equal(base, draws(2, 0, (0,)))
    assert not np.array_equal(base, draws(1, 1, (0,)))
    assert not np.array_equal(base, draws(1, 0, (1,)))
    assert node_key(1, 0, (0, 1)) != node_key(1, 0, (1, 0))


def test_uniforms_in_open_unit_interval_and_roughly_uniform():
    u = np.concatenate([draws(0, t, (), 32) for t in range(2000)])
    assert u.min() > 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 0.005
    hist, _ = np.histogram(u, bins=10, range=(0, 1))
    assert hist.min() > 0.9 * len(u) / 10


def test_neighbouring_trials_uncorrelated():
    a = np.array([draws(5, t, (), 1)[0] for t in range(5000)])
    assert abs(np.corrcoef(a[:-1], a[1:])[0, 1]) < 0.05
