import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rcrp_smc.emissions import EPS, location_loglik, region_logprob, smooth, word_loglik

from conftest import LOG_2PI


@pytest.mark.parametrize("counts,topic,expected", [
    ({1: 2}, (0.5, 0.5), -1.386294),
    ({}, (0.5, 0.5), 0.0),
    ({0: 1, 1: 1}, (0.25, 0.75), -1.673976),
])
def test_word_loglik_examples(counts, topic, expected):
    assert word_loglik(counts, topic) == pytest.approx(expected, abs=1e-6)


def test_word_loglik_out_of_range():
    with pytest.raises(IndexError):
        word_loglik({2: 1}, (0.5, 0.5))


@pytest.mark.parametrize("z,weights,expected", [
    (0, (0.5, 0.5), math.log(0.5)), (1, (0.25, 0.75), math.log(0.75)), (0, (1.0, 0.0), 0.0),
])
def test_region_logprob_examples(z, weights, expected):
    assert region_logprob(z, weights) == pytest.approx(expected, abs=1e-15)


def test_region_logprob_out_of_range():
    with pytest.raises(IndexError):
        region_logprob(2, (0.5, 0.5))


def test_location_loglik_examples():
    mu = np.array([3.0, -4.0])
    assert location_loglik(mu, mu, np.eye(2)) == pytest.approx(-1.837877, abs=1e-6)
    assert location_loglik(mu + [1, 0], mu, np.eye(2)) == pytest.approx(-1.837877 - 0.5,
                                                                         abs=1e-6)
    assert location_loglik(mu, mu, 4 * np.eye(2)) == pytest.approx(-3.224171, abs=1e-6)


def test_location_loglik_singular():
    with pytest.raises(np.linalg.LinAlgError):
        location_loglik((0, 0), (0, 0), np.zeros((2, 2)))


def test_location_density_integrates_to_one():
    # midpoint rule on a grid wide enough to hold all but ~1e-9 of the mass
    mu = np.array([1.0, 2.0])
    cov = np.array([[2.0, 0.6], [0.6, 1.0]])
    step, half = 0.25, 10.0
    axis = np.arange(-half + step / 2, half, step)
    total = sum(math.exp(location_loglik(mu + (x, y), mu, cov)) for x in axis for y in axis)
    assert total * step ** 2 == pytest.approx(1.0, abs=0.01)


def test_location_matches_scipy():
    from scipy.stats import multivariate_normal

    cov = np.array([[2.0, 0.3], [0.3, 0.5]])
    for p in ([0, 0], [1.5, -2], [10, 3]):
        assert location_loglik(p, [1, 1], cov) == pytest.approx(
            multivariate_normal.logpdf(p, [1, 1], cov), rel=1e-12)


counts_st = st.dictionaries(st.integers(0, 7), st.integers(1, 9), max_size=8)


@given(counts_st, counts_st, st.lists(st.floats(0.01, 1.0), min_size=8, max_size=8))
def test_word_loglik_additive(c1, c2, raw):
    topic = np.array(raw) / sum(raw)
    merged = dict(c1)
    for k, v in c2.items():
        merged[k] = merged.get(k, 0) + v
    assert word_loglik(merged, topic) == pytest.approx(
        word_loglik(c1, topic) + word_loglik(c2, topic), rel=1e-12, abs=1e-12)


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=20))
def test_smoothed_logliks_finite(raw):
    p = np.array(raw)
    if p.sum() == 0:
        p[0] = 1.0
    q = smooth(p / p.sum())
    assert abs(q.sum() - 1) < 1e-12 and q.min() > 0
    assert np.isfinite(word_loglik({i: 1 for i in range(len(q))}, q))


def test_smooth_floor():
    q = smooth(np.array([1.0, 0.0]))
    assert q[1] == pytest.approx(EPS / (1 + EPS))
