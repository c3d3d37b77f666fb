import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rcrp_smc.model import ClusterState, Hyperparams, register, unregister
from rcrp_smc.prior import decayed_mass, prior_probabilities, prior_weights

from conftest import make_doc


def cluster_with(counts: dict) -> ClusterState:
    """A cluster whose per-epoch document counts are ``counts``."""
    c = ClusterState(0, min(counts, default=0), vocab_size=2, num_regions=1)
    c.doc_counts = {e: m for e, m in counts.items() if m}
    return c


def test_decayed_mass_current_only():
    assert decayed_mass(cluster_with({3: 5}), 3, Hyperparams(delta=0)) == 5.0


def test_decayed_mass_one_epoch_back():
    m = decayed_mass(cluster_with({2: 2, 3: 0}), 3, Hyperparams(delta=1, alpha=1.0))
    assert m == pytest.approx(0.735759, abs=1e-6)
    assert m == pytest.approx(2 * math.exp(-1), rel=1e-15)


def test_decayed_mass_outside_window():
    assert decayed_mass(cluster_with({1: 7}), 3, Hyperparams(delta=1)) == 0.0


def test_prior_weights_examples():
    h = Hyperparams(gamma=1.0, delta=0)
    np.testing.assert_allclose(prior_probabilities([cluster_with({0: 3})], 0, h), [0.75, 0.25])
    assert prior_probabilities([], 0, Hyperparams(gamma=0.5)).tolist() == [1.0]
    np.testing.assert_allclose(
        prior_probabilities([cluster_with({0: 2}), cluster_with({0: 2})], 0, h), [0.4, 0.4, 0.2])
    w, g = prior_weights([cluster_with({0: 2})], 0, h)
    assert w.tolist() == [2.0] and g == 1.0


@given(st.integers(1, 50), st.integers(0, 5), st.floats(0.1, 10.0))
def test_mass_nonincreasing_in_age(m, delta_age, alpha):
    h = Hyperparams(alpha=alpha, delta=6)
    younger = decayed_mass(cluster_with({10 - delta_age: m}), 10, h)
    older = decayed_mass(cluster_with({10 - delta_age - 1: m}), 10, h)
    assert older <= younger


@given(st.integers(1, 50), st.integers(1, 4), st.floats(0.1, 10.0), st.floats(0.0, 10.0))
def test_mass_nondecreasing_in_alpha(m, age, alpha, bump):
    c = cluster_with({10 - age: m})
    assert decayed_mass(c, 10, Hyperparams(alpha=alpha, delta=4)) <= decayed_mass(
        c, 10, Hyperparams(alpha=alpha + bump, delta=4))


@given(st.integers(1, 6))
def test_unregister_lowers_weight(n):
    h = Hyperparams(delta=0, num_regions=1)
    c = ClusterState(0, 0, vocab_size=2, num_regions=1)
    docs = [make_doc([0], index=i) for i in range(n)]
    for d in docs:
        register(c, d, 0)
    before = decayed_mass(c, 0, h)
    unregister(c, docs[-1], 0)
    after = decayed_mass(c, 0, h)
    assert after < before and after >= 0


def test_crp_reduction_exact_weights():
    # Delta = 0, one epoch: P(new | n seated) = gamma / (gamma + n) for any seating
    h = Hyperparams(gamma=0.5, delta=0)
    for seating in ([1], [3, 2], [1, 1, 1, 1, 1]):
        cl = [cluster_with({0: m}) for m in seating]
        p_new = prior_probabilities(cl, 0, h)[-1]
        assert p_new == pytest.approx(0.5 / (0.5 + sum(seating)), rel=1e-14)
