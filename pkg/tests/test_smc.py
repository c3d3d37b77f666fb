import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcrp_smc import checkpoint
from rcrp_smc.model import Assignment, Hyperparams, RegionSet, register
from rcrp_smc.prior import decayed_mass
from rcrp_smc.smc import (
    NEW,
    FilterState,
    Particle,
    count_consistency_errors,
    ess,
    gibbs_sweep,
    resample,
    run,
    s_log_probs,
    sample_s,
    sample_z,
    score_table,
    update_weight,
)

from conftest import LOG_2PI, make_doc


def seeded_particle(masses, V=2, M=2, prior_region=None):
    """Clusters whose only statistic is a document count at epoch 0.

    With no word or region counts the estimators fall back to the prior, so
    the topic is uniform and the region estimate is ``prior_region``.
    """
    p = Particle(V, M)
    for m in masses:
        c = p.new_cluster(0)
        c.doc_counts[0] = m
        if prior_region is not None:
            c.prior_region = np.asarray(prior_region, dtype=float)
    return p


# ---- sample_s -------------------------------------------------------------

def test_sample_s_no_clusters_is_new():
    p = Particle(3, 2)
    h = Hyperparams(num_regions=2)
    rng = np.random.default_rng(0)
    doc = make_doc([0, 1])
    assert all(sample_s(p, doc, 0, h, rng) == p.next_label for _ in range(50))


def test_sample_s_symmetric_clusters():
    p = seeded_particle([2, 2])
    h = Hyperparams(num_regions=2, gamma=1e-12, delta=0)
    rng = np.random.default_rng(1)
    doc = make_doc([0, 1])
    draws = np.array([sample_s(p, doc, 0, h, rng) for _ in range(10000)])
    assert set(np.unique(draws)) <= {0, 1}
    assert (draws == 0).mean() == pytest.approx(0.5, abs=0.02)


def test_sample_s_ratio_hand_computed():
    # mass 3, phi_v = 0.5, pi_z = 0.5 against gamma * (1/V) * (1/M) = 1/4
    p = seeded_particle([3])
    h = Hyperparams(num_regions=2, gamma=1.0, delta=0)
    labels, lp = s_log_probs(p, make_doc([1]), 1, h)
    assert labels == [0, NEW]
    assert lp[0] - lp[1] == pytest.approx(math.log(3.0), abs=1e-9)


def test_sample_s_frequencies_match_ratio():
    p = seeded_particle([3])
    h = Hyperparams(num_regions=2, gamma=1.0, delta=0)
    rng = np.random.default_rng(2)
    draws = [sample_s(p, make_doc([1]), 1, h, rng) for _ in range(10000)]
    assert np.mean(np.array(draws) == 0) == pytest.approx(0.75, abs=0.02)


# ---- sample_z -------------------------------------------------------------

def test_sample_z_dominant_density():
    regions = RegionSet([[-50.0, -50.0], [3.0, 4.0]], [np.eye(2)] * 2)
    p = Particle(2, 2)
    h = Hyperparams(num_regions=2)
    rng = np.random.default_rng(3)
    doc = make_doc([0], location=(3.0, 4.0))
    assert all(sample_z(p, doc, 0, regions, h, rng) == 1 for _ in range(1000))


def test_sample_z_prior_only():
    regions = RegionSet([[0.0, 0.0], [0.0, 0.0]], [np.eye(2)] * 2)
    p = seeded_particle([1], prior_region=(0.75, 0.25))
    h = Hyperparams(num_regions=2, delta=0)
    rng = np.random.default_rng(4)
    draws = np.array([sample_z(p, make_doc([0]), 0, regions, h, rng) for _ in range(10000)])
    assert (draws == 0).mean() == pytest.approx(0.75, abs=0.02)


def test_sample_z_density_ratio():
    # exp(-d^2/2) = 1/2 at distance d = sqrt(2 ln 2)
    d = math.sqrt(2 * math.log(2))
    regions = RegionSet([[0.0, 0.0], [d, 0.0]], [np.eye(2)] * 2)
    p = seeded_particle([1], prior_region=(0.5, 0.5))
    h = Hyperparams(num_regions=2, delta=0)
    rng = np.random.default_rng(5)
    draws = np.array([sample_z(p, make_doc([0]), 0, regions, h, rng) for _ in range(10000)])
    assert (draws == 0).mean() == pytest.approx(2 / 3, abs=0.02)


# ---- gibbs_sweep ----------------------------------------------------------

def test_sweep_fresh_particle_max_iter_one(two_regions):
    p = Particle(4, 2)
    h = Hyperparams(num_regions=2, max_iter=1)
    doc = make_doc([0, 3], location=(10.0, 10.0))
    gibbs_sweep(p, doc, two_regions, h, np.random.default_rng(0))
    assert list(p.current) == [0]
    a = p.current[0]
    assert list(p.clusters) == [a.event]
    c = p.clusters[a.event]
    assert c.members == {0: a.region}
    assert c.word_counts.tolist() == [1, 0, 0, 1]


def test_sweep_idempotent_when_deterministic():
    regions = RegionSet([[0.0, 0.0]], [np.eye(2)])
    h = Hyperparams(num_regions=1, gamma=1e-300, delta=0, max_iter=3)
    p = Particle(3, 1)
    first = make_doc([0, 1], index=0)
    gibbs_sweep(p, first, regions, h, np.random.default_rng(0))
    second = make_doc([1, 2], index=1)
    gibbs_sweep(p, second, regions, h, np.random.default_rng(1))
    before = dict(p.current)
    for seed in range(10):
        gibbs_sweep(p, second, regions, h, np.random.default_rng(seed))
        assert p.current == before


docs_st = st.lists(
    st.tuples(st.lists(st.integers(0, 5), min_size=0, max_size=6),
              st.floats(-2, 12), st.floats(-2, 12), st.integers(0, 2)),
    min_size=1, max_size=12)


def _docs(spec):
    spec = sorted(spec, key=lambda x: x[3])
    return [make_doc(tokens, epoch=e, index=i, location=(a, b))
            for i, (tokens, a, b, e) in enumerate(spec)]


@given(docs_st, st.integers(0, 2**16), st.sampled_from(["S1", "S2", "S3"]))
def test_sweeps_keep_counts_consistent(spec, seed, solution):
    regions = RegionSet([[0.0, 0.0], [10.0, 10.0]], [np.eye(2)] * 2)
    h = Hyperparams(num_regions=2, num_particles=3, delta=1, solution=solution)
    docs = _docs(spec)
    result = run(docs, regions, h, seed, vocab_size=6)
    for p in result.state.particles:
        assert count_consistency_errors(p, docs, h) == []


# ---- update_weight --------------------------------------------------------

def test_weight_empty_document(two_regions):
    h = Hyperparams(num_regions=2)
    p = Particle(2, 2)
    doc = make_doc({}, location=(0.0, 0.0))
    gibbs_sweep(p, doc, two_regions, h, np.random.default_rng(0))
    assert p.current[0].region == 0
    update_weight(p, doc, two_regions, h)
    assert p.log_weight == pytest.approx(-LOG_2PI, abs=1e-12)


def test_weight_two_tokens(two_regions):
    h = Hyperparams(num_regions=2)
    p = Particle(2, 2)
    doc = make_doc({1: 2}, location=(0.0, 0.0))
    gibbs_sweep(p, doc, two_regions, h, np.random.default_rng(0))
    update_weight(p, doc, two_regions, h)
    assert p.log_weight == pytest.approx(2 * math.log(0.5) - LOG_2PI, abs=1e-12)


def test_weight_recomputed_without_pending(two_regions):
    # an assignment recorded by hand: the held-out estimate is recomputed
    h = Hyperparams(num_regions=2, delta=0)
    p = seeded_particle([1])
    doc = make_doc({1: 2}, location=(0.0, 0.0))
    register(p.writable(0), doc, 0)
    p.current[0] = Assignment(0, 0)
    update_weight(p, doc, two_regions, h)
    assert p.log_weight == pytest.approx(2 * math.log(0.5) - LOG_2PI, abs=1e-12)


def test_identical_particles_identical_increments(two_regions):
    h = Hyperparams(num_regions=2, delta=0)
    base = seeded_particle([2, 1])
    doc = make_doc([0, 1, 1], index=5, location=(9.0, 9.5))
    a, b = base.copy(), base.copy()
    for p in (a, b):
        gibbs_sweep(p, doc, two_regions, h, np.random.default_rng(11))
        update_weight(p, doc, two_regions, h)
    assert a.current == b.current
    assert a.log_weight == b.log_weight


# ---- ess / resample -------------------------------------------------------

@pytest.mark.parametrize("w,expected", [
    ([0.25] * 4, 4.0), ([1.0, 0.0, 0.0], 1.0), ([0.5, 0.5, 0.0, 0.0], 2.0),
])
def test_ess_examples(w, expected):
    assert ess(w) == pytest.approx(expected)


def test_ess_rejects_unnormalised():
    with pytest.raises(ValueError):
        ess([0.5, 0.6])


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30))
def test_ess_range(raw):
    w = np.array(raw)
    if w.sum() == 0:
        w[0] = 1.0
    w = w / w.sum()
    e = ess(w)
    assert 1.0 - 1e-9 <= e <= len(w) + 1e-9


def _state(weights):
    F = len(weights)
    st_ = FilterState.initial(F, 0, 0, 2, 1)
    for i, (p, w) in enumerate(zip(st_.particles, weights)):
        p.log_weight = math.log(w) if w > 0 else -math.inf
        p.next_label = i  # tag for tracing offspring
    return st_


def _offspring(state):
    return sorted(p.next_label for p in state.particles)


def test_resample_uniform_keeps_all():
    s = resample(_state([0.25] * 4), np.random.default_rng(0))
    assert _offspring(s) == [0, 1, 2, 3]


def test_resample_one_hot():
    s = resample(_state([0.0, 1.0, 0.0]), np.random.default_rng(0))
    assert _offspring(s) == [1, 1, 1]


def test_resample_three_to_one():
    # weights (0.75, 0.25) over F=4 slots, the other two carrying zero weight
    for seed in range(20):
        s = resample(_state([0.75, 0.25, 0.0, 0.0]), np.random.default_rng(seed))
        assert _offspring(s) == [0, 0, 0, 1]


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=20), st.integers(0, 1000))
def test_resample_counts_within_one(raw, seed):
    w = np.array(raw)
    if w.sum() == 0:
        w[0] = 1.0
    w = w / w.sum()
    s = resample(_state(w.tolist()), np.random.default_rng(seed))
    counts = np.bincount([p.next_label for p in s.particles], minlength=len(w))
    assert np.all(np.abs(counts - len(w) * w) < 1 + 1e-9)
    assert ess(s.weights()) == pytest.approx(len(w))


def test_resampled_copies_are_isolated(two_regions):
    h = Hyperparams(num_regions=2, delta=0)
    p = seeded_particle([1])
    doc0 = make_doc([0], index=0)
    gibbs_sweep(p, doc0, two_regions, h, np.random.default_rng(0))
    q = p.copy()
    snapshot = {k: c.word_counts.copy() for k, c in p.clusters.items()}
    gibbs_sweep(q, make_doc([1, 1], index=1), two_regions, h, np.random.default_rng(1))
    for k, c in p.clusters.items():
        assert np.array_equal(c.word_counts, snapshot[k])
    assert 1 not in p.current and 1 in q.current


# ---- score table ----------------------------------------------------------

def _direct_scores(p, doc, h):
    out = {}
    for label, c in p.clusters.items():
        mass = decayed_mass(c, doc.epoch, h)
        if mass <= 0:
            continue
        lt, lr = c.log_estimates(h)
        out[label] = (math.log(mass) + float(lt[doc.ids] @ doc.counts), lr)
    return out


@settings(max_examples=30)
@given(docs_st, st.integers(0, 2**16))
def test_score_table_matches_direct(spec, seed):
    regions = RegionSet([[0.0, 0.0], [10.0, 10.0]], [np.eye(2)] * 2)
    h = Hyperparams(num_regions=2, num_particles=3, delta=1)
    docs = _docs(spec)
    state = run(docs, regions, h, seed, vocab_size=6).state
    probe = make_doc([0, 2, 2], epoch=state.epoch, index=999)
    for p in state.particles:
        labels, base, region_lp = score_table(p, probe, h)
        direct = _direct_scores(p, probe, h)
        assert sorted(labels) == sorted(list(direct) + [NEW])
        for i, label in enumerate(labels):
            if label == NEW:
                assert base[i] == pytest.approx(math.log(h.gamma) - 3 * math.log(6))
                continue
            assert base[i] == pytest.approx(direct[label][0], rel=1e-12, abs=1e-12)
            assert np.allclose(region_lp[i], direct[label][1], rtol=1e-12)


# ---- run --------------------------------------------------------------------

def test_run_single_document(two_regions):
    h = Hyperparams(num_regions=2, num_particles=1)
    result = run([make_doc([0, 1])], two_regions, h, 0, vocab_size=2)
    (p,) = result.state.particles
    assert len(p.clusters) == 1 and len(p.assignments) == 1
    assert p.log_weight == pytest.approx(0.0)


def test_run_rejects_bad_input(two_regions):
    h = Hyperparams(num_regions=2)
    with pytest.raises(ValueError, match="empty"):
        run([], two_regions, h, 0, vocab_size=2)
    with pytest.raises(ValueError, match="sorted"):
        run([make_doc([0], epoch=1, index=0), make_doc([0], epoch=0, index=1)],
            two_regions, h, 0, vocab_size=2)


def _corpus(n=40, V=8, seed=0):
    rng = np.random.default_rng(seed)
    docs = []
    for i in range(n):
        loc = (0.0, 0.0) if i % 2 else (10.0, 10.0)
        docs.append(make_doc(rng.integers(0, V, size=5).tolist(), epoch=i // 10, index=i,
                             location=tuple(np.add(loc, rng.normal(size=2)))))
    return docs


def _dump(state, h, regions):
    return checkpoint.dumps(checkpoint.Checkpoint(state, h, regions))


def test_run_deterministic(two_regions):
    h = Hyperparams(num_regions=2, num_particles=6)
    docs = _corpus()
    a = run(docs, two_regions, h, 7, vocab_size=8).state
    b = run(docs, two_regions, h, 7, vocab_size=8).state
    c = run(docs, two_regions, h, 8, vocab_size=8).state
    assert _dump(a, h, two_regions) == _dump(b, h, two_regions)
    assert _dump(a, h, two_regions) != _dump(c, h, two_regions)


def test_run_thread_count_irrelevant(two_regions):
    h = Hyperparams(num_regions=2, num_particles=6)
    docs = _corpus()
    a = run(docs, two_regions, h, 3, vocab_size=8, threads=1).state
    b = run(docs, two_regions, h, 3, vocab_size=8, threads=4).state
    assert _dump(a, h, two_regions) == _dump(b, h, two_regions)


def test_run_invariants_every_document(two_regions):
    h = Hyperparams(num_regions=2, num_particles=5, delta=1)
    docs = _corpus(60)
    seen = []

    def check(state, info):
        w = state.weights()
        assert len(w) == 5
        assert abs(w.sum() - 1) < 1e-9
        assert 1 - 1e-9 <= info["ess"] <= 5 + 1e-9
        if info["resampled"]:
            assert ess(w) == pytest.approx(5)
        current = [d for d in docs if d.epoch == state.epoch]
        for p in state.particles:
            assert count_consistency_errors(p, current, h) == []
        seen.append(info["doc"].index)

    run(docs, two_regions, h, 1, vocab_size=8, on_document=check)
    assert seen == list(range(60))


def test_epoch_boundary_prunes_dead(two_regions):
    h = Hyperparams(num_regions=2, num_particles=2, delta=0)
    docs = [make_doc([0], epoch=0, index=0), make_doc([1], epoch=2, index=1)]
    state = run(docs, two_regions, h, 0, vocab_size=2).state
    for p in state.particles:
        assert all(c.epoch == 2 for c in p.clusters.values())
        assert len(p.clusters) == 1
