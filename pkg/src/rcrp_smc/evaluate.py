"""Held-out metrics, partition recovery scores and the enumeration oracle."""

from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from .emissions import smooth
from .laplace import CountContext, solution1, solution2, solution3
from .model import Document, Hyperparams, RegionSet, Solution
from .smc import FilterState, score_table

StateLike = Union[FilterState, Mapping[int, FilterState]]


def _state_for(doc: Document, state: StateLike) -> FilterState:
    """The snapshot at the document's epoch, else the latest one before it."""
    if isinstance(state, FilterState):
        return state
    epochs = sorted(state)
    earlier = [e for e in epochs if e <= doc.epoch]
    return state[earlier[-1] if earlier else epochs[0]]


def _tables(doc: Document, state: StateLike, regions: RegionSet, h: Hyperparams):
    st = _state_for(doc, state)
    view = dataclasses.replace(doc, epoch=st.epoch)
    labels, base, region_lp = score_table(st.best_particle(), view, h)
    return st, labels, base, region_lp


def _map_log_topic(st: FilterState, label: int, h: Hyperparams) -> np.ndarray:
    c = st.best_particle().clusters.get(label)
    if c is None:
        return np.full(st.vocab_size, -math.log(st.vocab_size))
    return c.log_estimates(h)[0]


def perplexity(test_docs: Sequence[Document], state: StateLike, regions: RegionSet,
               h: Hyperparams) -> float:
    """Negative mean per-token log-likelihood under MAP cluster assignment.

    The MAP event maximises prior mass x word likelihood x location evidence
    (regions summed out) in the maximum-weight particle.
    """
    if not test_docs:
        raise ValueError("empty test set")
    total_ll = 0.0
    total_tokens = 0
    for doc in test_docs:
        st, labels, base, region_lp = _tables(doc, state, regions, h)
        loc = regions.location_logliks(doc.location)
        i = int(np.argmax(base + logsumexp(region_lp + loc, axis=1)))
        log_topic = _map_log_topic(st, labels[i], h)
        total_ll += float(log_topic[doc.ids] @ doc.counts)
        total_tokens += doc.num_tokens
    return -total_ll / total_tokens


def predict_location(doc: Document, state: StateLike, regions: RegionSet,
                     h: Hyperparams) -> np.ndarray:
    """Region-weighted mean of the text-only MAP event."""
    _, _, base, region_lp = _tables(doc, state, regions, h)
    i = int(np.argmax(base))
    return np.exp(region_lp[i]) @ regions.means


def location_mse(test_docs: Sequence[Document], state: StateLike, regions: RegionSet,
                 h: Hyperparams) -> float:
    """Mean squared Euclidean error in degrees^2."""
    if not test_docs:
        raise ValueError("empty test set")
    err = 0.0
    for doc in test_docs:
        diff = predict_location(doc, state, regions, h) - np.asarray(doc.location)
        err += float(diff @ diff)
    return err / len(test_docs)


def recovery_scores(inferred, truth) -> dict[str, float]:
    from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score

    truth_labels = getattr(truth, "events", truth)
    if len(inferred) != len(truth_labels):
        raise ValueError(f"length mismatch: {len(inferred)} vs {len(truth_labels)}")
    return {"nmi": float(normalized_mutual_info_score(truth_labels, inferred)),
            "ari": float(adjusted_rand_score(truth_labels, inferred))}


def canonical(labels: Sequence[int]) -> tuple[int, ...]:
    """Relabel by order of first appearance."""
    seen: dict[int, int] = {}
    return tuple(seen.setdefault(x, len(seen)) for x in labels)


def particle_marginals(state: FilterState, documents: Sequence[Document]) -> np.ndarray:
    """Weighted per-document distribution over canonical event labels.

    Row ``j`` is document ``documents[j]``; column ``c`` the canonical label.
    """
    n = len(documents)
    out = np.zeros((n, n))
    for p, w in zip(state.particles, state.weights()):
        a = p.assignments
        lab = canonical([a[d.index].event for d in documents])
        out[np.arange(n), lab] += w
    return out


@dataclass
class EnumeratedPosterior:
    events: list[tuple[int, ...]]
    regions: list[tuple[int, ...]]
    probs: np.ndarray

    def marginals(self) -> np.ndarray:
        n = len(self.events[0])
        out = np.zeros((n, n))
        for labels, p in zip(self.events, self.probs):
            out[np.arange(n), labels] += p
        return out


def _point_estimate(solution, current, history, prior, scale) -> np.ndarray:
    total = current.sum()
    if solution == Solution.S2:
        if history.sum() > 0:
            return solution2(CountContext(current, total, history, prior, scale))
        return prior
    if total == 0:
        return prior
    ctx = CountContext(current, total, history, prior, scale)
    return solution1(ctx) if solution == Solution.S1 else solution3(ctx)


class _Replay:
    """Cluster statistics rebuilt from scratch for one assignment prefix."""

    def __init__(self, docs, events, chosen_regions, h, V, M):
        self.h = h
        self.V, self.M = V, M
        self.clusters: dict[int, dict] = {}
        epoch = docs[0].epoch if docs else None
        for doc, k, region in zip(docs, events, chosen_regions):
            if doc.epoch != epoch:
                self._roll(doc.epoch)
                epoch = doc.epoch
            self._add(doc, k, region)

    def _new(self):
        return {"words": np.zeros(self.V), "regions": np.zeros(self.M),
                "word_hist": np.zeros(self.V), "region_hist": np.zeros(self.M),
                "topic_prior": np.full(self.V, 1.0 / self.V),
                "region_prior": np.full(self.M, 1.0 / self.M), "epochs": []}

    def _add(self, doc, k, region):
        c = self.clusters.setdefault(k, self._new())
        for i, n in doc.token_counts.items():
            c["words"][i] += n
            c["word_hist"][i] += n
        c["regions"][region] += 1
        c["region_hist"][region] += 1
        c["epochs"].append(doc.epoch)

    def _roll(self, epoch):
        for c in self.clusters.values():
            topic, region = self.estimates(c)
            c["topic_prior"], c["region_prior"] = topic, region
            c["words"] = np.zeros(self.V)
            c["regions"] = np.zeros(self.M)

    def estimates(self, c):
        sol = self.h.solution
        return (_point_estimate(sol, c["words"], c["word_hist"], c["topic_prior"], self.h.tau0),
                _point_estimate(sol, c["regions"], c["region_hist"], c["region_prior"],
                                self.h.rho0))

    def mass(self, c, t):
        h = self.h
        return sum(math.exp(-(t - e) / h.alpha) for e in c["epochs"] if 0 <= t - e <= h.delta)


def _word_ll(doc, topic):
    p = smooth(topic)
    return sum(n * math.log(p[i]) for i, n in doc.token_counts.items())


def enumerate_posterior(docs: Sequence[Document], regions: RegionSet, h: Hyperparams,
                        vocab_size: int, solution=None,
                        max_configurations: int = 10 ** 6) -> EnumeratedPosterior:
    """Exact distribution over joint (event, region) assignments.

    Each configuration's mass is the product, in stream order, of the
    normalised event/region conditional given the earlier documents and the
    document's likelihood under those same held-out estimates, which is the
    measure the particle filter's proposal and weights define. Every quantity
    is recomputed from raw counts of the configuration; no filter state is
    used. Event labels are canonical (order of first appearance).
    """
    if solution is not None:
        h = dataclasses.replace(h, solution=Solution(solution))
    docs = list(docs)
    V, M = vocab_size, len(regions)
    bound = 1
    for d in range(len(docs)):
        bound *= (d + 1) * M
        if bound > max_configurations:
            raise ValueError(f"state space exceeds {max_configurations} configurations")
    loc = [np.array([multivariate_normal.logpdf(doc.location, regions.means[m], regions.covs[m])
                     for m in range(M)]) for doc in docs]

    events_out, regions_out, logp_out = [], [], []

    def visit(d, events, chosen, logp):
        if d == len(docs):
            events_out.append(tuple(events))
            regions_out.append(tuple(chosen))
            logp_out.append(logp)
            return
        doc = docs[d]
        prefix = _Replay(docs[:d], events, chosen, h, V, M)
        # bring the prefix to this document's epoch
        if d and docs[d - 1].epoch != doc.epoch:
            prefix._roll(doc.epoch)
        n_existing = max(events, default=-1) + 1
        options = []
        for k in range(n_existing + 1):
            c = prefix.clusters.get(k)
            if c is None:
                lw = math.log(h.gamma) - doc.num_tokens * math.log(V)
                lr = np.full(M, -math.log(M))
            else:
                mass = prefix.mass(c, doc.epoch)
                if mass == 0:
                    continue
                topic, region = prefix.estimates(c)
                lw = math.log(mass) + _word_ll(doc, topic)
                lr = np.log(smooth(region))
            for region in range(M):
                options.append((k, region, lw + lr[region] + loc[d][region]))
        norm = logsumexp([o[2] for o in options])
        for k, region, lq in options:
            c = prefix.clusters.get(k)
            topic = np.full(V, 1.0 / V) if c is None else prefix.estimates(c)[0]
            lw = _word_ll(doc, topic) + loc[d][region]
            visit(d + 1, events + [k], chosen + [region], logp + (lq - norm) + lw)

    visit(0, [], [], 0.0)
    logp = np.array(logp_out)
    probs = np.exp(logp - logsumexp(logp))
    return EnumeratedPosterior(events_out, regions_out, probs)


def total_variation(p, q) -> np.ndarray:
    """Row-wise total variation distance."""
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum(axis=-1)
