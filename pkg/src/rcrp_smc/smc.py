"""Particle filter over (event, region) assignments.

Each particle holds its own cluster statistics. After resampling, duplicated
particles share ``ClusterState`` objects copy-on-write: a particle clones a
cluster the first time it mutates one it does not own.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .model import (
    Assignment,
    ClusterState,
    Document,
    Hyperparams,
    RegionSet,
    register,
    unregister,
)
from .prior import decayed_mass

NEW = -1


class _ScoreTable:
    """Stacked per-cluster log mass, log topic and log region rows.

    Row order is the order clusters entered the table; a removed row is
    filled by the last one.
    """

    def __init__(self, epoch: int, vocab_size: int, num_regions: int, capacity: int = 16):
        self.epoch = epoch
        self.labels: list[int] = []
        self.row: dict[int, int] = {}
        self.log_mass = np.empty(capacity)
        self.log_topic = np.empty((capacity, vocab_size))
        self.log_region = np.empty((capacity, num_regions))

    def copy(self) -> "_ScoreTable":
        new = object.__new__(_ScoreTable)
        new.epoch = self.epoch
        new.labels = list(self.labels)
        new.row = dict(self.row)
        new.log_mass = self.log_mass.copy()
        new.log_topic = self.log_topic.copy()
        new.log_region = self.log_region.copy()
        return new

    def _grow(self) -> None:
        cap = 2 * len(self.log_mass)
        for name in ("log_mass", "log_topic", "log_region"):
            old = getattr(self, name)
            new = np.empty((cap,) + old.shape[1:])
            new[:len(old)] = old
            setattr(self, name, new)

    def put(self, label: int, c: ClusterState, h: Hyperparams) -> None:
        i = self.row.get(label)
        if i is None:
            i = len(self.labels)
            if i == len(self.log_mass):
                self._grow()
            self.labels.append(label)
            self.row[label] = i
        self.log_mass[i] = c.log_mass(self.epoch, h)
        self.log_topic[i], self.log_region[i] = c.log_estimates(h)

    def remove(self, label: int) -> None:
        i = self.row.pop(label, None)
        if i is None:
            return
        last = len(self.labels) - 1
        if i != last:
            moved = self.labels[last]
            self.labels[i] = moved
            self.row[moved] = i
            self.log_mass[i] = self.log_mass[last]
            self.log_topic[i] = self.log_topic[last]
            self.log_region[i] = self.log_region[last]
        self.labels.pop()


class Particle:
    """One hypothesis about every assignment so far, with its cluster stats.

    Cluster mutations must go through :meth:`writable`, :meth:`new_cluster`
    and :meth:`drop` so the cached score table stays in sync.
    """

    def __init__(self, vocab_size: int, num_regions: int):
        self.vocab_size = vocab_size
        self.num_regions = num_regions
        self.clusters: dict[int, ClusterState] = {}
        self.log_weight = 0.0
        self.next_label = 0
        self.current: dict[int, Assignment] = {}
        # finished epochs as a linked chain of (assignment dict, parent)
        self.history = None
        # (doc index, held-out word log-likelihood) from the last sweep
        self.pending = None
        self._owned: set[int] = set()
        self._table: Optional[_ScoreTable] = None
        # False while the table may be shared with a copy of this particle
        self._table_owned = False
        self._stale: set[int] = set()

    def copy(self) -> "Particle":
        self._owned = set()
        self._table_owned = False
        new = object.__new__(Particle)
        new.__dict__.update(self.__dict__)
        new.clusters = dict(self.clusters)
        new.current = dict(self.current)
        new._owned = set()
        new._stale = set(self._stale)
        return new

    def writable(self, label: int) -> ClusterState:
        c = self.clusters[label]
        if label not in self._owned:
            c = c.clone()
            self.clusters[label] = c
            self._owned.add(label)
        self._stale.add(label)
        return c

    def new_cluster(self, epoch: int) -> ClusterState:
        label = self.next_label
        self.next_label += 1
        c = ClusterState(label, epoch, self.vocab_size, self.num_regions)
        self.clusters[label] = c
        self._owned.add(label)
        self._stale.add(label)
        return c

    def drop(self, label: int) -> None:
        del self.clusters[label]
        self._owned.discard(label)
        self._stale.add(label)

    def invalidate(self) -> None:
        """Forget the score table, e.g. after the epoch changes."""
        self._table = None
        self._stale = set()

    def table(self, epoch: int, h: Hyperparams) -> _ScoreTable:
        """The score table at ``epoch``, refreshed for clusters changed since."""
        tab = self._table
        if tab is None or tab.epoch != epoch:
            tab = _ScoreTable(epoch, self.vocab_size, self.num_regions,
                              max(16, len(self.clusters)))
            self._table_owned = True
            for label, c in self.clusters.items():
                tab.put(label, c, h)
            self._table = tab
            self._stale = set()
            return tab
        if self._stale:
            if not self._table_owned:
                tab = tab.copy()
                self._table = tab
                self._table_owned = True
            for label in sorted(self._stale):
                c = self.clusters.get(label)
                if c is None:
                    tab.remove(label)
                else:
                    tab.put(label, c, h)
            self._stale = set()
        return tab

    @property
    def assignments(self) -> dict[int, Assignment]:
        chunks = []
        node = self.history
        while node is not None:
            chunks.append(node[0])
            node = node[1]
        out = {}
        for chunk in reversed(chunks):
            out.update(chunk)
        out.update(self.current)
        return out

    def close_epoch(self) -> None:
        if self.current:
            self.history = (self.current, self.history)
        self.current = {}


@dataclass
class FilterState:
    particles: list[Particle]
    epoch: int
    docs_processed: int
    rng_seed: int
    vocab_size: int
    num_regions: int

    @classmethod
    def initial(cls, num_particles, epoch, seed, vocab_size, num_regions) -> "FilterState":
        particles = [Particle(vocab_size, num_regions) for _ in range(num_particles)]
        for p in particles:
            p.log_weight = -math.log(num_particles)
        return cls(particles, epoch, 0, seed, vocab_size, num_regions)

    def log_weights(self) -> np.ndarray:
        return np.array([p.log_weight for p in self.particles])

    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights())

    def normalize(self) -> None:
        lw = self.log_weights()
        lw -= logsumexp(lw)
        for p, w in zip(self.particles, lw.tolist()):
            p.log_weight = w

    def best_particle(self) -> Particle:
        return self.particles[int(np.argmax(self.log_weights()))]

    def snapshot(self) -> "FilterState":
        return FilterState([p.copy() for p in self.particles], self.epoch,
                           self.docs_processed, self.rng_seed, self.vocab_size, self.num_regions)


def particle_rng(seed: int, particle: int, doc_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, doc_index, particle)))


def resample_rng(seed: int, doc_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, doc_index)))


def _draw(logits: np.ndarray, rng: np.random.Generator) -> int:
    p = np.exp(logits - logits.max())
    c = np.cumsum(p)
    i = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
    return min(i, len(c) - 1)


def score_table(particle: Particle, doc: Document, h: Hyperparams):
    """Per-option log factors of the event conditional for ``doc``.

    Returns ``(labels, base, region_lp)``: ``labels[i]`` is a live cluster
    label or ``NEW``; ``base[i]`` is log prior mass plus the word
    log-likelihood; ``region_lp[i]`` is the smoothed log region estimate.
    The new-cluster row uses the uniform estimates 1/V and 1/M.
    """
    tab = particle.table(doc.epoch, h)
    n = len(tab.labels)
    log_mass = tab.log_mass[:n]
    live = np.isfinite(log_mass)
    base = np.empty(n + 1)
    base[:n] = log_mass + tab.log_topic[:n, doc.ids] @ doc.counts
    base[n] = math.log(h.gamma) - doc.num_tokens * math.log(particle.vocab_size)
    region_lp = np.empty((n + 1, particle.num_regions))
    region_lp[:n] = tab.log_region[:n]
    region_lp[n] = -math.log(particle.num_regions)
    labels = tab.labels + [NEW]
    if not live.all():
        keep = np.append(np.flatnonzero(live), n)
        return [labels[i] for i in keep], base[keep], region_lp[keep]
    return labels, base, region_lp


def s_log_probs(particle, doc, z, h, regions: Optional[RegionSet] = None, loc=None):
    """Normalised log probabilities over ``labels`` for the event index.

    With ``z=None`` the region is summed out, which needs ``regions``.
    """
    labels, base, region_lp = score_table(particle, doc, h)
    if z is None:
        if loc is None:
            loc = regions.location_logliks(doc.location)
        logits = base + logsumexp(region_lp + loc, axis=1)
    else:
        logits = base + region_lp[:, z]
    return labels, logits - logsumexp(logits)


def sample_s(particle, doc, z, h, rng, regions=None) -> int:
    """Draw an event label; a fresh label (``particle.next_label``) means new."""
    labels, lp = s_log_probs(particle, doc, z, h, regions)
    label = labels[_draw(lp, rng)]
    return particle.next_label if label == NEW else label


def sample_z(particle, doc, k, regions: RegionSet, h, rng) -> int:
    c = particle.clusters.get(k)
    if c is None:
        log_region = np.full(len(regions), -math.log(len(regions)))
    else:
        log_region = c.log_estimates(h)[1]
    return _draw(log_region + regions.location_logliks(doc.location), rng)


def _hold_out(particle: Particle, doc: Document) -> None:
    prev = particle.current.pop(doc.index, None)
    if prev is None:
        return
    c = particle.writable(prev.event)
    unregister(c, doc, prev.region)
    if c.is_empty():
        particle.drop(prev.event)


def gibbs_sweep(particle, doc, regions, h, rng, loc=None) -> Particle:
    """``h.max_iter`` alternations of event and region draws for one document.

    The document is held out once: the other documents' counts do not change
    between alternations, so the unregister/register pairs in between cancel
    and the score table is built once. The first event draw sums the region
    out, which makes it an exact draw from the joint conditional.
    """
    _hold_out(particle, doc)
    if loc is None:
        loc = regions.location_logliks(doc.location)
    labels, base, region_lp = score_table(particle, doc, h)
    marginal = logsumexp(region_lp + loc, axis=1)
    region = None
    i = len(labels) - 1
    for _ in range(h.max_iter):
        i = _draw(base + (marginal if region is None else region_lp[:, region]), rng)
        region = _draw(region_lp[i] + loc, rng)
    label = labels[i]
    if label == NEW:
        word_ll = -doc.num_tokens * math.log(particle.vocab_size)
    else:
        word_ll = float(particle.clusters[label].log_estimates(h)[0][doc.ids] @ doc.counts)
    c = particle.new_cluster(doc.epoch) if label == NEW else particle.writable(label)
    register(c, doc, region)
    particle.current[doc.index] = Assignment(c.label, region)
    particle.pending = (doc.index, word_ll)
    return particle


def held_out_word_loglik(particle, doc, h) -> float:
    """Word log-likelihood of ``doc`` under its cluster's estimate without it."""
    a = particle.current[doc.index]
    c = particle.clusters[a.event].clone()
    unregister(c, doc, a.region)
    log_topic = c.log_estimates(h)[0]
    return float(log_topic[doc.ids] @ doc.counts)


def update_weight(particle, doc, regions, h, loc=None) -> Particle:
    """Add the document's log-likelihood under its recorded assignment.

    The topic estimate is the one the assignment was drawn from, i.e. with
    the document itself held out.
    """
    a = particle.current[doc.index]
    pending = particle.pending
    if pending is not None and pending[0] == doc.index:
        word_ll = pending[1]
    else:
        word_ll = held_out_word_loglik(particle, doc, h)
    particle.pending = None
    if loc is None:
        loc = regions.location_logliks(doc.location)
    particle.log_weight += word_ll + float(loc[a.region])
    return particle


def ess(weights) -> float:
    """Effective sample size ``1 / sum(w^2)`` of normalised weights."""
    if len(weights) and isinstance(weights[0], Particle):
        weights = np.exp([p.log_weight for p in weights])
    w = np.asarray(weights, dtype=np.float64)
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("ess needs normalised weights")
    return float(1.0 / np.dot(w, w))


def resample(state: FilterState, rng) -> FilterState:
    """Systematic resampling; all weights reset to 1/n."""
    w = state.weights()
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("resample needs normalised weights")
    n = len(w)
    positions = (rng.random() + np.arange(n)) / n
    cs = np.cumsum(w)
    cs[-1] = 1.0
    idx = np.minimum(np.searchsorted(cs, positions, side="right"), n - 1)
    taken = set()
    new = []
    for i in idx.tolist():
        p = state.particles[i]
        if i in taken:
            p = p.copy()
        taken.add(i)
        new.append(p)
    lw = -math.log(n)
    for p in new:
        p.log_weight = lw
    state.particles = new
    return state


def advance_epoch(state: FilterState, epoch: int, h: Hyperparams) -> None:
    """Roll priors forward to ``epoch`` and prune clusters with no mass left."""
    for p in state.particles:
        p.close_epoch()
        for label in list(p.clusters):
            if decayed_mass(p.clusters[label], epoch, h) <= 0.0:
                p.drop(label)
                continue
            c = p.writable(label)
            c.roll_forward(h)
            c.advance(epoch, h.delta)
        p.invalidate()
    state.epoch = epoch


def epoch_summary(state: FilterState, h: Hyperparams, top_n: int = 10) -> list[dict]:
    """One record per live cluster of the maximum-weight particle."""
    p = state.best_particle()
    out = []
    for label, c in p.clusters.items():
        topic, region = c.estimates(h)
        top = np.argsort(-topic, kind="stable")[:top_n]
        out.append({
            "epoch": state.epoch,
            "event": label,
            "birth_epoch": c.birth_epoch,
            "num_docs": c.num_docs,
            "decayed_mass": decayed_mass(c, state.epoch, h),
            "top_words": [[int(i), float(topic[i])] for i in top],
            "region_weights": [float(x) for x in region],
        })
    return out


@dataclass
class RunResult:
    state: FilterState
    summaries: list[dict] = field(default_factory=list)
    snapshots: dict[int, FilterState] = field(default_factory=dict)


def run(documents: Sequence[Document], regions: RegionSet, h: Hyperparams, seed: int,
        vocab_size: int, threads: int = 1,
        on_document: Optional[Callable] = None,
        on_epoch_end: Optional[Callable] = None,
        top_n: int = 10, keep_snapshots: bool = False) -> RunResult:
    """Filter a corpus stream sorted by epoch.

    ``on_document(state, info)`` fires after each document's normalisation
    and optional resampling; ``on_epoch_end(state)`` fires before the priors
    roll forward. Results depend only on (documents, h, seed), not on
    ``threads``.
    """
    documents = list(documents)
    if not documents:
        raise ValueError("empty corpus")
    if len(regions) != h.num_regions:
        raise ValueError(f"region set has {len(regions)} regions, num_regions={h.num_regions}")
    for a, b in zip(documents, documents[1:]):
        if b.epoch < a.epoch:
            raise ValueError(f"documents not sorted by epoch at index {b.index}")
    num_particles = h.num_particles
    state = FilterState.initial(num_particles, documents[0].epoch, seed, vocab_size, len(regions))
    result = RunResult(state)

    def end_epoch():
        result.summaries.extend(epoch_summary(state, h, top_n))
        if keep_snapshots:
            result.snapshots[state.epoch] = state.snapshot()
        if on_epoch_end is not None:
            on_epoch_end(state)

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for doc in documents:
            if len(doc.ids) and doc.ids[-1] >= vocab_size:
                raise ValueError(f"document {doc.index} has token id beyond vocabulary")
            if doc.epoch != state.epoch:
                end_epoch()
                advance_epoch(state, doc.epoch, h)
            loc = regions.location_logliks(doc.location)

            def step(f, doc=doc, loc=loc):
                p = state.particles[f]
                rng = particle_rng(seed, f, doc.index)
                gibbs_sweep(p, doc, regions, h, rng, loc)
                update_weight(p, doc, regions, h, loc)

            if pool is None:
                for f in range(num_particles):
                    step(f)
            else:
                list(pool.map(step, range(num_particles)))
            state.normalize()
            e = ess(state.weights())
            resampled = e < h.ess_threshold
            if resampled:
                resample(state, resample_rng(seed, doc.index))
            state.docs_processed += 1
            if on_document is not None:
                on_document(state, {"doc": doc, "ess": e, "resampled": resampled})
        end_epoch()
    finally:
        if pool is not None:
            pool.shutdown()
    return result


def count_consistency_errors(particle: Particle, documents: Iterable[Document],
                             h: Hyperparams) -> list[str]:
    """Compare a particle's cluster counts with a recount from its assignments.

    ``documents`` must cover at least the current epoch's processed documents.
    """
    errors = []
    by_index = {d.index: d for d in documents}
    recount: dict[int, dict] = {}
    for idx, a in particle.current.items():
        doc = by_index[idx]
        r = recount.setdefault(a.event, {"m": 0, "words": np.zeros(particle.vocab_size),
                                         "regions": np.zeros(particle.num_regions)})
        r["m"] += 1
        r["words"][doc.ids] += doc.counts
        r["regions"][a.region] += 1
        if a.event not in particle.clusters:
            errors.append(f"document {idx} assigned to missing cluster {a.event}")
    for label, c in particle.clusters.items():
        r = recount.get(label)
        m = r["m"] if r else 0
        if c.num_docs != m:
            errors.append(f"cluster {label}: m={c.num_docs}, recount {m}")
        words = r["words"] if r else np.zeros(particle.vocab_size)
        regs = r["regions"] if r else np.zeros(particle.num_regions)
        if not np.array_equal(c.word_counts, words):
            errors.append(f"cluster {label}: word counts differ from assignments")
        if not np.array_equal(c.region_counts, regs):
            errors.append(f"cluster {label}: region counts differ from assignments")
        if c.num_words != words.sum():
            errors.append(f"cluster {label}: token total differs")
        if set(c.members) != {i for i, a in particle.current.items() if a.event == label}:
            errors.append(f"cluster {label}: member set differs")
    return errors
