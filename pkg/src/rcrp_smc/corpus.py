"""Corpus ingestion, vocabulary, epoch binning, region fitting, synthetic data.

Corpus files are UTF-8, one record per line, tab separated::

    unix_timestamp<TAB>lat<TAB>lon<TAB>token token token ...
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .model import Document, Hyperparams, RegionSet, logistic

log = logging.getLogger(__name__)

DEFAULT_EPOCH_SECONDS = 30 * 86400.0


class CorpusFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    timestamp: float
    lat: float
    lon: float
    tokens: tuple[str, ...]


class Vocabulary:
    """Dense token <-> id map; ids follow sorted token order."""

    def __init__(self, tokens: Iterable[str], min_frequency: int = 1):
        if min_frequency < 1:
            raise ValueError("min_frequency must be a positive integer")
        self.id_to_token = sorted(set(tokens))
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        self.min_frequency = min_frequency

    @classmethod
    def build(cls, records: Iterable[Record], min_frequency: int = 5) -> "Vocabulary":
        freq = Counter(tok for r in records for tok in r.tokens)
        return cls((t for t, n in freq.items() if n >= min_frequency), min_frequency)

    def __len__(self):
        return len(self.id_to_token)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def to_dict(self) -> dict:
        return {"min_frequency": self.min_frequency, "tokens": self.id_to_token}

    @classmethod
    def from_dict(cls, d) -> "Vocabulary":
        return cls(d["tokens"], d.get("min_frequency", 1))


def parse_line(line: str, lineno: int) -> Record:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 4:
        raise CorpusFormatError(f"line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
    try:
        ts, lat, lon = float(parts[0]), float(parts[1]), float(parts[2])
    except ValueError as e:
        raise CorpusFormatError(f"line {lineno}: {e}") from None
    if not all(math.isfinite(v) for v in (ts, lat, lon)):
        raise CorpusFormatError(f"line {lineno}: non-finite field")
    if not -90.0 <= lat <= 90.0:
        raise CorpusFormatError(f"line {lineno}: latitude {lat} out of range [-90, 90]")
    if not -180.0 <= lon <= 180.0:
        raise CorpusFormatError(f"line {lineno}: longitude {lon} out of range [-180, 180]")
    return Record(ts, lat, lon, tuple(parts[3].lower().split()))


def read_records(path) -> list[Record]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            records.append(parse_line(line, lineno))
    return records


def to_documents(records: Sequence[Record], vocab: Vocabulary, epoch_seconds: float,
                 origin: Optional[float] = None) -> list[Document]:
    """Bin records into epochs and map tokens to ids.

    Records with no in-vocabulary token are dropped. Ordering is by epoch,
    stable in input order; document indices are assigned after sorting.
    """
    if epoch_seconds <= 0:
        raise ValueError("epoch duration must be positive")
    if not records:
        return []
    if origin is None:
        origin = min(r.timestamp for r in records)
    binned = []
    dropped = 0
    for r in records:
        counts = Counter(vocab.token_to_id[t] for t in r.tokens if t in vocab.token_to_id)
        if not counts:
            dropped += 1
            continue
        epoch = max(int((r.timestamp - origin) // epoch_seconds), 0)
        binned.append((epoch, dict(sorted(counts.items())), (r.lat, r.lon)))
    if dropped:
        log.info("dropped %d documents with no tokens after vocabulary filtering", dropped)
    binned.sort(key=lambda x: x[0])
    return [Document(e, i, c, loc) for i, (e, c, loc) in enumerate(binned)]


def load_corpus(path, min_frequency: int = 5, epoch_seconds: float = DEFAULT_EPOCH_SECONDS,
                vocab: Optional[Vocabulary] = None, origin: Optional[float] = None):
    """Read, lowercase, filter and epoch-bin a corpus file.

    Returns ``(documents, vocabulary)``. A supplied ``vocab`` is used as is.
    """
    records = read_records(path)
    if vocab is None:
        vocab = Vocabulary.build(records, min_frequency)
    return to_documents(records, vocab, epoch_seconds, origin), vocab


def write_corpus(path, documents: Sequence[Document], vocab: Vocabulary,
                 epoch_seconds: float = DEFAULT_EPOCH_SECONDS, origin: float = 0.0) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in documents:
            ts = origin + doc.epoch * epoch_seconds
            toks = " ".join(" ".join([vocab.id_to_token[i]] * c)
                            for i, c in sorted(doc.token_counts.items()))
            fh.write(f"{ts!r}\t{doc.location[0]!r}\t{doc.location[1]!r}\t{toks}\n")


def split(items: Sequence, train_fraction: float, seed: int):
    """Uniform random split; both parts keep the input order."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    n = len(items)
    if n == 0:
        raise ValueError("empty corpus")
    n_train = int(round(n * train_fraction))
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return [items[i] for i in train_idx], [items[i] for i in test_idx]


def fit_regions(locations, num_regions: int, seed: int) -> RegionSet:
    """k-means++ centres on (lat, lon), sample covariance + 1e-4 I per centre."""
    from sklearn.cluster import KMeans

    pts = np.asarray(locations, dtype=np.float64).reshape(-1, 2)
    if len(np.unique(pts, axis=0)) < num_regions:
        raise ValueError(f"need at least {num_regions} distinct locations to fit regions")
    km = KMeans(n_clusters=num_regions, init="k-means++", n_init=1, max_iter=100, tol=1e-8,
                random_state=seed).fit(pts)
    labels = km.labels_
    means, covs = [], []
    for m in range(num_regions):
        members = pts[labels == m]
        means.append(members.mean(axis=0))
        cov = np.cov(members, rowvar=False) if len(members) > 1 else np.zeros((2, 2))
        covs.append(cov + 1e-4 * np.eye(2))
    return RegionSet(means, covs)


@dataclass
class SyntheticConfig:
    num_initial_clusters: int = 5
    num_epochs: int = 10
    docs_per_epoch: int = 200
    vocab_size: int = 50
    num_regions: int = 4
    tokens_per_doc: int = 20
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    # variance of a new cluster's natural parameters (a standard normal base
    # draw); None uses tau0 / rho0, which makes small-tau0 topics near uniform
    init_scale: Optional[float] = 1.0
    # random-walk variances; None uses tau0 / rho0, 0 freezes the trajectories
    topic_drift: Optional[float] = None
    region_drift: Optional[float] = None
    seed_mass: float = 1.0
    region_spread: float = 1.0
    epoch_seconds: float = 86400.0

    def __post_init__(self):
        for name in ("num_initial_clusters", "num_epochs", "docs_per_epoch", "vocab_size",
                     "num_regions", "tokens_per_doc"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name}: must be positive")
        if isinstance(self.hyperparams, dict):
            self.hyperparams = Hyperparams(**self.hyperparams)


@dataclass
class SyntheticTruth:
    events: list[int]
    regions: list[int]
    topics: dict[int, dict[int, np.ndarray]]
    region_params: dict[int, dict[int, np.ndarray]]
    region_set: RegionSet
    doc_loglik: list[float]

    def to_dict(self) -> dict:
        return {
            "documents": [{"line": i + 1, "s": s, "z": z}
                          for i, (s, z) in enumerate(zip(self.events, self.regions))],
            "topics": {str(k): {str(t): v.tolist() for t, v in traj.items()}
                       for k, traj in self.topics.items()},
            "region_params": {str(k): {str(t): v.tolist() for t, v in traj.items()}
                              for k, traj in self.region_params.items()},
            "region_set": self.region_set.to_dict(),
            "doc_loglik": self.doc_loglik,
        }

    @classmethod
    def from_dict(cls, d) -> "SyntheticTruth":
        def traj(x):
            return {int(k): {int(t): np.asarray(v) for t, v in tr.items()} for k, tr in x.items()}

        docs = d["documents"]
        return cls([r["s"] for r in docs], [r["z"] for r in docs], traj(d["topics"]),
                   traj(d["region_params"]), RegionSet.from_dict(d["region_set"]),
                   list(d["doc_loglik"]))


def multinomial_loglik(token_counts, probs) -> float:
    n = sum(token_counts.values())
    out = math.lgamma(n + 1)
    for i, c in token_counts.items():
        out += c * math.log(probs[i]) - math.lgamma(c + 1)
    return out


def generate_synthetic(config: SyntheticConfig, seed: int):
    """Simulate the generative story; returns ``(documents, truth)``.

    Seeded clusters carry ``seed_mass`` pseudo-documents in the prior at the
    first epoch only. A new cluster's natural parameters are drawn from
    N(0, init_scale I). Natural parameters of live clusters follow Gaussian
    random walks with variances ``tau0`` (words) and ``rho0`` (regions)
    unless the config overrides the drift.
    """
    cfg = config
    h = cfg.hyperparams
    rng = np.random.default_rng(seed)
    V, M = cfg.vocab_size, cfg.num_regions
    topic_var = h.tau0 if cfg.init_scale is None else cfg.init_scale
    region_var = h.rho0 if cfg.init_scale is None else cfg.init_scale
    topic_drift = h.tau0 if cfg.topic_drift is None else cfg.topic_drift
    region_drift = h.rho0 if cfg.region_drift is None else cfg.region_drift

    centre = np.array([37.0, -96.0])
    means = centre + rng.uniform([-10.0, -25.0], [10.0, 25.0], size=(M, 2))
    covs = np.repeat((cfg.region_spread ** 2 * np.eye(2))[None], M, axis=0)
    region_set = RegionSet(means, covs)

    topic_param: dict[int, np.ndarray] = {}
    region_param: dict[int, np.ndarray] = {}
    doc_counts: dict[int, dict[int, int]] = {}
    topics: dict[int, dict[int, np.ndarray]] = {}
    region_params: dict[int, dict[int, np.ndarray]] = {}

    def birth(k, t):
        topic_param[k] = rng.normal(0.0, math.sqrt(topic_var), V)
        region_param[k] = rng.normal(0.0, math.sqrt(region_var), M)
        doc_counts[k] = {}
        topics[k] = {t: topic_param[k].copy()}
        region_params[k] = {t: region_param[k].copy()}

    for k in range(cfg.num_initial_clusters):
        birth(k, 0)
    next_label = cfg.num_initial_clusters

    events, zs, docs, logliks = [], [], [], []
    for t in range(cfg.num_epochs):
        live = {k for k in topic_param
                if t == 0 or any(doc_counts[k].get(t - d, 0) for d in range(1, h.delta + 1))}
        if t > 0:
            for k in sorted(live):
                topic_param[k] = topic_param[k] + rng.normal(0.0, math.sqrt(topic_drift), V)
                region_param[k] = region_param[k] + rng.normal(0.0, math.sqrt(region_drift), M)
                topics[k][t] = topic_param[k].copy()
                region_params[k][t] = region_param[k].copy()
        for _ in range(cfg.docs_per_epoch):
            labels = [k for k in topic_param if k in live or doc_counts[k].get(t)]
            weights = []
            for k in labels:
                w = sum(doc_counts[k].get(t - d, 0) * math.exp(-d / h.alpha)
                        for d in range(h.delta + 1))
                if t == 0 and k < cfg.num_initial_clusters:
                    w += cfg.seed_mass
                weights.append(w)
            weights.append(h.gamma)
            w = np.array(weights)
            j = int(rng.choice(len(w), p=w / w.sum()))
            if j == len(labels):
                k = next_label
                next_label += 1
                birth(k, t)
            else:
                k = labels[j]
            doc_counts[k][t] = doc_counts[k].get(t, 0) + 1
            topic = logistic(topic_param[k])
            counts = rng.multinomial(cfg.tokens_per_doc, topic)
            token_counts = {int(i): int(c) for i, c in enumerate(counts) if c}
            region = int(rng.choice(M, p=logistic(region_param[k])))
            lat, lon = rng.multivariate_normal(means[region], covs[region])
            lat = float(np.clip(lat, -90.0, 90.0))
            lon = float(np.clip(lon, -180.0, 180.0))
            docs.append(Document(t, len(docs), token_counts, (lat, lon)))
            events.append(k)
            zs.append(region)
            logliks.append(multinomial_loglik(token_counts, topic))
    truth = SyntheticTruth(events, zs, topics, region_params, region_set, logliks)
    return docs, truth


def synthetic_vocabulary(vocab_size: int) -> Vocabulary:
    width = len(str(vocab_size - 1))
    return Vocabulary(f"w{i:0{width}d}" for i in range(vocab_size))


def write_truth(path, truth: SyntheticTruth) -> None:
    Path(path).write_text(json.dumps(truth.to_dict(), sort_keys=True))


def read_truth(path) -> SyntheticTruth:
    return SyntheticTruth.from_dict(json.loads(Path(path).read_text()))
