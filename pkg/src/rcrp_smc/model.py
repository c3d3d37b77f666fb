"""Core domain types: hyperparameters, documents, cluster statistics, regions.

Cluster statistics are kept per epoch only for document counts (the RCRP
prior needs the decay window); word and region counts are kept for the
current epoch plus a running all-epoch total, which is everything the three
point estimators read.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields
from functools import cached_property
from typing import Iterable, Mapping, Optional

import numpy as np

from .emissions import smooth
from .laplace import estimate
from .prior import decayed_mass


class Solution(str, enum.Enum):
    """Which Laplace point estimate feeds the emission probabilities."""

    S1 = "S1"  # current-epoch counts only
    S2 = "S2"  # all-epoch counts
    S3 = "S3"  # Lambert-W combination of current counts and the prior


@dataclass(frozen=True)
class Hyperparams:
    gamma: float = 1.0
    alpha: float = 1.0
    delta: int = 2
    rho0: float = 1.0
    tau0: float = 1.0
    num_particles: int = 8
    max_iter: int = 3
    ess_threshold: Optional[float] = None
    num_regions: int = 16
    solution: Solution = Solution.S3

    def __post_init__(self):
        if isinstance(self.solution, str) and not isinstance(self.solution, Solution):
            try:
                object.__setattr__(self, "solution", Solution(self.solution))
            except ValueError:
                raise ValueError(f"solution: expected one of S1, S2, S3, got {self.solution!r}")
        for name in ("gamma", "alpha", "rho0", "tau0"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValueError(f"{name}: must be a positive real, got {value!r}")
        if not isinstance(self.delta, int) or self.delta < 0:
            raise ValueError(f"delta: must be a nonnegative integer, got {self.delta!r}")
        for name in ("num_particles", "max_iter", "num_regions"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name}: must be a positive integer, got {value!r}")
        if self.ess_threshold is None:
            object.__setattr__(self, "ess_threshold", max(1.0, self.num_particles / 2))
        thr = self.ess_threshold
        if not (isinstance(thr, (int, float)) and 1.0 <= thr <= self.num_particles):
            raise ValueError(
                f"ess_threshold: must lie in [1, num_particles={self.num_particles}], got {thr!r}"
            )

    def scale_for(self, kind: str) -> float:
        return self.tau0 if kind == "topic" else self.rho0

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["solution"] = self.solution.value
        return out


@dataclass(frozen=True)
class Document:
    """One observation: epoch ``t``, stream index ``d``, token counts, (lat, lon)."""

    epoch: int
    index: int
    token_counts: Mapping[int, int]
    location: tuple[float, float]

    def __post_init__(self):
        if self.epoch < 0 or self.index < 0:
            raise ValueError("epoch and index must be nonnegative")
        for tok, cnt in self.token_counts.items():
            if tok < 0 or cnt <= 0:
                raise ValueError(f"bad token count {tok}:{cnt} in document {self.index}")
        lat, lon = self.location
        if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
            raise ValueError(f"location {self.location} out of range in document {self.index}")

    @cached_property
    def ids(self) -> np.ndarray:
        return np.fromiter(sorted(self.token_counts), dtype=np.int64, count=len(self.token_counts))

    @cached_property
    def counts(self) -> np.ndarray:
        return np.array([self.token_counts[i] for i in self.ids.tolist()], dtype=np.float64)

    @cached_property
    def num_tokens(self) -> int:
        return int(sum(self.token_counts.values()))


@dataclass(frozen=True)
class Assignment:
    event: int
    region: int


@dataclass
class Region:
    mean: np.ndarray
    cov: np.ndarray


class RegionSet:
    """The M fixed bivariate Gaussian location components."""

    def __init__(self, means, covs):
        means = np.asarray(means, dtype=np.float64).reshape(-1, 2)
        covs = np.asarray(covs, dtype=np.float64).reshape(-1, 2, 2)
        if len(means) != len(covs) or len(means) == 0:
            raise ValueError("need one covariance per region mean")
        if not np.allclose(covs, np.transpose(covs, (0, 2, 1))):
            raise ValueError("region covariances must be symmetric")
        dets = covs[:, 0, 0] * covs[:, 1, 1] - covs[:, 0, 1] * covs[:, 1, 0]
        if np.any(dets <= 0) or np.any(covs[:, 0, 0] <= 0):
            raise ValueError("region covariances must be positive definite")
        self.means = means
        self.covs = covs
        self.inv_covs = np.linalg.inv(covs)
        self.log_dets = np.log(dets)

    def __len__(self):
        return len(self.means)

    @property
    def regions(self) -> list[Region]:
        return [Region(m, c) for m, c in zip(self.means, self.covs)]

    def location_logliks(self, location) -> np.ndarray:
        """Log density of ``location`` under every region, shape (M,)."""
        diff = np.asarray(location, dtype=np.float64) - self.means
        maha = np.einsum("mi,mij,mj->m", diff, self.inv_covs, diff)
        return -math.log(2 * math.pi) - 0.5 * self.log_dets - 0.5 * maha

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "covs": self.covs.tolist()}

    @classmethod
    def from_dict(cls, d) -> "RegionSet":
        return cls(d["means"], d["covs"])


def logistic(v) -> np.ndarray:
    """Softmax with max-subtraction."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("logistic of an empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("logistic input must be finite")
    e = np.exp(v - v.max())
    return e / e.sum()


class RegistrationError(RuntimeError):
    pass


class ClusterState:
    """Sufficient statistics and prior point estimates for one event.

    ``word_counts``/``region_counts`` hold the current epoch ``self.epoch``;
    ``word_history``/``region_history`` accumulate every epoch. ``prior_topic``
    and ``prior_region`` are replaced wholesale at roll-forward and never
    mutated in place, so clones may share them.
    """

    def __init__(self, label: int, birth_epoch: int, vocab_size: int, num_regions: int,
                 prior_topic=None, prior_region=None):
        self.label = label
        self.birth_epoch = birth_epoch
        self.epoch = birth_epoch
        self.doc_counts: dict[int, int] = {}
        self.members: dict[int, int] = {}
        self.word_counts = np.zeros(vocab_size)
        self.region_counts = np.zeros(num_regions)
        self.word_history = np.zeros(vocab_size)
        self.region_history = np.zeros(num_regions)
        self.num_words = 0.0
        self.prior_topic = (np.full(vocab_size, 1.0 / vocab_size) if prior_topic is None
                            else np.asarray(prior_topic, dtype=np.float64))
        self.prior_region = (np.full(num_regions, 1.0 / num_regions) if prior_region is None
                             else np.asarray(prior_region, dtype=np.float64))
        self._cache = None
        self._mass = None

    @property
    def vocab_size(self) -> int:
        return len(self.word_counts)

    @property
    def num_regions(self) -> int:
        return len(self.region_counts)

    @property
    def num_docs(self) -> int:
        """m_{t,k} for the current epoch."""
        return self.doc_counts.get(self.epoch, 0)

    def is_empty(self) -> bool:
        return not self.region_history.any()

    def clone(self) -> "ClusterState":
        new = object.__new__(ClusterState)
        new.__dict__.update(self.__dict__)
        new.doc_counts = dict(self.doc_counts)
        new.members = dict(self.members)
        new.word_counts = self.word_counts.copy()
        new.region_counts = self.region_counts.copy()
        new.word_history = self.word_history.copy()
        new.region_history = self.region_history.copy()
        return new

    def advance(self, epoch: int, delta: Optional[int] = None) -> None:
        """Start a new current epoch; drops per-epoch entries outside the window."""
        if epoch < self.epoch:
            raise RegistrationError(f"cannot move cluster {self.label} back to epoch {epoch}")
        if epoch == self.epoch:
            return
        self.epoch = epoch
        self.members = {}
        self.word_counts = np.zeros_like(self.word_counts)
        self.region_counts = np.zeros_like(self.region_counts)
        self.num_words = 0.0
        if delta is not None:
            self.doc_counts = {e: m for e, m in self.doc_counts.items() if e >= epoch - delta}
        self._cache = None
        self._mass = None

    def log_mass(self, t: int, h: Hyperparams) -> float:
        """Log decayed document mass at epoch ``t`` (-inf when dead), cached."""
        key = (t, h.alpha, h.delta)
        cached = self._mass
        if cached is not None and cached[0] == key:
            return cached[1]
        mass = decayed_mass(self, t, h)
        value = math.log(mass) if mass > 0 else -math.inf
        self._mass = (key, value)
        return value

    def estimates(self, h: Hyperparams) -> tuple[np.ndarray, np.ndarray]:
        """Raw (unsmoothed) topic and region estimates under ``h.solution``."""
        topic = estimate(h.solution, self.word_counts, self.num_words, self.word_history,
                         self.prior_topic, h.tau0)
        region = estimate(h.solution, self.region_counts, float(self.num_docs),
                          self.region_history, self.prior_region, h.rho0)
        return topic, region

    def log_estimates(self, h: Hyperparams) -> tuple[np.ndarray, np.ndarray]:
        """Smoothed log estimates, cached until the counts change."""
        key = (h.solution, h.tau0, h.rho0)
        cache = self._cache
        if cache is not None and cache[0] == key:
            return cache[1], cache[2]
        topic, region = self.estimates(h)
        log_topic = np.log(smooth(topic))
        log_region = np.log(smooth(region))
        self._cache = (key, log_topic, log_region)
        return log_topic, log_region

    def roll_forward(self, h: Hyperparams) -> None:
        """The end-of-epoch estimates become the prior means for the next epoch."""
        topic, region = self.estimates(h)
        self.prior_topic = topic
        self.prior_region = region
        self._cache = None


def register(state: ClusterState, doc: Document, region: int) -> ClusterState:
    """Add ``doc`` (with region ``region``) to the cluster's counts, in place.

    A document from a later epoch closes the cluster's current epoch first
    (its documents become history and can no longer be unregistered). The
    prior is not rolled forward here; the filter does that at epoch ends.
    """
    if doc.epoch > state.epoch:
        state.advance(doc.epoch)
    elif doc.epoch < state.epoch:
        raise RegistrationError(f"document {doc.index} belongs to a past epoch")
    if doc.index in state.members:
        raise RegistrationError(f"document {doc.index} already registered in cluster {state.label}")
    if not 0 <= region < state.num_regions:
        raise IndexError(f"region {region} out of range")
    ids = doc.ids
    if len(ids) and ids[-1] >= state.vocab_size:
        raise IndexError(f"token id {ids[-1]} out of vocabulary")
    state.members[doc.index] = region
    state.doc_counts[doc.epoch] = state.doc_counts.get(doc.epoch, 0) + 1
    state.word_counts[ids] += doc.counts
    state.word_history[ids] += doc.counts
    state.num_words += doc.num_tokens
    state.region_counts[region] += 1
    state.region_history[region] += 1
    state._cache = None
    state._mass = None
    return state


def unregister(state: ClusterState, doc: Document, region: int) -> ClusterState:
    """Exact inverse of :func:`register`."""
    if state.members.get(doc.index) != region or doc.epoch != state.epoch:
        raise RegistrationError(
            f"document {doc.index} is not registered in cluster {state.label} with region {region}")
    del state.members[doc.index]
    m = state.doc_counts[doc.epoch] - 1
    if m:
        state.doc_counts[doc.epoch] = m
    else:
        del state.doc_counts[doc.epoch]
    ids = doc.ids
    state.word_counts[ids] -= doc.counts
    state.word_history[ids] -= doc.counts
    state.num_words -= doc.num_tokens
    state.region_counts[region] -= 1
    state.region_history[region] -= 1
    state._cache = None
    state._mass = None
    return state


def prune_dead(clusters: Iterable[ClusterState], t: int, h: Hyperparams) -> list[ClusterState]:
    """Drop clusters with zero decayed document mass at epoch ``t``."""
    return [c for c in clusters if decayed_mass(c, t, h) > 0]
