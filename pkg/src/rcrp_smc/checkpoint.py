"""JSON snapshots of a filter state.

Arrays are stored as zlib-compressed little-endian float64, base64 encoded.
Clusters shared between particles (after resampling) are written once and
referenced by position, so sharing survives a round trip. Output is
canonical: save(load(save(x))) is byte-identical to save(x).
"""

from __future__ import annotations

import base64
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .model import Assignment, ClusterState, Hyperparams, RegionSet
from .smc import FilterState, Particle

FORMAT = "rcrp-smc-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_array(a) -> str:
    raw = np.ascontiguousarray(a, dtype="<f8").tobytes()
    return base64.b64encode(zlib.compress(raw, 6)).decode("ascii")


def decode_array(s: str) -> np.ndarray:
    raw = zlib.decompress(base64.b64decode(s.encode("ascii")))
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def _cluster_to_dict(c: ClusterState) -> dict:
    return {
        "label": c.label,
        "birth_epoch": c.birth_epoch,
        "epoch": c.epoch,
        "doc_counts": sorted([e, m] for e, m in c.doc_counts.items()),
        "members": sorted([d, region] for d, region in c.members.items()),
        "num_words": c.num_words,
        "word_counts": encode_array(c.word_counts),
        "region_counts": encode_array(c.region_counts),
        "word_history": encode_array(c.word_history),
        "region_history": encode_array(c.region_history),
        "prior_topic": encode_array(c.prior_topic),
        "prior_region": encode_array(c.prior_region),
    }


def _cluster_from_dict(d: dict) -> ClusterState:
    c = object.__new__(ClusterState)
    c.label = d["label"]
    c.birth_epoch = d["birth_epoch"]
    c.epoch = d["epoch"]
    c.doc_counts = {e: m for e, m in d["doc_counts"]}
    c.members = {i: region for i, region in d["members"]}
    c.num_words = float(d["num_words"])
    for name in ("word_counts", "region_counts", "word_history", "region_history",
                 "prior_topic", "prior_region"):
        setattr(c, name, decode_array(d[name]))
    c._cache = None
    c._mass = None
    return c


def _assignments_to_list(a: dict) -> list:
    return [[i, x.event, x.region] for i, x in sorted(a.items())]


def _assignments_from_list(rows) -> dict:
    return {i: Assignment(e, region) for i, e, region in rows}


def state_to_dict(state: FilterState) -> dict:
    pool: list[ClusterState] = []
    seen: dict[int, int] = {}
    particles = []
    for p in state.particles:
        refs = []
        for label in sorted(p.clusters):
            c = p.clusters[label]
            if id(c) not in seen:
                seen[id(c)] = len(pool)
                pool.append(c)
            refs.append(seen[id(c)])
        epochs = []
        node = p.history
        while node is not None:
            epochs.append(_assignments_to_list(node[0]))
            node = node[1]
        particles.append({
            "log_weight": p.log_weight,
            "next_label": p.next_label,
            "clusters": refs,
            "current": _assignments_to_list(p.current),
            "history": epochs[::-1],
        })
    return {
        "epoch": state.epoch,
        "docs_processed": state.docs_processed,
        "rng_seed": state.rng_seed,
        "vocab_size": state.vocab_size,
        "num_regions": state.num_regions,
        "clusters": [_cluster_to_dict(c) for c in pool],
        "particles": particles,
    }


def state_from_dict(d: dict) -> FilterState:
    pool = [_cluster_from_dict(c) for c in d["clusters"]]
    particles = []
    for pd in d["particles"]:
        p = Particle(d["vocab_size"], d["num_regions"])
        p.log_weight = float(pd["log_weight"])
        p.next_label = pd["next_label"]
        p.clusters = {pool[i].label: pool[i] for i in pd["clusters"]}
        p.current = _assignments_from_list(pd["current"])
        for chunk in pd["history"]:
            p.history = (_assignments_from_list(chunk), p.history)
        # nothing is owned: the first write to any cluster clones it
        particles.append(p)
    return FilterState(particles, d["epoch"], d["docs_processed"], d["rng_seed"],
                       d["vocab_size"], d["num_regions"])


@dataclass
class Checkpoint:
    state: FilterState
    hyperparams: Hyperparams
    regions: RegionSet
    vocabulary: Optional[dict] = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "hyperparams": self.hyperparams.to_dict(),
            "regions": self.regions.to_dict(),
            "vocabulary": self.vocabulary,
            "meta": self.meta,
            "state": state_to_dict(self.state),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        if d.get("format") != FORMAT:
            raise CheckpointError("not a checkpoint file")
        if d.get("version") != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {d.get('version')!r}")
        return cls(state_from_dict(d["state"]), Hyperparams(**d["hyperparams"]),
                   RegionSet.from_dict(d["regions"]), d.get("vocabulary"), d.get("meta", {}))


def dumps(ckpt: Checkpoint) -> str:
    return json.dumps(ckpt.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"


def save(path, ckpt: Checkpoint) -> None:
    Path(path).write_text(dumps(ckpt), encoding="utf-8")


def load(path) -> Checkpoint:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: not valid JSON ({e})") from None
    return Checkpoint.from_dict(d)
