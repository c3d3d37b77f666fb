"""Command-line driver: ``train``, ``eval``, ``synth`` and ``sweep``.

All data goes to files under ``--out``; diagnostics go to stderr. Exit code
is 0 on success and 1 on any error (2 for usage errors).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from . import checkpoint as ckpt_io
from . import config as config_io
from .config import Config, ConfigError
from .corpus import (
    CorpusFormatError,
    Record,
    Vocabulary,
    fit_regions,
    generate_synthetic,
    read_records,
    split,
    synthetic_vocabulary,
    to_documents,
    write_corpus,
    write_truth,
)
from .evaluate import location_mse, perplexity
from .model import RegionSet
from .smc import run

log = logging.getLogger("rcrp_smc")

METRICS_HEADER = ("run_id", "metric", "value")


class CLIError(Exception):
    pass


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_records(path: Path, records: Sequence[Record]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(f"{r.timestamp!r}\t{r.lat!r}\t{r.lon!r}\t{' '.join(r.tokens)}\n")


def _run_id(manifest_config: dict, corpus_hash: str) -> str:
    # the thread count cannot change results, so it does not change the id
    run = {k: v for k, v in manifest_config["run"].items() if k != "threads"}
    blob = json.dumps({"config": dict(manifest_config, run=run), "corpus": corpus_hash},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _fmt(x: float) -> str:
    return repr(float(x))


def train(cfg: Config, out: Path) -> dict:
    """Fit the filter on the training split; returns the manifest."""
    if cfg.corpus.path is None:
        raise ConfigError("corpus.path: required for train")
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.hyperparams
    seed = cfg.run.seed
    try:
        records = read_records(cfg.corpus.path)
    except OSError as e:
        raise ConfigError(f"corpus.path: cannot read {cfg.corpus.path}: {e.strerror}") from None
    if not records:
        raise CorpusFormatError(f"{cfg.corpus.path}: no records")
    origin = min(r.timestamp for r in records)
    if cfg.corpus.test_fraction > 0:
        train_recs, test_recs = split(records, 1.0 - cfg.corpus.test_fraction, seed)
    else:
        train_recs, test_recs = list(records), []
    vocab = Vocabulary.build(train_recs, cfg.corpus.min_frequency)
    if len(vocab) == 0:
        raise CorpusFormatError("no token reaches corpus.min_frequency in the training split")
    docs = to_documents(train_recs, vocab, cfg.corpus.epoch_seconds, origin)
    if not docs:
        raise CorpusFormatError("training split has no documents after vocabulary filtering")
    if cfg.regions.path is not None:
        try:
            regions = RegionSet.from_dict(json.loads(Path(cfg.regions.path).read_text()))
        except (OSError, json.JSONDecodeError, KeyError) as e:
            raise ConfigError(f"regions.path: cannot load {cfg.regions.path}: {e}") from None
    else:
        regions = fit_regions([d.location for d in docs], h.num_regions, seed)
    if len(regions) != h.num_regions:
        raise ConfigError(
            f"hyperparams.num_regions: {h.num_regions} but region file has {len(regions)}")

    corpus_hash = _sha256(cfg.corpus.path)
    manifest_config = cfg.to_dict()
    run_id = _run_id(manifest_config, corpus_hash)
    meta = {"run_id": run_id, "origin": origin, "epoch_seconds": cfg.corpus.epoch_seconds}
    vocab_dict = vocab.to_dict()

    ckpt_dir = out / "checkpoints"
    if cfg.run.epoch_checkpoints:
        ckpt_dir.mkdir(exist_ok=True)

    def on_epoch_end(state):
        if cfg.run.epoch_checkpoints:
            ckpt_io.save(ckpt_dir / f"epoch-{state.epoch:05d}.json",
                         ckpt_io.Checkpoint(state, h, regions, vocab_dict, meta))
        log.info("epoch %d done (%d documents)", state.epoch, state.docs_processed)

    result = run(docs, regions, h, seed, len(vocab), threads=cfg.run.threads,
                 on_epoch_end=on_epoch_end, top_n=cfg.run.top_n)

    ckpt_io.save(out / "checkpoint.json",
                 ckpt_io.Checkpoint(result.state, h, regions, vocab_dict, meta))
    with open(out / "events.jsonl", "w", encoding="utf-8") as fh:
        for rec in result.summaries:
            rec = dict(rec, top_words=[[vocab.id_to_token[i], p] for i, p in rec["top_words"]])
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    _write_json(out / "regions.json", regions.to_dict())
    _write_records(out / "test.tsv", test_recs)
    manifest = {
        "run_id": run_id,
        "command": "train",
        "config": manifest_config,
        "corpus_sha256": corpus_hash,
        "origin": origin,
        "vocab_size": len(vocab),
        "num_train_documents": len(docs),
        "num_test_records": len(test_recs),
        "num_epochs": len({d.epoch for d in docs}),
        "regions_source": cfg.regions.path or "kmeans",
    }
    _write_json(out / "manifest.json", manifest)
    return manifest


def _load_state(path: Path):
    """A checkpoint file, or a directory of per-epoch checkpoints."""
    if path.is_dir():
        files = sorted(path.glob("epoch-*.json"))
        if not files:
            raise CLIError(f"{path}: no epoch-*.json checkpoints")
        cks = [ckpt_io.load(f) for f in files]
        return cks[-1], {c.state.epoch: c.state for c in cks}
    c = ckpt_io.load(path)
    return c, c.state


def evaluate(checkpoint: Path, test: Path, out: Path, drop_unknown: bool = False) -> list[tuple]:
    ck, state = _load_state(checkpoint)
    if ck.vocabulary is None:
        raise CLIError(f"{checkpoint}: checkpoint has no vocabulary")
    vocab = Vocabulary.from_dict(ck.vocabulary)
    records = read_records(test)
    unknown = sorted({t for r in records for t in r.tokens if t not in vocab.token_to_id})
    if unknown and not drop_unknown:
        shown = ", ".join(unknown[:5])
        raise CLIError(f"vocabulary mismatch: {len(unknown)} test token types are not in the "
                       f"checkpoint vocabulary (e.g. {shown}); pass --drop-unknown to skip them")
    meta = ck.meta
    docs = to_documents(records, vocab, meta.get("epoch_seconds", 1.0),
                        meta.get("origin"))
    if not docs:
        raise CLIError(f"{test}: no test documents")
    h = ck.hyperparams
    ppl = perplexity(docs, state, ck.regions, h)
    mse = location_mse(docs, state, ck.regions, h)
    run_id = meta.get("run_id", "")
    rows = [(run_id, "perplexity", _fmt(ppl)),
            (run_id, "exp_perplexity", _fmt(math.exp(ppl))),
            (run_id, "location_mse_deg2", _fmt(mse)),
            (run_id, "num_test_documents", str(len(docs)))]
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        w.writerows(rows)
    return rows


def synth(cfg: Config, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    sc = cfg.synthetic_config()
    seed = cfg.run.seed
    docs, truth = generate_synthetic(sc, seed)
    vocab = synthetic_vocabulary(sc.vocab_size)
    write_corpus(out / "corpus.tsv", docs, vocab, sc.epoch_seconds, 0.0)
    write_truth(out / "truth.json", truth)
    _write_json(out / "regions.json", truth.region_set.to_dict())
    manifest = {"command": "synth", "config": cfg.to_dict(), "num_documents": len(docs),
                "num_events": len(set(truth.events))}
    _write_json(out / "manifest.json", manifest)
    return manifest


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _sweep_point(args) -> dict:
    cfg, point_dir = args
    row = _flatten(cfg.to_dict())
    try:
        manifest = train(cfg, point_dir)
        rows = evaluate(point_dir / "checkpoint.json", point_dir / "test.tsv", point_dir,
                        drop_unknown=True)
        row["run_id"] = manifest["run_id"]
        for _, metric, value in rows:
            row[metric] = value
        row["status"] = "ok"
        row["error"] = ""
    except Exception as e:  # one failed point must not abort the sweep
        row["status"] = "error"
        row["error"] = f"{type(e).__name__}: {e}"
    return row


def sweep(cfg: Config, grid_path: Path, out: Path, parallel: int = 1) -> list[dict]:
    points = config_io.load_grid(grid_path)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for i, point in enumerate(points):
        try:
            h = dataclasses.replace(cfg.hyperparams, **point)
            point_cfg = dataclasses.replace(cfg, hyperparams=h)
        except (TypeError, ValueError) as e:
            jobs.append((None, point, f"{type(e).__name__}: hyperparams.{e}"))
            continue
        jobs.append((point_cfg, point, None))
    runnable = [(c, out / f"point-{i:03d}") for i, (c, _, err) in enumerate(jobs) if err is None]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            done = iter(list(pool.map(_sweep_point, runnable)))
    else:
        done = iter([_sweep_point(a) for a in runnable])
    rows = []
    for i, (c, point, err) in enumerate(jobs):
        if err is None:
            row = next(done)
        else:
            row = _flatten(cfg.to_dict())
            row.update({f"hyperparams.{k}": v for k, v in point.items()})
            row.update(status="error", error=err)
        row["point"] = i
        rows.append(row)
        if row["status"] == "error":
            log.warning("grid point %d failed: %s", i, row["error"])
    metric_cols = ["perplexity", "exp_perplexity", "location_mse_deg2", "num_test_documents"]
    config_cols = sorted(_flatten(cfg.to_dict()))
    cols = ["point", "run_id", "status", "error"] + config_cols + metric_cols
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, restval="", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in cols})
    return rows


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rcrp-smc",
                                     description="Streaming spatio-temporal event clustering.")
    parser.add_argument("--seed", type=int, help="override run.seed")
    parser.add_argument("--threads", type=int, help="override run.threads")
    parser.add_argument("-v", "--verbose", action="store_true", help="progress logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the particle filter over a corpus")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("eval", help="score a held-out corpus against a checkpoint")
    p.add_argument("--checkpoint", required=True, type=Path,
                   help="checkpoint file, or a directory of per-epoch checkpoints")
    p.add_argument("--test", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--drop-unknown", action="store_true",
                   help="ignore test tokens missing from the checkpoint vocabulary")

    p = sub.add_parser("synth", help="generate a synthetic corpus with ground truth")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("sweep", help="train and evaluate over a hyperparameter grid")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--grid", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--parallel", type=int, default=1, help="grid points run concurrently")
    return parser


def _load_config(args) -> Config:
    cfg = config_io.load(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if overrides:
        try:
            cfg = dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, **overrides))
        except ValueError as e:
            raise ConfigError(f"run.{e}") from None
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "train":
            train(_load_config(args), args.out)
        elif args.command == "eval":
            evaluate(args.checkpoint, args.test, args.out, args.drop_unknown)
        elif args.command == "synth":
            synth(_load_config(args), args.out)
        elif args.command == "sweep":
            rows = sweep(_load_config(args), args.grid, args.out, args.parallel)
            failed = sum(r["status"] == "error" for r in rows)
            if failed:
                log.warning("%d of %d grid points failed", failed, len(rows))
    except (ConfigError, CorpusFormatError, ckpt_io.CheckpointError, CLIError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
