"""Wall time and peak memory of the filter on a large synthetic stream.

    python3 scripts/throughput.py --docs 100000 --vocab 5000
"""

import argparse
import resource
import time

from rcrp_smc.corpus import SyntheticConfig, generate_synthetic
from rcrp_smc.model import Hyperparams
from rcrp_smc.smc import run


def peak_gb() -> float:
    # ru_maxrss is in kilobytes on Linux
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1e6


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--docs", type=int, default=100_000)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--vocab", type=int, default=5000)
    ap.add_argument("--regions", type=int, default=16)
    ap.add_argument("--particles", type=int, default=8)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--init-scale", type=float, default=4.0)
    ap.add_argument("--every", type=int, default=10_000, help="progress interval")
    args = ap.parse_args()

    h = Hyperparams(num_regions=args.regions, num_particles=args.particles, max_iter=3)
    cfg = SyntheticConfig(num_epochs=args.epochs, docs_per_epoch=args.docs // args.epochs,
                          vocab_size=args.vocab, num_regions=args.regions, hyperparams=h,
                          init_scale=args.init_scale)
    t0 = time.perf_counter()
    docs, truth = generate_synthetic(cfg, 0)
    print(f"generated {len(docs)} documents, {len(set(truth.events))} true events "
          f"in {time.perf_counter() - t0:.1f}s", flush=True)

    t1 = time.perf_counter()

    def progress(state, info):
        if state.docs_processed % args.every == 0:
            print(f"{state.docs_processed} docs {time.perf_counter() - t1:.1f}s "
                  f"peak {peak_gb():.2f} GB", flush=True)

    res = run(docs, truth.region_set, h, 0, args.vocab, threads=args.threads,
              on_document=progress)
    print(f"filter {time.perf_counter() - t1:.1f}s, total {time.perf_counter() - t0:.1f}s, "
          f"{len(res.state.best_particle().clusters)} live events, peak {peak_gb():.2f} GB")


if __name__ == "__main__":
    main()
