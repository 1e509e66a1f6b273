"""Per-seed median SDR of every variant on the desk-scale batch.

m=16, n=256, r=5, 20 dB, seeds 0-9, peak widths 1, 4 and 16. Prints one row
per configuration and the per-seed orderings checked by the acceptance tests.

    python scripts/desk_benchmark.py [--seeds 10] [--json out.json]
"""
import argparse
import json
import time

import numpy as np

from ngmca.datagen import make_dataset
from ngmca.evaluation import evaluate
from ngmca.separation import NgmcaConfig, Problem, run_ngmca

RUNS = [
    ("direct", 4.0, False),
    ("ortho", 4.0, False),
    ("synthesis", 4.0, False),
    ("analysis", 4.0, False),
    ("analysis", 4.0, True),
    ("convolutive", 4.0, False),
    ("analysis", 1.0, False),
    ("convolutive", 1.0, False),
    ("analysis", 16.0, False),
    ("convolutive", 16.0, False),
]


def run(variant, fwhm, reweighted, seeds):
    out = []
    for s in range(seeds):
        d = make_dataset(n=256, m=16, r=5, snr_db=20.0, fwhm=fwhm, seed=s)
        res = run_ngmca(Problem(d.Y, 5), NgmcaConfig(variant=variant, seed=s, reweighted=reweighted))
        out.append(evaluate(res.S, d.S, d.Z).median())
    return np.array(out)


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--json")
    args = p.parse_args()
    table = {}
    for variant, fwhm, rew in RUNS:
        key = f"{variant}{'-rew' if rew else ''}@{fwhm:g}"
        t0 = time.perf_counter()
        table[key] = run(variant, fwhm, rew, args.seeds)
        print(f"{key:18s} median {np.median(table[key]):6.2f} dB  "
              f"[{' '.join(f'{v:5.1f}' for v in table[key])}]  {time.perf_counter() - t0:6.1f} s", flush=True)
    d, o, a = table["direct@4"], table["ortho@4"], table["analysis@4"]
    print(f"analysis >= ortho >= direct on {np.sum((a >= o) & (o >= d))}/{args.seeds} seeds")
    print(f"reweighted > plain analysis on {np.sum(table['analysis-rew@4'] > a)}/{args.seeds} seeds")
    for f in (1, 4, 16):
        print(f"fwhm={f}: convolutive > analysis on {np.sum(table[f'convolutive@{f}'] > table[f'analysis@{f}'])}/{args.seeds} seeds")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({k: v.tolist() for k, v in table.items()}, fh, indent=1)


if __name__ == "__main__":
    main()
