"""Run experiment grids and plot them.

    python scripts/run_sweeps.py                      # all desk-scale sweeps
    python scripts/run_sweeps.py configs/width_sweep.ini --jobs 4

Each ``<name>.ini`` gives ``results/<name>.csv`` and ``results/<name>.svg``.
"""
import argparse
import sys
from pathlib import Path

from ngmca.cli import main as cli

HERE = Path(__file__).resolve().parent
DESK = ["noise_sweep", "width_sweep", "measurements_sweep", "sources_sweep", "reweighting"]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("configs", nargs="*", help="INI files (default: the desk-scale sweeps)")
    p.add_argument("--out", default=str(HERE / "results"))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int)
    args = p.parse_args(argv)
    configs = [Path(c) for c in args.configs] or [HERE / "configs" / f"{n}.ini" for n in DESK]
    out = Path(args.out)
    for cfg in configs:
        csv_path = out / f"{cfg.stem}.csv"
        run_args = ["run", "--config", str(cfg), "--out", str(csv_path), "--jobs", str(args.jobs)]
        if args.seed is not None:
            run_args += ["--seed", str(args.seed)]
        code = cli(run_args)
        if code:
            return code
        code = cli(["plot", str(csv_path), "--out", str(out / f"{cfg.stem}.svg")])
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
