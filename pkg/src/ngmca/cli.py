"""Command-line benchmark harness.

Subcommands::

    ngmca generate --config exp.ini --out data/      # S, A, Z, Y + manifest.json
    ngmca run      --config exp.ini --out res.csv    # Monte-Carlo grid -> CSV
    ngmca plot     res.csv --out res.svg             # mean SDR vs swept value
    ngmca eval     --estimate S_hat.bin --reference S.bin [--noise Z.bin]

Exit codes: 0 on success, 2 on a configuration error, 1 on any other error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .datagen import load_matrix, make_dataset, save_matrix
from .evaluation import evaluate
from .separation import NgmcaConfig, Problem, estimate_noise_std, run_ngmca, sparse_hals_baseline
from .transforms import ConvolutionKernel

log = logging.getLogger(__name__)

__all__ = [
    "ALGORITHMS",
    "CSV_COLUMNS",
    "SWEEP_PARAMS",
    "ConfigError",
    "DataParams",
    "ExperimentGrid",
    "load_config",
    "run_seed",
    "run_grid",
    "write_csv",
    "render_svg",
    "main",
]

# algorithm name -> (variant, reweighted); None marks the HALS baseline
ALGORITHMS = {
    "ngmca": ("direct", False),
    "ngmca-ortho": ("ortho", False),
    "ngmca-syn": ("synthesis", False),
    "ngmca-ana": ("analysis", False),
    "ngmca-conv": ("convolutive", False),
    "ngmca-ana-rew": ("analysis", True),
    "ngmca-syn-rew": ("synthesis", True),
    "hals": None,
}
SWEEP_PARAMS = ("snr_db", "m", "r", "kernel_fwhm")
CSV_COLUMNS = ("algorithm", "sweep_param", "sweep_value", "run", "seed",
               "sdr_median", "sdr_mean", "sir", "snr", "sar", "wall_ms", "iters")
_NGMCA_KEYS = {"K": int, "refinement_iters": int, "inner_iters": int, "final_inner_iters": int,
               "levels": int, "wavelet": str, "tau_sigma_inf": float, "conv_fwhm": float,
               "reweight_passes": int}


class ConfigError(ValueError):
    """Invalid experiment configuration (exit code 2)."""


@dataclass
class DataParams:
    n: int = 1024
    m: int = 32
    r: int = 12
    snr_db: float = 20.0
    fwhm: float = 4.0

    def __post_init__(self):
        if not 1 <= self.r <= self.m:
            raise ConfigError(f"need 1 <= r <= m, got m={self.m}, r={self.r}")
        if self.n < 2 or not self.fwhm > 0 or math.isnan(self.snr_db):
            raise ConfigError("need n >= 2, fwhm > 0 and a numeric snr_db")

    def with_sweep(self, param, value):
        if param == "kernel_fwhm":
            return DataParams(**{**asdict(self), "fwhm": float(value)})
        cast = float if param == "snr_db" else int
        return DataParams(**{**asdict(self), param: cast(value)})


@dataclass
class ExperimentGrid:
    """A swept parameter, its values and the fixed settings of every run."""

    data: DataParams = field(default_factory=DataParams)
    algorithms: tuple = ("ngmca",)
    sweep_param: str = "snr_db"
    sweep_values: tuple = (20.0,)
    n_runs: int = 1
    seed: int = 0
    ngmca: dict = field(default_factory=dict)
    hals: dict = field(default_factory=dict)

    def __post_init__(self):
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown:
            raise ConfigError(f"unknown algorithm(s) {', '.join(unknown)}; "
                              f"valid names: {', '.join(ALGORITHMS)}")
        if not self.algorithms:
            raise ConfigError("no algorithm selected")
        if self.sweep_param not in SWEEP_PARAMS:
            raise ConfigError(f"sweep_param must be one of {', '.join(SWEEP_PARAMS)}")
        if not self.sweep_values:
            raise ConfigError("sweep_values is empty")
        if list(self.sweep_values) != sorted(self.sweep_values):
            raise ConfigError("sweep_values must be sorted")
        if self.n_runs < 1:
            raise ConfigError("n_runs must be >= 1")
        for value in self.sweep_values:
            self.data.with_sweep(self.sweep_param, value)
        kw = {k: v for k, v in self.ngmca.items() if k != "conv_fwhm"}
        try:
            NgmcaConfig(**kw)
        except ValueError as exc:
            raise ConfigError(f"[ngmca]: {exc}") from exc


def _parse_list(text, cast):
    return tuple(cast(v) for v in text.replace(",", " ").split())


def load_config(path=None, seed=None):
    """Read an INI experiment file; missing sections and keys keep their defaults.

    Sections are ``[data]`` (n, m, r, snr_db, fwhm), ``[experiment]``
    (algorithms, sweep_param, sweep_values, n_runs, seed), ``[ngmca]`` and
    ``[hals]`` (lam, iters). ``seed`` overrides the file's master seed.
    """
    cp = configparser.ConfigParser()
    if path is not None:
        try:
            with open(path) as f:
                cp.read_file(f)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    try:
        data = DataParams(**{k: (float if k in ("snr_db", "fwhm") else int)(v)
                             for k, v in cp["data"].items()}) if cp.has_section("data") else DataParams()
        exp = cp["experiment"] if cp.has_section("experiment") else {}
        grid_kw = {}
        if "algorithms" in exp:
            grid_kw["algorithms"] = _parse_list(exp["algorithms"], str)
        if "sweep_param" in exp:
            grid_kw["sweep_param"] = exp["sweep_param"].strip()
        if "sweep_values" in exp:
            grid_kw["sweep_values"] = _parse_list(exp["sweep_values"], float)
        else:
            param = grid_kw.get("sweep_param", "snr_db")
            if param not in SWEEP_PARAMS:
                raise ConfigError(f"sweep_param must be one of {', '.join(SWEEP_PARAMS)}")
            grid_kw["sweep_values"] = (float(getattr(data, "fwhm" if param == "kernel_fwhm" else param)),)
        if "n_runs" in exp:
            grid_kw["n_runs"] = int(exp["n_runs"])
        grid_kw["seed"] = int(exp.get("seed", 0)) if seed is None else int(seed)
        ngmca = {}
        for k, v in (cp["ngmca"].items() if cp.has_section("ngmca") else ()):
            # configparser lower-cases keys
            key = next((name for name in _NGMCA_KEYS if name.lower() == k), None)
            if key is None:
                raise ConfigError(f"unknown [ngmca] key {k!r}")
            ngmca[key] = _NGMCA_KEYS[key](v)
        hals = {}
        for k, v in (cp["hals"].items() if cp.has_section("hals") else ()):
            if k not in ("lam", "iters"):
                raise ConfigError(f"unknown [hals] key {k!r}")
            hals[k] = float(v) if k == "lam" else int(v)
    except TypeError as exc:
        raise ConfigError(f"bad [data] key: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return ExperimentGrid(data=data, ngmca=ngmca, hals=hals, **grid_kw)


def run_seed(master, run):
    """Seed of Monte-Carlo run ``run``; depends only on ``(master, run)``."""
    return int(np.random.SeedSequence([int(master), int(run)]).generate_state(1)[0])


def _separate(algorithm, Y, r, fwhm, seed, ngmca_kw, hals_kw):
    """Run one algorithm on ``Y``; returns ``(S_est, iterations)``."""
    spec = ALGORITHMS[algorithm]
    if spec is None:
        lam = hals_kw.get("lam")
        lam = estimate_noise_std(Y) if lam is None else lam
        iters = hals_kw.get("iters", 300)
        res = sparse_hals_baseline(Y, r, lam, iters=iters, seed=seed)
        return res.S, iters
    variant, reweighted = spec
    kw = dict(ngmca_kw)
    conv_fwhm = kw.pop("conv_fwhm", fwhm)
    res = run_ngmca(Problem(Y, r), NgmcaConfig(
        variant=variant, reweighted=reweighted, seed=seed,
        kernel=ConvolutionKernel(fwhm=conv_fwhm), **kw))
    return res.S, res.iters


def _one_run(task):
    algorithm, param, value, run, seed, data, ngmca_kw, hals_kw = task
    ds = make_dataset(n=data.n, m=data.m, r=data.r, snr_db=data.snr_db, fwhm=data.fwhm, seed=seed)
    t0 = time.perf_counter()
    S_est, iters = _separate(algorithm, ds.Y, data.r, data.fwhm, seed, ngmca_kw, hals_kw)
    wall_ms = 1e3 * (time.perf_counter() - t0)
    scores = evaluate(S_est, ds.S, ds.Z)
    return {
        "algorithm": algorithm, "sweep_param": param, "sweep_value": value, "run": run,
        "seed": seed, "sdr_median": scores.median("sdr"), "sdr_mean": scores.mean("sdr"),
        "sir": scores.mean("sir"), "snr": scores.mean("snr"), "sar": scores.mean("sar"),
        "wall_ms": wall_ms, "iters": iters,
    }


def _tasks(grid):
    for algorithm in grid.algorithms:
        for value in grid.sweep_values:
            data = grid.data.with_sweep(grid.sweep_param, value)
            for run in range(grid.n_runs):
                yield (algorithm, grid.sweep_param, value, run, run_seed(grid.seed, run),
                       data, grid.ngmca, grid.hals)


def run_grid(grid, jobs=1):
    """All rows of the grid, ordered by algorithm, sweep value and run.

    Run ``i`` uses the same data at every sweep value and for every
    algorithm. With ``jobs > 1`` runs go to a process pool; the order of the
    rows does not depend on completion order.
    """
    tasks = list(_tasks(grid))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_one_run, tasks))
    return [_one_run(t) for t in tasks]


def _fmt(v):
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def write_csv(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])


def _read_results(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ValueError(f"{path}: no result rows")
    missing = {"algorithm", "sweep_param", "sweep_value", "sdr_mean"} - set(rows[0])
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    return rows


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


def render_svg(rows, width=640, height=420):
    """SVG line chart of mean ``sdr_mean`` per algorithm against the sweep value.

    Rows whose sweep value or SDR is not finite are skipped with a warning.
    """
    series = {}
    skipped = 0
    for row in rows:
        x, y = float(row["sweep_value"]), float(row["sdr_mean"])
        if not (math.isfinite(x) and math.isfinite(y)):
            skipped += 1
            continue
        series.setdefault(row["algorithm"], {}).setdefault(x, []).append(y)
    if skipped:
        warnings.warn(f"skipped {skipped} row(s) with non-finite values", RuntimeWarning)
    if not series:
        raise ValueError("no finite rows to plot")
    xlabel = rows[0]["sweep_param"]
    points = {a: sorted((x, float(np.mean(ys))) for x, ys in pts.items()) for a, pts in series.items()}
    xs = [x for pts in points.values() for x, _ in pts]
    ys = [y for pts in points.values() for _, y in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    left, right, top, bottom = 60, 150, 20, 50
    pw, ph = width - left - right, height - top - bottom

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (y1 - y) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in np.linspace(x0, x1, 5):
        out.append(f'<text x="{px(t):.2f}" y="{top + ph + 16}" text-anchor="middle">{t:.3g}</text>')
    for t in np.linspace(y0, y1, 5):
        out.append(f'<text x="{left - 6}" y="{py(t) + 4:.2f}" text-anchor="end">{t:.3g}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="15" y="{top + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 15 {top + ph / 2})">mean SDR (dB)</text>')
    for i, (alg, pts) in enumerate(points.items()):
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}">'
                   f'<title>{escape(alg)}</title></polyline>')
        ly = top + 10 + 18 * i
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 35}" y="{ly + 4}">{escape(alg)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_generate(args):
    grid = load_config(args.config, args.seed)
    d = grid.data
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = make_dataset(n=d.n, m=d.m, r=d.r, snr_db=d.snr_db, fwhm=d.fwhm, seed=grid.seed)
    files = {}
    for name in ("S", "A", "Z", "Y"):
        fname = f"{name}.{args.format}"
        save_matrix(out / fname, getattr(ds, name))
        files[name] = {"file": fname, "shape": list(getattr(ds, name).shape)}
    manifest = {"seed": grid.seed, "spec": asdict(d), "files": files}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(files)} matrices to {out}")
    return 0


def cmd_run(args):
    grid = load_config(args.config, args.seed)
    rows = run_grid(grid, jobs=args.jobs)
    write_csv(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_plot(args):
    rows = _read_results(args.results)
    out = Path(args.out or Path(args.results).with_suffix(".svg"))
    out.write_text(render_svg(rows))
    print(f"wrote {out}")
    return 0


def cmd_eval(args):
    S_est = load_matrix(args.estimate)
    S_ref = load_matrix(args.reference)
    Z = load_matrix(args.noise) if args.noise else None
    scores = evaluate(S_est, S_ref, Z)
    lines = ["source,estimate,sdr,sir,snr,sar"]
    for i, j in enumerate(scores.permutation):
        lines.append(",".join([str(i), str(j)] + [_fmt(float(getattr(scores, k)[i]))
                                                  for k in ("sdr", "sir", "snr", "sar")]))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    print(f"median SDR {scores.median('sdr'):.2f} dB", file=sys.stderr)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="ngmca", description="nGMCA benchmark harness")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--config")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int)
    g.add_argument("--format", choices=("bin", "csv"), default="bin")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run an experiment grid")
    r.add_argument("--config")
    r.add_argument("--out", required=True, help="results CSV")
    r.add_argument("--seed", type=int)
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=cmd_run)

    pl = sub.add_parser("plot", help="plot a results CSV as SVG")
    pl.add_argument("results")
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_plot)

    e = sub.add_parser("eval", help="score estimated sources against references")
    e.add_argument("--estimate", required=True)
    e.add_argument("--reference", required=True)
    e.add_argument("--noise", help="noise matrix Z spanning the noise subspace")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # surfaced as a one-line message, exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
