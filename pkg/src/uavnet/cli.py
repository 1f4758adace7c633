"""Command-line harness for single runs, parameter sweeps and benchmark tours.

    uavnet run   --config ris.json --seed 3 --out out/
    uavnet sweep --spec sweep.json --threads 4
    uavnet bench --config fdr.json --out out/

``--config`` takes a JSON config file or one of the bundled names "ris" and
"fdr". A sweep spec is a JSON document::

    {"base_config": "ris", "sweep": {"ris_elements": [600, 800, 1000]},
     "mc_iterations": 50, "seeds": 0, "mode": "algorithm1",
     "output_dir": "out/fig3"}

Run i of every sweep point uses seed ``seeds + i``. A sweep writes
``<sweep>.dat`` (columns ``sweep_value mean_rmin stderr``, r_min in bits),
``runs.csv`` (one row per run, sorted by sweep value then seed) and
``summary.json`` with run counts. Exit status is 0 on success, 1 on a
configuration or I/O error and 2 when more than 1% of the runs failed.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .driver import BENCHMARK_KINDS, run_algorithm1, run_benchmark
from .scenario import ConfigError, default_config, scenario_from_dict

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2
MAX_FAIL_FRACTION = 0.01
MODES = ("benchmark", "algorithm1")

# sweep name -> (config section or None for top level, key, payload kind it needs)
SWEEPS = {
    "ris_elements": ("payload", "elements", "ris"),
    "fdr_antennas": ("payload", "antennas", "fdr"),
    "battery_wh": ("airframe", "battery_wh", None),
    "field_side": (None, "field_side_m", None),
    "noise_dbm": ("radio", "noise_power_dbm", None),
}
_SPEC_KEYS = {"base_config", "sweep", "mc_iterations", "seeds", "mode", "output_dir",
              "full_n_scan", "iter1", "iter2"}


@dataclass
class ExperimentSpec:
    base_config: dict
    sweep_name: str
    sweep_values: list
    mc_iterations: int = 50
    seeds: int = 0
    mode: str = "algorithm1"
    output_dir: str = "out"
    full_n_scan: bool = False
    iter1: int = 20
    iter2: int = 20

    def __post_init__(self):
        if self.sweep_name not in SWEEPS:
            raise ConfigError(f"unknown sweep {self.sweep_name!r}; expected one of {sorted(SWEEPS)}")
        if not self.sweep_values:
            raise ConfigError("sweep needs at least one value")
        if int(self.mc_iterations) < 1:
            raise ConfigError("mc_iterations must be at least 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        need = SWEEPS[self.sweep_name][2]
        kind = self.base_config.get("payload", {}).get("kind")
        if need is not None and kind != need:
            raise ConfigError(f"sweep {self.sweep_name} needs a {need} payload, config has {kind!r}")


def read_config(ref, relative_to=None):
    """Config document from a bundled name ("ris", "fdr") or a JSON file path."""
    if isinstance(ref, dict):
        return copy.deepcopy(ref)
    if ref in ("ris", "fdr"):
        return default_config(ref)
    path = Path(ref)
    if relative_to is not None and not path.is_absolute():
        path = Path(relative_to) / path
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc


def load_spec(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read spec {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return spec_from_dict(doc, relative_to=path.parent)


def spec_from_dict(doc, relative_to=None):
    unknown = set(doc) - _SPEC_KEYS
    if unknown:
        raise ConfigError(f"unknown experiment spec keys: {sorted(unknown)}")
    for key in ("base_config", "sweep"):
        if key not in doc:
            raise ConfigError(f"experiment spec needs {key!r}")
    sweep = doc["sweep"]
    if not isinstance(sweep, dict) or len(sweep) != 1:
        raise ConfigError("sweep must name exactly one parameter")
    (name, values), = sweep.items()
    if not isinstance(values, list):
        raise ConfigError("sweep values must be a list")
    return ExperimentSpec(
        base_config=read_config(doc["base_config"], relative_to),
        sweep_name=name,
        sweep_values=values,
        mc_iterations=int(doc.get("mc_iterations", 50)),
        seeds=int(doc.get("seeds", 0)),
        mode=doc.get("mode", "algorithm1"),
        output_dir=str(doc.get("output_dir", "out")),
        full_n_scan=bool(doc.get("full_n_scan", False)),
        iter1=int(doc.get("iter1", 20)),
        iter2=int(doc.get("iter2", 20)),
    )


def apply_sweep(cfg, name, value):
    """Copy of ``cfg`` with the swept parameter set to ``value``."""
    section, key, _ = SWEEPS[name]
    out = copy.deepcopy(cfg)
    (out if section is None else out[section])[key] = value
    return out


# -- single runs ---------------------------------------------------------------------


def _one_run(task):
    """Worker: r_min of one (sweep value, seed) pair; failures are returned, not raised."""
    cfg, value, seed, mode, full, iter1, iter2 = task
    try:
        scenario = scenario_from_dict(cfg, seed=seed)
        if mode == "benchmark":
            res = run_benchmark(scenario, full_n_scan=full)
            return value, seed, "ok", res.r_min, res.n, res.kind or "none"
        rep = run_algorithm1(scenario, iter1=iter1, iter2=iter2, full_n_scan=full)
        if rep.status != "ok":
            return value, seed, rep.status, math.nan, rep.best_n, rep.init
        return value, seed, "ok", rep.best_r_min, rep.best_n, rep.init
    except Exception as exc:  # recorded per run, the sweep goes on
        msg = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        return value, seed, f"error: {msg}", math.nan, None, ""


def _map(tasks, threads):
    if threads <= 1 or len(tasks) <= 1:
        return [_one_run(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_one_run, tasks, chunksize=1))


def _fmt(x):
    return f"{x:.6g}"


def _write_lines(path, lines):
    with open(path, "w", newline="\n") as fh:
        fh.write("".join(line + "\n" for line in lines))


def run_sweep(spec, threads=1):
    """Run every sweep point for every seed and write the aggregate files.

    Returns the exit status.
    """
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = []
    for value in spec.sweep_values:
        cfg = apply_sweep(spec.base_config, spec.sweep_name, value)
        for i in range(spec.mc_iterations):
            tasks.append((cfg, value, spec.seeds + i, spec.mode, spec.full_n_scan, spec.iter1, spec.iter2))
    results = _map(tasks, threads)
    order = {v: i for i, v in enumerate(spec.sweep_values)}
    results.sort(key=lambda r: (order[r[0]], r[1]))

    rows, summary = [], []
    for value in spec.sweep_values:
        ok = np.array([r[3] for r in results if r[0] == value and r[2] == "ok"], dtype=float)
        total = sum(1 for r in results if r[0] == value)
        mean = float(np.mean(ok)) if len(ok) else math.nan
        se = float(np.std(ok, ddof=1) / math.sqrt(len(ok))) if len(ok) > 1 else 0.0
        rows.append(f"{_fmt(float(value))} {_fmt(mean)} {_fmt(se)}")
        summary.append({"sweep_value": value, "runs": total, "ok": int(len(ok)), "failed": total - int(len(ok))})
    _write_lines(out / f"{spec.sweep_name}.dat", rows)
    with open(out / "runs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sweep_value", "seed", "status", "r_min_bits", "best_n", "init"])
        for value, seed, status, r, n, init in results:
            w.writerow([value, seed, status, repr(float(r)), "" if n is None else n, init])
    failed = sum(s["failed"] for s in summary)
    doc = {"sweep": spec.sweep_name, "mode": spec.mode, "mc_iterations": spec.mc_iterations,
           "base_seed": spec.seeds, "points": summary, "failed_runs": failed, "total_runs": len(results)}
    (out / "summary.json").write_text(json.dumps(doc, indent=2) + "\n")
    if failed:
        log.warning("%d of %d runs failed", failed, len(results))
    return EXIT_PARTIAL if failed > MAX_FAIL_FRACTION * len(results) else EXIT_OK


def emit_trajectory_figure_data(report, path):
    """Write traj.dat (n x y), gn.dat (k x y) and bs.dat (x y) into directory ``path``.

    Files are space separated, LF terminated, 6 significant digits; n and k
    count from 1.
    """
    if report.plan is None:
        raise ValueError("report carries no trajectory")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    xy = np.asarray(report.plan.xy)
    _write_lines(out / "traj.dat", [f"{n + 1} {_fmt(x)} {_fmt(y)}" for n, (x, y) in enumerate(xy)])
    gn = np.zeros((0, 2)) if report.gn_xy is None else np.asarray(report.gn_xy)
    _write_lines(out / "gn.dat", [f"{k + 1} {_fmt(x)} {_fmt(y)}" for k, (x, y) in enumerate(gn)])
    bs = np.zeros(2) if report.bs_xy is None else np.asarray(report.bs_xy)
    _write_lines(out / "bs.dat", [f"{_fmt(bs[0])} {_fmt(bs[1])}"])
    return EXIT_OK


def read_dat(path):
    """Rows of a whitespace-separated data file as a float array."""
    return np.loadtxt(path, ndmin=2)


# -- subcommands --------------------------------------------------------------------


def _cmd_run(args):
    cfg = read_config(args.config)
    scenario = scenario_from_dict(cfg, seed=args.seed)
    rep = run_algorithm1(scenario, full_n_scan=args.full_n_scan)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rep.to_json(out / "report.json")
    if rep.plan is None:
        log.error("no feasible slot count: %s", rep.status)
        return EXIT_PARTIAL
    rep.plan.to_csv(out / "trajectory.csv")
    emit_trajectory_figure_data(rep, out)
    print(f"N = {rep.best_n}  r_min = {rep.best_r_min:.6g} bit  ({rep.status}, {rep.wall_time_s:.1f} s)")
    return EXIT_OK if rep.status == "ok" else EXIT_PARTIAL


def _cmd_sweep(args, mode=None):
    spec = load_spec(args.spec)
    if mode is not None:
        spec.mode = mode
    if args.out is not None:
        spec.output_dir = args.out
    if args.seed is not None:
        spec.seeds = args.seed
    if args.full_n_scan:
        spec.full_n_scan = True
    return run_sweep(spec, threads=args.threads)


def _cmd_bench(args):
    if args.spec is not None:
        return _cmd_sweep(args, mode="benchmark")
    if args.config is None:
        raise ConfigError("bench needs --config or --spec")
    scenario = scenario_from_dict(read_config(args.config), seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for kind in BENCHMARK_KINDS:
        res = run_benchmark(scenario, kinds=(kind,), full_n_scan=args.full_n_scan)
        n = "nan" if res.n is None else str(res.n)
        scale = math.nan if res.scale is None else res.scale
        lines.append(f"{kind} {n} {_fmt(scale)} {_fmt(res.r_min)}")
        print(f"{kind:8s} N = {n:>4s}  scale = {_fmt(scale)}  r_min = {_fmt(res.r_min)} bit")
    _write_lines(out / "bench.dat", lines)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="uavnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, need_config=False, need_spec=False):
        sp.add_argument("--config", required=need_config, help="config JSON file or 'ris' / 'fdr'")
        sp.add_argument("--spec", required=need_spec, help="experiment spec JSON file")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="layout seed (base seed for sweeps)")
        sp.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
        sp.add_argument("--full-n-scan", action="store_true", help="try every slot count")

    common(sub.add_parser("run", help="optimize tour, schedule and slot count for one scenario"), need_config=True)
    common(sub.add_parser("sweep", help="Monte-Carlo sweep from an experiment spec"), need_spec=True)
    common(sub.add_parser("bench", help="benchmark tours with benchmark scheduling"))
    return p


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command in ("run", "bench") and args.out is None:
        args.out = "out"
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        return _cmd_bench(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
