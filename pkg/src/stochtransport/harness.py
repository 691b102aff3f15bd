"""Ensemble orchestration, statistics, comparison tables and figure data."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import SimulationError, UsageError
from .montecarlo import mc_energy_run, mc_slab_run
from .rng import STREAM_MC, STREAM_SDE, path_generator
from .solver import PathResult, run_energy, run_general, run_slab

log = logging.getLogger(__name__)

FIGURE_COLUMNS = {
    "slab": ("left_leakage", "right_leakage"),
    "energy": ("n_low", "n_high"),
    "general": ("left_leakage", "right_leakage"),
}


@dataclass(frozen=True)
class ObservableStats:
    observable: str
    mean: float
    std: float
    se: float
    n: int
    degenerate: bool = False


@dataclass
class EnsembleStats:
    """Per-observable sample statistics (std uses denominator n - 1)."""

    rows: dict

    @classmethod
    def from_samples(cls, samples: dict) -> "EnsembleStats":
        rows = {}
        for name, values in samples.items():
            x = np.asarray(values, float)
            n = x.size
            if n == 0:
                raise UsageError(f"no samples for {name}")
            if n == 1:
                log.warning("single path for %s: std reported as 0", name)
                std = 0.0
            elif np.all(x == x[0]):
                std = 0.0  # np.std leaves rounding residue on identical values
            else:
                std = float(np.std(x, ddof=1))
            mean = float(x[0]) if std == 0.0 and n > 1 else float(x.mean())
            rows[name] = ObservableStats(name, mean, std, std / math.sqrt(n), n, n == 1)
        return cls(rows)

    def __getitem__(self, name) -> ObservableStats:
        return self.rows[name]


@dataclass
class EnsembleResult:
    config: RunConfig
    stats: EnsembleStats
    samples: dict
    clamp_counts: list
    wall_time: float
    out_dir: Path | None = None
    results: list = field(default_factory=list)


def run_path(cfg: RunConfig, index: int, problem=None) -> PathResult:
    """One sample path; path ``index`` always sees the same draws."""
    prob = problem if problem is not None else cfg.build_problem()
    if cfg.method == "deterministic":
        noise, rng = False, None
    else:
        noise = True
        rng = path_generator(cfg.seed, index, STREAM_MC if cfg.method == "mc" else STREAM_SDE)
    if cfg.method == "mc":
        res = mc_slab_run(prob, rng) if cfg.kind == "slab" else mc_energy_run(prob, rng)
    elif cfg.kind == "slab":
        res = run_slab(prob, rng, noise=noise, clamp=cfg.clamp)
    elif cfg.kind == "energy":
        res = run_energy(prob, rng, noise=noise, clamp=cfg.clamp)
    else:
        res = run_general(prob, rng, noise=noise, clamp=cfg.clamp)
    res.seed = cfg.seed
    return res


def path_statistic(cfg: RunConfig, res: PathResult, name: str) -> float:
    """Scalar reduced from one path: window mean if a window is set, else the final value."""
    if name not in res.series:
        raise UsageError(f"observable {name!r} not produced; have {sorted(res.series)}")
    if cfg.window:
        return res.window_mean(name, *cfg.window)
    return res.final(name)


def _path_job(args):
    cfg, index = args
    return _checked_path(cfg, index)


def write_path_csv(path: Path, res: PathResult, names, cadence: int = 1) -> None:
    names = list(names)
    with path.open("w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["t", *names])
        for k in range(0, res.times.size, cadence):
            out.writerow([f"{res.times[k]:.17g}", *(f"{res.series[n][k]:.17g}" for n in names)])


def _json_dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def summary_dict(cfg: RunConfig, stats: EnsembleStats) -> dict:
    return {
        "method": cfg.method,
        "kind": cfg.kind,
        "config_hash": cfg.config_hash(),
        "observables": [asdict(stats[name]) | {"method": cfg.method, "config_hash": cfg.config_hash()}
                        for name in cfg.observables],
    }


def run_ensemble(cfg: RunConfig, write: bool = True, keep_results: bool = False) -> EnsembleResult:
    """Run ``cfg.paths`` sample paths and reduce them in path-index order.

    Writes ``paths/path_NNNN.csv``, ``summary.json`` and ``manifest.json``
    under ``cfg.out`` when ``write`` is set.
    """
    t0 = time.perf_counter()
    problem = cfg.build_problem()
    jobs = [(cfg, i) for i in range(cfg.paths)]
    out_dir = Path(cfg.out) if write else None
    if out_dir is not None:
        try:
            (out_dir / "paths").mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise UsageError(f"cannot create output directory {out_dir}: {exc}") from exc

    samples = {name: np.zeros(cfg.paths) for name in cfg.observables}
    clamps = [0] * cfg.paths
    kept = []

    def consume(index, res):
        for name in cfg.observables:
            samples[name][index] = path_statistic(cfg, res, name)
        clamps[index] = res.clamp_count
        if out_dir is not None:
            write_path_csv(out_dir / "paths" / f"path_{index:04d}.csv", res, cfg.observables, cfg.cadence)
        if keep_results:
            kept.append(res)

    if cfg.workers > 1 and cfg.paths > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for index, res in pool.map(_path_job, jobs):
                consume(index, res)
    else:
        for index in range(cfg.paths):
            consume(*_checked_path(cfg, index, problem))

    stats = EnsembleStats.from_samples(samples)
    wall = time.perf_counter() - t0
    if out_dir is not None:
        _json_dump(out_dir / "summary.json", summary_dict(cfg, stats))
        _json_dump(out_dir / "manifest.json", {
            "config": cfg.flat(),
            "config_hash": cfg.config_hash(),
            "method": cfg.method,
            "base_seed": cfg.seed,
            "paths": cfg.paths,
            "clamp_counts": clamps,
            "wall_time_s": round(wall, 3),
        })
    return EnsembleResult(cfg, stats, samples, clamps, wall, out_dir, kept)


def _checked_path(cfg, index, problem=None):
    res = run_path(cfg, index, problem)
    for name, s in res.series.items():
        if not np.all(np.isfinite(s)):
            raise SimulationError(f"path {index}: non-finite values in {name}")
    return index, res


# ---------------------------------------------------------------- comparison

@dataclass(frozen=True)
class ComparisonRow:
    observable: str
    mean_a: float
    std_a: float
    n_a: int
    mean_b: float
    std_b: float
    n_b: int
    z: float


def z_score(mean_a, std_a, n_a, mean_b, std_b, n_b) -> float:
    se = math.sqrt(std_a**2 / n_a + std_b**2 / n_b)
    diff = mean_a - mean_b
    if se == 0.0:
        return 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
    return diff / se


def load_summary(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "summary.json"
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read summary {path}: {exc}") from exc


def compare(summary_a: dict, summary_b: dict) -> list:
    """Side-by-side rows with z-scores of the mean differences."""
    a = {r["observable"]: r for r in summary_a["observables"]}
    b = {r["observable"]: r for r in summary_b["observables"]}
    if set(a) != set(b):
        raise UsageError(f"observable mismatch: {sorted(a)} vs {sorted(b)}")
    rows = []
    for name in a:
        ra, rb = a[name], b[name]
        z = z_score(ra["mean"], ra["std"], ra["n"], rb["mean"], rb["std"], rb["n"])
        rows.append(ComparisonRow(name, ra["mean"], ra["std"], ra["n"], rb["mean"], rb["std"], rb["n"], z))
    return rows


def format_comparison(rows, label_a="A", label_b="B") -> str:
    w = max(14, len(label_a) + 7, len(label_b) + 7)
    cols = [f"{label_a} mean", f"{label_a} std", f"{label_b} mean", f"{label_b} std"]
    lines = [f"{'observable':<16}" + "".join(f"{c:>{w}}" for c in cols) + f"{'z':>9}"]
    for r in rows:
        vals = (r.mean_a, r.std_a, r.mean_b, r.std_b)
        lines.append(f"{r.observable:<16}" + "".join(f"{v:>{w}.2f}" for v in vals) + f"{r.z:>9.2f}")
    return "\n".join(lines)


def summary_from_values(method: str, values: dict) -> dict:
    """Build a summary record from (mean, std, n) triples, e.g. published table values."""
    return {"method": method, "observables": [
        {"observable": k, "mean": m, "std": s, "n": n, "se": s / math.sqrt(n)} for k, (m, s, n) in values.items()
    ]}


# ---------------------------------------------------------------- figures

def emit_figures(results: dict, kind: str, out_dir) -> list:
    """Write ``figure_<method>.csv`` for each ``{method: PathResult}``."""
    cols = FIGURE_COLUMNS[kind]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for method, res in results.items():
        missing = [c for c in cols if c not in res.series]
        if missing:
            raise UsageError(f"{method} result lacks {missing}")
        path = out_dir / f"figure_{method}.csv"
        write_path_csv(path, res, cols)
        written.append(path)
    return written
