"""Slab leakage benchmark: SDE and Monte Carlo ensembles side by side.

    python3 scripts/reproduce_table2.py --paths 100 --out out/table2
"""
import argparse
from pathlib import Path

from stochtransport.config import RunConfig
from stochtransport.harness import compare, format_comparison, load_summary, run_ensemble


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/problem1.cfg")
    ap.add_argument("--paths", type=int, default=100)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--t-end", type=float, default=50.0, help="the [49, 50] window is complete at t = 50")
    ap.add_argument("--out", default="out/table2")
    args = ap.parse_args()

    base = RunConfig.load(args.config)
    base.params["t_end"] = args.t_end
    for method in ("deterministic", "sde", "mc"):
        cfg = base.with_overrides(method=method, paths=1 if method == "deterministic" else args.paths,
                                  seed=args.seed, workers=args.workers, out=str(Path(args.out) / method))
        res = run_ensemble(cfg)
        means = ", ".join(f"{k} {res.stats[k].mean:.2f} +- {res.stats[k].std:.2f}" for k in cfg.observables)
        print(f"{method:>13}: {means}  ({res.wall_time:.0f} s)")
    rows = compare(load_summary(Path(args.out) / "sde"), load_summary(Path(args.out) / "mc"))
    print(format_comparison(rows, "sde", "mc"))


if __name__ == "__main__":
    main()
