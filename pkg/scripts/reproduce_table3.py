"""Energy slowing-down benchmark: band totals at t = 2 for SDE, MC and the noise-free run."""
import argparse
from pathlib import Path

from stochtransport.config import RunConfig
from stochtransport.harness import compare, format_comparison, load_summary, run_ensemble


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/problem2.cfg")
    ap.add_argument("--paths", type=int, default=100)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out", default="out/table3")
    args = ap.parse_args()

    base = RunConfig.load(args.config)
    for method in ("deterministic", "sde", "mc"):
        cfg = base.with_overrides(method=method, paths=1 if method == "deterministic" else args.paths,
                                  seed=args.seed, out=str(Path(args.out) / method))
        res = run_ensemble(cfg)
        print(f"{method:>13}: " + ", ".join(f"{k} {res.stats[k].mean:.2f} +- {res.stats[k].std:.2f}"
                                            for k in cfg.observables))
    rows = compare(load_summary(Path(args.out) / "sde"), load_summary(Path(args.out) / "mc"))
    print(format_comparison(rows, "sde", "mc"))


if __name__ == "__main__":
    main()
