"""Command-line entry point: ``stochtransport <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import SimulationError, UsageError
from .harness import (
    compare,
    emit_figures,
    format_comparison,
    load_summary,
    run_ensemble,
    run_path,
)
from .perturbation import CaptureHistory, Quadrature, constant_rate, perturbation_table, read_rate_csv
from .sheets import SheetSampler, moment_ratios, sample_surface

RUN_COMMANDS = {
    "run-slab": ("slab", "sde"),
    "run-energy": ("energy", "sde"),
    "run-general": ("general", "sde"),
    "mc-slab": ("slab", "mc"),
    "mc-energy": ("energy", "mc"),
}


def _load_run_config(args, kind, method) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if cfg.kind != kind:
        raise UsageError(f"{args.command} needs run.kind = {kind}, config has {cfg.kind}")
    if getattr(args, "deterministic", False):
        method = "deterministic"
    cfg = replace(cfg, method=method)
    return cfg.with_overrides(paths=args.paths, seed=args.seed, out=args.out,
                              workers=getattr(args, "workers", None))


def cmd_run(args) -> int:
    kind, method = RUN_COMMANDS[args.command]
    cfg = _load_run_config(args, kind, method)
    res = run_ensemble(cfg)
    print(f"{cfg.kind}/{cfg.method}: {cfg.paths} paths in {res.wall_time:.1f} s -> {res.out_dir}")
    for name in cfg.observables:
        s = res.stats[name]
        flag = "  (single path)" if s.degenerate else ""
        print(f"  {name:<16} mean {s.mean:12.4f}  std {s.std:10.4f}  se {s.se:8.4f}{flag}")
    return 0


def cmd_compare(args) -> int:
    a, b = load_summary(args.a), load_summary(args.b)
    rows = compare(a, b)
    print(format_comparison(rows, a.get("method", "A"), b.get("method", "B")))
    bad = [r.observable for r in rows if abs(r.z) > args.threshold]
    if bad:
        print(f"|z| > {args.threshold} for: {', '.join(bad)}")
        return 1
    return 0


def _rate_arg(text: str):
    try:
        return constant_rate(float(text))
    except ValueError:
        return read_rate_csv(text)


def _density_arg(text: str):
    try:
        value = float(text)
        return lambda E: np.full(np.shape(E), value)
    except ValueError:
        pass
    with Path(text).open() as fh:
        rows = [(float(r["E"]), float(r["density"])) for r in csv.DictReader(fh)]
    E, d = np.array(rows).T
    return lambda x: np.interp(x, E, d)


def cmd_perturb(args) -> int:
    hist = CaptureHistory(_rate_arg(args.rates), _rate_arg(args.perturbed), _density_arg(args.density),
                          args.e_max)
    times = np.linspace(0.0, args.t_end, args.n_out + 1)
    rows = perturbation_table(hist, times, Quadrature(args.n_e, args.n_t))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "perturbation.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "delta_mean", "delta_variance"])
        for row in rows:
            w.writerow([f"{v:.17g}" for v in row])
    t, dm, dv = rows[-1]
    print(f"t = {t:g}: delta_mean = {dm:.6g}, delta_variance = {dv:.6g} -> {path}")
    return 0


def cmd_sheet_demo(args) -> int:
    seed = 0 if args.seed is None else args.seed
    sampler = SheetSampler(seed, 2, (args.extent / args.nx, args.extent / args.nt))
    surface = sample_surface(sampler, args.nx, args.nt, args.extent, args.extent)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = surface.to_csv(out / "sheet.csv")
    area = 1.0
    diag = sampler.spawn(1)
    m2, m4 = moment_ratios(diag.rectangle_increment(area, args.samples), area)
    _, p4 = moment_ratios(diag.wiener_product_increment(area, args.samples), area, kurtosis=9.0)
    print(f"surface {args.nx}x{args.nt} on [0,{args.extent}]^2 -> {path}")
    print(f"rectangle increments: E[W^2]/|A| = {m2:.4f}, E[W^4]/(3|A|^2) = {m4:.4f}")
    print(f"Wiener product:       E[W^4]/(9|A|^2) = {p4:.4f}")
    return 0


def cmd_figures(args) -> int:
    cfg = RunConfig.load(args.config).with_overrides(seed=args.seed)
    methods = ["sde", "deterministic"] + (["mc"] if cfg.kind != "general" and "mc_dt" in cfg.params else [])
    results = {m: run_path(replace(cfg, method=m), 0) for m in methods}
    for path in emit_figures(results, cfg.kind, args.out):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochtransport", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, (kind, method) in RUN_COMMANDS.items():
        p = sub.add_parser(name, help=f"{method} ensemble for a {kind} problem")
        p.add_argument("--config", required=True)
        p.add_argument("--paths", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--workers", type=int)
        if method == "sde":
            p.add_argument("--deterministic", action="store_true", help="switch all noise off")
        p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="z-scores between two summary files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--threshold", type=float, default=3.0)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("perturb", help="mean and variance shift under a capture-rate change")
    p.add_argument("--rates", required=True, help="constant rate or E,t,rate CSV")
    p.add_argument("--perturbed", required=True, help="constant rate or E,t,rate CSV")
    p.add_argument("--density", required=True, help="constant N(E,0) or E,density CSV")
    p.add_argument("--e-max", type=float, required=True)
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--n-out", type=int, default=20)
    p.add_argument("--n-e", type=int, default=200)
    p.add_argument("--n-t", type=int, default=200)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("sheet-demo", help="sample a Brownian sheet and print moment diagnostics")
    p.add_argument("--seed", type=int)
    p.add_argument("--nx", type=int, default=100)
    p.add_argument("--nt", type=int, default=100)
    p.add_argument("--extent", type=float, default=5.0)
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_sheet_demo)

    p = sub.add_parser("figures", help="single-path series for each method")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_figures)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
