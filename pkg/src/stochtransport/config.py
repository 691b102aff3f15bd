"""Flat ``section.key = value`` run configuration.

Values are JSON literals (numbers, lists, strings in quotes, true/false) or
bare strings. Physics parameters have no defaults; only output options do.
Unknown keys are rejected.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import UsageError
from .model import Boundary, MaterialModel, PhaseSpaceGrid
from .solver import EnergyProblem, GeneralProblem, SlabProblem

KINDS = ("slab", "energy", "general")
METHODS = ("sde", "mc", "deterministic")

REQUIRED = {
    "slab": ("I", "J", "v", "sigma_s", "sigma_c", "influx", "t_on", "t_off", "dt", "t_end", "x_max"),
    "energy": ("G", "E_max", "vsigma", "vsigma_c", "kernel", "q", "n0", "dt", "t_end", "band_split"),
    "general": ("I", "L", "G", "x_max", "E_max", "sigma_total", "sigma_capture", "scatter", "speed", "n0",
                "dt", "t_end"),
}
OPTIONAL = {
    "slab": ("mc_dt", "n0"),
    "energy": ("mc_dt",),
    "general": ("Jy", "Kz", "M", "y_max", "z_max", "source", "conservative", "boundary_x", "boundary_y",
                "boundary_z", "inflow", "inflow_window"),
}
DEFAULT_OBSERVABLES = {
    "slab": ("left_leakage", "right_leakage"),
    "energy": ("n_low", "n_high"),
    "general": ("population", "left_leakage", "right_leakage"),
}
RUN_KEYS = ("kind", "method", "paths", "seed", "out", "observables", "cadence", "workers", "clamp", "window")


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines into a flat dict; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key:
            raise UsageError(f"{source}:{lineno}: key {key!r} needs a section prefix")
        if key in out:
            raise UsageError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = parse_value(value)
    return out


@dataclass
class RunConfig:
    """One ensemble run: problem parameters plus run and output options."""

    kind: str
    params: dict
    method: str = "sde"
    paths: int = 1
    seed: int = 0
    out: str = "out"
    observables: tuple = ()
    cadence: int = 1
    workers: int = 1
    clamp: str = "retain"
    window: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f"run.kind must be one of {KINDS}, got {self.kind!r}")
        if self.method not in METHODS:
            raise UsageError(f"run.method must be one of {METHODS}, got {self.method!r}")
        if self.method == "mc" and self.kind == "general":
            raise UsageError("no Monte Carlo reference exists for general problems")
        if int(self.paths) < 1 or int(self.cadence) < 1 or int(self.workers) < 1:
            raise UsageError("paths, cadence and workers must be >= 1")
        self.paths, self.cadence, self.workers = int(self.paths), int(self.cadence), int(self.workers)
        self.seed = int(self.seed)
        if not 0 <= self.seed < 2**64:
            raise UsageError("run.seed must fit in 64 bits")
        self.observables = tuple(self.observables) or DEFAULT_OBSERVABLES[self.kind]
        self.window = tuple(float(w) for w in self.window)
        if self.window and (len(self.window) != 2 or self.window[0] >= self.window[1]):
            raise UsageError("run.window must be [t0, t1] with t0 < t1")
        if self.kind == "slab" and not self.window:
            raise UsageError("slab runs need run.window = [t0, t1]")
        missing = [k for k in REQUIRED[self.kind] if k not in self.params]
        if missing:
            raise UsageError(f"missing {self.kind} parameters: {', '.join(missing)}")
        unknown = [k for k in self.params if k not in REQUIRED[self.kind] + OPTIONAL[self.kind]]
        if unknown:
            raise UsageError(f"unknown {self.kind} parameters: {', '.join(unknown)}")
        if self.method == "mc" and "mc_dt" not in self.params:
            raise UsageError(f"{self.kind}.mc_dt is required for method = mc")

    @classmethod
    def from_mapping(cls, flat: dict) -> "RunConfig":
        run, params = {}, {}
        kind = flat.get("run.kind")
        for key, value in flat.items():
            section, name = key.split(".", 1)
            if section == "run":
                if name not in RUN_KEYS:
                    raise UsageError(f"unknown key {key!r}")
                run[name] = value
            elif section == kind:
                params[name] = value
            else:
                raise UsageError(f"unknown key {key!r} for run.kind = {kind!r}")
        if "kind" not in run:
            raise UsageError("run.kind is required")
        return cls(params=params, **run)

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        return cls.from_mapping(parse_text(text, source))

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text, str(path))

    def flat(self, output_options: bool = True) -> dict:
        run = {"kind": self.kind, "method": self.method, "paths": self.paths, "seed": self.seed,
               "observables": list(self.observables), "cadence": self.cadence, "clamp": self.clamp}
        if self.window:
            run["window"] = list(self.window)
        if output_options:
            run.update(out=self.out, workers=self.workers)
        flat = {f"run.{k}": v for k, v in run.items()}
        flat.update({f"{self.kind}.{k}": v for k, v in self.params.items()})
        return dict(sorted(flat.items()))

    def to_text(self) -> str:
        return "".join(f"{k} = {json.dumps(v)}\n" for k, v in self.flat().items())

    def config_hash(self) -> str:
        """Hash of everything that affects results (not ``out`` or ``workers``)."""
        blob = json.dumps(self.flat(output_options=False), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)

    def build_problem(self):
        p = dict(self.params)
        if self.kind == "slab":
            return SlabProblem(window=self.window, **p)
        if self.kind == "energy":
            return EnergyProblem(**p)
        return _general_problem(p)


def _general_problem(p: dict) -> GeneralProblem:
    grid = PhaseSpaceGrid(I=p["I"], L=p["L"], G=p["G"], x_max=p["x_max"], E_max=p["E_max"],
                          Jy=p.get("Jy", 1), Kz=p.get("Kz", 1), M=p.get("M", 1),
                          y_max=p.get("y_max", 1.0), z_max=p.get("z_max", 1.0))

    def per_cell_group(v):
        return np.broadcast_to(np.asarray(v, float), grid.cell_shape + (grid.G,))

    mat = MaterialModel.isotropic(
        grid, per_cell_group(p["sigma_total"]), per_cell_group(p["sigma_capture"]),
        np.asarray(p["scatter"], float), np.broadcast_to(np.asarray(p["speed"], float), (grid.G,)),
        per_cell_group(p.get("source", 0.0)),
        conservative=bool(p.get("conservative", False)),
    )
    inflow = p.get("inflow")
    if inflow is not None:
        inflow = np.broadcast_to(np.asarray(inflow, float), (grid.Jy, grid.Kz, grid.L, grid.M, grid.G)).copy()
    boundary = Boundary(
        x=tuple(p.get("boundary_x", ("vacuum", "vacuum"))),
        y=tuple(p.get("boundary_y", ("reflecting", "reflecting"))),
        z=tuple(p.get("boundary_z", ("reflecting", "reflecting"))),
        inflow=inflow,
        inflow_window=tuple(p.get("inflow_window", (0.0, float("inf")))),
    )
    return GeneralProblem(grid, mat, p["n0"], p["dt"], p["t_end"], boundary)
