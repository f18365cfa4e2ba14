"""Experiment configuration: TOML files layered over per-experiment defaults."""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import ConfigurationError
from ..forward_claw import ClawForward, FVConfig
from ..forward_ns import NSConfig, NSForward
from ..fields import Grid2
from ..observe import Channel, NoiseModel, Observable, SpatialWeight
from ..probability import PriorSpec

EXPERIMENTS = ("simulate", "filter", "stability", "consistency", "compactness",
               "equivalence", "noise-audit", "claw")
MODELS = ("ns2d", "burgers1d")

# Fields that do not change results; left out of the config hash.
NON_SEMANTIC = ("threads", "out")

NS_CHANNELS = [
    {"weight": "cosine", "wavevector": [1, 0], "g": "component", "component": 0},
    {"weight": "cosine", "wavevector": [0, 1], "g": "component", "component": 1},
    {"weight": "bump", "center": [3.14159, 3.14159], "width": 1.0, "g": "sigmoid"},
]
BURGERS_CHANNELS = [
    {"weight": "cosine", "wavevector": [1], "g": "component"},
    {"weight": "cosine", "wavevector": [1], "phase": -1.5707963267948966, "g": "component"},
    {"weight": "bump", "center": [3.14159], "width": 1.0, "g": "sigmoid"},
]

BASE = {
    "seed": 20240611,
    "threads": 1,
    "model": "ns2d",
    "n_members": 32,
    "per_window": 8,
    "resample": False,
    "prior": {"alpha": 2.0, "k_max": 8, "radius": 2.0, "sigma": 0.1, "n_cells": 512},
    "forward": {"dt": 0.0078125, "t_end": 0.5, "viscosity": 0.01, "resolution": 16,
                "flux": "rusanov"},
    "observation": {"n_windows": 4, "channels": None},
    "noise": {"kind": "gaussian", "variances": [0.01, 0.01, 0.01], "p": 0.8, "kappa": 3.0,
              "support": 3.0},
    "measurements": {"source": "synthesize", "file": None, "truth_seed": 7},
}

DEFAULTS = {
    "simulate": {
        "n_members": 16,
        "forward": {"viscosities": [0.1, 0.01, 0.001], "resolutions": [16, 32, 64],
                    "dt": 0.0078125, "t_end": 0.5, "snapshot_stride": 1},
        "regularity": {"L": 2.0, "factor": 2.0},
        "taylor_green": {"N": 32, "viscosity": 0.1, "dt": 0.001, "t_end": 1.0,
                         "tolerance": 1e-6, "max_seconds": 30.0},
    },
    "filter": {"n_members": 16},
    "stability": {
        "forward": {"viscosities": [0.01, 0.001], "resolutions": [16, 32, 64]},
        "perturbation": {"radii": [0.001, 0.002, 0.005, 0.01, 0.02, 0.05],
                         "direction_seed": 99},
        "criteria": {"max_ratio_factor": 1.2, "uniformity_factor": 2.0},
    },
    "consistency": {
        "n_members": 16,
        "forward": {"resolutions": [16, 24, 32], "reference": 96},
        "prior": {"k_max": 48, "alpha": 2.5},
        "noise": {"variances": [1e-4, 1e-4, 1e-4]},
    },
    "compactness": {
        "forward": {"resolutions": [16, 32, 64]},
        "structure": {"radii": [0.05, 0.1, 0.2, 0.4], "oracle_N": 16, "oracle_tol": 0.01},
    },
    "equivalence": {
        "models": ["ns2d", "burgers1d"],
        "n_members": 64,
        "forward": {"t_end": 1.0, "burgers_dt": 0.015625, "burgers_cells": 128},
        "tolerance": 1e-12,
    },
    "noise-audit": {
        "audit": {"radius": 6.0, "resolution": 601, "n_directions": 16, "lipschitz_slack": 0.05},
    },
    "claw": {
        "model": "burgers1d",
        "forward": {"resolutions": [64, 128, 256, 512], "t_end": 1.0, "cfl": 0.4,
                    "flux": "rusanov", "bv_t_end": 2.0},
        "bv": {"s": 2.0, "factor": 2.0},
        "stability": {"n_members": 16, "n_cells": [64, 128, 256], "dt": 0.0078125,
                      "t_end": 0.5, "radii": [0.001, 0.002, 0.005, 0.01, 0.02, 0.05]},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _canonical(obj):
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


@dataclass
class ExperimentConfig:
    experiment: str
    data: dict
    source: str | None = None

    def __getitem__(self, key):
        return self.data[key]

    def get(self, key, default=None):
        return self.data.get(key, default)

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def threads(self) -> int:
        return max(1, int(self.data.get("threads", 1)))

    @property
    def model(self) -> str:
        return self.data["model"]

    def semantic(self) -> dict:
        return {k: v for k, v in self.data.items() if k not in NON_SEMANTIC}

    def config_hash(self) -> str:
        blob = json.dumps(_canonical({"experiment": self.experiment, **self.semantic()}),
                          sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # -- builders ------------------------------------------------------------

    def prior_spec(self, model: str | None = None, **over) -> PriorSpec:
        p = {**self.data["prior"], **over}
        model = model or self.model
        return PriorSpec(alpha=float(p["alpha"]), k_max=int(p["k_max"]),
                         radius=float(p["radius"]), sigma=float(p["sigma"]),
                         divergence_free=(model == "ns2d"), model=model,
                         n_cells=int(p.get("n_cells", 512)))

    def ns_forward(self, resolution: int, viscosity: float, dt: float | None = None,
                   t_end: float | None = None) -> NSForward:
        f = self.data["forward"]
        cfg = NSConfig(float(viscosity), Grid2(int(resolution)),
                       float(dt if dt is not None else f["dt"]),
                       float(t_end if t_end is not None else f["t_end"]))
        return NSForward(cfg)

    def claw_forward(self, n_cells: int, dt: float, t_end: float | None = None,
                     flux: str | None = None) -> ClawForward:
        f = self.data["forward"]
        return ClawForward(FVConfig(int(n_cells), float(dt),
                                    float(t_end if t_end is not None else f["t_end"]),
                                    flux or f.get("flux", "rusanov")))

    def channels(self, model: str | None = None) -> tuple:
        model = model or self.model
        raw = self.data["observation"].get("channels")
        if raw is None:
            raw = NS_CHANNELS if model == "ns2d" else BURGERS_CHANNELS
        return tuple(make_channel(c, model) for c in raw)

    def observables(self, t_end: float, model: str | None = None) -> list:
        n = int(self.data["observation"]["n_windows"])
        if n < 1:
            raise ConfigurationError("n_windows must be >= 1")
        edges = np.linspace(0.0, float(t_end), n + 1)
        ch = self.channels(model)
        return [Observable((edges[j], edges[j + 1]), ch) for j in range(n)]

    def noise_model(self, dim: int | None = None) -> NoiseModel:
        nz = self.data["noise"]
        if "gamma" in nz:
            G = np.array(nz["gamma"], dtype=np.float64)
        else:
            G = np.diag(np.array(nz["variances"], dtype=np.float64))
        if dim is not None and G.shape[0] != dim:
            raise ConfigurationError(f"noise dimension {G.shape[0]} != observable dimension {dim}")
        return NoiseModel(G, kind=nz.get("kind", "gaussian"), p=float(nz.get("p", 0.8)),
                          kappa=float(nz.get("kappa", 3.0)),
                          support=float(nz.get("support", 3.0)))


def make_channel(raw: dict, model: str) -> Channel:
    dim = 2 if model == "ns2d" else 1
    kind = raw.get("weight", "constant")
    wv = tuple(raw.get("wavevector", [0] * dim))
    center = tuple(raw.get("center", [np.pi] * dim))
    if len(wv) != dim or len(center) != dim:
        raise ConfigurationError(f"channel geometry must be {dim}-dimensional")
    weight = SpatialWeight(kind, float(raw.get("amplitude", 1.0)), wv,
                           float(raw.get("phase", 0.0)), center, float(raw.get("width", 1.0)))
    return Channel(weight, raw.get("g", "component"), int(raw.get("component", 0)))


def load_config(experiment: str, path: str | Path | None = None,
                overrides: dict | None = None) -> ExperimentConfig:
    """Defaults for ``experiment``, then the TOML file, then ``overrides``."""
    if experiment not in EXPERIMENTS:
        raise ConfigurationError(f"unknown experiment {experiment!r}")
    data = _merge(BASE, DEFAULTS.get(experiment, {}))
    source = None
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file {path} does not exist")
        with path.open("rb") as fh:
            user = tomllib.load(fh)
        file_exp = user.pop("experiment", experiment)
        if file_exp != experiment:
            raise ConfigurationError(
                f"config is for experiment {file_exp!r}, not {experiment!r}")
        data = _merge(data, user)
        source = str(path)
    if overrides:
        data = _merge(data, {k: v for k, v in overrides.items() if v is not None})
    validate(experiment, data)
    return ExperimentConfig(experiment, data, source)


def validate(experiment: str, data: dict):
    if data["model"] not in MODELS:
        raise ConfigurationError(f"unknown model {data['model']!r}")
    if int(data["n_members"]) < 1:
        raise ConfigurationError("n_members must be >= 1")
    f = data["forward"]
    for key in ("resolutions", "viscosities"):
        if key in f and not f[key]:
            raise ConfigurationError(f"forward.{key} must be nonempty")
    if experiment == "consistency":
        ref = int(f["reference"])
        if any(int(n) >= ref for n in f["resolutions"]):
            raise ConfigurationError("reference resolution must be finer than every sweep member")
    if experiment == "compactness" and len(f["resolutions"]) < 3:
        raise ConfigurationError("compactness needs a sweep of at least 3 resolutions")
    if experiment == "stability" and len(data["perturbation"]["radii"]) < 6:
        raise ConfigurationError("stability needs at least 6 perturbation radii")
    m = data.get("measurements", {})
    if m.get("source") == "file" and not (m.get("file") and Path(m["file"]).exists()):
        raise ConfigurationError("measurement file does not exist")
