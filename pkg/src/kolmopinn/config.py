"""Run configuration: a YAML file parsed into plain dataclasses, plus builders
for the PDE, architecture and optimizer it describes.

Seeds are mandatory. Component seeds not given explicitly are derived from
the top-level ``seed`` with :func:`kolmopinn.rng.sub_seed`, never from entropy.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import rng
from .network import Architecture
from .pde import INITIAL_DATA, AffineDiffusion, AffineDrift, KolmogorovPde, black_scholes_instance, heat_instance
from .training import OptimizerConfig


class ConfigError(ValueError):
    """The configuration file is missing, malformed or inconsistent."""


DEFAULTS = {
    "threads": 1,
    "output": "out",
    "pde": {"kind": "heat", "dim": 1, "horizon": 1.0, "domain": [0.0, 1.0]},
    "architecture": {"depth": 3, "width": 20, "bound": 1.0, "activation": "tanh"},
    "collocation": {"interior": 512, "spatial": 512, "temporal": 512},
    "optimizer": {"adam_steps": 5000, "learning_rate": 1e-3, "lbfgs_steps": 2000, "gradient": "analytic"},
    "evaluation": {"points": 20000},
    "certificate": {"c2_mode": "oracle", "C2": None},
    "dynkin": {"N": 128, "M": 20000, "scheme": None, "rule": "trapezoid", "substeps": 16,
               "points": None, "times": None, "grid": 5},
    "sample_size": {"kind": "pinn", "eps": 0.1, "eta": None, "c_q": None},
    "report": {"mc_sizes": [100, 1000, 10000], "riemann_sizes": [4, 8, 16, 32, 64, 128, 256],
               "replicates": 20, "reference_paths": 200000, "x": None, "t": None},
}

SECTIONS = set(DEFAULTS) | {"seed"}


def _merge(base: dict, override: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(base.get(key), dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where}{key} must be a mapping")
            out[key] = _merge(base[key], val, f"{where}{key}.")
        else:
            out[key] = val
    return out


@dataclass
class RunConfig:
    raw: dict  # fully merged tree; echoed into every artifact
    source: str | None = None

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def threads(self) -> int:
        return int(self.raw["threads"])

    @property
    def output(self) -> Path:
        return Path(self.raw["output"])

    def section(self, name: str) -> dict:
        return self.raw[name]

    def seed_for(self, section: str, label: str | None = None) -> int:
        """Explicit ``<section>.seed`` if present, otherwise derived from the top-level seed."""
        sec = self.raw.get(section, {})
        if isinstance(sec, dict) and sec.get("seed") is not None:
            return int(sec["seed"])
        return rng.sub_seed(self.seed, section, label or "")

    def echo(self) -> dict:
        return copy.deepcopy(self.raw)


def parse_config(tree: dict | None, source: str | None = None, seed: int | None = None,
                 threads: int | None = None, output: str | None = None) -> RunConfig:
    tree = {} if tree is None else tree
    if not isinstance(tree, dict):
        raise ConfigError("configuration must be a mapping at the top level")
    unknown = set(tree) - SECTIONS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    merged = _merge(DEFAULTS, tree, "")
    if seed is not None:
        merged["seed"] = seed
    if threads is not None:
        merged["threads"] = threads
    if output is not None:
        merged["output"] = output
    if merged.get("seed") is None:
        raise ConfigError("a top-level integer 'seed' is required")
    try:
        merged["seed"] = int(merged["seed"])
        merged["threads"] = int(merged["threads"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"seed and threads must be integers: {exc}") from None
    if merged["threads"] < 1:
        raise ConfigError("threads must be at least 1")
    cfg = RunConfig(merged, source)
    build_pde(cfg, attach_boundary=False)  # validate eagerly
    build_architecture(cfg)
    optimizer_config(cfg)
    return cfg


def load_config(path, **overrides) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"configuration file not found: {path}")
    try:
        tree = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return parse_config(tree, str(path), **overrides)


def _initial(entry, d: int):
    if entry is None:
        return None
    if isinstance(entry, str):
        entry = {"name": entry}
    entry = dict(entry)
    name = entry.pop("name", None)
    if name not in INITIAL_DATA:
        raise ConfigError(f"unknown initial datum {name!r}; available: {sorted(INITIAL_DATA)}")
    if name in ("quadratic", "constant"):
        entry.setdefault("d", d)
    try:
        return INITIAL_DATA[name](**entry)
    except TypeError as exc:
        raise ConfigError(f"bad arguments for initial datum {name!r}: {exc}") from None


def build_pde(cfg: RunConfig, attach_boundary: bool = True) -> KolmogorovPde:
    """The PDE the config describes.

    Instances without an analytic solution get the Dynkin reference as
    their boundary datum unless one is configured.
    """
    p = cfg.section("pde")
    try:
        d = int(p["dim"])
        T = float(p["horizon"])
        a, b = (float(v) for v in p["domain"])
        kind = p["kind"]
        initial = _initial(p.get("initial"), d)
        if kind == "heat":
            modes = p.get("modes")
            pde = heat_instance(d, float(p.get("kappa", 1.0)), T, modes, a, b)
            if initial is not None:
                raise ConfigError("heat instances use the sinusoidal datum given by 'modes'")
        elif kind == "black-scholes":
            betas = p.get("betas", [0.2] * d)
            rho = p.get("rho", np.eye(len(betas)).tolist())
            pde = black_scholes_instance(betas, rho, float(p.get("rate", 0.05)), T, initial, None, a, b)
        elif kind == "custom":
            drift = p.get("drift", {})
            diff = p.get("diffusion", {})
            A = np.asarray(drift.get("A", np.zeros((d, d))), dtype=np.float64).reshape(d, d)
            bvec = np.asarray(drift.get("b", np.zeros(d)), dtype=np.float64).reshape(d)
            S0 = np.asarray(diff.get("S0", np.zeros((d, d))), dtype=np.float64).reshape(d, d)
            S = np.asarray(diff.get("S", np.zeros((d, d, d))), dtype=np.float64).reshape(d, d, d)
            if initial is None:
                raise ConfigError("custom PDEs need an 'initial' datum")
            pde = KolmogorovPde(d, T, AffineDrift(A, bvec), AffineDiffusion(S0, S), initial, None, a, b,
                                kind="custom")
        else:
            raise ConfigError(f"unknown pde kind {kind!r} (heat | black-scholes | custom)")
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid pde section: {exc}") from None
    if pde.dim != d:
        raise ConfigError("pde dimension does not match its coefficients")
    if attach_boundary and pde.boundary is None:
        from .dynkin import dynkin_trace

        dk = cfg.section("dynkin")
        bnd = p.get("boundary") or {}
        pde = pde.with_boundary(dynkin_trace(pde, int(bnd.get("N", 64)), int(bnd.get("M", 4000)),
                                             cfg.seed_for("pde", "boundary"), dk.get("scheme")))
    return pde


def build_architecture(cfg: RunConfig) -> Architecture:
    a = cfg.section("architecture")
    d = int(cfg.section("pde")["dim"])
    try:
        return Architecture.mlp(d + 1, int(a["width"]), int(a["depth"]), float(a["bound"]), a["activation"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid architecture section: {exc}") from None


def _coerce(default, value):
    """Cast to the type of ``default``; YAML reads ``1e-3`` (no dot) as a string."""
    if isinstance(default, bool) or isinstance(default, str):
        return value
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def optimizer_config(cfg: RunConfig) -> OptimizerConfig:
    o = cfg.section("optimizer")
    known = set(OptimizerConfig.__dataclass_fields__)
    unknown = set(o) - known
    if unknown:
        raise ConfigError(f"unknown optimizer keys: {sorted(unknown)}")
    try:
        conf = OptimizerConfig(**{k: _coerce(OptimizerConfig.__dataclass_fields__[k].default, v) for k, v in o.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid optimizer section: {exc}") from None
    if conf.gradient not in ("analytic", "finite-difference"):
        raise ConfigError("optimizer.gradient must be 'analytic' or 'finite-difference'")
    return conf
