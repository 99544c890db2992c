"""Experiment configuration: defaults, TOML/JSON loading, validation and hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from frlab.estimates import STRATEGIES

SEED_ENV = "FRL_SEED"

# fields that determine the alphabets and the stage; a stage file is valid
# for any config that agrees on these
STAGE_FIELDS = ("alpha", "d", "n1", "c0", "seed", "constant_cap", "search_p", "depth")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    alpha: float = 0.5
    d: int = 1
    p: Optional[float] = None
    depth: int = 2
    n1: int = 4
    c0: float = 1.0
    seed: int = 0
    node_budget: int = 10**6
    quad_budget: int = 1 << 24
    quad_rtol: float = 1e-3
    lambda_rtol: float = 1e-4
    output_dir: str = "frl-out"
    experiments: list = field(default_factory=lambda: ["build", "decay", "restrict", "sharpness"])
    constant_cap: float = 10.0
    search_p: Optional[float] = None
    r_max: Optional[float] = None
    per_annulus: int = 64
    R_list: list = field(default_factory=lambda: [8, 16, 32, 64])
    sharpness_p: Optional[list] = None
    strategies: list = field(default_factory=lambda: list(STRATEGIES))
    C0: Optional[float] = None
    spacing: float = 0.25
    threads: int = 1

    def __post_init__(self):
        if self.p is None:
            self.p = 2 * self.d / self.alpha if self.alpha else math.nan
        if self.search_p is None:
            self.search_p = 2 * self.d / self.alpha if self.alpha else math.nan

    @property
    def critical_p(self) -> float:
        return 2 * self.d / self.alpha

    def validate(self) -> list:
        """Problems with this config; the empty list means valid."""
        out = []
        if not isinstance(self.d, int) or self.d < 1:
            out.append("d must be a positive integer")
        elif not 0 < self.alpha < self.d:
            out.append(f"alpha must lie in (0, {self.d})")
        if not self.p > 2:
            out.append("p must exceed 2")
        if self.depth < 0:
            out.append("depth must be >= 0")
        if self.n1 < 2:
            out.append("n1 must be >= 2")
        for name in ("quad_rtol", "lambda_rtol", "spacing", "c0", "constant_cap"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be positive")
        if self.spacing > 0.5:
            out.append("spacing must be at most 1/2")
        if self.per_annulus < 16:
            out.append("per_annulus must be at least 16")
        if self.threads < 1:
            out.append("threads must be >= 1")
        bad = set(self.strategies) - set(STRATEGIES)
        if bad:
            out.append(f"unknown strategies: {sorted(bad)}")
        if list(self.R_list) != sorted(set(self.R_list)) or not self.R_list:
            out.append("R_list must be non-empty and strictly increasing")
        return out

    def warnings(self) -> list:
        out = []
        if self.alpha > 0 and self.p < self.critical_p - 1e-12:
            out.append(
                f"p = {self.p:g} is below 2d/alpha = {self.critical_p:g}; restriction bounds are not expected to hold"
            )
        return out

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        """Digest of every field that affects numerical results."""
        doc = {k: v for k, v in self.to_dict().items() if k not in ("output_dir", "threads", "experiments")}
        return _digest(doc)

    def stage_key(self) -> str:
        return _digest({k: getattr(self, k) for k in STAGE_FIELDS})


def _digest(doc) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(blob.encode()).hexdigest()


def read_config_file(path) -> dict:
    path = Path(path)
    text = path.read_bytes()
    if path.suffix.lower() == ".json":
        doc = json.loads(text)
    else:
        doc = tomllib.loads(text.decode())
    # allow an [experiment] table or a flat file
    if "experiment" in doc and isinstance(doc["experiment"], dict):
        doc = {**{k: v for k, v in doc.items() if k != "experiment"}, **doc["experiment"]}
    return doc


def build_config(file_values: Optional[dict] = None, overrides: Optional[dict] = None, env=None) -> ExperimentConfig:
    """Merge defaults < file < seed environment variable < flags."""
    env = os.environ if env is None else env
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    file_values = dict(file_values or {})
    if env.get(SEED_ENV):
        try:
            file_values["seed"] = int(env[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
    merged = {}
    for source in (file_values, overrides or {}):
        for k, v in source.items():
            if v is None:
                continue
            if k not in names:
                raise ConfigError(f"unknown config field {k!r}")
            merged[k] = v
    try:
        cfg = ExperimentConfig(**merged)
    except (TypeError, ZeroDivisionError) as exc:
        raise ConfigError(str(exc)) from exc
    problems = cfg.validate()
    if problems:
        raise ConfigError("; ".join(problems))
    return cfg
