"""Run configuration: nested dataclasses loaded from YAML, overridden by flags.

File grammar (YAML mapping; every key optional, unknown keys rejected)::

    system:    {builtin: two_subsystem, params: {}, oracle: null, dims: null,
                data_dir: null, topology_file: null}
    sampling:  {samples: 5000, mode: trajectory, radius: 1.0, horizon: 1}
    scp:       {basis: full, q_max: 10.0, x_max: 10.0, eta: 1.0e-9,
                supply_structure: full, tie_break: min_mu, lp_tol: 1.0e-9}
    lipschitz: {rho: 500, sigma: 50, alpha: 0.05, fallback_margin: 0.05,
                mode: post, min_pairs_factor: 4}
    covering:  {probes: 65536}
    certify:   {eta_cert: 0.0, psd_tol: 1.0e-8, audit: true, audit_rollouts: 100,
                audit_steps: 200, audit_floor: 1.0e-6, auto_refine: 0}
    admm:      {max_iter: 500, eps_primal: 1.0e-6, eps_dual: 1.0e-6, rho: 1.0,
                psd_tol: 1.0e-8, inner_iter: 200, clip_margin: 1.0e-6}
    run:       {seed: 0, workers: 1}

The default file path can be given by the ``DISSIPACERT_CONFIG`` environment
variable.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .admm import AdmmConfig

__all__ = [
    "SystemConfig",
    "SamplingConfig",
    "ScpConfig",
    "LipschitzConfig",
    "CoveringConfig",
    "CertifyConfig",
    "RunSection",
    "RunConfig",
    "ConfigError",
    "load_config",
    "child_seed",
    "STAGES",
    "ENV_VAR",
]

ENV_VAR = "DISSIPACERT_CONFIG"
STAGES = {"sample": 0, "covering": 1, "lipschitz": 2, "audit": 3}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SystemConfig:
    builtin: str | None = "two_subsystem"
    params: dict = field(default_factory=dict)
    oracle: str | None = None
    dims: list | None = None
    data_dir: str | None = None
    topology_file: str | None = None


@dataclass(frozen=True)
class SamplingConfig:
    samples: int = 5000
    mode: str = "trajectory"
    radius: float = 1.0
    horizon: int = 1

    def __post_init__(self):
        if self.samples < 1:
            raise ConfigError("sampling.samples must be at least 1")
        if self.mode not in ("trajectory", "state_space"):
            raise ConfigError("sampling.mode must be trajectory or state_space")
        if not self.radius > 0 or self.horizon < 1:
            raise ConfigError("sampling.radius must be positive and horizon at least 1")


@dataclass(frozen=True)
class ScpConfig:
    basis: object = "full"
    q_max: float = 10.0
    x_max: float = 10.0
    eta: float = 1e-9
    supply_structure: str = "full"
    tie_break: str = "min_mu"
    lp_tol: float = 1e-9

    def __post_init__(self):
        if not (self.q_max > 0 and self.x_max > 0 and self.eta > 0 and self.lp_tol > 0):
            raise ConfigError("scp boxes and tolerances must be positive")
        if self.supply_structure not in ("full", "diagonal"):
            raise ConfigError("scp.supply_structure must be full or diagonal")


@dataclass(frozen=True)
class LipschitzConfig:
    rho: int = 500
    sigma: int = 50
    alpha: float = 0.05
    fallback_margin: float = 0.05
    mode: str = "post"  # post | box
    min_pairs_factor: int = 4

    def __post_init__(self):
        if self.rho < 2 or self.sigma < 3 or not self.alpha > 0:
            raise ConfigError("lipschitz needs rho >= 2, sigma >= 3 and alpha > 0")
        if self.mode not in ("post", "box"):
            raise ConfigError("lipschitz.mode must be post or box")


@dataclass(frozen=True)
class CoveringConfig:
    probes: int = 65536

    def __post_init__(self):
        if self.probes < 1:
            raise ConfigError("covering.probes must be at least 1")


@dataclass(frozen=True)
class CertifyConfig:
    eta_cert: float = 0.0
    psd_tol: float = 1e-8
    audit: bool = True
    audit_rollouts: int = 100
    audit_steps: int = 200
    audit_floor: float = 1e-6
    auto_refine: int = 0

    def __post_init__(self):
        if self.eta_cert < 0 or not self.psd_tol > 0 or not self.audit_floor > 0:
            raise ConfigError("certify tolerances must be positive (eta_cert non-negative)")
        if self.auto_refine < 0:
            raise ConfigError("certify.auto_refine must be non-negative")


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("run.workers must be at least 1")


@dataclass(frozen=True)
class RunConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    scp: ScpConfig = field(default_factory=ScpConfig)
    lipschitz: LipschitzConfig = field(default_factory=LipschitzConfig)
    covering: CoveringConfig = field(default_factory=CoveringConfig)
    certify: CertifyConfig = field(default_factory=CertifyConfig)
    admm: AdmmConfig = field(default_factory=AdmmConfig)
    run: RunSection = field(default_factory=RunSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def override(self, section: str, **values) -> "RunConfig":
        """Copy with some fields of one section replaced (``None`` values ignored)."""
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        current = getattr(self, section)
        try:
            updated = dataclasses.replace(current, **values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad override for {section}: {exc}") from exc
        return dataclasses.replace(self, **{section: updated})

    @classmethod
    def from_dict(cls, data: dict | None) -> "RunConfig":
        data = data or {}
        if not isinstance(data, dict):
            raise ConfigError("configuration root must be a mapping")
        sections = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(data) - set(sections)
        if unknown:
            raise ConfigError(f"unknown configuration sections: {sorted(unknown)}")
        built = {}
        for name, f in sections.items():
            raw = data.get(name) or {}
            if not isinstance(raw, dict):
                raise ConfigError(f"section {name!r} must be a mapping")
            kind = f.default_factory
            fields = {g.name for g in dataclasses.fields(kind)}
            bad = set(raw) - fields
            if bad:
                raise ConfigError(f"unknown keys in {name}: {sorted(bad)}")
            try:
                built[name] = kind(**raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid {name} section: {exc}") from exc
        return cls(**built)


def load_config(path=None) -> RunConfig:
    """Load a YAML config from ``path``, ``$DISSIPACERT_CONFIG`` or defaults."""
    path = path or os.environ.get(ENV_VAR)
    if not path:
        return RunConfig()
    p = Path(path)
    try:
        data = yaml.safe_load(p.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {p} is not valid YAML: {exc}") from exc
    return RunConfig.from_dict(data)


def child_seed(master: int, stage: str, index: int = 0) -> int:
    """Seed for ``(stage, index)`` derived from the master seed.

    ``SeedSequence(master, spawn_key=(stage_code, index))`` where the stage
    codes are listed in ``STAGES``; the first 32-bit word of its state is the
    child seed. Independent of worker count and evaluation order.
    """
    if stage not in STAGES:
        raise ValueError(f"unknown seed stage {stage!r}")
    ss = np.random.SeedSequence(int(master), spawn_key=(STAGES[stage], int(index)))
    return int(ss.generate_state(1, dtype=np.uint32)[0])
