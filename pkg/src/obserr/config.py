"""Experiment configuration.

Every field defaults to the reference experiment. A JSON config must list all
top-level blocks; fields inside a block may be omitted to take the default.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional


class ConfigError(ValueError):
    """Schema violation; ``field`` names the offending dotted path."""

    def __init__(self, field_path, message):
        super().__init__(f"{field_path}: {message}")
        self.field = field_path


@dataclass(frozen=True)
class PdeConfig:
    kappa: float = 0.05
    velocity: str = "analytic"  # analytic | file
    velocity_file: Optional[str] = None
    source_center: tuple = (0.5, 0.35)
    source_width: float = 0.05
    source_width_kind: str = "std"
    load_quadrature: str = "consistent"
    truth: str = "reference"  # piecewise amplitude with the 80 / 100 / 50 profile


@dataclass(frozen=True)
class PriorConfig:
    matern_sigma: float = 80.0
    matern_length: float = 0.17
    theta_mean: float = 65.0
    ic_mean: float = 50.0
    ic_eps: float = 4.5e-3
    ic_alpha: float = 0.22
    robin_beta: Optional[float] = None  # None -> sqrt(ic_eps * ic_alpha)
    ic_seed: int = 1

    @property
    def beta(self):
        if self.robin_beta is not None:
            return self.robin_beta
        return (self.ic_eps * self.ic_alpha) ** 0.5


@dataclass(frozen=True)
class DiscretizationConfig:
    nodes_per_axis: int = 11
    time_elements: int = 100
    mesh_nodes_file: Optional[str] = None
    mesh_triangles_file: Optional[str] = None


def _default_sensors():
    return tuple((0.2 * m, 0.2 * n) for m in (1, 2) for n in (1, 2, 3, 4))


def _default_times():
    return tuple(round(0.1 + 0.01 * k, 12) for k in range(81))


@dataclass(frozen=True)
class ObservationConfig:
    kinds: tuple = ("basic", "pde")
    snr_scales: tuple = (0.1, 0.02)
    noise_seed: int = 7
    sensors: tuple = field(default_factory=_default_sensors)
    times: tuple = field(default_factory=_default_times)
    small_noise_scales: tuple = (1e-2, 1e-4, 1e-6)
    zero_noise: bool = False


@dataclass(frozen=True)
class BoundsConfig:
    mc_samples: int = 10_000
    seed: int = 11
    pairs: tuple = (
        "approx-vs-best",
        "enhanced-vs-best",
        "approx-vs-enhanced",
        "best-vs-joint",
        "approx-vs-joint",
        "enhanced-vs-joint",
    )
    exact_l1: bool = False
    enhanced_cov_scale: float = 1.0
    kl_atol: float = 1e-10


@dataclass(frozen=True)
class JointConfig:
    basis_size: int = 4
    coeff_std: float = 50.0
    seed: int = 23
    include_truth: bool = False


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "runs/default"


@dataclass(frozen=True)
class ExperimentConfig:
    pde: PdeConfig = field(default_factory=PdeConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    discretization: DiscretizationConfig = field(default_factory=DiscretizationConfig)
    observation: ObservationConfig = field(default_factory=ObservationConfig)
    bounds: BoundsConfig = field(default_factory=BoundsConfig)
    joint: JointConfig = field(default_factory=JointConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self):
        return _plain(dataclasses.asdict(self))

    def hash(self):
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_seed(self, seed):
        """Override every seed with values derived from one integer."""
        return dataclasses.replace(
            self,
            prior=dataclasses.replace(self.prior, ic_seed=seed),
            observation=dataclasses.replace(self.observation, noise_seed=seed + 1),
            bounds=dataclasses.replace(self.bounds, seed=seed + 2),
            joint=dataclasses.replace(self.joint, seed=seed + 3),
        )

    def validate(self):
        _check(self.pde.kappa > 0, "pde.kappa", "must be positive")
        _check(self.pde.velocity in ("analytic", "file"), "pde.velocity", "must be 'analytic' or 'file'")
        _check(self.pde.velocity != "file" or self.pde.velocity_file, "pde.velocity_file", "required when velocity = 'file'")
        _check(len(self.pde.source_center) == 2, "pde.source_center", "must have two coordinates")
        _check(self.pde.source_width > 0, "pde.source_width", "must be positive")
        _check(self.pde.source_width_kind in ("std", "variance"), "pde.source_width_kind",
               "must be 'std' or 'variance'")
        _check(self.pde.load_quadrature in ("consistent", "vertex"), "pde.load_quadrature",
               "must be 'consistent' or 'vertex'")
        _check(self.pde.truth == "reference", "pde.truth", "only 'reference' is available")
        p = self.prior
        for name in ("matern_sigma", "matern_length", "ic_eps", "ic_alpha"):
            _check(getattr(p, name) > 0, f"prior.{name}", "must be positive")
        _check(p.robin_beta is None or p.robin_beta >= 0, "prior.robin_beta", "must be nonnegative")
        d = self.discretization
        _check(d.nodes_per_axis >= 2, "discretization.nodes_per_axis", "must be at least 2")
        _check(d.time_elements >= 1, "discretization.time_elements", "must be at least 1")
        _check((d.mesh_nodes_file is None) == (d.mesh_triangles_file is None),
               "discretization.mesh_triangles_file", "mesh import needs both node and triangle files")
        o = self.observation
        _check(len(o.kinds) > 0 and all(k in ("basic", "pde") for k in o.kinds), "observation.kinds",
               "entries must be 'basic' or 'pde'")
        _check(len(o.snr_scales) > 0 and all(s > 0 for s in o.snr_scales), "observation.snr_scales",
               "entries must be positive")
        _check(len(o.sensors) > 0 and all(len(s) == 2 for s in o.sensors), "observation.sensors",
               "must be a nonempty list of (x, y) points")
        _check(len(o.times) > 0, "observation.times", "must be nonempty")
        _check(all(s > 0 for s in o.small_noise_scales), "observation.small_noise_scales", "entries must be positive")
        b = self.bounds
        _check(b.mc_samples >= 2, "bounds.mc_samples", "must be at least 2")
        _check(b.enhanced_cov_scale >= 0, "bounds.enhanced_cov_scale", "must be nonnegative")
        _check(b.kl_atol >= 0, "bounds.kl_atol", "must be nonnegative")
        from .bounds import PAIRS  # local import keeps config importable on its own
        bad = [x for x in b.pairs if x not in PAIRS]
        _check(not bad, "bounds.pairs", f"unknown pairs {bad}")
        _check(self.joint.basis_size >= 0, "joint.basis_size", "must be nonnegative")
        _check(self.joint.coeff_std > 0, "joint.coeff_std", "must be positive")
        return self


def _check(ok, path, message):
    if not ok:
        raise ConfigError(path, message)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


_BLOCKS = {
    "pde": PdeConfig,
    "prior": PriorConfig,
    "discretization": DiscretizationConfig,
    "observation": ObservationConfig,
    "bounds": BoundsConfig,
    "joint": JointConfig,
    "output": OutputConfig,
}

_INT_FIELDS = {"ic_seed", "nodes_per_axis", "time_elements", "noise_seed", "mc_samples", "seed", "basis_size"}


def _coerce(block, name, value, default):
    path = f"{block}.{name}"
    if name in _INT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    if isinstance(default, float) or name in ("robin_beta",):
        if value is None and default is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str) or default is None:
        if value is not None and not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return value


def config_from_dict(doc):
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    unknown = sorted(set(doc) - set(_BLOCKS))
    if unknown:
        raise ConfigError(unknown[0], "unknown top-level block")
    blocks = {}
    for name, cls in _BLOCKS.items():
        if name not in doc:
            raise ConfigError(name, "missing required block")
        raw = doc[name]
        if not isinstance(raw, dict):
            raise ConfigError(name, "block must be an object")
        defaults = cls()
        fields = {f.name for f in dataclasses.fields(cls)}
        extra = sorted(set(raw) - fields)
        if extra:
            raise ConfigError(f"{name}.{extra[0]}", "unknown field")
        kwargs = {k: _coerce(name, k, v, getattr(defaults, k)) for k, v in raw.items()}
        blocks[name] = cls(**kwargs)
    return ExperimentConfig(**blocks).validate()


def load_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError("--config", f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON: {exc}") from exc
    return config_from_dict(doc)


def default_config_dict():
    return ExperimentConfig().to_dict()
