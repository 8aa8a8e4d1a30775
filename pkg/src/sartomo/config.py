"""Versioned JSON pipeline configuration and the shipped experiment presets."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError, GeometryError
from .network import NetworkConfig
from .scenes import surface_from_dict
from .simulate import GeometryConfig, make_geometry
from .training import LossWeights, TrainConfig

SCHEMA = "sartomo.pipeline/1"


def _strict(cls, d, what):
    if not isinstance(d, dict):
        raise ConfigError(f"{what} must be a JSON object")
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad {what}: {exc}") from None


@dataclass
class SceneConfig:
    surface: dict = field(default_factory=lambda: {"type": "sphere", "radius": 1.0})
    n_scatterers: int = 600
    coeff_model: str = "persistence"
    pad: float = 0.15
    noise_sigma: float = 0.0

    def __post_init__(self):
        surface_from_dict(self.surface)
        if self.n_scatterers < 1:
            raise ConfigError("n_scatterers must be positive")
        if self.coeff_model not in ("constant", "persistence"):
            raise ConfigError(f"unknown coefficient model {self.coeff_model!r}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")


@dataclass
class InversionConfig:
    spacing: float | None = None
    max_dim: int | None = 32
    lam: float | None = None
    lam_rel: float | None = 0.05
    sigma2: float | None = None
    iters: int = 100
    tol: float = 1e-6
    method: str = "nufft"

    def __post_init__(self):
        if sum(v is not None for v in (self.lam, self.lam_rel, self.sigma2)) > 1:
            raise ConfigError("give at most one of lam, lam_rel, sigma2")
        if self.method not in ("nufft", "direct"):
            raise ConfigError(f"unknown operator method {self.method!r}")
        if self.iters < 1:
            raise ConfigError("iters must be positive")

    def solver_kwargs(self):
        return {"lam": self.lam, "lam_rel": self.lam_rel, "sigma2": self.sigma2,
                "iters": self.iters, "tol": self.tol, "method": self.method}


@dataclass
class CloudConfig:
    quantile: float | None = 0.97
    tau: float | None = None
    radius: float = 0.3

    def __post_init__(self):
        if (self.quantile is None) == (self.tau is None):
            raise ConfigError("cloud needs exactly one of quantile or tau")
        if self.radius <= 0:
            raise ConfigError("normal radius must be positive")


@dataclass
class SamplerConfig:
    alpha_step: float = 0.5
    edge_aware: bool = True
    literal_edge_sign: bool = False
    max_newton: int = 10


@dataclass
class MeshConfig:
    resolution: int = 64

    def __post_init__(self):
        if self.resolution < 8:
            raise ConfigError("mesh resolution must be at least 8")


@dataclass
class ValidateConfig:
    n_samples: int = 2000


SECTIONS = {
    "scene": SceneConfig,
    "geometry": GeometryConfig,
    "inversion": InversionConfig,
    "cloud": CloudConfig,
    "network": NetworkConfig,
    "train": TrainConfig,
    "loss": LossWeights,
    "sampler": SamplerConfig,
    "mesh": MeshConfig,
    "validate": ValidateConfig,
}


@dataclass
class PipelineConfig:
    seed: int
    scene: SceneConfig
    geometry: GeometryConfig
    inversion: InversionConfig
    cloud: CloudConfig
    network: NetworkConfig
    train: TrainConfig
    loss: LossWeights
    sampler: SamplerConfig
    mesh: MeshConfig
    validate: ValidateConfig
    name: str = "run"

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        if d.get("schema") != SCHEMA:
            raise ConfigError(f"config schema must be {SCHEMA!r}")
        unknown = set(d) - set(SECTIONS) - {"schema", "seed", "name"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "seed" not in d or not isinstance(d["seed"], int) or isinstance(d["seed"], bool):
            raise ConfigError("config needs an integer seed")
        parts = {k: _strict(c, d.get(k, {}), k) for k, c in SECTIONS.items()}
        try:
            make_geometry(parts["geometry"])
        except GeometryError as exc:
            raise ConfigError(f"geometry: {exc}") from None
        return cls(seed=d["seed"], name=str(d.get("name", "run")), **parts)

    def to_dict(self):
        out = {"schema": SCHEMA, "name": self.name, "seed": self.seed}
        for k in SECTIONS:
            out[k] = asdict(getattr(self, k))
        return out

    def with_overrides(self, **changes):
        """Copy with ``section.key=value`` style overrides, e.g. ``{"network.n_features": 6}``."""
        d = self.to_dict()
        for key, value in changes.items():
            apply_override(d, key, value)
        return PipelineConfig.from_dict(d)


def apply_override(d, dotted, value):
    parts = dotted.split(".")
    node = d
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise ConfigError(f"unknown config key {dotted!r}")
        node = node[p]
    if len(parts) > 1 and parts[-1] not in node and parts[0] != "scene":
        raise ConfigError(f"unknown config key {dotted!r}")
    node[parts[-1]] = value


def load_config(path):
    try:
        with open(path) as fh:
            d = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"missing config file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    return PipelineConfig.from_dict(d)


def save_config(path, config):
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# Desk-scale presets. Scenes are centered at the origin and a few meters across.
# 22 pulses per 5 degree sub-aperture keep the azimuth ambiguity (lambda / 2 dtheta)
# above the scene size, and 0.2 degree pass spacing does the same for height.
_BASE = {
    "schema": SCHEMA,
    "seed": 0,
    "geometry": {"n_pulses": 1584, "n_frequencies": 32, "subaperture_span_deg": 5.0,
                 "elevations_deg": [30.0, 30.2, 30.4, 30.6, 30.8, 31.0, 31.2, 31.4]},
    "inversion": {"max_dim": 32, "lam_rel": 0.1, "iters": 100},
    "cloud": {"quantile": 0.92, "radius": 0.3},
    "network": {"n_layers": 8, "width": 64, "n_features": 9, "sigma_ff": 0.1},
    "train": {"epochs": 2000, "batch_size": 1024, "lr": 1e-3, "iso_refresh": 200,
              "iso_target": 1000},
    "mesh": {"resolution": 64},
    "validate": {"n_samples": 2000},
}

PRESETS = {
    "sphere-small": {
        **_BASE, "name": "sphere-small",
        "scene": {"surface": {"type": "sphere", "radius": 1.5}, "n_scatterers": 800},
    },
    "box-small": {
        **_BASE, "name": "box-small",
        "scene": {"surface": {"type": "box", "half_extents": [1.5, 1.0, 0.75]},
                  "n_scatterers": 900},
    },
    "vehicle-proxy": {
        **_BASE, "name": "vehicle-proxy",
        "scene": {"surface": {"type": "vehicle"}, "n_scatterers": 1200},
    },
}


def preset(name, **overrides):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cfg = PipelineConfig.from_dict(copy.deepcopy(PRESETS[name]))
    return cfg.with_overrides(**overrides) if overrides else cfg


def fourier_iso_grid(base, n_features=(6, 9), iso=(True, False)):
    """The ``N_f x iso`` experiment matrix as named configs."""
    out = []
    for nf in n_features:
        for on in iso:
            cfg = base.with_overrides(**{"network.n_features": nf, "train.iso_enabled": on})
            cfg.name = f"{base.name}-nf{nf}-iso{'on' if on else 'off'}"
            out.append(cfg)
    return out
