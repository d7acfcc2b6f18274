"""Scene configuration, model sampling, and manifest serialization.

A SceneConfig fully determines one Scene (a set of placed myotube models on
a grid): every random draw flows through streams keyed by
(seed, purpose, instance_id), so generation is reproducible and independent
of evaluation order. The serialized scene (manifest) carries every sampled
parameter and re-rasterizes bit-exactly without any RNG.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, asdict

import numpy as np

from . import geometry as geo
from .errors import ConfigError, DegenerateError, SchemaError
from .rng import stream

OVERLAP_POLICIES = ("closest-normalized", "first-wins", "last-wins")


def _pair(v, lo_ok=None):
    return (float(v[0]), float(v[1]))


@dataclass
class SceneConfig:
    """All knobs for sampling one scene. Ranges are inclusive [lo, hi]."""

    seed: int = 0
    n_instances: int = 4
    grid_shape: tuple = (32, 128, 128)
    spacing: tuple = (1.0, 1.0, 1.0)
    overlap_policy: str = "closest-normalized"

    # Centerline
    degree: tuple = (3, 6)                 # Chebyshev degree K
    alpha: tuple = (1.5, 2.5)              # damping exponent
    amp_xy: tuple = (2.0, 6.0)             # lateral deviation scale, world units
    amp_z: tuple = (0.5, 2.0)
    half_length: tuple = (30.0, 55.0)
    axis_z_max: float = 0.2                # max |z component| of the axis

    # Thickness
    radius_base: tuple = (2.5, 4.0)
    radius_poly_degree: int = 2
    radius_wobble: float = 0.15            # relative higher-order poly amplitude
    gamma: tuple = (0.0, 0.6)              # sinusoid amplitude, world units
    delta: tuple = (0.5, 2.0)              # cycles per tube
    r_min_frac: float = 0.5
    r_max_frac: float = 1.6

    # Branches
    branch_count: tuple = (0, 1)
    theta: tuple = (0.1, 0.6)              # branch cone angle, radians
    branch_length_frac: tuple = (0.2, 0.5) # of half_length
    taper_end: tuple = (0.3, 0.8)

    # Ellipsoid features
    n_shaft: tuple = (0, 2)
    gap_min: float = 0.25
    cap_a: tuple = (1.0, 2.0)              # x local end radius
    cap_b_max: float = 1.5
    bulge_max: float = 1.6
    shaft_a: tuple = (1.0, 2.0)            # x bulge radius b
    shell_fraction: tuple = (0.4, 0.7)

    # Rasterization
    skeleton_radius: float = 1.0           # world-unit tube around the centerline
    max_step_factor: float = 0.5           # polyline step as fraction of min spacing

    _INT_PAIRS = ("degree", "branch_count", "n_shaft")
    _PAIRS = ("alpha", "amp_xy", "amp_z", "half_length", "radius_base",
              "gamma", "delta", "theta", "branch_length_frac", "taper_end",
              "cap_a", "shaft_a", "shell_fraction")
    _TRIPLES = ("grid_shape", "spacing")

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.n_instances < 0:
            raise ConfigError("n_instances must be >= 0")
        if self.overlap_policy not in OVERLAP_POLICIES:
            raise ConfigError(f"unknown overlap_policy {self.overlap_policy!r}")
        self.grid_shape = tuple(int(v) for v in self.grid_shape)
        self.spacing = tuple(float(v) for v in self.spacing)
        if any(v <= 0 for v in self.grid_shape) or len(self.grid_shape) != 3:
            raise ConfigError("grid_shape must be 3 positive integers")
        if any(v <= 0 for v in self.spacing) or len(self.spacing) != 3:
            raise ConfigError("spacing must be 3 positive reals")
        for name in self._INT_PAIRS:
            lo, hi = getattr(self, name)
            lo, hi = int(lo), int(hi)
            if lo > hi or lo < 0:
                raise ConfigError(f"{name}: need 0 <= lo <= hi, got [{lo}, {hi}]")
            setattr(self, name, (lo, hi))
        for name in self._PAIRS:
            lo, hi = (float(v) for v in getattr(self, name))
            if lo > hi:
                raise ConfigError(f"{name}: lo > hi ([{lo}, {hi}])")
            setattr(self, name, (lo, hi))
        for name, bound in (("half_length", 0.0), ("radius_base", 0.0),
                            ("amp_xy", 0.0), ("amp_z", 0.0)):
            if getattr(self, name)[0] <= bound:
                raise ConfigError(f"{name} must be strictly positive")
        if self.theta[1] >= math.pi / 2:
            raise ConfigError("theta max must be < pi/2")
        if not (0 < self.r_min_frac <= self.r_max_frac):
            raise ConfigError("need 0 < r_min_frac <= r_max_frac")
        if not (0 <= self.axis_z_max < 1):
            raise ConfigError("axis_z_max must be in [0, 1)")
        if self.skeleton_radius <= 0 or self.max_step_factor <= 0:
            raise ConfigError("skeleton_radius and max_step_factor must be > 0")
        sf = self.shell_fraction
        if not (0 < sf[0] and sf[1] < 1):
            raise ConfigError("shell_fraction range must lie inside (0, 1)")
        if self.bulge_max <= 1.0:
            raise ConfigError("bulge_max must be > 1")

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            d[f.name] = list(v) if isinstance(v, tuple) else v
        return d

    @classmethod
    def from_dict(cls, d: dict, strict: bool = True, warn=None) -> "SceneConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in d.items():
            if key not in known:
                if strict:
                    raise SchemaError(key, "unknown key")
                if warn:
                    warn(f"ignoring unknown config key {key!r}")
                continue
            kwargs[key] = tuple(value) if isinstance(value, list) else value
        try:
            return cls(**kwargs)
        except ConfigError as exc:
            raise SchemaError("<config>", str(exc)) from exc


@dataclass
class Scene:
    config: SceneConfig
    models: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "metadata": self.metadata,
            "models": [model_to_dict(m) for m in self.models],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls(
            config=SceneConfig.from_dict(d["config"]),
            metadata=dict(d.get("metadata", {})),
            models=[model_from_dict(m) for m in d["models"]],
        )


# ---------------------------------------------------------------------------
# Model (de)serialization — the manifest payload


def _series_to_dict(s: geo.ChebyshevSeries) -> dict:
    return {"coeffs": list(s.coeffs), "alpha": s.alpha, "amp_scale": s.amp_scale}


def _series_from_dict(d: dict) -> geo.ChebyshevSeries:
    return geo.ChebyshevSeries(**d)


def model_to_dict(m: geo.MyotubeModel) -> dict:
    return {
        "instance_id": m.instance_id,
        "anchor": list(m.anchor),
        "axis": list(m.axis),
        "half_length": m.half_length,
        "lateral_xy": _series_to_dict(m.lateral_xy),
        "lateral_z": _series_to_dict(m.lateral_z),
        "thickness": {
            "poly": _series_to_dict(m.thickness.poly),
            "gamma": m.thickness.gamma,
            "delta": m.thickness.delta,
            "phase": m.thickness.phase,
            "r_min": m.thickness.r_min,
            "r_max": m.thickness.r_max,
        },
        "branches": [
            {"t_attach": b.t_attach, "direction": list(b.direction),
             "length": b.length, "taper_end": b.taper_end}
            for b in m.branches
        ],
        "ellipsoids": [
            {"t_center": e.t_center, "semi_axes": list(e.semi_axes),
             "kind": e.kind, "shell_fraction": e.shell_fraction}
            for e in m.ellipsoids
        ],
    }


def model_from_dict(d: dict) -> geo.MyotubeModel:
    th = d["thickness"]
    return geo.MyotubeModel(
        anchor=tuple(d["anchor"]),
        axis=tuple(d["axis"]),
        half_length=d["half_length"],
        lateral_xy=_series_from_dict(d["lateral_xy"]),
        lateral_z=_series_from_dict(d["lateral_z"]),
        thickness=geo.ThicknessProfile(
            poly=_series_from_dict(th["poly"]),
            gamma=th["gamma"], delta=th["delta"], phase=th["phase"],
            r_min=th["r_min"], r_max=th["r_max"]),
        branches=[geo.Branch(t_attach=b["t_attach"],
                             direction=tuple(b["direction"]),
                             length=b["length"], taper_end=b["taper_end"])
                  for b in d["branches"]],
        ellipsoids=[geo.EllipsoidFeature(t_center=e["t_center"],
                                         semi_axes=tuple(e["semi_axes"]),
                                         kind=e["kind"],
                                         shell_fraction=e["shell_fraction"])
                    for e in d["ellipsoids"]],
        instance_id=d["instance_id"],
    )


# ---------------------------------------------------------------------------
# Sampling


def _sample_axis(cfg: SceneConfig, rs: np.random.Generator) -> tuple:
    phi = rs.uniform(0.0, 2.0 * math.pi)
    z = rs.uniform(-cfg.axis_z_max, cfg.axis_z_max)
    v = np.array([z, math.sin(phi), math.cos(phi)])
    v /= np.linalg.norm(v)    # shrinks |z|, so the bound still holds
    return tuple(v)


def _sample_thickness(cfg: SceneConfig, rs: np.random.Generator) -> geo.ThicknessProfile:
    r0 = float(rs.uniform(*cfg.radius_base))
    coeffs = [1.0]
    for k in range(1, cfg.radius_poly_degree + 1):
        coeffs.append(float(rs.uniform(-1, 1)) * cfg.radius_wobble / (k + 1.0))
    return geo.ThicknessProfile(
        poly=geo.ChebyshevSeries(coeffs=coeffs, alpha=1.0, amp_scale=r0),
        gamma=float(rs.uniform(*cfg.gamma)),
        delta=float(rs.uniform(*cfg.delta)),
        phase=float(rs.uniform(0.0, 2.0 * math.pi)),
        r_min=cfg.r_min_frac * r0,
        r_max=cfg.r_max_frac * r0,
    )


def _tangent_ok(model: geo.MyotubeModel) -> bool:
    for t in np.linspace(-1.0, 1.0, 33):
        if np.linalg.norm(geo.centerline_velocity(model, float(t))) < 1e-6:
            return False
    return True


def sample_model(cfg: SceneConfig, instance_id: int) -> geo.MyotubeModel:
    """Sample one myotube model from the config's per-instance stream."""
    rs = stream(cfg.seed, "model", instance_id)
    shape = cfg.grid_shape
    anchor = tuple(float(rs.uniform(0.0, (n - 1) * s))
                   for n, s in zip(shape, cfg.spacing))
    axis = _sample_axis(cfg, rs)
    half_length = float(rs.uniform(*cfg.half_length))
    K = int(rs.integers(cfg.degree[0], cfg.degree[1] + 1))
    alpha = float(rs.uniform(*cfg.alpha))

    model = None
    for _ in range(50):    # resample laterals on degenerate tangents
        lateral_xy = geo.sample_damped_coeffs(
            K, alpha, float(rs.uniform(*cfg.amp_xy)), rs)
        lateral_z = geo.sample_damped_coeffs(
            K, alpha, float(rs.uniform(*cfg.amp_z)), rs)
        candidate = geo.MyotubeModel(
            anchor=anchor, axis=axis, half_length=half_length,
            lateral_xy=lateral_xy, lateral_z=lateral_z,
            thickness=_sample_thickness(cfg, rs),
            instance_id=instance_id)
        if _tangent_ok(candidate):
            model = candidate
            break
    if model is None:
        raise DegenerateError(f"instance {instance_id}: no valid centerline in 50 tries")

    n_branches = int(rs.integers(cfg.branch_count[0], cfg.branch_count[1] + 1))
    length_range = (cfg.branch_length_frac[0] * half_length,
                    cfg.branch_length_frac[1] * half_length)
    for _ in range(n_branches):
        geo.add_branch(model, rs, cfg.theta[0], cfg.theta[1],
                       length_range, cfg.taper_end)
    placement = geo.place_ellipsoids(
        model, rs, cfg.n_shaft, cfg.gap_min, cfg.cap_a, cfg.cap_b_max,
        cfg.bulge_max, cfg.shaft_a, cfg.shell_fraction)
    model.ellipsoids_meta = placement
    return model


def build_scene(config: SceneConfig) -> Scene:
    """Sample all instances; identical config gives an identical scene."""
    models = [sample_model(config, i) for i in range(1, config.n_instances + 1)]
    meta = {
        "n_instances": len(models),
        "ellipsoid_placement": [getattr(m, "ellipsoids_meta", {}) for m in models],
    }
    return Scene(config=config, models=models, metadata=meta)


# ---------------------------------------------------------------------------
# Dataset presets


@dataclass
class DatasetConfig:
    """A dataset is n_volumes scenes sharing one parameter template."""

    name: str
    seed: int
    n_volumes: int
    instances_per_volume: tuple      # inclusive integer range
    scene_template: dict             # SceneConfig fields minus seed/n_instances

    def expected_instances(self) -> float:
        lo, hi = self.instances_per_volume
        return self.n_volumes * (lo + hi) / 2.0

    def scene_config(self, volume_index: int) -> SceneConfig:
        rs = stream(self.seed, "dataset", volume_index)
        lo, hi = self.instances_per_volume
        n = int(rs.integers(lo, hi + 1))
        vol_seed = int(rs.integers(0, 2 ** 62))
        return SceneConfig.from_dict(
            {**self.scene_template, "seed": vol_seed, "n_instances": n})

    def to_dict(self) -> dict:
        return asdict(self) | {"instances_per_volume": list(self.instances_per_volume)}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        known = {"name", "seed", "n_volumes", "instances_per_volume", "scene_template"}
        for key in d:
            if key not in known:
                raise SchemaError(key, "unknown key")
        for key in known:
            if key not in d:
                raise SchemaError(key, "missing required key")
        dc = cls(name=d["name"], seed=int(d["seed"]), n_volumes=int(d["n_volumes"]),
                 instances_per_volume=tuple(d["instances_per_volume"]),
                 scene_template=dict(d["scene_template"]))
        if dc.n_volumes < 0:
            raise SchemaError("n_volumes", "must be >= 0")
        lo, hi = dc.instances_per_volume
        if not (0 <= lo <= hi):
            raise SchemaError("instances_per_volume", "need 0 <= lo <= hi")
        # fail early on a bad template
        SceneConfig.from_dict({**dc.scene_template, "seed": 0, "n_instances": 0})
        return dc


_DESK_TEMPLATE = {
    "grid_shape": [32, 128, 128],
    "spacing": [1.0, 1.0, 1.0],
    "degree": [3, 5],
    "alpha": [1.5, 2.5],
    "amp_xy": [2.0, 5.0],
    "amp_z": [0.5, 1.5],
    "half_length": [30.0, 55.0],
    "radius_base": [2.5, 4.0],
    "branch_count": [0, 1],
    "n_shaft": [0, 2],
}

# 30 volumes x mean 6.5 instances = 195 expected, within the 200 +/- 10%
# target for a full-scale training corpus of 128 x 1024 x 1024 stacks.
_PAPER_TRAIN_TEMPLATE = {
    "grid_shape": [128, 1024, 1024],
    "spacing": [1.0, 1.0, 1.0],
    "degree": [4, 8],
    "alpha": [1.5, 2.5],
    "amp_xy": [20.0, 80.0],
    "amp_z": [4.0, 12.0],
    "half_length": [250.0, 480.0],
    "radius_base": [4.0, 9.0],
    "gamma": [0.0, 1.2],
    "branch_count": [0, 2],
    "n_shaft": [1, 4],
}

PRESETS = {
    "desk": DatasetConfig(
        name="desk", seed=7, n_volumes=4,
        instances_per_volume=(3, 5), scene_template=_DESK_TEMPLATE),
    "paper-train": DatasetConfig(
        name="paper-train", seed=20260824, n_volumes=30,
        instances_per_volume=(5, 8), scene_template=_PAPER_TRAIN_TEMPLATE),
}


def get_preset(name: str) -> DatasetConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    return PRESETS[name]
