"""Synthetic fluorescence rendering: label volume -> degraded intensity stack.

Stage order is fixed and follows the physical image-formation chain:

  1. per-instance base signal, low-frequency texture, dimmed bulge interiors
  2. background halo (blurred foreground glow, added outside the foreground)
  3. debris: small random bright ellipsoids
  4. Gaussian PSF blur (separable, anisotropic)
  5. photon shot noise (Poisson)
  6. Gaussian read noise
  7. salt-and-pepper hot/dead voxels
  8. background offset, clamp, quantize

Setting a stage's parameter to its neutral value (gain 0, sigma 0, rate 0,
photons_per_unit 0) disables that stage exactly, so the all-off chain returns
the clean quantized signal.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.ndimage import convolve1d

from . import geometry as geo
from .errors import ConfigError, MismatchedShapeError, SchemaError
from .rng import stream
from .scene import Scene
from .volume import Volume
from .voxelize import rasterize_ellipsoid

QUANT_MAX = {"u8": 255, "u16": 65535}
QUANT_DTYPE = {"u8": np.uint8, "u16": np.uint16}


@dataclass
class RenderConfig:
    intensity_range: tuple = (80.0, 160.0)
    interior_dim: float = 0.35
    texture_sigma: float = 4.0
    texture_gain: float = 0.15
    halo_sigmas: tuple = (3.0, 6.0, 6.0)
    halo_gain: float = 25.0
    debris_count_mean: float = 8.0
    debris_size_range: tuple = (1.0, 3.0)
    debris_intensity_range: tuple = (40.0, 120.0)
    psf_sigmas: tuple = (1.6, 0.8, 0.8)
    photons_per_unit: float = 2.0
    read_noise_sigma: float = 2.0
    p_salt: float = 0.0005
    p_pepper: float = 0.0005
    background_offset: float = 10.0
    quantization: str = "u16"

    def __post_init__(self):
        self.intensity_range = tuple(float(v) for v in self.intensity_range)
        self.halo_sigmas = tuple(float(v) for v in self.halo_sigmas)
        self.psf_sigmas = tuple(float(v) for v in self.psf_sigmas)
        self.debris_size_range = tuple(float(v) for v in self.debris_size_range)
        self.debris_intensity_range = tuple(
            float(v) for v in self.debris_intensity_range)
        if self.intensity_range[0] > self.intensity_range[1]:
            raise ConfigError("intensity_range lo > hi")
        if not (0.0 <= self.interior_dim <= 1.0):
            raise ConfigError("interior_dim must be in [0, 1]")
        if self.texture_sigma < 0 or self.texture_gain < 0:
            raise ConfigError("texture parameters must be >= 0")
        if any(s < 0 for s in self.halo_sigmas) or self.halo_gain < 0:
            raise ConfigError("halo parameters must be >= 0")
        if self.debris_count_mean < 0:
            raise ConfigError("debris_count_mean must be >= 0")
        if any(s < 0 for s in self.psf_sigmas):
            raise ConfigError("psf_sigmas must be >= 0")
        if self.photons_per_unit < 0 or self.read_noise_sigma < 0:
            raise ConfigError("noise parameters must be >= 0")
        for name in ("p_salt", "p_pepper"):
            p = getattr(self, name)
            if not (0.0 <= p <= 0.01):
                raise ConfigError(f"{name} must be in [0, 0.01]")
        if self.background_offset < 0:
            raise ConfigError("background_offset must be >= 0")
        if self.quantization not in QUANT_MAX:
            raise ConfigError(f"quantization must be one of {sorted(QUANT_MAX)}")

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            d[f.name] = list(v) if isinstance(v, tuple) else v
        return d

    @classmethod
    def from_dict(cls, d: dict, strict: bool = True, warn=None) -> "RenderConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in d.items():
            if key not in known:
                if strict:
                    raise SchemaError(key, "unknown key")
                if warn:
                    warn(f"ignoring unknown render key {key!r}")
                continue
            kwargs[key] = tuple(value) if isinstance(value, list) else value
        try:
            return cls(**kwargs)
        except ConfigError as exc:
            raise SchemaError("<render-config>", str(exc)) from exc


# ---------------------------------------------------------------------------
# Building blocks


def _kernel(sigma: float) -> np.ndarray:
    radius = int(np.ceil(4.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur_separable(data: np.ndarray, sigmas) -> np.ndarray:
    """Separable Gaussian blur, kernels truncated at 4 sigma.

    Borders renormalize the kernel over in-bounds taps, so no intensity is
    invented at edges and a constant volume passes through unchanged.
    sigma = 0 on an axis is an exact pass-through.
    """
    out = np.asarray(data, dtype=np.float64)
    for axis, sigma in enumerate(sigmas):
        if sigma <= 0:
            continue
        k = _kernel(float(sigma))
        n = out.shape[axis]
        weight = convolve1d(np.ones(n), k, mode="constant", cval=0.0)
        out = convolve1d(out, k, axis=axis, mode="constant", cval=0.0)
        shape = [1, 1, 1]
        shape[axis] = n
        out = out / weight.reshape(shape)
    return out


def apply_poisson(data: np.ndarray, photons_per_unit: float,
                  rs: np.random.Generator):
    """Photon shot noise: v -> Poisson(v * photons) / photons.

    Negative inputs are clamped to 0 before sampling; the clamp count is
    returned alongside the noisy volume.
    """
    if photons_per_unit <= 0:
        raise ConfigError("photons_per_unit must be > 0")
    data = np.asarray(data, dtype=np.float64)
    negatives = int((data < 0).sum())
    lam = np.clip(data, 0.0, None) * photons_per_unit
    noisy = rs.poisson(lam).astype(np.float64) / photons_per_unit
    return noisy, negatives


# ---------------------------------------------------------------------------
# Full chain


def render_fluorescence(labels: Volume, scene: Scene, cfg: RenderConfig,
                        seed: int):
    """Render one degraded fluorescence stack. Returns (Volume, stats)."""
    lab = labels.data
    if tuple(lab.shape) != tuple(scene.config.grid_shape):
        raise MismatchedShapeError(
            f"labels {lab.shape} vs scene grid {scene.config.grid_shape}")
    shape = lab.shape
    spacing = labels.spacing
    qmax = QUANT_MAX[cfg.quantization]
    stats = {"negative_clamped": 0}

    # 1. base signal + texture + dim interiors
    vol = np.zeros(shape, dtype=np.float64)
    for model in scene.models:
        base = float(stream(seed, "intensity", model.instance_id).uniform(
            *cfg.intensity_range))
        vol[lab == model.instance_id] = base
    if cfg.texture_gain > 0 and cfg.texture_sigma > 0:
        white = stream(seed, "texture").standard_normal(shape)
        g = gaussian_blur_separable(white, (cfg.texture_sigma,) * 3)
        std = g.std()
        if std > 0:
            g = g / std
        vol *= np.clip(1.0 + cfg.texture_gain * g, 0.0, None)
    for model in scene.models:
        for feat in model.ellipsoids:
            if feat.kind != geo.KIND_HOLLOW_SHAFT:
                continue
            center, axes, frame = geo.ellipsoid_world(model, feat)
            inner = rasterize_ellipsoid(center, axes * feat.shell_fraction,
                                        frame, shape, spacing)
            vol[inner & (lab == model.instance_id)] *= cfg.interior_dim

    # 2. halo on background only
    background = lab == 0
    if cfg.halo_gain > 0:
        halo = gaussian_blur_separable((~background).astype(np.float64),
                                       cfg.halo_sigmas)
        vol[background] += cfg.halo_gain * halo[background]

    # 3. debris
    if cfg.debris_count_mean > 0:
        rs = stream(seed, "debris")
        n_debris = int(rs.poisson(cfg.debris_count_mean))
        extent = [(s - 1) * sp for s, sp in zip(shape, spacing)]
        for _ in range(n_debris):
            center = np.array([rs.uniform(0.0, e) for e in extent])
            axes = rs.uniform(*cfg.debris_size_range, size=3)
            direction = rs.standard_normal(3)
            frame = geo.orientation_frame(direction)
            intensity = float(rs.uniform(*cfg.debris_intensity_range))
            mask = rasterize_ellipsoid(center, axes, frame, shape, spacing)
            vol[mask] += intensity
        stats["debris_count"] = n_debris

    # 4. PSF
    vol = gaussian_blur_separable(vol, cfg.psf_sigmas)

    # 5. shot noise (photons_per_unit == 0 disables the stage)
    if cfg.photons_per_unit > 0:
        vol, clamped = apply_poisson(vol, cfg.photons_per_unit,
                                     stream(seed, "poisson"))
        stats["negative_clamped"] += clamped

    # 6. read noise
    if cfg.read_noise_sigma > 0:
        vol = vol + stream(seed, "read").normal(
            0.0, cfg.read_noise_sigma, size=shape)

    # 7. salt and pepper
    if cfg.p_salt > 0 or cfg.p_pepper > 0:
        u = stream(seed, "saltpepper").random(shape)
        vol[u < cfg.p_salt] = float(qmax)
        vol[(u >= cfg.p_salt) & (u < cfg.p_salt + cfg.p_pepper)] = 0.0

    # 8. offset, clamp, quantize
    vol = np.clip(vol + cfg.background_offset, 0.0, float(qmax))
    out = np.rint(vol).astype(QUANT_DTYPE[cfg.quantization])
    return Volume(out, spacing), stats
