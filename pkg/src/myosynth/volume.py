"""Dense 3D volumes with anisotropic voxel spacing.

Axis order is (Z, Y, X) throughout, matching microscopy stack convention.
World coordinates of the voxel at index (iz, iy, ix) are
(iz * sz, iy * sy, ix * sx); membership tests evaluate at voxel centers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeMismatchError

DTYPES = {
    "u8": np.uint8,
    "u16": np.uint16,
    "u32": np.uint32,
    "f32": np.float32,
}
DTYPE_NAMES = {np.dtype(v): k for k, v in DTYPES.items()}


@dataclass
class Volume:
    """A dense (Z, Y, X) grid with per-axis spacing."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ShapeMismatchError(f"expected 3D data, got ndim={self.data.ndim}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ConfigError(f"spacing must be 3 positive reals, got {self.spacing}")

    @property
    def shape(self):
        return self.data.shape

    def dtype_name(self):
        return DTYPE_NAMES[self.data.dtype]

    def same_grid(self, other: "Volume") -> bool:
        return self.shape == other.shape

    def copy(self) -> "Volume":
        return Volume(self.data.copy(), self.spacing)


def empty_labels(shape, spacing=(1.0, 1.0, 1.0)) -> Volume:
    return Volume(np.zeros(shape, dtype=np.uint32), spacing)


def check_probability(vol: Volume) -> Volume:
    """Validate a probability volume: all values in [0, 1]."""
    d = vol.data
    if not np.issubdtype(d.dtype, np.floating):
        raise ConfigError(f"probability volume must be float, got {d.dtype}")
    lo, hi = float(d.min(initial=0.0)), float(d.max(initial=0.0))
    if lo < 0.0 or hi > 1.0:
        raise ConfigError(f"probability values outside [0,1]: min={lo}, max={hi}")
    return vol


def voxel_centers_world(shape, spacing):
    """Per-axis world coordinate arrays for the voxel centers."""
    return [np.arange(n, dtype=np.float64) * s for n, s in zip(shape, spacing)]
