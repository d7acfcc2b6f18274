import numpy as np
import pytest

from myosynth import geometry as geo
from myosynth.scene import Scene, SceneConfig, build_scene


def constant_series(value, amp_scale=1.0):
    return geo.ChebyshevSeries(coeffs=[value], amp_scale=amp_scale)


def straight_tube(anchor, axis, half_length, radius, instance_id=1,
                  r_min=None, r_max=None):
    """A perfectly straight constant-radius tube with no features."""
    return geo.MyotubeModel(
        anchor=anchor,
        axis=axis,
        half_length=half_length,
        lateral_xy=constant_series(0.0),
        lateral_z=constant_series(0.0),
        thickness=geo.ThicknessProfile(
            poly=geo.ChebyshevSeries(coeffs=[1.0], amp_scale=radius),
            gamma=0.0,
            r_min=r_min if r_min is not None else 0.5 * radius,
            r_max=r_max if r_max is not None else 2.0 * radius),
        instance_id=instance_id,
    )


def make_scene(models, grid_shape, spacing=(1.0, 1.0, 1.0), **cfg_kwargs):
    cfg = SceneConfig(seed=0, n_instances=len(models), grid_shape=grid_shape,
                      spacing=spacing, **cfg_kwargs)
    return Scene(config=cfg, models=list(models))


def ten_tube_scene():
    """Ten mildly wavy, well-separated tubes spanning a desk-size grid.

    Anchors are laid out on a staggered lattice with near-axial directions so
    every instance is fully resolvable; used by the end-to-end separation
    checks that assert a quantitative recovery bound.
    """
    cfg = SceneConfig(seed=4, n_instances=10, grid_shape=(32, 128, 128),
                      amp_xy=(1.0, 3.0), amp_z=(0.5, 1.0),
                      half_length=(40.0, 55.0), radius_base=(2.5, 3.5),
                      branch_count=(0, 0), n_shaft=(0, 1))
    scene = build_scene(cfg)
    for i, m in enumerate(scene.models):
        m.anchor = (10.0 + 12.0 * (i % 2), 12.0 + 11.0 * i, 64.0)
        ax = np.array([0.05 * ((i % 3) - 1), 0.12 * ((i % 2) * 2 - 1), 1.0])
        m.axis = tuple(ax / np.linalg.norm(ax))
    return scene


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
