import numpy as np
import pytest

from myosynth import geometry as geo
from myosynth.errors import GridMismatchError
from myosynth.scene import Scene, SceneConfig, build_scene
from myosynth.voxelize import polyline_of, rasterize_ellipsoid, rasterize_scene

from conftest import make_scene, straight_tube
from oracles import rasterize_scene_oracle


def small_scene_config(seed, n_instances=2, grid=(28, 32, 32)):
    return SceneConfig(
        seed=seed, n_instances=n_instances, grid_shape=grid,
        half_length=(6.0, 12.0), radius_base=(1.5, 2.5),
        amp_xy=(1.0, 3.0), amp_z=(0.5, 1.5), degree=(2, 4),
        branch_count=(0, 1), n_shaft=(0, 1), gamma=(0.0, 0.4))


class TestPolyline:
    def test_straight_tube_sampling(self):
        m = straight_tube((0, 0, 0), (0, 0, 1), 5, 2)   # length 10
        (pts, radii), = polyline_of(m, 0.5)
        assert len(pts) >= 21
        gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        assert (gaps <= 0.5 + 1e-12).all()
        assert (radii == 2.0).all()

    def test_gap_bound_random_models(self):
        cfg = small_scene_config(5)
        for i in range(100):
            m = build_scene(SceneConfig(seed=i, n_instances=1)).models[0]
            for pts, _ in polyline_of(m, 0.5):
                gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
                assert (gaps <= 0.5 + 1e-12).all()

    def test_endpoints_exact(self):
        m = build_scene(SceneConfig(seed=17, n_instances=1)).models[0]
        (pts, _), *_ = polyline_of(m, 0.5)
        assert np.array_equal(pts[0], geo.centerline_point(m, -1.0))
        assert np.array_equal(pts[-1], geo.centerline_point(m, 1.0))


class TestRasterizeEllipsoid:
    def test_sphere_volume(self):
        r = 9.0
        shape = (32, 32, 32)
        frame = np.eye(3)
        mask = rasterize_ellipsoid((15.5, 15.5, 15.5), (r, r, r), frame, shape)
        expected = 4.0 / 3.0 * np.pi * r ** 3
        assert mask.sum() == pytest.approx(expected, rel=0.05)

    def test_needle_limit(self):
        # semi-axes (a, eps, eps): only voxels on the axis line survive
        mask = rasterize_ellipsoid((8, 8, 8), (6.0, 0.3, 0.3), np.eye(3),
                                   (16, 16, 16))
        zs, ys, xs = np.nonzero(mask)
        assert (ys == 8).all() and (xs == 8).all()
        assert mask.sum() > 0

    def test_rotation_permutes_extents(self):
        shape = (40, 40, 40)
        axes = (3.0, 9.0, 5.0)
        center = (19.5, 19.5, 19.5)
        a = rasterize_ellipsoid(center, axes, np.eye(3), shape)
        # 90-degree rotation about z swaps the y and x frame rows
        rot = np.array([[1.0, 0, 0], [0, 0, 1.0], [0, 1.0, 0]])
        b = rasterize_ellipsoid(center, axes, rot, shape)

        def extents(mask):
            idx = np.nonzero(mask)
            return [int(i.max() - i.min()) for i in idx]

        ez, ey, ex = extents(a)
        fz, fy, fx = extents(b)
        assert (fz, fy, fx) == (ez, ex, ey)


class TestRasterizeScene:
    def test_empty_scene_is_background(self):
        scene = build_scene(SceneConfig(seed=0, n_instances=0,
                                        grid_shape=(16, 16, 16)))
        labels, skel, stats = rasterize_scene(scene)
        assert not labels.data.any()
        assert not skel.data.any()
        assert stats == []

    def test_single_tube_membership(self):
        m = straight_tube((16, 16, 16), (0, 0, 1), 12, 3.0)
        scene = make_scene([m], (32, 32, 32))
        labels, _, _ = rasterize_scene(scene)
        zz, yy, xx = np.meshgrid(*[np.arange(32)] * 3, indexing="ij")
        inside_x = (xx >= 4) & (xx <= 28)    # clamp to the segment body
        dist = np.sqrt((zz - 16.0) ** 2 + (yy - 16.0) ** 2)
        assert (labels.data[inside_x & (dist <= 3.0)] == 1).all()
        assert (labels.data[dist >= 3.6] == 0).all()

    def test_matches_bruteforce_oracle(self):
        for seed in range(6):
            scene = build_scene(small_scene_config(seed))
            labels, skel, _ = rasterize_scene(scene)
            olab, oskel = rasterize_scene_oracle(scene)
            assert np.array_equal(labels.data, olab)
            assert np.array_equal(skel.data, oskel)

    def test_crossing_tubes_closest_normalized(self):
        a = straight_tube((10, 16, 16), (0, 0, 1), 14, 3.0, instance_id=1)
        b = straight_tube((12, 16, 16), (0, 1, 0), 14, 3.0, instance_id=2)
        scene = make_scene([a, b], (32, 32, 32))
        labels, _, stats = rasterize_scene(scene)
        olab, _ = rasterize_scene_oracle(scene)
        assert np.array_equal(labels.data, olab)
        # no voxel the oracle says is inside either tube stays background
        assert stats[0]["contended"] > 0 or stats[1]["contended"] > 0

    def test_overlap_policies(self):
        models = [
            straight_tube((10, 16, 16), (0, 0, 1), 14, 3.0, instance_id=1),
            straight_tube((12, 16, 16), (0, 1, 0), 14, 3.0, instance_id=2),
        ]
        out = {}
        for policy in ("closest-normalized", "first-wins", "last-wins"):
            scene = make_scene([m for m in models], (32, 32, 32),
                               overlap_policy=policy)
            labels, _, _ = rasterize_scene(scene)
            labels2, _, _ = rasterize_scene(scene)
            assert np.array_equal(labels.data, labels2.data)   # pure function
            out[policy] = labels.data
        first, last = out["first-wins"], out["last-wins"]
        differs = first != last
        # first-wins and last-wins differ only where both instances claim
        assert (first[differs] > 0).all() and (last[differs] > 0).all()
        assert (first[~differs] == last[~differs]).all()

    def test_skeleton_subset_of_labels(self):
        for seed in range(4):
            scene = build_scene(small_scene_config(seed, n_instances=3))
            labels, skel, _ = rasterize_scene(scene)
            nz = skel.data != 0
            assert (labels.data[nz] != 0).all()

    def test_anisotropy_invariance(self):
        # scaling spacing and all geometry by the same factor keeps labels
        base = small_scene_config(21)
        scene = build_scene(base)
        labels, _, _ = rasterize_scene(scene)

        c = 2.5
        scaled_cfg = SceneConfig.from_dict({
            **base.to_dict(),
            "spacing": [s * c for s in base.spacing]})
        scaled = Scene(config=scaled_cfg,
                       models=[_scale_model(m, c) for m in scene.models])
        scaled_cfg.skeleton_radius = base.skeleton_radius
        labels2, _, _ = rasterize_scene(scaled)
        assert np.array_equal(labels.data, labels2.data)

    def test_grid_mismatch(self):
        scene = build_scene(SceneConfig(seed=0, n_instances=1))
        with pytest.raises(GridMismatchError):
            rasterize_scene(scene, grid_shape=(8, 8, 8))


def _scale_model(m, c):
    import copy
    s = copy.deepcopy(m)
    s.anchor = tuple(v * c for v in m.anchor)
    s.half_length = m.half_length * c
    s.lateral_xy.amp_scale *= c
    s.lateral_z.amp_scale *= c
    s.thickness.poly.amp_scale *= c
    s.thickness.gamma *= c
    s.thickness.r_min *= c
    s.thickness.r_max *= c
    s.branches = [geo.Branch(t_attach=b.t_attach, direction=b.direction,
                             length=b.length * c, taper_end=b.taper_end)
                  for b in m.branches]
    s.ellipsoids = [geo.EllipsoidFeature(
        t_center=e.t_center, semi_axes=tuple(a * c for a in e.semi_axes),
        kind=e.kind, shell_fraction=e.shell_fraction) for e in m.ellipsoids]
    return s
