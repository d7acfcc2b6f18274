"""Acceptance suite: one test per release criterion.

Each test prints a single PASS line when its criterion holds; a failed
assertion marks the criterion as not met. Tolerances are pinned here and
must not be loosened.
"""

import json
import math
import time

import numpy as np
import pytest

from myosynth import geometry as geo
from myosynth.cli import main
from myosynth.metrics import injective_match, ipq_sparse, paired_t_test
from myosynth.render import (RenderConfig, apply_poisson,
                             gaussian_blur_separable, render_fluorescence)
from myosynth.rng import stream
from myosynth.scene import SceneConfig, build_scene
from myosynth.volio import read_manifest, read_raw, read_tiff, write_manifest, \
    write_raw, write_tiff
from myosynth.volume import Volume
from myosynth.voxelize import rasterize_scene
from myosynth.watershed import separate_instances

from conftest import make_scene, straight_tube, ten_tube_scene
from oracles import (best_assignment_total, dense_blur_oracle,
                     rasterize_scene_oracle, t_pvalue_quadrature)
from test_cli import tree_hashes
from test_voxelize import small_scene_config
from test_watershed import simulated_probabilities


def _report(num: int, title: str):
    print(f"ACCEPTANCE {num:2d} PASS: {title}")


def test_criterion_01_chebyshev_recurrence():
    rng = np.random.default_rng(101)
    ts = rng.uniform(-1.0, 1.0, 1000)
    start = time.perf_counter()
    worst = 0.0
    for k in range(13):
        coeffs = [0.0] * k + [1.0]
        series = geo.ChebyshevSeries(coeffs=coeffs, amp_scale=1.0)
        for t in ts:
            got = geo.chebyshev_eval(series, float(t))
            ref = math.cos(k * math.acos(float(t)))
            worst = max(worst, abs(got - ref))
    elapsed = time.perf_counter() - start
    assert worst <= 1e-10, f"max recurrence error {worst}"
    assert elapsed < 1.0, f"took {elapsed:.2f}s"
    _report(1, f"Chebyshev recurrence vs cos(k arccos t), "
               f"max err {worst:.2e} in {elapsed:.2f}s")


def test_criterion_02_damping_slope():
    K, alpha = 8, 2.0
    coeffs = np.empty((20000, K + 1))
    for i in range(20000):
        s = geo.sample_damped_coeffs(K, alpha, 1.0, stream(202, "damp", i))
        coeffs[i] = s.coeffs
    stds = coeffs.std(axis=0)
    slope = np.polyfit(np.log(np.arange(K + 1) + 1.0), np.log(stds), 1)[0]
    assert abs(slope - (-2.0)) <= 0.1, f"slope {slope}"
    _report(2, f"damping-law regression slope {slope:.3f} (target -2.0 +- 0.1)")


def test_criterion_03_rasterizer_oracle():
    start = time.perf_counter()
    mismatched = 0
    for seed in range(50):
        scene = build_scene(small_scene_config(seed, grid=(24, 32, 36)))
        labels, skel, _ = rasterize_scene(scene)
        olab, oskel = rasterize_scene_oracle(scene)
        mismatched += int((labels.data != olab).sum())
        mismatched += int((skel.data != oskel).sum())
    elapsed = time.perf_counter() - start
    assert mismatched == 0
    assert elapsed < 60.0, f"took {elapsed:.1f}s"
    _report(3, f"50 random scenes match the brute-force oracle exactly "
               f"in {elapsed:.1f}s")


def test_criterion_04_preset_fidelity(tmp_path, capsys):
    assert main(["generate", "--preset", "paper-train", "--dry-run",
                 "--out", str(tmp_path / "x")]) == 0
    plan = capsys.readouterr().out
    assert "30 volumes" in plan and "(128, 1024, 1024)" in plan
    expected = float(plan.split("expected instances ~")[1].split()[0])
    assert 180.0 <= expected <= 220.0, f"expected instances {expected}"

    start = time.perf_counter()
    assert main(["synth", "--preset", "desk",
                 "--out", str(tmp_path / "desk")]) == 0
    elapsed = time.perf_counter() - start
    capsys.readouterr()
    assert elapsed < 60.0, f"desk synth took {elapsed:.1f}s"
    with capsys.disabled():
        _report(4, f"paper-train plan = 30 x (128,1024,1024), ~{expected:.0f} "
                   f"instances; desk synth in {elapsed:.1f}s")


def test_criterion_05_noise_statistics():
    photons = 10.0
    v = np.full((50, 50, 50), 100.0)          # 125000 voxels
    noisy, _ = apply_poisson(v, photons, stream(505, "poisson"))
    var, target = noisy.var(), 100.0 / photons
    assert abs(var - target) / target <= 0.10, f"poisson var {var}"

    scene = build_scene(SceneConfig(seed=0, n_instances=0,
                                    grid_shape=(48, 48, 48)))
    labels, _, _ = rasterize_scene(scene)
    cfg = RenderConfig(texture_gain=0.0, halo_gain=0.0, debris_count_mean=0.0,
                       photons_per_unit=0.0, p_salt=0.0, p_pepper=0.0,
                       psf_sigmas=(0.0, 0.0, 0.0), read_noise_sigma=5.0,
                       background_offset=100.0)
    out, _ = render_fluorescence(labels, scene, cfg, seed=1)
    std = out.data.astype(np.float64).std()
    assert abs(std - 5.0) / 5.0 <= 0.05, f"read-noise std {std}"

    cfg = RenderConfig(texture_gain=0.0, halo_gain=0.0, debris_count_mean=0.0,
                       photons_per_unit=0.0, read_noise_sigma=0.0,
                       p_salt=0.001, p_pepper=0.0, background_offset=0.0,
                       psf_sigmas=(0.0, 0.0, 0.0))
    scene = build_scene(SceneConfig(seed=0, n_instances=0,
                                    grid_shape=(100, 100, 100)))
    labels, _, _ = rasterize_scene(scene)
    out, _ = render_fluorescence(labels, scene, cfg, seed=2)
    n_salt = int((out.data == 65535).sum())
    band = 3.0 * math.sqrt(1e6 * 0.001 * 0.999)
    assert abs(n_salt - 1000) <= band, f"salt count {n_salt}"
    _report(5, f"Poisson var {var:.2f} (target {target}), read-noise std "
               f"{std:.3f}, salt count {n_salt} within 3 sigma of 1000")


def test_criterion_06_blur_conservation():
    rng = np.random.default_rng(606)
    worst_rel = 0.0
    for _ in range(5):
        v = rng.random((24, 30, 28)) * 100
        out = gaussian_blur_separable(v, (1.6, 0.8, 0.8))
        worst_rel = max(worst_rel, abs(out.sum() - v.sum()) / v.sum())
    assert worst_rel <= 1e-3, f"conservation error {worst_rel}"

    worst_abs = 0.0
    for sigmas in [(1.0, 1.0, 1.0), (1.6, 0.8, 0.8)]:
        v = rng.random((17, 17, 17)) * 50
        diff = np.abs(gaussian_blur_separable(v, sigmas)
                      - dense_blur_oracle(v, sigmas)).max()
        worst_abs = max(worst_abs, diff)
    assert worst_abs <= 1e-6, f"oracle deviation {worst_abs}"
    _report(6, f"blur conserves intensity (rel err {worst_rel:.1e}) and "
               f"matches the dense oracle (max {worst_abs:.1e})")


def test_criterion_07_watershed_recovery():
    a = straight_tube((10, 32, 32), (0, 0, 1), 28, 3.0, instance_id=1)
    b = straight_tube((14, 32, 32), (0, 1, 0), 28, 3.0, instance_id=2)
    scene = make_scene([a, b], (24, 64, 64))
    labels, skeleton, _ = rasterize_scene(scene)
    pred, report = separate_instances(*simulated_probabilities(labels, skeleton))
    assert report.labels_used == 2
    rep = ipq_sparse(pred.data, labels.data, recall_enabled=False)
    assert all(s >= 0.8 for _, s in rep.per_instance), rep.per_instance

    scene10 = ten_tube_scene()
    labels10, skeleton10, _ = rasterize_scene(scene10)
    pred10, _ = separate_instances(*simulated_probabilities(labels10, skeleton10))
    rep10 = ipq_sparse(pred10.data, labels10.data, recall_enabled=False)
    assert rep10.mean >= 0.9, rep10.per_instance
    _report(7, f"crossing tubes -> 2 instances (IoUs "
               f"{[round(s, 3) for _, s in rep.per_instance]}); 10-tube scene "
               f"mean IoU {rep10.mean:.3f}")


def test_criterion_08_matching_optimality():
    rng = np.random.default_rng(808)
    for _ in range(100):
        shape = (int(rng.integers(1, 7)), int(rng.integers(1, 7)))
        iou = rng.random(shape)
        total = sum(p[4] for p in injective_match(iou).pairs)
        assert total == pytest.approx(best_assignment_total(iou), abs=1e-12)
    _report(8, "matching equals the exhaustive-permutation optimum on "
               "100 random matrices up to 6x6")


def test_criterion_09_ipq_hand_cases():
    gt = np.zeros((4, 10, 10), dtype=np.uint32)
    gt[1] = 1                                   # 100-voxel instance
    assert ipq_sparse(gt.copy(), gt).mean == 1.0
    assert ipq_sparse(np.zeros_like(gt), gt).mean == 0.0
    split = np.zeros_like(gt)
    split[1, :5] = 7
    split[1, 5:] = 8
    assert ipq_sparse(split, gt).mean == 0.5
    _report(9, "IPQ hand cases: identity 1.0, empty 0.0, 50/50 split 0.5")


def test_criterion_10_significance_oracle():
    rng = np.random.default_rng(1010)
    worst = 0.0
    for df in (5, 10, 39):
        a, b = rng.random(df + 1), rng.random(df + 1)
        t, p, got_df, _ = paired_t_test(a, b)
        assert got_df == df
        worst = max(worst, abs(p - t_pvalue_quadrature(t, df)))
    assert worst <= 1e-6, f"p-value deviation {worst}"
    _report(10, f"paired t-test p-values match quadrature within {worst:.1e}")


def test_criterion_11_thread_determinism(tmp_path):
    a, b = tmp_path / "t1", tmp_path / "t3"
    assert main(["synth", "--preset", "desk", "--out", str(a),
                 "--threads", "1"]) == 0
    assert main(["synth", "--preset", "desk", "--out", str(b),
                 "--threads", "3"]) == 0
    ha, hb = tree_hashes(a), tree_hashes(b)
    assert ha == hb
    _report(11, f"synth output trees hash-identical across --threads "
                f"({len(ha)} files)")


def test_criterion_12_io_round_trips(tmp_path):
    rng = np.random.default_rng(1212)
    for dtype in (np.uint8, np.uint16, np.uint32):
        info = np.iinfo(dtype)
        vol = Volume(rng.integers(info.min, int(info.max) + 1,
                                  (4, 6, 8)).astype(dtype), (2.0, 0.5, 0.5))
        tiff_path = tmp_path / f"{dtype.__name__}.tiff"
        write_tiff(vol, tiff_path)
        assert np.array_equal(read_tiff(tiff_path).data, vol.data)
        raw_path = tmp_path / f"{dtype.__name__}.raw"
        write_raw(vol, raw_path)
        assert np.array_equal(read_raw(raw_path).data, vol.data)
    fvol = Volume(rng.random((4, 6, 8)).astype(np.float32))
    write_raw(fvol, tmp_path / "f32.raw")
    assert np.array_equal(read_raw(tmp_path / "f32.raw").data, fvol.data)

    scene = build_scene(small_scene_config(33, n_instances=3))
    labels, skel, stats = rasterize_scene(scene)
    write_manifest(scene, stats, tmp_path / "manifest.json")
    labels2, skel2, _ = rasterize_scene(read_manifest(tmp_path / "manifest.json"))
    assert np.array_equal(labels.data, labels2.data)
    assert np.array_equal(skel.data, skel2.data)
    _report(12, "TIFF/raw round-trips bit-exact; manifest-only "
                "re-rasterization bit-exact")
