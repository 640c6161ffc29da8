"""Tests for dataset generation, the episode harness, and the ADI metric."""

import json
from pathlib import Path

import numpy as np
import pytest

from bigraph import imgio
from bigraph.benchmark import (
    DatasetSpec,
    PoseEstimate,
    adi_error,
    generate_dataset,
    load_dataset_index,
    circular_median,
    pose_from_omega_vector,
    posterior_for_image,
    posterior_median,
    run_episodes,
    surface_points,
)
from bigraph.distributions import LogNormal
from bigraph.genmodel import ObjectParams, PriorSet, log_prior
from bigraph.mcmc import RMHConfig
from bigraph.raytracer import render
from bigraph.scene import ShapeClass, load_scene


# --- surface sampling --------------------------------------------------------


def test_sphere_points_on_unit_sphere():
    pts = surface_points(ShapeClass.SPHERE, 1000)
    np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-12)
    assert pts.shape[0] >= 800


def test_cube_points_on_surface():
    pts = surface_points(ShapeClass.CUBE, 1000)
    assert np.all(np.abs(pts) <= 1.0 + 1e-12)
    np.testing.assert_allclose(np.abs(pts).max(axis=1), 1.0, atol=1e-12)


def test_cylinder_points_on_surface():
    pts = surface_points(ShapeClass.CYLINDER, 1000)
    r = np.linalg.norm(pts[:, :2], axis=1)
    on_side = np.isclose(r, 1.0, atol=1e-9)
    on_cap = np.isclose(np.abs(pts[:, 2]), 1.0, atol=1e-9) & (r <= 1.0 + 1e-9)
    assert np.all(on_side | on_cap)
    assert on_side.sum() > 0 and on_cap.sum() > 0


def test_surface_points_minimum_count():
    with pytest.raises(ValueError):
        surface_points(ShapeClass.SPHERE, 50)


# --- ADI ----------------------------------------------------------------------


def identity_pose(scale=1.0):
    return PoseEstimate(
        translation=np.array([0.0, 0.0, scale]),
        z_rotation=0.0,
        scale=np.full(3, scale),
    )


def brute_force_adi(est_cloud, true_cloud):
    total = 0.0
    for p in true_cloud:
        total += np.sqrt(((est_cloud - p) ** 2).sum(axis=1)).min()
    return total / len(true_cloud)


def test_adi_identity_is_zero():
    for shape in ShapeClass:
        assert adi_error(identity_pose(), identity_pose(), shape) == 0.0


def test_adi_translated_cube_matches_brute_force():
    truth = identity_pose(scale=0.5)
    est = PoseEstimate(
        translation=truth.translation + np.array([0.01, 0.0, 0.0]),
        z_rotation=0.0,
        scale=truth.scale,
    )
    adi = adi_error(est, truth, ShapeClass.CUBE, n_points=2000)
    assert adi == pytest.approx(0.01, rel=0.2)

    # the accelerated nearest-neighbor search agrees exactly with brute force
    from bigraph.benchmark import _transform_points

    pts = surface_points(ShapeClass.CUBE, 600)
    ref = brute_force_adi(
        _transform_points(pts, est), _transform_points(pts, truth)
    )
    assert adi_error(est, truth, ShapeClass.CUBE, n_points=600) == pytest.approx(
        ref, abs=1e-12
    )


def test_adi_sphere_rotation_invariance():
    truth = identity_pose()
    est = PoseEstimate(
        translation=truth.translation, z_rotation=1.234, scale=truth.scale
    )
    pts = surface_points(ShapeClass.SPHERE, 1000)
    from scipy.spatial import cKDTree

    spacing = cKDTree(pts).query(pts, k=2)[0][:, 1].mean()
    assert adi_error(est, truth, ShapeClass.SPHERE, 1000) <= 2 * spacing


def test_adi_symmetric_swap_within_tolerance():
    a = identity_pose()
    b = PoseEstimate(
        translation=a.translation + np.array([0.02, 0.01, 0.0]),
        z_rotation=0.0,
        scale=a.scale,
    )
    d_ab = adi_error(a, b, ShapeClass.SPHERE, 2000)
    d_ba = adi_error(b, a, ShapeClass.SPHERE, 2000)
    assert d_ab == pytest.approx(d_ba, abs=5e-3)


def test_adi_error_shrinks_with_resolution():
    truth = identity_pose(scale=0.5)
    est = PoseEstimate(
        translation=truth.translation + np.array([0.01, 0.0, 0.0]),
        z_rotation=0.0,
        scale=truth.scale,
    )
    coarse = abs(adi_error(est, truth, ShapeClass.CUBE, 400) - 0.01)
    fine = abs(adi_error(est, truth, ShapeClass.CUBE, 6000) - 0.01)
    assert fine <= coarse


def test_adi_rejects_invalid_pose():
    bad = PoseEstimate(
        translation=np.zeros(3), z_rotation=0.0, scale=np.array([1.0, 1.0, -1.0])
    )
    with pytest.raises(ValueError):
        adi_error(bad, identity_pose(), ShapeClass.SPHERE)


def test_pose_from_omega_vector_resting():
    v = np.zeros(16)
    v[0], v[1], v[2] = 0.1, -0.2, 0.5
    v[3:6] = [0.6, 0.7, 0.8]
    pose = pose_from_omega_vector(v)
    assert pose.translation[2] == pytest.approx(0.8)
    assert pose.z_rotation == 0.5


def test_circular_median_unimodal_matches_plain_median():
    rng = np.random.default_rng(0)
    a = rng.normal(0.4, 0.1, 501)
    assert circular_median(a) == pytest.approx(np.median(a), abs=0.02)


def test_circular_median_picks_a_mode_not_the_gap():
    # two tight clusters straddling the wrap point; the arithmetic median
    # would land near 0, far from both
    a = np.concatenate([np.full(200, 3.0), np.full(200, -3.0)])
    m = circular_median(a)
    assert min(abs(m - 3.0), abs(m + 3.0)) < 1e-9


class _FakeSamples:
    def __init__(self, draws):
        self._draws = np.asarray(draws, dtype=np.float64)

    def pooled(self):
        return self._draws


def _pose_draws(thetas, kappa):
    draws = np.zeros((len(thetas), 16))
    draws[:, 2] = thetas
    draws[:, 3:6] = 1.0
    draws[:, -3:] = kappa
    return draws


def test_posterior_median_folds_cube_rotation_modes():
    # half the chains settle at theta, half a quarter-turn away — the same
    # cube orientation; the folded median must match truth modulo pi/2
    true_theta = 0.3
    thetas = [true_theta] * 50 + [true_theta - np.pi / 2] * 50
    med = posterior_median(_FakeSamples(_pose_draws(thetas, [0.1, 0.8, 0.1])))
    folded = (med[2] - true_theta) % (np.pi / 2)
    assert min(folded, np.pi / 2 - folded) < 1e-9
    # plain median would land between the modes
    assert abs(np.median(thetas) - true_theta) > 0.3


def test_posterior_median_plain_for_axisymmetric_shapes():
    thetas = [0.3] * 50 + [0.3 - np.pi / 2] * 50
    med = posterior_median(_FakeSamples(_pose_draws(thetas, [0.8, 0.1, 0.1])))
    assert med[2] == pytest.approx(np.median(thetas))


# --- dataset generation --------------------------------------------------------


def micro_spec(tmp_path, classes=2, shots=3, **kwargs):
    return DatasetSpec(
        classes=classes, shots=shots, width=32, height=24, seed=7, **kwargs
    )


def test_generate_dataset_counts(tmp_path):
    spec = micro_spec(tmp_path)
    split = generate_dataset(spec, tmp_path)
    pngs = sorted(split.glob("class-*/shot-*.png"))
    jsons = sorted(split.glob("class-*/shot-*.json"))
    assert len(pngs) == 6 and len(jsons) == 6
    assert (split / "scene.json").exists()
    index, scene = load_dataset_index(split)
    assert len(index["classes"]) == 2
    assert scene.camera.width == 32


def test_generate_dataset_deterministic(tmp_path):
    a_root = tmp_path / "a"
    b_root = tmp_path / "b"
    a = generate_dataset(micro_spec(tmp_path), a_root)
    b = generate_dataset(micro_spec(tmp_path), b_root)
    for pa in sorted(a.glob("class-*/shot-*.png")):
        pb = b / pa.parent.name / pa.name
        assert pa.read_bytes() == pb.read_bytes()
    for ja in sorted(a.glob("class-*/shot-*.json")):
        jb = b / ja.parent.name / ja.name
        assert ja.read_bytes() == jb.read_bytes()


def test_ground_truths_score_finite_prior(tmp_path):
    split = generate_dataset(micro_spec(tmp_path), tmp_path)
    priors = PriorSet(scale=LogNormal(0.025, 0.25))
    for meta_path in split.glob("class-*/shot-*.json"):
        with open(meta_path) as fh:
            meta = json.load(fh)
        omega = ObjectParams.from_dict(meta["omega"])
        assert np.isfinite(log_prior(omega, priors))


def test_ground_truth_render_round_trip(tmp_path):
    split = generate_dataset(micro_spec(tmp_path), tmp_path)
    scene = load_scene(split / "scene.json")
    meta_path = next(split.glob("class-*/shot-*.json"))
    with open(meta_path) as fh:
        meta = json.load(fh)
    omega = ObjectParams.from_dict(meta["omega"])
    redo = scene.copy()
    redo.objects = redo.objects + [omega.to_instance()]
    image = render(redo)
    out = meta_path.parent / "roundtrip.png"
    imgio.write_png(image, out)
    original = meta_path.with_suffix(".png")
    assert out.read_bytes() == original.read_bytes()


def test_dark_profile_scales_lights(tmp_path):
    std = generate_dataset(micro_spec(tmp_path, split="train"), tmp_path / "s")
    dark = generate_dataset(
        micro_spec(tmp_path, split="train", profile="dark"), tmp_path / "d"
    )
    _, scene_std = load_dataset_index(std)
    _, scene_dark = load_dataset_index(dark)
    np.testing.assert_allclose(
        scene_dark.lights[0].intensity, scene_std.lights[0].intensity * 0.25
    )


def test_room_profile_has_walls(tmp_path):
    split = generate_dataset(
        micro_spec(tmp_path, profile="room"), tmp_path / "room"
    )
    _, scene = load_dataset_index(split)
    assert len(scene.objects) == 3  # wall slabs stored as globals


def test_spec_validation():
    with pytest.raises(ValueError):
        DatasetSpec(classes=0).validate()
    with pytest.raises(ValueError):
        DatasetSpec(profile="noon").validate()


# --- episode harness ------------------------------------------------------------


def micro_mcmc():
    return RMHConfig(
        chains=1, draws=150, burn_in=30, proposal_scale=0.15, tune=False, seed=0
    )


def test_single_class_episodes_are_perfect(tmp_path):
    split = generate_dataset(micro_spec(tmp_path, classes=2, shots=2), tmp_path)
    result = run_episodes(
        split, n_way=1, k_shot=1, episodes=2, mcmc_cfg=micro_mcmc(), seed=0
    )
    assert result.accuracy == 1.0
    assert len(result.per_episode) == 2


def test_episode_cache_reuses_posteriors(tmp_path):
    split = generate_dataset(micro_spec(tmp_path, classes=2, shots=2), tmp_path)
    cache = {}
    run_episodes(
        split, n_way=2, k_shot=1, episodes=3, mcmc_cfg=micro_mcmc(), seed=1,
        cache=cache,
    )
    # 2 classes x 2 shots: at most 4 distinct posteriors regardless of episodes
    assert 0 < len(cache) <= 4


def test_episodes_deterministic(tmp_path):
    split = generate_dataset(micro_spec(tmp_path, classes=3, shots=2), tmp_path)
    a = run_episodes(
        split, n_way=2, k_shot=1, episodes=2, mcmc_cfg=micro_mcmc(), seed=2
    )
    b = run_episodes(
        split, n_way=2, k_shot=1, episodes=2, mcmc_cfg=micro_mcmc(), seed=2
    )
    assert a.accuracy == b.accuracy
    assert a.per_episode == b.per_episode


def test_episodes_validate_dataset_size(tmp_path):
    split = generate_dataset(micro_spec(tmp_path, classes=2, shots=2), tmp_path)
    with pytest.raises(ValueError):
        run_episodes(split, n_way=3, k_shot=1, episodes=1, mcmc_cfg=micro_mcmc())
    with pytest.raises(ValueError):
        run_episodes(split, n_way=2, k_shot=2, episodes=1, mcmc_cfg=micro_mcmc())


def test_posterior_for_image_runs(tmp_path):
    split = generate_dataset(micro_spec(tmp_path, classes=1, shots=1), tmp_path)
    _, scene = load_dataset_index(split)
    img = next(split.glob("class-*/shot-*.png"))
    samples = posterior_for_image(img, scene, micro_mcmc())
    assert samples.draws.shape == (1, 120, 16)
    assert np.all(np.isfinite(samples.draws))
