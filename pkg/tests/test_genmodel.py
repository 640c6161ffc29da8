"""Tests for the object parameterization, priors, posterior target, and the
unconstrained reparameterization."""

import numpy as np
import pytest

from bigraph.distributions import GumbelSoftmax, LogNormal, TruncNormal, VonMises
from bigraph.genmodel import (
    DIM,
    DIM_NAMES,
    UNCONSTRAINED_DIM,
    BijectedTarget,
    ObjectParams,
    PriorSet,
    TargetDensity,
    log_prior,
    sample_prior,
    sample_prior_predictive,
)
from bigraph.likelihood import (
    ChannelSelection,
    ConvFeatureExtractor,
    LikelihoodConfig,
    color_loglik,
    neural_loglik,
    random_weights,
)
from bigraph.scene import Camera, Material, Scene, ShapeClass, default_lights


def small_globals(width=40, height=30):
    return Scene(
        camera=Camera(width=width, height=height),
        lights=default_lights(count=3, intensity=0.35),
        objects=[],
        shadows_enabled=False,
    )


def omega_fixture():
    return ObjectParams(
        x=0.1,
        y=-0.05,
        theta=0.4,
        scale=np.array([0.9, 0.9, 0.9]),
        color=np.array([0.8, 0.2, 0.1]),
        ambient=0.25,
        diffuse=0.7,
        specular=0.3,
        shininess=10.0,
        kappa=np.array([0.7, 0.2, 0.1]),
    )


def test_vector_round_trip():
    omega = omega_fixture()
    v = omega.to_vector()
    assert v.shape == (DIM,)
    back = ObjectParams.from_vector(v)
    np.testing.assert_array_equal(back.to_vector(), v)


def test_dict_round_trip_uses_dim_names():
    omega = omega_fixture()
    d = omega.to_dict()
    assert set(d) == set(DIM_NAMES)
    np.testing.assert_array_equal(
        ObjectParams.from_dict(d).to_vector(), omega.to_vector()
    )


def test_to_instance_argmax_and_resting():
    omega = omega_fixture()
    inst = omega.to_instance()
    assert inst.shape == ShapeClass.SPHERE
    assert inst.translation[2] == pytest.approx(0.9)
    omega.kappa = np.array([0.1, 0.2, 0.7])
    assert omega.to_instance().shape == ShapeClass.CYLINDER


def test_to_instance_clips_unsafe_materials():
    omega = omega_fixture()
    omega.color = np.array([1.4, -0.2, 0.5])
    omega.shininess = -3.0
    inst = omega.to_instance()
    inst.validate()  # renderable without error
    np.testing.assert_allclose(inst.material.color, [1.0, 0.0, 0.5])
    assert inst.material.shininess > 0


def test_log_prior_matches_component_sum():
    priors = PriorSet()
    omega = omega_fixture()
    expected = (
        float(priors.x.logpdf(omega.x))
        + float(priors.y.logpdf(omega.y))
        + float(priors.theta.logpdf(omega.theta))
        + float(np.sum(priors.scale.logpdf(omega.scale)))
        + float(priors.kappa.logpdf(omega.kappa))
        + float(priors.materials["color_r"].logpdf(0.8))
        + float(priors.materials["color_g"].logpdf(0.2))
        + float(priors.materials["color_b"].logpdf(0.1))
        + float(priors.materials["ambient"].logpdf(0.25))
        + float(priors.materials["diffuse"].logpdf(0.7))
        + float(priors.materials["specular"].logpdf(0.3))
        + float(priors.materials["shininess"].logpdf(10.0))
    )
    assert log_prior(omega, priors) == pytest.approx(expected, rel=1e-12)


def test_log_prior_out_of_support():
    priors = PriorSet()
    omega = omega_fixture()
    omega.scale = np.array([-0.1, 0.9, 0.9])
    assert log_prior(omega, priors) == -np.inf
    omega = omega_fixture()
    omega.kappa = np.array([0.5, 0.5, 0.5])
    assert log_prior(omega, priors) == -np.inf
    omega = omega_fixture()
    omega.x = 0.9  # outside the truncation interval
    assert log_prior(omega, priors) == -np.inf


def test_prior_samples_have_finite_log_prior():
    priors = PriorSet(scale=LogNormal(0.025, 0.25))
    rng = np.random.default_rng(0)
    for _ in range(200):
        omega = sample_prior(priors, rng)
        assert np.isfinite(log_prior(omega, priors))


def test_prior_class_frequencies_balanced():
    priors = PriorSet()
    rng = np.random.default_rng(1)
    counts = np.zeros(3)
    n = 3000
    for _ in range(n):
        omega = sample_prior(priors, rng)
        counts[int(np.argmax(omega.kappa))] += 1
    freq = counts / n
    se = np.sqrt((1 / 3) * (2 / 3) / n)
    assert np.all(np.abs(freq - 1 / 3) < 3 * se + 1e-9)


def test_prior_predictive_images_valid_and_deterministic():
    priors = PriorSet(scale=LogNormal(0.025, 0.25))
    scene = small_globals()
    a = sample_prior_predictive(3, seed=5, priors=priors, globals_scene=scene)
    b = sample_prior_predictive(3, seed=5, priors=priors, globals_scene=scene)
    for (oa, ia), (ob, ib) in zip(a, b):
        np.testing.assert_array_equal(oa.to_vector(), ob.to_vector())
        np.testing.assert_array_equal(ia, ib)
        assert ia.min() >= 0.0 and ia.max() <= 1.0


def observation_fixture(scene, omega):
    return TargetDensity(
        PriorSet(scale=LogNormal(0.025, 0.25)), scene, np.zeros(
            (scene.camera.height, scene.camera.width, 3)
        )
    ).render(omega)


def test_p3_np3_targets_differ_by_neural_term():
    scene = small_globals()
    priors = PriorSet(scale=LogNormal(0.025, 0.25))
    gt = omega_fixture()
    obs = observation_fixture(scene, gt)
    kernel, bias = random_weights(seed=0, out_channels=8)
    ext = ConvFeatureExtractor(kernel, bias)
    sel = ChannelSelection(indices=[0, 2, 4], losses=[0, 0, 0])
    t_p3 = TargetDensity(priors, scene, obs, LikelihoodConfig(mode="p3"))
    t_np3 = TargetDensity(
        priors, scene, obs, LikelihoodConfig(mode="np3"),
        extractor=ext, selection=sel,
    )
    omega = omega_fixture()
    omega.color = np.array([0.3, 0.5, 0.6])
    rendered = t_p3.render(omega)
    neural = neural_loglik(rendered, obs, ext, sel, 0.05)
    assert t_np3.log_target(omega) == pytest.approx(
        t_p3.log_target(omega) + neural, rel=1e-9
    )


def test_log_target_decomposition_and_support():
    scene = small_globals()
    priors = PriorSet(scale=LogNormal(0.025, 0.25))
    gt = omega_fixture()
    obs = observation_fixture(scene, gt)
    target = TargetDensity(priors, scene, obs)
    lt = target.log_target(gt)
    expected = log_prior(gt, priors) + color_loglik(target.render(gt), obs, 1.0)
    assert lt == pytest.approx(expected, rel=1e-12)
    bad = omega_fixture()
    bad.scale = np.array([0.9, 0.9, -1.0])
    assert target.log_target(bad) == -np.inf


def test_ground_truth_beats_prior_draws():
    scene = small_globals()
    priors = PriorSet(scale=LogNormal(0.025, 0.25))
    gt = omega_fixture()
    obs = observation_fixture(scene, gt)
    target = TargetDensity(priors, scene, obs)
    gt_score = target.log_target(gt)
    rng = np.random.default_rng(3)
    scores = []
    for _ in range(30):
        scores.append(target.log_target(sample_prior(priors, rng)))
    assert gt_score > np.percentile(scores, 90)


def test_np3_requires_extractor():
    scene = small_globals()
    obs = np.zeros((30, 40, 3))
    with pytest.raises(ValueError):
        TargetDensity(PriorSet(), scene, obs, LikelihoodConfig(mode="np3"))


def test_observation_shape_checked():
    scene = small_globals()
    with pytest.raises(ValueError):
        TargetDensity(PriorSet(), scene, np.zeros((10, 10, 3)))


# --- reparameterization ------------------------------------------------------


def bijected_fixture():
    scene = small_globals()
    priors = PriorSet(scale=LogNormal(0.025, 0.25))
    gt = omega_fixture()
    obs = observation_fixture(scene, gt)
    return BijectedTarget(TargetDensity(priors, scene, obs))


def test_unconstrain_constrain_round_trip():
    bt = bijected_fixture()
    omega = omega_fixture()
    u = bt.unconstrain(omega)
    assert u.shape == (UNCONSTRAINED_DIM,)
    back = bt.constrain(u)
    np.testing.assert_allclose(back.to_vector(), omega.to_vector(), atol=1e-8)
    u2 = bt.unconstrain(back)
    np.testing.assert_allclose(u2, u, atol=1e-8)


def test_log_prob_decomposition():
    bt = bijected_fixture()
    omega = omega_fixture()
    u = bt.unconstrain(omega)
    lp = bt.log_prob(u)
    expected = bt.target.log_target(bt.constrain(u)) - bt.log_det(bt.constrain(u))
    assert lp == pytest.approx(expected, rel=1e-12)
    assert np.isfinite(lp)


def test_log_det_matches_numeric_block_jacobians():
    bt = bijected_fixture()
    omega = omega_fixture()
    eps = 1e-6

    def num(f, x):
        return np.log(abs((f(x + eps) - f(x - eps)) / (2 * eps)))

    total = num(bt.bij_x.to_unconstrained, omega.x)
    total += num(bt.bij_y.to_unconstrained, omega.y)
    total += num(bt.bij_theta.to_unconstrained, omega.theta)
    for s in omega.scale:
        total += num(lambda v: float(bt.bij_scale.to_unconstrained(v)), float(s))
    mvals = {
        "color_r": omega.color[0],
        "color_g": omega.color[1],
        "color_b": omega.color[2],
        "ambient": omega.ambient,
        "diffuse": omega.diffuse,
        "specular": omega.specular,
        "shininess": omega.shininess,
    }
    for name, val in mvals.items():
        total += num(bt.bij_materials[name].to_unconstrained, float(val))
    # simplex block: 2x2 numeric jacobian of the free coordinates
    def u_of(free):
        full = np.array([free[0], free[1], 1.0 - free[0] - free[1]])
        return bt.bij_kappa.to_unconstrained(full)

    free = omega.kappa[:2]
    jac = np.zeros((2, 2))
    for j in range(2):
        d = np.zeros(2)
        d[j] = eps
        jac[:, j] = (u_of(free + d) - u_of(free - d)) / (2 * eps)
    total += np.log(abs(np.linalg.det(jac)))
    assert bt.log_det(omega) == pytest.approx(total, abs=1e-5)


def test_constrained_point_always_in_support():
    bt = bijected_fixture()
    rng = np.random.default_rng(4)
    for _ in range(50):
        u = rng.normal(0, 2.0, UNCONSTRAINED_DIM)
        omega = bt.constrain(u)
        assert np.all(omega.scale > 0)
        assert -np.pi < omega.theta < np.pi
        assert np.all(omega.kappa > 0)
        assert abs(omega.kappa.sum() - 1.0) < 1e-9
