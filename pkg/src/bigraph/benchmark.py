"""Dataset generation, few-shot episode evaluation, and the ADI pose metric.

A dataset is a directory tree <root>/<split>/<class-id>/<shot-id>.png with
a ground-truth JSON next to every image and one shared scene file per
split. A class is a concept (shape, material, scale); pose varies across
its shots. Lighting profiles: "standard", "dark" (intensities x0.25), and
"room" (different floor texture plus wall slabs).
"""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import imgio
from .distributions import LogNormal, TruncNormal, VonMises
from .genmodel import (
    BijectedTarget,
    ObjectParams,
    PriorSet,
    TargetDensity,
    log_prior,
)
from .likelihood import LikelihoodConfig
from .mcmc import RMHConfig, sample_posterior
from .protoprogram import build_program, classify, merge
from .raytracer import ObjectRenderer, render
from .scene import (
    Camera,
    Floor,
    Material,
    ObjectInstance,
    Scene,
    ShapeClass,
    SHAPE_ORDER,
    default_lights,
    load_scene,
    resting_object,
    save_scene,
)

__all__ = [
    "DatasetSpec",
    "PoseEstimate",
    "generate_dataset",
    "load_dataset_index",
    "run_episodes",
    "posterior_for_image",
    "adi_error",
    "posterior_median",
    "circular_median",
    "surface_points",
]

DARK_INTENSITY_FACTOR = 0.25


@dataclass
class DatasetSpec:
    classes: int = 5
    shots: int = 6
    width: int = 80
    height: int = 60
    profile: str = "standard"  # standard | dark | room
    split: str = "train"
    seed: int = 0
    # dataset-scale spread; moderate by design: a wide spread makes a
    # stretched sphere photometrically close to a cube at benchmark
    # resolutions, which strands sampler chains in the wrong shape mode
    scale_sigma: float = 0.1
    shadows: bool = False

    def validate(self):
        if self.classes < 1 or self.shots < 1:
            raise ValueError("classes and shots must be >= 1")
        if self.profile not in ("standard", "dark", "room"):
            raise ValueError("profile must be standard, dark, or room")


@dataclass
class PoseEstimate:
    translation: np.ndarray
    z_rotation: float
    scale: np.ndarray

    def validate(self):
        t = np.asarray(self.translation, dtype=np.float64)
        s = np.asarray(self.scale, dtype=np.float64)
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(s))):
            raise ValueError("pose values must be finite")
        if np.any(s <= 0):
            raise ValueError("scale must be > 0")


def _checker_pattern(n=16, a=0.35, b=0.75):
    grid = np.indices((n, n)).sum(axis=0) % 2
    return np.stack([grid * (b - a) + a] * 3, axis=-1)


def _stripe_pattern(n=16, a=0.3, b=0.8):
    grid = (np.arange(n)[None, :] // 2) % 2 * np.ones((n, 1))
    return np.stack([grid * (b - a) + a] * 3, axis=-1)


def _wall_objects():
    wall_material = Material(
        color=np.array([0.75, 0.72, 0.68]), ambient=0.4, diffuse=0.6,
        specular=0.05, shininess=5.0,
    )
    back = resting_object(
        ShapeClass.CUBE, wall_material, x=0.0, y=4.5, z_rotation=0.0,
        scale=np.array([8.0, 0.1, 4.0]),
    )
    left = resting_object(
        ShapeClass.CUBE, wall_material, x=-6.0, y=0.0, z_rotation=0.0,
        scale=np.array([0.1, 8.0, 4.0]),
    )
    right = resting_object(
        ShapeClass.CUBE, wall_material, x=6.0, y=0.0, z_rotation=0.0,
        scale=np.array([0.1, 8.0, 4.0]),
    )
    return [back, left, right]


def _globals_for_spec(spec):
    intensity = 0.35
    if spec.profile == "dark":
        intensity *= DARK_INTENSITY_FACTOR
    floor = Floor(
        pattern=_stripe_pattern() if spec.profile == "room" else _checker_pattern()
    )
    return Scene(
        camera=Camera(width=spec.width, height=spec.height),
        lights=default_lights(count=5, intensity=intensity),
        floor=floor,
        objects=_wall_objects() if spec.profile == "room" else [],
        shadows_enabled=spec.shadows,
    )


def _class_color(index, total):
    # evenly spaced hues guarantee pairwise-separated class colors
    hue = index / max(total, 1)
    return np.array(colorsys.hsv_to_rgb(hue, 0.85, 0.85))


def _sample_concepts(spec, rng):
    scale_dist = LogNormal(0.025, spec.scale_sigma)
    concepts = []
    for c in range(spec.classes):
        shape = SHAPE_ORDER[c % len(SHAPE_ORDER)]
        material = Material(
            color=_class_color(c, spec.classes),
            ambient=float(rng.uniform(0.2, 0.3)),
            diffuse=float(rng.uniform(0.6, 0.8)),
            specular=float(rng.uniform(0.2, 0.4)),
            shininess=float(rng.uniform(5.0, 20.0)),
        )
        scale = np.clip(scale_dist.sample(3, rng), 0.3, 1.3)
        concepts.append((shape, material, scale))
    return concepts


def _shot_omega(concept, spec, rng):
    shape, material, scale = concept
    x = float(TruncNormal(0.0, 0.08, -0.45, 0.45).sample(1, rng)[0])
    y = float(TruncNormal(0.025, 0.08, -0.35, 0.35).sample(1, rng)[0])
    theta = float(VonMises(0.0, 0.0).sample(1, rng)[0])
    kappa = np.full(3, 0.02)
    kappa[SHAPE_ORDER.index(shape)] = 0.96
    return ObjectParams(
        x=x,
        y=y,
        theta=theta,
        scale=scale.copy(),
        color=np.asarray(material.color, dtype=np.float64).copy(),
        ambient=material.ambient,
        diffuse=material.diffuse,
        specular=material.specular,
        shininess=material.shininess,
        kappa=kappa,
    )


def generate_dataset(spec, root):
    """Write one dataset split; deterministic per spec.seed."""
    spec.validate()
    root = Path(root)
    split_dir = root / spec.split
    split_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    globals_scene = _globals_for_spec(spec)
    save_scene(
        globals_scene,
        split_dir / "scene.json",
        extra={"profile": spec.profile, "scale_sigma": spec.scale_sigma},
    )
    concepts = _sample_concepts(spec, rng)
    index = {"classes": [], "spec": spec.__dict__.copy()}
    for c, concept in enumerate(concepts):
        class_id = f"class-{c:03d}"
        class_dir = split_dir / class_id
        class_dir.mkdir(exist_ok=True)
        shots = []
        for s in range(spec.shots):
            omega = _shot_omega(concept, spec, rng)
            scene = globals_scene.copy()
            scene.objects = scene.objects + [omega.to_instance()]
            image = render(scene)
            shot_id = f"shot-{s:02d}"
            imgio.write_png(image, class_dir / f"{shot_id}.png")
            meta = {
                "omega": omega.to_dict(),
                "class_id": class_id,
                "shot_id": shot_id,
                "profile": spec.profile,
                "shadows": spec.shadows,
                "scale_sigma": spec.scale_sigma,
                "scene": "../scene.json",
            }
            with open(class_dir / f"{shot_id}.json", "w") as fh:
                json.dump(meta, fh, indent=0, sort_keys=True)
            shots.append(shot_id)
        index["classes"].append({"class_id": class_id, "shots": shots})
    with open(split_dir / "index.json", "w") as fh:
        json.dump(index, fh, indent=0, sort_keys=True)
    return split_dir


def load_dataset_index(split_dir):
    split_dir = Path(split_dir)
    with open(split_dir / "index.json") as fh:
        index = json.load(fh)
    scene = load_scene(split_dir / "scene.json")
    return index, scene


DEFAULT_SCALE_SIGMA = 0.1


def dataset_priors(scale_sigma=DEFAULT_SCALE_SIGMA):
    """Inference priors matching a generated dataset's scale spread."""
    return PriorSet(scale=LogNormal(0.025, scale_sigma))


def scale_sigma_for_image(image_path):
    """Scale spread recorded in the shot's metadata sidecar, if present."""
    meta_path = Path(image_path).with_suffix(".json")
    if meta_path.exists():
        with open(meta_path) as fh:
            return float(json.load(fh).get("scale_sigma", DEFAULT_SCALE_SIGMA))
    return DEFAULT_SCALE_SIGMA


def posterior_for_image(
    image_path,
    globals_scene,
    mcmc_cfg,
    likelihood_cfg=None,
    extractor=None,
    selection=None,
    priors=None,
    cache=None,
):
    """Posterior samples for one dataset image, optionally memoized."""
    key = None
    if cache is not None:
        mode = likelihood_cfg.mode if likelihood_cfg else "p3"
        key = (str(image_path), mode, mcmc_cfg.seed, mcmc_cfg.draws)
        if key in cache:
            return cache[key]
    observation = imgio.read_png(image_path)
    if priors is None:
        priors = dataset_priors(scale_sigma_for_image(image_path))
    target = TargetDensity(
        priors,
        globals_scene,
        observation,
        config=likelihood_cfg,
        extractor=extractor,
        selection=selection,
    )
    samples = sample_posterior(BijectedTarget(target), mcmc_cfg)
    if cache is not None:
        cache[key] = samples
    return samples


@dataclass
class EpisodeResult:
    accuracy: float
    stderr: float
    per_episode: list


def run_episodes(
    split_dir,
    n_way,
    k_shot,
    episodes,
    mcmc_cfg,
    likelihood_cfg=None,
    extractor=None,
    selection=None,
    seed=0,
    shuffle_labels=False,
    cache=None,
    progress=None,
    program_max_samples=400,
):
    """N-way K-shot evaluation over a generated dataset split.

    Per episode: draw classes, build a program per support image, merge
    them per class, infer a program for one held-out query per class, and
    classify by softmax over negative program distances. Posteriors are
    memoized in ``cache`` across episodes.
    """
    index, globals_scene = load_dataset_index(split_dir)
    split_dir = Path(split_dir)
    classes = index["classes"]
    if len(classes) < n_way:
        raise ValueError("dataset has fewer classes than n_way")
    for entry in classes:
        if len(entry["shots"]) < k_shot + 1:
            raise ValueError("every class needs at least k_shot + 1 images")
    cache = {} if cache is None else cache
    program_cache = {}
    rng = np.random.default_rng(seed)
    outcomes = []
    per_episode = []

    def program_for(class_id, shot_id):
        key = (class_id, shot_id)
        if key in program_cache:
            return program_cache[key]
        path = split_dir / class_id / f"{shot_id}.png"
        samples = posterior_for_image(
            path, globals_scene, mcmc_cfg, likelihood_cfg,
            extractor=extractor, selection=selection, cache=cache,
        )
        program = build_program(
            samples, provenance={"shots": 1, "source": str(path)},
            max_samples=program_max_samples,
        )
        program_cache[key] = program
        return program

    for ep in range(episodes):
        chosen = rng.choice(len(classes), size=n_way, replace=False)
        class_programs = []
        query_jobs = []
        for slot, ci in enumerate(chosen):
            entry = classes[ci]
            shots = list(entry["shots"])
            perm = rng.permutation(len(shots))
            support = [shots[i] for i in perm[:k_shot]]
            query = shots[perm[k_shot]]
            program = program_for(entry["class_id"], support[0])
            for shot in support[1:]:
                program = merge(program, program_for(entry["class_id"], shot))
            class_programs.append(program)
            query_jobs.append((slot, entry["class_id"], query))
        labels = list(range(n_way))
        if shuffle_labels:
            labels = list(rng.permutation(n_way))
        correct = 0
        for slot, class_id, query in query_jobs:
            qprog = program_for(class_id, query)
            probs = classify(qprog, class_programs)
            if int(probs.argmax()) == labels[slot]:
                correct += 1
        acc = correct / n_way
        outcomes.append(acc)
        per_episode.append(
            {"episode": ep, "classes": [classes[i]["class_id"] for i in chosen],
             "accuracy": acc}
        )
        if progress is not None:
            progress(ep, acc)
    outcomes = np.asarray(outcomes)
    stderr = float(outcomes.std(ddof=1) / np.sqrt(len(outcomes))) if len(outcomes) > 1 else 0.0
    return EpisodeResult(
        accuracy=float(outcomes.mean()), stderr=stderr, per_episode=per_episode
    )


# ---------------------------------------------------------------------------
# ADI pose error


def surface_points(shape, n_points=1000):
    """Deterministic point sample of a canonical body's surface."""
    if n_points < 100:
        raise ValueError("need at least 100 surface points")
    if shape == ShapeClass.SPHERE:
        n_lat = max(int(np.sqrt(n_points / 2)), 2)
        n_lon = 2 * n_lat
        lat = (np.arange(n_lat) + 0.5) / n_lat * np.pi  # polar angle
        lon = np.arange(n_lon) / n_lon * 2 * np.pi
        lat, lon = np.meshgrid(lat, lon, indexing="ij")
        return np.stack(
            [
                np.sin(lat) * np.cos(lon),
                np.sin(lat) * np.sin(lon),
                np.cos(lat),
            ],
            axis=-1,
        ).reshape(-1, 3)
    if shape == ShapeClass.CUBE:
        m = max(int(np.sqrt(n_points / 6)), 2)
        ticks = -1.0 + 2.0 * (np.arange(m) + 0.5) / m
        u, v = np.meshgrid(ticks, ticks, indexing="ij")
        u, v = u.ravel(), v.ravel()
        ones = np.ones_like(u)
        faces = [
            np.stack([ones, u, v], axis=-1),
            np.stack([-ones, u, v], axis=-1),
            np.stack([u, ones, v], axis=-1),
            np.stack([u, -ones, v], axis=-1),
            np.stack([u, v, ones], axis=-1),
            np.stack([u, v, -ones], axis=-1),
        ]
        return np.concatenate(faces)
    if shape == ShapeClass.CYLINDER:
        n_side = int(n_points * 2 / 3)
        rows = max(int(np.sqrt(n_side / 4)), 2)
        cols = 4 * rows
        z = -1.0 + 2.0 * (np.arange(rows) + 0.5) / rows
        ang = np.arange(cols) / cols * 2 * np.pi
        zz, aa = np.meshgrid(z, ang, indexing="ij")
        side = np.stack([np.cos(aa), np.sin(aa), zz], axis=-1).reshape(-1, 3)
        n_cap = max((n_points - side.shape[0]) // 2, 16)
        rings = max(int(np.sqrt(n_cap / 4)), 2)
        spokes = 4 * rings
        r = (np.arange(rings) + 0.5) / rings
        ang = np.arange(spokes) / spokes * 2 * np.pi
        rr, aa = np.meshgrid(r, ang, indexing="ij")
        disk = np.stack(
            [rr * np.cos(aa), rr * np.sin(aa), np.ones_like(rr)], axis=-1
        ).reshape(-1, 3)
        top = disk.copy()
        bottom = disk.copy()
        bottom[:, 2] = -1.0
        return np.concatenate([side, top, bottom])
    raise ValueError(f"unknown shape {shape}")


def _transform_points(points, pose):
    s = np.asarray(pose.scale, dtype=np.float64)
    t = np.asarray(pose.translation, dtype=np.float64)
    c, si = np.cos(pose.z_rotation), np.sin(pose.z_rotation)
    rot = np.array([[c, -si, 0.0], [si, c, 0.0], [0.0, 0.0, 1.0]])
    return (points * s) @ rot.T + t


def adi_error(estimate, truth, shape, n_points=1000):
    """Mean distance from every truth-posed surface point to its nearest
    estimate-posed surface point. Invariant to symmetries the point
    sampling respects (up to its spacing)."""
    estimate.validate()
    truth.validate()
    pts = surface_points(shape, n_points)
    est_cloud = _transform_points(pts, estimate)
    true_cloud = _transform_points(pts, truth)
    tree = cKDTree(est_cloud)
    dist, _ = tree.query(true_cloud, k=1)
    return float(dist.mean())


def circular_median(angles, max_candidates=512):
    """Angle minimizing the summed circular distance to ``angles``,
    searched over (a stride subsample of) the angles themselves."""
    a = np.asarray(angles, dtype=np.float64).ravel()
    if a.size == 0:
        raise ValueError("need at least one angle")
    cand = a if a.size <= max_candidates else a[:: max(1, a.size // max_candidates)]
    d = np.abs((a[None, :] - cand[:, None] + np.pi) % (2.0 * np.pi) - np.pi)
    return float(cand[int(np.argmin(d.sum(axis=1)))])


_CUBE_INDEX = SHAPE_ORDER.index(ShapeClass.CUBE)


def posterior_median(samples):
    """Component-wise pooled posterior median with a symmetry-aware
    z-rotation estimate.

    A cube's orientation is identified only modulo 90-degree turns, so
    independent chains settle on different but equivalent angles and the
    plain pooled median of the rotation lands between modes. When the
    pooled class vector picks the cube, rotations are folded modulo pi/2
    (circular median of 4*theta, divided back) so the estimate is a
    representative of the correct equivalence class. Spheres and
    cylinders are axisymmetric, so their rotation needs no folding."""
    pooled = samples.pooled()
    med = np.median(pooled, axis=0)
    if int(np.argmax(med[-3:])) == _CUBE_INDEX:
        med[2] = circular_median(pooled[:, 2] * 4.0) / 4.0
    return med


def pose_from_omega_vector(v):
    """Posterior draw (16-vector) -> PoseEstimate with the resting z."""
    v = np.asarray(v, dtype=np.float64)
    scale = np.maximum(np.abs(v[3:6]), 1e-6)
    return PoseEstimate(
        translation=np.array([v[0], v[1], scale[2]]),
        z_rotation=float(v[2]),
        scale=scale,
    )
