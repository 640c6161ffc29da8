"""Scene-parameter fitting: minimize the L2 image loss through the renderer.

Optimization alternates ADAM updates between the global group (lights,
floor color/pattern/ambient/diffuse) and the per-object appearance group
(color, ambient, diffuse, specular, shininess), one gradient step per
target image, with bounds enforced by projection after every step. Object
poses are known at this stage and are not optimized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .scene import Floor, Material, ObjectInstance, PointLight, Scene
from . import raytracer as rt


@dataclass
class SceneOptConfig:
    epochs: int = 7
    lights: int = 5
    learning_rate: float = 0.01
    pattern_size: int = 200
    shininess_max: float = 100.0
    # gradient steps per group, per target, within one epoch
    steps_per_epoch: int = 30

    def validate(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be > 0")


@dataclass
class OptimizedScene:
    globals_scene: Scene  # optimized lights/floor, no objects
    object_materials: list  # per-target Material
    epoch_losses: list  # mean loss across targets after each epoch
    final_losses: list  # per-target loss after the last epoch
    initial_loss: float


def l2_image_loss(rendered, target):
    """Mean squared difference over all channels and pixels."""
    a = np.asarray(rendered, dtype=np.float64)
    b = np.asarray(target, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


# parameter bounds, enforced by projection
_UNIT = (0.0, 1.0)


class _ParamStore:
    """Named parameter arrays with per-name ADAM state and bounds."""

    def __init__(self, lr):
        self.values = {}
        self.bounds = {}
        self.adam = {}
        self.lr = lr

    def add(self, name, value, bounds=None):
        v = np.asarray(value, dtype=np.float64).copy()
        self.values[name] = v
        self.bounds[name] = bounds
        self.adam[name] = ad.AdamState(size=v.size, learning_rate=self.lr)

    def as_vars(self, tape, names):
        return {n: tape.var(self.values[n]) for n in names}

    def apply_grads(self, grads):
        for name, g in grads.items():
            v = self.values[name]
            new = ad.adam_step(
                self.adam[name], v.ravel(), np.asarray(g).ravel()
            ).reshape(v.shape)
            lohi = self.bounds[name]
            if lohi is not None:
                new = np.clip(new, lohi[0], lohi[1])
            self.values[name] = new


def _initial_store(init, cfg, n_targets, init_materials):
    store = _ParamStore(cfg.learning_rate)
    for k, light in enumerate(init.lights):
        store.add(f"light/{k}/position", light.position)
        store.add(f"light/{k}/intensity", light.intensity, bounds=(0.0, np.inf))
    store.add("floor/color", init.floor.color, bounds=_UNIT)
    store.add("floor/pattern", init.floor.pattern, bounds=_UNIT)
    store.add("floor/ambient", init.floor.ambient, bounds=_UNIT)
    store.add("floor/diffuse", init.floor.diffuse, bounds=_UNIT)
    for j in range(n_targets):
        m = init_materials[j]
        store.add(f"object/{j}/color", m.color, bounds=_UNIT)
        store.add(f"object/{j}/ambient", m.ambient, bounds=_UNIT)
        store.add(f"object/{j}/diffuse", m.diffuse, bounds=_UNIT)
        store.add(f"object/{j}/specular", m.specular, bounds=_UNIT)
        store.add(
            f"object/{j}/shininess", m.shininess, bounds=(1e-3, cfg.shininess_max)
        )
    return store


def _global_names(store):
    return [n for n in store.values if not n.startswith("object/")]


def _object_names(store, j):
    prefix = f"object/{j}/"
    return [n for n in store.values if n.startswith(prefix)]


def _scene_for_target(init, store, j, geometry, group_vars=None):
    """Scene for target ``j``; names in ``group_vars`` become tape Vars."""
    gv = group_vars or {}

    def get(name):
        return gv.get(name, store.values[name])

    lights = [
        PointLight(
            position=get(f"light/{k}/position"),
            intensity=get(f"light/{k}/intensity"),
        )
        for k in range(len(init.lights))
    ]
    floor = Floor(
        color=get("floor/color"),
        pattern=get("floor/pattern"),
        ambient=get("floor/ambient"),
        diffuse=get("floor/diffuse"),
        texture_extent=init.floor.texture_extent,
    )
    material = Material(
        color=get(f"object/{j}/color"),
        ambient=get(f"object/{j}/ambient"),
        diffuse=get(f"object/{j}/diffuse"),
        specular=get(f"object/{j}/specular"),
        shininess=get(f"object/{j}/shininess"),
    )
    obj = ObjectInstance(
        shape=geometry.shape,
        material=material,
        translation=geometry.translation,
        z_rotation=geometry.z_rotation,
        scale=geometry.scale,
    )
    return Scene(
        camera=init.camera,
        lights=lights,
        floor=floor,
        objects=[obj],
        shadows_enabled=init.shadows_enabled,
        background=init.background,
        ambient_light=init.ambient_light,
    )


def _loss_var(scene, target_flat):
    (r, g, b), _ = rt._render_flat(scene)
    n = target_flat[0].size
    diff = (
        ((r - target_flat[0]) * (r - target_flat[0])).sum()
        + ((g - target_flat[1]) * (g - target_flat[1])).sum()
        + ((b - target_flat[2]) * (b - target_flat[2])).sum()
    )
    return diff / (3.0 * n)


def _step(store, init, j, geometry, target_flat, names, context):
    tape = ad.Tape()
    group_vars = store.as_vars(tape, names)
    scene = _scene_for_target(init, store, j, geometry, group_vars)
    loss = _loss_var(scene, target_flat)
    loss_value = float(ad.value_of(loss))
    if not np.isfinite(loss_value):
        raise RuntimeError(f"non-finite loss during {context}")
    adjoints = tape.backward(loss)
    grads = {}
    for name, var in group_vars.items():
        g = adjoints[var.index]
        grads[name] = np.zeros_like(store.values[name]) if g is None else g
    store.apply_grads(grads)
    return loss_value


def _mean_loss(store, init, targets):
    losses = []
    for j, (image, geometry) in enumerate(targets):
        scene = _scene_for_target(init, store, j, geometry)
        losses.append(l2_image_loss(rt.render(scene), image))
    return losses


def optimize_scene(targets, init, cfg, progress=None):
    """Fit global and per-object appearance parameters to target images.

    ``targets``: list of (image H x W x 3, ObjectInstance with the known
    pose; its material provides the initialization for that object).
    """
    cfg.validate()
    if len(init.lights) != cfg.lights:
        init = init.copy()
        while len(init.lights) < cfg.lights:
            init.lights.append(
                PointLight(
                    position=np.array([0.0, 0.0, 5.0]),
                    intensity=np.full(3, 0.35),
                )
            )
        init.lights = init.lights[: cfg.lights]
    init_materials = [geometry.material for _, geometry in targets]
    store = _initial_store(init, cfg, len(targets), init_materials)

    initial_losses = _mean_loss(store, init, targets)
    epoch_losses = []
    for epoch in range(cfg.epochs):
        global_names = _global_names(store)
        for j, (image, geometry) in enumerate(targets):
            tf = tuple(np.asarray(image[:, :, i]).ravel() for i in range(3))
            for _ in range(cfg.steps_per_epoch):
                _step(
                    store, init, j, geometry, tf, global_names,
                    context=f"epoch {epoch}, global group, target {j}",
                )
        for j, (image, geometry) in enumerate(targets):
            tf = tuple(np.asarray(image[:, :, i]).ravel() for i in range(3))
            for _ in range(cfg.steps_per_epoch):
                _step(
                    store, init, j, geometry, tf, _object_names(store, j),
                    context=f"epoch {epoch}, object group, target {j}",
                )
        losses = _mean_loss(store, init, targets)
        epoch_losses.append(float(np.mean(losses)))
        if progress is not None:
            progress(epoch, epoch_losses[-1])

    final_losses = _mean_loss(store, init, targets)
    globals_scene = Scene(
        camera=init.camera,
        lights=[
            PointLight(
                position=store.values[f"light/{k}/position"],
                intensity=store.values[f"light/{k}/intensity"],
            )
            for k in range(cfg.lights)
        ],
        floor=Floor(
            color=store.values["floor/color"],
            pattern=store.values["floor/pattern"],
            ambient=float(store.values["floor/ambient"]),
            diffuse=float(store.values["floor/diffuse"]),
            texture_extent=init.floor.texture_extent,
        ),
        objects=[],
        shadows_enabled=init.shadows_enabled,
        background=init.background,
        ambient_light=init.ambient_light,
    )
    materials = [
        Material(
            color=store.values[f"object/{j}/color"],
            ambient=float(store.values[f"object/{j}/ambient"]),
            diffuse=float(store.values[f"object/{j}/diffuse"]),
            specular=float(store.values[f"object/{j}/specular"]),
            shininess=float(store.values[f"object/{j}/shininess"]),
        )
        for j in range(len(targets))
    ]
    return OptimizedScene(
        globals_scene=globals_scene,
        object_materials=materials,
        epoch_losses=epoch_losses,
        final_losses=final_losses,
        initial_loss=float(np.mean(initial_losses)),
    )
