"""Scene description: camera, lights, floor, primitive objects.

Scenes serialize to JSON field-for-field so optimized scenes can be passed
between the CLI stages. Fields hold numpy arrays (or autodiff ``Var``s when
a scene view is being optimized); ``validate`` is only meaningful on plain
numeric scenes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

DEFAULT_VFOV_DEG = 42.5
DEFAULT_CAMERA_POSITION = (0.0, -6.0, 4.0)
DEFAULT_BACKGROUND = (0.6, 0.7, 0.8)
DEFAULT_AMBIENT_LIGHT = (1.0, 1.0, 1.0)
# world extent (meters) covered by the floor texture, centered on the origin
DEFAULT_FLOOR_TEXTURE_EXTENT = 12.0


class ShapeClass(Enum):
    """Canonical bodies all have half-extent 1 along z."""

    SPHERE = "sphere"  # unit radius, centered at origin
    CUBE = "cube"  # [-1, 1]^3
    CYLINDER = "cylinder"  # radius 1, axis z, z in [-1, 1]

    @classmethod
    def from_kappa(cls, kappa):
        """Renderable class for a (possibly soft) class vector: argmax."""
        order = (cls.SPHERE, cls.CUBE, cls.CYLINDER)
        return order[int(np.argmax(np.asarray(kappa)))]


SHAPE_ORDER = (ShapeClass.SPHERE, ShapeClass.CUBE, ShapeClass.CYLINDER)


@dataclass
class Camera:
    position: np.ndarray = field(
        default_factory=lambda: np.array(DEFAULT_CAMERA_POSITION)
    )
    look_at: np.ndarray = field(default_factory=lambda: np.zeros(3))
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    vertical_fov_deg: float = DEFAULT_VFOV_DEG
    width: int = 160
    height: int = 120

    def validate(self):
        if not 0.0 < self.vertical_fov_deg < 180.0:
            raise ValueError("vertical fov must lie in (0, 180) degrees")
        fwd = np.asarray(self.look_at, float) - np.asarray(self.position, float)
        if np.linalg.norm(fwd) == 0:
            raise ValueError("look-at must differ from camera position")
        fwd = fwd / np.linalg.norm(fwd)
        up = np.asarray(self.up, float)
        if np.linalg.norm(np.cross(fwd, up)) < 1e-9:
            raise ValueError("up vector is parallel to the view direction")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")


@dataclass
class PointLight:
    position: np.ndarray
    intensity: np.ndarray  # per-channel, >= 0

    def validate(self):
        if np.any(np.asarray(self.intensity, float) < 0):
            raise ValueError("light intensity components must be >= 0")


@dataclass
class Material:
    color: np.ndarray  # rgb in [0, 1]
    ambient: float = 0.2
    diffuse: float = 0.7
    specular: float = 0.3
    shininess: float = 10.0

    def validate(self):
        c = np.asarray(self.color, float)
        if c.shape != (3,) or np.any(c < 0) or np.any(c > 1):
            raise ValueError("color must be an rgb triple in [0, 1]")
        for name in ("ambient", "diffuse", "specular"):
            v = float(getattr(self, name))
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not (0.0 < float(self.shininess) < np.inf):
            raise ValueError("shininess must be positive and finite")


@dataclass
class Floor:
    color: np.ndarray = field(default_factory=lambda: np.full(3, 0.5))
    pattern: np.ndarray = field(
        default_factory=lambda: np.ones((200, 200, 3))
    )
    ambient: float = 0.3
    diffuse: float = 0.7
    texture_extent: float = DEFAULT_FLOOR_TEXTURE_EXTENT

    def validate(self):
        p = np.asarray(self.pattern, float)
        if p.ndim != 3 or p.shape[2] != 3:
            raise ValueError("pattern must have shape H x W x 3")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("pattern entries must lie in [0, 1]")
        for name in ("ambient", "diffuse"):
            v = float(getattr(self, name))
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"floor {name} must lie in [0, 1]")


@dataclass
class ObjectInstance:
    shape: ShapeClass
    material: Material
    translation: np.ndarray  # world position of the body center
    z_rotation: float = 0.0
    scale: np.ndarray = field(default_factory=lambda: np.ones(3))

    def validate(self):
        s = np.asarray(self.scale, float)
        if np.any(s <= 0):
            raise ValueError("scale components must be > 0")
        t = np.asarray(self.translation, float)
        if abs(float(t[2]) - float(s[2])) > 1e-6:
            raise ValueError(
                "resting constraint violated: center z must equal scale z"
            )
        self.material.validate()


def resting_object(shape, material, x, y, z_rotation, scale):
    """Object placed so its scaled body touches the floor plane z=0."""
    scale = np.asarray(scale, dtype=np.float64)
    translation = np.array([x, y, float(scale[2])], dtype=np.float64)
    return ObjectInstance(
        shape=shape,
        material=material,
        translation=translation,
        z_rotation=float(z_rotation),
        scale=scale,
    )


@dataclass
class Scene:
    camera: Camera = field(default_factory=Camera)
    lights: list = field(default_factory=list)
    floor: Floor = field(default_factory=Floor)
    objects: list = field(default_factory=list)
    shadows_enabled: bool = True
    background: np.ndarray = field(
        default_factory=lambda: np.array(DEFAULT_BACKGROUND)
    )
    ambient_light: np.ndarray = field(
        default_factory=lambda: np.array(DEFAULT_AMBIENT_LIGHT)
    )

    def validate(self):
        if len(self.lights) < 1:
            raise ValueError("a scene needs at least one light")
        self.camera.validate()
        self.floor.validate()
        for light in self.lights:
            light.validate()
        for obj in self.objects:
            obj.validate()

    def copy(self):
        return scene_from_dict(scene_to_dict(self))


def default_lights(count=5, intensity=0.35, seed=None):
    """Lights spread above the scene; used for initialization and datasets."""
    angles = np.linspace(0.0, 2 * np.pi, count, endpoint=False) + np.pi / 4
    lights = []
    for a in angles:
        pos = np.array([3.0 * np.cos(a), 3.0 * np.sin(a) - 1.0, 5.0])
        lights.append(PointLight(position=pos, intensity=np.full(3, intensity)))
    return lights


# ---------------------------------------------------------------------------
# JSON serialization (field-for-field)


def _arr(x):
    return np.asarray(x, dtype=np.float64).tolist()


def scene_to_dict(scene):
    return {
        "camera": {
            "position": _arr(scene.camera.position),
            "look_at": _arr(scene.camera.look_at),
            "up": _arr(scene.camera.up),
            "vertical_fov_deg": float(scene.camera.vertical_fov_deg),
            "width": int(scene.camera.width),
            "height": int(scene.camera.height),
        },
        "lights": [
            {"position": _arr(l.position), "intensity": _arr(l.intensity)}
            for l in scene.lights
        ],
        "floor": {
            "color": _arr(scene.floor.color),
            "pattern": _arr(scene.floor.pattern),
            "ambient": float(scene.floor.ambient),
            "diffuse": float(scene.floor.diffuse),
            "texture_extent": float(scene.floor.texture_extent),
        },
        "objects": [
            {
                "shape": o.shape.value,
                "material": {
                    "color": _arr(o.material.color),
                    "ambient": float(o.material.ambient),
                    "diffuse": float(o.material.diffuse),
                    "specular": float(o.material.specular),
                    "shininess": float(o.material.shininess),
                },
                "translation": _arr(o.translation),
                "z_rotation": float(o.z_rotation),
                "scale": _arr(o.scale),
            }
            for o in scene.objects
        ],
        "shadows_enabled": bool(scene.shadows_enabled),
        "background": _arr(scene.background),
        "ambient_light": _arr(scene.ambient_light),
    }


def scene_from_dict(d):
    cam = d["camera"]
    return Scene(
        camera=Camera(
            position=np.array(cam["position"]),
            look_at=np.array(cam["look_at"]),
            up=np.array(cam["up"]),
            vertical_fov_deg=cam["vertical_fov_deg"],
            width=cam["width"],
            height=cam["height"],
        ),
        lights=[
            PointLight(
                position=np.array(l["position"]),
                intensity=np.array(l["intensity"]),
            )
            for l in d["lights"]
        ],
        floor=Floor(
            color=np.array(d["floor"]["color"]),
            pattern=np.array(d["floor"]["pattern"]),
            ambient=d["floor"]["ambient"],
            diffuse=d["floor"]["diffuse"],
            texture_extent=d["floor"].get(
                "texture_extent", DEFAULT_FLOOR_TEXTURE_EXTENT
            ),
        ),
        objects=[
            ObjectInstance(
                shape=ShapeClass(o["shape"]),
                material=Material(
                    color=np.array(o["material"]["color"]),
                    ambient=o["material"]["ambient"],
                    diffuse=o["material"]["diffuse"],
                    specular=o["material"]["specular"],
                    shininess=o["material"]["shininess"],
                ),
                translation=np.array(o["translation"]),
                z_rotation=o["z_rotation"],
                scale=np.array(o["scale"]),
            )
            for o in d["objects"]
        ],
        shadows_enabled=d["shadows_enabled"],
        background=np.array(d["background"]),
        ambient_light=np.array(
            d.get("ambient_light", DEFAULT_AMBIENT_LIGHT)
        ),
    )


def save_scene(scene, path, extra=None):
    doc = scene_to_dict(scene)
    if extra:
        doc["metadata"] = extra
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_scene(path):
    with open(path) as fh:
        return scene_from_dict(json.load(fh))
