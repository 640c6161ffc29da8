"""Generative model over single objects: priors, joint density, and the
unnormalized posterior target used for inference.

An object is described by 16 constrained coordinates: planar position
(x, y), z-rotation theta, three scales, rgb color, four Phong material
scalars, and a relaxed 3-class shape vector on the simplex. The z
translation is always derived from the resting constraint and never
sampled. Inference runs in a 15-dimensional unconstrained space obtained
by per-variable bijectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bijectors import (
    Affine,
    BoundedSigmoid,
    LogAffine,
    SimplexBijector,
    fit_affine_to_moments,
)
from .distributions import (
    GMM1D,
    GumbelSoftmax,
    LogNormal,
    TruncNormal,
    VonMises,
    fit_gmm_em,
)
from .likelihood import LikelihoodConfig, color_loglik, neural_loglik
from .raytracer import ObjectRenderer
from .scene import Material, ObjectInstance, ShapeClass

DIM_NAMES = (
    "x",
    "y",
    "theta",
    "scale_x",
    "scale_y",
    "scale_z",
    "color_r",
    "color_g",
    "color_b",
    "ambient",
    "diffuse",
    "specular",
    "shininess",
    "class_sphere",
    "class_cube",
    "class_cylinder",
)
DIM = len(DIM_NAMES)
UNCONSTRAINED_DIM = DIM - 1  # the simplex block loses one coordinate

MATERIAL_PROPS = ("ambient", "diffuse", "specular", "shininess")


@dataclass
class ObjectParams:
    """One object's latent variables in constrained space."""

    x: float
    y: float
    theta: float
    scale: np.ndarray
    color: np.ndarray
    ambient: float
    diffuse: float
    specular: float
    shininess: float
    kappa: np.ndarray

    def to_vector(self):
        return np.concatenate(
            [
                [self.x, self.y, self.theta],
                np.asarray(self.scale, dtype=np.float64),
                np.asarray(self.color, dtype=np.float64),
                [self.ambient, self.diffuse, self.specular, self.shininess],
                np.asarray(self.kappa, dtype=np.float64),
            ]
        )

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (DIM,):
            raise ValueError(f"expected {DIM} coordinates, got {v.shape}")
        return cls(
            x=float(v[0]),
            y=float(v[1]),
            theta=float(v[2]),
            scale=v[3:6].copy(),
            color=v[6:9].copy(),
            ambient=float(v[9]),
            diffuse=float(v[10]),
            specular=float(v[11]),
            shininess=float(v[12]),
            kappa=v[13:16].copy(),
        )

    def to_instance(self):
        """Renderable instance: argmax shape class, resting translation,
        material values clipped into the renderer's valid ranges."""
        shape = ShapeClass.from_kappa(self.kappa)
        scale = np.abs(np.asarray(self.scale, dtype=np.float64))
        scale = np.maximum(scale, 1e-6)
        material = Material(
            color=np.clip(np.asarray(self.color, dtype=np.float64), 0.0, 1.0),
            ambient=float(np.clip(self.ambient, 0.0, 1.0)),
            diffuse=float(np.clip(self.diffuse, 0.0, 1.0)),
            specular=float(np.clip(self.specular, 0.0, 1.0)),
            shininess=float(np.clip(self.shininess, 1e-3, np.inf)),
        )
        translation = np.array([self.x, self.y, float(scale[2])])
        return ObjectInstance(
            shape=shape,
            material=material,
            translation=translation,
            z_rotation=float(self.theta),
            scale=scale,
        )

    def to_dict(self):
        return {name: float(v) for name, v in zip(DIM_NAMES, self.to_vector())}

    @classmethod
    def from_dict(cls, d):
        return cls.from_vector(np.array([d[name] for name in DIM_NAMES]))


def _default_material_gmms():
    def single(mean, std):
        return GMM1D(
            weights=np.array([1.0]), means=np.array([mean]), stds=np.array([std])
        )

    return {
        "color_r": single(0.5, 0.25),
        "color_g": single(0.5, 0.25),
        "color_b": single(0.5, 0.25),
        "ambient": single(0.25, 0.1),
        "diffuse": single(0.7, 0.15),
        "specular": single(0.3, 0.15),
        "shininess": single(10.0, 5.0),
    }


@dataclass
class PriorSet:
    """Per-variable priors. Material priors are 1-D Gaussian mixtures that
    can be fit from a set of optimized materials."""

    x: TruncNormal = field(
        default_factory=lambda: TruncNormal(loc=0.0, scale=0.08, low=-0.45, high=0.45)
    )
    y: TruncNormal = field(
        default_factory=lambda: TruncNormal(
            loc=0.025, scale=0.08, low=-0.35, high=0.35
        )
    )
    theta: VonMises = field(default_factory=lambda: VonMises(0.0, 0.0))
    # near-degenerate scale spread by default; dataset generation widens it
    scale: LogNormal = field(default_factory=lambda: LogNormal(0.025, 0.0001))
    kappa: GumbelSoftmax = field(
        default_factory=lambda: GumbelSoftmax(
            probs=(1 / 3, 1 / 3, 1 / 3), temperature=0.5
        )
    )
    materials: dict = field(default_factory=_default_material_gmms)

    @classmethod
    def from_materials(cls, materials, components=2, scale_sigma=0.25, **kwargs):
        """Material priors fit by EM over a list of optimized materials."""
        if not materials:
            raise ValueError("need at least one material")
        data = {
            "color_r": [float(np.asarray(m.color)[0]) for m in materials],
            "color_g": [float(np.asarray(m.color)[1]) for m in materials],
            "color_b": [float(np.asarray(m.color)[2]) for m in materials],
            "ambient": [float(m.ambient) for m in materials],
            "diffuse": [float(m.diffuse) for m in materials],
            "specular": [float(m.specular) for m in materials],
            "shininess": [float(m.shininess) for m in materials],
        }
        gmms = {}
        for name, vals in data.items():
            vals = np.asarray(vals, dtype=np.float64)
            k = min(components, vals.size)
            if vals.size < 2 or np.ptp(vals) < 1e-9:
                center = float(vals.mean())
                spread = max(0.05, abs(center) * 0.1)
                gmms[name] = GMM1D(
                    weights=np.array([1.0]),
                    means=np.array([center]),
                    stds=np.array([spread]),
                )
            else:
                gmm, _, _ = fit_gmm_em(vals, k=k, seed=0)
                # widen hard-floored components so the prior is not degenerate
                stds = np.maximum(gmm.stds, 0.02 * max(1.0, np.ptp(vals)))
                gmms[name] = GMM1D(weights=gmm.weights, means=gmm.means, stds=stds)
        return cls(
            scale=LogNormal(0.025, scale_sigma), materials=gmms, **kwargs
        )


def log_prior(omega, priors):
    """Joint log prior density; -inf outside the support."""
    k = np.asarray(omega.kappa, dtype=np.float64)
    if np.any(k <= 0) or abs(k.sum() - 1.0) > 1e-6:
        return -np.inf
    s = np.asarray(omega.scale, dtype=np.float64)
    if np.any(s <= 0):
        return -np.inf
    total = float(priors.x.logpdf(omega.x)) + float(priors.y.logpdf(omega.y))
    total += float(priors.theta.logpdf(omega.theta))
    total += float(np.sum(priors.scale.logpdf(s)))
    total += float(priors.kappa.logpdf(k))
    m = priors.materials
    total += float(m["color_r"].logpdf(omega.color[0]))
    total += float(m["color_g"].logpdf(omega.color[1]))
    total += float(m["color_b"].logpdf(omega.color[2]))
    total += float(m["ambient"].logpdf(omega.ambient))
    total += float(m["diffuse"].logpdf(omega.diffuse))
    total += float(m["specular"].logpdf(omega.specular))
    total += float(m["shininess"].logpdf(omega.shininess))
    return total


def sample_prior(priors, rng):
    """One draw of ObjectParams from the prior."""
    m = priors.materials
    return ObjectParams(
        x=float(priors.x.sample(1, rng)[0]),
        y=float(priors.y.sample(1, rng)[0]),
        theta=float(priors.theta.sample(1, rng)[0]),
        scale=priors.scale.sample(3, rng),
        color=np.array(
            [
                m["color_r"].sample(1, rng)[0],
                m["color_g"].sample(1, rng)[0],
                m["color_b"].sample(1, rng)[0],
            ]
        ),
        ambient=float(m["ambient"].sample(1, rng)[0]),
        diffuse=float(m["diffuse"].sample(1, rng)[0]),
        specular=float(m["specular"].sample(1, rng)[0]),
        shininess=float(m["shininess"].sample(1, rng)[0]),
        kappa=priors.kappa.sample(1, rng)[0],
    )


def sample_prior_predictive(n, seed, priors, globals_scene):
    """n prior draws with their renders; deterministic per seed."""
    rng = np.random.default_rng(seed)
    renderer = ObjectRenderer(globals_scene)
    out = []
    for _ in range(n):
        omega = sample_prior(priors, rng)
        out.append((omega, renderer.render_instance(omega.to_instance())))
    return out


class TargetDensity:
    """Unnormalized log posterior of one object given one observation.

    Combines the prior with the color likelihood, plus the feature
    likelihood when the config mode is "np3". Rendering reuses a cached
    background; shadows stay off during inference.
    """

    def __init__(
        self,
        priors,
        globals_scene,
        observation,
        config=None,
        extractor=None,
        selection=None,
    ):
        config = config or LikelihoodConfig()
        config.validate()
        if config.mode == "np3" and (extractor is None or selection is None):
            raise ValueError("np3 mode needs an extractor and a channel selection")
        scene = globals_scene.copy()
        scene.shadows_enabled = False
        obs = np.asarray(observation, dtype=np.float64)
        if obs.shape != (scene.camera.height, scene.camera.width, 3):
            raise ValueError(
                "observation shape does not match the scene camera resolution"
            )
        self.priors = priors
        self.globals_scene = scene
        self.observation = obs
        self.config = config
        self.extractor = extractor
        self.selection = selection
        self._renderer = ObjectRenderer(scene)

    def render(self, omega):
        return self._renderer.render_instance(omega.to_instance())

    def log_target(self, omega):
        lp = log_prior(omega, self.priors)
        if lp == -np.inf:
            return -np.inf
        image = self.render(omega)
        total = lp + color_loglik(image, self.observation, self.config.sigma_image)
        if self.config.mode == "np3":
            total += neural_loglik(
                image,
                self.observation,
                self.extractor,
                self.selection,
                self.config.neural_scale,
            )
        return float(total)


class BijectedTarget:
    """The target density reparametrized to a 15-dim unconstrained space."""

    def __init__(self, target):
        self.target = target
        p = target.priors
        self.bij_x = Affine(omega=1.0 / p.x.scale, phi=-p.x.loc / p.x.scale)
        self.bij_y = Affine(omega=1.0 / p.y.scale, phi=-p.y.loc / p.y.scale)
        self.bij_theta = BoundedSigmoid(low=-np.pi, high=np.pi)
        self.bij_scale = LogAffine(
            omega=1.0 / p.scale.scale, phi=-p.scale.loc / p.scale.scale
        )
        self.bij_materials = {
            name: Affine(omega=1.0 / g.std(), phi=-g.mean() / g.std())
            for name, g in p.materials.items()
        }
        self.bij_kappa = SimplexBijector(k=3)
        self.dim = UNCONSTRAINED_DIM

    def unconstrain(self, omega):
        m = self.bij_materials
        return np.concatenate(
            [
                [self.bij_x.to_unconstrained(omega.x)],
                [self.bij_y.to_unconstrained(omega.y)],
                [self.bij_theta.to_unconstrained(omega.theta)],
                self.bij_scale.to_unconstrained(np.asarray(omega.scale)),
                [m["color_r"].to_unconstrained(omega.color[0])],
                [m["color_g"].to_unconstrained(omega.color[1])],
                [m["color_b"].to_unconstrained(omega.color[2])],
                [m["ambient"].to_unconstrained(omega.ambient)],
                [m["diffuse"].to_unconstrained(omega.diffuse)],
                [m["specular"].to_unconstrained(omega.specular)],
                [m["shininess"].to_unconstrained(omega.shininess)],
                self.bij_kappa.to_unconstrained(np.asarray(omega.kappa)),
            ]
        )

    def constrain(self, u):
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} coordinates")
        m = self.bij_materials
        return ObjectParams(
            x=float(self.bij_x.to_constrained(u[0])),
            y=float(self.bij_y.to_constrained(u[1])),
            theta=float(self.bij_theta.to_constrained(u[2])),
            scale=self.bij_scale.to_constrained(u[3:6]),
            color=np.array(
                [
                    m["color_r"].to_constrained(u[6]),
                    m["color_g"].to_constrained(u[7]),
                    m["color_b"].to_constrained(u[8]),
                ]
            ),
            ambient=float(m["ambient"].to_constrained(u[9])),
            diffuse=float(m["diffuse"].to_constrained(u[10])),
            specular=float(m["specular"].to_constrained(u[11])),
            shininess=float(m["shininess"].to_constrained(u[12])),
            kappa=self.bij_kappa.to_constrained(u[13:15]),
        )

    def log_det(self, omega):
        """log |det du/dc| evaluated at the constrained point."""
        m = self.bij_materials
        total = float(self.bij_x.log_det_jacobian(omega.x))
        total += float(self.bij_y.log_det_jacobian(omega.y))
        total += float(self.bij_theta.log_det_jacobian(omega.theta))
        total += float(
            np.sum(self.bij_scale.log_det_jacobian(np.asarray(omega.scale)))
        )
        total += float(m["color_r"].log_det_jacobian(omega.color[0]))
        total += float(m["color_g"].log_det_jacobian(omega.color[1]))
        total += float(m["color_b"].log_det_jacobian(omega.color[2]))
        total += float(m["ambient"].log_det_jacobian(omega.ambient))
        total += float(m["diffuse"].log_det_jacobian(omega.diffuse))
        total += float(m["specular"].log_det_jacobian(omega.specular))
        total += float(m["shininess"].log_det_jacobian(omega.shininess))
        total += float(self.bij_kappa.log_det_jacobian(np.asarray(omega.kappa)))
        return total

    def log_prob(self, u):
        """log target density in unconstrained coordinates (change of
        variables: subtract the constrained->unconstrained log det)."""
        omega = self.constrain(u)
        lt = self.target.log_target(omega)
        if lt == -np.inf:
            return -np.inf
        return lt - self.log_det(omega)
