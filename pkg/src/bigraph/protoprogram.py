"""Prototypical programs: KDE summaries of object posteriors, with merge,
distance, classification, and concept-sampling operations.

A program keeps one kernel density estimate per non-pose dimension
(scales, color, material scalars, relaxed class coordinates). Planar
position and rotation are excluded: they describe where an object is,
not what it is.
"""

from __future__ import annotations

import json

import numpy as np

from .distributions import KDE1D, kl_divergence_kde
from .genmodel import DIM_NAMES, ObjectParams
from .raytracer import ObjectRenderer

# non-pose dimensions, in storage order
PSI_S_NAMES = DIM_NAMES[3:]
_POSE_OFFSET = 3

__all__ = [
    "PSI_S_NAMES",
    "ProtoProgram",
    "build_program",
    "merge",
    "distance",
    "distance_breakdown",
    "classify",
    "sample_concept",
    "save_program",
    "load_program",
]


class ProtoProgram:
    """Per-dimension KDEs over posterior samples of the non-pose variables."""

    def __init__(self, kdes, provenance=None):
        missing = [n for n in PSI_S_NAMES if n not in kdes]
        if missing:
            raise ValueError(f"missing dimensions: {missing}")
        self.kdes = {n: kdes[n] for n in PSI_S_NAMES}
        self.provenance = provenance or {}

    @property
    def n_samples(self):
        return self.kdes[PSI_S_NAMES[0]].samples.size

    def dim_mean(self, name):
        return float(self.kdes[name].samples.mean())


def build_program(samples, provenance=None, max_samples=None):
    """Program from posterior draws (pooled over chains, already
    burn-in-trimmed by the sampler).

    ``max_samples`` thins the pool by a deterministic even stride; KDE
    evaluation cost is linear in the sample count, so classification over
    many episodes uses a thinned summary.
    """
    pooled = samples.pooled()
    if pooled.shape[0] < 2:
        raise ValueError("need at least 2 posterior draws")
    if tuple(samples.names) != DIM_NAMES:
        raise ValueError("posterior dimensions do not match the object layout")
    if max_samples is not None and pooled.shape[0] > max_samples:
        idx = np.linspace(0, pooled.shape[0] - 1, max_samples).astype(int)
        pooled = pooled[idx]
    kdes = {
        name: KDE1D(pooled[:, _POSE_OFFSET + i])
        for i, name in enumerate(PSI_S_NAMES)
    }
    return ProtoProgram(kdes, provenance=provenance)


def merge(a, b):
    """Program over the concatenated samples of both inputs."""
    if set(a.kdes) != set(b.kdes):
        raise ValueError("programs cover different dimensions")
    kdes = {
        name: KDE1D(np.concatenate([a.kdes[name].samples, b.kdes[name].samples]))
        for name in PSI_S_NAMES
    }
    provenance = {
        "merged_from": [a.provenance, b.provenance],
        "shots": a.provenance.get("shots", 1) + b.provenance.get("shots", 1),
    }
    return ProtoProgram(kdes, provenance=provenance)


def distance(query, cls):
    """Sum over dimensions of KL(class-dim || query-dim). Asymmetric."""
    return float(sum(distance_breakdown(query, cls).values()))


def distance_breakdown(query, cls):
    if set(query.kdes) != set(cls.kdes):
        raise ValueError("programs cover different dimensions")
    return {
        name: kl_divergence_kde(cls.kdes[name], query.kdes[name])
        for name in PSI_S_NAMES
    }


def classify(query, classes):
    """Softmax over negative program distances; sums to 1."""
    if not classes:
        raise ValueError("need at least one class program")
    d = np.array([distance(query, c) for c in classes])
    logits = -d
    logits -= logits.max()
    e = np.exp(logits)
    return e / e.sum()


def sample_concept(program, n, seed, globals_scene):
    """Draw n concept instances from the program's KDEs and render them.

    Pose is fixed at a canonical default (centered, unrotated); the class
    vector is re-projected onto the simplex after independent per-dim draws.
    """
    rng = np.random.default_rng(seed)
    renderer = ObjectRenderer(globals_scene)
    out = []
    for _ in range(n):
        vals = {name: float(program.kdes[name].sample(1, rng)[0]) for name in PSI_S_NAMES}
        kappa = np.array(
            [vals["class_sphere"], vals["class_cube"], vals["class_cylinder"]]
        )
        kappa = np.maximum(kappa, 1e-6)
        kappa = kappa / kappa.sum()
        scale = np.maximum(
            np.abs([vals["scale_x"], vals["scale_y"], vals["scale_z"]]), 1e-6
        )
        omega = ObjectParams(
            x=0.0,
            y=0.0,
            theta=0.0,
            scale=scale,
            color=np.array([vals["color_r"], vals["color_g"], vals["color_b"]]),
            ambient=vals["ambient"],
            diffuse=vals["diffuse"],
            specular=vals["specular"],
            shininess=vals["shininess"],
            kappa=kappa,
        )
        out.append((omega, renderer.render_instance(omega.to_instance())))
    return out


def save_program(program, path):
    doc = {
        "dimensions": {
            name: {
                "samples": program.kdes[name].samples.tolist(),
                "bandwidth": float(program.kdes[name].bandwidth),
            }
            for name in PSI_S_NAMES
        },
        "provenance": program.provenance,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_program(path):
    with open(path) as fh:
        doc = json.load(fh)
    kdes = {
        name: KDE1D(
            np.asarray(spec["samples"], dtype=np.float64),
            bandwidth=float(spec["bandwidth"]),
        )
        for name, spec in doc["dimensions"].items()
    }
    return ProtoProgram(kdes, provenance=doc.get("provenance"))
