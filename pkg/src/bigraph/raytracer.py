"""Differentiable ray tracer for primitive shapes on a textured floor.

The render path is written against :mod:`bigraph.autodiff` helpers, so a
scene whose leaf fields are tape ``Var``s produces a differentiable image
while a plain-numpy scene renders with identical primal values. Binary
decisions (hit/miss, nearest surface, shadow occlusion) are evaluated on
primal values and treated as locally constant.

``ObjectRenderer`` is the fast forward-only path used inside MCMC: the
background (floor + lights, no object) is rendered once and cached, and
each candidate object only shades the pixels it covers.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .scene import Scene, ShapeClass

_MISS_T = 1e30
_EPS = 1e-12


def _val(x):
    return ad.value_of(x)


# ---------------------------------------------------------------------------
# camera rays


def camera_rays(camera):
    """Unit ray directions through every pixel center, row-major.

    Returns (origin (3,), dirs (N, 3) as component tuple) in plain numpy;
    the camera is not a differentiable parameter.
    """
    pos = np.asarray(camera.position, dtype=np.float64)
    fwd = np.asarray(camera.look_at, dtype=np.float64) - pos
    fwd = fwd / np.linalg.norm(fwd)
    up = np.asarray(camera.up, dtype=np.float64)
    right = np.cross(fwd, up)
    right = right / np.linalg.norm(right)
    true_up = np.cross(right, fwd)

    w, h = camera.width, camera.height
    half_h = np.tan(np.deg2rad(camera.vertical_fov_deg) / 2.0)
    half_w = half_h * w / h
    xs = (2.0 * (np.arange(w) + 0.5) / w - 1.0) * half_w
    ys = (1.0 - 2.0 * (np.arange(h) + 0.5) / h) * half_h
    px, py = np.meshgrid(xs, ys)  # row 0 is the top of the image
    dirs = (
        fwd[None, :]
        + px.reshape(-1, 1) * right[None, :]
        + py.reshape(-1, 1) * true_up[None, :]
    )
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    return pos, (dirs[:, 0], dirs[:, 1], dirs[:, 2])


# ---------------------------------------------------------------------------
# object-space transform


def _to_object_space(obj, origin, d):
    """Transform a world ray into the canonical frame of ``obj``.

    Parameter t is preserved: the world point origin + t*dir corresponds to
    the object point p + t*q (with q unnormalized).
    """
    tr = obj.translation
    th = obj.z_rotation
    s = obj.scale
    c, si = ad.cos(th), ad.sin(th)
    ox = origin[0] - tr[0]
    oy = origin[1] - tr[1]
    oz = origin[2] - tr[2]
    # inverse rotation about z
    px = c * ox + si * oy
    py = -si * ox + c * oy
    pz = oz
    qx = c * d[0] + si * d[1]
    qy = -si * d[0] + c * d[1]
    qz = d[2]
    p = (px / s[0], py / s[1], pz / s[2])
    q = (qx / s[0], qy / s[1], qz / s[2])
    return p, q, (c, si)


def _normal_to_world(n_obj, rot, s):
    """Outward unit world normal from an object-space normal."""
    c, si = rot
    nx = n_obj[0] / s[0]
    ny = n_obj[1] / s[1]
    nz = n_obj[2] / s[2]
    wx = c * nx - si * ny
    wy = si * nx + c * ny
    wz = nz
    norm = ad.sqrt(wx * wx + wy * wy + wz * wz + _EPS)
    return (wx / norm, wy / norm, wz / norm)


def _safe_div(num, den):
    den = ad.where(np.abs(_val(den)) < _EPS, ad.where(_val(den) >= 0, den + _EPS, den - _EPS), den)
    return num / den


# ---------------------------------------------------------------------------
# canonical intersections (p: origin, q: direction, both object space)


def _intersect_sphere_canonical(p, q):
    a = q[0] * q[0] + q[1] * q[1] + q[2] * q[2]
    b = p[0] * q[0] + p[1] * q[1] + p[2] * q[2]
    cc = p[0] * p[0] + p[1] * p[1] + p[2] * p[2] - 1.0
    disc = b * b - a * cc
    hit = _val(disc) > 0.0
    root = ad.sqrt(ad.where(hit, disc, 1.0))
    t_near = (-b - root) / a
    t_far = (-b + root) / a
    t = ad.where(_val(t_near) > 1e-9, t_near, t_far)
    hit = hit & (_val(t) > 1e-9)
    nx = p[0] + t * q[0]
    ny = p[1] + t * q[1]
    nz = p[2] + t * q[2]
    return hit, t, (nx, ny, nz)


def _intersect_cube_canonical(p, q):
    t_near = None
    t_far = None
    axis_t = []
    for i in range(3):
        inv = _safe_div(1.0, q[i])
        t1 = (-1.0 - p[i]) * inv
        t2 = (1.0 - p[i]) * inv
        lo = ad.minimum(t1, t2)
        hi = ad.maximum(t1, t2)
        axis_t.append(lo)
        t_near = lo if t_near is None else ad.maximum(t_near, lo)
        t_far = hi if t_far is None else ad.minimum(t_far, hi)
    hit = (_val(t_near) <= _val(t_far)) & (_val(t_far) > 1e-9)
    t = ad.where(_val(t_near) > 1e-9, t_near, t_far)
    hit = hit & (_val(t) > 1e-9)
    # entry face: axis whose slab entry realizes t_near (primal decision);
    # the object-space normal of a cube face is constant.
    tn = _val(t)
    face_axis = np.argmin(
        np.stack([np.abs(_val(a) - tn) for a in axis_t], axis=0), axis=0
    )
    normal = []
    for i in range(3):
        coord = _val(p[i]) + tn * _val(q[i])
        normal.append(np.where(face_axis == i, np.sign(coord), 0.0))
    return hit, t, tuple(normal)


def _intersect_cylinder_canonical(p, q):
    # lateral surface
    a = q[0] * q[0] + q[1] * q[1]
    b = p[0] * q[0] + p[1] * q[1]
    cc = p[0] * p[0] + p[1] * p[1] - 1.0
    disc = b * b - a * cc
    lat_ok = (_val(disc) > 0.0) & (_val(a) > _EPS)
    root = ad.sqrt(ad.where(lat_ok, disc, 1.0))
    a_safe = ad.where(_val(a) > _EPS, a, 1.0)
    t1 = (-b - root) / a_safe
    t2 = (-b + root) / a_safe
    z1 = p[2] + t1 * q[2]
    z2 = p[2] + t2 * q[2]
    ok1 = lat_ok & (_val(t1) > 1e-9) & (np.abs(_val(z1)) <= 1.0)
    ok2 = lat_ok & (_val(t2) > 1e-9) & (np.abs(_val(z2)) <= 1.0)
    t_lat = ad.where(ok1, t1, t2)
    lat_hit = ok1 | ok2

    # caps at z = +-1
    qz_safe = ad.where(np.abs(_val(q[2])) < _EPS, 1.0, q[2])
    shape = np.shape(_val(p[0]) + _val(q[0]))
    cap_hit = np.zeros(shape, dtype=bool)
    t_cap = np.full(shape, _MISS_T)
    cap_sign = np.zeros(shape)
    for zcap in (1.0, -1.0):
        tc = (zcap - p[2]) / qz_safe
        xc = p[0] + tc * q[0]
        yc = p[1] + tc * q[1]
        ok = (
            (np.abs(_val(q[2])) >= _EPS)
            & (_val(tc) > 1e-9)
            & (_val(xc) ** 2 + _val(yc) ** 2 <= 1.0)
        )
        better = ok & (_val(tc) < _val(t_cap))
        t_cap = ad.where(better, tc, t_cap)
        cap_sign = np.where(better, zcap, cap_sign)
        cap_hit = cap_hit | ok

    t_lat_eff = ad.where(lat_hit, t_lat, _MISS_T)
    use_lat = lat_hit & (_val(t_lat_eff) <= _val(t_cap))
    hit = lat_hit | cap_hit
    t = ad.where(use_lat, t_lat_eff, t_cap)
    nx = ad.where(use_lat, p[0] + t * q[0], 0.0)
    ny = ad.where(use_lat, p[1] + t * q[1], 0.0)
    nz = ad.where(use_lat, 0.0 * t, cap_sign)
    return hit, t, (nx, ny, nz)


_CANONICAL = {
    ShapeClass.SPHERE: _intersect_sphere_canonical,
    ShapeClass.CUBE: _intersect_cube_canonical,
    ShapeClass.CYLINDER: _intersect_cylinder_canonical,
}


def intersect(origin, direction, obj):
    """Nearest positive-t world-space intersection with one object.

    ``origin``: component triple (scalars or (N,) arrays); ``direction``:
    component triple of unit world directions. Returns (hit mask, t,
    world normal components). Misses carry t = 1e30.
    """
    p, q, rot = _to_object_space(obj, origin, direction)
    hit, t, n_obj = _CANONICAL[obj.shape](p, q)
    t = ad.where(hit, t, _MISS_T)
    normal = _normal_to_world(n_obj, rot, obj.scale)
    return hit, t, normal


def intersect_ray(ray_origin, ray_direction, obj):
    """Scalar convenience wrapper: returns None or (t, point, normal)."""
    o = np.asarray(ray_origin, dtype=np.float64)
    d = np.asarray(ray_direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    hit, t, n = intersect(
        (o[0] * np.ones(1), o[1] * np.ones(1), o[2] * np.ones(1)),
        (d[0] * np.ones(1), d[1] * np.ones(1), d[2] * np.ones(1)),
        obj,
    )
    if not bool(hit[0]):
        return None
    t0 = float(_val(t)[0])
    point = o + t0 * d
    normal = np.array([float(_val(c)[0]) for c in n])
    return t0, point, normal


# ---------------------------------------------------------------------------
# shading


def _shadow_factors(point, lights, objects, skip=None):
    """Binary visibility of each light from ``point`` (primal only)."""
    px, py, pz = (_val(point[0]), _val(point[1]), _val(point[2]))
    factors = []
    for light in lights:
        lp = np.asarray(_val(light.position), dtype=np.float64)
        dx, dy, dz = lp[0] - px, lp[1] - py, lp[2] - pz
        dist = np.sqrt(dx * dx + dy * dy + dz * dz)
        dx, dy, dz = dx / dist, dy / dist, dz / dist
        visible = np.ones_like(px)
        for obj in objects:
            plain = _PlainObject(obj)
            hit, t, _ = intersect(
                (px + 1e-5 * dx, py + 1e-5 * dy, pz + 1e-5 * dz),
                (dx, dy, dz),
                plain,
            )
            blocked = hit & (_val(t) < dist)
            visible = np.where(blocked, 0.0, visible)
        factors.append(visible)
    return factors


class _PlainObject:
    """Primal-value view of an object (for shadow rays)."""

    def __init__(self, obj):
        self.shape = obj.shape
        self.translation = np.asarray(_val(obj.translation), dtype=np.float64) if not isinstance(obj.translation, tuple) else tuple(_val(c) for c in obj.translation)
        self.z_rotation = _val(obj.z_rotation)
        self.scale = np.asarray(_val(obj.scale), dtype=np.float64) if not isinstance(obj.scale, tuple) else tuple(_val(c) for c in obj.scale)


def shade_phong(point, normal, material, lights, view_dir, ambient_light, shadow_factors=None):
    """Phong shading at hit points.

    rgb = k_a * c * ambient + sum_k shadow_k * (k_d * max(N.L, 0) * c
          + k_s * max(R.V, 0)^alpha) * l_k, per channel, unclamped.
    """
    c = material.color
    k_a, k_d, k_s, alpha = (
        material.ambient,
        material.diffuse,
        material.specular,
        material.shininess,
    )
    ones = np.ones(np.shape(_val(point[0])))
    rgb = [ones * (k_a * c[i] * ambient_light[i]) for i in range(3)]
    for k, light in enumerate(lights):
        lx = light.position[0] - point[0]
        ly = light.position[1] - point[1]
        lz = light.position[2] - point[2]
        norm = ad.sqrt(lx * lx + ly * ly + lz * lz + _EPS)
        lx, ly, lz = lx / norm, ly / norm, lz / norm
        ndl = normal[0] * lx + normal[1] * ly + normal[2] * lz
        diffuse = ad.maximum(ndl, 0.0)
        rx = 2.0 * ndl * normal[0] - lx
        ry = 2.0 * ndl * normal[1] - ly
        rz = 2.0 * ndl * normal[2] - lz
        rdv = rx * view_dir[0] + ry * view_dir[1] + rz * view_dir[2]
        # r^alpha via exp(alpha log r) so that shininess is differentiable;
        # the r <= 0 branch is exactly 0
        base = ad.maximum(rdv, 1e-12)
        specular = ad.where(
            np.asarray(_val(rdv)) > 0.0,
            ad.exp(alpha * ad.log(base)),
            np.zeros(np.shape(_val(rdv))),
        )
        shadow = 1.0 if shadow_factors is None else shadow_factors[k]
        for i in range(3):
            rgb[i] = rgb[i] + shadow * (
                k_d * diffuse * c[i] + k_s * specular
            ) * light.intensity[i]
    return tuple(rgb)


def _floor_texture(floor, x, y):
    """Bilinear clamp-to-edge lookup of the floor pattern at world (x, y).

    The uv coordinates depend only on constant camera rays, so only the
    pattern itself carries gradients here.
    """
    pattern = floor.pattern
    hp, wp = _val(pattern).shape[:2]
    extent = float(_val(floor.texture_extent))
    u = (np.asarray(_val(x)) / extent + 0.5) * (wp - 1)
    v = (np.asarray(_val(y)) / extent + 0.5) * (hp - 1)
    u = np.clip(u, 0.0, wp - 1.0)
    v = np.clip(v, 0.0, hp - 1.0)
    u0 = np.floor(u).astype(np.intp)
    v0 = np.floor(v).astype(np.intp)
    u1 = np.minimum(u0 + 1, wp - 1)
    v1 = np.minimum(v0 + 1, hp - 1)
    fu = u - u0
    fv = v - v0
    out = []
    for ch in range(3):
        p00 = ad.gather(pattern, (v0, u0, np.full_like(u0, ch)))
        p01 = ad.gather(pattern, (v0, u1, np.full_like(u0, ch)))
        p10 = ad.gather(pattern, (v1, u0, np.full_like(u0, ch)))
        p11 = ad.gather(pattern, (v1, u1, np.full_like(u0, ch)))
        top = p00 * (1.0 - fu) + p01 * fu
        bot = p10 * (1.0 - fu) + p11 * fu
        out.append(top * (1.0 - fv) + bot * fv)
    return tuple(out)


def _shade_floor(scene, point, shadow_factors):
    floor = scene.floor
    tex = _floor_texture(floor, point[0], point[1])
    base = tuple(floor.color[i] * tex[i] for i in range(3))
    rgb = [floor.ambient * base[i] * scene.ambient_light[i] for i in range(3)]
    for k, light in enumerate(scene.lights):
        lx = light.position[0] - point[0]
        ly = light.position[1] - point[1]
        lz = light.position[2] - point[2]
        norm = ad.sqrt(lx * lx + ly * ly + lz * lz + _EPS)
        ndl = ad.maximum(lz / norm, 0.0)  # floor normal is +z
        shadow = 1.0 if shadow_factors is None else shadow_factors[k]
        for i in range(3):
            rgb[i] = rgb[i] + shadow * floor.diffuse * ndl * base[i] * light.intensity[i]
    return tuple(rgb)


# ---------------------------------------------------------------------------
# full render


def _render_flat(scene, origin=None, dirs=None, pixel_mask=None):
    """Render to flat per-channel values; generic over Var/ndarray scenes.

    Returns (r, g, b) of shape (N,) plus the per-pixel surface id
    (-1 background, 0 floor, 1+i object i) computed on primal values.
    """
    if origin is None or dirs is None:
        origin, dirs = camera_rays(scene.camera)
    n = _val(dirs[0]).shape[0]
    o = (origin[0], origin[1], origin[2])

    # candidate surfaces: floor then objects; nearest-t selection is primal
    dz = _val(dirs[2])
    t_floor = np.where(dz < -1e-12, -(origin[2]) / np.where(dz < -1e-12, dz, -1.0), _MISS_T)
    t_floor = np.where(t_floor > 1e-9, t_floor, _MISS_T)

    hits = []
    for obj in scene.objects:
        hit, t, normal = intersect(o, dirs, obj)
        hits.append((hit, t, normal))

    t_all = np.stack(
        [t_floor] + [np.where(h, _val(t), _MISS_T) for h, t, _ in hits], axis=0
    )
    nearest = np.argmin(t_all, axis=0)
    t_min = np.min(t_all, axis=0)
    surface = np.where(t_min >= _MISS_T, -1, nearest)

    view = (-dirs[0], -dirs[1], -dirs[2])
    bg = scene.background
    rgb = [np.full(n, 0.0), np.full(n, 0.0), np.full(n, 0.0)]
    bg_mask = (surface == -1).astype(np.float64)
    for i in range(3):
        rgb[i] = rgb[i] + bg_mask * bg[i]

    # floor
    floor_mask = (surface == 0).astype(np.float64)
    if np.any(floor_mask):
        fx = origin[0] + t_floor * _val(dirs[0])
        fy = origin[1] + t_floor * _val(dirs[1])
        fz = np.zeros(n)
        sf = (
            _shadow_factors((fx, fy, fz), scene.lights, scene.objects)
            if scene.shadows_enabled
            else None
        )
        frgb = _shade_floor(scene, (fx, fy, fz), sf)
        for i in range(3):
            rgb[i] = rgb[i] + floor_mask * frgb[i]

    for idx, (obj, (hit, t, normal)) in enumerate(zip(scene.objects, hits)):
        mask = (surface == idx + 1).astype(np.float64)
        if not np.any(mask):
            continue
        px = o[0] + t * dirs[0]
        py = o[1] + t * dirs[1]
        pz = o[2] + t * dirs[2]
        others = [x for j, x in enumerate(scene.objects)]
        sf = (
            _shadow_factors((px, py, pz), scene.lights, others)
            if scene.shadows_enabled
            else None
        )
        srgb = shade_phong(
            (px, py, pz), normal, obj.material, scene.lights, view,
            scene.ambient_light, sf,
        )
        for i in range(3):
            rgb[i] = rgb[i] + mask * srgb[i]

    rgb = [ad.clip(c, 0.0, 1.0) for c in rgb]
    return tuple(rgb), surface


def render(scene):
    """Deterministic H x W x 3 render in [0, 1] (plain numpy scenes)."""
    (r, g, b), _ = _render_flat(scene)
    h, w = scene.camera.height, scene.camera.width
    return np.stack(
        [np.asarray(_val(c)).reshape(h, w) for c in (r, g, b)], axis=-1
    )


def hit_mask(scene):
    """Per-pixel surface id: -1 background, 0 floor, i+1 for object i."""
    _, surface = _render_flat(scene)
    return surface.reshape(scene.camera.height, scene.camera.width)


def render_object(omega, globals_scene, shadows=False):
    """Render one object (argmax class of a soft kappa) on frozen globals."""
    instance = omega if not hasattr(omega, "to_instance") else omega.to_instance()
    instance.validate()
    scene = Scene(
        camera=globals_scene.camera,
        lights=globals_scene.lights,
        floor=globals_scene.floor,
        objects=[instance],
        shadows_enabled=shadows,
        background=globals_scene.background,
        ambient_light=globals_scene.ambient_light,
    )
    return render(scene)


# ---------------------------------------------------------------------------
# cached single-object renderer (MCMC hot path)


class ObjectRenderer:
    """Renders one object over a cached background; forward-only, no tape.

    Shadows are always off on this path.
    """

    def __init__(self, globals_scene):
        self.scene = Scene(
            camera=globals_scene.camera,
            lights=globals_scene.lights,
            floor=globals_scene.floor,
            objects=[],
            shadows_enabled=False,
            background=globals_scene.background,
            ambient_light=globals_scene.ambient_light,
        )
        self.origin, self.dirs = camera_rays(self.scene.camera)
        (r, g, b), surface = _render_flat(self.scene, self.origin, self.dirs)
        self._bg = np.stack([r, g, b], axis=-1)
        dz = self.dirs[2]
        tf = np.where(dz < -1e-12, -(self.origin[2]) / np.where(dz < -1e-12, dz, -1.0), _MISS_T)
        self._t_floor = np.where(tf > 1e-9, tf, _MISS_T)

    def render_instance(self, instance):
        o = self.origin
        hit, t, normal = intersect(o, self.dirs, instance)
        t = _val(t)
        mask = hit & (t < self._t_floor)
        out = self._bg.copy()
        idx = np.nonzero(mask)[0]
        if idx.size == 0:
            h, w = self.scene.camera.height, self.scene.camera.width
            return out.reshape(h, w, 3)
        ts = t[idx]
        d = tuple(c[idx] for c in self.dirs)
        point = tuple(o[i] + ts * d[i] for i in range(3))
        nrm = tuple(np.asarray(_val(c))[idx] for c in normal)
        view = tuple(-c for c in d)
        rgb = shade_phong(
            point, nrm, instance.material, self.scene.lights, view,
            self.scene.ambient_light, None,
        )
        for i in range(3):
            out[idx, i] = np.clip(rgb[i], 0.0, 1.0)
        h, w = self.scene.camera.height, self.scene.camera.width
        return out.reshape(h, w, 3)

    def render_omega(self, omega):
        return self.render_instance(omega.to_instance())
