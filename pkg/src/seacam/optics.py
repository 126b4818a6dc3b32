"""Pinhole devices behind a flat refractive port.

Conventions:

* ``Pose.rotation`` maps device coordinates to world; ``Pose.translation`` is
  the device centre in world coordinates.
* Pixel centres sit at integer coordinates; the device looks down +z.
* The port is the plane ``normal . x = distance`` in device coordinates, with
  ``normal`` pointing from the device into the water. Glass thickness is
  ignored (air and water meet directly at that plane).
* ``eta`` is n_air / n_water.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import _accel

DEFAULT_ETA = 1.0 / 1.33
R_MAX_ANGLE_DEG = 89.0
ROOT_TOL = 1e-12
ROOT_MAX_ITER = 128


class TotalInternalReflection(ValueError):
    pass


class GeometryError(ValueError):
    """Ray or point outside what the flat-port model can handle."""


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self):
        return np.array([[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy, "skew": self.skew}


@dataclass(frozen=True, eq=False)
class Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)

    def to_device(self, points):
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation

    def to_world(self, points):
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def compose(self, rotation, translation):
        """Pose after applying the world-space rigid motion x -> rotation @ x + translation."""
        rotation = np.asarray(rotation, dtype=np.float64)
        return Pose(rotation @ self.rotation, rotation @ self.translation + np.asarray(translation))

    def to_dict(self):
        return {"rotation": self.rotation.ravel().tolist(), "translation": self.translation.tolist()}


def look_at(center, target, up=(0.0, -1.0, 0.0)):
    """Pose of a device at ``center`` whose +z axis points at ``target``.

    ``up`` is the world direction that should appear as image-up (device -y).
    """
    center = np.asarray(center, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - center
    z /= np.linalg.norm(z)
    down = -np.asarray(up, dtype=np.float64)
    x = np.cross(down, z)
    if np.linalg.norm(x) < 1e-12:
        raise ValueError("up vector is parallel to the viewing direction")
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(np.column_stack([x, y, z]), center)


@dataclass(frozen=True, eq=False)
class RefractiveInterface:
    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    distance: float = 0.05
    eta: float = DEFAULT_ETA

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError(f"interface normal must be unit length, got |n|={np.linalg.norm(n)}")
        if not self.distance > 0:
            raise ValueError(f"interface distance must be positive, got {self.distance}")
        if not 0 < self.eta <= 1:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "distance", float(self.distance))
        object.__setattr__(self, "eta", float(self.eta))

    def to_dict(self):
        return {"normal": self.normal.tolist(), "distance": self.distance, "eta": self.eta}


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(d)
        if norm == 0:
            raise ValueError("ray direction must be nonzero")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))
        object.__setattr__(self, "direction", d / norm)

    def at(self, s):
        return self.origin + s * self.direction


def _normalize_rows(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


# -- pinhole -----------------------------------------------------------------

def pixels_to_directions(pixels, intrinsics):
    """Unit back-projection directions in device coordinates, shape (N, 3)."""
    p = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    k = intrinsics
    yn = (p[:, 1] - k.cy) / k.fy
    xn = (p[:, 0] - k.cx) / k.fx - k.skew * (p[:, 1] - k.cy) / (k.fx * k.fy)
    return _normalize_rows(np.column_stack([xn, yn, np.ones_like(xn)]))


def pixel_to_ray(pixel, intrinsics, pose):
    """In-air world ray from the device centre through ``pixel``."""
    d = pixels_to_directions(pixel, intrinsics)[0]
    return Ray(pose.translation.copy(), pose.rotation @ d)


def project_device(points_dev, intrinsics):
    """Pinhole projection of device-frame points, shape (N, 2)."""
    p = np.atleast_2d(np.asarray(points_dev, dtype=np.float64))
    x = p[:, 0] / p[:, 2]
    y = p[:, 1] / p[:, 2]
    k = intrinsics
    return np.column_stack([k.fx * x + k.skew * y + k.cx, k.fy * y + k.cy])


def project_point(point, intrinsics, pose):
    """In-air pinhole projection of a world point."""
    return project_device(pose.to_device(point), intrinsics)[0]


# -- refraction --------------------------------------------------------------

def refract_directions(d, n, eta):
    """Vector Snell's law on rows of ``d``.

    ``n`` is flipped per row onto the propagation side, so either orientation
    works. Rows that would totally internally reflect come back as NaN.
    """
    d = np.atleast_2d(np.asarray(d, dtype=np.float64))
    n = np.broadcast_to(np.asarray(n, dtype=np.float64), d.shape)
    cos_i = np.einsum("ij,ij->i", d, n)
    sign = np.where(cos_i < 0, -1.0, 1.0)
    n = n * sign[:, None]
    cos_i = cos_i * sign
    sin2_t = eta * eta * np.maximum(0.0, 1.0 - cos_i * cos_i)
    with np.errstate(invalid="ignore"):
        cos_t = np.sqrt(1.0 - sin2_t)
    t = eta * d + (cos_t - eta * cos_i)[:, None] * n
    t[sin2_t > 1.0] = np.nan
    return t


def refract_direction(d, n, eta):
    """Refract unit direction ``d`` at a surface with unit normal ``n``.

    Returns ``eta*d + (cos_t - eta*cos_i)*n`` with ``n`` oriented along the
    direction of travel, where ``sin_t = eta*sin_i``.
    """
    d = np.asarray(d, dtype=np.float64)
    cos_i = abs(float(np.dot(d, n)))
    if eta * eta * (1.0 - cos_i * cos_i) > 1.0:
        raise TotalInternalReflection(f"eta*sin(theta_i) > 1 for eta={eta}")
    return refract_directions(d, n, eta)[0]


def trace_rays(origins, directions, interface, pose):
    """Batch version of :func:`trace_through_interface`.

    Returns ``(origins, directions, ok)`` in world coordinates; rows with
    ``ok`` False (parallel to or facing away from the port) are NaN.
    """
    o = pose.to_device(np.atleast_2d(origins))
    d = np.atleast_2d(np.asarray(directions, dtype=np.float64)) @ pose.rotation
    n = interface.normal
    denom = d @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (interface.distance - o @ n) / denom
    ok = (denom > 1e-15) & (s >= 0)
    hit = o + np.where(ok, s, np.nan)[:, None] * d
    t = refract_directions(d, n, interface.eta)
    ok &= np.isfinite(t).all(axis=1)
    return pose.to_world(hit), t @ pose.rotation.T, ok


def trace_through_interface(ray, interface, pose):
    """Carry an in-air world ray through the port into the water."""
    o, d, ok = trace_rays(ray.origin, ray.direction, interface, pose)
    if not ok[0]:
        raise GeometryError("ray is parallel to or points away from the refractive interface")
    return Ray(o[0], d[0])


# -- refractive projection -------------------------------------------------------
#
# For a water-side point X (device frame) at height h = n.X - distance beyond
# the port and radial offset R from the port axis, the crossing lies at radial
# offset r in [0, R] solving
#     f(r) = eta * r / hypot(r, distance) - (R - r) / hypot(R - r, h) = 0,
# which is strictly increasing in r.

@_accel.njit
def _crossings_numba(points, normal, distance, eta, r_max, tol, max_iter, out, ok):
    n_pts = points.shape[0]
    d2 = distance * distance
    for i in range(n_pts):
        x0 = points[i, 0]
        x1 = points[i, 1]
        x2 = points[i, 2]
        a = normal[0] * x0 + normal[1] * x1 + normal[2] * x2
        h = a - distance
        if not (h > 0.0):
            ok[i] = False
            out[i, 0] = np.nan
            out[i, 1] = np.nan
            out[i, 2] = np.nan
            continue
        e0 = x0 - a * normal[0]
        e1 = x1 - a * normal[1]
        e2 = x2 - a * normal[2]
        big_r = np.sqrt(e0 * e0 + e1 * e1 + e2 * e2)
        if big_r == 0.0:
            ok[i] = True
            out[i, 0] = distance * normal[0]
            out[i, 1] = distance * normal[1]
            out[i, 2] = distance * normal[2]
            continue
        e0 /= big_r
        e1 /= big_r
        e2 /= big_r
        h2 = h * h
        lo = 0.0
        hi = big_r if big_r < r_max else r_max
        rem = big_r - hi
        f_hi = eta * hi / np.sqrt(hi * hi + d2) - rem / np.sqrt(rem * rem + h2)
        if f_hi < 0.0:
            ok[i] = False
            out[i, 0] = np.nan
            out[i, 1] = np.nan
            out[i, 2] = np.nan
            continue
        r = big_r * distance / (distance + h)
        if r > hi:
            r = 0.5 * (lo + hi)
        converged = False
        for _ in range(max_iter):
            rem = big_r - r
            sa = np.sqrt(r * r + d2)
            sb = np.sqrt(rem * rem + h2)
            f = eta * r / sa - rem / sb
            if f > 0.0:
                hi = r
            else:
                lo = r
            df = eta * d2 / (sa * sa * sa) + h2 / (sb * sb * sb)
            r_new = r - f / df
            # inclusive: a Newton step landing on the bracket edge is the root, not a failure
            if not (r_new >= lo and r_new <= hi):
                r_new = 0.5 * (lo + hi)
            step = abs(r_new - r)
            r = r_new
            if step < tol or hi - lo < tol:
                converged = True
                break
        ok[i] = converged
        out[i, 0] = distance * normal[0] + r * e0
        out[i, 1] = distance * normal[1] + r * e1
        out[i, 2] = distance * normal[2] + r * e2


def _crossings_numba_driver(points, normal, distance, eta):
    out = np.empty_like(points)
    ok = np.empty(points.shape[0], dtype=np.bool_)
    r_max = distance * math.tan(math.radians(R_MAX_ANGLE_DEG))
    _crossings_numba(points, normal, float(distance), float(eta), r_max, ROOT_TOL, ROOT_MAX_ITER,
                     out, ok)
    return out, ok


def _crossings_numpy(points, normal, distance, eta):
    d2 = distance * distance
    a = points @ normal
    h = a - distance
    radial = points - a[:, None] * normal
    big_r = np.linalg.norm(radial, axis=1)
    valid = h > 0
    on_axis = valid & (big_r == 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        e = radial / np.where(big_r > 0, big_r, 1.0)[:, None]
        h2 = h * h
        r_max = distance * math.tan(math.radians(R_MAX_ANGLE_DEG))
        lo = np.zeros_like(big_r)
        hi = np.minimum(big_r, r_max)
        rem = big_r - hi
        f_hi = eta * hi / np.sqrt(hi * hi + d2) - rem / np.sqrt(rem * rem + h2)
        valid &= ~on_axis & (f_hi >= 0)
        r = big_r * distance / (distance + h)
        r = np.where(r > hi, 0.5 * (lo + hi), r)
        active = valid.copy()
        done = np.zeros_like(valid)
        for _ in range(ROOT_MAX_ITER):
            if not active.any():
                break
            ra, lo_a, hi_a = r[active], lo[active], hi[active]
            ba, ha2 = big_r[active], h2[active]
            rem = ba - ra
            sa = np.sqrt(ra * ra + d2)
            sb = np.sqrt(rem * rem + ha2)
            f = eta * ra / sa - rem / sb
            pos = f > 0
            hi_a = np.where(pos, ra, hi_a)
            lo_a = np.where(pos, lo_a, ra)
            df = eta * d2 / sa ** 3 + ha2 / sb ** 3
            r_new = ra - f / df
            bad = ~((r_new >= lo_a) & (r_new <= hi_a))
            r_new = np.where(bad, 0.5 * (lo_a + hi_a), r_new)
            fin = (np.abs(r_new - ra) < ROOT_TOL) | (hi_a - lo_a < ROOT_TOL)
            idx = np.flatnonzero(active)
            r[idx], lo[idx], hi[idx] = r_new, lo_a, hi_a
            done[idx[fin]] = True
            active[idx[fin]] = False
    ok = (valid & done) | on_axis
    r = np.where(on_axis, 0.0, r)
    out = distance * normal + r[:, None] * e
    out[~ok] = np.nan
    return out, ok


def port_crossings(points_dev, interface, use_numba=None):
    """Where the refracted path from the device centre to each device-frame
    point crosses the port. Returns ``(crossings (N, 3), ok (N,))``."""
    pts = np.ascontiguousarray(np.atleast_2d(points_dev), dtype=np.float64)
    impl = _accel.pick(_crossings_numba_driver, _crossings_numpy, use_numba)
    return impl(pts, np.ascontiguousarray(interface.normal), interface.distance, interface.eta)


def refractive_project_many(points, intrinsics, pose, interface, use_numba=None):
    """Project underwater world points to pixels. Returns ``(pixels, ok, crossings_world)``."""
    cross, ok = port_crossings(pose.to_device(np.atleast_2d(points)), interface, use_numba)
    pix = np.full((cross.shape[0], 2), np.nan)
    if ok.any():
        pix[ok] = project_device(cross[ok], intrinsics)
    return pix, ok, pose.to_world(cross)


def refractive_project(point, intrinsics, pose, interface):
    """Pixel whose refracted ray passes through the underwater world ``point``."""
    pix, ok, _ = refractive_project_many(point, intrinsics, pose, interface)
    if not ok[0]:
        raise GeometryError(f"no refractive projection for point {np.asarray(point).tolist()}")
    return pix[0]
