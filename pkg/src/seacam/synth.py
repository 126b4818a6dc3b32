"""Synthetic scenes rendered through the refractive rig.

Shading is deliberately flat: a lit pixel reads
``BLACK_LEVEL + albedo * (WHITE_LEVEL - BLACK_LEVEL)`` and everything else
reads ``BLACK_LEVEL``. No inter-reflection, no attenuation, no cosine term.
"""
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .reconstruct import PointCloud
from .rig import RigError

WHITE_LEVEL = 220.0
BLACK_LEVEL = 30.0
HIT_EPS = 1e-9
SHADOW_EPS = 1e-7

GT_MAGIC = b"SCGT"
GT_VERSION = 1
GT_CHANNELS = 5  # x, y, z, proj_x, proj_y


class SceneError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Plane:
    point: np.ndarray
    normal: np.ndarray
    albedo: float = 1.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        if np.linalg.norm(n) == 0:
            raise SceneError("plane normal must be nonzero")
        object.__setattr__(self, "normal", n / np.linalg.norm(n))
        object.__setattr__(self, "point", np.asarray(self.point, dtype=np.float64))

    def intersect(self, o, d):
        denom = d @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((self.point - o) @ self.normal) / denom
        return np.where(np.abs(denom) > 1e-15, t, np.nan)

    def to_dict(self):
        return {"type": "plane", "point": self.point.tolist(), "normal": self.normal.tolist(),
                "albedo": self.albedo}


@dataclass(frozen=True, eq=False)
class Sphere:
    center: np.ndarray
    radius: float
    albedo: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise SceneError(f"sphere radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))

    def intersect(self, o, d):
        oc = o - self.center
        b = np.einsum("ij,ij->i", d, oc)
        c = np.einsum("ij,ij->i", oc, oc) - self.radius ** 2
        disc = b * b - c
        root = np.sqrt(np.where(disc >= 0, disc, np.nan))
        near = -b - root
        far = -b + root
        return np.where(near > HIT_EPS, near, far)

    def to_dict(self):
        return {"type": "sphere", "center": self.center.tolist(), "radius": self.radius,
                "albedo": self.albedo}


@dataclass(frozen=True, eq=False)
class Triangle:
    vertices: np.ndarray
    albedo: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(3, 3)
        if np.linalg.norm(np.cross(v[1] - v[0], v[2] - v[0])) < 1e-15:
            raise SceneError("degenerate triangle")
        object.__setattr__(self, "vertices", v)

    def intersect(self, o, d):
        # Moller-Trumbore
        v0, v1, v2 = self.vertices
        e1, e2 = v1 - v0, v2 - v0
        p = np.cross(d, e2)
        det = p @ e1
        ok = np.abs(det) > 1e-15
        inv = 1.0 / np.where(ok, det, 1.0)
        s = o - v0
        u = np.einsum("ij,ij->i", s, p) * inv
        q = np.cross(s, e1)
        v = np.einsum("ij,ij->i", d, q) * inv
        t = (q @ e2) * inv
        ok &= (u >= 0) & (v >= 0) & (u + v <= 1)
        return np.where(ok, t, np.nan)

    def to_dict(self):
        return {"type": "triangle", "vertices": self.vertices.tolist(), "albedo": self.albedo}


@dataclass
class Scene:
    primitives: list

    def __post_init__(self):
        if not self.primitives:
            raise SceneError("scene needs at least one primitive")
        for p in self.primitives:
            if not 0 <= p.albedo <= 1:
                raise SceneError(f"albedo must lie in [0, 1], got {p.albedo}")

    def intersect(self, origins, dirs, t_min=HIT_EPS):
        """Nearest hit along each ray: ``(t, primitive index)``; t is inf / index -1 on a miss."""
        best = np.full(len(origins), np.inf)
        idx = np.full(len(origins), -1, dtype=np.int64)
        for k, prim in enumerate(self.primitives):
            t = prim.intersect(origins, dirs)
            better = (t > t_min) & (t < best)
            best[better] = t[better]
            idx[better] = k
        return best, idx

    @property
    def albedos(self):
        return np.array([p.albedo for p in self.primitives], dtype=np.float64)

    def to_dict(self):
        return {"version": 1, "primitives": [p.to_dict() for p in self.primitives]}

    @classmethod
    def from_dict(cls, data):
        prims = []
        for p in data.get("primitives", []):
            kind = p.get("type")
            albedo = float(p.get("albedo", 1.0))
            if kind == "plane":
                prims.append(Plane(p["point"], p["normal"], albedo))
            elif kind == "sphere":
                prims.append(Sphere(p["center"], float(p["radius"]), albedo))
            elif kind == "triangle":
                prims.append(Triangle(p["vertices"], albedo))
            else:
                raise SceneError(f"unknown primitive type {kind!r}")
        return cls(prims)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


@dataclass
class RenderOutput:
    """Rendered stack plus ground truth for one camera/projector pair.

    ``hit_points`` is (H, W, 3) with NaN where the camera ray escapes;
    ``proj_map`` is (H, W, 2) integer projector (x, y), -1 where the pixel is
    not lit by the projector (miss, outside the frustum or shadowed).
    """
    stack: np.ndarray
    hit_points: np.ndarray
    proj_map: np.ndarray
    albedo: np.ndarray
    camera_id: str = "cam0"
    projector_id: str = "proj0"
    extras: dict = field(default_factory=dict)

    @property
    def hit_mask(self):
        return np.isfinite(self.hit_points[..., 0])

    @property
    def lit_mask(self):
        return self.proj_map[..., 0] >= 0


def camera_pixel_grid(width, height):
    """(x, y) pixel coordinates of every camera pixel in row-major order."""
    ys, xs = np.mgrid[0:height, 0:width]
    return np.column_stack([xs.ravel(), ys.ravel()]).astype(np.float64)


def trace_scene(scene, rig, camera_id, projector_id, use_numba=None):
    """Geometry pass: hit points, albedo and projector pixel for every camera pixel."""
    cam = rig.camera(camera_id)
    proj = rig.projector(projector_id)
    w, h = cam.width, cam.height
    o, d, ok = cam.underwater_rays(camera_pixel_grid(w, h))
    t, prim = scene.intersect(np.where(ok[:, None], o, 0.0), np.where(ok[:, None], d, 1.0))
    hit = ok & np.isfinite(t)
    points = np.full((w * h, 3), np.nan)
    points[hit] = o[hit] + t[hit, None] * d[hit]
    albedo = np.zeros(w * h)
    albedo[hit] = scene.albedos[prim[hit]]

    proj_idx = np.full((w * h, 2), -1, dtype=np.int64)
    if hit.any():
        hp = points[hit]
        pix, pok, cross = proj.project(hp, use_numba=use_numba)
        rounded = np.floor(np.where(pok[:, None], pix, -1.0) + 0.5)
        inside = pok & (rounded[:, 0] >= 0) & (rounded[:, 0] < proj.width) \
            & (rounded[:, 1] >= 0) & (rounded[:, 1] < proj.height)
        # projector-side occlusion: anything between the port and the hit point
        seg = hp - cross
        length = np.linalg.norm(seg, axis=1)
        safe = np.where(inside & (length > 0), length, 1.0)
        dirs = seg / safe[:, None]
        t_occ, _ = scene.intersect(np.where(inside[:, None], cross, 0.0),
                                   np.where(inside[:, None], dirs, 1.0))
        shadowed = inside & (t_occ < length - SHADOW_EPS)
        lit = inside & ~shadowed
        sub = np.full((len(hp), 2), -1, dtype=np.int64)
        sub[lit] = rounded[lit].astype(np.int64)
        proj_idx[hit] = sub
    return (points.reshape(h, w, 3), proj_idx.reshape(h, w, 2).astype(np.int32),
            albedo.reshape(h, w))


def shade(patterns, proj_map, albedo, noise_sigma=0.0, seed=0):
    """Intensity stack for the given projector map; one noise draw per frame, in order."""
    h, w = albedo.shape
    lit = proj_map[..., 0] >= 0
    px = np.where(lit, proj_map[..., 0], 0)
    py = np.where(lit, proj_map[..., 1], 0)
    gain = np.where(lit, albedo, 0.0) * (WHITE_LEVEL - BLACK_LEVEL)
    rng = np.random.default_rng(seed)
    stack = np.empty((len(patterns), h, w), dtype=np.uint8)
    for i, pat in enumerate(patterns):
        frame = BLACK_LEVEL + gain * pat.lit(px, py)
        if noise_sigma > 0:
            frame = frame + rng.normal(0.0, noise_sigma, size=frame.shape)
        stack[i] = np.clip(np.rint(frame), 0, 255).astype(np.uint8)
    return stack


def render(scene, rig, camera_id, projector_id, patterns, noise_sigma=0.0, seed=0, use_numba=None):
    """Render ``patterns`` as seen by ``camera_id`` while ``projector_id`` projects them."""
    if camera_id not in rig or projector_id not in rig:
        raise RigError(f"unknown device in pair ({camera_id!r}, {projector_id!r})")
    proj = rig.projector(projector_id)
    spec = patterns.spec
    if (spec.projector_width, spec.projector_height) != (proj.width, proj.height):
        raise RigError(f"pattern resolution {spec.projector_width}x{spec.projector_height} does not "
                       f"match projector {projector_id!r} ({proj.width}x{proj.height})")
    points, proj_map, albedo = trace_scene(scene, rig, camera_id, projector_id, use_numba)
    stack = shade(patterns, proj_map, albedo, noise_sigma, seed)
    return RenderOutput(stack, points, proj_map, albedo, camera_id, projector_id)


def ground_truth_cloud(output):
    """Every camera-ray hit as a zero-gap cloud, row-major by camera pixel."""
    mask = output.hit_mask
    rows, cols = np.nonzero(mask)
    pos = output.hit_points[rows, cols]
    pix = np.column_stack([cols, rows]).astype(np.float64)
    return PointCloud(pos, np.zeros(len(pos)), (output.camera_id, output.projector_id), pix,
                      np.full_like(pix, np.nan))


def write_ground_truth(path, output):
    """Binary ground truth: 20-byte header then float32 (H, W, 5) row-major.

    Header (little-endian): magic ``SCGT``, uint32 version, uint32 height,
    uint32 width, uint32 channels. Channels are hit x, y, z (NaN on a miss)
    and projector x, y (NaN where unlit).
    """
    h, w = output.albedo.shape
    data = np.empty((h, w, GT_CHANNELS), dtype="<f4")
    data[..., :3] = output.hit_points
    pm = output.proj_map.astype(np.float64)
    pm[output.proj_map < 0] = np.nan
    data[..., 3:] = pm
    with open(path, "wb") as fh:
        fh.write(GT_MAGIC + struct.pack("<IIII", GT_VERSION, h, w, GT_CHANNELS))
        fh.write(data.tobytes())


def read_ground_truth(path):
    raw = Path(path).read_bytes()
    if raw[:4] != GT_MAGIC:
        raise ValueError(f"{path}: bad ground-truth magic")
    version, h, w, c = struct.unpack("<IIII", raw[4:20])
    if version != GT_VERSION:
        raise ValueError(f"{path}: unsupported ground-truth version {version}")
    return np.frombuffer(raw[20:], dtype="<f4").reshape(h, w, c)
