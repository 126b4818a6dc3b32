"""Refraction-aware triangulation of decoded correspondences into point clouds."""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .graycode import CorrespondenceMap
from .rig import RigError

DEFAULT_MAX_GAP = 0.002
PARALLEL_EPS = 1e-12


class ParallelRaysError(ValueError):
    pass


@dataclass
class PointCloud:
    """Triangulated points in world coordinates.

    ``pixels_a``/``pixels_b`` hold the (x, y) source pixel in each of the two
    devices named in ``devices``.
    """
    positions: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    gaps: np.ndarray = field(default_factory=lambda: np.empty(0))
    devices: tuple = ("", "")
    pixels_a: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    pixels_b: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))

    def __len__(self):
        return len(self.positions)


@dataclass
class TriangulationReport:
    total: int = 0
    triangulated: int = 0
    rejected_by_gap: int = 0
    rejected_invalid: int = 0
    rms_gap: float = 0.0
    coverage: float = 0.0

    def to_dict(self):
        return asdict(self)


def triangulate_many(oa, da, ob, db):
    """Midpoints and gaps for paired rays. Returns ``(points, gaps, ok)``; ``ok`` is
    False where the rays are (numerically) parallel."""
    oa, da, ob, db = (np.atleast_2d(np.asarray(v, dtype=np.float64)) for v in (oa, da, ob, db))
    w0 = oa - ob
    a = np.einsum("ij,ij->i", da, da)
    b = np.einsum("ij,ij->i", da, db)
    c = np.einsum("ij,ij->i", db, db)
    d = np.einsum("ij,ij->i", da, w0)
    e = np.einsum("ij,ij->i", db, w0)
    denom = a * c - b * b
    ok = np.linalg.norm(np.cross(da, db), axis=1) > PARALLEL_EPS
    ok &= np.isfinite(denom)
    safe = np.where(ok, denom, 1.0)
    s = (b * e - c * d) / safe
    t = (a * e - b * d) / safe
    pa = oa + s[:, None] * da
    pb = ob + t[:, None] * db
    pts = 0.5 * (pa + pb)
    gaps = np.linalg.norm(pa - pb, axis=1)
    pts[~ok] = np.nan
    gaps[~ok] = np.nan
    return pts, gaps, ok


def triangulate_rays(a, b):
    """Closest point to two rays: midpoint of their common perpendicular, and its length."""
    pts, gaps, ok = triangulate_many(a.origin, a.direction, b.origin, b.direction)
    if not ok[0]:
        raise ParallelRaysError("rays are parallel")
    return pts[0], float(gaps[0])


def _check_map(cmap, device):
    if cmap.shape != (device.height, device.width):
        raise RigError(f"correspondence map is {cmap.shape[1]}x{cmap.shape[0]} but "
                       f"{device.id!r} is {device.width}x{device.height}")


def _triangulate_pairs(dev_a, pix_a, dev_b, pix_b, max_gap, total, coverage):
    report = TriangulationReport(total=total, coverage=coverage)
    if len(pix_a) == 0:
        return PointCloud(devices=(dev_a.id, dev_b.id)), report
    oa, da, ok_a = dev_a.underwater_rays(pix_a)
    ob, db, ok_b = dev_b.underwater_rays(pix_b)
    pts, gaps, ok = triangulate_many(oa, da, ob, db)
    ok &= ok_a & ok_b
    keep = ok & (gaps <= max_gap)
    report.rejected_invalid = int((~ok).sum())
    report.rejected_by_gap = int((ok & ~keep).sum())
    report.triangulated = int(keep.sum())
    if keep.any():
        report.rms_gap = float(np.sqrt(np.mean(gaps[keep] ** 2)))
    cloud = PointCloud(pts[keep], gaps[keep], (dev_a.id, dev_b.id), pix_a[keep], pix_b[keep])
    return cloud, report


def reconstruct_camera_projector(cmap, rig, camera_id, projector_id, max_gap=DEFAULT_MAX_GAP):
    """Triangulate each decoded camera pixel against the projector pixel it decoded to."""
    cam = rig.camera(camera_id)
    proj = rig.projector(projector_id)
    _check_map(cmap, cam)
    rows, cols = np.nonzero(cmap.decoded)
    px = cmap.proj_x[rows, cols]
    py = cmap.proj_y[rows, cols]
    if len(px) and (px.max() >= proj.width or py.max() >= proj.height):
        raise RigError(f"decoded coordinates exceed projector {projector_id!r} resolution")
    pix_cam = np.column_stack([cols, rows]).astype(np.float64)
    pix_proj = np.column_stack([px, py]).astype(np.float64)
    return _triangulate_pairs(cam, pix_cam, proj, pix_proj, max_gap, len(rows), cmap.coverage())


def _unique_codes(cmap):
    rows, cols = np.nonzero(cmap.decoded)
    codes = cmap.proj_x[rows, cols].astype(np.int64) | (cmap.proj_y[rows, cols].astype(np.int64) << 32)
    uniq, first, counts = np.unique(codes, return_index=True, return_counts=True)
    single = counts == 1
    return uniq[single], rows[first[single]], cols[first[single]]


def reconstruct_camera_camera(map_a, map_b, rig, max_gap=DEFAULT_MAX_GAP):
    """Match pixels of two cameras that decoded the same projector code, then triangulate.

    A code seen by more than one pixel of either camera is dropped.
    """
    if map_a.projector_id and map_b.projector_id and map_a.projector_id != map_b.projector_id:
        raise RigError("correspondence maps were decoded against different projectors")
    cam_a = rig.camera(map_a.camera_id)
    cam_b = rig.camera(map_b.camera_id)
    _check_map(map_a, cam_a)
    _check_map(map_b, cam_b)
    codes_a, rows_a, cols_a = _unique_codes(map_a)
    codes_b, rows_b, cols_b = _unique_codes(map_b)
    _, ia, ib = np.intersect1d(codes_a, codes_b, assume_unique=True, return_indices=True)
    # row-major order in camera A
    order = np.lexsort((cols_a[ia], rows_a[ia]))
    ia, ib = ia[order], ib[order]
    pix_a = np.column_stack([cols_a[ia], rows_a[ia]]).astype(np.float64)
    pix_b = np.column_stack([cols_b[ib], rows_b[ib]]).astype(np.float64)
    coverage = float(len(ia)) / map_a.proj_x.size if map_a.proj_x.size else 0.0
    return _triangulate_pairs(cam_a, pix_a, cam_b, pix_b, max_gap, len(ia), coverage)


def export_ply(cloud, path):
    """Write an ASCII PLY with float x, y, z, gap per vertex (9 significant digits)."""
    pos = np.asarray(cloud.positions, dtype=np.float32).reshape(-1, 3)
    gap = np.asarray(cloud.gaps, dtype=np.float32).reshape(-1)
    lines = [
        "ply",
        "format ascii 1.0",
        "comment seacam point cloud",
        f"element vertex {len(pos)}",
        "property float x",
        "property float y",
        "property float z",
        "property float gap",
        "end_header",
    ]
    lines.extend(f"{x:.9g} {y:.9g} {z:.9g} {g:.9g}" for (x, y, z), g in zip(pos.tolist(), gap.tolist()))
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def read_ply(path):
    """Read an ASCII PLY written by :func:`export_ply`. Returns an (N, 4) float32 array."""
    with open(path) as fh:
        if fh.readline().strip() != "ply":
            raise ValueError(f"{path}: not a PLY file")
        count = None
        props = []
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "format" and parts[1] != "ascii":
                raise ValueError(f"{path}: only ASCII PLY supported")
            if parts[:2] == ["element", "vertex"]:
                count = int(parts[2])
            elif parts[0] == "property":
                props.append(parts[-1])
            elif parts[0] == "end_header":
                break
        if count is None:
            raise ValueError(f"{path}: no vertex element")
        rows = [fh.readline().split() for _ in range(count)]
    data = np.array(rows, dtype=np.float32).reshape(count, len(props))
    return data


def save_report(report, path):
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def load_map(path):
    return CorrespondenceMap.load(path)
