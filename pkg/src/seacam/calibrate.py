"""Per-camera flat-port calibration from known underwater targets.

Intrinsics and pose are trusted; only the port normal (2 dof) and its
distance from the camera centre are fitted, by damped least squares on the
refractive reprojection error.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .optics import RefractiveInterface, refractive_project_many
from .rig import RIG_VERSION

log = logging.getLogger(__name__)

MIN_OBSERVATIONS = 6
SENTINEL_PX = 1e6
ANGLE_STEP = 1e-6
DISTANCE_STEP = 1e-6
LAMBDA0 = 1e-3
STEP_TOL = 1e-10
REL_DECREASE_TOL = 1e-12
MAX_ITER = 200
DEFAULT_INIT_DISTANCE = 0.05


class CalibrationError(ValueError):
    pass


@dataclass
class CalibObservation:
    camera_id: str
    target_points: np.ndarray
    observed_pixels: np.ndarray

    def __post_init__(self):
        self.target_points = np.asarray(self.target_points, dtype=np.float64).reshape(-1, 3)
        self.observed_pixels = np.asarray(self.observed_pixels, dtype=np.float64).reshape(-1, 2)
        if len(self.target_points) != len(self.observed_pixels):
            raise CalibrationError(f"{len(self.target_points)} targets but "
                                   f"{len(self.observed_pixels)} pixels")
        if len(self.target_points) < MIN_OBSERVATIONS:
            raise CalibrationError(f"need at least {MIN_OBSERVATIONS} observations, "
                                   f"got {len(self.target_points)}")

    def __len__(self):
        return len(self.target_points)

    def to_dict(self):
        return {"camera_id": self.camera_id,
                "observations": [{"X": X, "Y": Y, "Z": Z, "u": u, "v": v}
                                 for (X, Y, Z), (u, v) in zip(self.target_points.tolist(),
                                                              self.observed_pixels.tolist())]}

    @classmethod
    def from_dict(cls, d):
        obs = d.get("observations", [])
        return cls(d["camera_id"], [[o["X"], o["Y"], o["Z"]] for o in obs],
                   [[o["u"], o["v"]] for o in obs])

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class InterfaceEstimate:
    normal: np.ndarray
    distance: float
    rms_residual: float = float("nan")
    iterations: int = 0
    converged: bool = False
    history: list = field(default_factory=list)  # sum of squares after each accepted step

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        self.normal = n / np.linalg.norm(n)
        if not self.distance > 0:
            raise CalibrationError(f"interface distance must be positive, got {self.distance}")

    def to_patch(self, camera_id, eta):
        """Rig-config fragment carrying the fitted port for ``camera_id``."""
        return {
            "version": RIG_VERSION,
            "devices": [{"id": camera_id, "interface": {"normal": self.normal.tolist(),
                                                        "distance": float(self.distance),
                                                        "eta": float(eta)}}],
            "calibration": {"rms_residual_px": float(self.rms_residual),
                            "iterations": int(self.iterations), "converged": bool(self.converged)},
        }


def tangent_basis(normal):
    n = np.asarray(normal, dtype=np.float64)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = np.cross(n, helper)
    t1 /= np.linalg.norm(t1)
    return t1, np.cross(n, t1)


def rotate_normal(base, a, b):
    """Tilt ``base`` by angles (a, b) radians along its tangent basis (exponential map)."""
    t1, t2 = tangent_basis(base)
    v = a * t1 + b * t2
    theta = np.hypot(a, b)
    if theta == 0:
        return np.asarray(base, dtype=np.float64).copy()
    n = np.cos(theta) * base + np.sin(theta) * v / theta
    return n / np.linalg.norm(n)


def residuals(params, obs, rig, base_normal=None, return_flags=False):
    """Flattened (u, v) reprojection errors, 2N values, for ``params = (a, b, distance)``.

    (a, b) tilt ``base_normal`` (default: the rig's current port normal for
    the camera). Points that fail to project get ``SENTINEL_PX`` in both
    slots; ``return_flags`` also returns that per-point failure mask.
    """
    if len(obs) < MIN_OBSERVATIONS:
        raise CalibrationError(f"need at least {MIN_OBSERVATIONS} observations")
    cam = rig.camera(obs.camera_id)
    base = cam.interface.normal if base_normal is None else np.asarray(base_normal, dtype=np.float64)
    a, b, dist = (float(p) for p in params)
    if not dist > 0:
        res = np.full(2 * len(obs), SENTINEL_PX)
        return (res, np.ones(len(obs), bool)) if return_flags else res
    iface = RefractiveInterface(rotate_normal(base, a, b), dist, cam.interface.eta)
    pix, ok, _ = refractive_project_many(obs.target_points, cam.intrinsics, cam.pose, iface)
    res = pix - obs.observed_pixels
    res[~ok] = SENTINEL_PX
    res = res.ravel()
    return (res, ~ok) if return_flags else res


def jacobian(fun, x, steps, central=True):
    """Finite-difference Jacobian of ``fun`` at ``x`` with per-parameter ``steps``."""
    x = np.asarray(x, dtype=np.float64)
    f0 = None if central else fun(x)
    cols = []
    for i, h in enumerate(steps):
        e = np.zeros_like(x)
        e[i] = h
        if central:
            cols.append((fun(x + e) - fun(x - e)) / (2 * h))
        else:
            cols.append((fun(x + e) - f0) / h)
    return np.column_stack(cols)


def check_geometry(points):
    """Raise if the targets are (nearly) collinear."""
    centered = points - points.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s[0] == 0 or s[1] < 1e-9 * s[0]:
        raise CalibrationError("degenerate calibration geometry: targets are collinear")


def default_init(rig, camera_id):
    return InterfaceEstimate(np.array([0.0, 0.0, 1.0]), DEFAULT_INIT_DISTANCE)


def estimate_interface(obs, rig, init=None, max_iter=MAX_ITER):
    """Fit the port normal and distance for ``obs.camera_id``.

    Levenberg-style damping on the normal equations (lambda starts at 1e-3,
    x10 on a rejected step, /10 on an accepted one), central-difference
    Jacobian, and the tangent plane re-centred on the normal after every
    accepted step. Returns the best estimate seen; ``converged`` is False if
    the iteration budget ran out first.
    """
    cam = rig.camera(obs.camera_id)
    check_geometry(obs.target_points)
    if init is None:
        init = default_init(rig, obs.camera_id)
    if not init.distance > 0:
        raise CalibrationError("initial distance must be positive")
    base = np.asarray(init.normal, dtype=np.float64)
    base = base / np.linalg.norm(base)
    dist = float(init.distance)
    steps = (ANGLE_STEP, ANGLE_STEP, DISTANCE_STEP)

    def fun_at(base_normal):
        return lambda p: residuals(p, obs, rig, base_normal)

    r = fun_at(base)(np.array([0.0, 0.0, dist]))
    cost = float(r @ r)
    history = [cost]
    lam = LAMBDA0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        fun = fun_at(base)
        x = np.array([0.0, 0.0, dist])
        J = jacobian(fun, x, steps)
        A = J.T @ J
        g = J.T @ r
        delta = np.linalg.solve(A + lam * np.eye(3), -g)
        if np.linalg.norm(delta) < STEP_TOL:
            converged = True
            break
        x_new = x + delta
        r_new = fun(x_new)
        cost_new = float(r_new @ r_new)
        if x_new[2] > 0 and cost_new < cost:
            rel = (cost - cost_new) / cost
            base = rotate_normal(base, x_new[0], x_new[1])
            dist = float(x_new[2])
            r, cost = r_new, cost_new
            history.append(cost)
            lam = max(lam / 10.0, 1e-12)
            log.debug("iter %d accepted cost=%.6g lambda=%.1e", it, cost, lam)
            if rel < REL_DECREASE_TOL or cost == 0.0:
                converged = True
                break
        else:
            lam *= 10.0
            if lam > 1e16:
                break
    rms = float(np.sqrt(cost / len(obs)))
    est = InterfaceEstimate(base, dist, rms, it, converged, history)
    if not converged:
        log.warning("interface fit for %s stopped after %d iterations (rms %.3g px)",
                    cam.id, it, rms)
    return est
