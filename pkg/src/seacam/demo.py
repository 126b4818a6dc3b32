"""Ready-made rigs and scenes used by the tests, the benchmark and the CLI docs.

``python -m seacam.demo OUT_DIR`` writes ``ring_rig.json``, ``bench_rig.json``,
``mirror_rig.json``, ``plane.json``, ``bench_scene.json``, ``screen.json`` and
``observations.json`` (noisy calibration targets for ``cam0`` of the bench rig).
"""
import sys
from pathlib import Path

import numpy as np

from .calibrate import CalibObservation
from .optics import Intrinsics, RefractiveInterface, look_at
from .rig import CAMERA, PROJECTOR, Device, RigConfig
from .synth import Plane, Scene, Sphere, Triangle

PORT = RefractiveInterface(np.array([0.0, 0.0, 1.0]), 0.05)


def _centered(width, height, f):
    return Intrinsics(f, f, (width - 1) / 2.0, (height - 1) / 2.0)


def bench_rig(camera_res=(1280, 1024), projector_res=(1024, 768), baseline=0.45, distance=1.0,
              camera_f=1500.0, projector_f=1200.0):
    """One camera and one projector, ``baseline`` apart, both aimed at a point ``distance`` ahead."""
    target = np.array([0.0, 0.0, distance])
    cam = Device("cam0", CAMERA, tuple(camera_res), _centered(*camera_res, camera_f),
                 look_at([-baseline / 2, 0.0, 0.0], target), PORT)
    proj = Device("proj0", PROJECTOR, tuple(projector_res), _centered(*projector_res, projector_f),
                  look_at([baseline / 2, 0.0, 0.0], target), PORT)
    return RigConfig([cam, proj])


def mirror_rig(resolution=(1024, 768), baseline=0.3, distance=1.0, f=1200.0):
    """Camera and projector that are exact mirror images across the plane x = 0.

    Any point on that plane is seen by camera pixel (u, v) and lit by
    projector pixel (W - 1 - u, v), so integer decoding is exact there.
    """
    target = np.array([0.0, 0.0, distance])
    k = _centered(*resolution, f)
    cam = Device("cam0", CAMERA, tuple(resolution), k, look_at([-baseline / 2, 0.0, 0.0], target), PORT)
    proj = Device("proj0", PROJECTOR, tuple(resolution), k,
                  look_at([baseline / 2, 0.0, 0.0], target), PORT)
    return RigConfig([cam, proj])


def ring_rig(n_cameras=8, n_projectors=3, radius=0.6, height=0.5, camera_res=(640, 512),
             projector_res=(1024, 768)):
    """Cameras and projectors spread round a full circle, all looking at one point."""
    devices = []
    target = np.zeros(3)
    n = n_cameras + n_projectors
    cam_i = proj_i = 0
    # interleave projectors evenly among the cameras
    proj_slots = {round(k * n / n_projectors) for k in range(n_projectors)}
    for slot in range(n):
        ang = 2 * np.pi * slot / n
        center = np.array([radius * np.cos(ang), radius * np.sin(ang), -height])
        pose = look_at(center, target, up=(0.0, 0.0, 1.0))
        if slot in proj_slots and proj_i < n_projectors:
            devices.append(Device(f"proj{proj_i}", PROJECTOR, tuple(projector_res),
                                  _centered(*projector_res, 1100.0), pose, PORT))
            proj_i += 1
        else:
            devices.append(Device(f"cam{cam_i}", CAMERA, tuple(camera_res),
                                  _centered(*camera_res, 700.0), pose, PORT))
            cam_i += 1
    return RigConfig(devices)


def plane_scene(distance=1.0, tilt_deg=15.0):
    ang = np.radians(tilt_deg)
    return Scene([Plane([0.0, 0.0, distance], [np.sin(ang), 0.0, -np.cos(ang)])])


def bench_scene(distance=1.0):
    """Tilted back wall with a ball in front of it."""
    return Scene([Plane([0.0, 0.0, distance + 0.15], [0.2, 0.1, -1.0]),
                  Sphere([0.02, -0.01, distance], 0.12, 0.9)])


def screen_scene(distance=1.0, half_height=0.3, depth=0.4):
    """A two-sided rectangular screen on the symmetry plane of :func:`mirror_rig`."""
    y0, y1 = -half_height, half_height
    z0, z1 = distance - depth, distance + depth
    a, b, c, d = ([0.0, y0, z0], [0.0, y1, z0], [0.0, y1, z1], [0.0, y0, z1])
    return Scene([Triangle([a, b, c]), Triangle([a, c, d])])


def synthetic_observations(rig, camera_id="cam0", n=50, noise_px=0.0, depth=(0.4, 1.5), seed=0,
                           margin=20):
    """Targets seen through ``camera_id``'s port: random pixels traced out to random ranges.

    Returns a :class:`CalibObservation` whose pixels carry Gaussian noise of
    ``noise_px``.
    """
    cam = rig.camera(camera_id)
    rng = np.random.default_rng(seed)
    pix = rng.uniform([margin, margin], [cam.width - 1 - margin, cam.height - 1 - margin],
                      size=(n, 2))
    o, d, ok = cam.underwater_rays(pix)
    pts = o + rng.uniform(*depth, size=n)[:, None] * d
    observed = pix + rng.normal(0.0, noise_px, size=pix.shape) if noise_px > 0 else pix
    return CalibObservation(camera_id, pts[ok], observed[ok])


def write_all(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ring_rig().save(out / "ring_rig.json")
    bench_rig().save(out / "bench_rig.json")
    mirror_rig().save(out / "mirror_rig.json")
    plane_scene().save(out / "plane.json")
    bench_scene().save(out / "bench_scene.json")
    screen_scene().save(out / "screen.json")
    synthetic_observations(bench_rig(), noise_px=0.5).save(out / "observations.json")
    return out


if __name__ == "__main__":
    write_all(sys.argv[1] if len(sys.argv) > 1 else ".")
