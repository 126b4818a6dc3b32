"""Small rigs and renders shared by several test modules."""
import functools

import numpy as np

from seacam.demo import PORT, _centered, bench_rig, mirror_rig, screen_scene
from seacam.graycode import PatternSpec, decode_stack, generate_patterns
from seacam.optics import look_at
from seacam.rig import CAMERA, PROJECTOR, Device, RigConfig
from seacam.synth import Scene, Sphere, render


def small_bench():
    return bench_rig(camera_res=(320, 256), projector_res=(256, 192), camera_f=375.0,
                     projector_f=300.0)


def stereo_rig(cam_res=(640, 512), cam_f=750.0, proj_f=1200.0):
    target = np.array([0.0, 0.0, 1.0])
    return RigConfig([
        Device("cam0", CAMERA, cam_res, _centered(*cam_res, cam_f), look_at([-0.25, 0, 0], target), PORT),
        Device("cam1", CAMERA, cam_res, _centered(*cam_res, cam_f), look_at([0.25, 0, 0], target), PORT),
        Device("proj0", PROJECTOR, (1024, 768), _centered(1024, 768, proj_f),
               look_at([0.0, 0.05, 0.0], target), PORT),
    ])


SPHERE = Sphere([0.0, 0.0, 1.0], 0.15)


@functools.lru_cache(maxsize=None)
def mirror_render(resolution=(256, 192), f=300.0):
    rig = mirror_rig(resolution=resolution, f=f)
    seq = generate_patterns(PatternSpec(*resolution))
    out = render(screen_scene(), rig, "cam0", "proj0", seq)
    cmap = decode_stack(out.stack, seq.spec, camera_id="cam0", projector_id="proj0")
    return rig, out, cmap


@functools.lru_cache(maxsize=None)
def stereo_maps():
    rig = stereo_rig()
    seq = generate_patterns(PatternSpec(1024, 768))
    scene = Scene([SPHERE])
    maps = []
    for cam in ("cam0", "cam1"):
        out = render(scene, rig, cam, "proj0", seq)
        maps.append(decode_stack(out.stack, seq.spec, camera_id=cam, projector_id="proj0"))
    return rig, maps
