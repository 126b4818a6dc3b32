import struct

import numpy as np
import pytest

from helpers import small_bench
from seacam.demo import bench_scene, plane_scene
from seacam.graycode import PatternSpec, decode_stack, generate_patterns
from seacam.rig import RigError
from seacam.synth import (BLACK_LEVEL, GT_MAGIC, WHITE_LEVEL, Plane, Scene, SceneError, Sphere,
                          Triangle, ground_truth_cloud, read_ground_truth, render,
                          write_ground_truth)

SEQ = generate_patterns(PatternSpec(256, 192))


def march(implicit, o, d, step=1e-4, t_max=3.0):
    """First sign change of ``implicit`` along each ray, sampled every ``step`` metres."""
    ts = np.arange(0.0, t_max, step)
    out = np.full(len(o), np.nan)
    for i in range(len(o)):
        vals = implicit(o[i] + ts[:, None] * d[i])
        flips = np.flatnonzero(np.sign(vals[1:]) != np.sign(vals[:-1]))
        if len(flips):
            out[i] = ts[flips[0]] + step / 2
    return out


def random_rays(rng, n, target, spread):
    o = rng.uniform(-0.3, 0.3, size=(n, 3))
    aim = target + rng.uniform(-spread, spread, size=(n, 3))
    d = aim - o
    return o, d / np.linalg.norm(d, axis=1, keepdims=True)


# -- primitives vs marching ---------------------------------------------------------

def test_sphere_against_marching():
    rng = np.random.default_rng(0)
    s = Sphere([0.1, -0.05, 1.5], 0.3)
    o, d = random_rays(rng, 150, s.center, 0.4)
    got = s.intersect(o, d)
    ref = march(lambda p: np.linalg.norm(p - s.center, axis=1) - s.radius, o, d)
    np.testing.assert_array_equal(np.isnan(got), np.isnan(ref))
    hit = ~np.isnan(ref)
    assert hit.sum() > 50
    assert np.abs(got[hit] - ref[hit]).max() < 1e-3


def test_plane_against_marching():
    rng = np.random.default_rng(1)
    pl = Plane([0, 0, 1.2], [0.3, -0.2, -1.0])
    o, d = random_rays(rng, 150, np.array([0, 0, 1.2]), 0.8)
    got = pl.intersect(o, d)
    ref = march(lambda p: (p - pl.point) @ pl.normal, o, d)
    hit = ~np.isnan(ref)
    assert hit.sum() > 100
    assert np.abs(got[hit] - ref[hit]).max() < 1e-3


def test_triangle_against_marching():
    rng = np.random.default_rng(2)
    tri = Triangle([[-0.4, -0.4, 1.0], [0.4, -0.4, 1.1], [0.0, 0.5, 0.9]])
    o, d = random_rays(rng, 150, np.array([0, 0, 1.0]), 0.6)
    got = tri.intersect(o, d)
    n = np.cross(tri.vertices[1] - tri.vertices[0], tri.vertices[2] - tri.vertices[0])
    plane_t = march(lambda p: (p - tri.vertices[0]) @ n, o, d)
    hit = ~np.isnan(got)
    assert 20 < hit.sum() < 150
    assert np.abs(got[hit] - plane_t[hit]).max() < 1e-3


def test_scene_nearest_hit():
    scene = Scene([Plane([0, 0, 2.0], [0, 0, -1]), Sphere([0, 0, 1.0], 0.2)])
    t, idx = scene.intersect(np.zeros((2, 3)), np.array([[0, 0, 1.0], [0.6, 0, 0.8]]))
    np.testing.assert_allclose(t, [0.8, 2.5])
    np.testing.assert_array_equal(idx, [1, 0])


# -- rendering ------------------------------------------------------------------------

def test_all_white_frame_reads_white_level():
    rig = small_bench()
    out = render(plane_scene(tilt_deg=0.0), rig, "cam0", "proj0", SEQ)
    lit = out.lit_mask
    assert lit.sum() > 10000
    assert (out.stack[0][lit] == WHITE_LEVEL).all()
    assert (out.stack[1][lit] == BLACK_LEVEL).all()
    noisy = render(plane_scene(tilt_deg=0.0), rig, "cam0", "proj0", SEQ, noise_sigma=2.0, seed=4)
    assert abs(noisy.stack[0][lit].mean() - WHITE_LEVEL) < 0.1


def test_background_pixels_stay_black():
    rig = small_bench()
    out = render(Scene([Sphere([0.0, 0.0, 1.0], 0.05)]), rig, "cam0", "proj0", SEQ)
    miss = ~out.hit_mask
    assert miss.sum() > 1000
    assert (out.stack[:, miss] == BLACK_LEVEL).all()
    assert np.isnan(out.hit_points[miss]).all()
    assert (out.proj_map[miss] == -1).all()


@pytest.mark.parametrize("scene_fn", [plane_scene, bench_scene])
def test_decode_of_render_matches_ground_truth(scene_fn, use_numba):
    rig = small_bench()
    out = render(scene_fn(), rig, "cam0", "proj0", SEQ, use_numba=use_numba)
    cmap = decode_stack(out.stack, SEQ.spec, use_numba=use_numba)
    np.testing.assert_array_equal(cmap.decoded, out.lit_mask)
    np.testing.assert_array_equal(cmap.proj_x, out.proj_map[..., 0])
    np.testing.assert_array_equal(cmap.proj_y, out.proj_map[..., 1])


def test_render_numba_and_numpy_identical():
    rig = small_bench()
    a = render(bench_scene(), rig, "cam0", "proj0", SEQ, 2.0, 9, use_numba=True)
    b = render(bench_scene(), rig, "cam0", "proj0", SEQ, 2.0, 9, use_numba=False)
    np.testing.assert_array_equal(a.stack, b.stack)
    np.testing.assert_array_equal(a.proj_map, b.proj_map)


def test_noise_is_seeded():
    rig = small_bench()
    a = render(bench_scene(), rig, "cam0", "proj0", SEQ, noise_sigma=2.0, seed=11)
    b = render(bench_scene(), rig, "cam0", "proj0", SEQ, noise_sigma=2.0, seed=11)
    c = render(bench_scene(), rig, "cam0", "proj0", SEQ, noise_sigma=2.0, seed=12)
    assert a.stack.tobytes() == b.stack.tobytes()
    assert a.stack.tobytes() != c.stack.tobytes()


def test_outside_projector_never_lit():
    rig = small_bench()
    out = render(plane_scene(), rig, "cam0", "proj0", SEQ)
    hit = out.hit_mask
    pix, ok, _ = rig["proj0"].project(out.hit_points[hit])
    r = np.floor(pix + 0.5)
    outside = ~(ok & (r[:, 0] >= 0) & (r[:, 0] < 256) & (r[:, 1] >= 0) & (r[:, 1] < 192))
    assert outside.sum() > 1000
    assert (out.stack[:, hit][:, outside] <= BLACK_LEVEL).all()


def test_projector_shadow_of_ball():
    """Pixels in the ball's projector shadow are unlit; every such pixel's path to
    the projector really does cross the ball."""
    rig = small_bench()
    ball = Sphere([0.05, 0.0, 0.8], 0.06)
    wall = Plane([0, 0, 1.1], [0, 0, -1])
    out = render(Scene([wall, ball]), rig, "cam0", "proj0", SEQ)
    on_wall = out.hit_mask & (np.abs(out.hit_points[..., 2] - 1.1) < 1e-9)
    proj = rig["proj0"]
    pix, ok, cross = proj.project(out.hit_points[on_wall])
    r = np.floor(pix + 0.5)
    inside = ok & (r[:, 0] >= 0) & (r[:, 0] < 256) & (r[:, 1] >= 0) & (r[:, 1] < 192)
    seg = out.hit_points[on_wall] - cross
    length = np.linalg.norm(seg, axis=1)
    t = ball.intersect(cross, seg / length[:, None])
    blocked = inside & (t > 0) & (t < length)
    assert blocked.sum() > 200
    lit = out.lit_mask[on_wall]
    np.testing.assert_array_equal(lit, inside & ~blocked)


def test_ground_truth_cloud_on_plane():
    rig = small_bench()
    scene = plane_scene()
    out = render(scene, rig, "cam0", "proj0", SEQ)
    cloud = ground_truth_cloud(out)
    pl = scene.primitives[0]
    assert len(cloud) == int(out.hit_mask.sum())
    assert np.abs((cloud.positions - pl.point) @ pl.normal).max() < 1e-12
    assert (cloud.gaps == 0).all()


def test_empty_view_empty_cloud():
    rig = small_bench()
    out = render(Scene([Sphere([0.0, 0.0, -5.0], 0.5)]), rig, "cam0", "proj0", SEQ)
    assert len(ground_truth_cloud(out)) == 0


def test_pattern_resolution_must_match_projector():
    with pytest.raises(RigError):
        render(plane_scene(), small_bench(), "cam0", "proj0", generate_patterns(PatternSpec(64, 48)))


# -- files ------------------------------------------------------------------------------

def test_scene_json_roundtrip(tmp_path):
    scene = Scene([Plane([0, 0, 1], [0, 0, -1], 0.5), Sphere([0, 0, 1], 0.1, 0.9),
                   Triangle([[0, 0, 1], [1, 0, 1], [0, 1, 1]])])
    scene.save(tmp_path / "s.json")
    assert Scene.load(tmp_path / "s.json").to_dict() == scene.to_dict()


@pytest.mark.parametrize("data", [
    {"primitives": []},
    {"primitives": [{"type": "torus"}]},
    {"primitives": [{"type": "sphere", "center": [0, 0, 1], "radius": -1}]},
    {"primitives": [{"type": "plane", "point": [0, 0, 1], "normal": [0, 0, 0]}]},
    {"primitives": [{"type": "sphere", "center": [0, 0, 1], "radius": 1, "albedo": 2}]},
    {"primitives": [{"type": "triangle", "vertices": [[0, 0, 0], [1, 1, 1], [2, 2, 2]]}]},
])
def test_scene_validation(data):
    with pytest.raises(SceneError):
        Scene.from_dict(data)


def test_ground_truth_file(tmp_path):
    rig = small_bench()
    out = render(bench_scene(), rig, "cam0", "proj0", SEQ)
    write_ground_truth(tmp_path / "gt.bin", out)
    raw = (tmp_path / "gt.bin").read_bytes()
    assert raw[:4] == GT_MAGIC
    assert struct.unpack("<IIII", raw[4:20]) == (1, 256, 320, 5)
    assert len(raw) == 20 + 256 * 320 * 5 * 4
    gt = read_ground_truth(tmp_path / "gt.bin")
    np.testing.assert_array_equal(gt[..., :3], out.hit_points.astype(np.float32))
    lit = out.lit_mask
    np.testing.assert_array_equal(gt[lit, 3:], out.proj_map[lit])
    assert np.isnan(gt[~lit, 3:]).all()

