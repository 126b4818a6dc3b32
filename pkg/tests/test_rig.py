import json

import numpy as np
import pytest

from seacam.demo import bench_rig, ring_rig
from seacam.optics import RefractiveInterface
from seacam.rig import RigConfig, RigError, apply_interface_patch


def test_rig_json_roundtrip(tmp_path):
    rig = ring_rig()
    rig.save(tmp_path / "rig.json")
    back = RigConfig.load(tmp_path / "rig.json")
    assert back.to_dict() == rig.to_dict()
    assert [c.id for c in back.cameras] == [f"cam{k}" for k in range(8)]
    assert [p.id for p in back.projectors] == ["proj0", "proj1", "proj2"]


def test_rig_version_required():
    data = bench_rig().to_dict()
    del data["version"]
    with pytest.raises(RigError):
        RigConfig.from_dict(data)
    data["version"] = 9
    with pytest.raises(RigError):
        RigConfig.from_dict(data)


def test_rig_top_level_eta_default():
    data = bench_rig().to_dict()
    for d in data["devices"]:
        del d["interface"]["eta"]
    data["eta"] = 1 / 1.34
    rig = RigConfig.from_dict(data)
    assert rig["cam0"].interface.eta == pytest.approx(1 / 1.34)


@pytest.mark.parametrize("mutate", [
    lambda d: d["devices"][0].__setitem__("role", "sonar"),
    lambda d: d["devices"][0].pop("intrinsics"),
    lambda d: d["devices"][0]["pose"].__setitem__("rotation", [1, 0, 0]),
    lambda d: d["devices"].append(dict(d["devices"][0])),
])
def test_rig_rejects_bad_entries(mutate):
    data = json.loads(json.dumps(bench_rig().to_dict()))
    mutate(data)
    with pytest.raises(RigError):
        RigConfig.from_dict(data)


def test_role_lookups():
    rig = bench_rig()
    with pytest.raises(RigError):
        rig.camera("proj0")
    with pytest.raises(RigError):
        rig.projector("cam0")
    with pytest.raises(RigError):
        rig["cam9"]
    assert "cam0" in rig and "cam9" not in rig


def test_interface_patch():
    rig = bench_rig()
    patch = {"version": 1, "devices": [{"id": "cam0", "interface": {
        "normal": [0.0, 0.1736481776669303, 0.984807753012208], "distance": 0.061}}]}
    out = apply_interface_patch(rig, patch)
    assert out["cam0"].interface.distance == 0.061
    assert out["cam0"].interface.eta == rig["cam0"].interface.eta
    assert rig["cam0"].interface.distance == 0.05
    assert out["proj0"] is rig["proj0"]


def test_transformed_rig_projects_moved_points_identically():
    rig = bench_rig()
    a = np.radians(25)
    rot = np.array([[np.cos(a), 0, np.sin(a)], [0, 1, 0], [-np.sin(a), 0, np.cos(a)]])
    shift = np.array([0.4, -1.0, 2.0])
    moved = rig.transformed(rot, shift)
    pts = np.random.default_rng(0).uniform([-0.2, -0.2, 0.8], [0.2, 0.2, 1.2], size=(100, 3))
    p0, _, _ = rig["cam0"].project(pts)
    p1, _, _ = moved["cam0"].project(pts @ rot.T + shift)
    assert np.abs(p0 - p1).max() < 1e-7


def test_underwater_rays_start_on_port():
    rig = bench_rig()
    cam = rig["cam0"]
    iface = RefractiveInterface()
    o, d, ok = cam.underwater_rays(np.array([[0.0, 0.0], [640.0, 512.0], [1279.0, 1023.0]]))
    assert ok.all()
    np.testing.assert_allclose(cam.pose.to_device(o) @ iface.normal, iface.distance, atol=1e-12)
