"""Rig configuration: cameras and projectors with intrinsics, pose and port.

JSON layout (``version`` is mandatory)::

    {
      "version": 1,
      "devices": [
        {
          "id": "cam0",
          "role": "camera",            # or "projector"
          "resolution": [1280, 1024],  # width, height
          "intrinsics": {"fx": ..., "fy": ..., "cx": ..., "cy": ..., "skew": 0.0},
          "pose": {"rotation": [9 numbers, row-major, device-to-world],
                   "translation": [x, y, z]},      # device centre, metres
          "interface": {"normal": [nx, ny, nz],    # device frame, into the water
                        "distance": 0.05,          # metres, centre to port plane
                        "eta": 0.7518796992481203} # n_air / n_water
        }
      ]
    }
"""
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .optics import (DEFAULT_ETA, Intrinsics, Pose, RefractiveInterface, pixels_to_directions,
                     refractive_project_many, trace_rays)

RIG_VERSION = 1
CAMERA = "camera"
PROJECTOR = "projector"


class RigError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Device:
    id: str
    role: str
    resolution: tuple
    intrinsics: Intrinsics
    pose: Pose
    interface: RefractiveInterface

    @property
    def width(self):
        return int(self.resolution[0])

    @property
    def height(self):
        return int(self.resolution[1])

    def underwater_rays(self, pixels):
        """World-frame rays leaving the port for each pixel: ``(origins, dirs, ok)``."""
        dirs = pixels_to_directions(pixels, self.intrinsics) @ self.pose.rotation.T
        origins = np.broadcast_to(self.pose.translation, dirs.shape)
        return trace_rays(origins, dirs, self.interface, self.pose)

    def project(self, points, use_numba=None):
        """Refractive projection of underwater world points: ``(pixels, ok, crossings)``."""
        return refractive_project_many(points, self.intrinsics, self.pose, self.interface, use_numba)

    def to_dict(self):
        return {
            "id": self.id,
            "role": self.role,
            "resolution": [self.width, self.height],
            "intrinsics": self.intrinsics.to_dict(),
            "pose": self.pose.to_dict(),
            "interface": self.interface.to_dict(),
        }

    @classmethod
    def from_dict(cls, d, default_eta=DEFAULT_ETA):
        try:
            role = d["role"]
            if role not in (CAMERA, PROJECTOR):
                raise RigError(f"device {d.get('id')!r}: unknown role {role!r}")
            w, h = (int(v) for v in d["resolution"])
            if w < 1 or h < 1:
                raise RigError(f"device {d['id']!r}: resolution must be positive")
            k = d["intrinsics"]
            intr = Intrinsics(float(k["fx"]), float(k["fy"]), float(k["cx"]), float(k["cy"]),
                              float(k.get("skew", 0.0)))
            rot = np.asarray(d["pose"]["rotation"], dtype=np.float64)
            if rot.size != 9:
                raise RigError(f"device {d['id']!r}: rotation needs 9 numbers")
            pose = Pose(rot.reshape(3, 3), np.asarray(d["pose"]["translation"], dtype=np.float64))
            itf = d.get("interface", {})
            iface = RefractiveInterface(np.asarray(itf.get("normal", [0, 0, 1]), dtype=np.float64),
                                        float(itf.get("distance", 0.05)),
                                        float(itf.get("eta", default_eta)))
            return cls(str(d["id"]), role, (w, h), intr, pose, iface)
        except KeyError as exc:
            raise RigError(f"device entry missing field {exc}") from exc


@dataclass
class RigConfig:
    devices: dict

    def __post_init__(self):
        if isinstance(self.devices, (list, tuple)):
            out = {}
            for dev in self.devices:
                if dev.id in out:
                    raise RigError(f"duplicate device id {dev.id!r}")
                out[dev.id] = dev
            self.devices = out

    def __getitem__(self, device_id):
        try:
            return self.devices[device_id]
        except KeyError:
            raise RigError(f"unknown device id {device_id!r}") from None

    def __contains__(self, device_id):
        return device_id in self.devices

    @property
    def cameras(self):
        return [d for d in self.devices.values() if d.role == CAMERA]

    @property
    def projectors(self):
        return [d for d in self.devices.values() if d.role == PROJECTOR]

    def camera(self, device_id):
        dev = self[device_id]
        if dev.role != CAMERA:
            raise RigError(f"{device_id!r} is a {dev.role}, expected a camera")
        return dev

    def projector(self, device_id):
        dev = self[device_id]
        if dev.role != PROJECTOR:
            raise RigError(f"{device_id!r} is a {dev.role}, expected a projector")
        return dev

    def with_interface(self, device_id, interface):
        devices = dict(self.devices)
        devices[device_id] = replace(self[device_id], interface=interface)
        return RigConfig(devices)

    def transformed(self, rotation, translation):
        """The same rig after the world-space rigid motion x -> R x + t."""
        return RigConfig({k: replace(d, pose=d.pose.compose(rotation, translation))
                          for k, d in self.devices.items()})

    def to_dict(self):
        return {"version": RIG_VERSION, "devices": [d.to_dict() for d in self.devices.values()]}

    @classmethod
    def from_dict(cls, data):
        if "version" not in data:
            raise RigError("rig config has no version field")
        if int(data["version"]) != RIG_VERSION:
            raise RigError(f"unsupported rig config version {data['version']!r}")
        eta = float(data.get("eta", DEFAULT_ETA))
        return cls([Device.from_dict(d, eta) for d in data.get("devices", [])])

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise RigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)


def apply_interface_patch(rig, patch):
    """Merge a calibration result (``{"version", "devices": [{"id", "interface"}]}``) into ``rig``."""
    for entry in patch.get("devices", []):
        dev = rig[entry["id"]]
        itf = entry["interface"]
        rig = rig.with_interface(dev.id, RefractiveInterface(
            np.asarray(itf["normal"], dtype=np.float64), float(itf["distance"]),
            float(itf.get("eta", dev.interface.eta))))
    return rig
