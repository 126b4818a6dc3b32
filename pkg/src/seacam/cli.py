"""``seacam`` command line: one binary, one subcommand per stage.

Exit status: 0 on success, 1 on a domain error (message on stderr), 2 on a
usage error. Log records go to stderr as one JSON object per line.
"""
import argparse
import asyncio
import datetime as dt
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .calibrate import CalibObservation, CalibrationError, InterfaceEstimate, estimate_interface
from .controlplane import (Controller, DeviceUnavailable, Endpoints, Schedule, SimulatedPlant,
                           Trigger, default_port_map, parse_sink, relay_get, relay_set,
                           scheduler_tick)
from .controlplane.client import RelayClient
from .controlplane.protocol import ProtocolError
from .controlplane.session import SessionError
from .graycode import (DEFAULT_CONTRAST_THRESHOLD, DEFAULT_MIN_DYNAMIC_RANGE, MANIFEST_NAME,
                       CorrespondenceMap, PatternSpec, decode_stack, generate_patterns, load_stack,
                       write_manifest)
from .optics import GeometryError
from .pgm import PGMError, write_pgm
from .reconstruct import (DEFAULT_MAX_GAP, export_ply, reconstruct_camera_camera,
                          reconstruct_camera_projector)
from .rig import RigConfig, RigError
from .synth import SceneError, Scene, read_ground_truth, render, write_ground_truth

log = logging.getLogger("seacam")

ENV_HOST = "SEACAM_HOST"
ENV_PORT_BASE = "SEACAM_PORT_BASE"
DEFAULT_PORT_BASE = 47100


class JsonLogFormatter(logging.Formatter):
    def format(self, record):
        msg = record.getMessage()
        try:
            payload = json.loads(msg)
            if not isinstance(payload, dict):
                raise ValueError
        except ValueError:
            payload = {"event": "log", "message": msg}
        return json.dumps({"level": record.levelname.lower(), "logger": record.name, **payload})


def _setup_logging(verbose):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLogFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.WARNING)


def _event(**fields):
    log.info(json.dumps(fields))


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _port_layout(rig):
    host = os.environ.get(ENV_HOST, "127.0.0.1")
    base = int(os.environ.get(ENV_PORT_BASE, DEFAULT_PORT_BASE))
    ports = {"relay0": base}
    for i, dev in enumerate(rig.devices.values()):
        ports[dev.id] = base + 1 + i
    return host, ports


# -- subcommands -------------------------------------------------------------------

def cmd_patterns(args):
    spec = PatternSpec(args.width, args.height, not args.no_inverses, not args.no_references)
    seq = generate_patterns(spec)
    seq.write(_out_dir(args.out))
    print(json.dumps({"patterns": len(seq), "out": str(args.out)}))
    return 0


def cmd_simulate(args):
    rig = RigConfig.load(args.rig)
    scene = Scene.load(args.scene)
    cam_id = args.camera or rig.cameras[0].id
    proj_id = args.projector or rig.projectors[0].id
    proj = rig.projector(proj_id)
    spec = PatternSpec(proj.width, proj.height)
    seq = generate_patterns(spec)
    out = render(scene, rig, cam_id, proj_id, seq, noise_sigma=args.noise, seed=args.seed)
    dest = _out_dir(args.out)
    for pat, frame in zip(seq, out.stack):
        write_pgm(dest / pat.filename, frame)
    manifest = seq.manifest()
    manifest.update(camera_id=cam_id, projector_id=proj_id, noise_sigma=args.noise, seed=args.seed)
    write_manifest(dest / MANIFEST_NAME, manifest)
    write_ground_truth(dest / "ground_truth.bin", out)
    print(json.dumps({"frames": len(seq), "camera": cam_id, "projector": proj_id,
                      "lit_pixels": int(out.lit_mask.sum()), "out": str(dest)}))
    return 0


def cmd_decode(args):
    spec, stack = load_stack(args.captures)
    manifest = json.loads((Path(args.captures) / MANIFEST_NAME).read_text())
    cam_id = args.camera or manifest.get("camera_id", "cam0")
    proj_id = args.projector or manifest.get("projector_id")
    cmap = decode_stack(stack, spec, args.threshold, camera_id=cam_id, projector_id=proj_id,
                        min_dynamic_range=args.min_range)
    dest = _out_dir(args.out)
    cmap.save(dest / f"{cam_id}.json")
    print(json.dumps({"camera": cam_id, "decoded": int(cmap.decoded.sum()),
                      "coverage": round(cmap.coverage(), 6), "out": str(dest / f"{cam_id}.json")}))
    return 0


def cmd_reconstruct(args):
    rig = RigConfig.load(args.rig)
    map_a = CorrespondenceMap.load(args.map)
    if args.mode == "camera-camera":
        if not args.map_b:
            raise RigError("camera-camera mode needs --map-b")
        cloud, report = reconstruct_camera_camera(map_a, CorrespondenceMap.load(args.map_b), rig,
                                                  args.max_gap)
    else:
        proj_id = args.projector or map_a.projector_id or rig.projectors[0].id
        cloud, report = reconstruct_camera_projector(map_a, rig, map_a.camera_id, proj_id,
                                                     args.max_gap)
    extra = ground_truth_error(cloud, read_ground_truth(args.ground_truth)) \
        if args.ground_truth else {}
    dest = _out_dir(args.out)
    export_ply(cloud, dest / "cloud.ply")
    path = dest / "report.json"
    path.write_text(json.dumps({**report.to_dict(), **extra}, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"points": len(cloud), **report.to_dict(), **extra,
                      "out": str(dest / "cloud.ply")}))
    return 0


def ground_truth_error(cloud, gt):
    """RMS and max distance (m) from each point to the true hit behind its first-device pixel."""
    if len(cloud) == 0:
        return {"rms_error_m": None, "max_error_m": None, "compared": 0}
    h, w = gt.shape[:2]
    px = cloud.pixels_a.astype(np.int64)
    inside = (px[:, 0] >= 0) & (px[:, 0] < w) & (px[:, 1] >= 0) & (px[:, 1] < h)
    truth = np.full((len(cloud), 3), np.nan)
    truth[inside] = gt[px[inside, 1], px[inside, 0], :3]
    valid = np.isfinite(truth).all(axis=1)
    err = np.linalg.norm(cloud.positions[valid] - truth[valid], axis=1)
    if len(err) == 0:
        return {"rms_error_m": None, "max_error_m": None, "compared": 0}
    return {"rms_error_m": float(np.sqrt(np.mean(err ** 2))), "max_error_m": float(err.max()),
            "compared": int(len(err))}


def cmd_calibrate(args):
    rig = RigConfig.load(args.rig)
    obs = CalibObservation.load(args.observations)
    cam = rig.camera(obs.camera_id)
    normal = np.array([float(v) for v in args.init_normal.split(",")]) if args.init_normal \
        else np.array([0.0, 0.0, 1.0])
    est = estimate_interface(obs, rig, InterfaceEstimate(normal, args.init_distance))
    dest = _out_dir(args.out)
    path = dest / f"{obs.camera_id}_interface.json"
    path.write_text(json.dumps(est.to_patch(obs.camera_id, cam.interface.eta), indent=2) + "\n")
    print(json.dumps({"camera": obs.camera_id, "normal": est.normal.tolist(),
                      "distance": est.distance, "rms_px": est.rms_residual,
                      "iterations": est.iterations, "converged": est.converged, "out": str(path)}))
    return 0 if est.converged else 1


def cmd_devices(args):
    rig = RigConfig.load(args.rig)
    host, ports = _port_layout(rig)

    async def serve():
        plant = SimulatedPlant(rig, host=host, ports=ports)
        await plant.start()
        eps = plant.endpoints()
        print(json.dumps({"relay": list(eps.relay),
                          "devices": {k: list(v) for k, v in eps.devices.items()}}), flush=True)
        try:
            if args.duration is not None:
                await asyncio.sleep(args.duration)
            else:
                await asyncio.Event().wait()
        finally:
            await plant.stop()

    try:
        asyncio.run(serve())
    except KeyboardInterrupt:
        pass
    return 0


def _next_session_id(root, controller_id="pc0"):
    # never reuse an id already in the sink, so re-runs do not clobber old sessions
    root = Path(root)
    taken = {p.name for p in root.glob(f"session-{controller_id}-*")} if root.is_dir() else set()
    n = 1
    while f"session-{controller_id}-{n:04d}" in taken:
        n += 1
    return f"{controller_id}-{n:04d}"


async def _orchestrate(args, rig, schedule, sink):
    projector_id = args.projector or rig.projectors[0].id
    proj = rig.projector(projector_id)
    spec = PatternSpec(proj.width, proj.height)
    plant = None
    if args.simulate:
        plant = SimulatedPlant(rig)
        endpoints = await plant.start()
        port_map = plant.port_map
    else:
        host, ports = _port_layout(rig)
        endpoints = Endpoints((host, ports["relay0"]),
                              {k: (host, p) for k, p in ports.items() if k != "relay0"})
        port_map = default_port_map([c.id for c in rig.cameras], [p.id for p in rig.projectors])
    controller = Controller(endpoints, port_map, timeout=args.timeout)
    failures = 0
    runs = 0
    last_run = None
    # on demand means run now: once, or --max-sessions times back to back
    limit = args.max_sessions if args.max_sessions is not None or schedule.mode != "on_demand" else 1
    try:
        while limit is None or runs < limit:
            now = dt.datetime.now()
            if schedule.mode == "on_demand":
                decision = Trigger()
            else:
                decision = scheduler_tick(now, schedule, last_run)
            if isinstance(decision, Trigger):
                last_run = now
                session = await controller.run_session(rig, spec, sink, projector_id,
                                                       session_id=_next_session_id(sink.root))
                runs += 1
                failures += session.state.value == "Failed"
                print(json.dumps({"session": session.id, "state": session.state.value,
                                  "reason": session.reason, "files": len(session.artifacts)}),
                      flush=True)
            else:
                await asyncio.sleep(min(decision.seconds, 60.0))
    finally:
        if plant is not None:
            await plant.stop()
    return 1 if failures else 0


def cmd_orchestrate(args):
    rig = RigConfig.load(args.rig)
    schedule = Schedule.parse(args.schedule)
    sink = parse_sink(args.sink)
    return asyncio.run(_orchestrate(args, rig, schedule, sink))


def cmd_relay(args):
    if args.rig:
        rig = RigConfig.load(args.rig)
        port_map = default_port_map([c.id for c in rig.cameras], [p.id for p in rig.projectors])
    else:
        port_map = default_port_map()
    host = os.environ.get(ENV_HOST, "127.0.0.1")
    port = int(os.environ.get(ENV_PORT_BASE, DEFAULT_PORT_BASE))
    changes = []
    for item in args.set or []:
        name, _, value = item.partition("=")
        if value.lower() not in ("on", "off"):
            raise ValueError(f"bad --set {item!r}; expected <port>=on|off")
        changes.append((name, value.lower() == "on"))

    async def go():
        client = RelayClient(host, port, timeout=args.timeout, retries=1, backoff=0.05)
        try:
            state = None
            for name, on in changes:
                state = await relay_set(client, name, on, port_map)
            if state is None:
                state = await relay_get(client, port_map)
            return state
        finally:
            await client.close()

    state = asyncio.run(go())
    print(json.dumps({"state": f"{state.bits:04X}", "ports": state.named()}))
    return 0


# -- parser ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="seacam", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"seacam {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", metavar="<command>")
    sub.required = True

    s = sub.add_parser("patterns", help="write the gray-code pattern stack as PGMs + manifest")
    s.add_argument("--width", type=int, default=1024)
    s.add_argument("--height", type=int, default=768)
    s.add_argument("--no-inverses", action="store_true")
    s.add_argument("--no-references", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_patterns)

    s = sub.add_parser("simulate", aliases=["synth"], help="render a captured stack of a synthetic scene")
    s.add_argument("--scene", required=True)
    s.add_argument("--rig", required=True)
    s.add_argument("--camera")
    s.add_argument("--projector")
    s.add_argument("--noise", type=float, default=0.0, help="Gaussian sigma in 8-bit levels")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("decode", help="decode a captured stack into a correspondence map")
    s.add_argument("--captures", required=True, help="directory holding manifest.json and frames")
    s.add_argument("--threshold", type=float, default=DEFAULT_CONTRAST_THRESHOLD)
    s.add_argument("--min-range", type=float, default=DEFAULT_MIN_DYNAMIC_RANGE,
                   help="minimum white-black difference in 8-bit levels")
    s.add_argument("--camera")
    s.add_argument("--projector")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("reconstruct", help="triangulate a correspondence map into a PLY")
    s.add_argument("--rig", required=True)
    s.add_argument("--map", required=True)
    s.add_argument("--map-b", help="second camera's map (camera-camera mode)")
    s.add_argument("--mode", choices=("camera-projector", "camera-camera"),
                   default="camera-projector")
    s.add_argument("--projector")
    s.add_argument("--max-gap", type=float, default=DEFAULT_MAX_GAP, help="metres")
    s.add_argument("--ground-truth", help="ground_truth.bin from simulate; adds error stats")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("calibrate", help="fit a camera's port normal and distance")
    s.add_argument("--rig", required=True)
    s.add_argument("--observations", required=True)
    s.add_argument("--init-normal", help="nx,ny,nz in the camera frame (default 0,0,1)")
    s.add_argument("--init-distance", type=float, default=0.05)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("devices", help=f"serve simulated devices on ${ENV_PORT_BASE}+k")
    s.add_argument("--rig", required=True)
    s.add_argument("--duration", type=float, help="seconds to serve (default: forever)")
    s.set_defaults(func=cmd_devices)

    s = sub.add_parser("orchestrate", help="run scheduled capture sessions")
    s.add_argument("--rig", required=True)
    s.add_argument("--schedule", default="on_demand",
                   help="on_demand | interval:<seconds> | daily:HH:MM")
    s.add_argument("--sink", required=True, help="dir:<path>")
    s.add_argument("--projector")
    s.add_argument("--simulate", action="store_true", help="start in-process device simulators")
    s.add_argument("--max-sessions", type=int)
    s.add_argument("--timeout", type=float, default=2.0)
    s.set_defaults(func=cmd_orchestrate)

    s = sub.add_parser("relay", help="switch relay ports (e.g. --set cam3=on)")
    s.add_argument("--set", action="append", metavar="PORT=on|off")
    s.add_argument("--rig", help="rig config used to name ports")
    s.add_argument("--timeout", type=float, default=2.0)
    s.set_defaults(func=cmd_relay)
    return p


DOMAIN_ERRORS = (RigError, SceneError, CalibrationError, GeometryError, PGMError, ValueError,
                 KeyError, OSError, DeviceUnavailable, ProtocolError, SessionError)


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging(args.verbose)
    t0 = time.monotonic()
    try:
        code = args.func(args)
    except DOMAIN_ERRORS as exc:
        print(f"seacam {args.command}: error: {exc}", file=sys.stderr)
        return 1
    _event(event="command_done", command=args.command, seconds=round(time.monotonic() - t0, 3))
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
