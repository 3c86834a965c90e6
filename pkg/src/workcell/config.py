"""Configuration layer: parse, validate, hash, and instantiate workcells.

A workcell (robot node, camera rig, calibration, scene, input gains) is
described by one JSON document; switching platforms is a file swap. This is
the only module that knows robot type strings: everything downstream works
off the built components. New robot types plug in through `register_robot_type`
without touching core modules.
"""

from __future__ import annotations

import json
import os
import socket
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .errors import StartupError, ValidationError
from .geometry import DHParams, Intrinsics, Pose
from .perception import Calibration, CameraCalibration
from .sim.cameras import CameraConfig, CameraRig, ClockModel
from .sim.clock import EventScheduler
from .sim.robot import ArmModel, FollowerMap, RobotNode
from .sim.scene import GraspParams, Scene

ENV_CONFIG_VAR = "WORKCELL_CONFIG"
FNV_OFFSET_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def _load_schema() -> dict:
    text = resources.files("workcell").joinpath("schemas/workcell.schema.json").read_text("utf-8")
    return json.loads(text)


_SCHEMA = _load_schema()


@dataclass(frozen=True)
class RobotSpec:
    type: str
    dof: int
    dh: DHParams
    q_min: np.ndarray
    q_max: np.ndarray
    qd_max: np.ndarray
    qdd_max: np.ndarray
    base_poses: tuple  # one Pose per arm
    home_q: np.ndarray  # full dof, arms concatenated
    port: int
    control_rate_hz: float
    action_space: str
    watchdog_timeout_s: float = 0.1
    ik_damping: float = 0.05
    follower_map: FollowerMap | None = None


@dataclass(frozen=True)
class CameraSpec:
    id: str
    role: str
    delay_us: float
    fps: float
    clock: ClockModel


@dataclass(frozen=True)
class SceneSpec:
    table_height: float
    block_half_extents: np.ndarray
    spawn_region: tuple
    lift_threshold: float
    grasp: GraspParams


@dataclass(frozen=True)
class InputSpec:
    v_max: float
    w_max: float
    deadzone: float


@dataclass(frozen=True)
class RecorderSpec:
    frameset_queue: int = 256
    state_queue: int = 2048
    output_dir: str = "episodes"


@dataclass(frozen=True)
class WorkcellConfig:
    name: str
    robot: RobotSpec
    cameras: tuple  # CameraSpec per camera
    calibration_path: str
    scene: SceneSpec
    input: InputSpec
    recorder: RecorderSpec
    raw: dict = field(repr=False)
    # Directory the document was loaded from; resolves calibration_path.
    # Not part of the document, so it never affects the config hash.
    base_dir: str = "."

    @property
    def camera_ids(self):
        return tuple(c.id for c in self.cameras)


# --- robot type registry ---------------------------------------------------

_REGISTRY: dict = {}


def register_robot_type(name: str, arm_count: int, factory):
    """factory(spec: RobotSpec) -> (arms: list[ArmModel], follower: FollowerMap|None)."""
    _REGISTRY[name] = (arm_count, factory)


def registered_robot_types():
    return sorted(_REGISTRY)


def _make_arms(spec: RobotSpec):
    n = len(spec.dh.a)
    arms = []
    for i, base in enumerate(spec.base_poses):
        arms.append(ArmModel(
            dh=spec.dh,
            q_min=spec.q_min, q_max=spec.q_max,
            qd_max=spec.qd_max, qdd_max=spec.qdd_max,
            base_pose=base,
            home_q=spec.home_q[i * n:(i + 1) * n],
        ))
    return arms, spec.follower_map


register_robot_type("ur5_sim", 1, _make_arms)
register_robot_type("bimanual_sim", 2, _make_arms)


# --- parsing and validation ------------------------------------------------

def parse_and_validate(text: str) -> WorkcellConfig:
    """Parse a JSON config document; collects every violation before raising."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError([f"not valid JSON: {exc}"]) from exc
    violations = []
    validator = jsonschema.Draft202012Validator(_SCHEMA)
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path)):
        where = "/".join(str(p) for p in err.absolute_path) or "(root)"
        violations.append(f"{where}: {err.message}")
    if violations:
        raise ValidationError(violations)
    violations.extend(_semantic_violations(doc))
    if violations:
        raise ValidationError(violations)
    return _build_config(doc)


def load_config(path) -> WorkcellConfig:
    path = Path(path)
    config = parse_and_validate(path.read_text(encoding="utf-8"))
    object.__setattr__(config, "base_dir", str(path.resolve().parent))
    return config


def default_config_path() -> str | None:
    return os.environ.get(ENV_CONFIG_VAR)


def _semantic_violations(doc: dict):
    out = []
    robot = doc["robot"]
    rtype = robot["type"]
    if rtype not in _REGISTRY:
        out.append(f"robot/type: unknown component {rtype!r} "
                   f"(registered: {', '.join(registered_robot_types())})")
        arm_count = 1
    else:
        arm_count = _REGISTRY[rtype][0]
    n = len(robot["dh"])
    if robot["dof"] != arm_count * n:
        out.append(f"robot/dof: {robot['dof']} does not match {arm_count} arm(s) "
                   f"x {n} dh rows")
    for key in ("q_min", "q_max", "qd_max", "qdd_max"):
        if len(robot[key]) != n:
            out.append(f"robot/{key}: length {len(robot[key])} != {n} dh rows")
    if len(robot["home_q"]) != robot["dof"]:
        out.append(f"robot/home_q: length {len(robot['home_q'])} != dof {robot['dof']}")
    if len(robot["q_min"]) == len(robot["q_max"]) == n:
        if any(a >= b for a, b in zip(robot["q_min"], robot["q_max"])):
            out.append("robot/q_min: must be elementwise below q_max")
    poses = robot["base_pose"]
    pose_list = poses if poses and isinstance(poses[0], list) else [poses]
    if len(pose_list) != arm_count:
        out.append(f"robot/base_pose: {len(pose_list)} pose(s) for {arm_count} arm(s)")
    fm = robot.get("follower_map")
    if arm_count == 2 and fm is None:
        out.append("robot/follower_map: required for a two-arm robot")
    if fm is not None:
        for key in ("sign", "offset"):
            if len(fm[key]) != n:
                out.append(f"robot/follower_map/{key}: length {len(fm[key])} != {n} dh rows")

    cams = doc["cameras"]
    ids = [c["id"] for c in cams]
    if len(set(ids)) != len(ids):
        out.append("cameras: duplicate camera ids")
    masters = [c["id"] for c in cams if c["role"] == "master"]
    if len(masters) != 1:
        out.append(f"cameras: exactly one master required, found {len(masters)}")
    for c in cams:
        if c["role"] == "master" and c["delay_us"] != 0:
            out.append(f"cameras/{c['id']}: master delay_us must be 0")
    fpss = {c["fps"] for c in cams}
    if len(fpss) > 1:
        out.append("cameras: all cameras must share one fps")

    x0, y0, x1, y1 = doc["scene"]["spawn_region"]
    if not (x0 < x1 and y0 < y1):
        out.append("scene/spawn_region: must satisfy x0 < x1 and y0 < y1")
    return out


def _build_config(doc: dict) -> WorkcellConfig:
    r = doc["robot"]
    poses = r["base_pose"]
    pose_list = poses if poses and isinstance(poses[0], list) else [poses]
    fm = r.get("follower_map")
    spec = RobotSpec(
        type=r["type"], dof=r["dof"],
        dh=DHParams.from_rows(r["dh"]),
        q_min=np.asarray(r["q_min"], float), q_max=np.asarray(r["q_max"], float),
        qd_max=np.asarray(r["qd_max"], float), qdd_max=np.asarray(r["qdd_max"], float),
        base_poses=tuple(Pose.from_vector(p) for p in pose_list),
        home_q=np.asarray(r["home_q"], float),
        port=r["port"], control_rate_hz=r["control_rate_hz"],
        action_space=r["action_space"],
        watchdog_timeout_s=r.get("watchdog_timeout_s", 0.1),
        ik_damping=r.get("ik_damping", 0.05),
        follower_map=FollowerMap(np.asarray(fm["sign"], float),
                                 np.asarray(fm["offset"], float)) if fm else None,
    )
    cameras = tuple(CameraSpec(
        id=c["id"], role=c["role"], delay_us=float(c["delay_us"]), fps=float(c["fps"]),
        clock=ClockModel(
            offset_s=c.get("clock", {}).get("offset_s", 0.0),
            drift_ppm=c.get("clock", {}).get("drift_ppm", 0.0),
            jitter_sigma_us=c.get("clock", {}).get("jitter_sigma_us", 0.0),
        ),
    ) for c in doc["cameras"])
    s = doc["scene"]
    g = s.get("grasp", {})
    scene = SceneSpec(
        table_height=float(s["table_height"]),
        block_half_extents=np.asarray(s["block_half_extents"], float),
        spawn_region=tuple(float(v) for v in s["spawn_region"]),
        lift_threshold=float(s.get("lift_threshold", 0.04)),
        grasp=GraspParams(
            grasp_radius=float(g.get("radius", 0.04)),
            close_threshold=float(g.get("close_threshold", 0.4)),
            grasp_offset=tuple(g.get("offset", (0.0, 0.0, -0.02))),
        ),
    )
    i = doc["input"]
    rec = doc.get("recorder", {})
    return WorkcellConfig(
        name=doc["name"], robot=spec, cameras=cameras,
        calibration_path=doc["calibration_path"], scene=scene,
        input=InputSpec(float(i["v_max"]), float(i["w_max"]), float(i["deadzone"])),
        recorder=RecorderSpec(
            frameset_queue=rec.get("frameset_queue", 256),
            state_queue=rec.get("state_queue", 2048),
            output_dir=rec.get("output_dir", "episodes"),
        ),
        raw=doc,
    )


# --- hashing ---------------------------------------------------------------

def canonical_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET_BASIS
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def config_hash(config) -> int:
    """64-bit FNV-1a over the canonicalized document; key order independent."""
    doc = config.raw if isinstance(config, WorkcellConfig) else config
    return fnv1a_64(canonical_json(doc).encode("utf-8"))


def config_hash_hex(config) -> str:
    return f"{config_hash(config):016x}"


# --- calibration -----------------------------------------------------------

def load_calibration(path, camera_ids) -> Calibration:
    path = Path(path)
    if not path.exists():
        raise StartupError(f"calibration file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise StartupError(f"calibration file {path} is not valid JSON: {exc}") from exc
    missing = [cid for cid in camera_ids if cid not in doc]
    if missing:
        raise ValidationError(
            [f"calibration: no entry for camera {cid!r} in {path}" for cid in missing])
    cams = {}
    for cid in camera_ids:
        e = doc[cid]
        cams[cid] = CameraCalibration(
            intrinsics=Intrinsics(
                fx=float(e["fx"]), fy=float(e["fy"]),
                cx=float(e["cx"]), cy=float(e["cy"]),
                width=int(e["width"]), height=int(e["height"]),
            ),
            extrinsic=Pose(np.asarray(e["position"], float),
                           np.asarray(e["orientation"], float)),
        )
    return Calibration(cams)


# --- instantiation ---------------------------------------------------------

class Workcell:
    """A running workcell on a virtual clock; shutdown is idempotent."""

    def __init__(self, config: WorkcellConfig, scheduler, node, rig, calibration, server_socket):
        self.config = config
        self.scheduler = scheduler
        self.node = node
        self.rig = rig
        self.calibration = calibration
        self.server_socket = server_socket
        self.hash = config_hash(config)
        self.hash_hex = f"{self.hash:016x}"
        self._open = True

    def shutdown(self):
        if not self._open:
            return
        self._open = False
        self.rig.stop()
        if self.server_socket is not None:
            self.server_socket.close()


def build(config: WorkcellConfig, scheduler=None, seed: int = 0,
          bind_port: bool = True) -> Workcell:
    """Instantiate and start every component described by the config.

    Nothing here looks at the workcell or robot type name beyond the registry
    lookup for the arm factory.
    """
    if config.robot.type not in _REGISTRY:
        raise ValidationError([f"robot/type: unknown component {config.robot.type!r}"])
    base = Path(config.base_dir)
    calib_path = Path(config.calibration_path)
    if not calib_path.is_absolute():
        calib_path = base / calib_path
    calibration = load_calibration(calib_path, config.camera_ids)

    s = config.scene
    x0, y0, x1, y1 = s.spawn_region
    resting = s.table_height + s.block_half_extents[2]
    scene = Scene(
        table_height=s.table_height,
        block_center=np.array([(x0 + x1) / 2, (y0 + y1) / 2, resting]),
        block_half_extents=s.block_half_extents,
        spawn_region=s.spawn_region,
        grasp=s.grasp,
        lift_threshold=s.lift_threshold,
    )
    _, factory = _REGISTRY[config.robot.type]
    arms, follower = factory(config.robot)
    node = RobotNode(
        arms, scene,
        control_rate_hz=config.robot.control_rate_hz,
        watchdog_timeout=config.robot.watchdog_timeout_s,
        follower_map=follower,
    )
    cam_configs = []
    for c in config.cameras:
        entry = calibration[c.id]
        cam_configs.append(CameraConfig(
            id=c.id, role=c.role, delay_us=c.delay_us,
            intrinsics=entry.intrinsics, extrinsic=entry.extrinsic,
            fps=c.fps, clock=c.clock,
        ))
    rig = CameraRig(cam_configs, lambda: node.scene, seed=seed)

    server_socket = None
    if bind_port:
        server_socket = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server_socket.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            server_socket.bind(("127.0.0.1", config.robot.port))
            server_socket.listen(4)
        except OSError as exc:
            server_socket.close()
            raise StartupError(
                f"port {config.robot.port} unavailable: {exc}") from exc

    scheduler = scheduler if scheduler is not None else EventScheduler()
    node.start(scheduler)
    rig.start(scheduler)
    return Workcell(config, scheduler, node, rig, calibration, server_socket)


def load_and_build(path, **kwargs) -> Workcell:
    return build(load_config(path), **kwargs)
