"""Teleoperation gateway: 6-axis input to Cartesian twists, state and
thumbnail broadcast, and episode record controls.

The core is transport-agnostic: connections are objects with a send callable
and the gateway never touches a socket. A thin FastAPI layer exposes the same
core over a websocket at /teleop and serves the browser console bundle.

Message envelope: JSON documents with a `type` field. Types: `hello`,
`welcome`, `input`, `state`, `thumb`, `record_start`, `record_stop`,
`record_status`, `error`. See docs/teleop_messages.md.
"""

from __future__ import annotations

import base64
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Twist
from .recorder import EpisodeRecorder, episode_meta_base
from .sim.robot import LocalClient, twist_to_joint_velocity
from .wire import GripperCommand, SpeedJCommand

log = logging.getLogger(__name__)

STATE_BROADCAST_HZ = 15.0
THUMB_BROADCAST_HZ = 5.0
COMMAND_CAP_HZ = 60.0
THUMB_WIDTH = 40
THUMB_HEIGHT = 30


@dataclass(frozen=True)
class TeleopGains:
    v_max: float
    w_max: float
    deadzone: float

    def __post_init__(self):
        if self.v_max <= 0 or self.w_max <= 0:
            raise ValueError("v_max and w_max must be positive")
        if not (0.0 <= self.deadzone < 1.0):
            raise ValueError("deadzone must lie in [0, 1)")


@dataclass(frozen=True)
class InputSample:
    axes: tuple  # tx, ty, tz, rx, ry, rz in [-1, 1]
    gripper_toggle: bool = False
    estop: bool = False

    def __post_init__(self):
        axes = tuple(min(1.0, max(-1.0, float(a))) for a in self.axes)
        if len(axes) != 6:
            raise ValueError("need exactly 6 axes")
        object.__setattr__(self, "axes", axes)


def map_input(sample: InputSample, gains: TeleopGains) -> Twist:
    """Deadzone-then-rescale per axis, continuous at the deadzone edge."""
    dz = gains.deadzone
    out = []
    for a in sample.axes:
        if abs(a) <= dz:
            out.append(0.0)
        else:
            out.append(np.sign(a) * (abs(a) - dz) / (1.0 - dz))
    scaled = np.array(out)
    return Twist(scaled[:3] * gains.v_max, scaled[3:] * gains.w_max)


def downscale_rgb(rgb: np.ndarray, width: int = THUMB_WIDTH,
                  height: int = THUMB_HEIGHT) -> np.ndarray:
    """Pure area-average downscale; frame dimensions must divide evenly."""
    h, w = rgb.shape[:2]
    if h % height or w % width:
        raise ValueError(f"{w}x{h} does not downscale evenly to {width}x{height}")
    fh, fw = h // height, w // width
    blocks = rgb.reshape(height, fh, width, fw, 3).astype(np.float64)
    return np.round(blocks.mean(axis=(1, 3))).astype(np.uint8)


class _Connection:
    def __init__(self, send):
        self.send = send
        self.operator = False

    def reply(self, doc: dict):
        try:
            self.send(json.dumps(doc))
        except Exception:
            log.exception("send failed; dropping connection payload")


class GatewayCore:
    """Transport-agnostic gateway state machine.

    One operator connection holds command authority; any number of observers
    receive the same broadcasts. Driven entirely by the workcell scheduler,
    so it behaves identically under the virtual clock and the wall clock.
    """

    def __init__(self, workcell, episodes_dir=None):
        self.workcell = workcell
        cfg = workcell.config
        self.gains = TeleopGains(cfg.input.v_max, cfg.input.w_max, cfg.input.deadzone)
        self.episodes_dir = Path(episodes_dir if episodes_dir is not None
                                 else cfg.recorder.output_dir)
        self.connections: list[_Connection] = []
        self.operator: _Connection | None = None
        self.client = LocalClient(workcell.node, workcell.scheduler)
        self.client.handshake(frequency_hz=workcell.node.control_rate_hz)
        self.gripper_closed = False
        self.last_command_t = -np.inf
        self.recorder: EpisodeRecorder | None = None
        self.episode_id = None
        self.episode_count = 0
        self._latest_frameset = None
        self._started = False
        workcell.rig.subscribe(self._on_frameset)

    # -- lifecycle ---------------------------------------------------------

    def start(self):
        """Schedule the periodic broadcasts on the workcell scheduler."""
        if self._started:
            return
        self._started = True
        self._schedule_periodic(STATE_BROADCAST_HZ, self._broadcast_state)
        self._schedule_periodic(THUMB_BROADCAST_HZ, self._broadcast_thumbs)

    def _schedule_periodic(self, hz: float, fn):
        sched = self.workcell.scheduler
        t0 = sched.now
        k = [0]

        def tick(_t):
            fn()
            k[0] += 1
            sched.call_at(t0 + k[0] / hz, tick)

        sched.call_at(t0 + 1.0 / hz, tick)
        k[0] = 1

    def connect(self, send) -> _Connection:
        conn = _Connection(send)
        self.connections.append(conn)
        return conn

    def disconnect(self, conn):
        if conn in self.connections:
            self.connections.remove(conn)
        if conn is self.operator:
            self.operator = None
            # No further commands arrive; the node watchdog holds the arm.
            if self.recorder is not None:
                self._abort_recording()

    # -- ingress -----------------------------------------------------------

    def handle_text(self, conn, text: str):
        try:
            doc = json.loads(text)
            if not isinstance(doc, dict) or "type" not in doc:
                raise ValueError("message must be an object with a 'type' field")
        except (json.JSONDecodeError, ValueError) as exc:
            conn.reply({"type": "error", "error": f"malformed message: {exc}"})
            return
        handler = getattr(self, f"_msg_{doc['type']}", None)
        if handler is None:
            conn.reply({"type": "error", "error": f"unknown message type {doc['type']!r}"})
            return
        try:
            handler(conn, doc)
        except (KeyError, TypeError, ValueError) as exc:
            conn.reply({"type": "error", "error": f"malformed {doc['type']}: {exc}"})

    def _require_operator(self, conn) -> bool:
        if self.operator is None:
            self.operator = conn
            conn.operator = True
        if conn is not self.operator:
            conn.reply({"type": "error", "error": "busy: another operator holds control"})
            return False
        return True

    def _msg_hello(self, conn, doc):
        role = doc.get("role", "observer")
        if role == "operator":
            if self.operator is not None and self.operator is not conn:
                conn.reply({"type": "error", "error": "busy: another operator holds control"})
                role = "observer"
            else:
                self.operator = conn
                conn.operator = True
        cfg = self.workcell.config
        conn.reply({
            "type": "welcome",
            "role": role,
            "workcell": cfg.name,
            "dof": cfg.robot.dof,
            "cameras": list(cfg.camera_ids),
            "spawn_region": list(cfg.scene.spawn_region),
            "fps": cfg.cameras[0].fps,
        })

    def _msg_input(self, conn, doc):
        if not self._require_operator(conn):
            return
        sample = InputSample(
            axes=tuple(doc["axes"]),
            gripper_toggle=bool(doc.get("gripper_toggle", False)),
            estop=bool(doc.get("estop", False)),
        )
        now = self.workcell.scheduler.now
        if sample.estop:
            self._send_zero_command()
            return
        if now - self.last_command_t < 1.0 / COMMAND_CAP_HZ - 1e-9:
            return
        self.last_command_t = now
        twist = map_input(sample, self.gains)
        node = self.workcell.node
        qd = np.zeros(node.dof)
        qd[-node.primary_arm.dof:] = twist_to_joint_velocity(
            node.primary_arm, node.primary_state.q,
            twist.linear, twist.angular, self.workcell.config.robot.ik_damping)
        accel = float(np.min(self.workcell.config.robot.qdd_max))
        self.client.send(SpeedJCommand(tuple(qd), accel, valid_for=0.2))
        if sample.gripper_toggle:
            self.gripper_closed = not self.gripper_closed
            self.client.send(GripperCommand("close" if self.gripper_closed else "open"))

    def _msg_record_start(self, conn, doc):
        if not self._require_operator(conn):
            return
        if self.recorder is not None:
            conn.reply({"type": "error", "error": "already recording"})
            return
        cfg = self.workcell.config
        self.episode_id = doc.get("episode_id") or f"ep{self.episode_count:04d}"
        meta_base = episode_meta_base(self.workcell, self.episode_id)
        self.recorder = EpisodeRecorder(
            self.episodes_dir / self.episode_id, meta_base,
            queue_capacity=cfg.recorder.frameset_queue)
        self.workcell.rig.subscribe(self.recorder.on_frameset)
        self.workcell.node.add_state_listener(self.recorder.on_state)
        self._send_record_status(conn)

    def _msg_record_stop(self, conn, doc):
        if not self._require_operator(conn):
            return
        if self.recorder is None:
            conn.reply({"type": "error", "error": "not recording"})
            return
        rec = self.recorder
        self._detach_recorder()
        try:
            meta = rec.finish()
        except Exception as exc:
            log.exception("episode %s failed to finalize", self.episode_id)
            self.episode_id = None
            conn.reply({"type": "error", "error": f"episode aborted: {exc}"})
            self._send_record_status(conn)
            return
        self.episode_count += 1
        self.episode_id = None
        self._send_record_status(conn, last_meta=meta)

    def _msg_record_status(self, conn, doc):
        self._send_record_status(conn)

    # -- recording helpers -------------------------------------------------

    def _detach_recorder(self):
        self.workcell.rig.unsubscribe(self.recorder.on_frameset)
        self.workcell.node.remove_state_listener(self.recorder.on_state)
        self.recorder = None

    def _abort_recording(self):
        rec = self.recorder
        self._detach_recorder()
        rec.abort()
        self.episode_id = None

    def _send_record_status(self, conn=None, last_meta=None):
        doc = {
            "type": "record_status",
            "active": self.recorder is not None,
            "episode_id": self.episode_id,
            "frameset_count": (len(self.recorder.framesets)
                               if self.recorder is not None else 0),
            "episode_count": self.episode_count,
        }
        if last_meta is not None:
            doc["last_episode"] = {
                "episode_id": last_meta.episode_id,
                "frameset_count": last_meta.frameset_count,
                "dropped_framesets": last_meta.dropped_framesets,
            }
        targets = self.connections if conn is None else [conn]
        for c in targets:
            c.reply(doc)

    # -- egress ------------------------------------------------------------

    def _on_frameset(self, frameset):
        if not frameset.partial:
            self._latest_frameset = frameset

    def _send_zero_command(self):
        node = self.workcell.node
        accel = float(np.min(self.workcell.config.robot.qdd_max))
        self.client.send(SpeedJCommand((0.0,) * node.dof, accel, valid_for=0.05))

    def _broadcast_state(self):
        snap = self.workcell.node.snapshot()
        doc = {
            "type": "state",
            "t": self.workcell.scheduler.now,
            "q": list(snap.q),
            "qd": list(snap.qd),
            "ee_pose": list(snap.ee_pose),
            "gripper": snap.gripper,
            "recording": {
                "active": self.recorder is not None,
                "episode_id": self.episode_id,
                "frameset_count": (len(self.recorder.framesets)
                                   if self.recorder is not None else 0),
            },
        }
        for c in list(self.connections):
            c.reply(doc)

    def _broadcast_thumbs(self):
        fs = self._latest_frameset
        if fs is None:
            return
        for cid in sorted(fs.frames):
            thumb = downscale_rgb(fs.frames[cid].rgb)
            doc = {
                "type": "thumb",
                "camera_id": cid,
                "trigger_seq": fs.trigger_seq,
                "width": thumb.shape[1],
                "height": thumb.shape[0],
                "data": base64.b64encode(thumb.tobytes()).decode("ascii"),
            }
            for c in list(self.connections):
                c.reply(doc)


# --- websocket transport ---------------------------------------------------

def create_app(workcell, episodes_dir=None, console_dir=None):
    """FastAPI app exposing the gateway at /teleop and the console at /."""
    from fastapi import FastAPI
    from starlette.routing import WebSocketRoute
    from starlette.websockets import WebSocketDisconnect

    app = FastAPI(title="workcell teleop gateway")
    core = GatewayCore(workcell, episodes_dir=episodes_dir)
    core.start()
    app.state.core = core

    async def teleop(ws):
        await ws.accept()
        import anyio

        send_stream, recv_stream = anyio.create_memory_object_stream(64)

        def send(text):
            try:
                send_stream.send_nowait(text)
            except anyio.WouldBlock:
                pass  # slow consumer: drop broadcast rather than stall the sim

        conn = core.connect(send)

        async def pump():
            async for text in recv_stream:
                await ws.send_text(text)

        try:
            async with anyio.create_task_group() as tg:
                tg.start_soon(pump)
                try:
                    while True:
                        text = await ws.receive_text()
                        core.handle_text(conn, text)
                except WebSocketDisconnect:
                    pass
                finally:
                    tg.cancel_scope.cancel()
        finally:
            core.disconnect(conn)
            await send_stream.aclose()

    app.router.routes.append(WebSocketRoute("/teleop", teleop))

    if console_dir is not None and Path(console_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=console_dir, html=True), name="console")
    return app


def gateway_serve(workcell, port: int = 8800, episodes_dir=None, console_dir=None):
    """Run the gateway on the wall clock; blocks until interrupted."""
    import uvicorn

    from .sim.clock import WallClockDriver

    app = create_app(workcell, episodes_dir=episodes_dir, console_dir=console_dir)
    driver = WallClockDriver(workcell.scheduler)
    driver.start()
    try:
        uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")
    finally:
        driver.stop()
