"""Simulated velocity-controlled robot nodes serving the wire protocol.

Two node flavors share one implementation: a single 6-dof arm with gripper,
and a bimanual pair where the commanded arm leads and the other follows a
per-joint affine map. Motion integration is exact for piecewise-constant
acceleration: inside one control step, velocity ramps toward its target at
the acceleration limit and position integrates the resulting trapezoid
analytically, so the discrete trace matches the continuous ramp.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import DimensionError, ProtocolError
from ..geometry import (
    DHParams,
    Pose,
    compose,
    dls_velocity_ik,
    fk,
    jacobian,
    quat_conjugate,
    quat_rotate,
)
from ..wire import (
    DEFAULT_WATCHDOG_TIMEOUT,
    ErrorMessage,
    GripperCommand,
    MessageEvent,
    Phase,
    SessionState,
    SpeedJCommand,
    TickEvent,
    Watchdog,
    WatchdogVerdict,
    session_step,
)
from . import scene as scene_mod

GRIPPER_SLEW_RATE = 2.0  # aperture units per second
FOLLOWER_KP = 10.0  # 1/s, proportional position-tracking gain


@dataclass(frozen=True)
class ArmModel:
    dh: DHParams
    q_min: np.ndarray
    q_max: np.ndarray
    qd_max: np.ndarray
    qdd_max: np.ndarray
    base_pose: Pose
    home_q: np.ndarray

    def __post_init__(self):
        for name in ("q_min", "q_max", "qd_max", "qdd_max", "home_q"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.dh.dof
        for name in ("q_min", "q_max", "qd_max", "qdd_max", "home_q"):
            if getattr(self, name).shape != (n,):
                raise DimensionError(f"{name} must have {n} entries")
        if np.any(self.q_min >= self.q_max):
            raise ValueError("q_min must be below q_max elementwise")
        if np.any(self.qd_max <= 0) or np.any(self.qdd_max <= 0):
            raise ValueError("velocity and acceleration limits must be positive")

    @property
    def dof(self) -> int:
        return self.dh.dof

    def ee_pose(self, q) -> Pose:
        return compose(self.base_pose, fk(self.dh, q))


@dataclass(frozen=True)
class ArmState:
    q: np.ndarray
    qd: np.ndarray
    gripper: float
    t: float

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "qd", np.asarray(self.qd, dtype=float))


def step(model: ArmModel, state: ArmState, cmd, dt: float) -> ArmState:
    """Advance one control period toward the commanded joint velocities.

    cmd is a SpeedJCommand or None (treated as target 0 at the model's
    acceleration limit). Joint limits clamp position and zero the velocity at
    the stop. Pure and deterministic.
    """
    if not (0.0 < dt <= 0.05):
        raise ValueError("dt must lie in (0, 0.05]")
    n = model.dof
    if cmd is None:
        target = np.zeros(n)
        accel = model.qdd_max
    else:
        target = np.asarray(cmd.qd_target, dtype=float)
        if target.shape != (n,):
            raise DimensionError(f"command dof {target.shape[0]} != model dof {n}")
        target = np.clip(target, -model.qd_max, model.qd_max)
        accel = np.minimum(np.full(n, float(cmd.accel)), model.qdd_max)

    qd0 = state.qd
    delta = target - qd0
    t_ramp = np.minimum(dt, np.abs(delta) / np.maximum(accel, 1e-300))
    qd1 = qd0 + np.sign(delta) * accel * t_ramp
    # Exact integral of the piecewise-linear velocity profile.
    dq = qd0 * t_ramp + 0.5 * np.sign(delta) * accel * t_ramp**2 + qd1 * (dt - t_ramp)

    q1 = state.q + dq
    low = q1 <= model.q_min
    high = q1 >= model.q_max
    q1 = np.clip(q1, model.q_min, model.q_max)
    qd1 = np.where(low & (qd1 < 0), 0.0, qd1)
    qd1 = np.where(high & (qd1 > 0), 0.0, qd1)
    return ArmState(q=q1, qd=qd1, gripper=state.gripper, t=state.t + dt)


def apply_gripper(state: ArmState, target: str, dt: float) -> ArmState:
    """Slew the gripper aperture toward open (1) or close (0)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    goal = 1.0 if target == "open" else 0.0
    delta = np.clip(goal - state.gripper, -GRIPPER_SLEW_RATE * dt, GRIPPER_SLEW_RATE * dt)
    return replace(state, gripper=float(np.clip(state.gripper + delta, 0.0, 1.0)))


@dataclass(frozen=True)
class FollowerMap:
    """Per-joint affine coupling follower_q = sign * leader_q + offset."""

    sign: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sign", np.asarray(self.sign, dtype=float))
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float))
        if self.sign.shape != self.offset.shape:
            raise DimensionError("sign and offset must have equal length")
        if not np.all(np.abs(self.sign) == 1.0):
            raise ValueError("sign entries must be +-1")

    def inverse(self) -> "FollowerMap":
        # q' = s q + o  =>  q = s q' - s o  (s is its own inverse)
        return FollowerMap(self.sign, -self.sign * self.offset)


def leader_follower(leader_q, fmap: FollowerMap) -> np.ndarray:
    leader_q = np.asarray(leader_q, dtype=float)
    if leader_q.shape != fmap.sign.shape:
        raise DimensionError("leader joint count does not match follower map")
    return fmap.sign * leader_q + fmap.offset


class _Session:
    """One protocol connection attached to a node."""

    def __init__(self, node, send):
        self.node = node
        self.state = SessionState()
        self.send = send

    def deliver(self, msgs):
        for m in msgs:
            self.send(m)


class _Snapshot:
    __slots__ = ("q", "qd", "ee_pose", "gripper")

    def __init__(self, q, qd, ee_pose, gripper):
        self.q = q
        self.qd = qd
        self.ee_pose = ee_pose
        self.gripper = gripper


class RobotNode:
    """Control loop owning arm state, scene, sessions, and the watchdog.

    For a bimanual node, arms = [left, right]; the wire-visible joint vector
    is left then right (dof = 2n). The right arm is the commanded/grasping
    arm; when a follower map is set, the left arm position-tracks the mapped
    right-arm trajectory and the left half of incoming commands is ignored.
    """

    def __init__(self, arms, scene, control_rate_hz: float = 125.0,
                 watchdog_timeout: float = DEFAULT_WATCHDOG_TIMEOUT,
                 follower_map: FollowerMap | None = None):
        if not (50.0 <= control_rate_hz <= 1000.0):
            raise ValueError("control rate must lie in [50, 1000] Hz")
        if len(arms) == 2 and arms[0].dof != arms[1].dof:
            raise DimensionError("bimanual arms must have equal dof")
        self.arms = list(arms)
        self.scene = scene
        self.control_rate_hz = control_rate_hz
        self.dt = 1.0 / control_rate_hz
        self.follower_map = follower_map
        self.states = [ArmState(q=a.home_q.copy(), qd=np.zeros(a.dof), gripper=1.0, t=0.0)
                       for a in self.arms]
        self.watchdog = Watchdog(watchdog_timeout)
        self.command: SpeedJCommand | None = None
        self.command_time = -np.inf
        self.gripper_target = "open"
        self.sessions: list[_Session] = []
        self.command_session: _Session | None = None
        self.collision = False
        self.safe_stopped = False
        self._state_listeners = []

    # -- topology ----------------------------------------------------------

    @property
    def dof(self) -> int:
        return sum(a.dof for a in self.arms)

    @property
    def primary_arm(self) -> ArmModel:
        return self.arms[-1]

    @property
    def primary_state(self) -> ArmState:
        return self.states[-1]

    def ee_pose(self) -> Pose:
        return self.primary_arm.ee_pose(self.primary_state.q)

    def joint_vector(self) -> np.ndarray:
        return np.concatenate([s.q for s in self.states])

    def joint_velocity_vector(self) -> np.ndarray:
        return np.concatenate([s.qd for s in self.states])

    def snapshot(self) -> _Snapshot:
        return _Snapshot(
            q=tuple(self.joint_vector()),
            qd=tuple(self.joint_velocity_vector()),
            ee_pose=tuple(self.ee_pose().as_vector()),
            gripper=self.primary_state.gripper,
        )

    def reset(self, t: float = 0.0):
        self.states = [ArmState(q=a.home_q.copy(), qd=np.zeros(a.dof), gripper=1.0, t=t)
                       for a in self.arms]
        self.command = None
        self.command_time = -np.inf
        self.gripper_target = "open"
        self.collision = False
        self.safe_stopped = False
        self.watchdog = Watchdog(self.watchdog.timeout, now=t)

    def add_state_listener(self, fn):
        """fn(t, snapshot) invoked after every control tick."""
        self._state_listeners.append(fn)

    def remove_state_listener(self, fn):
        self._state_listeners.remove(fn)

    # -- protocol ----------------------------------------------------------

    def attach_session(self, send) -> _Session:
        s = _Session(self, send)
        self.sessions.append(s)
        return s

    def detach_session(self, session):
        if session in self.sessions:
            self.sessions.remove(session)
        if session is self.command_session:
            self.command_session = None
            self.command = None  # lost the operator: decelerate and hold

    def handle_message(self, session: _Session, msg, now: float):
        session.state, out, actions = session_step(session.state, MessageEvent(msg, now))
        session.deliver(out)
        for action in actions:
            kind = action[0]
            if kind in ("command", "gripper"):
                self._handle_command(session, action[1], now)
            elif kind in ("protocol_error", "stopped", "peer_error"):
                self.detach_session(session)

    def _handle_command(self, session, msg, now: float):
        if self.command_session is None:
            self.command_session = session
        if session is not self.command_session:
            session.send(ErrorMessage("busy: another session holds command authority"))
            return
        self.watchdog.command_received(now)
        self.safe_stopped = False
        if isinstance(msg, GripperCommand):
            self.gripper_target = msg.target
            return
        if len(msg.qd_target) != self.dof:
            session.send(ErrorMessage(f"command dof {len(msg.qd_target)} != {self.dof}"))
            return
        self.command = msg
        self.command_time = now

    # -- control loop ------------------------------------------------------

    def start(self, scheduler, t0: float = None):
        """Schedule the periodic control tick on the given scheduler."""
        t0 = scheduler.now if t0 is None else t0
        counter = {"k": 1}

        def tick(t):
            self.tick(t)
            counter["k"] += 1
            # k/rate keeps tick times exact at integer seconds; accumulating
            # t + dt drifts and drops the final tick of a run.
            scheduler.call_at(t0 + counter["k"] / self.control_rate_hz, tick, priority=0)

        scheduler.call_at(t0 + 1.0 / self.control_rate_hz, tick, priority=0)

    def tick(self, t: float):
        if self.watchdog.check(t) is WatchdogVerdict.SAFE_STOP:
            self.command = None
            self.safe_stopped = True
        cmd = self.command
        if cmd is not None and t - self.command_time > cmd.valid_for:
            cmd = None

        targets = self._split_command(cmd)
        new_states = []
        for arm, st, sub in zip(self.arms, self.states, targets):
            new_states.append(step(arm, st, sub, self.dt))
        self.states = new_states
        self.states[-1] = apply_gripper(self.states[-1], self.gripper_target, self.dt)

        ee = self.ee_pose()
        self.scene = scene_mod.update_attachment(self.scene, ee.position, self.primary_state.gripper)
        if scene_mod.is_collision(self.scene, ee.position):
            self.collision = True

        snap = self.snapshot()
        for session in self.sessions:
            if session.state.phase is Phase.STREAMING:
                session.state, out, _ = session_step(session.state, TickEvent(t, snap))
                session.deliver(out)
        for fn in self._state_listeners:
            fn(t, snap)

    def _split_command(self, cmd):
        """Map one wire command onto per-arm speedj commands."""
        if len(self.arms) == 1:
            return [cmd]
        n = self.arms[0].dof
        right_cmd = None
        if cmd is not None:
            tgt = np.asarray(cmd.qd_target, dtype=float)
            right_cmd = SpeedJCommand(tuple(tgt[n:]), cmd.accel, cmd.valid_for)
        if self.follower_map is not None:
            # Left arm position-tracks the mapped right-arm configuration.
            target_q = leader_follower(self.states[1].q, self.follower_map)
            qd = FOLLOWER_KP * (target_q - self.states[0].q)
            qd = np.clip(qd, -self.arms[0].qd_max, self.arms[0].qd_max)
            left_cmd = SpeedJCommand(tuple(qd), float(np.max(self.arms[0].qdd_max)), 1.0)
        elif cmd is not None:
            tgt = np.asarray(cmd.qd_target, dtype=float)
            left_cmd = SpeedJCommand(tuple(tgt[:n]), cmd.accel, cmd.valid_for)
        else:
            left_cmd = None
        return [left_cmd, right_cmd]


def twist_to_joint_velocity(arm: ArmModel, q, linear, angular, damping: float) -> np.ndarray:
    """Map a world-frame twist to this arm's joint velocities with damped IK."""
    rot = quat_conjugate(arm.base_pose.orientation)
    v = np.concatenate([quat_rotate(rot, np.asarray(linear, dtype=float)),
                        quat_rotate(rot, np.asarray(angular, dtype=float))])
    return dls_velocity_ik(jacobian(arm.dh, np.asarray(q, dtype=float)), v, damping)


class LocalClient:
    """In-process client endpoint for a node session; used by the recorder,
    the rollout executor, and tests. Messages arrive in `inbox`."""

    def __init__(self, node: RobotNode, scheduler):
        self.node = node
        self.scheduler = scheduler
        self.inbox = []
        self.states = []
        self.session = node.attach_session(self._receive)

    def _receive(self, msg):
        self.inbox.append(msg)
        from ..wire import StatePacket

        if isinstance(msg, StatePacket):
            self.states.append(msg)

    def send(self, msg):
        self.node.handle_message(self.session, msg, self.scheduler.now)

    def handshake(self, frequency_hz: float = 125.0, fields=("q", "qd", "ee_pose", "gripper")):
        from ..wire import Hello, Start, Subscribe

        self.send(Hello())
        self.send(Subscribe(frequency_hz, fields))
        self.send(Start())

    def close(self):
        self.node.detach_session(self.session)
