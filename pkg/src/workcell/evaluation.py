"""Policy interface, scripted grasp-and-lift policy, rollouts, evaluation.

A policy is anything with an `action_space` attribute and a
`__call__(Observation) -> Action`. The rollout executor drives the workcell
on its virtual clock: each aligned frameset becomes an Observation, the
policy's Action is converted to a wire command, and the trial ends on task
success, collision, or timeout. `evaluate` repeats trials with seeds
base_seed + i and writes `eval_report.json`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NoTargetError, ValidationError
from .perception import fuse, locate_block
from .sim.robot import LocalClient, twist_to_joint_velocity
from .sim.scene import check_success, spawn_block
from .wire import GripperCommand, SpeedJCommand

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 20.0
FAILURE_MODES = ("none", "no_grasp", "dropped", "collision", "timeout")


@dataclass(frozen=True)
class JointVelocity:
    qd: tuple

    def __post_init__(self):
        object.__setattr__(self, "qd", tuple(float(x) for x in self.qd))


@dataclass(frozen=True)
class EeTwist:
    linear: tuple  # m/s, world frame
    angular: tuple  # rad/s

    def __post_init__(self):
        object.__setattr__(self, "linear", tuple(float(x) for x in self.linear))
        object.__setattr__(self, "angular", tuple(float(x) for x in self.angular))


@dataclass(frozen=True)
class Action:
    motion: object  # JointVelocity | EeTwist
    gripper: str = "hold"  # open | close | hold

    def __post_init__(self):
        if self.gripper not in ("open", "close", "hold"):
            raise ValueError(f"gripper action {self.gripper!r}")


@dataclass(frozen=True)
class Observation:
    state: object  # snapshot: q, qd, ee_pose, gripper
    cloud: object  # PointCloud
    master_ts: float
    trigger_seq: int


@dataclass(frozen=True)
class RolloutResult:
    success: bool
    failure_mode: str
    duration_s: float
    seed: int
    trace: tuple = field(repr=False, default=())

    def __post_init__(self):
        if self.failure_mode not in FAILURE_MODES:
            raise ValueError(f"failure mode {self.failure_mode!r}")
        if self.success and self.failure_mode != "none":
            raise ValueError("success implies failure_mode none")
        if not self.success and self.failure_mode == "none":
            raise ValueError("failure requires a failure mode")


@dataclass(frozen=True)
class EvalReport:
    n_trials: int
    n_success: int
    success_rate: float
    seed: int
    config_hash: str
    policy_id: str
    results: tuple

    def to_json(self) -> str:
        doc = {
            "n_trials": self.n_trials,
            "n_success": self.n_success,
            "success_rate": self.success_rate,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "policy_id": self.policy_id,
            "trials": [
                {
                    "seed": r.seed,
                    "success": r.success,
                    "failure_mode": r.failure_mode,
                    "duration_s": round(r.duration_s, 6),
                }
                for r in self.results
            ],
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"


class NullPolicy:
    """Commands nothing; the baseline that must time out with no_grasp."""

    def __init__(self, action_space: str = "joint_velocity", dof: int = 6):
        self.action_space = action_space
        self.dof = dof

    def __call__(self, obs: Observation) -> Action:
        if self.action_space == "joint_velocity":
            return Action(JointVelocity((0.0,) * self.dof), "hold")
        return Action(EeTwist((0.0,) * 3, (0.0,) * 3), "hold")


class ScriptedGraspLift:
    """Finite-state grasp-and-lift controller driven by perception only.

    Phases: APPROACH above the block, DESCEND to grasp height, GRASP until
    the gripper reports closed, LIFT clear of the table, DONE. The block
    position is re-estimated from the fused cloud every step; a perception
    miss holds position and retries on the next frameset.
    """

    APPROACH, DESCEND, GRASP, LIFT, DONE = "APPROACH", "DESCEND", "GRASP", "LIFT", "DONE"
    GAIN = 1.5  # proportional gain, 1/s
    APPROACH_HEIGHT = 0.15
    LIFT_HEIGHT = 0.12
    DONE_HEIGHT = 0.10
    XY_TOL = 0.01
    Z_TOL = 0.02

    def __init__(self, workcell, action_space: str = None):
        cfg = workcell.config
        self.action_space = action_space or cfg.robot.action_space
        self.arm = workcell.node.primary_arm
        self.node_dof = workcell.node.dof
        self.arm_dof = self.arm.dof
        self.table = cfg.scene.table_height
        self.grasp_z = self.table + float(cfg.scene.block_half_extents[2])
        self.close_threshold = cfg.scene.grasp.close_threshold
        self.v_max = cfg.input.v_max
        self.w_max = cfg.input.w_max
        self.ik_damping = cfg.robot.ik_damping
        self.phase = self.APPROACH
        self.block_xy = None

    def _velocity(self, ee, target):
        v = self.GAIN * (np.asarray(target) - np.asarray(ee))
        n = np.linalg.norm(v)
        if n > self.v_max:
            v *= self.v_max / n
        return v

    def __call__(self, obs: Observation) -> Action:
        ee = np.asarray(obs.state.ee_pose[:3])
        gripper = obs.state.gripper
        try:
            est = locate_block(obs.cloud, self.table)
            self.block_xy = est[:2]
        except NoTargetError:
            if self.phase in (self.APPROACH, self.DESCEND):
                return self._act(np.zeros(3), "hold", obs)

        if self.phase == self.APPROACH:
            target = np.array([self.block_xy[0], self.block_xy[1],
                               self.table + self.APPROACH_HEIGHT])
            if (np.linalg.norm(ee[:2] - self.block_xy) < self.XY_TOL
                    and abs(ee[2] - target[2]) < self.Z_TOL):
                self.phase = self.DESCEND
            return self._act(self._velocity(ee, target), "open", obs)
        if self.phase == self.DESCEND:
            target = np.array([self.block_xy[0], self.block_xy[1], self.grasp_z])
            if np.linalg.norm(ee - target) < self.XY_TOL:
                self.phase = self.GRASP
                return self._act(np.zeros(3), "close", obs)
            return self._act(self._velocity(ee, target), "open", obs)
        if self.phase == self.GRASP:
            if gripper <= self.close_threshold:
                self.phase = self.LIFT
            return self._act(np.zeros(3), "close", obs)
        if self.phase == self.LIFT:
            if ee[2] >= self.table + self.DONE_HEIGHT:
                self.phase = self.DONE
                return self._act(np.zeros(3), "close", obs)
            target = np.array([ee[0], ee[1], self.table + self.LIFT_HEIGHT])
            return self._act(self._velocity(ee, target), "close", obs)
        return self._act(np.zeros(3), "close", obs)

    def _act(self, v, gripper, obs) -> Action:
        if self.action_space == "ee_twist":
            return Action(EeTwist(tuple(v), (0.0, 0.0, 0.0)), gripper)
        qd = twist_to_joint_velocity(
            self.arm, np.asarray(obs.state.q[-self.arm_dof:]),
            v, np.zeros(3), self.ik_damping)
        full = np.zeros(self.node_dof)
        full[-self.arm_dof:] = qd
        return Action(JointVelocity(tuple(full)), gripper)


def _rollout_grid(fps: float, control_rate_hz: float, now: float):
    """Frame-grid anchor for a rollout start.

    Returns (start_frame_index, frames_per_grid_step) where the grid step is
    the smallest interval holding a whole number of frame and control
    periods. Starting on that grid, with chunk boundaries computed as exact
    frame-index divisions, makes a trial's trajectory depend only on the
    seed, not on how much virtual time already elapsed.
    """
    from fractions import Fraction
    from math import ceil, gcd

    fa = Fraction(fps).limit_denominator(1000)
    fb = Fraction(control_rate_hz).limit_denominator(1000)
    g = Fraction(gcd(fa.numerator * fb.denominator, fb.numerator * fa.denominator),
                 fa.denominator * fb.denominator)  # common grid frequency, Hz
    frames_per_step = fa / g
    if frames_per_step.denominator != 1:
        frames_per_step = Fraction(int(fa))
    m0 = ceil(now * float(g) - 1e-9)
    return m0 * int(frames_per_step), int(frames_per_step)


def run_rollout(workcell, policy, seed: int,
                max_duration_s: float = DEFAULT_TIMEOUT_S,
                recorder=None) -> RolloutResult:
    """One trial: spawn block with seed, reset home, run the policy to success,
    collision, or timeout. An EpisodeRecorder, if given, captures the trial;
    the caller finalizes it."""
    expected = workcell.config.robot.action_space
    if getattr(policy, "action_space", None) != expected:
        raise ValidationError(
            [f"policy action space {getattr(policy, 'action_space', None)!r} "
             f"does not match workcell action space {expected!r}"])

    node = workcell.node
    sched = workcell.scheduler
    fps = workcell.config.cameras[0].fps
    j0, _ = _rollout_grid(fps, node.control_rate_hz, sched.now)
    start = j0 / fps
    if start > sched.now:
        sched.run_until(start)
    node.scene = spawn_block(node.scene, seed)
    node.reset(t=start)

    client = LocalClient(node, sched)
    client.handshake(frequency_hz=node.control_rate_hz)
    frame_period = 1.0 / fps
    accel = float(np.min(workcell.config.robot.qdd_max))

    trace = []
    ever_attached = [False]
    policy_error = [False]
    active = [True]

    def on_frameset(fs):
        if not active[0] or fs.partial:
            return
        # A frameset triggered at the reset instant can mix captures of the
        # previous trial's scene with the freshly spawned one; skip it.
        if fs.master_ts < start + 0.5 * frame_period:
            return
        snap = node.snapshot()
        cloud = fuse(fs, workcell.calibration)
        obs = Observation(state=snap, cloud=cloud,
                          master_ts=fs.master_ts, trigger_seq=fs.trigger_seq)
        try:
            action = policy(obs)
        except Exception:
            log.exception("policy raised during rollout (seed %d)", seed)
            policy_error[0] = True
            active[0] = False
            return
        if isinstance(action.motion, EeTwist):
            if expected != "ee_twist":
                raise ValidationError(["EeTwist action on a joint_velocity workcell"])
            qd = np.zeros(node.dof)
            qd[-node.primary_arm.dof:] = twist_to_joint_velocity(
                node.primary_arm, node.primary_state.q,
                action.motion.linear, action.motion.angular,
                workcell.config.robot.ik_damping)
            speed = np.linalg.norm(action.motion.linear)
        else:
            if expected != "joint_velocity":
                raise ValidationError(["JointVelocity action on an ee_twist workcell"])
            qd = np.asarray(action.motion.qd)
            speed = None
        client.send(SpeedJCommand(tuple(qd), accel, valid_for=4 * frame_period))
        if action.gripper != "hold":
            client.send(GripperCommand(action.gripper))
        trace.append({
            "t": fs.master_ts - start,
            "trigger_seq": fs.trigger_seq,
            "ee_z": float(snap.ee_pose[2]),
            "gripper": float(snap.gripper),
            "linear_speed": None if speed is None else float(speed),
            "gripper_cmd": action.gripper,
            "phase": getattr(policy, "phase", None),
        })

    def record_frameset(fs):
        if fs.master_ts < start + 0.5 * frame_period:
            return
        recorder.on_frameset(fs)

    workcell.rig.subscribe(on_frameset)
    if recorder is not None:
        workcell.rig.subscribe(record_frameset)
        node.add_state_listener(recorder.on_state)

    outcome = None
    # Chunk boundaries are exact frame-index divisions so that, at coincident
    # instants, they compare equal to the scheduler's own event times.
    last_frame = j0 + int(np.ceil(max_duration_s * fps - 1e-9))
    j = j0
    while outcome is None:
        j += 1
        sched.run_until(j / fps)
        if ever_attached[0] is False and node.scene.attached:
            ever_attached[0] = True
        if check_success(node.scene):
            outcome = ("success", "none")
        elif node.collision:
            outcome = ("failure", "collision")
        elif policy_error[0]:
            outcome = ("failure", "timeout")
        elif j >= last_frame:
            outcome = ("failure", "dropped" if ever_attached[0] else "no_grasp")

    active[0] = False
    client.close()
    workcell.rig.unsubscribe(on_frameset)
    if recorder is not None:
        workcell.rig.unsubscribe(record_frameset)
        node.remove_state_listener(recorder.on_state)
    return RolloutResult(
        success=outcome[0] == "success",
        failure_mode=outcome[1],
        duration_s=(j - j0) / fps,
        seed=seed,
        trace=tuple(trace),
    )


def evaluate(workcell, policy_factory, n_trials: int, base_seed: int,
             out_path=None, policy_id: str = "scripted",
             max_duration_s: float = DEFAULT_TIMEOUT_S) -> EvalReport:
    """Sequential trials with seeds base_seed + i; report optionally written."""
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    results = []
    for i in range(n_trials):
        policy = policy_factory() if callable(policy_factory) and not hasattr(
            policy_factory, "action_space") else policy_factory
        results.append(run_rollout(workcell, policy, base_seed + i, max_duration_s))
    n_success = sum(r.success for r in results)
    report = EvalReport(
        n_trials=n_trials, n_success=n_success,
        success_rate=n_success / n_trials,
        seed=base_seed, config_hash=workcell.hash_hex,
        policy_id=policy_id, results=tuple(results),
    )
    if out_path is not None:
        Path(out_path).write_text(report.to_json(), encoding="utf-8")
    return report


def record_demonstrations(workcell, out_dir, n_episodes: int, base_seed: int,
                          policy_factory=None,
                          max_duration_s: float = DEFAULT_TIMEOUT_S):
    """Collect scripted demonstrations into a dataset directory.

    Each trial gets its own episode directory ep0000, ep0001, ... under
    out_dir; failed trials are discarded and noted. A dataset.json index
    covering the kept episodes is written at the end. Returns
    (episode_dirs, results).
    """
    from .recorder import EpisodeRecorder, episode_meta_base, write_dataset_index

    if n_episodes < 1:
        raise ValueError("n_episodes must be at least 1")
    if policy_factory is None:
        policy_factory = lambda: ScriptedGraspLift(workcell)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    episode_dirs = []
    results = []
    for i in range(n_episodes):
        episode_id = f"ep{i:04d}"
        recorder = EpisodeRecorder(out_dir / episode_id,
                                   episode_meta_base(workcell, episode_id))
        result = run_rollout(workcell, policy_factory(), base_seed + i,
                             max_duration_s, recorder=recorder)
        results.append(result)
        if result.success:
            recorder.finish()
            episode_dirs.append(out_dir / episode_id)
        else:
            log.warning("demonstration %s failed (%s), discarding",
                        episode_id, result.failure_mode)
            recorder.abort()
    write_dataset_index(out_dir, episode_dirs, workcell.hash_hex)
    return episode_dirs, results
