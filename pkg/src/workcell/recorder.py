"""Episodic recording: state resampling, bit-exact episode files, sessions.

An episode directory holds `meta.json`, `robot_states.bin`, and one
`frames_<camera>.bin` per camera; a dataset is a directory of episodes plus
`dataset.json`. Tracks are raw little-endian binary so golden tests can be
byte-exact and reading needs no codecs.

Robot state is resampled to the camera timestamps: the protocol streams at
125 Hz while cameras run at 30 fps, and the episode stores one state record
per frameset (linear interpolation; spherical for orientation; zero-order
hold for the gripper).
"""

from __future__ import annotations

import json
import shutil
import struct
from bisect import bisect_left
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import CorruptEpisodeError, FormatError, StateGapError, WriteError
from .geometry import quat_slerp

FORMAT_VERSION = 1
STATE_MAGIC = b"EPRS"
FRAMES_MAGIC = b"EPDF"
MAX_STATE_GAP_S = 0.1


@dataclass(frozen=True)
class RobotStateRecord:
    trigger_seq: int
    master_ts: float
    q: tuple
    qd: tuple
    ee_pose: tuple
    gripper: float

    def __post_init__(self):
        object.__setattr__(self, "q", tuple(float(x) for x in self.q))
        object.__setattr__(self, "qd", tuple(float(x) for x in self.qd))
        object.__setattr__(self, "ee_pose", tuple(float(x) for x in self.ee_pose))
        if len(self.ee_pose) != 7:
            raise ValueError("ee_pose must have 7 entries")

    @property
    def dof(self) -> int:
        return len(self.q)


@dataclass(frozen=True)
class EpisodeMeta:
    episode_id: str
    workcell_name: str
    config_hash: str  # 16 hex chars
    dof: int
    camera_ids: tuple
    camera_resolutions: dict  # id -> [width, height]
    camera_fps: float
    start_time: str  # ISO-8601
    frameset_count: int
    dropped_framesets: int
    format_version: int = FORMAT_VERSION

    def to_json(self) -> str:
        d = {
            "episode_id": self.episode_id,
            "workcell_name": self.workcell_name,
            "config_hash": self.config_hash,
            "dof": self.dof,
            "camera_ids": list(self.camera_ids),
            "camera_resolutions": {k: list(v) for k, v in self.camera_resolutions.items()},
            "camera_fps": self.camera_fps,
            "start_time": self.start_time,
            "frameset_count": self.frameset_count,
            "dropped_framesets": self.dropped_framesets,
            "format_version": self.format_version,
        }
        return json.dumps(d, sort_keys=True, indent=2) + "\n"

    @staticmethod
    def from_json(text: str) -> "EpisodeMeta":
        d = json.loads(text)
        return EpisodeMeta(
            episode_id=d["episode_id"],
            workcell_name=d["workcell_name"],
            config_hash=d["config_hash"],
            dof=d["dof"],
            camera_ids=tuple(d["camera_ids"]),
            camera_resolutions={k: tuple(v) for k, v in d["camera_resolutions"].items()},
            camera_fps=d["camera_fps"],
            start_time=d["start_time"],
            frameset_count=d["frameset_count"],
            dropped_framesets=d["dropped_framesets"],
            format_version=d["format_version"],
        )


def resample_state(states, t: float, trigger_seq: int = 0) -> RobotStateRecord:
    """State at time t from a time-ordered packet list.

    q, qd, and ee position interpolate linearly between the bracketing
    packets; ee orientation interpolates spherically; the gripper holds the
    earlier packet's value. A query at a packet timestamp reproduces that
    packet bitwise.
    """
    if not states:
        raise StateGapError(f"no robot state at all near t={t:.4f}")
    times = [s.timestamp for s in states]
    i = bisect_left(times, t)
    if i < len(states) and times[i] == t:
        s = states[i]
        return RobotStateRecord(trigger_seq, t, s.q, s.qd, s.ee_pose, s.gripper)
    if i == 0:
        if times[0] - t > MAX_STATE_GAP_S:
            raise StateGapError(f"first state is {times[0] - t:.3f} s after t={t:.4f}")
        s = states[0]
        return RobotStateRecord(trigger_seq, t, s.q, s.qd, s.ee_pose, s.gripper)
    if i == len(states):
        if t - times[-1] > MAX_STATE_GAP_S:
            raise StateGapError(f"last state is {t - times[-1]:.3f} s before t={t:.4f}")
        s = states[-1]
        return RobotStateRecord(trigger_seq, t, s.q, s.qd, s.ee_pose, s.gripper)
    a, b = states[i - 1], states[i]
    if b.timestamp - a.timestamp > MAX_STATE_GAP_S:
        raise StateGapError(f"state gap {b.timestamp - a.timestamp:.3f} s around t={t:.4f}")
    alpha = (t - a.timestamp) / (b.timestamp - a.timestamp)
    q = tuple((1 - alpha) * x + alpha * y for x, y in zip(a.q, b.q))
    qd = tuple((1 - alpha) * x + alpha * y for x, y in zip(a.qd, b.qd))
    pos = [(1 - alpha) * x + alpha * y for x, y in zip(a.ee_pose[:3], b.ee_pose[:3])]
    quat = quat_slerp(np.array(a.ee_pose[3:]), np.array(b.ee_pose[3:]), alpha)
    return RobotStateRecord(trigger_seq, t, q, qd, tuple(pos) + tuple(quat), a.gripper)


# --- on-disk formats -------------------------------------------------------

def _pack_states(dof: int, records) -> bytes:
    out = [STATE_MAGIC, struct.pack("<HHI", FORMAT_VERSION, dof, len(records))]
    rec_fmt = struct.Struct("<Qd%dd%dd7dd" % (dof, dof))
    for r in records:
        if r.dof != dof:
            raise ValueError(f"record dof {r.dof} != {dof}")
        out.append(rec_fmt.pack(r.trigger_seq, r.master_ts, *r.q, *r.qd, *r.ee_pose, r.gripper))
    return b"".join(out)


def _unpack_states(data: bytes):
    if data[:4] != STATE_MAGIC:
        raise FormatError(f"robot_states.bin: bad magic {data[:4]!r}")
    version, dof, count = struct.unpack_from("<HHI", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"robot_states.bin: unsupported version {version}")
    rec_fmt = struct.Struct("<Qd%dd%dd7dd" % (dof, dof))
    expect = 12 + count * rec_fmt.size
    if len(data) != expect:
        raise CorruptEpisodeError(
            f"robot_states.bin: {len(data)} bytes, expected {expect} for {count} records")
    records = []
    off = 12
    for _ in range(count):
        v = rec_fmt.unpack_from(data, off)
        off += rec_fmt.size
        records.append(RobotStateRecord(
            v[0], v[1], v[2:2 + dof], v[2 + dof:2 + 2 * dof],
            v[2 + 2 * dof:9 + 2 * dof], v[9 + 2 * dof]))
    return records


def _pack_frames(width: int, height: int, fps: float, frames) -> bytes:
    out = [FRAMES_MAGIC, struct.pack("<HHHfI", FORMAT_VERSION, width, height, fps, len(frames))]
    for f in frames:
        if f.depth.shape != (height, width):
            raise ValueError("frame resolution mismatch")
        out.append(struct.pack("<Qd", f.trigger_seq, f.device_ts))
        out.append(np.ascontiguousarray(f.depth, dtype="<u2").tobytes())
        out.append(np.ascontiguousarray(f.rgb, dtype=np.uint8).tobytes())
    return b"".join(out)


def _unpack_frames(data: bytes, camera_id: str):
    from .sim.cameras import Frame

    if data[:4] != FRAMES_MAGIC:
        raise FormatError(f"frames_{camera_id}.bin: bad magic {data[:4]!r}")
    version, width, height, fps, count = struct.unpack_from("<HHHfI", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"frames_{camera_id}.bin: unsupported version {version}")
    frame_bytes = 16 + width * height * (2 + 3)
    expect = 18 + count * frame_bytes
    if len(data) != expect:
        raise CorruptEpisodeError(
            f"frames_{camera_id}.bin: {len(data)} bytes, expected {expect} for {count} frames")
    frames = []
    off = 18
    for _ in range(count):
        seq, ts = struct.unpack_from("<Qd", data, off)
        off += 16
        depth = np.frombuffer(data, dtype="<u2", count=width * height, offset=off)
        off += width * height * 2
        rgb = np.frombuffer(data, dtype=np.uint8, count=width * height * 3, offset=off)
        off += width * height * 3
        frames.append(Frame(camera_id, seq, ts,
                            depth.reshape(height, width).copy(),
                            rgb.reshape(height, width, 3).copy()))
    return frames, fps


def write_episode(ep_dir, meta: EpisodeMeta, records, frames_by_camera):
    """Write one episode directory; removes partial output on failure."""
    ep_dir = Path(ep_dir)
    if len(records) != meta.frameset_count:
        raise ValueError("record count does not match meta.frameset_count")
    for cid, frames in frames_by_camera.items():
        if len(frames) != meta.frameset_count:
            raise ValueError(f"camera {cid}: frame count does not match meta")
    try:
        ep_dir.mkdir(parents=True, exist_ok=True)
        (ep_dir / "meta.json").write_text(meta.to_json(), encoding="utf-8")
        (ep_dir / "robot_states.bin").write_bytes(_pack_states(meta.dof, records))
        for cid in meta.camera_ids:
            w, h = meta.camera_resolutions[cid]
            data = _pack_frames(w, h, meta.camera_fps, frames_by_camera[cid])
            (ep_dir / f"frames_{cid}.bin").write_bytes(data)
    except OSError as exc:
        shutil.rmtree(ep_dir, ignore_errors=True)
        raise WriteError(f"failed writing episode to {ep_dir}: {exc}") from exc


def read_episode(ep_dir):
    """Exact inverse of write_episode; validates magics, versions, counts."""
    ep_dir = Path(ep_dir)
    meta = EpisodeMeta.from_json((ep_dir / "meta.json").read_text(encoding="utf-8"))
    if meta.format_version != FORMAT_VERSION:
        raise FormatError(f"meta.json: unsupported format_version {meta.format_version}")
    records = _unpack_states((ep_dir / "robot_states.bin").read_bytes())
    if len(records) != meta.frameset_count:
        raise CorruptEpisodeError(
            f"robot_states.bin has {len(records)} records, meta says {meta.frameset_count}")
    frames = {}
    for cid in meta.camera_ids:
        cam_frames, _ = _unpack_frames((ep_dir / f"frames_{cid}.bin").read_bytes(), cid)
        if len(cam_frames) != meta.frameset_count:
            raise CorruptEpisodeError(
                f"frames_{cid}.bin has {len(cam_frames)} frames, meta says {meta.frameset_count}")
        frames[cid] = cam_frames
    seqs = [r.trigger_seq for r in records]
    for cid, cam_frames in frames.items():
        if [f.trigger_seq for f in cam_frames] != seqs:
            raise CorruptEpisodeError(f"frames_{cid}.bin trigger sequence differs from robot track")
    return meta, records, frames


def validate_episode(ep_dir):
    """Read and fully check one episode; returns its meta."""
    meta, records, _ = read_episode(ep_dir)
    ts = [r.master_ts for r in records]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise CorruptEpisodeError("master_ts not strictly increasing")
    if meta.dropped_framesets != 0:
        raise CorruptEpisodeError(f"{meta.dropped_framesets} dropped framesets")
    return meta


# --- live recording --------------------------------------------------------

class EpisodeRecorder:
    """Buffers framesets and state packets, then writes one episode on stop.

    State packets arrive on the protocol timeline (seconds since session
    start); `state_time_offset` maps them onto the frameset master_ts
    timeline. A state gap aborts the episode and leaves no directory behind.
    """

    def __init__(self, out_dir, meta_base: dict, queue_capacity: int = 256,
                 state_time_offset: float = 0.0):
        self.out_dir = Path(out_dir)
        self.meta_base = dict(meta_base)
        self.queue_capacity = queue_capacity
        self.state_time_offset = state_time_offset
        self.framesets = []
        self.states = []
        self.dropped_framesets = 0
        self.active = True

    def on_frameset(self, frameset):
        if not self.active:
            return
        if frameset.partial:
            self.dropped_framesets += 1
            return
        pending = len(self.framesets) - len(self.states) // 8
        if pending > self.queue_capacity:
            self.dropped_framesets += 1
            return
        self.framesets.append(frameset)

    def on_state(self, t, snapshot):
        if self.active:
            self.states.append(_StampedState(t - self.state_time_offset, snapshot))

    def abort(self):
        self.active = False
        shutil.rmtree(self.out_dir, ignore_errors=True)

    def finish(self) -> EpisodeMeta:
        """Resample, write, and return the episode metadata."""
        self.active = False
        try:
            records = [
                resample_state(self.states, fs.master_ts - self.state_time_offset,
                               trigger_seq=fs.trigger_seq)
                for fs in self.framesets
            ]
        except StateGapError:
            shutil.rmtree(self.out_dir, ignore_errors=True)
            raise
        records = [
            RobotStateRecord(r.trigger_seq, fs.master_ts, r.q, r.qd, r.ee_pose, r.gripper)
            for r, fs in zip(records, self.framesets)
        ]
        frames_by_camera = {}
        for fs in self.framesets:
            for cid, frame in fs.frames.items():
                frames_by_camera.setdefault(cid, []).append(frame)
        meta = EpisodeMeta(
            frameset_count=len(self.framesets),
            dropped_framesets=self.dropped_framesets,
            start_time=self.meta_base.pop("start_time", _utc_now_iso()),
            **self.meta_base,
        )
        write_episode(self.out_dir, meta, records, frames_by_camera)
        return meta


class _StampedState:
    """Adapter giving a node snapshot the StatePacket interface resample needs."""

    __slots__ = ("timestamp", "q", "qd", "ee_pose", "gripper")

    def __init__(self, timestamp, snap):
        self.timestamp = timestamp
        self.q = snap.q
        self.qd = snap.qd
        self.ee_pose = snap.ee_pose
        self.gripper = snap.gripper


def episode_meta_base(workcell, episode_id: str) -> dict:
    """Metadata fields shared by every recording entry point for a workcell."""
    cfg = workcell.config
    calib = workcell.calibration
    return {
        "episode_id": episode_id,
        "workcell_name": cfg.name,
        "config_hash": workcell.hash_hex,
        "dof": cfg.robot.dof,
        "camera_ids": cfg.camera_ids,
        "camera_resolutions": {
            cid: (calib[cid].intrinsics.width, calib[cid].intrinsics.height)
            for cid in cfg.camera_ids},
        "camera_fps": cfg.cameras[0].fps,
    }


def _utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_dataset_index(dataset_dir, episode_dirs, config_hash: str):
    dataset_dir = Path(dataset_dir)
    doc = {
        "config_hash": config_hash,
        "episodes": [Path(d).name for d in episode_dirs],
    }
    (dataset_dir / "dataset.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_dataset_index(dataset_dir):
    return json.loads((Path(dataset_dir) / "dataset.json").read_text(encoding="utf-8"))
