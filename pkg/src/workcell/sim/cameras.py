"""Virtual trigger-synchronized RGB-D cameras.

One master camera defines the trigger train at its frame rate; subordinates
capture at fixed microsecond delays after each trigger. Each device stamps
frames with its own imperfect clock (offset, drift, Gaussian jitter from the
rig's seeded PRNG). Rendering is analytic raycasting against the table plane
and the block box; no meshes, no lighting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError
from ..geometry import Intrinsics, Pose, quat_to_matrix
from .scene import Scene

MAX_RANGE_M = 8.0
BLOCK_RGB = (200, 40, 40)
TABLE_RGB = (128, 128, 128)
MISS_RGB = (0, 0, 0)


@dataclass(frozen=True)
class ClockModel:
    offset_s: float = 0.0
    drift_ppm: float = 0.0
    jitter_sigma_us: float = 0.0


@dataclass(frozen=True)
class CameraConfig:
    id: str
    role: str  # "master" | "subordinate"
    delay_us: float
    intrinsics: Intrinsics
    extrinsic: Pose  # camera-to-world
    fps: float
    clock: ClockModel = field(default_factory=ClockModel)

    def __post_init__(self):
        if self.role not in ("master", "subordinate"):
            raise ValueError(f"camera role {self.role!r}")
        if self.role == "master" and self.delay_us != 0.0:
            raise ValueError("master camera must have zero trigger delay")
        if self.fps <= 0.0:
            raise ValueError("fps must be positive")


@dataclass(frozen=True)
class Frame:
    camera_id: str
    trigger_seq: int
    device_ts: float
    depth: np.ndarray  # u16, millimeters, 0 = no hit
    rgb: np.ndarray  # u8, H x W x 3

    def __post_init__(self):
        if self.depth.shape != self.rgb.shape[:2]:
            raise DimensionError("depth and rgb dimensions differ")


@dataclass(frozen=True)
class Frameset:
    trigger_seq: int
    master_ts: float  # true time of the master trigger
    frames: dict  # camera_id -> Frame
    partial: bool = False


def trigger_times(fps: float, k: int, delay_us: float = 0.0) -> float:
    """True capture instant of trigger k for a device with the given delay."""
    if fps <= 0.0:
        raise ValueError("fps must be positive")
    return k / fps + delay_us * 1e-6


def device_timestamp(true_t: float, clock: ClockModel, rng=None) -> float:
    """Timestamp the device clock would report for a capture at true_t."""
    ts = true_t * (1.0 + clock.drift_ppm * 1e-6) + clock.offset_s
    if rng is not None and clock.jitter_sigma_us > 0.0:
        ts += rng.normal(0.0, clock.jitter_sigma_us * 1e-6)
    return ts


class _RayGrid:
    """Per-camera pixel rays, camera frame, z-normalized so the ray parameter
    equals depth along the optical axis."""

    def __init__(self, K: Intrinsics):
        u = np.arange(K.width, dtype=float)
        v = np.arange(K.height, dtype=float)
        uu, vv = np.meshgrid(u, v)  # H x W
        self.dirs_cam = np.stack(
            [(uu - K.cx) / K.fx, (vv - K.cy) / K.fy, np.ones_like(uu)], axis=-1
        )


_RAY_CACHE: dict = {}


def _ray_grid(K: Intrinsics) -> _RayGrid:
    key = (K.fx, K.fy, K.cx, K.cy, K.width, K.height)
    if key not in _RAY_CACHE:
        _RAY_CACHE[key] = _RayGrid(K)
    return _RAY_CACHE[key]


def render(scene: Scene, camera: CameraConfig, trigger_seq: int = 0,
           device_ts: float = 0.0) -> Frame:
    """Raycast the scene into one RGB-D frame.

    Depth is the distance along the optical axis to the nearest hit among the
    table plane and the block box, in rounded u16 millimeters, 0 when nothing
    is hit within 8 m.
    """
    K = camera.intrinsics
    grid = _ray_grid(K).dirs_cam  # H x W x 3
    R = quat_to_matrix(camera.extrinsic.orientation)
    origin = camera.extrinsic.position
    d = grid @ R.T  # world-frame directions, H x W x 3

    inf = np.inf
    s_best = np.full(grid.shape[:2], inf)
    hit_kind = np.zeros(grid.shape[:2], dtype=np.uint8)  # 0 miss, 1 table, 2 block

    dz = d[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        s_plane = (scene.table_height - origin[2]) / dz
    ok = np.isfinite(s_plane) & (s_plane > 1e-9)
    s_best = np.where(ok, s_plane, s_best)
    hit_kind = np.where(ok, 1, hit_kind).astype(np.uint8)

    lo = scene.block_center - scene.block_half_extents
    hi = scene.block_center + scene.block_half_extents
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - origin) / d
        t2 = (hi - origin) / d
    t_near_ax = np.minimum(t1, t2)
    t_far_ax = np.maximum(t1, t2)
    # Zero direction component: the slab is hit for all t if the origin lies
    # inside it, never otherwise.
    inside = (origin >= lo) & (origin <= hi)
    zero = d == 0.0
    t_near_ax = np.where(zero, np.where(inside, -inf, inf), t_near_ax)
    t_far_ax = np.where(zero, np.where(inside, inf, -inf), t_far_ax)
    t_near = np.max(t_near_ax, axis=-1)
    t_far = np.min(t_far_ax, axis=-1)
    box_hit = (t_near <= t_far) & (t_far > 1e-9)
    s_box = np.where(t_near > 1e-9, t_near, t_far)
    closer = box_hit & (s_box < s_best)
    s_best = np.where(closer, s_box, s_best)
    hit_kind = np.where(closer, 2, hit_kind).astype(np.uint8)

    in_range = np.isfinite(s_best) & (s_best <= MAX_RANGE_M)
    hit_kind = np.where(in_range, hit_kind, 0).astype(np.uint8)
    depth_mm = np.where(in_range, np.rint(s_best * 1000.0), 0.0)
    depth = np.clip(depth_mm, 0, 65535).astype(np.uint16)

    palette = np.array([MISS_RGB, TABLE_RGB, BLOCK_RGB], dtype=np.uint8)
    rgb = palette[hit_kind]
    return Frame(camera.id, trigger_seq, device_ts, depth, rgb)


# --- alignment -------------------------------------------------------------

class FramesetAligner:
    """Groups per-camera frames into framesets.

    mode "seq" keys on the hardware trigger counter exactly; mode "timestamp"
    associates each master frame with the nearest subordinate frame whose
    clock-model-corrected timestamp lies within +-window_s of the corrected
    master timestamp (the configured offset/drift are calibration-known, so
    only jitter remains). Groups missing cameras are flushed as partial after
    a two-frame-period timeout.
    """

    def __init__(self, cameras, mode: str = "seq", window_s: float = None):
        if mode not in ("seq", "timestamp"):
            raise ValueError(f"alignment mode {mode!r}")
        self.mode = mode
        self.cameras = {c.id: c for c in cameras}
        masters = [c for c in cameras if c.role == "master"]
        if len(masters) != 1:
            raise ValueError("exactly one master camera required")
        self.master = masters[0]
        self.fps = self.master.fps
        if window_s is None:
            window_s = 0.5 / self.fps
        if window_s <= 0.0:
            raise ValueError("window_s must be positive")
        self.window_s = window_s
        self.t0 = 0.0  # scheduler time of trigger 0; set by the rig
        self._groups: dict = {}  # trigger_seq -> dict cam_id -> Frame
        self._sub_pool: dict = {cid: [] for cid in self.cameras if cid != self.master.id}
        self._emitted = set()
        self._subscribers = []
        self._latest_true_ts = -np.inf

    def subscribe(self, fn):
        self._subscribers.append(fn)

    def unsubscribe(self, fn):
        self._subscribers.remove(fn)

    def _corrected(self, frame: Frame) -> float:
        c = self.cameras[frame.camera_id].clock
        return (frame.device_ts - c.offset_s) / (1.0 + c.drift_ppm * 1e-6)

    def push(self, frame: Frame):
        if frame.camera_id not in self.cameras:
            raise KeyError(f"unknown camera {frame.camera_id}")
        if self.mode == "seq":
            self._groups.setdefault(frame.trigger_seq, {})[frame.camera_id] = frame
        else:
            if frame.camera_id == self.master.id:
                self._groups.setdefault(frame.trigger_seq, {})[frame.camera_id] = frame
            else:
                self._sub_pool[frame.camera_id].append(frame)
            self._associate()
        self._latest_true_ts = max(self._latest_true_ts, self._corrected(frame))
        self._flush()

    def _associate(self):
        for k, group in self._groups.items():
            master_frame = group.get(self.master.id)
            if master_frame is None:
                continue
            mt = self._corrected(master_frame)
            for cid, pool in self._sub_pool.items():
                if cid in group or not pool:
                    continue
                residuals = [abs(self._corrected(f) - mt) for f in pool]
                i = int(np.argmin(residuals))
                if residuals[i] <= self.window_s:
                    group[cid] = pool.pop(i)

    def _flush(self):
        for k in sorted(self._groups):
            group = self._groups[k]
            complete = len(group) == len(self.cameras)
            master_ts = self.t0 + trigger_times(self.fps, k)
            if complete:
                self._emit(Frameset(k, master_ts, dict(group), partial=False))
                del self._groups[k]
            elif self._latest_true_ts - master_ts > 2.0 / self.fps:
                self._emit(Frameset(k, master_ts, dict(group), partial=True))
                del self._groups[k]
            else:
                break  # preserve trigger order: stop at the first unready group

    def flush_all(self):
        """Emit every pending group (partial if incomplete); end of stream."""
        for k in sorted(self._groups):
            group = self._groups[k]
            self._emit(Frameset(k, self.t0 + trigger_times(self.fps, k), dict(group),
                                partial=len(group) != len(self.cameras)))
        self._groups.clear()

    def _emit(self, fs: Frameset):
        if fs.trigger_seq in self._emitted:
            raise RuntimeError(f"frameset {fs.trigger_seq} emitted twice")
        self._emitted.add(fs.trigger_seq)
        for fn in self._subscribers:
            fn(fs)


class CameraRig:
    """Drives all cameras off the master trigger on a scheduler.

    All randomness (timestamp jitter) flows from one seed, so identical seeds
    give bitwise-identical frame streams.
    """

    def __init__(self, cameras, scene_provider, seed: int = 0,
                 mode: str = "seq", window_s: float = None):
        self.cameras = list(cameras)
        ids = [c.id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate camera ids")
        self.scene_provider = scene_provider
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.aligner = FramesetAligner(self.cameras, mode=mode, window_s=window_s)
        self.fps = self.aligner.fps
        self._frame_listeners = []
        self._running = False

    def subscribe(self, fn):
        """fn(frameset) on every aligned frameset."""
        self.aligner.subscribe(fn)

    def unsubscribe(self, fn):
        self.aligner.unsubscribe(fn)

    def add_frame_listener(self, fn):
        self._frame_listeners.append(fn)

    def start(self, scheduler, t0: float = None):
        t0 = scheduler.now if t0 is None else t0
        self.aligner.t0 = t0
        self._running = True
        self._schedule_trigger(scheduler, t0, 0)

    def stop(self):
        self._running = False

    def _schedule_trigger(self, scheduler, t0: float, k: int):
        def fire(t):
            if not self._running:
                return
            # Jitter draws happen here, in fixed camera order, so the stream
            # is reproducible regardless of event interleaving.
            for cam in self.cameras:
                true_t = trigger_times(self.fps, k, cam.delay_us)
                ts = device_timestamp(t0 + true_t, cam.clock, self.rng)
                scheduler.call_at(t0 + true_t, self._capture_fn(cam, k, ts), priority=1)
            self._schedule_trigger(scheduler, t0, k + 1)

        scheduler.call_at(t0 + trigger_times(self.fps, k), fire, priority=-2)

    def _capture_fn(self, cam, k, ts):
        def capture(t):
            frame = render(self.scene_provider(), cam, trigger_seq=k, device_ts=ts)
            for fn in self._frame_listeners:
                fn(frame)
            self.aligner.push(frame)

        return capture
