"""Shared simulated world: table plane, one graspable block, task predicate.

The block is kinematic: it rests on the table, rides rigidly with the gripper
while attached, and drops instantly back to the table on release. That is all
the grasp-and-lift success metric needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

DEFAULT_LIFT_THRESHOLD = 0.04
DEFAULT_GRASP_OFFSET = np.array([0.0, 0.0, -0.02])
COLLISION_MARGIN = 0.005


@dataclass(frozen=True)
class GraspParams:
    grasp_radius: float = 0.04
    close_threshold: float = 0.4
    grasp_offset: tuple = (0.0, 0.0, -0.02)

    def __post_init__(self):
        if self.grasp_radius <= 0.0:
            raise ValueError("grasp_radius must be positive")
        if not (0.0 < self.close_threshold < 1.0):
            raise ValueError("close_threshold must lie in (0, 1)")


@dataclass(frozen=True)
class Scene:
    table_height: float
    block_center: np.ndarray
    block_half_extents: np.ndarray
    spawn_region: tuple  # (x_min, y_min, x_max, y_max) on the table
    attached: bool = False
    grasp: GraspParams = field(default_factory=GraspParams)
    lift_threshold: float = DEFAULT_LIFT_THRESHOLD

    def __post_init__(self):
        object.__setattr__(self, "block_center", np.asarray(self.block_center, dtype=float))
        object.__setattr__(self, "block_half_extents", np.asarray(self.block_half_extents, dtype=float))
        if np.any(self.block_half_extents <= 0.0):
            raise ValueError("half extents must be positive")

    @property
    def resting_z(self) -> float:
        return self.table_height + float(self.block_half_extents[2])


def spawn_block(scene: Scene, rng_seed: int) -> Scene:
    """Place the block uniformly over the spawn region, resting on the table.

    Uses PCG64 so the same seed reproduces the same pose on any platform.
    """
    x0, y0, x1, y1 = scene.spawn_region
    if x1 < x0 or y1 < y0:
        raise ValueError("spawn region is inverted")
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    x = rng.uniform(x0, x1) if x1 > x0 else x0
    y = rng.uniform(y0, y1) if y1 > y0 else y0
    center = np.array([x, y, scene.resting_z])
    return replace(scene, block_center=center, attached=False)


def update_attachment(scene: Scene, ee_position: np.ndarray, gripper: float) -> Scene:
    """Advance the grasp state machine for one control step."""
    ee = np.asarray(ee_position, dtype=float)
    g = scene.grasp
    offset = np.asarray(g.grasp_offset, dtype=float)
    if scene.attached:
        if gripper > g.close_threshold:
            # Released: instant drop to rest (x, y keep their current values).
            dropped = scene.block_center.copy()
            dropped[2] = scene.resting_z
            return replace(scene, attached=False, block_center=dropped)
        return replace(scene, block_center=_held_center(scene, ee, offset))
    if gripper <= g.close_threshold and np.linalg.norm(ee - scene.block_center) <= g.grasp_radius:
        return replace(scene, attached=True, block_center=_held_center(scene, ee, offset))
    return scene


def _held_center(scene: Scene, ee: np.ndarray, offset: np.ndarray) -> np.ndarray:
    # Rigid attachment, except the table stays impenetrable.
    center = ee + offset
    center[2] = max(center[2], scene.resting_z)
    return center


def check_success(scene: Scene) -> bool:
    """True iff the block is held and its bottom face cleared the lift height."""
    if not scene.attached:
        return False
    bottom = float(scene.block_center[2] - scene.block_half_extents[2])
    return bottom - scene.table_height >= scene.lift_threshold


def is_collision(scene: Scene, ee_position) -> bool:
    """Proxy collision rule: the end-effector dipped into the table."""
    return float(ee_position[2]) < scene.table_height + COLLISION_MARGIN
