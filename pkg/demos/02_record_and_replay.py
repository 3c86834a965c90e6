"""Record one scripted demonstration episode and read it back.

Shows the whole data path: scripted policy drives the arm, the recorder
captures trigger-aligned framesets plus resampled robot states, and the
episode round-trips losslessly from disk.
"""

import tempfile
from pathlib import Path

import numpy as np

from workcell.config import load_and_build
from workcell.evaluation import record_demonstrations
from workcell.recorder import read_episode, validate_episode

out = Path(tempfile.mkdtemp(prefix="workcell_demo_"))
cell = load_and_build("configs/ur5_kinect4.json", bind_port=False)
print(f"recording one demonstration on {cell.config.name} into {out}")

episode_dirs, results = record_demonstrations(cell, out, n_episodes=1, base_seed=42)
cell.shutdown()

r = results[0]
print(f"trial seed {r.seed}: {'success' if r.success else r.failure_mode} "
      f"in {r.duration_s:.2f} s of virtual time")

ep = episode_dirs[0]
meta = validate_episode(ep)
print(f"\nepisode {meta.episode_id}: {meta.frameset_count} framesets, "
      f"{meta.dropped_framesets} dropped")
for f in sorted(ep.iterdir()):
    print(f"  {f.name:24s} {f.stat().st_size:>12,d} bytes")

meta, records, frames = read_episode(ep)
z = np.array([rec.ee_pose[2] for rec in records])
grip = np.array([rec.gripper for rec in records])
print("\nend-effector height over the episode (one char per 5 framesets):")
bars = " .:-=+*#%@"
idx = np.clip(((z - z.min()) / max(np.ptp(z), 1e-9) * (len(bars) - 1)).astype(int),
              0, len(bars) - 1)
print("  z    |" + "".join(bars[i] for i in idx[::5]) + "|")
print("  grip |" + "".join("X" if g < 0.5 else "." for g in grip[::5]) + "|")
print(f"\ndescent and lift: z {z[0]:.3f} -> {z.min():.3f} -> {z[-1]:.3f} m; "
      f"gripper closed at frameset {int(np.argmax(grip < 0.5))}")
