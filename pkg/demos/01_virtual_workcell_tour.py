"""A guided tour of one simulated workcell on the virtual clock.

Builds the single-arm cell from its config, steps the scheduler, and prints
what each layer produces along the way: robot state packets, camera
framesets, and a fused point cloud with a block estimate.
"""

import numpy as np

from workcell.config import load_and_build
from workcell.perception import fuse, locate_block
from workcell.sim.robot import LocalClient
from workcell.wire import SpeedJCommand

cell = load_and_build("configs/ur5_kinect4.json", bind_port=False)
print(f"workcell: {cell.config.name}  (config hash {cell.hash_hex})")
print(f"robot: {cell.config.robot.dof} dof at {cell.config.robot.control_rate_hz:g} Hz, "
      f"cameras: {', '.join(cell.config.camera_ids)} at {cell.config.cameras[0].fps:g} fps")

# The camera rig hands us aligned framesets; keep the latest one.
latest = [None]
cell.rig.subscribe(lambda fs: latest.__setitem__(0, fs) if not fs.partial else None)

# Speak the robot's native protocol through an in-process client.
client = LocalClient(cell.node, cell.scheduler)
client.handshake(frequency_hz=cell.node.control_rate_hz)

print("\ncommanding a slow wrist rotation for one virtual second...")
# The 100 ms watchdog expects a steady command stream, like a real teleop
# client; one-shot commands are safe-stopped on purpose.
for _ in range(20):
    client.send(SpeedJCommand((0, 0, 0, 0, 0, 0.3), 5.0, valid_for=0.1))
    cell.scheduler.run_until(cell.scheduler.now + 0.05)

snap = cell.node.snapshot()
print(f"  t={cell.scheduler.now:.3f}s  q[5]={snap.q[-1]:+.3f} rad  "
      f"ee at ({snap.ee_pose[0]:+.3f}, {snap.ee_pose[1]:+.3f}, {snap.ee_pose[2]:+.3f})")

fs = latest[0]
print(f"\nlatest frameset: trigger {fs.trigger_seq} at t={fs.master_ts:.4f}s, "
      f"{len(fs.frames)} cameras")
for cid, frame in sorted(fs.frames.items()):
    d = frame.depth[frame.depth > 0]
    print(f"  {cid}: depth {d.min()}..{d.max()} mm over {d.size} valid pixels")

cloud = fuse(fs, cell.calibration)
est = locate_block(cloud, cell.config.scene.table_height)
true = cell.node.scene.block_center
print(f"\nfused cloud: {len(cloud.points)} points")
print(f"block estimate ({est[0]:+.3f}, {est[1]:+.3f}, {est[2]:+.3f}) "
      f"vs true ({true[0]:+.3f}, {true[1]:+.3f}, {true[2]:+.3f}), "
      f"error {np.linalg.norm(est - true) * 1000:.1f} mm")

client.close()
cell.shutdown()
