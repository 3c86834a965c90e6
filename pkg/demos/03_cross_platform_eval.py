"""Run the same scripted evaluation on two different robot platforms.

Nothing below branches on the platform: the config file is the only thing
that changes between the two runs, which is the point of the hardware
abstraction.
"""

import time

from workcell.config import load_and_build
from workcell.evaluation import ScriptedGraspLift, evaluate

TRIALS = 5

for config_path in ("configs/ur5_kinect4.json", "configs/bimanual_rs3.json"):
    cell = load_and_build(config_path, bind_port=False)
    t0 = time.time()
    report = evaluate(cell, lambda: ScriptedGraspLift(cell),
                      n_trials=TRIALS, base_seed=7)
    wall = time.time() - t0
    cell.shutdown()

    print(f"{cell.config.name} ({cell.hash_hex}), "
          f"{cell.config.robot.dof} dof, action space {cell.config.robot.action_space}")
    for r in report.results:
        mark = "ok " if r.success else r.failure_mode
        print(f"  seed {r.seed}: {mark:10s} {r.duration_s:5.2f} s")
    print(f"  success {report.n_success}/{report.n_trials}, "
          f"{wall:.1f} s wall for {sum(r.duration_s for r in report.results):.1f} s simulated\n")
