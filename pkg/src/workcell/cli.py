"""Command line entry points: record, eval, serve, replay, validate.

Every subcommand that needs a workcell takes --config; when omitted, the
WORKCELL_CONFIG environment variable supplies the path. The same build path
is used for every robot type, so switching platforms is a config swap.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np

from .config import ENV_CONFIG_VAR, load_and_build, parse_and_validate
from .errors import WorkcellError

_CONFIG_OPTION = click.option(
    "--config", "config_path", envvar=ENV_CONFIG_VAR, required=True,
    type=click.Path(exists=True, dir_okay=False),
    help=f"Workcell config JSON (default: ${ENV_CONFIG_VAR}).")


@click.group()
def main():
    """Simulated robot workcells: record, evaluate, serve, replay, validate."""


@main.command()
@_CONFIG_OPTION
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False),
              help="Dataset directory; episodes land in ep0000, ep0001, ...")
@click.option("--episodes", default=1, show_default=True, help="Episodes to record.")
@click.option("--seed", default=0, show_default=True, help="Base scene seed.")
@click.option("--max-duration", default=20.0, show_default=True,
              help="Per-episode timeout, seconds of virtual time.")
def record(config_path, out_dir, episodes, seed, max_duration):
    """Record scripted demonstration episodes into a dataset directory."""
    from .evaluation import record_demonstrations

    cell = load_and_build(config_path, bind_port=False)
    try:
        episode_dirs, results = record_demonstrations(
            cell, out_dir, episodes, seed, max_duration_s=max_duration)
    finally:
        cell.shutdown()
    for r in results:
        status = "ok" if r.success else f"discarded ({r.failure_mode})"
        click.echo(f"seed {r.seed}: {r.duration_s:.2f} s, {status}")
    click.echo(f"kept {len(episode_dirs)}/{episodes} episodes in {out_dir}")
    if not episode_dirs:
        sys.exit(1)


@main.command("eval")
@_CONFIG_OPTION
@click.option("--policy", "policy_name", default="scripted", show_default=True,
              type=click.Choice(["scripted", "null"]))
@click.option("--trials", default=20, show_default=True)
@click.option("--seed", default=7, show_default=True, help="Base scene seed.")
@click.option("--out", "out_path", default="eval_report.json", show_default=True,
              type=click.Path(dir_okay=False), help="Report path.")
@click.option("--max-duration", default=20.0, show_default=True,
              help="Per-trial timeout, seconds of virtual time.")
def eval_(config_path, policy_name, trials, seed, out_path, max_duration):
    """Run repeated policy trials and write an evaluation report."""
    from .evaluation import NullPolicy, ScriptedGraspLift, evaluate

    cell = load_and_build(config_path, bind_port=False)
    if policy_name == "scripted":
        factory = lambda: ScriptedGraspLift(cell)
    else:
        factory = lambda: NullPolicy(cell.config.robot.action_space, cell.node.dof)
    try:
        report = evaluate(cell, factory, trials, seed, out_path=out_path,
                          policy_id=policy_name, max_duration_s=max_duration)
    finally:
        cell.shutdown()
    modes = {}
    for r in report.results:
        modes[r.failure_mode] = modes.get(r.failure_mode, 0) + 1
    click.echo(f"config {cell.hash_hex}  policy {policy_name}")
    click.echo(f"success {report.n_success}/{report.n_trials} "
               f"({100 * report.success_rate:.0f}%)")
    for mode in sorted(modes):
        if mode != "none":
            click.echo(f"  {mode}: {modes[mode]}")
    click.echo(f"report written to {out_path}")


@main.command()
@_CONFIG_OPTION
@click.option("--port", default=8800, show_default=True)
@click.option("--episodes-dir", default="episodes", show_default=True,
              type=click.Path(file_okay=False),
              help="Where teleop-recorded episodes are written.")
@click.option("--console-dir", default=None, type=click.Path(file_okay=False),
              help="Static browser console to serve at /.")
def serve(config_path, port, episodes_dir, console_dir):
    """Serve the websocket teleop gateway on the wall clock."""
    from .gateway import gateway_serve

    cell = load_and_build(config_path)
    click.echo(f"workcell {cell.config.name} ({cell.hash_hex}) "
               f"teleop on ws://127.0.0.1:{port}/teleop")
    try:
        gateway_serve(cell, port=port, episodes_dir=episodes_dir,
                      console_dir=console_dir)
    finally:
        cell.shutdown()


@main.command()
@click.argument("episode_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--stride", default=30, show_default=True,
              help="Print every Nth frameset in the trace table.")
def replay(episode_dir, stride):
    """Print the trajectory summary of a recorded episode."""
    from .recorder import read_episode

    meta, records, frames = read_episode(episode_dir)
    ts = [r.master_ts for r in records]
    positions = np.array([r.ee_pose[:3] for r in records])
    path_len = float(np.sum(np.linalg.norm(np.diff(positions, axis=0), axis=1))) \
        if len(records) > 1 else 0.0
    grip = [r.gripper for r in records]
    transitions = sum(1 for a, b in zip(grip, grip[1:]) if abs(b - a) > 1e-9)

    click.echo(f"episode {meta.episode_id} on {meta.workcell_name} "
               f"(config {meta.config_hash})")
    click.echo(f"  framesets: {meta.frameset_count} at {meta.camera_fps:g} fps "
               f"({ts[-1] - ts[0]:.2f} s)" if records else "  framesets: 0")
    click.echo(f"  cameras: {', '.join(meta.camera_ids)}")
    click.echo(f"  dropped framesets: {meta.dropped_framesets}")
    if records:
        click.echo(f"  ee path length: {path_len:.3f} m, "
                   f"gripper transitions: {transitions}")
        click.echo(f"  {'seq':>6} {'t':>9} {'x':>8} {'y':>8} {'z':>8} {'grip':>6}")
        for r in records[::max(1, stride)] + ([records[-1]] if len(records) > 1 else []):
            x, y, z = r.ee_pose[:3]
            click.echo(f"  {r.trigger_seq:>6} {r.master_ts:>9.3f} "
                       f"{x:>8.3f} {y:>8.3f} {z:>8.3f} {r.gripper:>6.2f}")


@main.command()
@click.argument("target", type=click.Path(exists=True))
def validate(target):
    """Check a config file, an episode directory, or a dataset directory."""
    target = Path(target)
    try:
        if target.is_file():
            config = parse_and_validate(target.read_text(encoding="utf-8"))
            from .config import config_hash_hex
            click.echo(f"config ok: {config.name} ({config_hash_hex(config)})")
        elif (target / "dataset.json").exists():
            from .recorder import read_dataset_index, validate_episode
            index = read_dataset_index(target)
            for name in index["episodes"]:
                meta = validate_episode(target / name)
                click.echo(f"episode ok: {name} ({meta.frameset_count} framesets)")
            click.echo(f"dataset ok: {len(index['episodes'])} episodes "
                       f"(config {index['config_hash']})")
        else:
            from .recorder import validate_episode
            meta = validate_episode(target)
            click.echo(f"episode ok: {meta.episode_id} "
                       f"({meta.frameset_count} framesets, "
                       f"{len(meta.camera_ids)} cameras)")
    except (WorkcellError, OSError, ValueError, KeyError) as exc:
        click.echo(f"invalid: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
