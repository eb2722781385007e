"""Command-line entry point.

Subcommands: train, validate, eval-sweep, replay, plot. Exit codes: 0 on
success, 1 for usage errors, 2 for configuration errors, 3 for runtime
failures (including unmet validation thresholds). Set ROUNDABOUT_MARL_LOG
to debug/info/warning/error to control verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .chain_mdp import ChainConfig, run_validation
from .config import ConfigError, RunConfig, config_to_json, parse_config
from .env import Action, TrafficEnv, VehicleStatus
from .evaluation import run_sweep, summarize, svg_line_chart
from .geometry import GRID_SIZE, build_roundabout, write_pgm
from .net import NetConfig, PolicyValueNet, load_checkpoint, save_checkpoint
from .training import (
    TrainerConfig,
    run_training,
    save_stats_csv,
    stats_from_csv,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

SCRIPTED_ACTIONS = {
    "accelerate": Action.ACCELERATE,
    "brake": Action.BRAKE,
    "maintain": Action.MAINTAIN,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="roundabout-marl",
                     description="Roundabout traffic microsimulation with learning drivers")
    sub = parser.add_subparsers(dest="command")

    train = sub.add_parser("train", help="train driving agents in the roundabout world")
    train.add_argument("-c", "--config", help="JSON config file (defaults apply when omitted)")
    train.add_argument("--episodes", type=int, help="override trainer.total_episodes")
    train.add_argument("-o", "--out", default=None, help="output directory")

    val = sub.add_parser("validate", help="train on the chain task and compare with value iteration")
    val.add_argument("-c", "--config", help="JSON config file")
    val.add_argument("--steps", type=int, default=50_000, help="environment-step budget per seed")
    val.add_argument("--seeds", type=int, default=1, help="number of seeds that must all pass")
    val.add_argument("-o", "--out", default=None, help="output directory")

    sweep = sub.add_parser("eval-sweep", help="behavior sweep over aggressiveness or target speed")
    sweep.add_argument("-c", "--config", help="JSON config file")
    sweep.add_argument("--checkpoint", help="override sweep.checkpoint")
    sweep.add_argument("-o", "--out", default=None, help="output directory")

    replay = sub.add_parser("replay", help="run the simulator and dump a CSV trace plus PGM frames")
    replay.add_argument("-c", "--config", help="JSON config file")
    replay.add_argument("--steps", type=int, default=100)
    group = replay.add_mutually_exclusive_group()
    group.add_argument("--scripted", choices=sorted(SCRIPTED_ACTIONS),
                       help="constant action for every vehicle")
    group.add_argument("--checkpoint", help="drive vehicles with a trained policy")
    replay.add_argument("-o", "--out", default=None, help="output directory")

    plot = sub.add_parser("plot", help="render learning curves from a training stats CSV")
    plot.add_argument("--stats", required=True, help="stats CSV produced by train")
    plot.add_argument("-o", "--out", default="learning_curves.svg")
    return parser


def _load_config(path: str | None) -> RunConfig:
    return parse_config(path) if path else RunConfig()


def _out_dir(arg: str | None, cfg: RunConfig, leaf: str) -> Path:
    root = Path(arg) if arg else Path(cfg.output.dir) / leaf
    root.mkdir(parents=True, exist_ok=True)
    return root


def _echo_config(cfg: RunConfig, out: Path) -> None:
    (out / "resolved_config.json").write_text(config_to_json(cfg))


def _cmd_train(args) -> int:
    cfg = _load_config(args.config)
    trainer_cfg = cfg.trainer
    if args.episodes is not None:
        import dataclasses
        trainer_cfg = dataclasses.replace(trainer_cfg, total_episodes=args.episodes)
    out = _out_dir(args.out, cfg, "train")
    _echo_config(RunConfig(cfg.geometry, cfg.env, cfg.reward, cfg.rl, trainer_cfg,
                           cfg.sweep, cfg.output), out)
    rmap = build_roundabout(cfg.geometry)

    def env_factory(i: int) -> TrafficEnv:
        import dataclasses
        env_cfg = dataclasses.replace(cfg.env, seed=cfg.env.seed + 7919 * i,
                                      max_vehicles=min(cfg.env.max_vehicles, trainer_cfg.n_ag))
        return TrafficEnv(rmap, env_cfg, cfg.reward)

    result = run_training(trainer_cfg, cfg.rl, env_factory, NetConfig(),
                          checkpoint_dir=str(out))
    save_stats_csv(result.stats, out / "stats.csv")
    final = PolicyValueNet(result.net_config, result.params)
    save_checkpoint(final, out / "checkpoint_final.bin")
    goals = sum(1 for s in result.stats if s.outcome == "goal")
    print(f"trained {result.episodes} episodes over {result.env_steps} steps; "
          f"goal ratio {goals / max(1, result.episodes):.3f}")
    print(f"outputs in {out}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args.out, cfg, "validate")
    _echo_config(cfg, out)
    all_passed = True
    for seed in range(args.seeds):
        report = run_validation(
            rl_cfg=cfg.rl,
            trainer_cfg=TrainerConfig(seed=cfg.trainer.seed + seed,
                                      lr=cfg.trainer.lr,
                                      rmsprop_decay=cfg.trainer.rmsprop_decay,
                                      rmsprop_eps=cfg.trainer.rmsprop_eps),
            chain_cfg=ChainConfig(seed=cfg.trainer.seed + seed),
            max_steps=args.steps,
        )
        (out / f"validation_seed{seed}.csv").write_text(report.to_csv())
        print(f"seed {seed}: agreement {report.final_agreement:.3f} "
              f"(threshold {report.agreement_threshold}), value error "
              f"{report.final_value_error:.4f} (threshold {report.value_error_threshold}), "
              f"{report.steps_used} steps -> {'PASS' if report.passed else 'FAIL'}")
        all_passed &= report.passed
    if not all_passed:
        print("validation thresholds not met", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_eval_sweep(args) -> int:
    cfg = _load_config(args.config)
    spec = cfg.sweep
    if args.checkpoint:
        import dataclasses
        spec = dataclasses.replace(spec, checkpoint=args.checkpoint)
    if not spec.checkpoint:
        raise ConfigError("eval-sweep needs sweep.checkpoint or --checkpoint")
    out = _out_dir(args.out, cfg, "sweep")
    _echo_config(cfg, out)
    rows = run_sweep(spec, cfg.env, cfg.reward, cfg.geometry)
    summarize(rows, out / "sweep.csv", out / "sweep.svg", parameter=spec.parameter)
    for row in rows:
        print(f"{spec.parameter}={row.value:g}: success {row.success_ratio:.3f}, "
              f"avg speed {row.avg_speed:.2f} m/s over {row.episodes} episodes")
    print(f"outputs in {out}")
    return EXIT_OK


def trace_row(step: int, sim_time: float, results) -> str:
    cells = []
    for vid in sorted(results):
        r = results[vid]
        b = r.reward
        cells.append(f"{vid}:{r.speed!r}:{r.status.value}:"
                     f"{b.r_terminal!r}:{b.r_danger!r}:{b.r_speed!r}")
    return f"{step},{sim_time!r},{'|'.join(cells)}"


def run_replay(cfg: RunConfig, steps: int, scripted: str | None,
               checkpoint: str | None, out: Path) -> tuple[int, int]:
    """Step the world, writing one CSV row and three PGM layers per step.

    The rendered view follows the lowest-id active vehicle; on the rare
    step with no vehicles the frames are all zero. Returns (rows, frames).
    """
    rmap = build_roundabout(cfg.geometry)
    policy_net = None
    if checkpoint:
        policy_net = load_checkpoint(checkpoint)
        import dataclasses
        env_cfg = dataclasses.replace(cfg.env, render_views=policy_net.config.visual)
    else:
        import dataclasses
        env_cfg = dataclasses.replace(cfg.env, render_views=False)
    env = TrafficEnv(rmap, env_cfg, cfg.reward)
    frames_dir = out / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)

    controllers = {}

    def controller_for(vid, obs):
        from .evaluation import _Controller
        return _Controller(policy_net, np.random.default_rng((cfg.env.seed, vid)),
                           cfg.rl.action_repeat, obs)

    obs0 = env.reset()
    if policy_net is not None:
        for vid, obs in obs0.items():
            controllers[vid] = controller_for(vid, obs)
    action_const = SCRIPTED_ACTIONS[scripted] if scripted else Action.MAINTAIN

    rows = ["step,sim_time,vehicles"]
    frames_written = 0
    for step in range(1, steps + 1):
        if policy_net is None:
            actions = {vid: action_const for vid in env.active_agents}
        else:
            actions = {vid: controllers[vid].act() for vid in env.active_agents}
        results, spawned = env.step(actions)
        if policy_net is not None:
            for vid, r in results.items():
                controllers[vid].observe(r)
                if r.status is not VehicleStatus.ACTIVE:
                    del controllers[vid]
            for vid, obs in spawned.items():
                controllers[vid] = controller_for(vid, obs)
        rows.append(trace_row(step, env.sim_time, results))
        active = env.active_agents
        if active:
            layers = env.render_view(active[0])
            grids = {"navigable": layers.navigable, "obstacles": layers.obstacles,
                     "path": layers.path}
        else:
            zero = np.zeros((GRID_SIZE, GRID_SIZE), dtype=np.uint8)
            grids = {"navigable": zero, "obstacles": zero, "path": zero}
        for name, grid in grids.items():
            write_pgm(grid, frames_dir / f"frame_{step:05d}_{name}.pgm")
            frames_written += 1

    (out / "trace.csv").write_text("\n".join(rows) + "\n")
    return len(rows) - 1, frames_written


def _cmd_replay(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args.out, cfg, "replay")
    _echo_config(cfg, out)
    scripted = args.scripted if (args.scripted or args.checkpoint) else "maintain"
    n_rows, n_frames = run_replay(cfg, args.steps, scripted, args.checkpoint, out)
    print(f"wrote {n_rows} trace rows and {n_frames} PGM frames to {out}")
    return EXIT_OK


def _cmd_plot(args) -> int:
    text = Path(args.stats).read_text()
    stats = stats_from_csv(text)
    if not stats:
        raise ValueError("stats CSV contains no episodes")
    window = max(1, min(100, len(stats) // 5 or 1))
    episodes = [s.episode for s in stats]
    goal_flags = [1.0 if s.outcome == "goal" else 0.0 for s in stats]
    rewards = [s.cum_reward for s in stats]

    def rolling(xs):
        out = []
        acc = 0.0
        for i, x in enumerate(xs):
            acc += x
            if i >= window:
                acc -= xs[i - window]
            out.append(acc / min(i + 1, window))
        return out

    svg = svg_line_chart(
        episodes,
        [(f"goal ratio (rolling {window})", rolling(goal_flags), "left"),
         (f"episode reward (rolling {window})", rolling(rewards), "right")],
        title="learning curves", x_label="episode",
        left_label="goal ratio", right_label="episode reward",
    )
    Path(args.out).write_text(svg)
    print(f"wrote {args.out}")
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "validate": _cmd_validate,
    "eval-sweep": _cmd_eval_sweep,
    "replay": _cmd_replay,
    "plot": _cmd_plot,
}


def main(argv: list[str] | None = None) -> int:
    level = getattr(logging, os.environ.get("ROUNDABOUT_MARL_LOG", "warning").upper(), logging.WARNING)
    logging.basicConfig(level=level)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        log.debug("traceback", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
