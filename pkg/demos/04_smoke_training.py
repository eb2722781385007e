"""Train driving agents for a short session and plot the learning curve.

Two agents share one roundabout in the simplified regime where the
accelerate command saturates at the vehicle's target speed. 150 episodes
is nowhere near convergence: expect mean speed to drift upward while the
goal ratio only starts moving later (the acceptance suite's 2000-episode
run reaches goal ratios above 0.7). Writes a checkpoint, a stats CSV, and
an SVG learning curve next to this script. A few minutes of runtime.
"""

from pathlib import Path

from roundabout_marl import (
    EnvConfig,
    GeometryConfig,
    NetConfig,
    PolicyValueNet,
    RLConfig,
    TrafficEnv,
    TrainerConfig,
    build_roundabout,
    run_training,
    save_checkpoint,
)
from roundabout_marl.training import save_stats_csv

EPISODES = 150
SEED = 4

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

rmap = build_roundabout(GeometryConfig())


def env_factory(i):
    cfg = EnvConfig(seed=SEED + 7919 * i, max_vehicles=2, speed_cap_mode="target_cap")
    return TrafficEnv(rmap, cfg)


print(f"training 2 agents in 1 instance for {EPISODES} episodes...")
result = run_training(
    TrainerConfig(n_env=1, n_ag=2, total_episodes=EPISODES, seed=SEED),
    RLConfig(),
    env_factory,
    NetConfig(),
)

save_stats_csv(result.stats, out_dir / "train_stats.csv")
save_checkpoint(PolicyValueNet(result.net_config, result.params), out_dir / "smoke_checkpoint.bin")

chunk = 50
print(f"\n{result.episodes} episodes over {result.env_steps} environment steps")
for k in range(0, EPISODES, chunk):
    part = result.stats[k:k + chunk]
    goals = sum(1 for s in part if s.outcome == "goal")
    speed = sum(s.mean_speed for s in part) / len(part)
    print(f"  episodes {k:4d}-{k + len(part) - 1}: goal ratio {goals / len(part):.2f}, "
          f"mean speed {speed:.2f} m/s")

from roundabout_marl.cli import main as cli_main

cli_main(["plot", "--stats", str(out_dir / "train_stats.csv"),
          "-o", str(out_dir / "learning_curves.svg")])
print(f"checkpoint, stats, and curves written to {out_dir}")
