"""Roundabout traffic microsimulation with cooperative learning drivers.

A single-lane three-leg roundabout where every vehicle is controlled by a
shared policy/value network trained with an asynchronous multi-agent
n-step actor-critic. The package bundles the world model and rasterized
observations, the from-scratch network with exact gradients, the trainer,
a chain-task validation oracle, and behavior-tuning evaluation.
"""

from .chain_mdp import ChainConfig, ChainMDP, run_validation, value_iteration
from .config import ConfigError, RunConfig, config_to_json, parse_config
from .env import (
    Action,
    EnvConfig,
    Observation,
    RewardBreakdown,
    RewardConfig,
    StepResult,
    TrafficEnv,
    VehicleState,
    VehicleStatus,
    apply_action,
    compute_reward,
    detect_collisions,
    numeric_inputs,
    r_speed,
    safety_violation,
    yield_violation,
)
from .evaluation import SweepRow, SweepSpec, run_sweep, summarize
from .geometry import (
    GeometryConfig,
    PathSpec,
    RoundaboutMap,
    ViewLayers,
    arc_point,
    build_roundabout,
    path_for,
    rasterize_view,
    write_pgm,
)
from .net import (
    Gradients,
    NetConfig,
    PolicyValueNet,
    backward,
    forward,
    init_params,
    load_checkpoint,
    log_softmax,
    save_checkpoint,
    softmax,
)
from .rl import (
    RepeatState,
    RLConfig,
    TrajectoryBuffer,
    TrajectoryRecord,
    accumulate_update,
    advantages,
    n_step_returns,
    select_action,
)
from .training import (
    EpisodeStats,
    GlobalStore,
    TrainerConfig,
    apply_rmsprop,
    run_training,
    snapshot,
)

__version__ = "0.1.0"
