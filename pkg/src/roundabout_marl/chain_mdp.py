"""Deterministic chain MDP plus a value-iteration oracle.

An 8-state corridor certifies the actor-critic core end to end at desk
scale: move right to collect +1 at the terminal end, pay 0.01 per step,
episodes truncate after 50 steps. The environment speaks the exact same
reset/step protocol as the traffic world, so the trainer runs unmodified
with one agent.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .env import Observation, RewardBreakdown, StepResult, VehicleStatus
from .net import NetConfig, PolicyValueNet, forward
from .rl import RLConfig
from .training import TrainerConfig, run_training

ACTION_LEFT = 0
ACTION_RIGHT = 1
ACTION_STAY = 2


@dataclass(frozen=True)
class ChainConfig:
    n_states: int = 8
    step_penalty: float = 0.01
    goal_reward: float = 1.0
    gamma: float = 0.99
    horizon: int = 50
    seed: int = 0


class ChainMDP:
    """Single-agent corridor with the multi-agent environment interface.

    Observations are a one-hot state vector in the numeric slot (no
    frames). When an episode ends, the next agent spawns in the same step,
    mirroring the traffic world's respawn behavior.
    """

    def __init__(self, cfg: ChainConfig = ChainConfig()):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.state: Optional[int] = None
        self.agent: Optional[int] = None
        self.elapsed = 0
        self._next_id = 0
        self.step_count = 0

    @property
    def goal(self) -> int:
        return self.cfg.n_states - 1

    @property
    def active_agents(self) -> tuple[int, ...]:
        return (self.agent,) if self.agent is not None else ()

    def _one_hot(self, state: int) -> Observation:
        vec = np.zeros(self.cfg.n_states)
        vec[state] = 1.0
        return Observation(frames=None, numeric=vec)

    def _spawn(self) -> dict[int, Observation]:
        self.state = int(self.rng.integers(0, self.goal))
        self.agent = self._next_id
        self._next_id += 1
        self.elapsed = 0
        return {self.agent: self._one_hot(self.state)}

    def reset(self) -> dict[int, Observation]:
        self.rng = np.random.default_rng(self.cfg.seed)
        self._next_id = 0
        self.step_count = 0
        return self._spawn()

    def step(self, actions: dict[int, int]) -> tuple[dict[int, StepResult], dict[int, Observation]]:
        if self.agent is None:
            raise RuntimeError("environment not reset")
        if set(actions) != {self.agent}:
            raise ValueError(f"expected exactly one action for agent {self.agent}")
        action = actions[self.agent]
        self.step_count += 1
        if action == ACTION_RIGHT:
            self.state = min(self.state + 1, self.goal)
        elif action == ACTION_LEFT:
            self.state = max(self.state - 1, 0)
        elif action != ACTION_STAY:
            raise ValueError(f"unknown action {action!r}")
        self.elapsed += 1

        reached = self.state == self.goal
        truncated = not reached and self.elapsed >= self.cfg.horizon
        if reached:
            status = VehicleStatus.REACHED_GOAL
        elif truncated:
            status = VehicleStatus.TIMED_OUT
        else:
            status = VehicleStatus.ACTIVE
        reward = RewardBreakdown(
            r_terminal=self.cfg.goal_reward if reached else 0.0,
            r_danger=0.0,
            r_speed=-self.cfg.step_penalty,
        )
        obs = None if status is not VehicleStatus.ACTIVE else self._one_hot(self.state)
        results = {self.agent: StepResult(observation=obs, reward=reward, status=status, speed=0.0)}
        spawned: dict[int, Observation] = {}
        if status is not VehicleStatus.ACTIVE:
            self.agent = None
            spawned = self._spawn()
        return results, spawned


def value_iteration(cfg: ChainConfig, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Bellman-optimality fixed point and greedy policy.

    The terminal state is absorbing with value 0. Convergence: sweeps stop
    once the max-norm change drops below tol.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = cfg.n_states
    goal = n - 1
    v = np.zeros(n)
    moves = {ACTION_LEFT: -1, ACTION_RIGHT: +1, ACTION_STAY: 0}
    while True:
        new_v = np.zeros(n)
        for s in range(n - 1):
            best = -np.inf
            for delta in moves.values():
                nxt = min(max(s + delta, 0), goal)
                r = -cfg.step_penalty + (cfg.goal_reward if nxt == goal else 0.0)
                q = r + (0.0 if nxt == goal else cfg.gamma * v[nxt])
                best = max(best, q)
            new_v[s] = best
        if np.abs(new_v - v).max() < tol:
            v = new_v
            break
        v = new_v
    policy = np.zeros(n, dtype=int)
    for s in range(n - 1):
        qs = []
        for action, delta in moves.items():
            nxt = min(max(s + delta, 0), goal)
            r = -cfg.step_penalty + (cfg.goal_reward if nxt == goal else 0.0)
            qs.append((r + (0.0 if nxt == goal else cfg.gamma * v[nxt]), action))
        policy[s] = max(qs)[1]
    policy[goal] = ACTION_STAY
    return v, policy


def chain_net_config(cfg: ChainConfig = ChainConfig()) -> NetConfig:
    """Dense-only network sized for one-hot states; the visual trunk is bypassed."""
    return NetConfig(visual=False, numeric_dim=cfg.n_states,
                     numeric_hidden=(64, 64), merge_features=64)


def evaluate_chain_policy(params: dict[str, np.ndarray], net_cfg: NetConfig,
                          chain_cfg: ChainConfig, v_star: np.ndarray,
                          pi_star: np.ndarray) -> tuple[float, float]:
    """(greedy agreement over non-terminal states, max value error)."""
    net = PolicyValueNet(net_cfg, params)
    agree = 0
    err = 0.0
    n = chain_cfg.n_states
    for s in range(n - 1):
        vec = np.zeros(n)
        vec[s] = 1.0
        logits, value, _ = forward(net, None, vec, keep_cache=False)
        agree += int(np.argmax(logits) == pi_star[s])
        err = max(err, abs(value - v_star[s]))
    return agree / (n - 1), err


@dataclass
class ValidationReport:
    rows: list[tuple[int, float, float]]  # (env step, agreement, value error)
    passed: bool
    steps_used: int
    final_agreement: float
    final_value_error: float
    agreement_threshold: float
    value_error_threshold: float

    def to_csv(self) -> str:
        lines = ["step,agreement,value_error"]
        for step, agree, err in self.rows:
            lines.append(f"{step},{agree!r},{err!r}")
        return "\n".join(lines) + "\n"


def run_validation(rl_cfg: RLConfig = RLConfig(), trainer_cfg: TrainerConfig | None = None,
                   chain_cfg: ChainConfig = ChainConfig(),
                   max_steps: int = 50_000, eval_every: int = 2_000,
                   agreement_threshold: float = 0.95,
                   value_error_threshold: float = 0.15) -> ValidationReport:
    """Train single-agent on the chain and score it against value iteration.

    Action repeat is forced to 1 (the corridor is a one-decision-per-step
    task); everything else follows the supplied configs. Training stops
    early once both thresholds are met.
    """
    rl = replace(rl_cfg, action_repeat=1)
    trainer = trainer_cfg or TrainerConfig(seed=chain_cfg.seed)
    trainer = replace(trainer, n_env=1, n_ag=1, total_episodes=10**9, max_env_steps=max_steps)
    net_cfg = chain_net_config(chain_cfg)
    v_star, pi_star = value_iteration(chain_cfg)

    rows: list[tuple[int, float, float]] = []
    from .net import init_params

    untrained = init_params(net_cfg, trainer.seed)
    rows.append((0, *evaluate_chain_policy(untrained.params, net_cfg, chain_cfg, v_star, pi_star)))

    def probe(params: dict[str, np.ndarray], steps: int) -> bool:
        agree, err = evaluate_chain_policy(params, net_cfg, chain_cfg, v_star, pi_star)
        rows.append((steps, agree, err))
        return agree >= agreement_threshold and err < value_error_threshold

    result = run_training(
        trainer, rl,
        env_factory=lambda i: ChainMDP(replace(chain_cfg, seed=chain_cfg.seed + i)),
        net_config=net_cfg,
        probe_every=eval_every,
        probe_fn=probe,
    )
    agree, err = evaluate_chain_policy(result.params, net_cfg, chain_cfg, v_star, pi_star)
    rows.append((result.env_steps, agree, err))
    passed = agree >= agreement_threshold and err < value_error_threshold
    return ValidationReport(rows, passed, result.env_steps, agree, err,
                            agreement_threshold, value_error_threshold)
