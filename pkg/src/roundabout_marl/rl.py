"""Actor-critic core: n-step returns, advantages, accumulated loss
gradients, and action selection with action repeat.

Sign convention: ``accumulate_update`` produces gradients of the composite
loss

    L = sum_i [ -log pi(a_i|s_i) * A_i
                + value_loss_coef * (R_i - V(s_i))^2
                + entropy_coef * sum_a pi log pi ]

so applying theta <- theta - lr * g / (sqrt(m) + eps) ascends the policy
objective and the entropy bonus while descending the value error. A_i is a
constant during differentiation: no gradient flows through V into the
policy term.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .env import Observation
from .net import Gradients, PolicyValueNet, backward, forward, log_softmax, softmax


@dataclass(frozen=True)
class RLConfig:
    n: int = 20
    gamma: float = 0.99
    action_repeat: int = 4
    entropy_coef: float = 0.01
    value_loss_coef: float = 0.5

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError("gamma must lie in [0, 1]")
        if self.action_repeat < 1:
            raise ValueError("action_repeat must be at least 1")


def obs_to_inputs(obs: Observation, visual: bool):
    """Flatten an observation into network inputs (frames become channels)."""
    numeric = np.asarray(obs.numeric, dtype=float)
    if not visual:
        return None, numeric
    if obs.frames is None:
        raise ValueError("observation carries no frames but the network is visual")
    f = obs.frames
    return f.reshape(f.shape[0] * f.shape[1], f.shape[2], f.shape[3]).astype(float), numeric


@dataclass
class TrajectoryRecord:
    observation: Observation
    action: int
    reward: float
    value_estimate: float
    log_probs: np.ndarray
    cache: Optional[dict] = None


class TrajectoryBuffer:
    """Per-agent slice of decision steps between gradient flushes.

    Holds at most n records. ``seal`` fixes the bootstrap: zero exactly when
    the slice ends at a terminal state, V(s_t) otherwise.
    """

    def __init__(self, n: int):
        self.n = n
        self.records: list[TrajectoryRecord] = []
        self.bootstrap_value: Optional[float] = None
        self.terminal_flag: Optional[bool] = None

    def __len__(self):
        return len(self.records)

    @property
    def full(self) -> bool:
        return len(self.records) >= self.n

    def append(self, record: TrajectoryRecord) -> None:
        if self.bootstrap_value is not None:
            raise ValueError("buffer already sealed")
        if len(self.records) >= self.n:
            raise ValueError(f"buffer exceeds n={self.n} records")
        self.records.append(record)

    def seal(self, terminal: bool, bootstrap: float) -> None:
        if terminal and bootstrap != 0.0:
            raise ValueError("terminal slices must bootstrap from 0")
        self.terminal_flag = terminal
        self.bootstrap_value = float(bootstrap)


def n_step_returns(rewards, bootstrap: float, gamma: float) -> np.ndarray:
    """Backward recursion R <- r_i + gamma * R seeded with the bootstrap."""
    rewards = list(rewards)
    if not rewards:
        raise ValueError("rewards must be non-empty")
    out = np.empty(len(rewards))
    acc = float(bootstrap)
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def advantages(returns, values) -> np.ndarray:
    returns = np.asarray(returns, dtype=float)
    values = np.asarray(values, dtype=float)
    if returns.shape != values.shape:
        raise ValueError("returns and values must have equal length")
    return returns - values


def policy_value_heads_grad(log_probs: np.ndarray, action: int, advantage: float,
                            value: float, ret: float, cfg: RLConfig):
    """(dlogits, dvalue) of one record's share of the composite loss."""
    p = np.exp(log_probs)
    one_hot = np.zeros_like(p)
    one_hot[action] = 1.0
    dlogits = (p - one_hot) * advantage
    if cfg.entropy_coef:
        neg_entropy = float(p @ log_probs)
        dlogits = dlogits + cfg.entropy_coef * p * (log_probs - neg_entropy)
    dvalue = 2.0 * cfg.value_loss_coef * (value - ret)
    return dlogits, dvalue


def accumulate_update(net: PolicyValueNet, buffer: TrajectoryBuffer, cfg: RLConfig,
                      grads: Gradients) -> Gradients:
    """Add one sealed slice's gradients into the accumulator.

    Uses each record's stored forward cache when it still matches the
    network; otherwise the observation is re-run.
    """
    if buffer.bootstrap_value is None:
        raise ValueError("buffer must be sealed before accumulating")
    if not buffer.records:
        raise ValueError("buffer is empty")
    rewards = [r.reward for r in buffer.records]
    values = [r.value_estimate for r in buffer.records]
    returns = n_step_returns(rewards, buffer.bootstrap_value, cfg.gamma)
    advs = advantages(returns, values)
    for rec, ret, adv in zip(buffer.records, returns, advs):
        cache = rec.cache
        if cache is None or cache.get("_params") is not net.params:
            visual, numeric = obs_to_inputs(rec.observation, net.config.visual)
            logits, value, cache = forward(net, visual, numeric)
            log_probs = log_softmax(logits)
        else:
            log_probs = log_softmax(cache["logits"])
            value = cache["value"]
        dlogits, dvalue = policy_value_heads_grad(log_probs, rec.action, float(adv),
                                                  value, float(ret), cfg)
        grads.add_(backward(net, cache, dlogits, dvalue))
    return grads


@dataclass
class RepeatState:
    """Action-repeat bookkeeping: sample on decision steps, replay otherwise."""

    action_repeat: int
    count: int = 0
    last_action: int = -1


def select_action(logits: np.ndarray, rng: np.random.Generator,
                  state: RepeatState) -> tuple[int, bool]:
    """Categorical sample every action_repeat-th call, repeat in between.

    Returns (action, is_decision); only decision steps belong in the
    trajectory buffer.
    """
    decision = state.count % state.action_repeat == 0
    if decision:
        p = softmax(np.asarray(logits, dtype=float))
        action = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
        action = min(action, len(p) - 1)
    else:
        action = state.last_action
    state.last_action = action
    state.count += 1
    return action, decision


def entropy(log_probs: np.ndarray) -> float:
    return -float(np.exp(log_probs) @ log_probs)
