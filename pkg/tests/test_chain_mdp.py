"""Chain MDP mechanics and the value-iteration oracle."""

import numpy as np
import pytest

from roundabout_marl.chain_mdp import (
    ACTION_RIGHT,
    ChainConfig,
    ChainMDP,
    chain_net_config,
    evaluate_chain_policy,
    value_iteration,
)
from roundabout_marl.env import TrafficEnv, VehicleStatus
from roundabout_marl.net import init_params


def closed_form_v_star(cfg: ChainConfig) -> np.ndarray:
    """Independent oracle: m = steps to goal, discounted penalties plus bonus."""
    v = np.zeros(cfg.n_states)
    for s in range(cfg.n_states - 1):
        m = cfg.n_states - 1 - s
        penalties = sum(cfg.gamma**k * -cfg.step_penalty for k in range(m))
        v[s] = penalties + cfg.gamma ** (m - 1) * cfg.goal_reward
    return v


def test_value_iteration_against_closed_form():
    cfg = ChainConfig()
    v, pi = value_iteration(cfg, tol=1e-12)
    want = closed_form_v_star(cfg)
    assert np.abs(v - want).max() < 1e-8


def test_state_adjacent_to_goal():
    cfg = ChainConfig()
    v, _ = value_iteration(cfg)
    assert v[cfg.n_states - 2] == pytest.approx(cfg.goal_reward - cfg.step_penalty, abs=1e-10)


def test_optimal_policy_always_right_and_values_monotone():
    cfg = ChainConfig()
    v, pi = value_iteration(cfg)
    assert all(pi[s] == ACTION_RIGHT for s in range(cfg.n_states - 1))
    assert (np.diff(v[: cfg.n_states - 1]) > 0).all()


def test_value_iteration_convergence_tolerance():
    cfg = ChainConfig()
    v_tight, _ = value_iteration(cfg, tol=1e-12)
    v_loose, _ = value_iteration(cfg, tol=1e-4)
    assert np.abs(v_tight - v_loose).max() < 1e-3


def test_chain_episode_dynamics():
    env = ChainMDP(ChainConfig(seed=3))
    obs = env.reset()
    (agent,) = obs
    assert obs[agent].numeric.sum() == 1.0
    # drive right until termination
    for _ in range(10):
        results, spawned = env.step({agent: ACTION_RIGHT})
        r = results[agent]
        if r.status is not VehicleStatus.ACTIVE:
            assert r.status is VehicleStatus.REACHED_GOAL
            assert r.reward.total == pytest.approx(1.0 - 0.01)
            assert spawned  # immediate respawn with a new id
            assert next(iter(spawned)) == agent + 1
            break
        assert r.reward.total == pytest.approx(-0.01)
    else:
        pytest.fail("never reached the goal moving right")


def test_chain_horizon_truncation():
    env = ChainMDP(ChainConfig(seed=4, horizon=5))
    obs = env.reset()
    (agent,) = obs
    for i in range(5):
        results, spawned = env.step({agent: 2})  # stay forever
        r = results[agent]
        if i < 4:
            assert r.status is VehicleStatus.ACTIVE
        else:
            assert r.status is VehicleStatus.TIMED_OUT
            assert r.reward.r_terminal == 0.0  # truncation carries no bonus/penalty
            assert spawned


def test_chain_determinism():
    def run():
        env = ChainMDP(ChainConfig(seed=5))
        obs = env.reset()
        agent = next(iter(obs))
        visits = []
        rng = np.random.default_rng(0)
        for _ in range(200):
            results, spawned = env.step({agent: int(rng.integers(3))})
            visits.append((agent, env.state))
            if spawned:
                agent = next(iter(spawned))
        return visits

    assert run() == run()


def test_chain_speaks_the_environment_protocol():
    for attr in ("reset", "step", "active_agents"):
        assert hasattr(ChainMDP, attr)
        assert hasattr(TrafficEnv, attr)


def test_validation_value_error_decreases():
    from roundabout_marl.chain_mdp import run_validation
    from roundabout_marl.training import TrainerConfig

    rep = run_validation(trainer_cfg=TrainerConfig(seed=6), chain_cfg=ChainConfig(seed=6),
                         max_steps=4000, eval_every=2000)
    assert rep.rows[0][0] == 0  # untrained baseline row
    assert rep.rows[-1][2] < rep.rows[0][2]


def test_untrained_agreement_is_near_chance():
    cfg = ChainConfig()
    net_cfg = chain_net_config(cfg)
    v_star, pi_star = value_iteration(cfg)
    agreements = []
    for seed in range(24):
        net = init_params(net_cfg, seed)
        agree, _ = evaluate_chain_policy(net.params, net_cfg, cfg, v_star, pi_star)
        agreements.append(agree)
    mean = float(np.mean(agreements))
    assert 0.1 < mean < 0.65  # random one-hot logits sit near 1/3
