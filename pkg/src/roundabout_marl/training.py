"""Asynchronous multi-agent actor-critic training.

Topology: n_env independent environment instances, each hosting n_ag agent
workers. Within an instance every worker submits one action per tick and
the whole instance advances through a two-phase barrier (assign, then
step); a worker that is computing its end-of-episode gradients simply
holds the barrier. Workers copy the master parameters at episode start,
accumulate gradients every n decision steps, and push the accumulated
episode gradients to the master exactly once, at episode end, through a
serialized shared-statistics RMSProp update.

With a single worker the whole loop runs inline on the calling thread and
is bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .env import Observation, StepResult, VehicleStatus
from .net import Gradients, NetConfig, PolicyValueNet, forward, init_params, log_softmax, save_checkpoint
from .rl import (
    RepeatState,
    RLConfig,
    TrajectoryBuffer,
    TrajectoryRecord,
    accumulate_update,
    obs_to_inputs,
    select_action,
)

log = logging.getLogger(__name__)

_OUTCOME = {
    VehicleStatus.REACHED_GOAL: "goal",
    VehicleStatus.CRASHED: "crash",
    VehicleStatus.TIMED_OUT: "timeout",
}


@dataclass(frozen=True)
class TrainerConfig:
    n_env: int = 1
    n_ag: int = 1
    lr: float = 7e-4
    rmsprop_decay: float = 0.99
    rmsprop_eps: float = 1e-5
    total_episodes: int = 1000
    seed: int = 0
    checkpoint_every: Optional[int] = None
    max_env_steps: Optional[int] = None

    def __post_init__(self):
        if self.n_env < 1 or self.n_ag < 1:
            raise ValueError("n_env and n_ag must be at least 1")


@dataclass(frozen=True)
class EpisodeStats:
    episode: int
    agent: int
    outcome: str
    cum_reward: float
    mean_speed: float
    steps: int


class GlobalStore:
    """Master parameters plus shared RMSProp second moments.

    Applies are serialized under a lock; snapshots are internally
    consistent full copies.
    """

    def __init__(self, net: PolicyValueNet):
        self.net_config = net.config
        self._params = {k: v.copy() for k, v in net.params.items()}
        self._ms = {k: np.zeros_like(v) for k, v in net.params.items()}
        self._lock = threading.Lock()
        self.update_counter = 0
        self.version = 0

    def apply(self, grads: Gradients, cfg: TrainerConfig) -> int:
        if set(grads.buffers) != set(self._params):
            raise ValueError("gradient keys do not match the master parameters")
        with self._lock:
            for k, g in grads.buffers.items():
                if g.shape != self._params[k].shape:
                    raise ValueError(f"{k}: gradient shape mismatch")
                m = self._ms[k]
                m *= cfg.rmsprop_decay
                m += (1.0 - cfg.rmsprop_decay) * g * g
                self._params[k] -= cfg.lr * g / (np.sqrt(m) + cfg.rmsprop_eps)
            self.update_counter += 1
            self.version += 1
            return self.version

    def snapshot_params(self) -> dict[str, np.ndarray]:
        with self._lock:
            return {k: v.copy() for k, v in self._params.items()}

    def snapshot_ms(self) -> dict[str, np.ndarray]:
        with self._lock:
            return {k: v.copy() for k, v in self._ms.items()}


def apply_rmsprop(store: GlobalStore, grads: Gradients, cfg: TrainerConfig) -> int:
    """m <- a*m + (1-a)*g^2;  theta <- theta - lr*g/(sqrt(m) + eps)."""
    return store.apply(grads, cfg)


def snapshot(store: GlobalStore) -> PolicyValueNet:
    return PolicyValueNet(store.net_config, store.snapshot_params())


@dataclass
class EpisodeEnd:
    agent: int
    outcome: str
    cum_reward: float
    mean_speed: float
    steps: int
    pushed: bool


class LearningDriver:
    """One agent's acting/learning state over successive episodes."""

    def __init__(self, store: GlobalStore, trainer_cfg: TrainerConfig,
                 rl_cfg: RLConfig, rng: np.random.Generator):
        self.store = store
        self.trainer_cfg = trainer_cfg
        self.rl_cfg = rl_cfg
        self.rng = rng
        self.net = PolicyValueNet(store.net_config, store.snapshot_params())
        self.agent_id: Optional[int] = None

    def begin_episode(self, agent_id: int, obs: Observation) -> None:
        self.net.params = self.store.snapshot_params()
        self.agent_id = agent_id
        self.obs = obs
        self.buffer = TrajectoryBuffer(self.rl_cfg.n)
        self.grads = Gradients.zeros_like(self.net)
        self.repeat = RepeatState(self.rl_cfg.action_repeat)
        self.pending: Optional[TrajectoryRecord] = None
        self.cum_reward = 0.0
        self.speed_sum = 0.0
        self.steps = 0

    def act(self) -> int:
        if self.repeat.count % self.repeat.action_repeat == 0:
            visual, numeric = obs_to_inputs(self.obs, self.net.config.visual)
            logits, value, cache = forward(self.net, visual, numeric)
            if self.pending is not None:
                self._commit_pending(current_value=value)
            action, _ = select_action(logits, self.rng, self.repeat)
            self.pending = TrajectoryRecord(self.obs, action, 0.0, value,
                                            log_softmax(logits), cache)
            return action
        action, _ = select_action(np.zeros(3), self.rng, self.repeat)
        return action

    def _commit_pending(self, current_value: float) -> None:
        self.buffer.append(self.pending)
        self.pending = None
        if self.buffer.full:
            self.buffer.seal(terminal=False, bootstrap=current_value)
            accumulate_update(self.net, self.buffer, self.rl_cfg, self.grads)
            self.buffer = TrajectoryBuffer(self.rl_cfg.n)

    def observe(self, result: StepResult) -> Optional[EpisodeEnd]:
        self.pending.reward += result.reward.total
        self.cum_reward += result.reward.total
        self.speed_sum += result.speed
        self.steps += 1
        if result.status is VehicleStatus.ACTIVE:
            self.obs = result.observation
            return None
        self.buffer.append(self.pending)
        self.pending = None
        self.buffer.seal(terminal=True, bootstrap=0.0)
        accumulate_update(self.net, self.buffer, self.rl_cfg, self.grads)
        apply_rmsprop(self.store, self.grads, self.trainer_cfg)
        end = EpisodeEnd(
            agent=self.agent_id,
            outcome=_OUTCOME[result.status],
            cum_reward=self.cum_reward,
            mean_speed=self.speed_sum / max(1, self.steps),
            steps=self.steps,
            pushed=True,
        )
        self.agent_id = None
        return end


class ScriptedDriver:
    """Constant-action driver: exercises the barrier without learning."""

    def __init__(self, action: int):
        self.action = int(action)
        self.agent_id: Optional[int] = None

    def begin_episode(self, agent_id: int, obs: Observation) -> None:
        self.agent_id = agent_id
        self.cum_reward = 0.0
        self.speed_sum = 0.0
        self.steps = 0

    def act(self) -> int:
        return self.action

    def observe(self, result: StepResult) -> Optional[EpisodeEnd]:
        self.cum_reward += result.reward.total
        self.speed_sum += result.speed
        self.steps += 1
        if result.status is VehicleStatus.ACTIVE:
            return None
        end = EpisodeEnd(self.agent_id, _OUTCOME[result.status], self.cum_reward,
                         self.speed_sum / max(1, self.steps), self.steps, pushed=False)
        self.agent_id = None
        return end


@dataclass
class TrainingResult:
    params: dict[str, np.ndarray]
    net_config: NetConfig
    stats: list[EpisodeStats]
    episodes: int
    env_steps: int
    gradient_pushes: int


class TrainingError(RuntimeError):
    """A worker failed; the stats gathered so far ride along."""

    def __init__(self, message: str, stats: list[EpisodeStats]):
        super().__init__(message)
        self.stats = stats


class _Coordinator:
    """Run-wide counters, stop decision, and the stats sink."""

    def __init__(self, cfg: TrainerConfig, store: GlobalStore,
                 checkpoint_dir=None,
                 probe_every: Optional[int] = None,
                 probe_fn: Optional[Callable[[dict, int], bool]] = None):
        self.cfg = cfg
        self.store = store
        self.lock = threading.Lock()
        self.episodes = 0
        self.env_steps = 0
        self.stats: list[EpisodeStats] = []
        self.stop = threading.Event()
        self.error: Optional[BaseException] = None
        self.checkpoint_dir = checkpoint_dir
        self.probe_every = probe_every
        self.probe_fn = probe_fn
        self._next_probe = probe_every if probe_every else None

    def record_step(self) -> None:
        probe_now = False
        with self.lock:
            self.env_steps += 1
            steps = self.env_steps
            if self.cfg.max_env_steps is not None and steps >= self.cfg.max_env_steps:
                self.stop.set()
            if self._next_probe is not None and steps >= self._next_probe:
                self._next_probe += self.probe_every
                probe_now = True
        if probe_now and self.probe_fn(self.store.snapshot_params(), steps):
            self.stop.set()

    def record_episode(self, end: EpisodeEnd) -> None:
        with self.lock:
            idx = self.episodes
            self.episodes += 1
            self.stats.append(EpisodeStats(idx, end.agent, end.outcome,
                                           end.cum_reward, end.mean_speed, end.steps))
            done = self.episodes >= self.cfg.total_episodes
            hit_checkpoint = (self.checkpoint_dir is not None
                              and self.cfg.checkpoint_every
                              and self.episodes % self.cfg.checkpoint_every == 0)
            count = self.episodes
        if hit_checkpoint:
            path = f"{self.checkpoint_dir}/checkpoint_ep{count:06d}.bin"
            save_checkpoint(snapshot(self.store), path)
        if done:
            self.stop.set()


class _Instance:
    """One environment plus its n_ag worker slots and two barriers."""

    def __init__(self, env, n_ag: int, coord: _Coordinator):
        self.env = env
        self.n_ag = n_ag
        self.coord = coord
        self.actions: list[Optional[int]] = [None] * n_ag
        self.agent_of_slot: list[Optional[int]] = [None] * n_ag
        self.assignments: dict[int, tuple[int, Observation]] = {}
        self.results: dict[int, StepResult] = {}
        self.backlog: list[tuple[int, Observation]] = []
        self.stop_now = False
        self.barrier_assign = threading.Barrier(n_ag, action=self._do_assign)
        self.barrier_step = threading.Barrier(n_ag, action=self._do_step)

    def start(self, initial: dict[int, Observation]) -> None:
        self.backlog.extend(sorted(initial.items()))

    def _do_assign(self) -> None:
        if self.coord.stop.is_set():
            self.stop_now = True
            return
        for slot in range(self.n_ag):
            if self.agent_of_slot[slot] is None and self.backlog:
                agent_id, obs = self.backlog.pop(0)
                self.assignments[slot] = (agent_id, obs)
                self.agent_of_slot[slot] = agent_id

    def _do_step(self) -> None:
        joint = {}
        for slot in range(self.n_ag):
            agent_id = self.agent_of_slot[slot]
            if agent_id is not None and self.actions[slot] is not None:
                joint[agent_id] = self.actions[slot]
        results, spawned = self.env.step(joint)
        self.results = results
        self.backlog.extend(sorted(spawned.items()))
        self.coord.record_step()

    def release_slot(self, slot: int) -> None:
        self.agent_of_slot[slot] = None


def _slot_iteration(inst: _Instance, slot: int, driver) -> bool:
    """Phase work between the barriers; returns False once stopped."""
    if inst.stop_now:
        return False
    assignment = inst.assignments.pop(slot, None)
    if assignment is not None:
        driver.begin_episode(*assignment)
    inst.actions[slot] = driver.act() if driver.agent_id is not None else None
    return True


def _slot_post_step(inst: _Instance, slot: int, driver) -> None:
    if driver.agent_id is None:
        return
    result = inst.results.get(driver.agent_id)
    if result is None:
        return
    end = driver.observe(result)
    if end is not None:
        inst.release_slot(slot)
        inst.coord.record_episode(end)


def _worker_loop(inst: _Instance, slot: int, driver) -> None:
    try:
        while True:
            inst.barrier_assign.wait()
            if not _slot_iteration(inst, slot, driver):
                return
            inst.barrier_step.wait()
            _slot_post_step(inst, slot, driver)
    except threading.BrokenBarrierError:
        return
    except BaseException as exc:  # propagate worker failures to the caller
        inst.coord.error = exc
        inst.coord.stop.set()
        inst.barrier_assign.abort()
        inst.barrier_step.abort()


def _inline_loop(inst: _Instance, driver) -> None:
    while True:
        inst._do_assign()
        if not _slot_iteration(inst, 0, driver):
            return
        inst._do_step()
        _slot_post_step(inst, 0, driver)


def run_training(trainer_cfg: TrainerConfig, rl_cfg: RLConfig,
                 env_factory: Callable[[int], object],
                 net_config: NetConfig,
                 agent_factory: Optional[Callable[[GlobalStore, np.random.Generator], object]] = None,
                 checkpoint_dir=None,
                 probe_every: Optional[int] = None,
                 probe_fn: Optional[Callable[[dict, int], bool]] = None,
                 initial_params: Optional[dict[str, np.ndarray]] = None) -> TrainingResult:
    """Drive agents until total_episodes finish (or max_env_steps elapse).

    env_factory(i) builds the i-th environment instance. agent_factory
    overrides the default learning driver (used for scripted barrier
    tests). probe_fn, when given, is called with a parameter snapshot every
    probe_every environment steps and may stop the run early by returning
    True.
    """
    master = init_params(net_config, trainer_cfg.seed)
    if initial_params is not None:
        master = PolicyValueNet(net_config, {k: v.copy() for k, v in initial_params.items()})
    store = GlobalStore(master)
    coord = _Coordinator(trainer_cfg, store, checkpoint_dir, probe_every, probe_fn)

    seeds = np.random.SeedSequence(trainer_cfg.seed).spawn(trainer_cfg.n_env * trainer_cfg.n_ag)
    if agent_factory is None:
        agent_factory = lambda st, rng: LearningDriver(st, trainer_cfg, rl_cfg, rng)

    instances = []
    for i in range(trainer_cfg.n_env):
        inst = _Instance(env_factory(i), trainer_cfg.n_ag, coord)
        inst.start(inst.env.reset())
        instances.append(inst)

    if trainer_cfg.n_env == 1 and trainer_cfg.n_ag == 1:
        driver = agent_factory(store, np.random.default_rng(seeds[0]))
        _inline_loop(instances[0], driver)
    else:
        threads = []
        for i, inst in enumerate(instances):
            for slot in range(trainer_cfg.n_ag):
                rng = np.random.default_rng(seeds[i * trainer_cfg.n_ag + slot])
                driver = agent_factory(store, rng)
                t = threading.Thread(target=_worker_loop, args=(inst, slot, driver),
                                     name=f"worker-{i}-{slot}", daemon=True)
                threads.append(t)
        for t in threads:
            t.start()
        for t in threads:
            t.join()

    if coord.error is not None:
        raise TrainingError("training worker failed", coord.stats) from coord.error
    log.info("training finished: %d episodes, %d env steps", coord.episodes, coord.env_steps)
    return TrainingResult(
        params=store.snapshot_params(),
        net_config=net_config,
        stats=coord.stats,
        episodes=coord.episodes,
        env_steps=coord.env_steps,
        gradient_pushes=store.update_counter,
    )


STATS_HEADER = "episode,agent,outcome,cum_reward,mean_speed,steps"


def stats_to_csv(stats: list[EpisodeStats]) -> str:
    lines = [STATS_HEADER]
    for s in stats:
        lines.append(f"{s.episode},{s.agent},{s.outcome},{s.cum_reward!r},{s.mean_speed!r},{s.steps}")
    return "\n".join(lines) + "\n"


def stats_from_csv(text: str) -> list[EpisodeStats]:
    lines = [ln for ln in text.strip().splitlines() if ln]
    if not lines or lines[0] != STATS_HEADER:
        raise ValueError("unrecognized stats CSV header")
    out = []
    for ln in lines[1:]:
        ep, agent, outcome, cum, speed, steps = ln.split(",")
        out.append(EpisodeStats(int(ep), int(agent), outcome, float(cum), float(speed), int(steps)))
    return out


def save_stats_csv(stats: list[EpisodeStats], path) -> None:
    with open(path, "w") as fh:
        fh.write(stats_to_csv(stats))
