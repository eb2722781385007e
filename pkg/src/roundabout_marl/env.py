"""Multi-agent roundabout environment.

Longitudinal kinematics on fixed lane-centerline paths, simultaneous joint
stepping with a one-action-per-active-agent barrier contract, collision and
danger-zone detection, shaped rewards, and per-agent episode lifecycle with
automatic respawning. A single instance is a sequential state machine;
independent instances may run in parallel.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from . import geometry
from .geometry import (
    VEHICLE_LENGTH,
    VEHICLE_WIDTH,
    PathSpec,
    RoundaboutMap,
    arc_point,
    path_for,
    path_xy,
    points_to_rect_distance,
    rects_overlap,
)

FRAME_STACK = 4
DISTANCE_NORM = 200.0  # meters; normalizes the distance-to-goal input
SPAWN_CLEAR_METERS = 10.0
_BAND_SAMPLE_STEP = 0.25  # meters; sampling step for danger-zone bands


class Action(enum.IntEnum):
    ACCELERATE = 0
    BRAKE = 1
    MAINTAIN = 2


class VehicleStatus(enum.Enum):
    ACTIVE = "active"
    REACHED_GOAL = "reached_goal"
    CRASHED = "crashed"
    TIMED_OUT = "timed_out"


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 0.1
    max_vehicles: int = 6
    v_max: float = 12.0
    accel: float = 1.0
    brake: float = -2.0
    episode_time_limit: float = 40.0
    target_speed_range: tuple[float, float] = (5.0, 8.0)
    speed_cap_mode: str = "global_cap"  # or "target_cap"
    seed: int = 0
    render_views: bool = True

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not (self.accel > 0 > self.brake):
            raise ValueError("require accel > 0 > brake")
        if self.speed_cap_mode not in ("global_cap", "target_cap"):
            raise ValueError(f"unknown speed_cap_mode {self.speed_cap_mode!r}")


@dataclass(frozen=True)
class RewardConfig:
    k_y: float = 0.05
    k_s: float = 0.05
    k_p: float = 0.001
    k_n: float = 0.03
    terminal_goal: float = 1.0
    terminal_crash: float = -1.0
    terminal_timeout: float = -1.0
    lookahead_horizon: float = 1.0  # seconds; danger distances are speed * horizon

    def __post_init__(self):
        for name in ("k_y", "k_s", "k_p", "k_n"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class RewardBreakdown:
    r_terminal: float
    r_danger: float
    r_speed: float

    @property
    def total(self) -> float:
        return self.r_terminal + self.r_danger + self.r_speed


@dataclass(frozen=True)
class Observation:
    """Hybrid observation: stacked views plus a numeric vector.

    frames is (FRAME_STACK, 3, 84, 84) uint8, ordered oldest to newest, or
    None when view rendering is disabled. numeric is float64.
    """

    frames: Optional[np.ndarray]
    numeric: np.ndarray


@dataclass(frozen=True)
class StepResult:
    observation: Optional[Observation]  # None once the agent is terminal
    reward: RewardBreakdown
    status: VehicleStatus
    speed: float


@dataclass
class VehicleState:
    id: int
    path: PathSpec
    s: float
    speed: float
    target_speed: float
    aggressiveness_override: Optional[float]
    spawn_time: float
    spawn_step: int
    episode_deadline: float
    status: VehicleStatus = VehicleStatus.ACTIVE

    def pose(self) -> tuple[float, float, float]:
        return arc_point(self.path, self.s)


def apply_action(v: VehicleState, action: int, cfg: EnvConfig) -> VehicleState:
    """Advance one vehicle by dt under a longitudinal action.

    Acceleration only takes effect below the speed cap (the global maximum,
    or the vehicle's target speed in target_cap mode). Position integrates
    the updated speed.
    """
    if v.status is not VehicleStatus.ACTIVE:
        raise ValueError("apply_action requires an active vehicle")
    speed = v.speed
    if action == Action.ACCELERATE:
        cap = v.target_speed if cfg.speed_cap_mode == "target_cap" else cfg.v_max
        if speed < cap:
            speed = min(max(speed + cfg.accel * cfg.dt, 0.0), cap)
    elif action == Action.BRAKE:
        speed = max(0.0, speed + cfg.brake * cfg.dt)
    elif action != Action.MAINTAIN:
        raise ValueError(f"unknown action {action!r}")
    s = min(v.path.total_length, v.s + speed * cfg.dt)
    return replace(v, speed=speed, s=s)


def detect_collisions(vehicles: list[VehicleState]) -> set[frozenset[int]]:
    """Unordered id pairs whose oriented footprints overlap with positive area."""
    poses = {v.id: v.pose() for v in vehicles}
    reach = math.hypot(VEHICLE_LENGTH, VEHICLE_WIDTH)
    pairs: set[frozenset[int]] = set()
    ordered = sorted(vehicles, key=lambda v: v.id)
    for i, a in enumerate(ordered):
        pa = poses[a.id]
        for b in ordered[i + 1:]:
            pb = poses[b.id]
            if math.hypot(pa[0] - pb[0], pa[1] - pb[1]) > reach:
                continue
            if rects_overlap(pa, pb):
                pairs.add(frozenset((a.id, b.id)))
    return pairs


def is_entering(v: VehicleState) -> bool:
    """Still on its entry leg, before the merge point."""
    return v.s < v.path.entry_length


def is_on_ring(v: VehicleState) -> bool:
    return v.path.entry_length <= v.s <= v.path.entry_length + v.path.ring_length


def yield_violation(agent: VehicleState, others: list[VehicleState],
                    lane_width: float, horizon: float = 1.0) -> bool:
    """Entering agent cuts the zone ahead of an already inserted vehicle.

    For each on-ring vehicle v the zone runs 3 * (v.speed * horizon) ahead
    along v's own path, stroked at lane width. The rule only applies while
    the agent is still before its merge point.
    """
    if not is_entering(agent):
        return False
    pose = agent.pose()
    half = 0.5 * lane_width
    for v in others:
        if v.id == agent.id or not is_on_ring(v):
            continue
        zone = 3.0 * v.speed * horizon
        if zone <= 0.0:
            continue
        s_end = min(v.s + zone, v.path.total_length)
        n = max(2, int(math.ceil((s_end - v.s) / _BAND_SAMPLE_STEP)) + 1)
        samples = path_xy(v.path, np.linspace(v.s, s_end, n))
        if (points_to_rect_distance(samples, pose) <= half).any():
            return True
    return False


def safety_violation(agent: VehicleState, others: list[VehicleState],
                     lane_width: float, horizon: float = 1.0) -> bool:
    """Front vehicle closer than the agent's one-horizon travel distance.

    The gap is measured along the agent's own path; a vehicle occupies the
    path where its center comes within half a lane width of it. The nearest
    occupant is exempt while it is still entering (cutting in from a leg).
    """
    d_a = agent.speed * horizon
    if d_a <= 0.0:
        return False
    half = 0.5 * lane_width
    # Sample a little past d_a so a vehicle projects onto its true arc
    # position rather than onto the window edge.
    s_end = min(agent.s + d_a + half + _BAND_SAMPLE_STEP, agent.path.total_length)
    if s_end <= agent.s:
        return False
    n = max(2, int(math.ceil((s_end - agent.s) / _BAND_SAMPLE_STEP)) + 1)
    svals = np.linspace(agent.s, s_end, n)
    samples = path_xy(agent.path, svals)
    nearest_gap = None
    nearest_vehicle = None
    for v in others:
        if v.id == agent.id:
            continue
        x, y, _ = v.pose()
        d = np.hypot(samples[:, 0] - x, samples[:, 1] - y)
        k = int(np.argmin(d))
        if d[k] > half:
            continue  # not on the agent's corridor
        gap = float(svals[k] - agent.s)
        if gap <= 0.0:
            continue  # alongside, not ahead
        if nearest_gap is None or gap < nearest_gap:
            nearest_gap = gap
            nearest_vehicle = v
    if nearest_vehicle is None or nearest_gap >= d_a:
        return False
    return not is_entering(nearest_vehicle)


def r_speed(s_a: float, s_t: float, cfg: RewardConfig) -> float:
    """Cruise-speed shaping: peaks at the target speed, penalizes excess."""
    if s_t <= 0:
        raise ValueError("target speed must be positive")
    if s_a < 0:
        raise ValueError("speed must be non-negative")
    if s_a <= s_t:
        return (s_a / s_t) * cfg.k_p
    return cfg.k_p - ((s_a - s_t) / s_t) * cfg.k_n


def compute_reward(speed: float, target_speed: float, status: VehicleStatus,
                   yielded: bool, unsafe: bool, cfg: RewardConfig) -> RewardBreakdown:
    """Terminal + danger + speed decomposition for one step.

    The yield penalty takes precedence over the safety penalty; the two
    never sum.
    """
    if status is VehicleStatus.REACHED_GOAL:
        r_term = cfg.terminal_goal
    elif status is VehicleStatus.CRASHED:
        r_term = cfg.terminal_crash
    elif status is VehicleStatus.TIMED_OUT:
        r_term = cfg.terminal_timeout
    else:
        r_term = 0.0
    if yielded:
        r_danger = -cfg.k_y
    elif unsafe:
        r_danger = -cfg.k_s
    else:
        r_danger = 0.0
    return RewardBreakdown(r_term, r_danger, r_speed(speed, target_speed, cfg))


def numeric_inputs(v: VehicleState, sim_time: float, cfg: EnvConfig) -> np.ndarray:
    """[speed, target speed, elapsed-time ratio, distance to goal], normalized.

    The elapsed-time ratio is replaced verbatim by the aggressiveness
    override when one is set; overrides are deliberately not clamped.
    """
    if v.aggressiveness_override is not None:
        etr = v.aggressiveness_override
    else:
        etr = (sim_time - v.spawn_time) / cfg.episode_time_limit
    return np.array([
        v.speed / cfg.v_max,
        v.target_speed / cfg.v_max,
        etr,
        (v.path.total_length - v.s) / DISTANCE_NORM,
    ])


class TrafficEnv:
    """Roundabout world hosting up to max_vehicles concurrently active agents.

    step() applies one action per active agent simultaneously, advances time
    by dt, resolves terminals, spawns at most one replacement, and renders
    fresh observations. All randomness flows through one seeded generator,
    so a fixed seed plus a fixed action script reproduces the trajectory
    bit for bit.
    """

    def __init__(self, rmap: RoundaboutMap, cfg: EnvConfig,
                 reward_cfg: RewardConfig | None = None,
                 spawn_override_fn: Callable[[np.random.Generator], Optional[float]] | None = None,
                 auto_spawn_cap: Optional[int] = None,
                 auto_spawn_entries: tuple[int, ...] = (0, 1, 2)):
        self.map = rmap
        self.cfg = cfg
        self.reward_cfg = reward_cfg or RewardConfig()
        self.spawn_override_fn = spawn_override_fn
        # Automatic spawning may be capped below max_vehicles and restricted
        # to a subset of entries so manually placed probes always find room.
        self.auto_spawn_cap = cfg.max_vehicles if auto_spawn_cap is None else auto_spawn_cap
        self.auto_spawn_entries = auto_spawn_entries
        self.paths = {(e, x): path_for(rmap, e, x) for e in range(3) for x in range(3)}
        self.rng = np.random.default_rng(cfg.seed)
        self.vehicles: dict[int, VehicleState] = {}
        self._stacks: dict[int, deque] = {}
        self._next_id = 0
        self.step_count = 0

    # -- lifecycle ---------------------------------------------------------

    @property
    def sim_time(self) -> float:
        return self.step_count * self.cfg.dt

    @property
    def active_agents(self) -> tuple[int, ...]:
        return tuple(sorted(self.vehicles))

    def reset(self) -> dict[int, Observation]:
        self.rng = np.random.default_rng(self.cfg.seed)
        self.vehicles.clear()
        self._stacks.clear()
        self._next_id = 0
        self.step_count = 0
        spawned = self._spawn_policy()
        out = {}
        if spawned is not None:
            out[spawned] = self._render_observation(spawned, new=True)
        return out

    def _entry_mouth_clear(self, entry: int) -> bool:
        for v in self.vehicles.values():
            if v.path.entry_id == entry and v.s <= SPAWN_CLEAR_METERS:
                return False
        return True

    def _spawn_policy(self) -> Optional[int]:
        """Spawn at most one vehicle on a random unblocked entry."""
        if len(self.vehicles) >= min(self.cfg.max_vehicles, self.auto_spawn_cap):
            return None
        free = [e for e in self.auto_spawn_entries if self._entry_mouth_clear(e)]
        if not free:
            return None
        entry = free[int(self.rng.integers(len(free)))]
        exit_ = int(self.rng.integers(3))
        lo, hi = self.cfg.target_speed_range
        target = float(self.rng.uniform(lo, hi))
        override = self.spawn_override_fn(self.rng) if self.spawn_override_fn else None
        return self._add_vehicle(entry, exit_, target, override)

    def spawn_vehicle(self, entry: int, exit_: int, target_speed: float,
                      aggressiveness_override: Optional[float] = None
                      ) -> tuple[int, Observation]:
        """Manually place a vehicle (used by evaluation probes)."""
        if len(self.vehicles) >= self.cfg.max_vehicles:
            raise RuntimeError("environment is full")
        if not self._entry_mouth_clear(entry):
            raise RuntimeError(f"entry {entry} mouth is occupied")
        vid = self._add_vehicle(entry, exit_, target_speed, aggressiveness_override)
        return vid, self._render_observation(vid, new=True)

    def _add_vehicle(self, entry: int, exit_: int, target: float,
                     override: Optional[float]) -> int:
        vid = self._next_id
        self._next_id += 1
        self.vehicles[vid] = VehicleState(
            id=vid,
            path=self.paths[(entry, exit_)],
            s=0.0,
            speed=0.0,
            target_speed=target,
            aggressiveness_override=override,
            spawn_time=self.sim_time,
            spawn_step=self.step_count,
            episode_deadline=self.sim_time + self.cfg.episode_time_limit,
        )
        return vid

    # -- observation assembly ----------------------------------------------

    def render_view(self, vid: int):
        """On-demand ViewLayers for one vehicle (replay export)."""
        return self._render_layers(vid)

    def _render_layers(self, vid: int):
        order = sorted(self.vehicles)
        poses = np.array([self.vehicles[i].pose() for i in order])
        v = self.vehicles[vid]
        return geometry.rasterize_view(self.map, poses, order.index(vid), v.path, v.s)

    def _render_observation(self, vid: int, new: bool = False) -> Observation:
        v = self.vehicles[vid]
        if self.cfg.render_views:
            layers = self._render_layers(vid)
            frame = np.stack([layers.navigable, layers.obstacles, layers.path])
            if new:
                self._stacks[vid] = deque([frame] * FRAME_STACK, maxlen=FRAME_STACK)
            else:
                self._stacks[vid].append(frame)
            frames = np.stack(list(self._stacks[vid]))
        else:
            frames = None
        return Observation(frames=frames, numeric=numeric_inputs(v, self.sim_time, self.cfg))

    def observation_for(self, vid: int) -> Observation:
        """Current observation without mutating the frame stack."""
        v = self.vehicles[vid]
        frames = None
        if self.cfg.render_views:
            frames = np.stack(list(self._stacks[vid]))
        return Observation(frames=frames, numeric=numeric_inputs(v, self.sim_time, self.cfg))

    # -- stepping ------------------------------------------------------------

    def step(self, actions: dict[int, int]) -> tuple[dict[int, StepResult], dict[int, Observation]]:
        """Advance the world one tick.

        actions must contain exactly one entry per active agent. Returns the
        per-actor results and the initial observations of any vehicle
        spawned this step.
        """
        active = set(self.vehicles)
        missing = active - set(actions)
        if missing:
            raise ValueError(f"missing action for active agent(s) {sorted(missing)}")
        unknown = set(actions) - active
        if unknown:
            raise ValueError(f"actions given for unknown agent(s) {sorted(unknown)}")

        order = sorted(active)
        for vid in order:
            self.vehicles[vid] = apply_action(self.vehicles[vid], actions[vid], self.cfg)
        self.step_count += 1
        now = self.sim_time

        vehicle_list = [self.vehicles[vid] for vid in order]
        crashed: set[int] = set()
        for pair in detect_collisions(vehicle_list):
            crashed |= set(pair)

        results: dict[int, StepResult] = {}
        lane_w = self.map.lane_width
        horizon = self.reward_cfg.lookahead_horizon
        for vid in order:
            v = self.vehicles[vid]
            if vid in crashed:
                status = VehicleStatus.CRASHED
            elif v.s >= v.path.total_length:
                status = VehicleStatus.REACHED_GOAL
            elif (self.step_count - v.spawn_step) * self.cfg.dt > self.cfg.episode_time_limit:
                status = VehicleStatus.TIMED_OUT
            else:
                status = VehicleStatus.ACTIVE
            yielded = yield_violation(v, vehicle_list, lane_w, horizon)
            unsafe = False if yielded else safety_violation(v, vehicle_list, lane_w, horizon)
            reward = compute_reward(v.speed, v.target_speed, status, yielded, unsafe, self.reward_cfg)
            results[vid] = StepResult(observation=None, reward=reward, status=status, speed=v.speed)
            self.vehicles[vid] = replace(v, status=status)

        for vid in order:
            if results[vid].status is not VehicleStatus.ACTIVE:
                del self.vehicles[vid]
                self._stacks.pop(vid, None)

        spawned_id = self._spawn_policy()
        spawned: dict[int, Observation] = {}
        for vid in sorted(self.vehicles):
            obs = self._render_observation(vid, new=(vid == spawned_id))
            if vid == spawned_id:
                spawned[vid] = obs
            else:
                results[vid] = replace(results[vid], observation=obs)
        return results, spawned
