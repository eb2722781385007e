"""Behavior-tuning evaluation: parameter sweeps, CSV reports, SVG plots.

A sweep drops one probe vehicle with a pinned behavior parameter into a
roundabout populated by policy-driven traffic and measures its goal ratio
and average speed over many episodes. The probe always uses entry 0 and
exit 1 to keep route variance out of the comparison.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .env import EnvConfig, Observation, RewardConfig, TrafficEnv, VehicleStatus
from .geometry import GeometryConfig, build_roundabout
from .net import PolicyValueNet, forward, load_checkpoint
from .rl import RepeatState, obs_to_inputs, select_action

PROBE_ENTRY = 0
PROBE_EXIT = 1
PROBE_TARGET_SPEED = 6.5  # fixed when sweeping aggressiveness
_MAX_FILLER_STEPS = 5_000


DEFAULT_AGGRESSIVENESS_GRID = (-0.2, 0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2)
DEFAULT_TARGET_SPEED_GRID = (4.0, 5.0, 6.0, 7.0, 8.0, 9.0)


@dataclass(frozen=True)
class SweepSpec:
    parameter: str = "aggressiveness"  # or "target_speed"
    values: tuple[float, ...] = DEFAULT_AGGRESSIVENESS_GRID
    episodes_per_value: int = 200
    action_repeat_eval: int = 1
    checkpoint: str = ""
    seed: int = 0

    def __post_init__(self):
        if self.parameter not in ("aggressiveness", "target_speed"):
            raise ValueError(f"unknown sweep parameter {self.parameter!r}")
        if self.episodes_per_value < 1:
            raise ValueError("episodes_per_value must be at least 1")
        if self.action_repeat_eval not in (1, 4):
            raise ValueError("action_repeat_eval must be 1 or 4")


@dataclass(frozen=True)
class SweepRow:
    value: float
    success_ratio: float
    avg_speed: float
    episodes: int
    crashes: int
    timeouts: int


class _Controller:
    """Drives one vehicle with the shared policy network."""

    def __init__(self, net: PolicyValueNet, rng: np.random.Generator,
                 action_repeat: int, obs: Observation):
        self.net = net
        self.rng = rng
        self.repeat = RepeatState(action_repeat)
        self.obs = obs
        self.speed_sum = 0.0
        self.steps = 0

    def act(self) -> int:
        if self.repeat.count % self.repeat.action_repeat == 0:
            visual, numeric = obs_to_inputs(self.obs, self.net.config.visual)
            logits, _, _ = forward(self.net, visual, numeric, keep_cache=False)
        else:
            logits = np.zeros(3)
        action, _ = select_action(logits, self.rng, self.repeat)
        return action

    def observe(self, result) -> None:
        self.speed_sum += result.speed
        self.steps += 1
        if result.observation is not None:
            self.obs = result.observation

    @property
    def mean_speed(self) -> float:
        return self.speed_sum / max(1, self.steps)


def run_sweep(spec: SweepSpec, env_cfg: EnvConfig = EnvConfig(),
              reward_cfg: RewardConfig = RewardConfig(),
              geometry_cfg: GeometryConfig = GeometryConfig(),
              net: Optional[PolicyValueNet] = None) -> list[SweepRow]:
    """One SweepRow per swept value.

    Background traffic draws random aggressiveness overrides (uniform [0,1])
    when sweeping aggressiveness, and a flat 0.5 when sweeping target
    speed; the probe carries the swept value. View rendering is skipped
    automatically for dense-only policies.
    """
    if not spec.values:
        raise ValueError("sweep needs at least one value")
    if net is None:
        net = load_checkpoint(spec.checkpoint)
    rmap = build_roundabout(geometry_cfg)
    rows = []
    for vi, value in enumerate(spec.values):
        rows.append(_run_one_value(spec, value, vi, env_cfg, reward_cfg, rmap, net))
    return rows


def _run_one_value(spec, value, value_index, env_cfg, reward_cfg, rmap, net) -> SweepRow:
    seed = int(np.random.SeedSequence((spec.seed, value_index)).generate_state(1)[0])
    render = net.config.visual
    cfg = EnvConfig(
        dt=env_cfg.dt, max_vehicles=env_cfg.max_vehicles, v_max=env_cfg.v_max,
        accel=env_cfg.accel, brake=env_cfg.brake,
        episode_time_limit=env_cfg.episode_time_limit,
        target_speed_range=env_cfg.target_speed_range,
        speed_cap_mode=env_cfg.speed_cap_mode, seed=seed, render_views=render,
    )
    if spec.parameter == "aggressiveness":
        background_override = lambda rng: float(rng.uniform(0.0, 1.0))
        probe_override, probe_target = float(value), PROBE_TARGET_SPEED
    else:
        background_override = lambda rng: 0.5
        probe_override, probe_target = 0.5, float(value)

    background_entries = tuple(e for e in range(3) if e != PROBE_ENTRY)
    env = TrafficEnv(rmap, cfg, reward_cfg, spawn_override_fn=background_override,
                     auto_spawn_cap=max(0, cfg.max_vehicles - 1),
                     auto_spawn_entries=background_entries)
    rng = np.random.default_rng(seed ^ 0x5EED)
    controllers: dict[int, _Controller] = {}
    for vid, obs in env.reset().items():
        controllers[vid] = _Controller(net, rng, spec.action_repeat_eval, obs)

    probe_id: Optional[int] = None
    episodes = goals = crashes = timeouts = 0
    speeds: list[float] = []
    filler = 0

    while episodes < spec.episodes_per_value:
        if probe_id is None:
            try:
                probe_id, obs = env.spawn_vehicle(PROBE_ENTRY, PROBE_EXIT, probe_target,
                                                  aggressiveness_override=probe_override)
                controllers[probe_id] = _Controller(net, rng, spec.action_repeat_eval, obs)
            except RuntimeError:
                filler += 1  # probe entry blocked; let traffic move on
                if filler > _MAX_FILLER_STEPS:
                    raise RuntimeError("probe entry never cleared; traffic is wedged")
        actions = {vid: controllers[vid].act() for vid in env.active_agents}
        results, spawned = env.step(actions)
        for vid, result in results.items():
            controllers[vid].observe(result)
            if result.status is VehicleStatus.ACTIVE:
                continue
            if vid == probe_id:
                episodes += 1
                filler = 0
                if result.status is VehicleStatus.REACHED_GOAL:
                    goals += 1
                elif result.status is VehicleStatus.CRASHED:
                    crashes += 1
                else:
                    timeouts += 1
                speeds.append(controllers[vid].mean_speed)
                probe_id = None
            del controllers[vid]
        for vid, obs in spawned.items():
            controllers[vid] = _Controller(net, rng, spec.action_repeat_eval, obs)

    return SweepRow(
        value=float(value),
        success_ratio=goals / episodes,
        avg_speed=float(np.mean(speeds)) if speeds else 0.0,
        episodes=episodes,
        crashes=crashes,
        timeouts=timeouts,
    )


# ---------------------------------------------------------------------------
# reporting

SWEEP_HEADER = "value,success_ratio,avg_speed,episodes,crashes,timeouts"


def rows_to_csv(rows: list[SweepRow]) -> str:
    lines = [SWEEP_HEADER]
    for r in rows:
        lines.append(f"{r.value!r},{r.success_ratio!r},{r.avg_speed!r},{r.episodes},{r.crashes},{r.timeouts}")
    return "\n".join(lines) + "\n"


def rows_from_csv(text: str) -> list[SweepRow]:
    lines = [ln for ln in text.strip().splitlines() if ln]
    if not lines or lines[0] != SWEEP_HEADER:
        raise ValueError("unrecognized sweep CSV header")
    out = []
    for ln in lines[1:]:
        v, sr, sp, ep, cr, to = ln.split(",")
        out.append(SweepRow(float(v), float(sr), float(sp), int(ep), int(cr), int(to)))
    return out


def _scale(vals, lo, hi, out_lo, out_hi):
    span = hi - lo
    if span == 0:
        return [0.5 * (out_lo + out_hi) for _ in vals]
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in vals]


def svg_line_chart(x_values, series, title="", width=640, height=400,
                   x_label="", left_label="", right_label="") -> str:
    """Static SVG 1.1 line chart; series entries are (label, values, side)
    with side "left" or "right" selecting the y axis."""
    if not x_values:
        raise ValueError("no data to plot")
    m = 56  # margin
    x0, x1 = min(x_values), max(x_values)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width/2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{m}" y1="{height-m}" x2="{width-m}" y2="{height-m}" stroke="black"/>',
        f'<line x1="{m}" y1="{m}" x2="{m}" y2="{height-m}" stroke="black"/>',
        f'<line x1="{width-m}" y1="{m}" x2="{width-m}" y2="{height-m}" stroke="black"/>',
        f'<text x="{width/2:.1f}" y="{height-12}" text-anchor="middle" font-size="11">{x_label}</text>',
    ]
    colors = {"left": "#1f6fb2", "right": "#c23b22"}
    bounds = {}
    for side in ("left", "right"):
        vals = [v for label, values, s in series if s == side for v in values]
        if vals:
            lo, hi = min(vals), max(vals)
            if lo == hi:
                lo, hi = lo - 0.5, hi + 0.5
            bounds[side] = (lo, hi)
    for label, values, side in series:
        lo, hi = bounds[side]
        xs = _scale(list(x_values), x0, x1 if x1 != x0 else x0 + 1, m, width - m)
        ys = _scale(list(values), lo, hi, height - m, m)
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline fill="none" stroke="{colors[side]}" stroke-width="2" points="{pts}"/>')
    legend_y = 36
    for label, values, side in series:
        parts.append(f'<text x="{m+6}" y="{legend_y}" font-size="11" fill="{colors[side]}">{label}</text>')
        legend_y += 14
    for side, anchor_x, anchor in (("left", 16, "start"), ("right", width - 16, "end")):
        if side in bounds:
            lo, hi = bounds[side]
            parts.append(f'<text x="{anchor_x}" y="{m-6}" font-size="10" text-anchor="{anchor}">{hi:.3g}</text>')
            parts.append(f'<text x="{anchor_x}" y="{height-m}" font-size="10" text-anchor="{anchor}">{lo:.3g}</text>')
    if left_label:
        parts.append(f'<text x="14" y="{height/2:.1f}" font-size="11" transform="rotate(-90 14 {height/2:.1f})" text-anchor="middle">{left_label}</text>')
    if right_label:
        parts.append(f'<text x="{width-6}" y="{height/2:.1f}" font-size="11" transform="rotate(90 {width-6} {height/2:.1f})" text-anchor="middle">{right_label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def sweep_svg(rows: list[SweepRow], parameter: str) -> str:
    if not rows:
        raise ValueError("no rows to plot")
    xs = [r.value for r in rows]
    series = [
        ("success ratio", [r.success_ratio for r in rows], "left"),
        ("average speed (m/s)", [r.avg_speed for r in rows], "right"),
    ]
    return svg_line_chart(xs, series, title=f"{parameter} sweep", x_label=parameter,
                          left_label="success ratio", right_label="average speed (m/s)")


def summarize(rows: list[SweepRow], csv_path, svg_path, parameter: str = "value") -> tuple[str, str]:
    """Write the sweep CSV and the dual-axis SVG; returns both documents."""
    if not rows:
        raise ValueError("summarize requires at least one row")
    csv_text = rows_to_csv(rows)
    svg_text = sweep_svg(rows, parameter)
    with open(csv_path, "w") as fh:
        fh.write(csv_text)
    with open(svg_path, "w") as fh:
        fh.write(svg_text)
    return csv_text, svg_text
