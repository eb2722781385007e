"""Explore the reward terms a driving agent is trained on.

The per-step reward decomposes into a terminal bonus/penalty, a soft
danger penalty (failing to yield while merging, or tailgating), and a
small cruise-speed term that peaks exactly at the vehicle's target speed.
"""

import numpy as np

from roundabout_marl import RewardConfig, VehicleStatus, compute_reward, r_speed

cfg = RewardConfig()
print(f"constants: k_y={cfg.k_y}, k_s={cfg.k_s}, k_p={cfg.k_p}, k_n={cfg.k_n}\n")

target = 6.0
print(f"cruise term for target speed {target} m/s:")
for speed in (0.0, 2.0, 4.0, 6.0, 7.0, 9.0, 12.0):
    marker = "  <- peak" if speed == target else ""
    print(f"  speed {speed:4.1f} m/s: r_speed = {r_speed(speed, target, cfg):+.5f}{marker}")

print("\nstep rewards in a few situations (speed 6 m/s, target 6 m/s):")
cases = [
    ("cruising, no hazards", VehicleStatus.ACTIVE, False, False),
    ("merging across traffic", VehicleStatus.ACTIVE, True, False),
    ("tailgating the leader", VehicleStatus.ACTIVE, False, True),
    ("goal reached", VehicleStatus.REACHED_GOAL, False, False),
    ("crash", VehicleStatus.CRASHED, False, False),
    ("out of time", VehicleStatus.TIMED_OUT, False, False),
]
for label, status, yielded, unsafe in cases:
    r = compute_reward(6.0, 6.0, status, yielded, unsafe, cfg)
    print(f"  {label:26s}: terminal {r.r_terminal:+.2f}  danger {r.r_danger:+.3f}  "
          f"speed {r.r_speed:+.4f}  total {r.total:+.4f}")

print("\nthe yield penalty always wins over the tailgating penalty; they never add up:")
both = compute_reward(6.0, 6.0, VehicleStatus.ACTIVE, True, True, cfg)
print(f"  both flags raised -> danger term {both.r_danger:+.3f}")

rng = np.random.default_rng(0)
checks = 0
for _ in range(5000):
    r = compute_reward(float(rng.uniform(0, 12)), float(rng.uniform(1, 9)),
                       VehicleStatus.ACTIVE, bool(rng.integers(2)), bool(rng.integers(2)), cfg)
    assert r.total == r.r_terminal + r.r_danger + r.r_speed
    checks += 1
print(f"\ndecomposition identity held exactly on {checks} random states")
