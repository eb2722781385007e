"""Sweep a driver's aggressiveness knob and watch its behavior shift.

At evaluation time the elapsed-time-ratio input is frozen to a constant:
high values tell the driver it is almost out of time (so it pushes),
low values that it can afford to wait. The sweep drops a probe vehicle
with a pinned value into policy-driven traffic and measures its goal
ratio and average speed.

Uses the checkpoint from demo 04 when present, otherwise a hand-built
"accelerate when below target" policy so the demo stands alone.
"""

from pathlib import Path

from roundabout_marl import NetConfig, SweepSpec, init_params, load_checkpoint
from roundabout_marl.evaluation import run_sweep, summarize

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

ckpt = out_dir / "smoke_checkpoint.bin"
if ckpt.exists():
    net = load_checkpoint(ckpt)
    print(f"using trained checkpoint {ckpt}")
else:
    cfg = NetConfig(visual=False, numeric_dim=4, numeric_hidden=(4, 4), merge_features=4)
    net = init_params(cfg, 0)
    for k in net.params:
        net.params[k][:] = 0.0
    net.params["num1_w"][0] = [-1.0, 1.0, 0.0, 0.0]
    net.params["num1_b"][1] = 1.0
    net.params["num2_w"][0, 0] = net.params["num2_w"][1, 1] = 1.0
    net.params["merge_w"][0, 0] = net.params["merge_w"][1, 1] = 1.0
    net.params["pi_w"][0, 0] = 40.0   # accelerate on the speed gap
    net.params["pi_w"][1, 1] = -3.0   # discourage braking
    print("no checkpoint found; using a hand-built accelerator policy")
    print("(run demos/04_smoke_training.py first to sweep a trained one)")

spec = SweepSpec(parameter="aggressiveness", values=(0.0, 0.4, 0.8, 1.2),
                 episodes_per_value=20, action_repeat_eval=1, seed=5)
print(f"\nsweeping {spec.parameter} over {spec.values}, "
      f"{spec.episodes_per_value} episodes per value...")
rows = run_sweep(spec, net=net)

print(f"\n{'value':>6} {'success':>8} {'avg speed':>10} {'crashes':>8} {'timeouts':>9}")
for r in rows:
    print(f"{r.value:6.1f} {r.success_ratio:8.2f} {r.avg_speed:8.2f} m/s "
          f"{r.crashes:8d} {r.timeouts:9d}")

summarize(rows, out_dir / "sweep.csv", out_dir / "sweep.svg", parameter=spec.parameter)
print(f"\nwrote {out_dir / 'sweep.csv'} and {out_dir / 'sweep.svg'}")
