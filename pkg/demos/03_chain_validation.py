"""Certify the learning core on a corridor task with a known solution.

An 8-state chain has an exactly solvable optimal policy (always step
toward the goal), so value iteration provides ground truth. Training the
same actor-critic stack used for driving should recover that policy and
its values within a couple thousand environment steps.
"""

from roundabout_marl import ChainConfig, run_validation, value_iteration
from roundabout_marl.training import TrainerConfig

cfg = ChainConfig()
v_star, pi_star = value_iteration(cfg)
names = {0: "left", 1: "right", 2: "stay"}
print("value-iteration oracle:")
for s in range(cfg.n_states - 1):
    print(f"  state {s}: V* = {v_star[s]:.4f}, best action = {names[int(pi_star[s])]}")
print(f"  state {cfg.n_states - 1}: terminal\n")

print("training a dense-only policy/value net on the chain...")
report = run_validation(trainer_cfg=TrainerConfig(seed=0), chain_cfg=cfg, max_steps=50_000)

print("probe history (env steps, greedy agreement, max value error):")
for step, agree, err in report.rows:
    print(f"  {step:6d}  {agree:4.0%}  {err:.4f}")
verdict = "PASS" if report.passed else "FAIL"
print(f"\n{verdict}: agreement {report.final_agreement:.0%} "
      f"(need >= {report.agreement_threshold:.0%}), "
      f"value error {report.final_value_error:.4f} "
      f"(need < {report.value_error_threshold}) after {report.steps_used} steps")
