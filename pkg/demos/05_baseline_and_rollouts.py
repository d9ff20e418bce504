"""The monolithic baseline and the rollout evaluation protocols.

A fully-connected message-passing network predicts all deltas at once; it
pretrains on the environment mixture and adapts by finetuning everything.
Rollouts compare selection strategies on top of the same mechanism bank:
oracle selection (best pair against the true next state) versus random
pairs, plus the baseline's autoregressive prediction.
"""

import time

import numpy as np

from mechworld import envs
from mechworld.baseline import BaselineConfig, GnnParams, evaluate_one_step_mse, train_baseline
from mechworld.competition import CompetitionConfig, train_competition
from mechworld.dataset import rollout_episode
from mechworld.evaluation import BASELINE, ORACLE, RANDOM, mean_rollout_mse, rollout

train_eps = [
    rollout_episode(envs.get_env(env_id), 50, seed=s)
    for env_id in ("particles_1", "particles_2")
    for s in range(30)
]
test_eps = [rollout_episode(envs.get_env("particles_1"), 50, seed=2000 + s) for s in range(10)]

print("pretraining the message-passing baseline (small budget) ...")
gnn = GnnParams.create(7, seed=0, h_e=32, lr=2e-3, hidden=(64, 64))
before = evaluate_one_step_mse(gnn, test_eps)
t0 = time.time()
train_baseline(gnn, train_eps, BaselineConfig(steps=400, batch_size=128, lr=2e-3, seed=0))
after = evaluate_one_step_mse(gnn, test_eps)
print(f"  one-step test MSE {before:.5f} -> {after:.6f}  ({time.time()-t0:.0f}s)")

print("\ntraining a small mechanism bank ...")
config = CompetitionConfig(4, 10, 20, 150, 32, seed=0, lr=2e-3, log_interval=50)
bank, _ = train_competition(config, train_eps)

models = {"mechanisms": bank, "gnn": gnn}
res_oracle = rollout(models, test_eps[0], start=0, horizon=10, selection=ORACLE)
res_random = rollout(models, test_eps[0], start=0, horizon=10, selection=RANDOM, rng=0)
res_gnn = rollout(models, test_eps[0], start=0, horizon=10, selection=BASELINE)

print("\nper-step rollout MSE on one test episode:")
print("  step   oracle      random      baseline")
for h in range(10):
    print(f"  {h+1:3d}  {res_oracle.mse[h]:.6f}  {res_random.mse[h]:.6f}  {res_gnn.mse[h]:.6f}")
print("\noracle selection trace, step 1:", res_oracle.trace[0])

oracle_mean = mean_rollout_mse(models, test_eps, 10, ORACLE)
random_mean = mean_rollout_mse(models, test_eps, 10, RANDOM, rng=0)
print(f"\nmean over {len(test_eps)} episodes: oracle {oracle_mean:.6f}, random {random_mean:.6f}")
print(f"oracle/random ratio: {oracle_mean / random_mean:.3f} (drops much lower with full training)")
