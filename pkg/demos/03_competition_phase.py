"""Phase 1 in miniature: winner-takes-all training of a mechanism bank.

Two environments mix straight-line drift, repulsion, attraction, and
springs. Each training step scores every (mechanism, context) pair on
10-transition windows; only the winner per (window, object) gets gradient.
A short warm-start first spreads gradient over all pairs so that no single
randomly-initialized network can capture everything early.

Runs a deliberately small budget (about a minute); the full experiment
lives behind the CLI (see README).
"""

import time

import numpy as np

from mechworld import envs
from mechworld.competition import CompetitionConfig, train_competition, usage_entropy
from mechworld.dataset import rollout_episode
from mechworld.evaluation import disentanglement_matrix

train_eps = [
    rollout_episode(envs.get_env(env_id), 50, seed=s)
    for env_id in ("particles_1", "particles_2")
    for s in range(40)
]
eval_eps = [
    rollout_episode(envs.get_env(env_id), 50, seed=1000 + s)
    for env_id in ("particles_1", "particles_2")
    for s in range(10)
]

config = CompetitionConfig(
    n_mechanisms=4,
    horizon=10,
    warm_start_steps=20,
    total_steps=120,
    batch_size=32,
    seed=0,
    lr=2e-3,
    log_interval=20,
)

print(f"training {config.n_mechanisms} mechanisms for {config.total_steps} steps ...")
t0 = time.time()
bank, rows = train_competition(config, train_eps)
print(f"done in {time.time() - t0:.0f}s\n")

print("usage log (per logging interval):")
print("  step  phase        loss      " + "  ".join(f"m{m}" for m in range(4)))
for step, phase, loss, *fracs in rows:
    cells = "  ".join(f"{f:.2f}" for f in fracs)
    print(f"  {step:4d}  {phase:11s}  {loss:8.5f}  {cells}")
print(f"\nfinal usage entropy: {usage_entropy(rows[-1][3:]):.3f} nats")

matrix = disentanglement_matrix(bank, eval_eps, horizon=10, window_stride=4)
print("\nmode-vs-mechanism counts on held-out episodes:")
header = "  ".join(f"m{m:>5d}" for m in range(bank.M))
print(f"  {'mode':14s} {header}")
for name, row in zip(matrix.mode_names, matrix.counts):
    if row.sum() == 0:
        continue
    print(f"  {name:14s} " + "  ".join(f"{v:6d}" for v in row))
print(f"assignment score: {matrix.score:.3f} (a longer run pushes this much higher)")
