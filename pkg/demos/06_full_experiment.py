"""Drive the whole experiment through the CLI on a miniature config.

Everything the command-line tool writes is plain files: binary datasets and
checkpoints, CSV metrics, and a count-matrix CSV. The run below finishes in
well under a minute; scale the numbers up (see configs/) for real results.
"""

import tempfile
from pathlib import Path

from mechworld.cli import cli_main

out = Path(tempfile.mkdtemp(prefix="mechworld_exp_"))
cfg = out / "mini.cfg"
cfg.write_text(f"""
[experiment]
out_dir = {out}/run
seed = 5

[dataset]
train_envs = particles_1,particles_5
adapt_env = particles_adapt
episodes_per_env = 10
episode_len = 20
eval_episodes_per_env = 5
adapt_pool_episodes = 8
test_episodes = 5

[competition]
mechanisms = 3
horizon = 4
warm_start_steps = 10
total_steps = 40
batch_size = 16
lr = 0.002
log_interval = 10

[composition]
batch_size = 128
lr = 0.002
max_steps = 60
log_interval = 20
eval_interval = 20
patience = 3

[baseline]
edge_dim = 16
steps = 40
batch_size = 32
lr = 0.002

[evaluation]
rollout_horizon = 5
adaptation_budgets = 2,5
disentangle_stride = 2
""")

commands = [
    ["gen-data", "--config", str(cfg)],
    ["train-competition", "--config", str(cfg)],
    ["train-baseline", "--config", str(cfg)],
    ["train-composition", "--config", str(cfg), "--n-episodes", "5"],
    ["finetune-baseline", "--config", str(cfg), "--n-episodes", "5"],
    ["eval-rollout", "--config", str(cfg), "--selection", "oracle"],
    ["eval-rollout", "--config", str(cfg), "--selection", "confidence"],
    ["eval-rollout", "--config", str(cfg), "--selection", "baseline"],
    ["eval-disentangle", "--config", str(cfg)],
    ["eval-adaptation", "--config", str(cfg)],
]
for argv in commands:
    print(f"\n$ mechworld {' '.join(argv)}")
    code = cli_main(argv)
    assert code == 0, f"exit {code}"

print("\nproduced files:")
for path in sorted((out / "run").rglob("*")):
    if path.is_file():
        print(f"  {path.relative_to(out)}  ({path.stat().st_size} bytes)")

print("\nrender figures from these CSVs with the plots package, e.g.:")
print(f"  render --kind heatmap --in {out}/run/matrices/disentanglement_th4.csv --out figs/m.png")
