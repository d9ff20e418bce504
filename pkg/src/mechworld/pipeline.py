"""End-to-end orchestration behind the CLI subcommands.

All functions take a parsed ExperimentConfig and work inside its output
tree: dataset/{train,eval,adapt,test}/, checkpoints/, metrics/, matrices/.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import composition as composition_mod
from . import evaluation as evaluation_mod
from . import nncore
from .baseline import BaselineConfig, GnnParams, finetune_baseline, train_baseline
from .competition import MechanismBank, train_competition, write_usage_log
from .composition import (
    CompositionConfig,
    ConfidenceBank,
    classifier_accuracy,
    extract_labels,
    save_labels,
    train_composition,
    write_accuracy_trace,
)
from .dataset import generate_dataset, load_dataset
from .errors import ConfigError
from .evaluation import (
    BASELINE,
    CONFIDENCE,
    AdaptationRow,
    disentanglement_matrix,
    evaluate_method_rollouts,
    rollout,
    write_adaptation_csv,
    write_matrix_csv,
    write_rollout_csv,
    write_trace_csv,
)

_DATASET_TAGS = {"train": 0, "eval": 1, "adapt": 2, "test": 3}


def subset_seed(seed, tag):
    """Independent 64-bit generation seed for one dataset subset."""
    state = np.random.SeedSequence([seed, _DATASET_TAGS[tag]]).generate_state(1, np.uint64)
    return int(state[0])


def dataset_dir(cfg, tag):
    return cfg.out_dir / "dataset" / tag


def metrics_dir(cfg):
    path = cfg.out_dir / "metrics"
    path.mkdir(parents=True, exist_ok=True)
    return path


def matrices_dir(cfg):
    path = cfg.out_dir / "matrices"
    path.mkdir(parents=True, exist_ok=True)
    return path


def checkpoints_dir(cfg):
    path = cfg.out_dir / "checkpoints"
    path.mkdir(parents=True, exist_ok=True)
    return path


def ensure_writable(path, force):
    if Path(path).exists() and not force:
        raise ConfigError(f"output {path} exists; pass --force to overwrite")


def load_subset(cfg, tag):
    manifest_path = dataset_dir(cfg, tag) / "manifest.txt"
    if not manifest_path.exists():
        raise ConfigError(f"dataset subset {tag!r} not generated yet: {manifest_path}")
    _, episodes = load_dataset(manifest_path)
    return episodes


def gen_data(cfg, force=False):
    """Generate the train/eval pools and, when configured, adapt/test pools."""
    ds = cfg.dataset
    jobs = [
        ("train", cfg.train_env_specs(), ds["episodes_per_env"]),
        ("eval", cfg.train_env_specs(), ds["eval_episodes_per_env"]),
    ]
    if ds["adapt_env"]:
        jobs.append(("adapt", [cfg.adapt_env_spec()], ds["adapt_pool_episodes"]))
        jobs.append(("test", [cfg.adapt_env_spec()], ds["test_episodes"]))
    manifests = {}
    for tag, specs, count in jobs:
        out = dataset_dir(cfg, tag)
        ensure_writable(out / "manifest.txt", force)
        manifests[tag] = generate_dataset(
            specs, count, ds["episode_len"], subset_seed(cfg.seed, tag), out
        )
    return manifests


def mechanisms_path(cfg):
    return checkpoints_dir(cfg) / "mechanisms.ckpt"


def gnn_path(cfg):
    return checkpoints_dir(cfg) / "gnn.ckpt"


def load_mechanism_bank(cfg):
    path = mechanisms_path(cfg)
    if not path.exists():
        raise ConfigError(f"missing mechanism checkpoint: {path}")
    nets = nncore.load_checkpoint(path)
    d = nets[0].weights[0].shape[1] // 2
    bank = MechanismBank(nets, [], d)
    bank.opt = [nncore.AdamState.zeros_like(n, lr=cfg.competition.lr) for n in nets]
    return bank


def load_gnn(cfg, path=None):
    path = Path(path) if path is not None else gnn_path(cfg)
    if not path.exists():
        raise ConfigError(f"missing baseline checkpoint: {path}")
    edge, node = nncore.load_checkpoint(path)
    d = node.weights[-1].shape[0]
    h_e = edge.weights[-1].shape[0]
    return GnnParams(
        edge,
        node,
        nncore.AdamState.zeros_like(edge, lr=cfg.baseline.lr),
        nncore.AdamState.zeros_like(node, lr=cfg.baseline.lr),
        d,
        h_e,
    )


def run_train_competition(cfg, force=False):
    episodes = load_subset(cfg, "train")
    log_path = metrics_dir(cfg) / "usage_log.csv"
    ensure_writable(log_path, force)
    ensure_writable(mechanisms_path(cfg), force)
    bank, rows = train_competition(cfg.competition, episodes, checkpoints_dir(cfg))
    write_usage_log(rows, cfg.competition.n_mechanisms, log_path)
    return bank, rows


def run_train_baseline(cfg, force=False):
    episodes = load_subset(cfg, "train")
    loss_path = metrics_dir(cfg) / "baseline_loss.csv"
    ensure_writable(loss_path, force)
    ensure_writable(gnn_path(cfg), force)
    d = episodes[0].d
    seed = np.random.SeedSequence([cfg.seed, 17])
    params = GnnParams.create(d, seed, h_e=cfg.baseline_edge_dim, lr=cfg.baseline.lr)
    params, rows = train_baseline(params, episodes, cfg.baseline)
    nncore.save_checkpoint(gnn_path(cfg), [params.edge, params.node])
    with open(loss_path, "w") as fh:
        fh.write("step,loss\n")
        for step, loss in rows:
            fh.write(f"{step},{repr(float(loss))}\n")
    return params


def _fresh_confidence(cfg, n_mechanisms, d):
    return ConfidenceBank.create(
        n_mechanisms, d, np.random.SeedSequence([cfg.seed, 23]), lr=cfg.composition.lr
    )


def run_train_composition(cfg, n_episodes=None, force=False):
    """Extract winner labels on the adaptation pool and fit the classifier."""
    bank = load_mechanism_bank(cfg)
    episodes = load_subset(cfg, "adapt")
    if n_episodes is not None:
        if n_episodes > len(episodes):
            raise ConfigError(
                f"requested {n_episodes} adaptation episodes, pool has {len(episodes)}"
            )
        episodes = episodes[:n_episodes]
    n = len(episodes)
    trace_path = metrics_dir(cfg) / f"composition_trace_n{n}.csv"
    conf_path = checkpoints_dir(cfg) / f"confidence_n{n}.ckpt"
    labels_path = checkpoints_dir(cfg) / f"labels_n{n}.cmtl"
    for path in (trace_path, conf_path, labels_path):
        ensure_writable(path, force)
    labels = extract_labels(bank, episodes, cfg.label_horizon)
    save_labels(labels, labels_path)
    conf = _fresh_confidence(cfg, bank.M, bank.d)
    conf, trace = train_composition(conf, labels, episodes, cfg.composition)
    nncore.save_checkpoint(conf_path, conf.nets)
    write_accuracy_trace(trace, trace_path)
    return conf, labels, trace


def run_finetune_baseline(cfg, n_episodes=None, force=False):
    params = load_gnn(cfg)
    episodes = load_subset(cfg, "adapt")
    if n_episodes is not None:
        episodes = episodes[:n_episodes]
    n = len(episodes)
    out_path = checkpoints_dir(cfg) / f"gnn_finetuned_n{n}.ckpt"
    ensure_writable(out_path, force)
    params, _ = finetune_baseline(params, episodes, cfg.baseline)
    nncore.save_checkpoint(out_path, [params.edge, params.node])
    return params


def run_eval_rollout(cfg, selection, force=False, confidence_path=None, gnn_ckpt=None):
    test = load_subset(cfg, "test")
    horizon = cfg.evaluation["rollout_horizon"]
    out = metrics_dir(cfg) / f"rollout_{selection}.csv"
    trace_out = metrics_dir(cfg) / f"rollout_{selection}_trace.csv"
    ensure_writable(out, force)
    models = {}
    if selection == BASELINE:
        models["gnn"] = load_gnn(cfg, gnn_ckpt)
    else:
        models["mechanisms"] = load_mechanism_bank(cfg)
        if selection == CONFIDENCE:
            path = confidence_path or _latest_confidence(cfg)
            nets = nncore.load_checkpoint(path)
            bank = models["mechanisms"]
            conf = ConfidenceBank(nets, [], bank.d)
            models["confidence"] = conf
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 31]))
    results = [rollout(models, ep, 0, horizon, selection, rng=rng) for ep in test]
    write_rollout_csv(results, selection, out)
    if selection != BASELINE:
        write_trace_csv(results, trace_out)
    mean_mse = float(np.mean([r.mean_mse for r in results]))
    return results, mean_mse


def _latest_confidence(cfg):
    candidates = sorted(checkpoints_dir(cfg).glob("confidence_n*.ckpt"))
    if not candidates:
        raise ConfigError("no confidence checkpoint found; run train-composition first")
    return candidates[-1]


def run_eval_disentangle(cfg, force=False):
    bank = load_mechanism_bank(cfg)
    episodes = load_subset(cfg, "eval")
    horizon = cfg.competition.horizon
    stride = cfg.evaluation["disentangle_stride"]
    matrix = disentanglement_matrix(bank, episodes, horizon, window_stride=stride)
    matrix_path = matrices_dir(cfg) / f"disentanglement_th{horizon}.csv"
    score_path = metrics_dir(cfg) / f"assignment_score_th{horizon}.csv"
    ensure_writable(matrix_path, force)
    ensure_writable(score_path, force)
    write_matrix_csv(matrix, matrix_path)
    with open(score_path, "w") as fh:
        fh.write("horizon,seed,score,total_windows\n")
        fh.write(f"{horizon},{cfg.seed},{repr(matrix.score)},{int(matrix.counts.sum())}\n")
    return matrix


def run_eval_adaptation(cfg, force=False):
    """Adaptation-budget sweep; one row per (method, budget) for this seed."""
    out_path = metrics_dir(cfg) / "adaptation.csv"
    ensure_writable(out_path, force)
    bank = load_mechanism_bank(cfg)
    pretrained_gnn = load_gnn(cfg)
    adapt_pool = load_subset(cfg, "adapt")
    test = load_subset(cfg, "test")
    horizon = cfg.evaluation["rollout_horizon"]
    budgets = cfg.evaluation["adaptation_budgets"]
    over = [n for n in budgets if n > len(adapt_pool)]
    if over:
        raise ConfigError(
            f"budgets {over} exceed the adaptation pool of {len(adapt_pool)} episodes"
        )
    rows = []
    if cfg.evaluation["include_untrained_control"]:
        conf = ConfidenceBank.zeros(bank.M, bank.d)
        step_mse = evaluate_method_rollouts(
            {"mechanisms": bank, "confidence": conf}, test, horizon, CONFIDENCE
        )
        rows.append(AdaptationRow("comet", 0, cfg.seed, step_mse))
    for n in budgets:
        episodes = adapt_pool[:n]
        labels = extract_labels(bank, episodes, cfg.label_horizon)
        conf = _fresh_confidence(cfg, bank.M, bank.d)
        conf, _ = train_composition(conf, labels, episodes, cfg.composition)
        step_mse = evaluate_method_rollouts(
            {"mechanisms": bank, "confidence": conf}, test, horizon, CONFIDENCE
        )
        rows.append(AdaptationRow("comet", n, cfg.seed, step_mse))

        gnn = pretrained_gnn.copy()
        gnn, _ = finetune_baseline(gnn, episodes, cfg.baseline)
        step_mse = evaluate_method_rollouts({"gnn": gnn}, test, horizon, BASELINE)
        rows.append(AdaptationRow("gnn_finetune", n, cfg.seed, step_mse))
    write_adaptation_csv(rows, horizon, out_path)
    return rows


def run_export_checkpoint(in_path, out_path, force=False):
    ensure_writable(out_path, force)
    nets = nncore.load_checkpoint(in_path)
    nncore.export_checkpoint_text(nets, out_path)
    return len(nets)
