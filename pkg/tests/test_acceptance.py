"""Acceptance gate: one test per criterion, one printed pass/fail line each.

The desk-scale training criteria (A4-A8, A10) share trained artifacts
through a lazy in-process store. Set MECHWORLD_ACCEPT_CACHE=<dir> to also
persist those artifacts across runs while iterating; with the variable
unset (or the directory empty) everything is computed fresh.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines as they complete.
"""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import grad_rel_err, param_central_diff
from mechworld import composition as composition_mod
from mechworld import envs, nncore
from mechworld.baseline import BaselineConfig, GnnParams, finetune_baseline, train_baseline
from mechworld.cli import cli_main
from mechworld.competition import (
    COMPETE,
    WARM_START,
    CompetitionConfig,
    MechanismBank,
    competition_update,
    select_winners,
    train_competition,
    usage_entropy,
    windowed_pair_loss,
)
from mechworld.composition import (
    CompositionConfig,
    ConfidenceBank,
    classifier_accuracy,
    extract_labels,
    train_composition,
)
from mechworld.dataset import WindowBatch, generate_dataset, load_dataset, rollout_episode
from mechworld.evaluation import (
    BASELINE,
    CONFIDENCE,
    ORACLE,
    RANDOM,
    disentanglement_matrix,
    evaluate_method_rollouts,
)

# --- desk-scale experiment configuration -----------------------------------

SEEDS = (0, 1, 2)
TRAIN_ENVS = ("particles_1", "particles_2", "particles_5")
EPISODES_PER_ENV = 200  # pinned for the disentanglement criterion
EPISODE_LEN = 50
EVAL_EPISODES_PER_ENV = 30
ADAPT_POOL = 1000
TEST_EPISODES = 100

N_MECHANISMS = 6
HORIZON = 10
WARM_STEPS = 800
TOTAL_STEPS = 2400
BATCH = 24
LR = 1e-3

GNN_STEPS = 1500
GNN_BATCH = 256
GNN_LR = 1e-3

COMPOSITION_MAX_STEPS = 1200
COMPOSITION_BATCH = 512
COMPOSITION_LR = 1e-3

ROLLOUT_H = 10

_CACHE_ENV = os.environ.get("MECHWORLD_ACCEPT_CACHE", "")


def report(criterion, passed, detail):
    print(f"\n[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
    assert passed, f"{criterion}: {detail}"


# --- shared artifact store --------------------------------------------------


class ArtifactStore:
    def __init__(self):
        self.base = Path(_CACHE_ENV) if _CACHE_ENV else None
        if self.base:
            self.base.mkdir(parents=True, exist_ok=True)
        self._mem = {}
        self._data_root = None

    # datasets ---------------------------------------------------------

    def data_root(self, tmp_factory):
        if self._data_root is None:
            root = (self.base / "datasets") if self.base else tmp_factory.mktemp("accept_data")
            root = Path(root)
            specs = [envs.get_env(e) for e in TRAIN_ENVS]
            adapt = envs.get_env("particles_adapt")
            jobs = {
                "train": (specs, EPISODES_PER_ENV, 1111),
                "eval": (specs, EVAL_EPISODES_PER_ENV, 2222),
                "adapt": ([adapt], ADAPT_POOL, 3333),
                "test": ([adapt], TEST_EPISODES, 4444),
            }
            for tag, (job_specs, count, seed) in jobs.items():
                out = root / tag
                if not (out / "manifest.txt").exists():
                    generate_dataset(job_specs, count, EPISODE_LEN, seed, out)
            self._data_root = root
        return self._data_root

    def episodes(self, tmp_factory, tag):
        key = f"episodes_{tag}"
        if key not in self._mem:
            _, eps = load_dataset(self.data_root(tmp_factory) / tag / "manifest.txt")
            self._mem[key] = eps
        return self._mem[key]

    # trained mechanism banks -------------------------------------------

    def bank(self, tmp_factory, seed, horizon=HORIZON, warm=WARM_STEPS, total=TOTAL_STEPS):
        key = f"bank_th{horizon}_w{warm}_t{total}_b{BATCH}_lr{LR}_s{seed}"
        if key in self._mem:
            return self._mem[key]
        ck = (self.base / f"{key}.ckpt") if self.base else None
        meta = (self.base / f"{key}.json") if self.base else None
        if ck and ck.exists() and meta.exists():
            nets = nncore.load_checkpoint(ck)
            bank = MechanismBank(nets, [nncore.AdamState.zeros_like(n, lr=LR) for n in nets], 7)
            info = json.loads(meta.read_text())
        else:
            config = CompetitionConfig(
                n_mechanisms=N_MECHANISMS,
                horizon=horizon,
                warm_start_steps=warm,
                total_steps=total,
                batch_size=BATCH,
                seed=seed,
                lr=LR,
                log_interval=100,
            )
            episodes = self.episodes(tmp_factory, "train")
            t0 = time.time()
            bank, rows = train_competition(config, episodes)
            info = {"train_seconds": time.time() - t0, "usage_rows": [list(r) for r in rows]}
            if ck:
                nncore.save_checkpoint(ck, bank.nets)
                meta.write_text(json.dumps(info))
        self._mem[key] = (bank, info)
        return self._mem[key]

    # pretrained baselines ----------------------------------------------

    def gnn(self, tmp_factory, seed):
        key = f"gnn_t{GNN_STEPS}_b{GNN_BATCH}_lr{GNN_LR}_s{seed}"
        if key in self._mem:
            return self._mem[key]
        ck = (self.base / f"{key}.ckpt") if self.base else None
        if ck and ck.exists():
            edge, node = nncore.load_checkpoint(ck)
            params = GnnParams(
                edge,
                node,
                nncore.AdamState.zeros_like(edge, lr=GNN_LR),
                nncore.AdamState.zeros_like(node, lr=GNN_LR),
                7,
                edge.weights[-1].shape[0],
            )
        else:
            params = GnnParams.create(7, np.random.SeedSequence([seed, 17]), lr=GNN_LR)
            config = BaselineConfig(
                steps=GNN_STEPS, batch_size=GNN_BATCH, lr=GNN_LR, seed=seed, log_interval=200
            )
            train_baseline(params, self.episodes(tmp_factory, "train"), config)
            if ck:
                nncore.save_checkpoint(ck, [params.edge, params.node])
        self._mem[key] = params
        return params

    # adapted confidence banks -------------------------------------------

    def composition_for(self, tmp_factory, seed, n_episodes):
        key = f"conf_n{n_episodes}_s{seed}_th{HORIZON}"
        if key in self._mem:
            return self._mem[key]
        ck = (self.base / f"{key}.ckpt") if self.base else None
        bank, _ = self.bank(tmp_factory, seed)
        if ck and ck.exists():
            nets = nncore.load_checkpoint(ck)
            conf = ConfidenceBank(nets, [], 7)
        else:
            episodes = self.episodes(tmp_factory, "adapt")[:n_episodes]
            labels = extract_labels(bank, episodes, HORIZON)
            conf = ConfidenceBank.create(
                N_MECHANISMS, 7, np.random.SeedSequence([seed, 23]), lr=COMPOSITION_LR
            )
            config = CompositionConfig(
                batch_size=COMPOSITION_BATCH,
                lr=COMPOSITION_LR,
                max_steps=COMPOSITION_MAX_STEPS,
                log_interval=100,
                eval_interval=100,
                patience=4,
                holdout_frac=0.1,
                seed=seed,
            )
            conf, _ = train_composition(conf, labels, episodes, config)
            if ck:
                nncore.save_checkpoint(ck, conf.nets)
        self._mem[key] = conf
        return conf

    def finetuned_gnn(self, tmp_factory, seed, n_episodes):
        key = f"gnnft_n{n_episodes}_s{seed}"
        if key in self._mem:
            return self._mem[key]
        ck = (self.base / f"{key}.ckpt") if self.base else None
        if ck and ck.exists():
            edge, node = nncore.load_checkpoint(ck)
            params = GnnParams(
                edge,
                node,
                nncore.AdamState.zeros_like(edge, lr=GNN_LR),
                nncore.AdamState.zeros_like(node, lr=GNN_LR),
                7,
                edge.weights[-1].shape[0],
            )
        else:
            params = self.gnn(tmp_factory, seed).copy()
            episodes = self.episodes(tmp_factory, "adapt")[:n_episodes]
            config = BaselineConfig(
                steps=1500,
                batch_size=GNN_BATCH,
                lr=GNN_LR,
                seed=seed,
                log_interval=200,
                eval_interval=100,
                patience=5,
            )
            finetune_baseline(params, episodes, config)
            if ck:
                nncore.save_checkpoint(ck, [params.edge, params.node])
        self._mem[key] = params
        return params


STORE = ArtifactStore()


@pytest.fixture(scope="session")
def store(tmp_path_factory):
    STORE._tmp = tmp_path_factory
    return STORE


# --- A1: gradient correctness ----------------------------------------------


def test_a1_gradient_correctness():
    rng = np.random.default_rng(101)
    t0 = time.time()
    cases = 0
    worst = 0.0

    # mechanism/raw MLP gradients
    for _ in range(120):
        d_in = int(rng.integers(1, 5))
        d_out = int(rng.integers(1, 5))
        widths = [int(rng.integers(2, 9)) for _ in range(int(rng.integers(1, 3)))]
        net = nncore.init_mlp([d_in, *widths, d_out], int(rng.integers(1 << 30)))
        x = rng.standard_normal(d_in)
        u = rng.standard_normal(d_out)
        grads, _ = nncore.mlp_backward(net, x, u)

        def loss():
            return float(u @ nncore.mlp_forward(net, x))

        fw, fb = param_central_diff(loss, net, h=1e-6)
        for a, f in zip(grads.weights + grads.biases, fw + fb):
            worst = max(worst, grad_rel_err(a, f))
        cases += 1

    # confidence-bank NLL gradients
    for _ in range(40):
        d = int(rng.integers(2, 4))
        k = 2
        conf = ConfidenceBank.create(2, d, int(rng.integers(1 << 30)), hidden=(int(rng.integers(3, 8)),))
        scenes = rng.standard_normal((4, k, d))
        objs = rng.integers(0, k, size=4)
        classes = rng.integers(0, 2 * k, size=4)

        def nll():
            val, _, _, _ = composition_mod._nll_and_scores(conf, scenes, objs, classes)
            return val

        _, p, _, X = composition_mod._nll_and_scores(conf, scenes, objs, classes)
        gs = p.copy()
        gs[np.arange(4), classes] -= 1.0
        gs /= 4
        gs = gs.reshape(4, 2, k)
        for m in range(2):
            analytic, _ = nncore.mlp_backward(conf.nets[m], X, gs[:, m, :].reshape(4 * k, 1))
            fw, fb = param_central_diff(nll, conf.nets[m], h=1e-6)
            for a, f in zip(analytic.weights + analytic.biases, fw + fb):
                worst = max(worst, grad_rel_err(a, f))
        cases += 1

    # baseline message-passing gradients
    from mechworld.baseline import _forward_parts

    for _ in range(40):
        d = int(rng.integers(2, 4))
        k = int(rng.integers(2, 4))
        params = GnnParams.create(
            d, int(rng.integers(1 << 30)), h_e=int(rng.integers(2, 5)), hidden=(int(rng.integers(3, 8)),)
        )
        cur = rng.standard_normal((3, k, d))
        nxt = rng.standard_normal((3, k, d))

        def gnn_loss():
            from mechworld.baseline import gnn_forward

            deltas = gnn_forward(params, cur)
            return float(np.square(cur + deltas - nxt).sum() / (3 * k))

        deltas, (edge_cache, node_cache, mask, _, _) = _forward_parts(params, cur)
        err = cur + deltas - nxt
        upstream_node = (2.0 / (3 * k)) * err.reshape(3 * k, d)
        node_grads, node_in_grad = nncore.mlp_backward_from_cache(
            params.node, node_cache, upstream_node
        )
        msg_grad = node_in_grad[:, d:].reshape(3, k, params.h_e) / (k - 1)
        upstream_edge = (mask[None, :, :, None] * msg_grad[:, :, None, :]).reshape(
            3 * k * k, params.h_e
        )
        edge_grads, _ = nncore.mlp_backward_from_cache(params.edge, edge_cache, upstream_edge)
        for analytic, net in ((node_grads, params.node), (edge_grads, params.edge)):
            fw, fb = param_central_diff(gnn_loss, net, h=1e-6)
            for a, f in zip(analytic.weights + analytic.biases, fw + fb):
                worst = max(worst, grad_rel_err(a, f))
        cases += 1

    elapsed = time.time() - t0
    ok = worst < 1e-6 and cases >= 200 and elapsed < 60
    report(
        "A1 gradient correctness",
        ok,
        f"{cases} cases, worst rel err {worst:.2e}, {elapsed:.1f}s",
    )


# --- A2: winner isolation ---------------------------------------------------


def test_a2_winner_isolation():
    rng = np.random.default_rng(202)
    checked = 0
    for trial in range(100):
        m_count = int(rng.integers(2, 5))
        k = int(rng.integers(1, 4))
        th = int(rng.integers(1, 4))
        d = int(rng.integers(2, 5))
        bank = MechanismBank.create(m_count, d, int(rng.integers(1 << 30)), lr=1e-3, hidden=(6,))
        states = 0.3 * rng.standard_normal((int(rng.integers(1, 5)), th + 1, k, d))
        zeros = np.zeros((states.shape[0], th, k), dtype=np.int32)
        batch = WindowBatch(states, zeros, zeros, [(0, 0)] * states.shape[0])
        before = [
            [w.copy() for w in net.weights] + [b.copy() for b in net.biases]
            for net in bank.nets
        ]
        before_t = [opt.t for opt in bank.opt]
        metrics = competition_update(bank, batch, COMPETE)
        for m in range(m_count):
            if metrics["win_counts"][m] > 0:
                continue
            arrays = list(bank.nets[m].weights) + list(bank.nets[m].biases)
            same = all(np.array_equal(a, b) for a, b in zip(arrays, before[m]))
            if not (same and bank.opt[m].t == before_t[m]):
                report("A2 winner isolation", False, f"trial {trial}: mechanism {m} changed")
            checked += 1
    report("A2 winner isolation", True, f"100 updates, {checked} zero-win mechanisms bitwise unchanged")


# --- A3: oracle equivalence -------------------------------------------------


def test_a3_oracle_equivalence():
    rng = np.random.default_rng(303)
    banks_done = 0
    windows_checked = 0
    while banks_done < 50:
        k = int(rng.integers(1, 5))
        m_count = int(rng.integers(1, 5))
        th = int(rng.integers(1, 4))
        d = int(rng.integers(2, 5))
        bank = MechanismBank.create(m_count, d, int(rng.integers(1 << 30)), lr=1e-3)
        window = 0.4 * rng.standard_normal((th + 1, k, d))
        fast = select_winners(windowed_pair_loss(bank, window))
        # independent scalar-by-scalar enumeration
        for i in range(k):
            best = None
            for m in range(m_count):
                for j in range(k):
                    total = 0.0
                    for tau in range(th):
                        x = np.concatenate([window[tau, i], window[tau, j]])
                        pred = window[tau, i] + nncore.mlp_forward(bank.nets[m], x)
                        total += float(np.sum((pred - window[tau + 1, i]) ** 2))
                    if best is None or total < best[0] - 1e-12:
                        best = (total, m, j)
            if (fast[i].m, fast[i].j) != (best[1], best[2]):
                report(
                    "A3 oracle equivalence",
                    False,
                    f"bank {banks_done}: object {i} fast=({fast[i].m},{fast[i].j}) "
                    f"brute=({best[1]},{best[2]})",
                )
            windows_checked += 1
        banks_done += 1
    report("A3 oracle equivalence", True, f"50 banks, {windows_checked} object argmins match")


# --- A4: desk-scale disentanglement ----------------------------------------


def test_a4_disentanglement(store, tmp_path_factory):
    scores = []
    times = []
    for seed in SEEDS:
        bank, info = store.bank(tmp_path_factory, seed)
        eval_eps = store.episodes(tmp_path_factory, "eval")
        matrix = disentanglement_matrix(bank, eval_eps, HORIZON, window_stride=4)
        scores.append(matrix.score)
        times.append(info.get("train_seconds", 0.0))
    median = float(np.median(scores))
    budget_ok = TOTAL_STEPS <= 30000 and all(t <= 900 or t == 0.0 for t in times)
    ok = median >= 0.70 and budget_ok
    report(
        "A4 desk-scale disentanglement",
        ok,
        f"scores {[f'{s:.3f}' for s in scores]}, median {median:.3f} >= 0.70, "
        f"train times {[f'{t:.0f}s' for t in times]} (budget 900s, {TOTAL_STEPS} steps)",
    )


# --- A5: mechanism reusability ----------------------------------------------


def test_a5_reusability(store, tmp_path_factory):
    test_eps = store.episodes(tmp_path_factory, "test")
    oracle_vals, random_vals = [], []
    for seed in SEEDS:
        bank, _ = store.bank(tmp_path_factory, seed)
        models = {"mechanisms": bank}
        oracle_vals.append(
            float(evaluate_method_rollouts(models, test_eps, ROLLOUT_H, ORACLE).mean())
        )
        rng = np.random.default_rng(seed)
        random_vals.append(
            float(evaluate_method_rollouts(models, test_eps, ROLLOUT_H, RANDOM, rng=rng).mean())
        )
    med_oracle = float(np.median(oracle_vals))
    med_random = float(np.median(random_vals))
    ok = med_oracle <= 0.5 * med_random
    report(
        "A5 reusability",
        ok,
        f"oracle median {med_oracle:.5f} vs random median {med_random:.5f} "
        f"(ratio {med_oracle / med_random:.3f} <= 0.5)",
    )


# --- A6: adaptation efficiency ----------------------------------------------


def test_a6_adaptation_efficiency(store, tmp_path_factory):
    test_eps = store.episodes(tmp_path_factory, "test")
    results = {}
    for n in (10, 1000):
        comet_vals, gnn_vals = [], []
        for seed in SEEDS:
            bank, _ = store.bank(tmp_path_factory, seed)
            conf = store.composition_for(tmp_path_factory, seed, n)
            comet_models = {"mechanisms": bank, "confidence": conf}
            comet_vals.append(
                float(evaluate_method_rollouts(comet_models, test_eps, ROLLOUT_H, CONFIDENCE).mean())
            )
            gnn = store.finetuned_gnn(tmp_path_factory, seed, n)
            gnn_vals.append(
                float(evaluate_method_rollouts({"gnn": gnn}, test_eps, ROLLOUT_H, BASELINE).mean())
            )
        results[n] = (float(np.median(comet_vals)), float(np.median(gnn_vals)))
    comet10, gnn10 = results[10]
    comet1k, gnn1k = results[1000]
    low_data_ok = comet10 <= gnn10
    rel_gap = abs(comet1k - gnn1k) / gnn1k
    converged_ok = rel_gap <= 0.20
    report(
        "A6 adaptation efficiency",
        low_data_ok and converged_ok,
        f"n=10: comet {comet10:.5f} <= gnn {gnn10:.5f}; "
        f"n=1000: comet {comet1k:.5f} vs gnn {gnn1k:.5f} (rel gap {rel_gap:.3f} <= 0.20)",
    )


# --- A7: warm-start ablation -------------------------------------------------


def test_a7_warm_start_ablation(store, tmp_path_factory):
    warm_entropies, cold_entropies = [], []
    for seed in SEEDS:
        _, info = store.bank(tmp_path_factory, seed)
        rows = info["usage_rows"]
        warm_entropies.append(usage_entropy(rows[-1][3:]))
        _, cold_info = store.bank(tmp_path_factory, seed, warm=0)
        cold_rows = cold_info["usage_rows"]
        cold_entropies.append(usage_entropy(cold_rows[-1][3:]))
    med_warm = float(np.median(warm_entropies))
    med_cold = float(np.median(cold_entropies))
    ok = med_warm >= med_cold
    report(
        "A7 warm-start ablation",
        ok,
        f"final usage entropy: warm median {med_warm:.3f} >= no-warm median {med_cold:.3f} "
        f"(warm {[f'{e:.2f}' for e in warm_entropies]}, cold {[f'{e:.2f}' for e in cold_entropies]})",
    )


# --- A8: composition classifier ----------------------------------------------


def test_a8_composition_classifier(store, tmp_path_factory):
    seed = SEEDS[0]
    bank, _ = store.bank(tmp_path_factory, seed)
    conf = store.composition_for(tmp_path_factory, seed, 50)
    held_eps = store.episodes(tmp_path_factory, "adapt")[900:950]
    held_labels = extract_labels(bank, held_eps, HORIZON)
    acc = classifier_accuracy(conf, held_labels, held_eps)
    ok = acc >= 0.80
    report(
        "A8 composition classifier",
        ok,
        f"top-1 accuracy on held-out adaptation labels {acc:.3f} >= 0.80 (n=50 episodes)",
    )


# --- A9: end-to-end determinism ----------------------------------------------

A9_CONFIG = """
[experiment]
out_dir = {out}
seed = 11

[dataset]
train_envs = particles_1,particles_5
adapt_env = particles_adapt
episodes_per_env = 8
episode_len = 14
eval_episodes_per_env = 4
adapt_pool_episodes = 6
test_episodes = 4

[competition]
mechanisms = 3
horizon = 3
warm_start_steps = 4
total_steps = 12
batch_size = 8
lr = 0.001
log_interval = 4

[composition]
batch_size = 64
lr = 0.002
max_steps = 30
log_interval = 10
eval_interval = 10
patience = 3

[baseline]
edge_dim = 8
steps = 15
batch_size = 16
lr = 0.001

[evaluation]
rollout_horizon = 4
adaptation_budgets = 1,3
disentangle_stride = 2
"""


def _run_a9_pipeline(cfg_path):
    commands = [
        ["gen-data", "--config", str(cfg_path)],
        ["train-competition", "--config", str(cfg_path)],
        ["train-baseline", "--config", str(cfg_path)],
        ["train-composition", "--config", str(cfg_path), "--n-episodes", "3"],
        ["eval-rollout", "--config", str(cfg_path), "--selection", "oracle"],
        ["eval-rollout", "--config", str(cfg_path), "--selection", "confidence"],
        ["eval-disentangle", "--config", str(cfg_path)],
        ["eval-adaptation", "--config", str(cfg_path)],
    ]
    for argv in commands:
        code = cli_main(argv)
        assert code == 0, f"command failed: {argv}"


def test_a9_end_to_end_determinism(tmp_path):
    outs = []
    for run in ("one", "two"):
        cfg_path = tmp_path / f"{run}.cfg"
        cfg_path.write_text(A9_CONFIG.format(out=tmp_path / run))
        _run_a9_pipeline(cfg_path)
        outs.append(tmp_path / run)
    files_a = sorted((outs[0] / "metrics").glob("*.csv")) + sorted(
        (outs[0] / "matrices").glob("*.csv")
    )
    mismatches = []
    for fa in files_a:
        fb = Path(str(fa).replace(str(outs[0]), str(outs[1])))
        if not fb.exists() or fa.read_bytes() != fb.read_bytes():
            mismatches.append(fa.name)
    ok = not mismatches and len(files_a) >= 8
    report(
        "A9 end-to-end determinism",
        ok,
        f"{len(files_a)} CSVs byte-identical across two runs"
        + (f"; mismatches: {mismatches}" if mismatches else ""),
    )


# --- A10: time-horizon ablation ----------------------------------------------


def test_a10_time_horizon_ablation(store, tmp_path_factory):
    eval_eps = store.episodes(tmp_path_factory, "eval")
    scores = {}
    for th in (1, 5, 10):
        per_seed = []
        for seed in SEEDS:
            bank, _ = store.bank(tmp_path_factory, seed, horizon=th)
            matrix = disentanglement_matrix(bank, eval_eps, th, window_stride=4)
            per_seed.append(matrix.score)
        scores[th] = per_seed
    med = {th: float(np.median(v)) for th, v in scores.items()}
    ok = med[10] >= med[1]
    detail = "; ".join(
        f"T_h={th}: {[f'{s:.3f}' for s in scores[th]]} median {med[th]:.3f}" for th in (1, 5, 10)
    )
    report("A10 time-horizon ablation", ok, detail + " (require median[10] >= median[1])")
