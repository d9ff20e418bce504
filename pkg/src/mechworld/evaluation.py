"""Rollout engines, disentanglement analysis, and adaptation-budget curves."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import baseline as baseline_mod
from . import composition as composition_mod
from . import nncore
from .envs import InteractionMode
from .errors import ConfigError, ShapeError

CONFIDENCE = "confidence"
ORACLE = "oracle"
RANDOM = "random"
BASELINE = "baseline"

SELECTION_MODES = (CONFIDENCE, ORACLE, RANDOM, BASELINE)


@dataclass
class RolloutResult:
    predicted: np.ndarray  # (H, K, d)
    mse: np.ndarray  # (H,) full-state squared error per step
    mse_pos: np.ndarray  # (H,) position-only squared error per step
    trace: list  # per step: list of (m, j) per object, or None for baseline

    @property
    def mean_mse(self):
        return float(self.mse.mean())


def _pair_predictions(bank, states):
    """Next-state predictions of every (m, j) pair: (K, M, K, d)."""
    k, d = states.shape
    X = np.empty((k, k, 2 * d))
    X[..., :d] = states[:, None, :]
    X[..., d:] = states[None, :, :]
    X = X.reshape(k * k, 2 * d)
    preds = np.empty((k, bank.M, k, d))
    for m in range(bank.M):
        delta = nncore.mlp_forward(bank.nets[m], X).reshape(k, k, d)
        preds[:, m, :, :] = states[:, None, :] + delta
    return preds


def rollout(models, episode, start, horizon, selection, rng=None):
    """Autoregressive prediction from the true state at `start`.

    models: dict with "mechanisms" (MechanismBank), "confidence"
    (ConfidenceBank), or "gnn" (GnnParams) depending on the selection mode.
    Per-step MSE is measured against the stored ground-truth states over the
    full state vector; a position-only column comes along for free.
    """
    if selection not in SELECTION_MODES:
        raise ConfigError(f"unknown selection mode {selection!r}")
    if episode.T < start + horizon + 1:
        raise ConfigError(
            f"episode of length {episode.T} cannot support start {start} + horizon {horizon}"
        )
    if selection == RANDOM and rng is None:
        raise ConfigError("random selection needs an rng")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    k, d = episode.K, episode.d
    n_pos = 2 if d == 7 else 1
    state = episode.states[start].copy()
    predicted = np.empty((horizon, k, d))
    mse = np.empty(horizon)
    mse_pos = np.empty(horizon)
    trace = []
    for h in range(horizon):
        if selection == BASELINE:
            state = state + baseline_mod.gnn_forward(models["gnn"], state)
            trace.append(None)
        else:
            bank = models["mechanisms"]
            preds = _pair_predictions(bank, state)
            chosen = []
            new_state = np.empty_like(state)
            if selection == ORACLE:
                target = episode.states[start + h + 1]
                err = np.square(preds - target[:, None, None, :]).sum(axis=3)
                flat = err.reshape(k, -1).argmin(axis=1)
            elif selection == CONFIDENCE:
                scores = composition_mod.confidence_scores(models["confidence"], state)
                flat = scores.reshape(k, -1).argmax(axis=1)
            else:  # RANDOM
                flat = rng.integers(0, bank.M * k, size=k)
            for i in range(k):
                m, j = int(flat[i]) // k, int(flat[i]) % k
                chosen.append((m, j))
                new_state[i] = preds[i, m, j]
            state = new_state
            trace.append(chosen)
        truth = episode.states[start + h + 1]
        diff = state - truth
        mse[h] = float(np.square(diff).mean())
        mse_pos[h] = float(np.square(diff[:, :n_pos]).mean())
        predicted[h] = state
    return RolloutResult(predicted, mse, mse_pos, trace)


def mean_rollout_mse(models, episodes, horizon, selection, start=0, rng=None):
    """Mean over episodes of the mean per-step full-state MSE."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    vals = [
        rollout(models, ep, start, horizon, selection, rng=rng).mean_mse for ep in episodes
    ]
    return float(np.mean(vals))


@dataclass
class DisentanglementMatrix:
    counts: np.ndarray  # (n_modes, M) int
    mode_names: list
    score: float
    assignment: dict  # mode row index -> mechanism column

    @property
    def row_normalized(self):
        c = self.counts.astype(np.float64)
        sums = c.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            p = np.where(sums > 0, c / sums, 0.0)
        return p


def optimal_assignment_score(counts):
    """Best one-to-one mode-to-mechanism matching, by exhaustive permutation.

    Returns (score, assignment). Score is matched counts over total counts.
    """
    counts = np.asarray(counts, dtype=np.float64)
    n_modes, n_mech = counts.shape
    if min(n_modes, n_mech) > 8:
        raise ConfigError("exhaustive matching is limited to 8 modes/mechanisms")
    total = counts.sum()
    if total == 0:
        return 0.0, {}
    best_val = -1.0
    best_map = {}
    rows = range(n_modes)
    if n_mech >= n_modes:
        for cols in itertools.permutations(range(n_mech), n_modes):
            val = sum(counts[r, c] for r, c in zip(rows, cols))
            if val > best_val:
                best_val = val
                best_map = dict(zip(rows, cols))
    else:
        for picked_rows in itertools.permutations(rows, n_mech):
            val = sum(counts[r, c] for c, r in enumerate(picked_rows))
            if val > best_val:
                best_val = val
                best_map = {r: c for c, r in enumerate(picked_rows)}
    return float(best_val / total), best_map


def disentanglement_matrix(bank, episodes, horizon, window_stride=1):
    """Counts of (ground-truth mode at window start, winning mechanism).

    Mode rows cover the domain's full mode list, in enum order.
    """
    mode_list = None
    counts = None
    for ep in episodes:
        if ep.T < horizon + 1:
            continue
        if mode_list is None:
            # infer the domain from the state dimension
            from .envs import LANE_MODES, PARTICLE_MODES

            mode_list = list(PARTICLE_MODES if ep.d == 7 else LANE_MODES)
            counts = np.zeros((len(mode_list), bank.M), dtype=np.int64)
        win = composition_mod.windowed_losses_for_episode(bank, ep.states, horizon)
        n_t, k = win.shape[0], win.shape[1]
        flat = win.reshape(n_t, k, -1).argmin(axis=2)
        win_m = flat // k
        for t in range(0, n_t, window_stride):
            for i in range(k):
                mode = InteractionMode(int(ep.gt_mode[t, i]))
                counts[mode_list.index(mode), int(win_m[t, i])] += 1
    if counts is None:
        raise ConfigError("no episode long enough for the requested horizon")
    score, assignment = optimal_assignment_score(counts)
    return DisentanglementMatrix(
        counts, [m.name for m in mode_list], score, assignment
    )


def write_matrix_csv(matrix, path):
    """Counts CSV: mode names in the first column, mechanism indices as headers."""
    n_mech = matrix.counts.shape[1]
    with open(path, "w") as fh:
        fh.write("mode," + ",".join(f"mech_{m}" for m in range(n_mech)) + "\n")
        for name, row in zip(matrix.mode_names, matrix.counts):
            fh.write(name + "," + ",".join(str(int(v)) for v in row) + "\n")


def read_matrix_csv(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    header = lines[0].split(",")
    names = []
    rows = []
    for ln in lines[1:]:
        cells = ln.split(",")
        names.append(cells[0])
        rows.append([int(v) for v in cells[1:]])
    counts = np.asarray(rows, dtype=np.int64)
    if counts.shape[1] != len(header) - 1:
        raise ShapeError(f"matrix CSV {path} has inconsistent columns")
    return counts, names


ADAPTATION_BUDGETS = (1, 2, 5, 10, 20, 50, 100, 1000)


@dataclass
class AdaptationRow:
    method: str
    n_episodes: int
    seed: int
    step_mse: np.ndarray  # (H,) mean per-step MSE over the test set

    @property
    def mean_mse(self):
        return float(self.step_mse.mean())


def evaluate_method_rollouts(models, test_episodes, horizon, selection, rng=None):
    """Per-step MSE averaged over a test set: (H,) array."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    acc = np.zeros(horizon)
    for ep in test_episodes:
        acc += rollout(models, ep, 0, horizon, selection, rng=rng).mse
    return acc / len(test_episodes)


def write_adaptation_csv(rows, horizon, path):
    header = ["method", "n_episodes", "seed"]
    header += [f"mse_step_{h}" for h in range(1, horizon + 1)]
    header += ["mean_mse"]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = [row.method, str(row.n_episodes), str(row.seed)]
            cells += [repr(float(v)) for v in row.step_mse]
            cells.append(repr(row.mean_mse))
            fh.write(",".join(cells) + "\n")


def write_rollout_csv(results, selection, path):
    """Per-episode per-step errors plus the selection trace flattened."""
    with open(path, "w") as fh:
        fh.write("episode,step,mse,mse_pos\n")
        for e, res in enumerate(results):
            for h in range(res.mse.size):
                fh.write(f"{e},{h + 1},{repr(float(res.mse[h]))},{repr(float(res.mse_pos[h]))}\n")


def write_trace_csv(results, path):
    with open(path, "w") as fh:
        fh.write("episode,step,object,mechanism,context\n")
        for e, res in enumerate(results):
            for h, step_trace in enumerate(res.trace):
                if step_trace is None:
                    continue
                for i, (m, j) in enumerate(step_trace):
                    fh.write(f"{e},{h + 1},{i},{m},{j}\n")
