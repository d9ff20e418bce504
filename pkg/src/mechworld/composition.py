"""Phase 2: adapt to a new environment by learning a pair classifier.

Mechanisms stay frozen. Per-mechanism confidence networks score every
(mechanism, context) pair for each object; their softmax is a categorical
distribution over M*K classes. Targets come from the frozen mechanisms
themselves: the pair that wins the windowed competition loss on the
adaptation data.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

from . import nncore
from .errors import ConfigError, DatasetError, ShapeError, TrainingError

logger = logging.getLogger(__name__)

LABEL_MAGIC = b"CMTL"
LABEL_VERSION = 1


@dataclass
class ConfidenceBank:
    """M scalar-output networks, one per mechanism."""

    nets: list
    opt: list
    d: int

    @property
    def M(self):
        return len(self.nets)

    @classmethod
    def create(cls, n_mechanisms, d, seed, lr=1e-4, hidden=(300, 300)):
        if not isinstance(seed, np.random.SeedSequence):
            seed = np.random.SeedSequence(seed)
        children = seed.spawn(n_mechanisms)
        nets = [nncore.init_mlp([2 * d, *hidden, 1], child) for child in children]
        opt = [nncore.AdamState.zeros_like(net, lr=lr) for net in nets]
        return cls(nets, opt, d)

    @classmethod
    def zeros(cls, n_mechanisms, d, hidden=(300, 300)):
        """All-zero bank: every pair scores 0, the distribution is uniform."""
        bank = cls.create(n_mechanisms, d, seed=0, hidden=hidden)
        for net in bank.nets:
            for w in net.weights:
                w[:] = 0.0
        return bank

    def copy_nets(self):
        return [net.copy() for net in self.nets]

    def restore_nets(self, nets):
        self.nets = [net.copy() for net in nets]


def _pair_rows(states):
    """(..., K, K, 2d) inputs [z_i ⊕ z_j] from (..., K, d) states."""
    k, d = states.shape[-2], states.shape[-1]
    lead = states.shape[:-2]
    X = np.empty((*lead, k, k, 2 * d))
    X[..., :d] = states[..., :, None, :]
    X[..., d:] = states[..., None, :, :]
    return X


def confidence_scores(conf, states):
    """Score tensor: (K, M, K) for one scene or (B, K, M, K) for a batch."""
    states = np.asarray(states, dtype=np.float64)
    single = states.ndim == 2
    if single:
        states = states[None]
    if states.ndim != 3 or states.shape[-1] != conf.d:
        raise ShapeError(f"states must be (K, {conf.d}) or (B, K, {conf.d})")
    b, k, d = states.shape
    X = _pair_rows(states).reshape(b * k * k, 2 * d)
    scores = np.empty((b, k, conf.M, k))
    for m in range(conf.M):
        scores[:, :, m, :] = nncore.mlp_forward(conf.nets[m], X).reshape(b, k, k)
    return scores[0] if single else scores


def pair_distribution(scores):
    """Softmax over the flattened (M, K) axes; rows sum to 1."""
    scores = np.asarray(scores)
    lead = scores.shape[:-2]
    flat = scores.reshape(*lead, -1)
    shifted = flat - flat.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)
    return p.reshape(scores.shape)


def select_pair(conf, states, i):
    """Highest-scoring (mechanism, context) pair for object i."""
    scores = confidence_scores(conf, states)
    flat = int(np.argmax(scores[i].reshape(-1)))
    k = scores.shape[-1]
    return flat // k, flat % k


@dataclass
class CompositionLabelSet:
    """Winning pairs extracted with frozen mechanisms: one row per (ep, t, i)."""

    episode: np.ndarray
    t: np.ndarray
    obj: np.ndarray
    m: np.ndarray
    j: np.ndarray
    skipped_episodes: int = 0

    def __len__(self):
        return self.episode.size

    def class_for(self, k):
        """Flattened class id m * K + j of each record."""
        return self.m.astype(np.int64) * k + self.j.astype(np.int64)


def episode_step_pair_losses(bank, states):
    """One-step pair losses (T-1, K, M, K) for every transition of an episode."""
    states = np.asarray(states, dtype=np.float64)
    t, k, d = states.shape
    X = _pair_rows(states[: t - 1]).reshape((t - 1) * k * k, 2 * d)
    target = states[1:, :, None, :] - states[: t - 1, :, None, :]
    loss = np.empty((t - 1, k, bank.M, k))
    for m in range(bank.M):
        out = nncore.mlp_forward(bank.nets[m], X).reshape(t - 1, k, k, d)
        err = out - target
        np.square(err, out=err)
        loss[:, :, m, :] = err.sum(axis=3)
    if not np.isfinite(loss).all():
        raise TrainingError("non-finite pair loss")
    return loss


def windowed_losses_for_episode(bank, states, horizon):
    """Windowed pair losses (T - horizon, K, M, K) for every start index.

    Equivalent to stacking windowed_pair_loss over all starts, but the
    per-step losses are computed once and summed over sliding windows.
    """
    step_loss = episode_step_pair_losses(bank, states)
    if horizon == 1:
        return step_loss
    windows = np.lib.stride_tricks.sliding_window_view(step_loss, horizon, axis=0)
    return windows.sum(axis=-1)


def extract_labels(bank, episodes, t_label):
    """Winning (m*, j*) per (episode, start, object) under the frozen bank."""
    eps_idx, ts, objs, ms, js = [], [], [], [], []
    skipped = 0
    for e, ep in enumerate(episodes):
        if ep.T < t_label + 1:
            skipped += 1
            continue
        win = windowed_losses_for_episode(bank, ep.states, t_label)
        n_t, k = win.shape[0], win.shape[1]
        flat = win.reshape(n_t, k, -1).argmin(axis=2)
        t_grid, i_grid = np.meshgrid(np.arange(n_t), np.arange(k), indexing="ij")
        eps_idx.append(np.full(n_t * k, e, dtype=np.int64))
        ts.append(t_grid.ravel())
        objs.append(i_grid.ravel())
        ms.append((flat // k).ravel())
        js.append((flat % k).ravel())
    if skipped:
        logger.warning("extract_labels skipped %d episodes shorter than %d states", skipped, t_label + 1)
    if not eps_idx:
        return CompositionLabelSet(
            *(np.zeros(0, dtype=np.int64) for _ in range(5)), skipped_episodes=skipped
        )
    return CompositionLabelSet(
        np.concatenate(eps_idx),
        np.concatenate(ts).astype(np.int64),
        np.concatenate(objs).astype(np.int64),
        np.concatenate(ms).astype(np.int64),
        np.concatenate(js).astype(np.int64),
        skipped_episodes=skipped,
    )


def save_labels(labels, path):
    with open(path, "wb") as fh:
        fh.write(LABEL_MAGIC)
        fh.write(struct.pack("<II", LABEL_VERSION, len(labels)))
        for arr in (labels.episode, labels.t, labels.obj, labels.m, labels.j):
            fh.write(np.ascontiguousarray(arr, dtype="<u4").tobytes())


def load_labels(path):
    blob = open(path, "rb").read()
    if blob[:4] != LABEL_MAGIC:
        raise DatasetError(f"bad magic bytes in label file: {path}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != LABEL_VERSION:
        raise DatasetError(f"unsupported label version {version}: {path}")
    need = 12 + 5 * 4 * count
    if len(blob) != need:
        raise DatasetError(f"label file has {len(blob)} bytes, expected {need}: {path}")
    arrays = []
    pos = 12
    for _ in range(5):
        arrays.append(
            np.frombuffer(blob, dtype="<u4", count=count, offset=pos).astype(np.int64)
        )
        pos += 4 * count
    return CompositionLabelSet(*arrays)


@dataclass
class CompositionConfig:
    batch_size: int = 1024
    lr: float = 1e-4
    max_steps: int = 2000
    log_interval: int = 50
    eval_interval: int = 50
    patience: int = 8
    holdout_frac: float = 0.1
    seed: int = 0


def _gather_scene_states(labels, episodes):
    """(L, K, d) scene state per label record."""
    k = episodes[0].K
    d = episodes[0].d
    out = np.empty((len(labels), k, d))
    for r in range(len(labels)):
        out[r] = episodes[int(labels.episode[r])].states[int(labels.t[r])]
    return out


def _nll_and_scores(conf, scenes, objs, classes):
    """Mean NLL, softmax probabilities, and raw scores for label rows."""
    n, k, d = scenes.shape
    zi = scenes[np.arange(n), objs]  # (n, d)
    X = np.empty((n, k, 2 * d))
    X[:, :, :d] = zi[:, None, :]
    X[:, :, d:] = scenes
    X = X.reshape(n * k, 2 * d)
    scores = np.empty((n, conf.M, k))
    for m in range(conf.M):
        scores[:, m, :] = nncore.mlp_forward(conf.nets[m], X).reshape(n, k)
    p = pair_distribution(scores).reshape(n, conf.M * k)
    picked = p[np.arange(n), classes]
    nll = float(-np.log(np.maximum(picked, 1e-300)).mean())
    return nll, p, scores, X


def train_composition(conf, labels, episodes, config):
    """Minimize NLL of the winning-pair labels; returns (conf, trace rows).

    Trace rows are (step, nll, top1_acc) on the training slice. Early
    stopping watches held-out NLL and restores the best parameters.
    """
    if len(labels) == 0:
        raise ConfigError("cannot train composition on an empty label set")
    k = episodes[0].K
    scenes = _gather_scene_states(labels, episodes)
    objs = labels.obj
    classes = labels.class_for(k)
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(labels))
    n_held = int(config.holdout_frac * len(labels))
    held, train = order[:n_held], order[n_held:]
    if train.size == 0:
        raise ConfigError("holdout fraction leaves no training labels")

    best_nll = np.inf
    best_nets = conf.copy_nets()
    evals_since_best = 0
    trace = []
    batch_size = min(config.batch_size, train.size)
    for step in range(1, config.max_steps + 1):
        idx = train if train.size <= batch_size else rng.choice(train, size=batch_size, replace=False)
        n = idx.size
        nll, p, _, X = _nll_and_scores(conf, scenes[idx], objs[idx], classes[idx])
        grad_scores = p.copy()
        grad_scores[np.arange(n), classes[idx]] -= 1.0
        grad_scores /= n
        grad_scores = grad_scores.reshape(n, conf.M, k)
        for m in range(conf.M):
            upstream = grad_scores[:, m, :].reshape(n * k, 1)
            grads, _ = nncore.mlp_backward(conf.nets[m], X, upstream)
            nncore.adam_step(conf.nets[m], grads, conf.opt[m])
        if step % config.log_interval == 0 or step == config.max_steps:
            top1 = float((p.argmax(axis=1) == classes[idx]).mean())
            trace.append((step, nll, top1))
        if held.size and (step % config.eval_interval == 0 or step == config.max_steps):
            held_nll, _, _, _ = _nll_and_scores(conf, scenes[held], objs[held], classes[held])
            if held_nll < best_nll - 1e-12:
                best_nll = held_nll
                best_nets = conf.copy_nets()
                evals_since_best = 0
            else:
                evals_since_best += 1
                if evals_since_best >= config.patience:
                    break
    if held.size:
        conf.restore_nets(best_nets)
    return conf, trace


def classifier_accuracy(conf, labels, episodes):
    """Top-1 accuracy of the confidence bank against a label set."""
    if len(labels) == 0:
        raise ConfigError("empty label set")
    k = episodes[0].K
    scenes = _gather_scene_states(labels, episodes)
    _, p, _, _ = _nll_and_scores(conf, scenes, labels.obj, labels.class_for(k))
    return float((p.argmax(axis=1) == labels.class_for(k)).mean())


def write_accuracy_trace(rows, path):
    with open(path, "w") as fh:
        fh.write("step,nll,top1_acc\n")
        for step, nll, acc in rows:
            fh.write(f"{step},{repr(float(nll))},{repr(float(acc))}\n")
