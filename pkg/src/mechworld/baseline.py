"""Monolithic baseline: fully-connected message passing over object states.

An edge network embeds every ordered (object, context) pair; messages are
mean-aggregated over contexts and fed with the object state through a node
network that predicts the state delta. Trained on one-step MSE over mixed
environments, adapted by finetuning every parameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nncore
from .errors import ConfigError, ShapeError, TrainingError

EDGE_DIM = 64


@dataclass
class GnnParams:
    edge: nncore.MlpParams
    node: nncore.MlpParams
    edge_opt: nncore.AdamState
    node_opt: nncore.AdamState
    d: int
    h_e: int

    @classmethod
    def create(cls, d, seed, h_e=EDGE_DIM, lr=1e-4, hidden=(300, 300)):
        if not isinstance(seed, np.random.SeedSequence):
            seed = np.random.SeedSequence(seed)
        edge_ss, node_ss = seed.spawn(2)
        edge = nncore.init_mlp([2 * d, *hidden, h_e], edge_ss)
        node = nncore.init_mlp([d + h_e, *hidden, d], node_ss)
        return cls(
            edge,
            node,
            nncore.AdamState.zeros_like(edge, lr=lr),
            nncore.AdamState.zeros_like(node, lr=lr),
            d,
            h_e,
        )

    def copy(self):
        return GnnParams(
            self.edge.copy(),
            self.node.copy(),
            nncore.AdamState.zeros_like(self.edge, lr=self.edge_opt.lr),
            nncore.AdamState.zeros_like(self.node, lr=self.node_opt.lr),
            self.d,
            self.h_e,
        )


def _forward_parts(params, states):
    """Shared forward: returns (deltas, caches and intermediates for backward)."""
    b, k, d = states.shape
    if d != params.d:
        raise ShapeError(f"state dim {d} != model dim {params.d}")
    if k > 1:
        X_edge = np.empty((b, k, k, 2 * d))
        X_edge[..., :d] = states[:, :, None, :]
        X_edge[..., d:] = states[:, None, :, :]
        edge_out, edge_cache = nncore.mlp_forward_cached(
            params.edge, X_edge.reshape(b * k * k, 2 * d)
        )
        E = edge_out.reshape(b, k, k, params.h_e)
        mask = 1.0 - np.eye(k)
        msg = (mask[None, :, :, None] * E).sum(axis=2) / (k - 1)
    else:
        edge_cache = None
        mask = None
        msg = np.zeros((b, k, params.h_e))
    X_node = np.concatenate([states, msg], axis=-1).reshape(b * k, d + params.h_e)
    node_out, node_cache = nncore.mlp_forward_cached(params.node, X_node)
    deltas = node_out.reshape(b, k, d)
    return deltas, (edge_cache, node_cache, mask, k, b)


def gnn_forward(params, states):
    """Predicted state deltas; (K, d) or (B, K, d) in, same shape out."""
    states = np.asarray(states, dtype=np.float64)
    single = states.ndim == 2
    if single:
        states = states[None]
    if states.ndim != 3:
        raise ShapeError(f"states must be (K, d) or (B, K, d), got {states.shape}")
    deltas, _ = _forward_parts(params, states)
    return deltas[0] if single else deltas


def _loss_and_step(params, cur, nxt, apply_update=True):
    """Mean per-object squared error; optionally one Adam step on both nets."""
    b, k, d = cur.shape
    deltas, (edge_cache, node_cache, mask, _, _) = _forward_parts(params, cur)
    err = cur + deltas - nxt
    loss = float(np.square(err).sum() / (b * k))
    if not np.isfinite(loss):
        raise TrainingError("non-finite baseline loss")
    if not apply_update:
        return loss
    upstream_node = (2.0 / (b * k)) * err.reshape(b * k, d)
    node_grads, node_in_grad = nncore.mlp_backward_from_cache(
        params.node, node_cache, upstream_node
    )
    if k > 1:
        msg_grad = node_in_grad[:, d:].reshape(b, k, params.h_e) / (k - 1)
        upstream_edge = (mask[None, :, :, None] * msg_grad[:, :, None, :]).reshape(
            b * k * k, params.h_e
        )
        edge_grads, _ = nncore.mlp_backward_from_cache(params.edge, edge_cache, upstream_edge)
        nncore.adam_step(params.edge, edge_grads, params.edge_opt)
    nncore.adam_step(params.node, node_grads, params.node_opt)
    return loss


def transition_arrays(episodes):
    """All one-step transitions stacked: (N, K, d) current and next states."""
    cur = np.concatenate([ep.states[:-1] for ep in episodes])
    nxt = np.concatenate([ep.states[1:] for ep in episodes])
    return cur, nxt


@dataclass
class BaselineConfig:
    steps: int = 2000
    batch_size: int = 1024
    lr: float = 1e-4
    seed: int = 0
    log_interval: int = 50
    # finetuning only:
    holdout_frac: float = 0.1
    eval_interval: int = 50
    patience: int = 8


def train_baseline(params, episodes, config):
    """Minimize one-step MSE over mixed-environment transitions."""
    rows = []
    if config.steps == 0:
        return params, rows
    if not episodes:
        raise ConfigError("cannot train the baseline on an empty dataset")
    cur, nxt = transition_arrays(episodes)
    rng = np.random.default_rng(config.seed)
    batch = min(config.batch_size, cur.shape[0])
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, cur.shape[0], size=batch)
        loss = _loss_and_step(params, cur[idx], nxt[idx])
        if step % config.log_interval == 0 or step == config.steps:
            rows.append((step, loss))
    return params, rows


def evaluate_one_step_mse(params, episodes):
    cur, nxt = transition_arrays(episodes)
    return _loss_and_step(params, cur, nxt, apply_update=False)


def finetune_baseline(params, episodes, config):
    """Same objective on adaptation data only; early stopping on a held-out slice."""
    if not episodes:
        return params, []
    cur, nxt = transition_arrays(episodes)
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(cur.shape[0])
    n_held = int(config.holdout_frac * cur.shape[0])
    held, train = order[:n_held], order[n_held:]
    if train.size == 0:
        raise ConfigError("holdout fraction leaves no finetuning transitions")
    batch = min(config.batch_size, train.size)
    best = (params.edge.copy(), params.node.copy())
    best_loss = np.inf
    evals_since_best = 0
    rows = []
    for step in range(1, config.steps + 1):
        idx = train if train.size <= batch else rng.choice(train, size=batch, replace=False)
        loss = _loss_and_step(params, cur[idx], nxt[idx])
        if step % config.log_interval == 0 or step == config.steps:
            rows.append((step, loss))
        if held.size and (step % config.eval_interval == 0 or step == config.steps):
            held_loss = _loss_and_step(params, cur[held], nxt[held], apply_update=False)
            if held_loss < best_loss - 1e-15:
                best_loss = held_loss
                best = (params.edge.copy(), params.node.copy())
                evals_since_best = 0
            else:
                evals_since_best += 1
                if evals_since_best >= config.patience:
                    break
    if held.size:
        params.edge, params.node = best
    return params, rows
