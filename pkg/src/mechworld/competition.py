"""Phase 1: winner-takes-all training of the mechanism bank.

Every mechanism is an independent MLP mapping a concatenated (object,
context) state pair to a predicted state delta. For each window and object,
all mechanism-context pairs predict teacher-forced transitions over the
selection horizon; only the pair with the lowest summed squared error
receives gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nncore
from .dataset import sample_windows
from .errors import ConfigError, ShapeError, TrainingError

WARM_START = "warm_start"
COMPETE = "compete"

_CHUNK_ROWS = 32768


@dataclass
class MechanismBank:
    """M independently parameterized delta-prediction networks."""

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
        nets = [nncore.init_mlp([2 * d, *hidden, d], child) for child in children]
        opt = [nncore.AdamState.zeros_like(net, lr=lr) for net in nets]
        return cls(nets, opt, d)

    def copy(self):
        bank = MechanismBank([n.copy() for n in self.nets], [], self.d)
        bank.opt = [nncore.AdamState.zeros_like(n, lr=s.lr) for n, s in zip(bank.nets, self.opt)]
        return bank


@dataclass
class WinnerRecord:
    """Argmin pair for one object of one window."""

    object_index: int
    m: int
    j: int
    loss: float
    gt_mode: int | None = None
    gt_ctx: int | None = None


@dataclass
class CompetitionConfig:
    n_mechanisms: int
    horizon: int
    warm_start_steps: int
    total_steps: int
    batch_size: int
    seed: int
    lr: float = 1e-4
    log_interval: int = 50
    checkpoint_interval: int = 0  # 0 = final checkpoint only
    # Optional warm-phase overrides. The warm phase is plain population
    # regression, so it tolerates a small batch and a hotter learning rate;
    # the compete phase needs a larger batch so every active mechanism gets
    # a clean gradient from its own wins. Defaults fall back to
    # batch_size/lr.
    warm_batch_size: int | None = None
    warm_lr: float | None = None

    def validate(self):
        if self.horizon < 1:
            raise ConfigError("selection horizon must be >= 1")
        if self.warm_start_steps > self.total_steps:
            raise ConfigError("warm_start_steps cannot exceed total_steps")
        if self.n_mechanisms < 1 or self.batch_size < 1:
            raise ConfigError("need at least one mechanism and a positive batch size")

    @property
    def effective_warm_batch(self):
        return self.warm_batch_size or self.batch_size

    @property
    def effective_warm_lr(self):
        return self.warm_lr or self.lr


def predict_delta(bank, m, z_i, z_j):
    """Delta prediction of mechanism m for object state z_i with context z_j."""
    if not 0 <= m < bank.M:
        raise ShapeError(f"mechanism index {m} out of range for bank of {bank.M}")
    return nncore.mlp_forward(bank.nets[m], np.concatenate([z_i, z_j]))


def _forward_rows(net, X):
    out = np.empty((X.shape[0], net.weights[-1].shape[0]))
    for lo in range(0, X.shape[0], _CHUNK_ROWS):
        out[lo : lo + _CHUNK_ROWS] = nncore.mlp_forward(net, X[lo : lo + _CHUNK_ROWS])
    return out


def _backward_rows(net, X, U):
    """Summed parameter gradients of <U, net(X)> over rows, chunked."""
    total = nncore.GradBuffer.zeros_like(net)
    for lo in range(0, X.shape[0], _CHUNK_ROWS):
        grads, _ = nncore.mlp_backward(net, X[lo : lo + _CHUNK_ROWS], U[lo : lo + _CHUNK_ROWS])
        total.iadd(grads)
    return total


def _pair_inputs(states):
    """(B, T_h, K, K, 2d) concatenations of every (object, context) pair."""
    b, t1, k, d = states.shape
    th = t1 - 1
    cur = states[:, :th]
    X = np.empty((b, th, k, k, 2 * d))
    X[..., :d] = cur[:, :, :, None, :]
    X[..., d:] = cur[:, :, None, :, :]
    return X


def windowed_pair_loss_batch(bank, states):
    """Loss tensor (B, K, M, K): teacher-forced squared error over the window."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 4:
        raise ShapeError(f"window batch must be (B, T_h+1, K, d), got {states.shape}")
    b, t1, k, d = states.shape
    if d != bank.d:
        raise ShapeError(f"state dim {d} != bank dim {bank.d}")
    th = t1 - 1
    X = _pair_inputs(states).reshape(b * th * k * k, 2 * d)
    target = states[:, 1:, :, None, :] - states[:, :th, :, None, :]  # (B, T_h, K, 1, d)
    loss = np.empty((b, k, bank.M, k))
    for m in range(bank.M):
        out = _forward_rows(bank.nets[m], X).reshape(b, th, k, k, d)
        err = out - target
        np.square(err, out=err)
        loss[:, :, m, :] = err.sum(axis=4).sum(axis=1)
    if not np.isfinite(loss).all():
        raise TrainingError("non-finite pair loss")
    return loss


def windowed_pair_loss(bank, window):
    """Single-window loss tensor (K, M, K)."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 3:
        raise ShapeError(f"window must be (T_h+1, K, d), got {window.shape}")
    return windowed_pair_loss_batch(bank, window[None])[0]


def select_winners_batch(loss):
    """Argmin over (m, j) per (window, object); ties take smallest m, then j."""
    b, k, m, k2 = loss.shape
    flat = loss.reshape(b, k, m * k2)
    idx = flat.argmin(axis=2)
    win_loss = np.take_along_axis(flat, idx[..., None], axis=2)[..., 0]
    return idx // k2, idx % k2, win_loss


def select_winners(tensor):
    """WinnerRecord per object from a single (K, M, K) tensor."""
    tensor = np.asarray(tensor)
    if tensor.ndim != 3:
        raise ShapeError(f"loss tensor must be (K, M, K), got {tensor.shape}")
    wm, wj, wl = select_winners_batch(tensor[None])
    return [
        WinnerRecord(i, int(wm[0, i]), int(wj[0, i]), float(wl[0, i]))
        for i in range(tensor.shape[0])
    ]


def competition_update(bank, batch, phase):
    """One gradient step on a window batch; returns step metrics.

    COMPETE backpropagates each (window, object) winner's loss into the
    winning mechanism only, averaging per mechanism by its win count.
    WARM_START backpropagates the loss averaged over all pairs into every
    mechanism.
    """
    states = np.asarray(batch.states, dtype=np.float64)
    b, t1, k, d = states.shape
    th = t1 - 1
    if phase == WARM_START:
        X = _pair_inputs(states).reshape(b * th * k * k, 2 * d)
        target = np.broadcast_to(
            states[:, 1:, :, None, :] - states[:, :th, :, None, :], (b, th, k, k, d)
        ).reshape(-1, d)
        loss = np.empty((b, k, bank.M, k))
        norm = b * k * bank.M * k
        for m in range(bank.M):
            out, cache = nncore.mlp_forward_cached(bank.nets[m], X)
            err = out - target
            loss[:, :, m, :] = (
                np.square(err).sum(axis=1).reshape(b, th, k, k).sum(axis=1)
            )
            upstream = (2.0 / norm) * err
            grads, _ = nncore.mlp_backward_from_cache(bank.nets[m], cache, upstream)
            nncore.adam_step(bank.nets[m], grads, bank.opt[m])
        if not np.isfinite(loss).all():
            raise TrainingError("non-finite pair loss")
        win_m, _, win_loss = select_winners_batch(loss)
    elif phase == COMPETE:
        loss = windowed_pair_loss_batch(bank, states)
        win_m, win_j, win_loss = select_winners_batch(loss)
        cur = states[:, :th]  # (B, T_h, K, d)
        nxt = states[:, 1:]
        for m in range(bank.M):
            rows_b, rows_i = np.nonzero(win_m == m)
            n_wins = rows_b.size
            if n_wins == 0:
                continue
            rows_j = win_j[rows_b, rows_i]
            zi = cur[rows_b, :, rows_i, :]  # (n_wins, T_h, d)
            zj = cur[rows_b, :, rows_j, :]
            Xw = np.concatenate([zi, zj], axis=-1).reshape(n_wins * th, 2 * d)
            tgt = (nxt[rows_b, :, rows_i, :] - zi).reshape(n_wins * th, d)
            out, cache = nncore.mlp_forward_cached(bank.nets[m], Xw)
            upstream = (2.0 / n_wins) * (out - tgt)
            grads, _ = nncore.mlp_backward_from_cache(bank.nets[m], cache, upstream)
            nncore.adam_step(bank.nets[m], grads, bank.opt[m])
    else:
        raise ConfigError(f"unknown phase {phase!r}")
    win_counts = np.bincount(win_m.ravel(), minlength=bank.M)
    return {
        "phase": phase,
        "mean_winner_loss": float(win_loss.mean()),
        "win_counts": win_counts,
    }


def usage_entropy(win_fracs):
    """Entropy (nats) of a mechanism-usage distribution."""
    p = np.asarray(win_fracs, dtype=np.float64)
    p = p / p.sum()
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def train_competition(config, episodes, checkpoint_dir=None):
    """Warm start then compete; returns (bank, usage log rows).

    Usage rows aggregate each logging interval:
    (step, phase, mean_winner_loss, win_frac_0 .. win_frac_{M-1}).
    """
    config.validate()
    if not episodes:
        raise ConfigError("cannot train on an empty dataset")
    d = episodes[0].d
    bank_ss, sample_ss = np.random.SeedSequence(config.seed).spawn(2)
    bank = MechanismBank.create(config.n_mechanisms, d, bank_ss, lr=config.effective_warm_lr)
    rng = np.random.default_rng(sample_ss)
    rows = []
    interval_counts = np.zeros(config.n_mechanisms)
    interval_loss = 0.0
    interval_steps = 0
    if checkpoint_dir is not None:
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
    for step in range(1, config.total_steps + 1):
        phase = WARM_START if step <= config.warm_start_steps else COMPETE
        if step == config.warm_start_steps + 1:
            for opt in bank.opt:
                opt.lr = config.lr
        batch_size = config.effective_warm_batch if phase == WARM_START else config.batch_size
        batch = sample_windows(episodes, config.horizon, batch_size, rng)
        metrics = competition_update(bank, batch, phase)
        interval_counts += metrics["win_counts"]
        interval_loss += metrics["mean_winner_loss"]
        interval_steps += 1
        at_log = step % config.log_interval == 0 or step == config.total_steps
        if at_log:
            fracs = interval_counts / interval_counts.sum()
            rows.append(
                (step, phase, interval_loss / interval_steps, *fracs.tolist())
            )
            interval_counts[:] = 0.0
            interval_loss = 0.0
            interval_steps = 0
        if checkpoint_dir is not None and config.checkpoint_interval > 0:
            if step % config.checkpoint_interval == 0:
                nncore.save_checkpoint(
                    checkpoint_dir / f"mechanisms_step{step}.ckpt", bank.nets
                )
    if checkpoint_dir is not None:
        nncore.save_checkpoint(checkpoint_dir / "mechanisms.ckpt", bank.nets)
    return bank, rows


def write_usage_log(rows, n_mechanisms, path):
    header = ["step", "phase", "mean_winner_loss"]
    header += [f"win_frac_mech_{m}" for m in range(n_mechanisms)]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            step, phase, loss, *fracs = row
            cells = [str(step), phase, repr(float(loss))] + [repr(float(f)) for f in fracs]
            fh.write(",".join(cells) + "\n")
