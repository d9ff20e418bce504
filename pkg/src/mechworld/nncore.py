"""Minimal feedforward substrate: ELU MLPs with hand-derived gradients and Adam.

Everything runs in float64. Forward/backward accept either a single input
vector or a 2-D array of row inputs; the gradient contract is per-sample,
and for row batches the returned parameter gradients are the sum over rows.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DatasetError, ShapeError, TrainingError

CHECKPOINT_MAGIC = b"CMT1"
CHECKPOINT_VERSION = 1


def elu(x, out=None):
    """Elementwise ELU: x for x >= 0, exp(x) - 1 for x < 0."""
    pos = np.maximum(x, 0.0)
    neg = np.expm1(np.minimum(x, 0.0), out=out)
    neg += pos
    return neg


def elu_slope_from_output(act):
    """ELU derivative recovered from the activation value itself.

    For x >= 0 the output equals x (>= 0) and the slope is 1; for x < 0 the
    output is exp(x) - 1 (< 0) and the slope is exp(x) = output + 1.
    """
    return np.where(act >= 0.0, 1.0, act + 1.0)


@dataclass
class MlpParams:
    """Weights (out, in) and biases (out,) of each linear layer.

    Hidden layers are followed by ELU; the final layer is affine only.
    """

    weights: list
    biases: list

    @property
    def layer_sizes(self):
        sizes = [self.weights[0].shape[1]]
        sizes.extend(w.shape[0] for w in self.weights)
        return sizes

    @property
    def n_layers(self):
        return len(self.weights)

    def validate(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise ShapeError("params need one bias vector per weight matrix")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ShapeError(f"layer {l}: weight {w.shape} vs bias {b.shape}")
            if l > 0 and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ShapeError(
                    f"layer {l} expects {w.shape[1]} inputs, layer {l-1} emits "
                    f"{self.weights[l-1].shape[0]}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise TrainingError(f"non-finite parameters in layer {l}")

    def copy(self):
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class GradBuffer:
    """Per-parameter gradient arrays, shape-congruent with an MlpParams."""

    weights: list
    biases: list

    @classmethod
    def zeros_like(cls, params):
        return cls(
            [np.zeros_like(w) for w in params.weights],
            [np.zeros_like(b) for b in params.biases],
        )

    def iadd(self, other):
        for a, b in zip(self.weights, other.weights):
            a += b
        for a, b in zip(self.biases, other.biases):
            a += b

    def scale(self, c):
        for w in self.weights:
            w *= c
        for b in self.biases:
            b *= c


@dataclass
class AdamState:
    """Adam moment estimates plus step counter for one MlpParams."""

    m: GradBuffer
    v: GradBuffer
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, lr=1e-4):
        return cls(m=GradBuffer.zeros_like(params), v=GradBuffer.zeros_like(params), lr=lr)


def init_mlp(layer_sizes, seed):
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    if len(layer_sizes) < 2 or any(int(s) <= 0 for s in layer_sizes):
        raise ConfigError(f"layer_sizes must have >= 2 positive entries, got {layer_sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def _check_input(params, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.weights[0].shape[1]:
        raise ShapeError(
            f"input size {x.shape[-1]} != first layer in-size {params.weights[0].shape[1]}"
        )
    if x.ndim not in (1, 2):
        raise ShapeError(f"input must be 1-D or 2-D, got shape {x.shape}")
    return x


def mlp_forward(params, x):
    """Forward pass; 1-D input gives 1-D output, row batches map row-wise."""
    x = _check_input(params, x)
    h = x
    last = params.n_layers - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        h = z if l == last else elu(z, out=z)
    return h


def mlp_forward_cached(params, x):
    """Forward pass that also returns the per-layer inputs needed by backward."""
    x = _check_input(params, x)
    h = x
    inputs = []
    last = params.n_layers - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w.T + b
        h = z if l == last else elu(z, out=z)
    return h, inputs


def mlp_backward_from_cache(params, inputs, upstream):
    """Reverse pass given cached layer inputs; see mlp_backward."""
    upstream = np.asarray(upstream, dtype=np.float64)
    single = upstream.ndim == 1
    delta = upstream[None, :] if single else upstream
    gws = [None] * params.n_layers
    gbs = [None] * params.n_layers
    for l in range(params.n_layers - 1, -1, -1):
        h_in = inputs[l]
        if h_in.ndim == 1:
            h_in = h_in[None, :]
        gws[l] = delta.T @ h_in
        gbs[l] = delta.sum(axis=0)
        delta = delta @ params.weights[l]
        if l > 0:
            act = inputs[l]  # input of layer l == activation of layer l-1
            if act.ndim == 1:
                act = act[None, :]
            delta = delta * elu_slope_from_output(act)
    input_grad = delta[0] if single else delta
    return GradBuffer(gws, gbs), input_grad


def mlp_backward(params, x, upstream):
    """Gradients of <upstream, mlp_forward(params, x)> w.r.t. params and input.

    For 2-D row batches the parameter gradients are summed over rows and the
    returned input gradient has one row per input row.
    """
    x = _check_input(params, x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape[-1] != params.weights[-1].shape[0]:
        raise ShapeError(
            f"upstream size {upstream.shape[-1]} != output size {params.weights[-1].shape[0]}"
        )
    if upstream.ndim != x.ndim:
        raise ShapeError("input and upstream must both be single samples or both row batches")
    _, inputs = mlp_forward_cached(params, x)
    return mlp_backward_from_cache(params, inputs, upstream)


def adam_step(params, grads, state):
    """One Adam update with bias correction, in place. Increments state.t."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for kind in ("weights", "biases"):
        ps = getattr(params, kind)
        gs = getattr(grads, kind)
        ms = getattr(state.m, kind)
        vs = getattr(state.v, kind)
        for l, (p, g, m, v) in enumerate(zip(ps, gs, ms, vs)):
            if not np.isfinite(g).all():
                raise TrainingError(f"non-finite gradient at layer {l} {kind}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# --- checkpoint I/O -------------------------------------------------------
#
# Binary layout, little-endian: magic "CMT1", version u32, network count u32;
# per network: layer count u32, then per layer rows u32, cols u32, row-major
# f64 weights, f64 biases.


def save_checkpoint(path, networks):
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(networks)))
        for net in networks:
            fh.write(struct.pack("<I", net.n_layers))
            for w, b in zip(net.weights, net.biases):
                rows, cols = w.shape
                fh.write(struct.pack("<II", rows, cols))
                fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def _read_exact(fh, n, path):
    buf = fh.read(n)
    if len(buf) != n:
        raise DatasetError(f"truncated checkpoint file: {path}")
    return buf


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, path) != CHECKPOINT_MAGIC:
            raise DatasetError(f"bad magic bytes in checkpoint: {path}")
        version, count = struct.unpack("<II", _read_exact(fh, 8, path))
        if version != CHECKPOINT_VERSION:
            raise DatasetError(f"unsupported checkpoint version {version}: {path}")
        nets = []
        for _ in range(count):
            (n_layers,) = struct.unpack("<I", _read_exact(fh, 4, path))
            weights, biases = [], []
            for _ in range(n_layers):
                rows, cols = struct.unpack("<II", _read_exact(fh, 8, path))
                w = np.frombuffer(_read_exact(fh, 8 * rows * cols, path), dtype="<f8")
                weights.append(w.reshape(rows, cols).astype(np.float64))
                b = np.frombuffer(_read_exact(fh, 8 * rows, path), dtype="<f8")
                biases.append(b.astype(np.float64))
            net = MlpParams(weights, biases)
            net.validate()
            nets.append(net)
        return nets


def export_checkpoint_text(networks, path):
    """Lossless text dump: shape preamble lines, then one value per line."""
    with open(path, "w") as fh:
        fh.write(f"CMT1TEXT {CHECKPOINT_VERSION}\n")
        fh.write(f"networks {len(networks)}\n")
        for idx, net in enumerate(networks):
            fh.write(f"network {idx} layers {net.n_layers}\n")
            for w, b in zip(net.weights, net.biases):
                fh.write(f"layer {w.shape[0]} {w.shape[1]}\n")
                for v in w.ravel():
                    fh.write(repr(float(v)) + "\n")
                for v in b:
                    fh.write(repr(float(v)) + "\n")


def import_checkpoint_text(path):
    """Inverse of export_checkpoint_text, used to verify losslessness."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise DatasetError(f"truncated text checkpoint: {path}")
        line = lines[pos]
        pos += 1
        return line

    header = take().split()
    if header[0] != "CMT1TEXT" or int(header[1]) != CHECKPOINT_VERSION:
        raise DatasetError(f"bad text checkpoint header: {path}")
    count = int(take().split()[1])
    nets = []
    for _ in range(count):
        n_layers = int(take().split()[3])
        weights, biases = [], []
        for _ in range(n_layers):
            _, r, c = take().split()
            rows, cols = int(r), int(c)
            w = np.array([float(take()) for _ in range(rows * cols)]).reshape(rows, cols)
            b = np.array([float(take()) for _ in range(rows)])
            weights.append(w)
            biases.append(b)
        nets.append(MlpParams(weights, biases))
    return nets
