"""Episode generation, binary persistence, and consecutive-window sampling."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import envs
from .errors import ConfigError, DatasetError, SamplingError

EPISODE_MAGIC = b"CMTD"
EPISODE_VERSION = 1
GENERATOR_VERSION = 1


@dataclass
class Episode:
    """States (T, K, d) plus per-transition ground-truth labels (T-1, K)."""

    env_id: str
    states: np.ndarray
    gt_mode: np.ndarray
    gt_ctx: np.ndarray

    @property
    def T(self):
        return self.states.shape[0]

    @property
    def K(self):
        return self.states.shape[1]

    @property
    def d(self):
        return self.states.shape[2]

    def validate(self):
        if self.states.ndim != 3:
            raise DatasetError(f"episode states must be (T, K, d), got {self.states.shape}")
        expect = (self.T - 1, self.K)
        if self.gt_mode.shape != expect or self.gt_ctx.shape != expect:
            raise DatasetError(
                f"label arrays must have shape {expect}, got "
                f"{self.gt_mode.shape} / {self.gt_ctx.shape}"
            )
        if not np.isfinite(self.states).all():
            raise DatasetError("non-finite state values")
        if self.gt_ctx.min(initial=0) < 0 or self.gt_ctx.max(initial=0) >= self.K:
            raise DatasetError("context label out of range")


@dataclass
class DatasetManifest:
    dataset_id: str
    seed: int
    episode_len: int
    generator_version: int
    entries: list  # (env_id, episode_count, file_path)

    @property
    def total_episodes(self):
        return sum(count for _, count, _ in self.entries)


def rollout_episode(spec, episode_len, seed):
    """Simulate one episode of `episode_len` states from a fresh world."""
    if episode_len < 2:
        raise ConfigError(f"episode_len must be >= 2, got {episode_len}")
    state = envs.init_world(spec, seed)
    states = np.empty((episode_len, spec.k, spec.d))
    gt_mode = np.empty((episode_len - 1, spec.k), dtype=np.int32)
    gt_ctx = np.empty((episode_len - 1, spec.k), dtype=np.int32)
    states[0] = state.z
    for t in range(episode_len - 1):
        state, labels = envs.step(state, spec)
        states[t + 1] = state.z
        gt_mode[t] = labels.mode
        gt_ctx[t] = labels.ctx
    return Episode(spec.env_id, states, gt_mode, gt_ctx)


def generate_dataset(specs, episodes_per_env, episode_len, seed, out_dir):
    """Roll episodes for every spec and persist them, one file per env."""
    if episodes_per_env < 1:
        raise ConfigError(f"episodes_per_env must be >= 1, got {episodes_per_env}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    episode_index = 0
    for spec in specs:
        eps = []
        for _ in range(episodes_per_env):
            eps.append(rollout_episode(spec, episode_len, seed ^ episode_index))
            episode_index += 1
        path = out_dir / f"{spec.env_id}.cmtd"
        write_episode_file(path, eps)
        entries.append((spec.env_id, episodes_per_env, str(path)))
    manifest = DatasetManifest(
        dataset_id=out_dir.name,
        seed=seed,
        episode_len=episode_len,
        generator_version=GENERATOR_VERSION,
        entries=entries,
    )
    write_manifest(manifest, out_dir / "manifest.txt")
    return manifest


def write_episode_file(path, episodes):
    with open(path, "wb") as fh:
        fh.write(EPISODE_MAGIC)
        fh.write(struct.pack("<II", EPISODE_VERSION, len(episodes)))
        for ep in episodes:
            ep.validate()
            env_bytes = ep.env_id.encode("utf-8")
            fh.write(struct.pack("<I", len(env_bytes)))
            fh.write(env_bytes)
            fh.write(struct.pack("<III", ep.K, ep.T, ep.d))
            fh.write(np.ascontiguousarray(ep.states, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(ep.gt_mode, dtype="<i4").tobytes())
            fh.write(np.ascontiguousarray(ep.gt_ctx, dtype="<i4").tobytes())


def load_episodes(path):
    """Load and validate every episode in a file; errors name the culprit."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"no such dataset file: {path}")
    blob = path.read_bytes()
    if blob[:4] != EPISODE_MAGIC:
        raise DatasetError(f"bad magic bytes in dataset file: {path}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != EPISODE_VERSION:
        raise DatasetError(f"unsupported dataset version {version}: {path}")
    pos = 12
    episodes = []
    for idx in range(count):
        try:
            (name_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            env_id = blob[pos : pos + name_len].decode("utf-8")
            pos += name_len
            k, t, d = struct.unpack_from("<III", blob, pos)
            pos += 12
            n_state = t * k * d
            n_label = (t - 1) * k
            end = pos + 8 * n_state + 2 * 4 * n_label
            if end > len(blob):
                raise DatasetError("truncated episode block")
            states = (
                np.frombuffer(blob, dtype="<f8", count=n_state, offset=pos)
                .reshape(t, k, d)
                .astype(np.float64)
            )
            pos += 8 * n_state
            gt_mode = (
                np.frombuffer(blob, dtype="<i4", count=n_label, offset=pos)
                .reshape(t - 1, k)
                .astype(np.int32)
            )
            pos += 4 * n_label
            gt_ctx = (
                np.frombuffer(blob, dtype="<i4", count=n_label, offset=pos)
                .reshape(t - 1, k)
                .astype(np.int32)
            )
            pos += 4 * n_label
            ep = Episode(env_id, states, gt_mode, gt_ctx)
            ep.validate()
            episodes.append(ep)
        except (DatasetError, struct.error, UnicodeDecodeError) as exc:
            raise DatasetError(f"episode {idx} of {path}: {exc}") from None
    if pos != len(blob):
        raise DatasetError(f"{len(blob) - pos} trailing bytes after episode {count - 1}: {path}")
    return episodes


def write_manifest(manifest, path):
    with open(path, "w") as fh:
        fh.write(f"dataset_id = {manifest.dataset_id}\n")
        fh.write(f"seed = {manifest.seed}\n")
        fh.write(f"episode_len = {manifest.episode_len}\n")
        fh.write(f"generator_version = {manifest.generator_version}\n")
        for env_id, count, file_path in manifest.entries:
            fh.write(f"env = {env_id} {count} {file_path}\n")


def load_manifest(path):
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"no such manifest: {path}")
    fields = {}
    entries = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(" = ")
        if key == "env":
            env_id, count, file_path = value.split(maxsplit=2)
            entries.append((env_id, int(count), file_path))
        else:
            fields[key] = value
    try:
        return DatasetManifest(
            dataset_id=fields["dataset_id"],
            seed=int(fields["seed"]),
            episode_len=int(fields["episode_len"]),
            generator_version=int(fields["generator_version"]),
            entries=entries,
        )
    except KeyError as exc:
        raise DatasetError(f"manifest {path} is missing field {exc}") from None


def load_dataset(manifest_path):
    """All episodes referenced by a manifest, in manifest order."""
    manifest = load_manifest(manifest_path)
    base = Path(manifest_path).parent
    episodes = []
    for env_id, count, file_path in manifest.entries:
        fp = Path(file_path)
        if not fp.is_absolute():
            fp = base / fp.name
        eps = load_episodes(fp)
        if len(eps) != count:
            raise DatasetError(
                f"manifest promises {count} episodes for {env_id}, file has {len(eps)}"
            )
        episodes.extend(eps)
    return manifest, episodes


def split_holdout(episodes, frac=0.05):
    """Deterministic per-environment split: last ceil(frac*n) episodes held out."""
    by_env = {}
    for ep in episodes:
        by_env.setdefault(ep.env_id, []).append(ep)
    train, held = [], []
    for env_id in by_env:
        eps = by_env[env_id]
        n_held = int(np.ceil(frac * len(eps))) if frac > 0 else 0
        cut = len(eps) - n_held
        train.extend(eps[:cut])
        held.extend(eps[cut:])
    return train, held


@dataclass
class WindowBatch:
    """B consecutive-state windows with aligned ground-truth labels."""

    states: np.ndarray  # (B, T_h + 1, K, d)
    gt_mode: np.ndarray  # (B, T_h, K)
    gt_ctx: np.ndarray  # (B, T_h, K)
    sources: list  # (episode index, start index)

    @property
    def B(self):
        return self.states.shape[0]

    @property
    def horizon(self):
        return self.states.shape[1] - 1


def sample_windows(episodes, horizon, batch, rng):
    """Sample `batch` windows uniformly over all (episode, start) pairs."""
    if not episodes:
        raise SamplingError("cannot sample windows from an empty episode list")
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    k, d = episodes[0].K, episodes[0].d
    counts = []
    for ep in episodes:
        if ep.K != k or ep.d != d:
            raise SamplingError("all episodes in one batch pool must share K and d")
        if ep.T < horizon + 1:
            raise SamplingError(
                f"episode of length {ep.T} is too short for horizon {horizon}"
            )
        counts.append(ep.T - horizon)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    total = int(offsets[-1])
    flat = rng.integers(0, total, size=batch)
    states = np.empty((batch, horizon + 1, k, d))
    gt_mode = np.empty((batch, horizon, k), dtype=np.int32)
    gt_ctx = np.empty((batch, horizon, k), dtype=np.int32)
    sources = []
    for b, f in enumerate(flat):
        ep_idx = int(np.searchsorted(offsets, f, side="right") - 1)
        start = int(f - offsets[ep_idx])
        ep = episodes[ep_idx]
        states[b] = ep.states[start : start + horizon + 1]
        gt_mode[b] = ep.gt_mode[start : start + horizon]
        gt_ctx[b] = ep.gt_ctx[start : start + horizon]
        sources.append((ep_idx, start))
    return WindowBatch(states, gt_mode, gt_ctx, sources)


def validate_episode_labels(episode, spec):
    """Re-run rule resolution on every stored transition; True if all match."""
    for t in range(episode.T - 1):
        state = envs.WorldState(episode.states[t], t)
        for i in range(episode.K):
            mode, ctx = envs.resolve_rule(i, state, spec)
            if int(mode) != episode.gt_mode[t, i] or ctx != episode.gt_ctx[t, i]:
                return False
    return True
