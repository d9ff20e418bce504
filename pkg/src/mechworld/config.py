"""Experiment configuration: flat key-value file with sections, strictly validated.

Unknown sections or keys are rejected outright. Custom environments can be
declared inline as [env.NAME] sections and referenced from the dataset
section alongside the built-in environment names.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .baseline import BaselineConfig
from .competition import CompetitionConfig
from .composition import CompositionConfig
from .envs import BUILTIN_ENVS, Condition, EnvSpec, InteractionMode, Rule
from .errors import ConfigError

_REQUIRED = object()


def _parse_bool(raw):
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_list(raw):
    return [item.strip() for item in raw.split(",") if item.strip()]


def _parse_int_list(raw):
    return [int(item) for item in _parse_list(raw)]


_SCHEMA = {
    "experiment": {
        "domain": (str, "particles"),
        "out_dir": (str, _REQUIRED),
        "seed": (int, 0),
    },
    "dataset": {
        "train_envs": (_parse_list, _REQUIRED),
        "adapt_env": (str, ""),
        "episodes_per_env": (int, 200),
        "episode_len": (int, 50),
        "eval_episodes_per_env": (int, 50),
        "adapt_pool_episodes": (int, 100),
        "test_episodes": (int, 100),
    },
    "competition": {
        "mechanisms": (int, 6),
        "horizon": (int, 10),
        "warm_start_steps": (int, 1000),
        "total_steps": (int, 30000),
        "batch_size": (int, 1024),
        "lr": (float, 1e-4),
        "log_interval": (int, 50),
        "checkpoint_interval": (int, 0),
        "warm_batch_size": (int, 0),  # 0 -> batch_size
        "warm_lr": (float, 0.0),  # 0 -> lr
    },
    "composition": {
        "batch_size": (int, 1024),
        "lr": (float, 1e-4),
        "max_steps": (int, 2000),
        "log_interval": (int, 50),
        "eval_interval": (int, 50),
        "patience": (int, 8),
        "holdout_frac": (float, 0.1),
        "label_horizon": (int, 0),  # 0 -> competition horizon
    },
    "baseline": {
        "edge_dim": (int, 64),
        "steps": (int, 2000),
        "batch_size": (int, 1024),
        "lr": (float, 1e-4),
        "log_interval": (int, 50),
        "eval_interval": (int, 50),
        "patience": (int, 8),
        "holdout_frac": (float, 0.1),
    },
    "evaluation": {
        "rollout_horizon": (int, 10),
        "adaptation_budgets": (_parse_int_list, [1, 2, 5, 10, 20, 50, 100, 1000]),
        "disentangle_stride": (int, 1),
        "include_untrained_control": (_parse_bool, True),
    },
}

_ENV_KEYS = {"domain", "k", "rules", "colours"}

_COLOUR_INDEX = {"red": 0, "green": 1, "blue": 2}


@dataclass
class ExperimentConfig:
    domain: str
    out_dir: Path
    seed: int
    dataset: dict
    competition: CompetitionConfig
    composition: CompositionConfig
    composition_label_horizon: int
    baseline: BaselineConfig
    baseline_edge_dim: int
    evaluation: dict
    custom_envs: dict = field(default_factory=dict)

    def env(self, env_id):
        if env_id in self.custom_envs:
            return self.custom_envs[env_id]
        if env_id in BUILTIN_ENVS:
            return BUILTIN_ENVS[env_id]
        raise ConfigError(f"unknown environment {env_id!r}")

    def train_env_specs(self):
        return [self.env(e) for e in self.dataset["train_envs"]]

    def adapt_env_spec(self):
        env_id = self.dataset["adapt_env"]
        if not env_id:
            raise ConfigError("dataset.adapt_env is not set")
        return self.env(env_id)

    @property
    def label_horizon(self):
        return self.composition_label_horizon or self.competition.horizon


def _parse_rules(raw):
    rules = []
    for part in _parse_list(raw):
        cond, _, interaction = part.partition(":")
        try:
            rules.append(
                Rule(Condition[cond.strip().upper()], InteractionMode[interaction.strip().upper()])
            )
        except KeyError as exc:
            raise ConfigError(f"unknown rule component {exc} in {part!r}") from None
    return tuple(rules)


def _parse_env_section(name, items):
    unknown = set(items) - _ENV_KEYS
    if unknown:
        raise ConfigError(f"unknown keys in [env.{name}]: {sorted(unknown)}")
    for key in ("domain", "k", "rules"):
        if key not in items:
            raise ConfigError(f"[env.{name}] is missing {key!r}")
    colours = None
    if "colours" in items:
        try:
            colours = tuple(_COLOUR_INDEX[c] for c in _parse_list(items["colours"]))
        except KeyError as exc:
            raise ConfigError(f"unknown colour {exc} in [env.{name}]") from None
    return EnvSpec(
        env_id=name,
        domain=items["domain"],
        k=int(items["k"]),
        rules=_parse_rules(items["rules"]),
        colours=colours,
    )


def parse_config_text(text, source="<config>"):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(source))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {source}: {exc}") from None

    values = {}
    custom_envs = {}
    for section in parser.sections():
        if section.startswith("env."):
            custom_envs[section[4:]] = _parse_env_section(
                section[4:], dict(parser.items(section))
            )
            continue
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}] in {source}")
        schema = _SCHEMA[section]
        out = {}
        for key, raw in parser.items(section):
            if key not in schema:
                raise ConfigError(f"unknown key {section}.{key} in {source}")
            parse = schema[key][0]
            try:
                out[key] = parse(raw)
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"bad value for {section}.{key}: {exc}") from None
        values[section] = out

    resolved = {}
    for section, schema in _SCHEMA.items():
        out = dict(values.get(section, {}))
        for key, (_, default) in schema.items():
            if key not in out:
                if default is _REQUIRED:
                    raise ConfigError(f"missing required key {section}.{key} in {source}")
                out[key] = default
        resolved[section] = out

    exp = resolved["experiment"]
    comp = resolved["competition"]
    compo = resolved["composition"]
    base = resolved["baseline"]
    config = ExperimentConfig(
        domain=exp["domain"],
        out_dir=Path(exp["out_dir"]),
        seed=exp["seed"],
        dataset=resolved["dataset"],
        competition=CompetitionConfig(
            n_mechanisms=comp["mechanisms"],
            horizon=comp["horizon"],
            warm_start_steps=comp["warm_start_steps"],
            total_steps=comp["total_steps"],
            batch_size=comp["batch_size"],
            seed=exp["seed"],
            lr=comp["lr"],
            log_interval=comp["log_interval"],
            checkpoint_interval=comp["checkpoint_interval"],
            warm_batch_size=comp["warm_batch_size"] or None,
            warm_lr=comp["warm_lr"] or None,
        ),
        composition=CompositionConfig(
            batch_size=compo["batch_size"],
            lr=compo["lr"],
            max_steps=compo["max_steps"],
            log_interval=compo["log_interval"],
            eval_interval=compo["eval_interval"],
            patience=compo["patience"],
            holdout_frac=compo["holdout_frac"],
            seed=exp["seed"],
        ),
        composition_label_horizon=compo["label_horizon"],
        baseline=BaselineConfig(
            steps=base["steps"],
            batch_size=base["batch_size"],
            lr=base["lr"],
            seed=exp["seed"],
            log_interval=base["log_interval"],
            holdout_frac=base["holdout_frac"],
            eval_interval=base["eval_interval"],
            patience=base["patience"],
        ),
        baseline_edge_dim=base["edge_dim"],
        evaluation=resolved["evaluation"],
        custom_envs=custom_envs,
    )
    config.competition.validate()
    return config


def load_config(path, overrides=()):
    """Parse a config file, applying `section.key=value` override strings."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    text = path.read_text()
    if overrides:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser.read_string(text, source=str(path))
        for item in overrides:
            target, _, value = item.partition("=")
            section, _, key = target.partition(".")
            if not (section and key and value != ""):
                raise ConfigError(f"override must look like section.key=value, got {item!r}")
            if not parser.has_section(section):
                parser.add_section(section)
            parser.set(section, key, value)
        from io import StringIO

        buf = StringIO()
        parser.write(buf)
        text = buf.getvalue()
    return parse_config_text(text, source=path)
