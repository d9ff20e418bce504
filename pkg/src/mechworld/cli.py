"""Command-line entry point tying datasets, training phases, and evaluation together."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import pipeline
from .config import load_config
from .errors import ConfigError, MechworldError
from .evaluation import SELECTION_MODES


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="mechworld",
        description="Modular world-model experiments: data generation, two-phase "
        "training, baseline, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, config_required=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=config_required, help="experiment config file")
        p.add_argument("--seed", type=int, help="override experiment.seed")
        p.add_argument("--out", help="override experiment.out_dir")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override any config value (repeatable)",
        )
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        return p

    add("gen-data", "generate train/eval/adapt/test datasets")
    add("train-competition", "phase 1: winner-takes-all mechanism training")
    p = add("train-composition", "phase 2: fit the pair classifier on adaptation data")
    p.add_argument("--n-episodes", type=int, help="use only the first N adaptation episodes")
    add("train-baseline", "pretrain the message-passing baseline on the training mixture")
    p = add("finetune-baseline", "finetune the baseline on adaptation data")
    p.add_argument("--n-episodes", type=int, help="use only the first N adaptation episodes")
    p = add("eval-rollout", "autoregressive rollout error on the test set")
    p.add_argument("--selection", choices=SELECTION_MODES, required=True)
    p.add_argument("--confidence-ckpt", help="explicit confidence checkpoint path")
    p.add_argument("--gnn-ckpt", help="explicit baseline checkpoint path")
    add("eval-disentangle", "mode-vs-mechanism count matrix and assignment score")
    add("eval-adaptation", "rollout error across adaptation budgets")
    p = add("export-checkpoint", "dump a binary checkpoint to lossless text", False)
    p.add_argument("--in", dest="input", required=True, help="binary checkpoint path")
    p.add_argument("--out-file", dest="output", required=True, help="text output path")
    return parser


def _load(args):
    path = Path(args.config)
    if not path.exists():
        print(f"error: no such config file: {path}", file=sys.stderr)
        raise SystemExit(2)
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"experiment.seed={args.seed}")
    if args.out is not None:
        overrides.append(f"experiment.out_dir={args.out}")
    return load_config(path, overrides)


def cli_main(argv):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "export-checkpoint":
            if args.config is not None:
                _load(args)  # validated but unused
            count = pipeline.run_export_checkpoint(args.input, args.output, force=args.force)
            print(f"exported {count} networks to {args.output}")
            return 0
        cfg = _load(args)
        if args.command == "gen-data":
            manifests = pipeline.gen_data(cfg, force=args.force)
            for tag, manifest in manifests.items():
                print(f"{tag}: {manifest.total_episodes} episodes")
        elif args.command == "train-competition":
            _, rows = pipeline.run_train_competition(cfg, force=args.force)
            print(f"trained {cfg.competition.n_mechanisms} mechanisms, "
                  f"final mean winner loss {rows[-1][2]:.6g}")
        elif args.command == "train-composition":
            _, labels, trace = pipeline.run_train_composition(
                cfg, n_episodes=args.n_episodes, force=args.force
            )
            last = trace[-1] if trace else (0, float("nan"), float("nan"))
            print(f"{len(labels)} labels, final nll {last[1]:.6g}, top1 {last[2]:.4f}")
        elif args.command == "train-baseline":
            pipeline.run_train_baseline(cfg, force=args.force)
            print("baseline pretrained")
        elif args.command == "finetune-baseline":
            pipeline.run_finetune_baseline(cfg, n_episodes=args.n_episodes, force=args.force)
            print("baseline finetuned")
        elif args.command == "eval-rollout":
            _, mean_mse = pipeline.run_eval_rollout(
                cfg,
                args.selection,
                force=args.force,
                confidence_path=args.confidence_ckpt,
                gnn_ckpt=args.gnn_ckpt,
            )
            print(f"{args.selection} mean rollout mse {mean_mse:.6g}")
        elif args.command == "eval-disentangle":
            matrix = pipeline.run_eval_disentangle(cfg, force=args.force)
            print(f"assignment score {matrix.score:.4f} over {int(matrix.counts.sum())} windows")
        elif args.command == "eval-adaptation":
            rows = pipeline.run_eval_adaptation(cfg, force=args.force)
            for row in rows:
                print(f"{row.method} n={row.n_episodes} mean_mse={row.mean_mse:.6g}")
        else:  # pragma: no cover - argparse enforces the choices
            raise ConfigError(f"unknown subcommand {args.command!r}")
        return 0
    except MechworldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)


def main():
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
