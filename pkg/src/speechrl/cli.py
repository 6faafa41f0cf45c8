"""Command-line entry point.

Subcommands: features, pretrain, benchmark, rl-train, compare, plot,
make-corpus. Exit code 0 on success; on failure a single machine-readable
JSON error line goes to stderr and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

from .dataset import CorpusError, UnsupportedWavError, subset_spec
from .experiment import (
    ExperimentConfig,
    apply_profile,
    config_to_text,
    load_config,
    prepare_data,
    report_to_text,
    run_benchmark,
    run_compare,
    write_metrics_csv,
)
from .features import FeatureConfigError
from .model import CheckpointError, PolicyParams, load_checkpoint, save_checkpoint
from .rl import RLRun, TrainingDiverged, derive_rngs, pretrain
from .synth import make_corpus

USER_ERRORS = (
    CorpusError,
    UnsupportedWavError,
    FeatureConfigError,
    CheckpointError,
    TrainingDiverged,
    ValueError,
    OSError,
)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="experiment config file (section.key = value lines)")
    p.add_argument("--corpus", help="corpus root directory (overrides config)")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--subset", choices=["binary", "main20", "all30"], help="class subset")
    p.add_argument("--episodes", type=int, help="number of training episodes")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument("--profile", choices=["desk", "paper"], help="preset bundle; applied before other flags")
    p.add_argument("--timing", action="store_true", help="record wall_ms per episode (breaks byte-level reproducibility)")


def _build_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.profile:
        cfg = apply_profile(cfg, args.profile)
    if args.subset:
        cfg = dataclasses.replace(cfg, subset=args.subset)
    if args.corpus:
        cfg = dataclasses.replace(cfg, corpus_root=args.corpus)
    if args.out:
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    rl = cfg.rl
    if args.episodes is not None:
        rl = dataclasses.replace(rl, num_episodes=args.episodes)
    if args.seed is not None:
        rl = dataclasses.replace(rl, seed=args.seed)
    cfg = dataclasses.replace(cfg, rl=rl)
    cfg.validate()
    return cfg


def _log(msg: str):
    print(msg, flush=True)


def cmd_features(args) -> int:
    cfg = _build_config(args)
    data = prepare_data(cfg)
    _log(
        f"extracted features: pretrain {len(data.pretrain)}, rl_pool {len(data.rl_pool)}, "
        f"bench_train {len(data.bench_train)}, bench_test {len(data.bench_test)} "
        f"({data.arch.n_mfcc}x{data.arch.n_frames} each)"
    )
    return 0


def cmd_pretrain(args) -> int:
    cfg = _build_config(args)
    data = prepare_data(cfg)
    rngs = derive_rngs(cfg.rl.seed)
    params = PolicyParams.initialize(data.arch, rngs["init"])
    report = pretrain(params, data.pretrain, cfg.rl, rngs["pretrain"])
    for e in report:
        _log(
            f"epoch {e.epoch}: train_loss {e.train_loss:.4f} train_acc {e.train_acc:.3f} "
            f"val_loss {e.val_loss:.4f} val_acc {e.val_acc:.3f}"
        )
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / f"pretrained_{cfg.subset}.ckpt"
    save_checkpoint(params, ckpt)
    _log(f"saved {ckpt}")
    return 0


def cmd_benchmark(args) -> int:
    cfg = _build_config(args)
    result = run_benchmark(cfg, log=_log)
    _log(f"benchmark {result.subset}: test accuracy {100 * result.test_accuracy:.2f}% "
         f"({result.epochs_run} epochs, checkpoint {result.checkpoint})")
    return 0


def cmd_rl_train(args) -> int:
    cfg = _build_config(args)
    data = prepare_data(cfg)
    init = None
    if args.pretrained:
        init = load_checkpoint(args.pretrained, expect_arch=data.arch)
    run = RLRun(
        cfg.rl,
        data.arch,
        data.rl_pool,
        init_params=init,
        clock=time.perf_counter if args.timing else None,
    )
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "rl_metrics.csv"
    rows = write_metrics_csv(run.episodes(), csv_path)
    save_checkpoint(run.pair.policy, out_dir / "rl_final.ckpt")
    last = rows[-1]
    _log(
        f"rl-train {cfg.subset}: {len(rows)} episodes, final rolling mean "
        f"{last.rolling_mean:.4f} (metrics {csv_path})"
    )
    return 0


def cmd_compare(args) -> int:
    cfg = _build_config(args)
    report = run_compare(cfg, log=_log, measure_time=args.timing)
    _log(report_to_text(report))
    _log(f"outputs in {cfg.out_dir}")
    return 0


def cmd_plot(args) -> int:
    from .svgplot import render_plot

    out = render_plot(args.csvs, args.kind, args.out_file)
    _log(f"wrote {out}")
    return 0


def cmd_make_corpus(args) -> int:
    keywords = subset_spec(args.subset).keywords
    n = make_corpus(
        args.out_dir,
        keywords,
        files_per_class=args.files_per_class,
        seed=args.seed,
        noise=args.noise,
        jitter=args.jitter,
    )
    _log(f"wrote {n} files under {args.out_dir}")
    return 0


def cmd_show_config(args) -> int:
    cfg = _build_config(args)
    sys.stdout.write(config_to_text(cfg))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="speechrl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="extract and cache MFCC features for a subset")
    _add_common(p)
    p.set_defaults(fn=cmd_features)

    p = sub.add_parser("pretrain", help="supervised warm start on the pre-train split")
    _add_common(p)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("benchmark", help="supervised 80/20 benchmark of the architecture")
    _add_common(p)
    p.set_defaults(fn=cmd_benchmark)

    p = sub.add_parser("rl-train", help="single RL training run")
    _add_common(p)
    p.add_argument("--pretrained", type=Path, help="checkpoint to initialize the policy from")
    p.set_defaults(fn=cmd_rl_train)

    p = sub.add_parser("compare", help="with vs without pre-training comparison")
    _add_common(p)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("plot", help="render an SVG curve from metrics CSVs")
    p.add_argument("csvs", nargs="+", type=Path, help="metrics CSV files, one polyline each")
    p.add_argument("--kind", choices=["accuracy", "stddev"], default="accuracy")
    p.add_argument("--out", dest="out_file", type=Path, required=True)
    p.set_defaults(fn=cmd_plot)

    p = sub.add_parser("make-corpus", help="generate a synthetic test corpus")
    p.add_argument("--subset", choices=["binary", "main20", "all30"], default="binary")
    p.add_argument("--files-per-class", type=int, default=250)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.25)
    p.add_argument("--jitter", type=float, default=0.06)
    p.add_argument("--out", dest="out_dir", required=True)
    p.set_defaults(fn=cmd_make_corpus)

    p = sub.add_parser("show-config", help="print the effective configuration")
    _add_common(p)
    p.set_defaults(fn=cmd_show_config)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except USER_ERRORS as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
