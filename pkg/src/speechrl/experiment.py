"""Experiment harness: configuration, supervised benchmark, comparison runs.

The configuration round-trips losslessly through a flat plain-text
format (``section.key = value`` lines, ``#`` comments); paper-default
values live in ``configs/paper.conf``. Two profiles exist: ``paper``
(full settings) and ``desk`` (binary subset, 2000 episodes, reduced
dense stack) for CPU-budget runs.

``run_compare`` executes the with/without pre-training arms back to
back. Both arms share the seed and the data splits, so their episode
draws are identical and pre-training is the only varied factor. Metrics
stream to CSV incrementally (one flush per episode): a killed run keeps
a valid prefix.
"""

from __future__ import annotations

import csv
import dataclasses
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import SplitRatios, scan_corpus, split, subset_spec
from .features import MfccConfig, extract_batch, num_frames
from .metrics import EpisodeMetrics
from .model import ArchConfig, PolicyParams, save_checkpoint
from .nn import Sgd
from .rl import RLConfig, RLRun, derive_rngs, evaluate, supervised_epoch

CSV_HEADER = ("episode", "accuracy", "reward_sum", "loss", "rolling_mean", "rolling_std", "wall_ms")

PROFILES = ("paper", "desk")
MODES = ("benchmark", "rl", "compare")


@dataclass(frozen=True)
class BenchConfig:
    lr: float = 1e-4
    batch: int = 32
    max_epochs: int = 50
    patience: int = 5
    val_split: float = 0.10


@dataclass(frozen=True)
class ExperimentConfig:
    subset: str = "binary"
    mode: str = "compare"
    profile: str = "paper"
    corpus_root: str = "speech_commands"
    out_dir: str = "out"
    dense_sizes: tuple[int, ...] = (512, 256, 64)
    rl: RLConfig = field(default_factory=RLConfig)
    mfcc: MfccConfig = field(default_factory=MfccConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.profile not in PROFILES:
            raise ValueError(f"profile must be one of {PROFILES}, got {self.profile!r}")
        subset_spec(self.subset)
        self.rl.validate()
        self.mfcc.validate()

    def arch(self) -> ArchConfig:
        sub = subset_spec(self.subset)
        return ArchConfig(
            n_mfcc=self.mfcc.n_mfcc,
            n_frames=num_frames(self.mfcc.sample_rate, self.mfcc.hop_length),
            num_classes=sub.num_classes,
            dense_sizes=self.dense_sizes,
        )


def apply_profile(cfg: ExperimentConfig, profile: str) -> ExperimentConfig:
    """Return the config with a named profile's presets applied."""
    if profile == "paper":
        return dataclasses.replace(
            cfg, profile="paper",
            dense_sizes=(512, 256, 64),
            rl=dataclasses.replace(cfg.rl, num_episodes=10000),
        )
    if profile == "desk":
        return dataclasses.replace(
            cfg, profile="desk", subset="binary",
            dense_sizes=(128, 64, 32),
            rl=dataclasses.replace(cfg.rl, num_episodes=2000),
        )
    raise ValueError(f"unknown profile {profile!r}")


# --- flat key-value config file ---------------------------------------------

def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def config_to_text(cfg: ExperimentConfig) -> str:
    lines = []
    for key in ("subset", "mode", "profile", "corpus_root", "out_dir"):
        lines.append(f"experiment.{key} = {_format_value(getattr(cfg, key))}")
    lines.append(f"model.dense_sizes = {_format_value(cfg.dense_sizes)}")
    for section, sub in (("rl", cfg.rl), ("mfcc", cfg.mfcc), ("bench", cfg.bench)):
        for f in dataclasses.fields(sub):
            lines.append(f"{section}.{f.name} = {_format_value(getattr(sub, f.name))}")
    return "\n".join(lines) + "\n"


def _parse_typed(raw: str, ftype) -> object:
    # field types are strings ('int', 'float', 'float | None', 'str')
    raw = raw.strip()
    name = ftype if isinstance(ftype, str) else getattr(ftype, "__name__", str(ftype))
    if name == "int":
        return int(raw)
    if name.startswith("float"):
        return None if raw.lower() == "none" else float(raw)
    return raw


def config_from_text(text: str) -> ExperimentConfig:
    entries: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line or "." not in line.split("=", 1)[0]:
            raise ValueError(f"config line {lineno}: expected 'section.key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        entries[key] = value

    def take(section, sub_cls):
        kwargs = {}
        for f in dataclasses.fields(sub_cls):
            key = f"{section}.{f.name}"
            if key in entries:
                kwargs[f.name] = _parse_typed(entries.pop(key), f.type)
        return sub_cls(**kwargs)

    rl = take("rl", RLConfig)
    mfcc = take("mfcc", MfccConfig)
    bench = take("bench", BenchConfig)

    top: dict[str, object] = {}
    for key in ("subset", "mode", "profile", "corpus_root", "out_dir"):
        if f"experiment.{key}" in entries:
            top[key] = entries.pop(f"experiment.{key}")
    if "model.dense_sizes" in entries:
        top["dense_sizes"] = tuple(int(x) for x in entries.pop("model.dense_sizes").split(","))
    if entries:
        raise ValueError(f"unknown config keys: {sorted(entries)}")
    return ExperimentConfig(rl=rl, mfcc=mfcc, bench=bench, **top)


def load_config(path) -> ExperimentConfig:
    return config_from_text(Path(path).read_text())


def save_config(cfg: ExperimentConfig, path):
    Path(path).write_text(config_to_text(cfg))


# --- metrics CSV -------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def write_metrics_csv(stream, path) -> list[EpisodeMetrics]:
    """Write episode rows as they arrive, flushing per row.

    Returns the rows for further aggregation. Floats carry up to six
    significant digits.
    """
    rows = []
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(CSV_HEADER) + "\n")
            fh.flush()
            for m in stream:
                fh.write(
                    ",".join(
                        _fmt(v)
                        for v in (m.episode, m.accuracy, m.reward_sum, m.loss, m.rolling_mean, m.rolling_std, m.wall_ms)
                    )
                    + "\n"
                )
                fh.flush()
                rows.append(m)
    except OSError as exc:
        raise OSError(f"cannot write metrics CSV {path}: {exc}") from exc
    return rows


def read_metrics_csv(path) -> list[EpisodeMetrics]:
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                EpisodeMetrics(
                    episode=int(rec["episode"]),
                    accuracy=float(rec["accuracy"]),
                    reward_sum=int(rec["reward_sum"]),
                    loss=float(rec["loss"]),
                    rolling_mean=float(rec["rolling_mean"]),
                    rolling_std=float(rec["rolling_std"]),
                    wall_ms=int(rec["wall_ms"]),
                )
            )
    return rows


# --- data preparation --------------------------------------------------------

@dataclass
class PreparedData:
    arch: ArchConfig
    pretrain: list[tuple]
    rl_pool: list[tuple]
    bench_train: list[tuple]
    bench_test: list[tuple]


def prepare_data(cfg: ExperimentConfig, cache_dir=None) -> PreparedData:
    """Scan, split and featurize the corpus for the configured subset."""
    cfg.validate()
    sub = subset_spec(cfg.subset)
    utts = scan_corpus(cfg.corpus_root, sub)
    assignment = split(utts, SplitRatios(), seed=cfg.rl.seed)
    if cache_dir is None:
        cache_dir = Path(cfg.out_dir) / "feature_cache"

    def feats(us):
        return [(fm.coeffs, label) for fm, label in extract_batch(us, sub, cfg.mfcc, cache_dir)]

    return PreparedData(
        arch=cfg.arch(),
        pretrain=feats(assignment.pretrain),
        rl_pool=feats(assignment.rl_pool),
        bench_train=feats(assignment.bench_train),
        bench_test=feats(assignment.bench_test),
    )


# --- supervised benchmark ----------------------------------------------------

@dataclass(frozen=True)
class BenchmarkResult:
    subset: str
    test_accuracy: float
    epochs_run: int
    best_val_accuracy: float
    checkpoint: str


def run_benchmark(cfg: ExperimentConfig, data: PreparedData | None = None, log=None) -> BenchmarkResult:
    """Train the policy architecture supervised on the 80/20 split.

    Early-stops when validation accuracy fails to improve for
    ``patience`` epochs (validation is carved from the training side);
    the best-validation weights are kept and scored on the held-out
    test split.
    """
    cfg.validate()
    if data is None:
        data = prepare_data(cfg)
    rngs = derive_rngs(cfg.rl.seed)
    params = PolicyParams.initialize(data.arch, rngs["bench_init"])
    shuffle_rng = rngs["bench_shuffle"]

    items = list(data.bench_train)
    order = shuffle_rng.permutation(len(items))
    items = [items[i] for i in order]
    n_val = max(1, int(round(cfg.bench.val_split * len(items))))
    val_items, train_items = items[:n_val], items[n_val:]

    opt = Sgd(params.trainable(), lr=cfg.bench.lr)
    best_val = -1.0
    best_params = params.clone()
    stale = 0
    epochs_run = 0
    for epoch in range(1, cfg.bench.max_epochs + 1):
        epochs_run = epoch
        train_loss, train_acc = supervised_epoch(params, train_items, opt, cfg.bench.batch, shuffle_rng)
        _, val_acc = evaluate(params, val_items)
        if log:
            log(f"benchmark epoch {epoch}: train_loss {train_loss:.4f} train_acc {train_acc:.3f} val_acc {val_acc:.3f}")
        if val_acc > best_val:
            best_val = val_acc
            best_params = params.clone()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.bench.patience:
                break

    _, test_acc = evaluate(best_params, data.bench_test)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / f"benchmark_{cfg.subset}.ckpt"
    save_checkpoint(best_params, ckpt)
    result = BenchmarkResult(
        subset=cfg.subset,
        test_accuracy=test_acc,
        epochs_run=epochs_run,
        best_val_accuracy=best_val,
        checkpoint=str(ckpt),
    )
    atomic_write_text(
        out_dir / f"benchmark_{cfg.subset}.txt",
        f"subset: {result.subset}\n"
        f"test_accuracy: {result.test_accuracy:.6g}\n"
        f"epochs_run: {result.epochs_run}\n"
        f"best_val_accuracy: {result.best_val_accuracy:.6g}\n",
    )
    return result


# --- with / without pre-training comparison ----------------------------------

@dataclass(frozen=True)
class ArmStats:
    name: str
    initial_mean: float  # mean accuracy over the first 200 episodes
    final_mean: float  # mean accuracy over the last 5 episodes
    final_rolling_mean: float
    final_rolling_std: float
    csv_path: str


@dataclass(frozen=True)
class ComparisonReport:
    subset: str
    episodes: int
    seed: int
    without: ArmStats
    with_: ArmStats

    @property
    def initial_delta(self) -> float:
        return self.with_.initial_mean - self.without.initial_mean

    @property
    def final_delta(self) -> float:
        return self.with_.final_mean - self.without.final_mean


def _arm_stats(name: str, rows: list[EpisodeMetrics], csv_path) -> ArmStats:
    initial = rows[: min(200, len(rows))]
    return ArmStats(
        name=name,
        initial_mean=float(np.mean([m.accuracy for m in initial])),
        final_mean=float(np.mean([m.accuracy for m in rows[-5:]])),
        final_rolling_mean=rows[-1].rolling_mean,
        final_rolling_std=rows[-1].rolling_std,
        csv_path=str(csv_path),
    )


def report_to_text(report: ComparisonReport) -> str:
    pct = lambda v: f"{100 * v:7.2f}"
    lines = [
        f"subset: {report.subset}   episodes: {report.episodes}   seed: {report.seed}",
        "",
        "accuracy %                mean of episodes 1-200    mean of last 5 episodes",
        f"without pre-training      {pct(report.without.initial_mean):>10}            {pct(report.without.final_mean):>10}",
        f"with pre-training         {pct(report.with_.initial_mean):>10}            {pct(report.with_.final_mean):>10}",
        f"improvement               {pct(report.initial_delta):>10}            {pct(report.final_delta):>10}",
    ]
    return "\n".join(lines) + "\n"


def run_compare(cfg: ExperimentConfig, data: PreparedData | None = None, log=None, measure_time=False) -> ComparisonReport:
    """Run the two arms on shared splits and seed; emit CSVs, report, plots."""
    cfg.validate()
    if data is None:
        data = prepare_data(cfg)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    import time as _time

    clock = _time.perf_counter if measure_time else None
    arms = {}
    for name, pretrain_set in (("without_pretrain", None), ("with_pretrain", data.pretrain)):
        if log:
            log(f"compare: running arm {name} ({cfg.rl.num_episodes} episodes)")
        run = RLRun(cfg.rl, data.arch, data.rl_pool, pretrain_set=pretrain_set, clock=clock)
        csv_path = out_dir / f"{name}.csv"
        rows = write_metrics_csv(run.episodes(), csv_path)
        save_checkpoint(run.pair.policy, out_dir / f"{name}.ckpt")
        arms[name] = _arm_stats(name, rows, csv_path)

    report = ComparisonReport(
        subset=cfg.subset,
        episodes=cfg.rl.num_episodes,
        seed=cfg.rl.seed,
        without=arms["without_pretrain"],
        with_=arms["with_pretrain"],
    )
    atomic_write_text(out_dir / "comparison.txt", report_to_text(report))

    from .svgplot import render_plot

    csvs = [arms["without_pretrain"].csv_path, arms["with_pretrain"].csv_path]
    render_plot(csvs, "accuracy", out_dir / "accuracy.svg")
    render_plot(csvs, "stddev", out_dir / "stddev.svg")
    return report


def atomic_write_text(path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)
