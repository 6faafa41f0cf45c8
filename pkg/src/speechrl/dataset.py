"""Speech Commands corpus ingestion, class subsets and deterministic splits.

The corpus is a directory tree ``<root>/<keyword>/<speaker>_nohash_<n>.wav``
of one-second 16-bit mono PCM recordings. Three class subsets are
defined: ``binary`` (left/right), ``main20`` (the main command words)
and ``all30`` (main commands followed by the sub commands). Class index
is position in the subset's keyword list and never changes between runs.

Splitting is a pure function of (filename, ratios, seed): within each
keyword the files are ordered by a salted hash of their basename and the
leading slice goes to the small partition. Rerunning always reproduces
the same assignment, with no split files to store. The pre-train/RL
split and the benchmark train/test split are independent partitions of
the full subset.
"""

from __future__ import annotations

import hashlib
import math
import wave
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

MAIN_COMMANDS = (
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
    "down", "go", "left", "no", "off", "on", "right", "stop", "up", "yes", "zero",
)
SUB_COMMANDS = ("bed", "bird", "cat", "dog", "happy", "house", "marvin", "sheila", "tree", "wow")

SUBSET_KEYWORDS = {
    "binary": ("left", "right"),
    "main20": MAIN_COMMANDS,
    "all30": MAIN_COMMANDS + SUB_COMMANDS,
}


class CorpusError(RuntimeError):
    """Corpus tree missing, malformed or too small to split."""


class UnsupportedWavError(ValueError):
    """WAV file is not 16-bit mono PCM."""


@dataclass(frozen=True)
class SubsetSpec:
    name: str
    keywords: tuple[str, ...]

    @property
    def num_classes(self) -> int:
        return len(self.keywords)

    def class_index(self, keyword: str) -> int:
        try:
            return self.keywords.index(keyword)
        except ValueError:
            raise KeyError(f"keyword {keyword!r} is not in subset {self.name!r}") from None

    def keyword_of(self, index: int) -> str:
        return self.keywords[index]


def subset_spec(name: str) -> SubsetSpec:
    if name not in SUBSET_KEYWORDS:
        raise ValueError(f"unknown subset {name!r}; choose from {sorted(SUBSET_KEYWORDS)}")
    return SubsetSpec(name=name, keywords=SUBSET_KEYWORDS[name])


@dataclass(frozen=True)
class Utterance:
    keyword: str
    speaker_id: str
    path: Path
    samples: np.ndarray | None = None
    sample_rate: int | None = None


@dataclass(frozen=True)
class SplitRatios:
    pretrain: float = 0.10
    bench_train: float = 0.80

    def validate(self):
        for name in ("pretrain", "bench_train"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"split ratio {name}={v} must be in (0, 1)")


@dataclass(frozen=True)
class SplitAssignment:
    pretrain: tuple[Utterance, ...]
    rl_pool: tuple[Utterance, ...]
    bench_train: tuple[Utterance, ...]
    bench_test: tuple[Utterance, ...]


def _speaker_of(filename: str) -> str:
    if "_nohash_" in filename:
        return filename.split("_nohash_")[0]
    return Path(filename).stem


def scan_corpus(root: str | Path, subset: SubsetSpec) -> list[Utterance]:
    """List every WAV under the subset's keyword directories, unloaded.

    Result order is lexicographic by path.
    """
    root = Path(root)
    if not root.is_dir():
        raise CorpusError(f"corpus root {root} does not exist or is not a directory")
    utts: list[Utterance] = []
    for kw in subset.keywords:
        kw_dir = root / kw
        if not kw_dir.is_dir():
            raise CorpusError(f"keyword directory missing for class {kw!r} under {root}")
        files = [p for p in kw_dir.iterdir() if p.suffix == ".wav" and p.is_file()]
        if not files:
            raise CorpusError(f"no WAV files for class {kw!r} in {kw_dir}")
        utts.extend(Utterance(keyword=kw, speaker_id=_speaker_of(p.name), path=p) for p in files)
    utts.sort(key=lambda u: str(u.path))
    return utts


def load_wav(path: str | Path) -> Utterance:
    """Read a 16-bit mono PCM WAV into a [-1, 1] float32 vector."""
    path = Path(path)
    with wave.open(str(path), "rb") as wf:
        if wf.getcomptype() != "NONE":
            raise UnsupportedWavError(f"{path}: compressed WAV (comptype={wf.getcomptype()!r}), need PCM")
        if wf.getnchannels() != 1:
            raise UnsupportedWavError(f"{path}: {wf.getnchannels()} channels, need mono")
        if wf.getsampwidth() != 2:
            raise UnsupportedWavError(f"{path}: {8 * wf.getsampwidth()}-bit samples, need 16-bit")
        rate = wf.getframerate()
        raw = wf.readframes(wf.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    return Utterance(
        keyword=path.parent.name,
        speaker_id=_speaker_of(path.name),
        path=path,
        samples=samples,
        sample_rate=rate,
    )


def load(utt: Utterance) -> Utterance:
    if utt.samples is not None:
        return utt
    loaded = load_wav(utt.path)
    return replace(utt, samples=loaded.samples, sample_rate=loaded.sample_rate)


def pad_or_trim(samples: np.ndarray, target_len: int) -> np.ndarray:
    """Zero-pad at the end or truncate to exactly ``target_len`` samples."""
    if target_len <= 0:
        raise ValueError(f"target_len must be positive, got {target_len}")
    n = len(samples)
    if n == target_len:
        return samples
    if n > target_len:
        return samples[:target_len]
    out = np.zeros(target_len, dtype=samples.dtype)
    out[:n] = samples
    return out


def _hash_key(seed: int, family: str, filename: str) -> str:
    return hashlib.sha256(f"{seed}:{family}:{filename}".encode()).hexdigest()


def _partition(group: list[Utterance], ratio: float, seed: int, family: str):
    ordered = sorted(group, key=lambda u: (_hash_key(seed, family, u.path.name), u.path.name))
    k = int(math.floor(ratio * len(ordered) + 0.5))
    return ordered[:k], ordered[k:]


def split(utterances, ratios: SplitRatios, seed: int) -> SplitAssignment:
    """Stratified deterministic split into the two partition families.

    Each keyword class is split at the requested ratio (to within one
    item, via round-half-up). Classes with fewer than two items cannot
    be stratified and are rejected.
    """
    ratios.validate()
    by_class: dict[str, list[Utterance]] = {}
    for u in utterances:
        by_class.setdefault(u.keyword, []).append(u)
    for kw, group in by_class.items():
        if len(group) < 2:
            raise CorpusError(f"class {kw!r} has {len(group)} item(s); need at least 2 to stratify")

    parts = {"pretrain": [], "rl_pool": [], "bench_train": [], "bench_test": []}
    for kw in sorted(by_class):
        group = by_class[kw]
        pre, rl = _partition(group, ratios.pretrain, seed, "pretrain")
        parts["pretrain"] += pre
        parts["rl_pool"] += rl
        btrain, btest = _partition(group, ratios.bench_train, seed, "bench")
        parts["bench_train"] += btrain
        parts["bench_test"] += btest

    def ordered(us):
        return tuple(sorted(us, key=lambda u: str(u.path)))

    return SplitAssignment(
        pretrain=ordered(parts["pretrain"]),
        rl_pool=ordered(parts["rl_pool"]),
        bench_train=ordered(parts["bench_train"]),
        bench_test=ordered(parts["bench_test"]),
    )


def write_manifest(assignment: SplitAssignment, path: str | Path, root: str | Path):
    """Plain-text manifest: one ``partition<TAB>relative_path`` line per file."""
    root = Path(root)
    lines = []
    for part in ("pretrain", "rl_pool", "bench_train", "bench_test"):
        for u in getattr(assignment, part):
            rel = u.path.relative_to(root) if u.path.is_relative_to(root) else u.path
            lines.append(f"{part}\t{rel}")
    Path(path).write_text("\n".join(lines) + "\n")
