"""Deterministic synthetic speech-command corpus for tests and demos.

Each keyword gets a stable harmonic signature (fundamental plus a few
partials at keyword-specific ratios); speakers shift the pitch and
brightness; every utterance adds phase, amplitude, jitter and noise on
top. The result is a corpus that is learnable but not trivially
separable, laid out exactly like the real dataset:
``<root>/<keyword>/<speaker>_nohash_<n>.wav`` of 16-bit mono PCM at
16 kHz. A slice of the clips is shorter than one second, as in the real
corpus.

Generation is a pure function of (keywords, files_per_class, seed,
difficulty knobs); regenerating yields byte-identical files.
"""

from __future__ import annotations

import hashlib
import wave
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000


def _keyword_rng(keyword: str, seed: int) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{keyword}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _class_signature(keyword: str, seed: int) -> dict:
    rng = _keyword_rng(keyword, seed)
    f0 = float(np.exp(rng.uniform(np.log(120.0), np.log(1400.0))))
    ratios = np.sort(rng.uniform(1.6, 4.2, size=2))
    amps = rng.uniform(0.3, 1.0, size=3)
    return {"f0": f0, "ratios": ratios, "amps": amps / amps.sum()}


def synth_utterance(
    keyword: str,
    speaker_index: int,
    utt_index: int,
    seed: int = 0,
    noise: float = 0.25,
    jitter: float = 0.06,
) -> tuple[str, np.ndarray]:
    """One synthetic utterance; returns (speaker_id, int16 samples)."""
    sig = _class_signature(keyword, seed)
    spk_rng = _keyword_rng(f"{keyword}/spk{speaker_index}", seed)
    speaker_id = spk_rng.bytes(4).hex()
    pitch_shift = spk_rng.uniform(1.0 - jitter, 1.0 + jitter)
    brightness = spk_rng.uniform(0.6, 1.4)

    rng = _keyword_rng(f"{keyword}/spk{speaker_index}/utt{utt_index}", seed)
    n = SAMPLE_RATE if rng.random() > 0.12 else int(rng.integers(13000, SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE

    wobble = 1.0 + jitter * 0.5 * np.sin(2 * np.pi * rng.uniform(1.5, 4.0) * t + rng.uniform(0, 2 * np.pi))
    f0 = sig["f0"] * pitch_shift * rng.uniform(1.0 - jitter / 2, 1.0 + jitter / 2)
    freqs = [f0, f0 * sig["ratios"][0], f0 * sig["ratios"][1]]
    amps = sig["amps"] * np.array([1.0, brightness, brightness**2])

    x = np.zeros(n)
    for f, a in zip(freqs, amps):
        f = min(f, SAMPLE_RATE / 2 * 0.9)
        phase = rng.uniform(0, 2 * np.pi)
        x += a * np.sin(2 * np.pi * f * wobble * t + phase)

    # attack / sustain / decay envelope, randomly placed
    onset = rng.uniform(0.02, 0.15)
    release = rng.uniform(0.6, 0.95)
    env = np.clip((t / (onset * n / SAMPLE_RATE)), 0, 1) * np.clip((1 - t * SAMPLE_RATE / n) / (1 - release), 0, 1)
    x *= np.minimum(env, 1.0)

    rms = np.sqrt(np.mean(x**2)) or 1.0
    x += rng.standard_normal(n) * noise * rms
    x *= rng.uniform(0.1, 0.5) / max(np.max(np.abs(x)), 1e-9)
    return speaker_id, (x * 32767.0).astype("<i2")


def write_wav(path: Path, samples_i16: np.ndarray, sample_rate: int = SAMPLE_RATE):
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(samples_i16.astype("<i2").tobytes())


def make_corpus(
    root: str | Path,
    keywords,
    files_per_class: int,
    seed: int = 0,
    noise: float = 0.25,
    jitter: float = 0.06,
    speakers_per_class: int | None = None,
) -> int:
    """Generate a corpus tree under ``root``; returns the file count."""
    root = Path(root)
    n_speakers = speakers_per_class or max(3, files_per_class // 5)
    count = 0
    for kw in keywords:
        kw_dir = root / kw
        kw_dir.mkdir(parents=True, exist_ok=True)
        per_speaker: dict[str, int] = {}
        for i in range(files_per_class):
            spk_index = i % n_speakers
            speaker_id, samples = synth_utterance(kw, spk_index, i, seed=seed, noise=noise, jitter=jitter)
            k = per_speaker.get(speaker_id, 0)
            per_speaker[speaker_id] = k + 1
            write_wav(kw_dir / f"{speaker_id}_nohash_{k}.wav", samples)
            count += 1
    return count
