"""MFCC extraction: waveform -> 40 x F coefficient matrix.

The pipeline is centered framing with reflection padding, a periodic
Hann window, magnitude-squared spectrum, a slaney-style mel filterbank
(area-normalized triangles, linear below 1 kHz and logarithmic above),
decibel scaling floored at ``log_floor``, and an orthonormal DCT-II
along the mel axis keeping the first ``n_mfcc`` coefficients.

Frame count depends only on input length and hop: F = 1 + len // hop.

extract_batch memoizes per-utterance features on disk. Cache entries are
self-describing: a 16-byte header (magic ``MFCC``, version, n_mfcc, F as
little-endian uint32) followed by the row-major float32 payload. A
corrupt entry is recomputed with a warning, never served.
"""

from __future__ import annotations

import hashlib
import logging
import os
import tempfile
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataset import SubsetSpec, Utterance, load_wav, pad_or_trim

log = logging.getLogger(__name__)

CACHE_MAGIC = b"MFCC"
CACHE_VERSION = 1


class FeatureConfigError(ValueError):
    """MfccConfig violates one of its invariants."""


@dataclass(frozen=True)
class MfccConfig:
    n_mfcc: int = 40
    frame_length: int = 2048
    hop_length: int = 512
    n_mels: int = 128
    fmin: float = 0.0
    fmax: float | None = None  # None -> sample_rate / 2
    log_floor: float = 1e-10
    sample_rate: int = 16000

    def effective_fmax(self) -> float:
        return self.sample_rate / 2.0 if self.fmax is None else self.fmax

    def validate(self):
        if self.n_mfcc < 1 or self.n_mfcc > self.n_mels:
            raise FeatureConfigError(f"n_mfcc must be in [1, n_mels={self.n_mels}], got {self.n_mfcc}")
        if self.hop_length < 1 or self.hop_length > self.frame_length:
            raise FeatureConfigError(
                f"hop_length {self.hop_length} must be in [1, frame_length={self.frame_length}]"
            )
        if self.effective_fmax() > self.sample_rate / 2.0:
            raise FeatureConfigError(
                f"fmax {self.effective_fmax()} exceeds Nyquist {self.sample_rate / 2.0}"
            )
        if self.fmin < 0 or self.fmin >= self.effective_fmax():
            raise FeatureConfigError(f"fmin {self.fmin} must be in [0, fmax)")
        if self.log_floor <= 0:
            raise FeatureConfigError("log_floor must be positive")

    def key(self) -> str:
        parts = [f"{f.name}={getattr(self, f.name)!r}" for f in fields(self)]
        return hashlib.sha1(";".join(parts).encode()).hexdigest()


@dataclass(frozen=True)
class FeatureMatrix:
    """n_mfcc x F coefficient matrix; the per-utterance model input."""

    coeffs: np.ndarray

    @property
    def n_mfcc(self) -> int:
        return self.coeffs.shape[0]

    @property
    def n_frames(self) -> int:
        return self.coeffs.shape[1]


def num_frames(num_samples: int, hop_length: int) -> int:
    return 1 + num_samples // hop_length


def _hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _hz_to_mel(freq):
    """Slaney mel scale: linear below 1 kHz, log-spaced above."""
    freq = np.asanyarray(freq, dtype=np.float64)
    f_sp = 200.0 / 3
    mels = freq / f_sp
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    above = freq >= min_log_hz
    mels = np.where(above, min_log_mel + np.log(np.maximum(freq, min_log_hz) / min_log_hz) / logstep, mels)
    return mels


def _mel_to_hz(mels):
    mels = np.asanyarray(mels, dtype=np.float64)
    f_sp = 200.0 / 3
    freqs = mels * f_sp
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    above = mels >= min_log_mel
    freqs = np.where(above, min_log_hz * np.exp(logstep * (mels - min_log_mel)), freqs)
    return freqs


def mel_filterbank(config: MfccConfig) -> np.ndarray:
    """[n_mels, 1 + frame_length // 2] triangular weights, area-normalized."""
    n_bins = 1 + config.frame_length // 2
    fft_freqs = np.linspace(0.0, config.sample_rate / 2.0, n_bins)
    mel_pts = np.linspace(
        _hz_to_mel(config.fmin), _hz_to_mel(config.effective_fmax()), config.n_mels + 2
    )
    hz_pts = _mel_to_hz(mel_pts)

    fdiff = np.diff(hz_pts)
    ramps = hz_pts[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    # normalize each triangle to unit area so filter outputs are comparable
    enorm = 2.0 / (hz_pts[2:] - hz_pts[:-2])
    return weights * enorm[:, None]


def _frame(samples: np.ndarray, config: MfccConfig) -> np.ndarray:
    pad = config.frame_length // 2
    padded = np.pad(samples.astype(np.float64, copy=False), pad, mode="reflect")
    frames = sliding_window_view(padded, config.frame_length)[:: config.hop_length]
    return frames[: num_frames(len(samples), config.hop_length)]


def mel_spectrogram(samples: np.ndarray, config: MfccConfig) -> np.ndarray:
    """Mel-weighted power spectrogram, shape [n_mels, F]."""
    config.validate()
    samples = np.asarray(samples)
    if samples.ndim != 1 or len(samples) < 1:
        raise FeatureConfigError(f"expected a non-empty 1-D waveform, got shape {samples.shape}")
    frames = _frame(samples, config)
    windowed = frames * _hann_periodic(config.frame_length)
    spectrum = np.fft.rfft(windowed, axis=1)
    power = (spectrum.real**2 + spectrum.imag**2).T  # [bins, F]
    return mel_filterbank(config) @ power


_dct_cache: dict[tuple[int, int], np.ndarray] = {}


def _dct_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Orthonormal DCT-II rows: first n_out basis vectors of length n_in."""
    key = (n_out, n_in)
    if key not in _dct_cache:
        k = np.arange(n_out)[:, None]
        n = np.arange(n_in)[None, :]
        mat = np.cos(np.pi * (2 * n + 1) * k / (2.0 * n_in))
        mat *= np.sqrt(2.0 / n_in)
        mat[0] *= np.sqrt(0.5)
        _dct_cache[key] = mat
    return _dct_cache[key]


def mfcc(samples: np.ndarray, config: MfccConfig) -> FeatureMatrix:
    """MFCC matrix of a waveform; float32, shape [n_mfcc, F]."""
    power = mel_spectrogram(samples, config)
    log_power = 10.0 * np.log10(np.maximum(power, config.log_floor))
    coeffs = _dct_matrix(config.n_mfcc, config.n_mels) @ log_power
    return FeatureMatrix(coeffs.astype(np.float32))


def _cache_path(cache_dir: Path, wav_path: Path, config: MfccConfig) -> Path:
    digest = hashlib.sha1(wav_path.read_bytes()).hexdigest()
    return cache_dir / f"{digest[:24]}-{config.key()[:12]}.mfcc"


def _write_cache(path: Path, fm: FeatureMatrix):
    header = CACHE_MAGIC + np.array(
        [CACHE_VERSION, fm.n_mfcc, fm.n_frames], dtype="<u4"
    ).tobytes()
    payload = np.ascontiguousarray(fm.coeffs, dtype="<f4").tobytes()
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header + payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_cache(path: Path, config: MfccConfig) -> FeatureMatrix | None:
    try:
        blob = path.read_bytes()
    except OSError:
        return None
    if len(blob) < 16 or blob[:4] != CACHE_MAGIC:
        log.warning("feature cache %s is corrupt (bad header); recomputing", path)
        return None
    version, n_mfcc, n_frames = np.frombuffer(blob[4:16], dtype="<u4")
    if version != CACHE_VERSION or n_mfcc != config.n_mfcc:
        log.warning("feature cache %s does not match config; recomputing", path)
        return None
    expected = 16 + 4 * int(n_mfcc) * int(n_frames)
    if len(blob) != expected:
        log.warning("feature cache %s truncated (%d of %d bytes); recomputing", path, len(blob), expected)
        return None
    coeffs = np.frombuffer(blob[16:], dtype="<f4").reshape(int(n_mfcc), int(n_frames))
    return FeatureMatrix(coeffs.copy())


def extract_utterance(utt: Utterance, config: MfccConfig) -> FeatureMatrix:
    """Load if needed, fix to one second of audio, and extract MFCCs."""
    if utt.samples is None:
        utt = load_wav(utt.path)
    samples = pad_or_trim(utt.samples, config.sample_rate)
    return mfcc(samples, config)


def extract_batch(
    utterances,
    subset: SubsetSpec,
    config: MfccConfig,
    cache_dir: str | Path | None = None,
) -> list[tuple[FeatureMatrix, int]]:
    """Features plus class index for every utterance, memoized on disk."""
    config.validate()
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)

    out = []
    for utt in utterances:
        label = subset.class_index(utt.keyword)
        fm = None
        cache_path = None
        if cache_dir is not None:
            cache_path = _cache_path(cache_dir, utt.path, config)
            fm = _read_cache(cache_path, config)
        if fm is None:
            fm = extract_utterance(utt, config)
            if cache_path is not None:
                _write_cache(cache_path, fm)
        out.append((fm, label))
    return out
