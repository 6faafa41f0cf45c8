#!/usr/bin/env python3
"""Generate the frozen DSP reference fixtures under tests/fixtures/.

This is a deliberately naive, loop-based MFCC reference kept independent
of the package implementation: reflection padding by index arithmetic,
per-frame windowing loop, per-filter triangle construction, and scipy's
rfft/dct. Run once; the resulting .npz is committed and the test suite
compares the package pipeline against it.

    python3 tools/make_dsp_fixtures.py
"""

from pathlib import Path

import numpy as np
import scipy.fft
import scipy.signal

SR = 16000
N_FFT = 2048
HOP = 512
N_MELS = 128
N_MFCC = 40
AMIN = 1e-10


def reflect_index(i: int, n: int) -> int:
    # numpy-style 'reflect' (no edge repetition), period 2n - 2
    period = 2 * n - 2
    j = i % period
    if j < 0:
        j += period
    return j if j < n else period - j


def frame_centered(x: np.ndarray) -> np.ndarray:
    assert x.ndim == 1 and len(x) >= 2
    n = len(x)
    pad = N_FFT // 2
    n_frames = 1 + n // HOP
    frames = np.empty((n_frames, N_FFT))
    for f in range(n_frames):
        start = f * HOP - pad
        for k in range(N_FFT):
            frames[f, k] = x[reflect_index(start + k, n)]
    return frames


def hz_to_mel(f: float) -> float:
    f_sp = 200.0 / 3.0
    if f < 1000.0:
        return f / f_sp
    return 15.0 + np.log(f / 1000.0) / (np.log(6.4) / 27.0)


def mel_to_hz(m: float) -> float:
    f_sp = 200.0 / 3.0
    if m < 15.0:
        return m * f_sp
    return 1000.0 * np.exp((np.log(6.4) / 27.0) * (m - 15.0))


def mel_weights() -> np.ndarray:
    n_bins = 1 + N_FFT // 2
    bin_hz = [i * (SR / 2.0) / (n_bins - 1) for i in range(n_bins)]
    edges = [mel_to_hz(hz_to_mel(0.0) + (hz_to_mel(SR / 2.0) - hz_to_mel(0.0)) * k / (N_MELS + 1))
             for k in range(N_MELS + 2)]
    w = np.zeros((N_MELS, n_bins))
    for m in range(N_MELS):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        for b, f in enumerate(bin_hz):
            if lo < f < hi or f == center:
                if f <= center:
                    w[m, b] = (f - lo) / (center - lo)
                else:
                    w[m, b] = (hi - f) / (hi - center)
        w[m] *= 2.0 / (hi - lo)  # unit-area normalization
    return w


def reference_mel(x: np.ndarray) -> np.ndarray:
    frames = frame_centered(x)
    window = scipy.signal.get_window("hann", N_FFT, fftbins=True)
    power = np.abs(scipy.fft.rfft(frames * window, axis=1)) ** 2
    return mel_weights() @ power.T


def reference_mfcc(x: np.ndarray) -> np.ndarray:
    mel = reference_mel(x)
    db = 10.0 * np.log10(np.maximum(mel, AMIN))
    return scipy.fft.dct(db, type=2, axis=0, norm="ortho")[:N_MFCC]


def main():
    out_dir = Path(__file__).resolve().parent.parent / "tests" / "fixtures"
    out_dir.mkdir(parents=True, exist_ok=True)

    t = np.arange(SR) / SR
    sine = np.sin(2 * np.pi * 440.0 * t)
    zeros = np.zeros(SR)

    mel_sine = reference_mel(sine)
    mfcc_sine = reference_mfcc(sine)
    mfcc_zero = reference_mfcc(zeros)
    assert mel_sine.shape == (N_MELS, 32) and mfcc_sine.shape == (N_MFCC, 32)

    out = out_dir / "dsp_reference.npz"
    np.savez_compressed(out, mel_sine=mel_sine, mfcc_sine=mfcc_sine, mfcc_zero=mfcc_zero)
    print(f"wrote {out}")
    print(f"  mel_sine  {mel_sine.shape}  max {mel_sine.max():.6g}")
    print(f"  mfcc_sine {mfcc_sine.shape}  c0 range [{mfcc_sine[0].min():.4f}, {mfcc_sine[0].max():.4f}]")
    print(f"  mfcc_zero c0 {mfcc_zero[0, 0]:.6f}  (expect -100 dB * sqrt(n_mels))")


if __name__ == "__main__":
    main()
