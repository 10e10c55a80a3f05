"""Waveform container, WAV file I/O, and windowed-sinc resampling."""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .errors import DataError

SAMPLE_RATE = 16000


@dataclass
class Waveform:
    """Mono audio in [-1, 1] at a known sample rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.size == 0:
            raise DataError("empty waveform")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


def load_waveform(path) -> Waveform:
    """Read a 16-bit PCM WAV; mix down to mono and resample to 16 kHz."""
    with wave.open(str(path), "rb") as fh:
        n_channels = fh.getnchannels()
        width = fh.getsampwidth()
        rate = fh.getframerate()
        n_frames = fh.getnframes()
        raw = fh.readframes(n_frames)
    if width != 2:
        raise DataError(f"{path}: only 16-bit PCM WAV is supported (got width {width})")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if n_channels > 1:
        data = data.reshape(-1, n_channels).mean(axis=1)
    if rate != SAMPLE_RATE:
        data = sinc_resample(data, rate / SAMPLE_RATE)
    return Waveform(data, SAMPLE_RATE)


def save_waveform(path, w: Waveform) -> None:
    """Write mono 16-bit PCM; float samples are clipped then rounded."""
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(pcm.tobytes())


_TAPS = 32  # kernel half-width in samples


def sinc_resample(x: np.ndarray, ratio: float, chunk: int = 65536) -> np.ndarray:
    """Evaluate x at positions n * ratio using a Hann-windowed sinc kernel.

    ratio > 1 reads the input faster (shorter output, pitch up); the kernel
    cutoff drops to 1/ratio of Nyquist in that case to avoid aliasing.
    A ratio of exactly 1.0 reproduces the input bit for bit (the sinc
    kernel is an exact delta at integer offsets).
    """
    if ratio <= 0:
        raise DataError(f"resample ratio must be positive, got {ratio}")
    n_in = x.size
    n_out = max(1, round(n_in / ratio))
    fc = 0.5 * min(1.0, 1.0 / ratio)
    pad = np.concatenate([np.zeros(_TAPS), x, np.zeros(_TAPS + 2)])
    offsets = np.arange(-_TAPS + 1, _TAPS + 1)
    out = np.empty(n_out)
    for lo in range(0, n_out, chunk):
        hi = min(lo + chunk, n_out)
        pos = np.arange(lo, hi) * ratio
        base = np.floor(pos).astype(np.int64)
        tau = pos[:, None] - (base[:, None] + offsets[None, :])
        kern = 2.0 * fc * np.sinc(2.0 * fc * tau)
        kern *= 0.5 * (1.0 + np.cos(np.pi * tau / _TAPS))
        vals = pad[base[:, None] + offsets[None, :] + _TAPS]
        out[lo:hi] = np.einsum("ij,ij->i", vals, kern)
    return out
