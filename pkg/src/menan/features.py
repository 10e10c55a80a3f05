"""43-channel acoustic features from 16 kHz mono waveforms.

Channel map of a feature matrix (T x 43):

    0..39   log mel filterbank energies (1024-point FFT, Hann window,
            40 triangular filters spanning 0-8000 Hz, floored at 1e-10,
            natural log)
    40      log frame magnitude ln sqrt(sum s^2), floored; doubling the
            waveform amplitude shifts this channel by exactly ln 2
    41      f0 in Hz from normalized cross-correlation (0 when unvoiced)
    42      the frame's peak NCCF value in [-1, 1]

Framing is a 40 ms window every 10 ms. No per-utterance or per-speaker
statistics are removed anywhere: features are absolute.

Feature file format (stable, little-endian): magic b"SERFEAT1", u32
version (1), u32 frame count, u32 channel count, then row-major float64.
"""

from __future__ import annotations

import struct

import numpy as np

from .audio import SAMPLE_RATE, Waveform
from .errors import DataError

WIN_SAMPLES = 640   # 40 ms at 16 kHz
HOP_SAMPLES = 160   # 10 ms
N_FFT = 1024        # next power of two above the window
N_MELS = 40
FMIN_HZ = 0.0
FMAX_HZ = 8000.0
LOG_FLOOR = 1e-10
N_CHANNELS = 43

F0_MIN_HZ = 60.0
F0_MAX_HZ = 400.0
LAG_MIN = int(np.ceil(SAMPLE_RATE / F0_MAX_HZ))    # 40
LAG_MAX = int(np.floor(SAMPLE_RATE / F0_MIN_HZ))   # 266
VOICING_THRESHOLD = 0.3
# A multiple of the true period can outscore the (integer-quantized) true
# lag by up to ~0.3% on pure tones, so candidates within this relative
# cushion of the peak resolve toward the shortest lag's lobe.
TIE_CUSHION_REL = 0.005

_FEAT_MAGIC = b"SERFEAT1"
_FEAT_VERSION = 1


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def frame_count(n_samples: int) -> int:
    if n_samples < WIN_SAMPLES:
        raise DataError(
            f"waveform of {n_samples} samples is shorter than one "
            f"{WIN_SAMPLES}-sample analysis window")
    return (n_samples - WIN_SAMPLES) // HOP_SAMPLES + 1


def frame_signal(w: Waveform) -> np.ndarray:
    """Slice into (T, 640) frames on the 40 ms / 10 ms grid."""
    _check_rate(w)
    t = frame_count(w.samples.size)
    x = np.ascontiguousarray(w.samples)
    stride = x.strides[0]
    frames = np.lib.stride_tricks.as_strided(
        x, shape=(t, WIN_SAMPLES), strides=(stride * HOP_SAMPLES, stride))
    return frames.copy()


def mel_filterbank() -> np.ndarray:
    """(n_bins, 40) triangular filter weights on the mel scale."""
    mel_pts = np.linspace(hz_to_mel(FMIN_HZ), hz_to_mel(FMAX_HZ), N_MELS + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_hz = np.arange(N_FFT // 2 + 1) * (SAMPLE_RATE / N_FFT)
    weights = np.zeros((bin_hz.size, N_MELS))
    for m in range(N_MELS):
        left, center, right = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        rising = (bin_hz - left) / (center - left)
        falling = (right - bin_hz) / (right - center)
        weights[:, m] = np.maximum(0.0, np.minimum(rising, falling))
    return weights


def mel_band_centers() -> np.ndarray:
    """Center frequency in Hz of each of the 40 bands."""
    mel_pts = np.linspace(hz_to_mel(FMIN_HZ), hz_to_mel(FMAX_HZ), N_MELS + 2)
    return mel_to_hz(mel_pts[1:-1])


_HANN = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(WIN_SAMPLES) / WIN_SAMPLES))
_MEL_WEIGHTS = mel_filterbank()


def log_mel_frames(frames: np.ndarray) -> np.ndarray:
    """(T, 640) frames -> (T, 40) floored natural-log mel energies."""
    spec = np.fft.rfft(frames * _HANN, n=N_FFT, axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    mel = power @ _MEL_WEIGHTS
    return np.log(np.maximum(mel, LOG_FLOOR))


def log_mel_fbank(frame: np.ndarray) -> np.ndarray:
    """Single 640-sample frame -> 40 log mel energies."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (WIN_SAMPLES,):
        raise DataError(f"expected a {WIN_SAMPLES}-sample frame, got {frame.shape}")
    return log_mel_frames(frame[None, :])[0]


def log_energy_frames(frames: np.ndarray) -> np.ndarray:
    """ln sqrt(sum s^2) per frame, floored so silence stays finite."""
    power = np.einsum("ij,ij->i", frames, frames)
    return 0.5 * np.log(np.maximum(power, LOG_FLOOR))


def nccf_matrix(w: Waveform) -> np.ndarray:
    """(T, n_lags) NCCF values over the 60-400 Hz lag range.

    NCCF(lag) = sum(frame * shifted) / sqrt(e_frame * e_shifted), where both
    energy terms cover a full 640-sample window (the signal is zero-padded
    at the tail). Values are clipped to [-1, 1] to absorb last-ulp rounding.
    """
    _check_rate(w)
    t = frame_count(w.samples.size)
    padded = np.concatenate([w.samples, np.zeros(LAG_MAX + WIN_SAMPLES)])
    starts = np.arange(t) * HOP_SAMPLES

    ext_len = WIN_SAMPLES + LAG_MAX
    n_corr = int(2 ** np.ceil(np.log2(ext_len)))
    idx = starts[:, None] + np.arange(ext_len)[None, :]
    ext = padded[idx]
    spec_ext = np.fft.rfft(ext, n=n_corr, axis=1)
    spec_win = np.fft.rfft(ext[:, :WIN_SAMPLES], n=n_corr, axis=1)
    corr = np.fft.irfft(spec_ext * np.conj(spec_win), n=n_corr, axis=1)
    num = corr[:, LAG_MIN:LAG_MAX + 1]

    csum = np.concatenate([[0.0], np.cumsum(padded * padded)])
    energy_at = lambda pos: csum[pos + WIN_SAMPLES] - csum[pos]
    e_frame = energy_at(starts)
    lags = np.arange(LAG_MIN, LAG_MAX + 1)
    e_shift = energy_at(starts[:, None] + lags[None, :])
    return np.clip(num / np.sqrt(e_frame[:, None] * e_shift + 1e-20), -1.0, 1.0)


def select_lag(row: np.ndarray) -> tuple[float, float]:
    """Pick the period from one frame's NCCF row.

    Any lag scoring within TIE_CUSHION_REL of the peak is a candidate (an
    exact multiple of the period can nose ahead of the quantized true lag);
    the shortest candidate wins, hill-climbed to its lobe's local maximum.
    The integer lag is then refined by parabolic interpolation so tones that
    fall between integer lags resolve to sub-sample accuracy.

    Returns (refined lag in samples, peak NCCF value).
    """
    best = float(row.max())
    thr = best - TIE_CUSHION_REL * abs(best) - 1e-12
    i = int(np.argmax(row >= thr))
    while i + 1 < row.size and row[i + 1] > row[i]:
        i += 1
    while i - 1 >= 0 and row[i - 1] > row[i]:
        i -= 1
    lag = float(LAG_MIN + i)
    if 0 < i < row.size - 1:
        denom = row[i - 1] - 2.0 * row[i] + row[i + 1]
        if denom < 0:
            delta = 0.5 * (row[i - 1] - row[i + 1]) / denom
            lag += float(np.clip(delta, -0.5, 0.5))
    return lag, best


def nccf_pitch(w: Waveform) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame (f0 in Hz, peak NCCF) for lags covering 60-400 Hz.

    A frame whose peak NCCF falls below 0.3 is unvoiced: f0 is 0 and the
    peak value is still reported.
    """
    mat = nccf_matrix(w)
    f0 = np.empty(mat.shape[0])
    peak = np.empty(mat.shape[0])
    for t in range(mat.shape[0]):
        lag, best = select_lag(mat[t])
        peak[t] = best
        f0[t] = SAMPLE_RATE / lag if best >= VOICING_THRESHOLD else 0.0
    return f0, peak


def extract_features(w: Waveform) -> np.ndarray:
    """Waveform -> (T, 43) feature matrix (see module docstring)."""
    frames = frame_signal(w)
    mel = log_mel_frames(frames)
    energy = log_energy_frames(frames)
    f0, nccf = nccf_pitch(w)
    return np.column_stack([mel, energy, f0, nccf])


def _check_rate(w: Waveform) -> None:
    if w.sample_rate != SAMPLE_RATE:
        raise DataError(f"expected {SAMPLE_RATE} Hz waveform, got {w.sample_rate}")


def save_features(path, mat: np.ndarray) -> None:
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2:
        raise DataError("feature matrix must be 2-d")
    with open(path, "wb") as fh:
        fh.write(_FEAT_MAGIC)
        fh.write(struct.pack("<III", _FEAT_VERSION, mat.shape[0], mat.shape[1]))
        fh.write(np.ascontiguousarray(mat, dtype="<f8").tobytes())


def load_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(20)
        if len(head) < 20 or head[:8] != _FEAT_MAGIC:
            raise DataError(f"not a feature file: {path}")
        version, t, c = struct.unpack("<III", head[8:])
        if version != _FEAT_VERSION:
            raise DataError(f"unsupported feature file version {version}")
        data = np.frombuffer(fh.read(t * c * 8), dtype="<f8")
        if data.size != t * c:
            raise DataError(f"truncated feature file: {path}")
    return data.reshape(t, c).astype(np.float64)
