"""Dataset ingestion, length normalization, augmentation, folds, synthesis.

Manifest format: UTF-8 CSV with header ``id,path,speaker_id,emotion,
duration_s``, one row per original utterance; paths are relative to the
manifest's directory. Speaker ids encode their recording session as all
but the last character ("s03a" and "s03b" form session "s03"); every
session must contain exactly two speakers for fold construction.

The synthetic corpus encodes speaker identity in the harmonic base
frequency (plus a speaker-specific harmonic rolloff) and emotion in the
rate of a slow amplitude modulation. The two factors are drawn
independently, so labels are recoverable in closed form from the stored
per-utterance factors (``recover_labels``).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, Waveform, save_waveform, sinc_resample
from .errors import DataError

TARGET_DURATION_S = 14.0
TARGET_SAMPLES = int(TARGET_DURATION_S * SAMPLE_RATE)  # 224000
AUGMENT_RATIOS = (0.8, 0.9, 1.1, 1.2)

MANIFEST_FIELDS = ["id", "path", "speaker_id", "emotion", "duration_s"]
CANONICAL_EMOTIONS = ["angry", "happy", "neutral", "sad"]


@dataclass
class UtteranceRecord:
    id: str
    path: str
    speaker_id: str
    emotion: str
    duration_s: float


@dataclass
class FoldSpec:
    fold_id: int
    train_speakers: tuple[str, ...]
    val_speaker: str
    test_speaker: str


def session_of(speaker_id: str) -> str:
    if len(speaker_id) < 2:
        raise DataError(f"speaker id '{speaker_id}' too short to carry a session prefix")
    return speaker_id[:-1]


def write_manifest(path, records: list[UtteranceRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        for r in records:
            writer.writerow([r.id, r.path, r.speaker_id, r.emotion, f"{r.duration_s:.6f}"])


def read_manifest(path) -> list[UtteranceRecord]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_FIELDS:
            raise DataError(f"manifest header must be {','.join(MANIFEST_FIELDS)}")
        for row in reader:
            records.append(UtteranceRecord(
                id=row["id"], path=row["path"], speaker_id=row["speaker_id"],
                emotion=row["emotion"], duration_s=float(row["duration_s"])))
    if not records:
        raise DataError(f"empty manifest: {path}")
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate utterance ids in manifest")
    return records


def emotion_classes(records: list[UtteranceRecord]) -> list[str]:
    return sorted({r.emotion for r in records})


def speaker_classes(records: list[UtteranceRecord]) -> list[str]:
    return sorted({r.speaker_id for r in records})


def make_folds(speakers: list[str]) -> list[FoldSpec]:
    """Two folds per session: each held-out speaker takes a turn as test.

    With S sessions of two speakers this yields 2S folds, each training on
    the other 2(S-1) speakers and validating on the held-out partner.
    """
    speakers = sorted(set(speakers))
    sessions: dict[str, list[str]] = {}
    for s in speakers:
        sessions.setdefault(session_of(s), []).append(s)
    for name, members in sessions.items():
        if len(members) != 2:
            raise DataError(
                f"session '{name}' has {len(members)} speakers, expected 2")
    folds = []
    for name in sorted(sessions):
        a, b = sorted(sessions[name])
        train = tuple(s for s in speakers if s not in (a, b))
        folds.append(FoldSpec(len(folds), train, val_speaker=a, test_speaker=b))
        folds.append(FoldSpec(len(folds), train, val_speaker=b, test_speaker=a))
    return folds


def normalize_length(w: Waveform, target_s: float = TARGET_DURATION_S) -> Waveform:
    """Center-crop long utterances; cycle-repeat short ones to target_s.

    Repetition tiles the whole utterance end to end (no crossfade) and
    truncates the final copy, so output length is exact for any input.
    """
    target = int(round(target_s * w.sample_rate))
    n = w.samples.size
    if n == target:
        return Waveform(w.samples.copy(), w.sample_rate)
    if n > target:
        start = (n - target) // 2
        return Waveform(w.samples[start:start + target].copy(), w.sample_rate)
    reps = math.ceil(target / n)
    return Waveform(np.tile(w.samples, reps)[:target], w.sample_rate)


def speed_perturb(w: Waveform, ratio: float) -> Waveform:
    """Change speaking rate by resampling; pitch scales with the ratio.

    Output duration is the input duration divided by ratio.
    """
    if ratio <= 0:
        raise DataError(f"speed ratio must be positive, got {ratio}")
    return Waveform(sinc_resample(w.samples, ratio), w.sample_rate)


# --- synthetic corpus --------------------------------------------------------

@dataclass
class SynthConfig:
    n_speakers: int = 10
    n_emotions: int = 4
    n_per_cell: int = 30
    seed: int = 0
    duration_range_s: tuple[float, float] = (3.0, 8.0)
    f0_range_hz: tuple[float, float] = (100.0, 280.0)
    f0_jitter_hz: float = 4.0
    am_rate_range_hz: tuple[float, float] = (1.2, 7.0)
    am_rate_jitter: float = 0.06     # multiplicative
    am_depth: float = 0.55
    gain_range: tuple[float, float] = (0.15, 0.4)
    noise_level: float = 0.01


def speaker_f0_centers(cfg: SynthConfig) -> np.ndarray:
    lo, hi = cfg.f0_range_hz
    return np.linspace(lo, hi, cfg.n_speakers)


def emotion_am_rates(cfg: SynthConfig) -> np.ndarray:
    """Geometrically spaced modulation rates, one per emotion class."""
    lo, hi = cfg.am_rate_range_hz
    return lo * (hi / lo) ** (np.arange(cfg.n_emotions) / (cfg.n_emotions - 1))


def synth_emotion_names(n: int) -> list[str]:
    if n <= len(CANONICAL_EMOTIONS):
        return CANONICAL_EMOTIONS[:n]
    return CANONICAL_EMOTIONS + [f"emotion{j}" for j in range(len(CANONICAL_EMOTIONS), n)]


def synth_speaker_ids(n: int) -> list[str]:
    return [f"s{k // 2:02d}{'ab'[k % 2]}" for k in range(n)]


def _synth_waveform(rng, f0: float, rho: float, am_rate: float,
                    depth: float, gain: float, noise: float, n: int) -> np.ndarray:
    t = np.arange(n) / SAMPLE_RATE
    n_harm = min(10, int(7800.0 // f0))
    sig = np.zeros(n)
    for h in range(1, n_harm + 1):
        sig += math.exp(-(h - 1) / rho) * np.sin(
            2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi))
    sig *= gain / np.max(np.abs(sig))
    env = 1.0 + depth * np.sin(2 * np.pi * am_rate * t + rng.uniform(0, 2 * np.pi))
    return sig * env / (1.0 + depth) + noise * rng.standard_normal(n)


def generate_synthetic(out_dir, cfg: SynthConfig) -> list[UtteranceRecord]:
    """Write wavs/, manifest.csv and factors.csv; returns the records.

    Output is byte-identical for a fixed config (all randomness flows from
    cfg.seed). factors.csv records the realized per-utterance factors:
    ``id,speaker_id,emotion,f0_hz,am_rate_hz,gain_db_free,duration_s``.
    """
    if cfg.n_speakers < 4:
        raise DataError("need at least 4 speakers")
    if cfg.n_speakers % 2 != 0:
        raise DataError("speaker count must be even (two speakers per session)")
    if cfg.n_emotions < 2:
        raise DataError("need at least 2 emotions")
    out_dir = Path(out_dir)
    (out_dir / "wavs").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    centers = speaker_f0_centers(cfg)
    rates = emotion_am_rates(cfg)
    speakers = synth_speaker_ids(cfg.n_speakers)
    # rates[j] belongs to the j-th emotion in sorted-name order
    emotions = sorted(synth_emotion_names(cfg.n_emotions))
    records: list[UtteranceRecord] = []
    factor_rows = []
    idx = 0
    for k, spk in enumerate(speakers):
        for j, emo in enumerate(emotions):
            for _ in range(cfg.n_per_cell):
                f0 = centers[k] + rng.uniform(-cfg.f0_jitter_hz, cfg.f0_jitter_hz)
                rate = rates[j] * (
                    1.0 + rng.uniform(-cfg.am_rate_jitter, cfg.am_rate_jitter))
                rho = 1.5 + 3.5 * k / (cfg.n_speakers - 1)
                gain = rng.uniform(*cfg.gain_range)
                dur = rng.uniform(*cfg.duration_range_s)
                n = int(round(dur * SAMPLE_RATE))
                samples = _synth_waveform(rng, f0, rho, rate, cfg.am_depth,
                                          gain, cfg.noise_level, n)
                uid = f"utt{idx:04d}"
                rel = f"wavs/{uid}.wav"
                save_waveform(out_dir / rel, Waveform(samples))
                records.append(UtteranceRecord(uid, rel, spk, emo, n / SAMPLE_RATE))
                factor_rows.append([uid, spk, emo, f"{f0:.6f}", f"{rate:.6f}",
                                    f"{gain:.6f}", f"{n / SAMPLE_RATE:.6f}"])
                idx += 1
    write_manifest(out_dir / "manifest.csv", records)
    with open(out_dir / "factors.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "speaker_id", "emotion", "f0_hz", "am_rate_hz",
                         "gain", "duration_s"])
        writer.writerows(factor_rows)
    return records


def recover_labels(f0_hz: np.ndarray, am_rate_hz: np.ndarray,
                   cfg: SynthConfig) -> tuple[list[str], list[str]]:
    """Closed-form label oracle from realized factors.

    Speaker is the nearest f0 center; emotion is the nearest modulation
    rate in log space. Factor jitter is bounded below half the respective
    gaps, so recovery is exact by construction.
    """
    centers = speaker_f0_centers(cfg)
    rates = emotion_am_rates(cfg)
    speakers = synth_speaker_ids(cfg.n_speakers)
    emotions = sorted(synth_emotion_names(cfg.n_emotions))
    k_idx = np.argmin(np.abs(np.asarray(f0_hz)[:, None] - centers[None, :]), axis=1)
    e_idx = np.argmin(np.abs(np.log(np.asarray(am_rate_hz))[:, None]
                             - np.log(rates)[None, :]), axis=1)
    return [speakers[i] for i in k_idx], [emotions[i] for i in e_idx]
