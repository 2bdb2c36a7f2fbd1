"""Synthetic keyword corpus, loudness augmentation, and dataset manifests.

The "keyword" is two formant-like segments in a fixed order: a harmonic
complex whose spectral peak rises 700 -> 1300 Hz, a short gap, then one
falling 2200 -> 1500 Hz. Every clip carries pink background noise with
a slow level wobble. Non-keyword clips are noise alone, the first keyword
segment alone, or a single chirp outside the keyword band. All clips are
normalized to the same RMS level, so the classes have matched energy.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from ..dsp import AudioBuffer, rms_dbfs, scale_to_dbfs
from ..errors import FormatError
from ..wav import read_wav, write_wav

KEYWORD = 1
NON_KEYWORD = 0
NEGATIVE_KINDS = ("noise", "partial", "off-band")

CLIP_SECONDS = 0.8
NOMINAL_DBFS = -30.0
SNR_DB = (0.0, 12.0)
WOBBLE_DB = 6.0
WOBBLE_HZ = (0.5, 2.0)


@dataclass
class LabeledClip:
    audio: AudioBuffer
    label: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in (KEYWORD, NON_KEYWORD):
            raise ValueError(f"label must be 0 or 1, got {self.label}")

    @property
    def keyword_span(self) -> Optional[tuple]:
        """``(first, last)`` sample indices of the keyword, or None."""
        span = self.metadata.get("keyword_span")
        return None if span is None else tuple(span)


def _pink_noise(rng, n):
    spec = np.fft.rfft(rng.standard_normal(n))
    k = np.arange(spec.size, dtype=np.float64)
    k[0] = 1.0
    return np.fft.irfft(spec / np.sqrt(k), n)


def _ramped(x, sample_rate, ramp_s=0.015):
    ramp = min(int(ramp_s * sample_rate), x.size // 2)
    env = np.ones(x.size)
    rise = np.sin(np.linspace(0.0, np.pi / 2, ramp)) ** 2
    env[:ramp] = rise
    env[x.size - ramp:] = rise[::-1]
    return x * env


def formant_chirp(rng, start_hz, end_hz, seconds, f0, sample_rate, bandwidth=300.0):
    """Harmonic complex on ``f0`` with a Gaussian spectral peak sweeping linearly."""
    n = int(round(seconds * sample_rate))
    t = np.arange(n) / sample_rate
    center = start_hz + (end_hz - start_hz) * t / seconds
    x = np.zeros(n)
    top = min(5000.0, 0.45 * sample_rate)
    for h in range(1, int(top / f0) + 1):
        gain = np.exp(-0.5 * ((h * f0 - center) / bandwidth) ** 2)
        x += gain * np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi))
    return _ramped(x, sample_rate)


def _synth_clip(seed, label, index, sample_rate, seconds, snr_db, level_dbfs):
    rng = np.random.default_rng([seed, label, index])
    n = int(round(seconds * sample_rate))
    pitch = rng.uniform(0.94, 1.06)
    f0 = rng.uniform(110.0, 180.0)
    first = formant_chirp(rng, 700 * pitch, 1300 * pitch, rng.uniform(0.10, 0.13), f0, sample_rate)
    gap = np.zeros(int(rng.uniform(0.015, 0.04) * sample_rate))
    second = formant_chirp(rng, 2200 * pitch, 1500 * pitch, rng.uniform(0.10, 0.13), f0, sample_rate)

    if label == KEYWORD:
        kind = "keyword"
        event = np.concatenate([first, gap, second])
    else:
        kind = NEGATIVE_KINDS[index % len(NEGATIVE_KINDS)]
        if kind == "noise":
            event = None
        elif kind == "partial":
            event = first
        elif rng.integers(2):
            lo, hi = rng.uniform(250, 450, 2)
            event = formant_chirp(rng, lo, hi, rng.uniform(0.1, 0.25), f0, sample_rate, bandwidth=100.0)
        else:
            lo, hi = rng.uniform(4000, 6000, 2)
            event = formant_chirp(rng, lo, hi, rng.uniform(0.1, 0.25), f0, sample_rate)

    t = np.arange(n) / sample_rate
    wobble_db = rng.uniform(-WOBBLE_DB, WOBBLE_DB) * np.sin(2 * np.pi * rng.uniform(*WOBBLE_HZ) * t + rng.uniform(0, 2 * np.pi))
    noise = _pink_noise(rng, n) * 10 ** (wobble_db / 20)

    x = np.zeros(n)
    span = None
    meta = {"seed": seed, "index": index, "kind": kind, "pitch": pitch, "f0": f0}
    if event is not None:
        margin = int(0.05 * sample_rate)
        onset = int(rng.integers(margin, n - event.size - margin))
        x[onset:onset + event.size] = event
        snr = rng.uniform(*snr_db)
        noise *= np.sqrt(np.mean(event**2) / np.mean(noise**2) / 10 ** (snr / 10))
        meta["snr_db"] = snr
        if label == KEYWORD:
            span = (onset, onset + event.size - 1)
    audio = scale_to_dbfs(AudioBuffer(x + noise, sample_rate), level_dbfs)
    # Quantize to float32 so a float32 WAV round trip is lossless.
    audio = AudioBuffer(audio.samples.astype(np.float32).astype(np.float64), sample_rate)
    meta["keyword_span"] = span
    meta["dbfs"] = rms_dbfs(audio)
    return LabeledClip(audio, label, meta)


def synth_dataset(
    n_per_class: int,
    seed: int = 0,
    sample_rate: int = 16000,
    seconds: float = CLIP_SECONDS,
    snr_db=SNR_DB,
    level_dbfs: float = NOMINAL_DBFS,
) -> List[LabeledClip]:
    """``n_per_class`` keyword clips followed by ``n_per_class`` non-keyword clips.

    Each clip is generated from its own RNG keyed on ``(seed, label, index)``,
    so the corpus is reproducible and any prefix of it is stable.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if seconds < 0.5:
        raise ValueError("clips must be at least 0.5 s long")
    return [
        _synth_clip(seed, label, i, sample_rate, seconds, snr_db, level_dbfs)
        for label in (KEYWORD, NON_KEYWORD)
        for i in range(n_per_class)
    ]


def augment_loudness(clip: LabeledClip, rng_seed, lo_dbfs: float = -45.0, hi_dbfs: float = -15.0) -> LabeledClip:
    """Rescale ``clip`` to an RMS level drawn uniformly from ``[lo, hi]`` dBFS."""
    if lo_dbfs > hi_dbfs:
        raise ValueError(f"lo_dbfs {lo_dbfs} > hi_dbfs {hi_dbfs}")
    target = lo_dbfs if lo_dbfs == hi_dbfs else float(np.random.default_rng(rng_seed).uniform(lo_dbfs, hi_dbfs))
    return at_level(clip, target)


def at_level(clip: LabeledClip, dbfs: float) -> LabeledClip:
    meta = dict(clip.metadata, dbfs=float(dbfs))
    return replace(clip, audio=scale_to_dbfs(clip.audio, dbfs), metadata=meta)


MANIFEST_FIELDS = ("path", "label", "seed", "index", "kind", "dbfs", "keyword_start", "keyword_end")


def write_dataset(clips, directory, prefix="clip") -> Path:
    """Write clips as float32 WAVs plus a tab-separated ``manifest.tsv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = directory / "manifest.tsv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for n, clip in enumerate(clips):
            name = f"{prefix}{n:05d}.wav"
            write_wav(directory / name, clip.audio, "float32")
            span = clip.keyword_span or (-1, -1)
            meta = clip.metadata
            writer.writerow([
                name, clip.label, meta.get("seed", ""), meta.get("index", ""), meta.get("kind", ""),
                repr(float(meta.get("dbfs", rms_dbfs(clip.audio)))), span[0], span[1],
            ])
    return manifest


def read_manifest(path) -> List[LabeledClip]:
    path = Path(path)
    clips = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        missing = {"path", "label"} - set(reader.fieldnames or ())
        if missing:
            raise FormatError(f"{path}: manifest lacks columns {sorted(missing)}")
        for row in reader:
            audio = read_wav(path.parent / row["path"])
            start, end = int(row.get("keyword_start") or -1), int(row.get("keyword_end") or -1)
            meta = {
                "path": row["path"],
                "seed": int(row["seed"]) if row.get("seed") else None,
                "index": int(row["index"]) if row.get("index") else None,
                "kind": row.get("kind", ""),
                "dbfs": float(row["dbfs"]) if row.get("dbfs") else rms_dbfs(audio),
                "keyword_span": None if start < 0 else (start, end),
            }
            clips.append(LabeledClip(audio, int(row["label"]), meta))
    return clips
