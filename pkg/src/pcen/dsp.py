"""Signal-to-energy pipeline: framing, power spectra, mel filterbank, gain.

Everything here is a pure function of its inputs. Energies are linear
(not log) filterbank power, laid out time-major as a ``(T, F)`` array.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, EmptyOutputError, ShapeError, SilentAudioError


@dataclass(frozen=True)
class AudioBuffer:
    """Mono signal; full scale is 1.0."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ShapeError(f"samples must be 1-D, got shape {samples.shape}")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain NaN or Inf")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def scaled(self, gain: float) -> "AudioBuffer":
        return AudioBuffer(self.samples * gain, self.sample_rate)


@dataclass(frozen=True)
class FrontendConfig:
    """Framing and filterbank geometry.

    ``fft_size=None`` resolves to the next power of two at or above the
    window length for the sample rate in use (512 for 25 ms at 16 kHz).
    """

    window_ms: float = 25.0
    hop_ms: float = 10.0
    fft_size: Optional[int] = None
    n_mels: int = 40
    fmin_hz: float = 125.0
    fmax_hz: float = 7500.0

    def window_length(self, sample_rate: int) -> int:
        return int(round(self.window_ms * sample_rate / 1000.0))

    def hop_length(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))

    def n_fft(self, sample_rate: int) -> int:
        if self.fft_size is not None:
            return int(self.fft_size)
        return 1 << max(0, int(self.window_length(sample_rate) - 1).bit_length())

    def validate(self, sample_rate: int) -> None:
        if not 0 < self.hop_ms <= self.window_ms:
            raise ConfigError(f"need 0 < hop_ms <= window_ms, got {self.hop_ms}, {self.window_ms}")
        win = self.window_length(sample_rate)
        if win < 1 or self.hop_length(sample_rate) < 1:
            raise ConfigError("window and hop must span at least one sample")
        if self.n_fft(sample_rate) < win:
            raise ConfigError(f"fft_size {self.n_fft(sample_rate)} shorter than window {win}")
        if self.n_mels < 1:
            raise ConfigError(f"n_mels must be >= 1, got {self.n_mels}")
        if not 0 <= self.fmin_hz < self.fmax_hz <= sample_rate / 2:
            raise ConfigError(
                f"need 0 <= fmin < fmax <= {sample_rate / 2}, got {self.fmin_hz}, {self.fmax_hz}"
            )


@dataclass
class EnergyGram:
    """Linear mel filterbank energies, shape ``(T, F)``."""

    values: np.ndarray
    config: FrontendConfig = field(default_factory=FrontendConfig)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeError(f"energy gram must be 2-D (T, F), got shape {values.shape}")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("energies must be finite and non-negative")
        self.values = values

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def frame_signal(audio: AudioBuffer, cfg: FrontendConfig) -> np.ndarray:
    """Cut ``audio`` into Hann-windowed frames, shape ``(T, win)``.

    Frame ``t`` covers samples ``[t*hop, t*hop + win)``; the signal is not
    padded, so trailing samples that do not fill a window are dropped.
    """
    cfg.validate(audio.sample_rate)
    win = cfg.window_length(audio.sample_rate)
    hop = cfg.hop_length(audio.sample_rate)
    if len(audio) < win:
        raise EmptyOutputError(
            f"signal has {len(audio)} samples, shorter than one {win}-sample window"
        )
    frames = np.lib.stride_tricks.sliding_window_view(audio.samples, win)[::hop]
    return frames * np.hanning(win)


def power_spectrum(frame: np.ndarray, fft_size: int) -> np.ndarray:
    """Squared DFT magnitude of a zero-padded frame (or stack of frames).

    Returns ``fft_size // 2 + 1`` bins along the last axis, unnormalized.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[-1] > fft_size:
        raise ShapeError(f"frame length {frame.shape[-1]} exceeds fft_size {fft_size}")
    spec = np.fft.rfft(frame, n=fft_size, axis=-1)
    return spec.real**2 + spec.imag**2


def mel_center_frequencies(cfg: FrontendConfig) -> np.ndarray:
    """Filter peak frequencies in Hz, equally spaced on the mel scale."""
    mels = np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz), cfg.n_mels + 2)
    return mel_to_hz(mels[1:-1])


def mel_filterbank_matrix(cfg: FrontendConfig, sample_rate: int) -> np.ndarray:
    """Triangular mel filters over rFFT bins, shape ``(n_mels, n_fft//2 + 1)``.

    Each triangle spans its two neighbouring centre frequencies and is
    rescaled so that its largest sampled value is exactly 1.
    """
    cfg.validate(sample_rate)
    n_fft = cfg.n_fft(sample_rate)
    edges = mel_to_hz(
        np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz), cfg.n_mels + 2)
    )
    bin_hz = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz - lower) / (center - lower)
    falling = (upper - bin_hz) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))

    peaks = weights.max(axis=1)
    empty = np.flatnonzero(peaks <= 0)
    if empty.size:
        raise ConfigError(
            f"{cfg.n_mels} mel filters too narrow for fft_size {n_fft}: "
            f"filters {empty.tolist()} cover no FFT bin"
        )
    return weights / peaks[:, None]


def filterbank_energies(audio: AudioBuffer, cfg: FrontendConfig = FrontendConfig()) -> EnergyGram:
    frames = frame_signal(audio, cfg)
    spectra = power_spectrum(frames, cfg.n_fft(audio.sample_rate))
    mel = mel_filterbank_matrix(cfg, audio.sample_rate)
    return EnergyGram(spectra @ mel.T, cfg)


def rms_dbfs(audio: AudioBuffer) -> float:
    """RMS level in dB relative to a full-scale value of 1.0."""
    rms = float(np.sqrt(np.mean(audio.samples**2)))
    if rms == 0.0:
        return float("-inf")
    return 20.0 * np.log10(rms)


def scale_to_dbfs(audio: AudioBuffer, target_dbfs: float) -> AudioBuffer:
    """Apply a constant gain so the RMS level equals ``target_dbfs``.

    No clipping is applied; samples may leave [-1, 1].
    """
    current = rms_dbfs(audio)
    if not np.isfinite(current):
        raise SilentAudioError("cannot scale a silent signal (RMS is zero)")
    return audio.scaled(10.0 ** ((target_dbfs - current) / 20.0))
