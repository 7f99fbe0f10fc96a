"""Magnitude spectrograms, the substrate for the feature-domain augmentations."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import AudioClip


@dataclass(frozen=True)
class StftParams:
    window_samples: int = 512
    hop_samples: int = 320
    fft_size: int = 512
    sample_rate: int = 16000

    def __post_init__(self):
        if self.window_samples > self.fft_size:
            raise ValueError("window_samples must not exceed fft_size")
        if min(self.window_samples, self.hop_samples, self.fft_size) <= 0:
            raise ValueError("window, hop and fft size must be positive")

    @classmethod
    def for_rate(cls, sample_rate: int, window_ms: float = 32.0, hop_ms: float = 20.0):
        """Default 32 ms window / 20 ms hop at any rate; fft is the next power
        of two that fits the window."""
        window = int(round(window_ms * sample_rate / 1000.0))
        hop = int(round(hop_ms * sample_rate / 1000.0))
        fft = 1
        while fft < window:
            fft *= 2
        return cls(window, hop, fft, sample_rate)


@dataclass(frozen=True)
class Spectrogram:
    """frames x bins non-negative magnitude matrix."""

    mags: np.ndarray
    params: StftParams = field(default_factory=StftParams)

    def __post_init__(self):
        object.__setattr__(self, "mags", np.asarray(self.mags, dtype=np.float64))
        if self.mags.ndim != 2:
            raise ValueError("spectrogram must be a 2-D frames x bins matrix")
        if self.mags.size and self.mags.min() < 0:
            raise ValueError("spectrogram magnitudes must be non-negative")

    @property
    def frames(self) -> int:
        return self.mags.shape[0]

    @property
    def bins(self) -> int:
        return self.mags.shape[1]


def frame_count(sample_count: int, window: int, hop: int) -> int:
    if sample_count < window:
        return 0
    return (sample_count - window) // hop + 1


def spectrogram(clip: AudioClip, params: StftParams | None = None) -> Spectrogram:
    """Hann-windowed STFT magnitude. A clip shorter than one window yields a
    0-frame spectrogram."""
    if params is None:
        params = (
            StftParams()
            if clip.sample_rate == 16000
            else StftParams.for_rate(clip.sample_rate)
        )
    if params.sample_rate != clip.sample_rate:
        raise ValueError(
            f"params are for {params.sample_rate} Hz but clip is {clip.sample_rate} Hz"
        )
    n = frame_count(len(clip), params.window_samples, params.hop_samples)
    bins = params.fft_size // 2 + 1
    if n == 0:
        return Spectrogram(np.zeros((0, bins)), params)
    window = np.hanning(params.window_samples)
    idx = (
        np.arange(n)[:, None] * params.hop_samples
        + np.arange(params.window_samples)[None, :]
    )
    frames = clip.samples[idx] * window
    mags = np.abs(np.fft.rfft(frames, n=params.fft_size, axis=1))
    return Spectrogram(mags, params)


_SPEC_MAGIC = b"SPEC"


def write_spectrogram(spec: Spectrogram, path) -> None:
    """Debug dump; same layout as the logit binary format but magic SPEC."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_SPEC_MAGIC)
        f.write(struct.pack("<III", 1, spec.frames, spec.bins))
        f.write(spec.mags.astype("<f4").tobytes())


def read_spectrogram(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _SPEC_MAGIC:
            raise ValueError(f"bad magic in {path}: {magic!r}")
        version, frames, bins = struct.unpack("<III", f.read(12))
        if version != 1:
            raise ValueError(f"unsupported SPEC version {version}")
        data = np.frombuffer(f.read(frames * bins * 4), dtype="<f4")
    if data.size != frames * bins:
        raise ValueError(f"truncated spectrogram file: {path}")
    return data.astype(np.float64).reshape(frames, bins)
