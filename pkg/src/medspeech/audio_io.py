"""WAV loading/saving, resampling and duration statistics.

Everything downstream assumes mono float waveforms in [-1, 1]; the functions
here produce exactly that from 16-bit PCM or 32-bit IEEE-float RIFF files and
convert arbitrary rates to the pipeline's canonical 16 kHz.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class AudioIOError(Exception):
    """Base class for audio file problems."""


class MalformedWavError(AudioIOError):
    """RIFF/WAVE structure is broken (bad magic, truncated chunks, ...)."""


class UnsupportedWavError(AudioIOError):
    """Valid RIFF but an encoding we do not handle (compressed, 24-bit, >2ch)."""


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform. samples is a float64 array, nominally within [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        if self.samples.ndim != 1:
            raise ValueError("AudioClip samples must be one-dimensional (mono)")

    @property
    def duration_seconds(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class DatasetStats:
    count: int
    mean_s: float
    std_s: float
    min_s: float
    p25_s: float
    p50_s: float
    p75_s: float
    max_s: float


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise MalformedWavError(f"truncated file while reading {what}")
    return buf


def load_wav(path) -> AudioClip:
    """Load a RIFF/WAVE file as a mono AudioClip.

    Accepts PCM 16-bit and IEEE-float 32-bit, 1 or 2 channels, any rate.
    Stereo is downmixed by per-sample mean; integer PCM is scaled by 1/32768.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such audio file: {path}")
    with open(path, "rb") as f:
        riff = f.read(12)
        if len(riff) < 12 or riff[:4] != b"RIFF" or riff[8:12] != b"WAVE":
            raise MalformedWavError(f"not a RIFF/WAVE file: {path}")
        fmt = None
        data = None
        while True:
            header = f.read(8)
            if len(header) == 0:
                break
            if len(header) < 8:
                raise MalformedWavError(f"truncated chunk header in {path}")
            chunk_id, size = header[:4], struct.unpack("<I", header[4:])[0]
            if chunk_id == b"fmt ":
                if size < 16:
                    raise MalformedWavError(f"fmt chunk too small in {path}")
                fmt = struct.unpack("<HHIIHH", _read_exact(f, 16, "fmt chunk"))
                f.seek(size - 16 + (size & 1), 1)
            elif chunk_id == b"data":
                data = _read_exact(f, size, "data chunk")
                f.seek(size & 1, 1)
            else:
                f.seek(size + (size & 1), 1)
        if fmt is None:
            raise MalformedWavError(f"missing fmt chunk in {path}")
        if data is None:
            raise MalformedWavError(f"missing data chunk in {path}")

    audio_format, channels, sample_rate, _, _, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedWavError(f"{channels} channels not supported: {path}")
    if audio_format == 1 and bits == 16:
        raw = np.frombuffer(data[: len(data) - len(data) % (2 * channels)], dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif audio_format == 3 and bits == 32:
        raw = np.frombuffer(data[: len(data) - len(data) % (4 * channels)], dtype="<f4")
        samples = raw.astype(np.float64)
    else:
        raise UnsupportedWavError(
            f"unsupported encoding (format={audio_format}, bits={bits}): {path}"
        )
    if channels == 2:
        samples = samples.reshape(-1, 2).mean(axis=1)
    return AudioClip(samples, sample_rate)


def save_wav(clip: AudioClip, path) -> None:
    """Write a clip as mono 16-bit PCM. Samples are clamped to [-1, 1] and
    rounded half-away-from-zero."""
    if len(clip) == 0:
        raise ValueError("refusing to write an empty clip")
    x = np.clip(clip.samples, -1.0, 1.0) * 32768.0
    q = np.where(x >= 0, np.floor(x + 0.5), np.ceil(x - 0.5))
    pcm = np.clip(q, -32768, 32767).astype("<i2")
    data = pcm.tobytes()
    hdr = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
    hdr += b"fmt " + struct.pack(
        "<IHHIIHH", 16, 1, 1, clip.sample_rate, clip.sample_rate * 2, 2, 16
    )
    hdr += b"data" + struct.pack("<I", len(data))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(hdr + data)


# Windowed-sinc interpolation: Hann window, 32 taps per side,
# cutoff 0.45 * min(source, target).
_TAPS = 32


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited resampling. Output length = round(n * target/source)."""
    if target_rate < 4000:
        raise ValueError(f"target_rate must be >= 4000 Hz, got {target_rate}")
    src = clip.sample_rate
    if target_rate == src:
        return AudioClip(clip.samples.copy(), src)
    n_in = len(clip)
    n_out = int(round(n_in * target_rate / src))
    if n_in == 0 or n_out == 0:
        return AudioClip(np.zeros(0), target_rate)

    cutoff = 0.45 * min(src, target_rate) / src  # cycles per input sample
    step = src / target_rate
    x = clip.samples
    half = _TAPS + 1
    offsets = np.arange(-_TAPS, _TAPS + 2)
    out = np.empty(n_out)
    # chunked so the (chunk, taps) work matrix stays small
    for lo in range(0, n_out, 65536):
        hi = min(lo + 65536, n_out)
        t = np.arange(lo, hi) * step
        base = np.floor(t).astype(np.int64)
        idx = base[:, None] + offsets[None, :]
        u = idx - t[:, None]
        w = 2.0 * cutoff * np.sinc(2.0 * cutoff * u)
        w *= np.where(np.abs(u) < half, 0.5 + 0.5 * np.cos(np.pi * u / half), 0.0)
        w /= w.sum(axis=1, keepdims=True)
        valid = (idx >= 0) & (idx < n_in)
        seg = np.where(valid, x[np.clip(idx, 0, n_in - 1)], 0.0)
        out[lo:hi] = (seg * w).sum(axis=1)
    return AudioClip(out, target_rate)


def convert(path_in, path_out, target_rate: int = 16000) -> AudioClip:
    """load -> downmix -> resample -> save. Returns the converted clip."""
    try:
        clip = load_wav(path_in)
    except AudioIOError as e:
        raise type(e)(f"while converting {path_in}: {e}") from e
    clip = resample(clip, target_rate)
    save_wav(clip, path_out)
    return clip


def duration_stats(durations: Sequence[float]) -> DatasetStats:
    """Summary statistics over clip durations (seconds).

    Sample standard deviation (n-1 denominator); percentiles by linear
    interpolation between order statistics.
    """
    d = np.asarray(list(durations), dtype=np.float64)
    if d.size == 0:
        raise ValueError("duration_stats needs at least one duration")
    if np.any(d <= 0):
        raise ValueError("durations must be positive")
    std = float(np.std(d, ddof=1)) if d.size > 1 else 0.0
    p25, p50, p75 = (float(np.percentile(d, q)) for q in (25, 50, 75))
    return DatasetStats(
        count=int(d.size),
        mean_s=float(np.mean(d)),
        std_s=std,
        min_s=float(np.min(d)),
        p25_s=p25,
        p50_s=p50,
        p75_s=p75,
        max_s=float(np.max(d)),
    )


_STATS_ROWS = (
    ("Mean audio length", "mean_s"),
    ("Standard deviation of audio length", "std_s"),
    ("Shortest audio length", "min_s"),
    ("25%", "p25_s"),
    ("50%", "p50_s"),
    ("75%", "p75_s"),
    ("Longest audio length", "max_s"),
)


def render_stats(stats: DatasetStats) -> str:
    """Plain-text duration table, one row per statistic."""
    lines = [
        f"{label:<36}{getattr(stats, attr):>12.6f} seconds"
        for label, attr in _STATS_ROWS
    ]
    return "\n".join(lines) + "\n"
