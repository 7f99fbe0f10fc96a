"""Noise augmentation pipeline: six signal-domain and five feature-domain
techniques, each gated by an independent Bernoulli draw.

Default application probabilities: overlay 0.50, everything else 0.10.
Parameter ranges are not prescribed anywhere authoritative, so they live in
AugmentConfig and in the shipped defaults JSON where experiments can override
them.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.signal import lfilter

from .audio_io import AudioClip, load_wav, resample
from .features import Spectrogram, StftParams, spectrogram

log = logging.getLogger("medspeech.augment")

# Row order of the technique table; signal-domain ops run before the
# spectrogram is computed, feature-domain ops after, each set in this order.
TECHNIQUES = (
    "overlay",
    "warp",
    "reverb",
    "frequency_mask",
    "resample",
    "time_mask",
    "codec",
    "dropout",
    "volume",
    "pitch",
    "tempo",
)
SIGNAL_TECHNIQUES = ("overlay", "reverb", "resample", "codec", "dropout", "volume")
FEATURE_TECHNIQUES = ("warp", "frequency_mask", "time_mask", "pitch", "tempo")


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x)))) if len(x) else 0.0


class NoiseBank:
    """Immutable collection of mono 16 kHz overlay sources."""

    def __init__(self, clips: Mapping[str, AudioClip] | None = None):
        self._clips: dict[str, AudioClip] = {}
        for label, clip in (clips or {}).items():
            self.add(label, clip)

    def add(self, label: str, clip: AudioClip) -> None:
        if clip.sample_rate != 16000:
            raise ValueError(f"noise clip {label!r} is not 16 kHz")
        self._clips[label] = clip

    @classmethod
    def from_dir(cls, path) -> "NoiseBank":
        bank = cls()
        for wav in sorted(Path(path).glob("*.wav")):
            bank.add(wav.stem, load_wav(wav))
        return bank

    def __len__(self) -> int:
        return len(self._clips)

    @property
    def labels(self) -> tuple:
        return tuple(sorted(self._clips))

    def get(self, label: str) -> AudioClip:
        return self._clips[label]


# ---------------------------------------------------------------------------
# signal domain


def overlay(clip: AudioClip, noise: AudioClip, snr_db: float) -> AudioClip:
    """Mix a noise source under the clip at the requested SNR
    (20*log10(rms_clip / rms_noise_scaled) == snr_db)."""
    rms_c = _rms(clip.samples)
    if rms_c == 0.0:
        raise ValueError("clip is silent, SNR undefined")
    if len(noise) == 0 or _rms(noise.samples) == 0.0:
        raise ValueError("noise is silent, SNR undefined")
    reps = -(-len(clip) // len(noise))  # ceil
    looped = np.tile(noise.samples, reps)[: len(clip)]
    rms_n = _rms(looped)
    if rms_n == 0.0:
        raise ValueError("noise is silent over the mixed span, SNR undefined")
    gain = rms_c / (rms_n * 10.0 ** (snr_db / 20.0))
    mixed = np.clip(clip.samples + gain * looped, -1.0, 1.0)
    return AudioClip(mixed, clip.sample_rate)


_COMB_DELAYS_S = (0.0297, 0.0371, 0.0411, 0.0437)
_ALLPASS_DELAYS_S = (0.0050, 0.0017)
_ALLPASS_GAIN = 0.7


def _feedback_comb(x: np.ndarray, delay: int, g: float) -> np.ndarray:
    # H(z) = z^-D / (1 - g z^-D)
    b = np.zeros(delay + 1)
    b[delay] = 1.0
    a = np.zeros(delay + 1)
    a[0] = 1.0
    a[delay] = -g
    return lfilter(b, a, x)


def _allpass(x: np.ndarray, delay: int, g: float) -> np.ndarray:
    # H(z) = (-g + z^-D) / (1 - g z^-D)
    b = np.zeros(delay + 1)
    b[0] = -g
    b[delay] = 1.0
    a = np.zeros(delay + 1)
    a[0] = 1.0
    a[delay] = -g
    return lfilter(b, a, x)


def reverb(clip: AudioClip, rt60_s: float) -> AudioClip:
    """Simplified Schroeder reverberator: 4 parallel feedback combs into 2
    series all-passes, mixed 50/50 with the dry signal."""
    if rt60_s < 0:
        raise ValueError("rt60 must be non-negative")
    sr = clip.sample_rate
    x = clip.samples
    wet = np.zeros_like(x)
    for d_s in _COMB_DELAYS_S:
        delay = int(round(d_s * sr))
        g = 0.0 if rt60_s == 0 else 10.0 ** (-3.0 * d_s / rt60_s)
        wet += _feedback_comb(x, delay, g)
    for d_s in _ALLPASS_DELAYS_S:
        wet = _allpass(wet, int(round(d_s * sr)), _ALLPASS_GAIN)
    out = np.clip(0.5 * x + 0.5 * wet[: len(x)], -1.0, 1.0)
    return AudioClip(out, sr)


def resample_cycle(clip: AudioClip, intermediate_rate: int) -> AudioClip:
    """Resample to another rate and back (codec-free rate distortion)."""
    if intermediate_rate < 4000:
        raise ValueError("intermediate_rate must be >= 4000 Hz")
    down = resample(clip, intermediate_rate)
    return resample(down, clip.sample_rate)


_MU = 255.0


def codec_sim(clip: AudioClip) -> AudioClip:
    """Lossy-codec stand-in: mu-law companding quantized to 8 bits and back."""
    x = np.clip(clip.samples, -1.0, 1.0)
    y = np.sign(x) * np.log1p(_MU * np.abs(x)) / np.log1p(_MU)
    q = np.round(y * 127.0) / 127.0
    back = np.sign(q) * ((1.0 + _MU) ** np.abs(q) - 1.0) / _MU
    return AudioClip(np.clip(back, -1.0, 1.0), clip.sample_rate)


def level_volume(clip: AudioClip, target_dbfs: float) -> AudioClip:
    """Uniform gain to the target RMS level (dBFS re full scale 1.0)."""
    rms = _rms(clip.samples)
    if rms == 0.0:
        log.warning("level_volume: silent input, gain undefined; leaving as-is")
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    gain = 10.0 ** (target_dbfs / 20.0) / rms
    return AudioClip(np.clip(clip.samples * gain, -1.0, 1.0), clip.sample_rate)


def segment_dropout(
    clip: AudioClip,
    n_segments: int,
    seg_len_ms_range: tuple[float, float] = (10.0, 50.0),
    rng: np.random.Generator | None = None,
) -> AudioClip:
    """Zero out n random intervals; intervals may overlap."""
    if n_segments < 0:
        raise ValueError("n_segments must be >= 0")
    rng = rng or np.random.default_rng()
    out = clip.samples.copy()
    n = len(out)
    lo_ms, hi_ms = seg_len_ms_range
    for _ in range(n_segments):
        length = int(round(rng.uniform(lo_ms, hi_ms) * clip.sample_rate / 1000.0))
        length = min(max(length, 1), n) if n else 0
        if length == 0:
            continue
        start = int(rng.integers(0, n - length + 1))
        out[start : start + length] = 0.0
    return AudioClip(out, clip.sample_rate)


# ---------------------------------------------------------------------------
# feature domain


def axis_mask(
    spec: Spectrogram,
    axis: str,
    max_width: int,
    n_masks: int,
    rng: np.random.Generator | None = None,
) -> Spectrogram:
    """SpecAugment-style masking: n random intervals along the time or
    frequency axis set to zero."""
    if axis not in ("frequency", "time"):
        raise ValueError(f"axis must be 'frequency' or 'time', got {axis!r}")
    if max_width < 0 or n_masks < 0:
        raise ValueError("max_width and n_masks must be >= 0")
    rng = rng or np.random.default_rng()
    mags = spec.mags.copy()
    extent = spec.frames if axis == "time" else spec.bins
    if max_width > extent:
        log.warning("axis_mask: max_width %d exceeds %s extent %d, clamping",
                    max_width, axis, extent)
        max_width = extent
    for _ in range(n_masks):
        if extent == 0:
            break
        width = int(rng.integers(0, max_width + 1))
        start = int(rng.integers(0, extent - width + 1))
        if axis == "time":
            mags[start : start + width, :] = 0.0
        else:
            mags[:, start : start + width] = 0.0
    return Spectrogram(mags, spec.params)


def _linear_resample_rows(mags: np.ndarray, new_len: int) -> np.ndarray:
    """Resample along axis 0 to new_len rows by linear interpolation."""
    old_len = mags.shape[0]
    if new_len == old_len:
        return mags.copy()
    # position of output row i in source coordinates: i / factor
    factor = new_len / old_len
    pos = np.arange(new_len) / factor
    lo = np.clip(np.floor(pos).astype(np.int64), 0, old_len - 1)
    hi = np.clip(lo + 1, 0, old_len - 1)
    frac = (pos - lo)[:, None]
    return mags[lo] * (1.0 - frac) + mags[hi] * frac


def axis_scale(spec: Spectrogram, axis: str, factor: float) -> Spectrogram:
    """Stretch or squeeze one axis by linear interpolation (pitch shift on the
    frequency axis, tempo change on the time axis)."""
    if axis not in ("frequency", "time"):
        raise ValueError(f"axis must be 'frequency' or 'time', got {axis!r}")
    if not 0.5 <= factor <= 2.0:
        raise ValueError(f"scale factor must be within [0.5, 2.0], got {factor}")
    mags = spec.mags
    if axis == "frequency":
        mags = mags.T
    old_extent = mags.shape[0]
    new_extent = int(round(old_extent * factor))
    if old_extent == 0 or new_extent == 0:
        out = np.zeros((new_extent, mags.shape[1]))
    else:
        out = _linear_resample_rows(mags, new_extent)
    if axis == "frequency":
        out = out.T
    return Spectrogram(out, spec.params)


def warp(
    spec: Spectrogram,
    max_shift_frames: int,
    rng: np.random.Generator | None = None,
) -> Spectrogram:
    """SpecAugment time warp: one control frame t0 is displaced by up to
    max_shift_frames and the two sides are linearly re-timed."""
    w_max = max_shift_frames
    if w_max < 0:
        raise ValueError("max_shift_frames must be >= 0")
    if w_max == 0:
        return Spectrogram(spec.mags.copy(), spec.params)
    frames = spec.frames
    if frames <= 2 * w_max:
        raise ValueError(f"need more than {2 * w_max} frames to warp, got {frames}")
    rng = rng or np.random.default_rng()
    t0 = int(rng.integers(w_max, frames - w_max))
    shift = int(rng.integers(-w_max, w_max + 1))
    t1 = t0 + shift
    last = frames - 1
    pos = np.empty(frames)
    if t1 > 0:
        left = np.arange(t1 + 1)
        pos[: t1 + 1] = left * (t0 / t1)
    else:
        pos[0] = 0.0
        t1 = max(t1, 0)
    if t1 < last:
        right = np.arange(t1 + 1, frames)
        pos[t1 + 1 :] = t0 + (right - t1) * ((last - t0) / (last - t1))
    lo = np.clip(np.floor(pos).astype(np.int64), 0, last)
    hi = np.clip(lo + 1, 0, last)
    frac = (pos - lo)[:, None]
    out = spec.mags[lo] * (1.0 - frac) + spec.mags[hi] * frac
    return Spectrogram(out, spec.params)


# ---------------------------------------------------------------------------
# configuration and the seeded pipeline


@dataclass(frozen=True)
class TechniqueSettings:
    enabled: bool = True
    probability: float = 0.1
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability must be in [0, 1]: {self.probability}")
        for key, value in self.params.items():
            if isinstance(value, (list, tuple)) and len(value) == 2:
                lo, hi = value
                if lo > hi:
                    raise ValueError(f"range {key} is not ordered: {value}")


_DEFAULT_PARAMS = {
    "overlay": {"snr_db": (5.0, 25.0)},
    "warp": {"max_shift_frames": 4},
    "reverb": {"rt60_s": (0.2, 0.8)},
    "frequency_mask": {"max_width": 16, "n_masks": 2},
    "resample": {"intermediate_rate": (8000, 16000)},
    "time_mask": {"max_width": 10, "n_masks": 2},
    "codec": {},
    "dropout": {"n_segments": (1, 3), "segment_ms": (10.0, 50.0)},
    "volume": {"target_dbfs": (-30.0, -10.0)},
    "pitch": {"factor": (0.9, 1.1)},
    "tempo": {"factor": (0.9, 1.1)},
}


@dataclass(frozen=True)
class AugmentConfig:
    techniques: dict = field(default_factory=dict)
    pipeline_seed: int = 0

    def __post_init__(self):
        merged = {}
        for name in TECHNIQUES:
            settings = self.techniques.get(name)
            if settings is None:
                settings = TechniqueSettings(
                    probability=0.5 if name == "overlay" else 0.1,
                    params=dict(_DEFAULT_PARAMS[name]),
                )
            elif not isinstance(settings, TechniqueSettings):
                raise TypeError(f"technique {name}: expected TechniqueSettings")
            merged[name] = settings
        unknown = set(self.techniques) - set(TECHNIQUES)
        if unknown:
            raise ValueError(f"unknown augmentation techniques: {sorted(unknown)}")
        object.__setattr__(self, "techniques", merged)

    def settings(self, name: str) -> TechniqueSettings:
        return self.techniques[name]

    def param(self, name: str, key: str):
        params = dict(_DEFAULT_PARAMS[name], **self.techniques[name].params)
        return params[key]

    def to_json(self) -> str:
        doc = {
            name: {
                "enabled": s.enabled,
                "probability": s.probability,
                **{k: list(v) if isinstance(v, tuple) else v
                   for k, v in s.params.items()},
            }
            for name, s in self.techniques.items()
        }
        doc["pipeline_seed"] = self.pipeline_seed
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "AugmentConfig":
        doc = json.loads(text)
        seed = doc.pop("pipeline_seed", 0)
        techniques = {}
        for name, body in doc.items():
            if name not in TECHNIQUES:
                raise ValueError(f"unknown augmentation technique: {name}")
            body = dict(body)
            enabled = body.pop("enabled", True)
            probability = body.pop("probability")
            params = {
                k: tuple(v) if isinstance(v, list) else v for k, v in body.items()
            }
            techniques[name] = TechniqueSettings(enabled, probability, params)
        return cls(techniques, seed)

    @classmethod
    def from_file(cls, path) -> "AugmentConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def default_config_json() -> str:
    """The defaults JSON shipped with the package."""
    return resources.files("medspeech").joinpath("data/augment_defaults.json").read_text(
        encoding="utf-8"
    )


@dataclass(frozen=True)
class AugmentResult:
    clip: AudioClip
    spec: Spectrogram
    applied: tuple


def apply_pipeline(
    clip: AudioClip,
    config: AugmentConfig,
    noise_bank: NoiseBank | None = None,
    seed: int = 0,
) -> AugmentResult:
    """Run the full augmentation pipeline, fully determined by
    (config.pipeline_seed, seed).

    One Bernoulli draw per technique in table row order decides what is
    applied; signal-domain techniques run on the waveform, then the
    spectrogram is computed and the feature-domain techniques run on it.

    seed may be an int or a sequence of ints (e.g. (run_seed, utterance_index)).
    """
    seed_parts = list(seed) if isinstance(seed, (tuple, list)) else [int(seed)]
    rng = np.random.default_rng(
        np.random.SeedSequence(
            [int(config.pipeline_seed) & (2**64 - 1)]
            + [int(s) & (2**64 - 1) for s in seed_parts]
        )
    )
    decisions = {}
    for name in TECHNIQUES:
        s = config.settings(name)
        p = s.probability if s.enabled else 0.0
        decisions[name] = bool(rng.random() < p)

    applied = []
    out = clip
    for name in SIGNAL_TECHNIQUES:
        if not decisions[name]:
            continue
        if name == "overlay":
            if noise_bank is None or len(noise_bank) == 0:
                log.warning("overlay selected but the noise bank is empty; skipping")
                continue
            label = noise_bank.labels[int(rng.integers(0, len(noise_bank)))]
            lo, hi = config.param(name, "snr_db")
            out = overlay(out, noise_bank.get(label), float(rng.uniform(lo, hi)))
        elif name == "reverb":
            lo, hi = config.param(name, "rt60_s")
            out = reverb(out, float(rng.uniform(lo, hi)))
        elif name == "resample":
            lo, hi = config.param(name, "intermediate_rate")
            out = resample_cycle(out, int(rng.integers(int(lo), int(hi) + 1)))
        elif name == "codec":
            out = codec_sim(out)
        elif name == "dropout":
            n_lo, n_hi = config.param(name, "n_segments")
            n = int(rng.integers(int(n_lo), int(n_hi) + 1))
            out = segment_dropout(out, n, config.param(name, "segment_ms"), rng)
        elif name == "volume":
            lo, hi = config.param(name, "target_dbfs")
            out = level_volume(out, float(rng.uniform(lo, hi)))
        applied.append(name)

    params = (
        StftParams()
        if out.sample_rate == 16000
        else StftParams.for_rate(out.sample_rate)
    )
    spec = spectrogram(out, params)

    for name in FEATURE_TECHNIQUES:
        if not decisions[name]:
            continue
        if name == "warp":
            w_max = int(config.param(name, "max_shift_frames"))
            w_eff = min(w_max, max((spec.frames - 1) // 2, 0))
            if w_eff == 0 and w_max > 0:
                log.warning("warp selected but only %d frames; skipping", spec.frames)
                continue
            spec = warp(spec, w_eff, rng)
        elif name == "frequency_mask":
            spec = axis_mask(spec, "frequency", int(config.param(name, "max_width")),
                             int(config.param(name, "n_masks")), rng)
        elif name == "time_mask":
            spec = axis_mask(spec, "time", int(config.param(name, "max_width")),
                             int(config.param(name, "n_masks")), rng)
        elif name == "pitch":
            lo, hi = config.param(name, "factor")
            spec = axis_scale(spec, "frequency", float(rng.uniform(lo, hi)))
        elif name == "tempo":
            lo, hi = config.param(name, "factor")
            spec = axis_scale(spec, "time", float(rng.uniform(lo, hi)))
        applied.append(name)

    order = {name: i for i, name in enumerate(TECHNIQUES)}
    applied.sort(key=order.__getitem__)
    return AugmentResult(out, spec, tuple(applied))
