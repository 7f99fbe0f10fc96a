"""Deterministic synthetic fixtures: logit matrices from transcripts and a
desk-scale tone corpus, so the pipeline is testable end to end without any
real speech data."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import AudioClip, save_wav
from .corpus import (
    Alphabet,
    ManifestEntry,
    build_alphabet,
    normalize_transcript,
    write_alphabet,
    write_manifest,
)
from .decode import LogitMatrix


@dataclass(frozen=True)
class SynthSpec:
    transcript: str
    frames_per_char: int = 3
    blank_gap_frames: int = 1
    confidence: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.frames_per_char < 2:
            raise ValueError("frames_per_char must be >= 2")
        if self.blank_gap_frames < 1:
            raise ValueError("blank_gap_frames must be >= 1")
        if not 0.0 < self.confidence <= 1.0:
            raise ValueError("confidence must be in (0, 1]")


def synth_logits(spec: SynthSpec, alphabet: Alphabet) -> LogitMatrix:
    """Frame block per character with P(char) = confidence, blank-dominant
    gaps between equal consecutive characters, one blank frame on each end.

    The residual 1 - confidence is spread over the remaining classes, jittered
    by the seed (the jitter never touches the dominant class, so the argmax
    path always spells the transcript)."""
    for ch in spec.transcript:
        if ch not in alphabet:
            raise ValueError(f"transcript character {ch!r} not in alphabet")
    classes = len(alphabet) + 1
    blank = classes - 1
    rng = np.random.default_rng(spec.seed)

    dominant = [blank]
    prev = None
    for ch in spec.transcript:
        idx = alphabet.index(ch)
        if prev == idx:
            dominant.extend([blank] * spec.blank_gap_frames)
        dominant.extend([idx] * spec.frames_per_char)
        prev = idx
    dominant.append(blank)

    probs = np.empty((len(dominant), classes))
    residual = 1.0 - spec.confidence
    for t, target in enumerate(dominant):
        row = np.zeros(classes)
        if residual > 0.0:
            weights = 1.0 + 0.1 * rng.random(classes - 1)
            row[np.arange(classes) != target] = residual * weights / weights.sum()
        row[target] = spec.confidence
        probs[t] = row
    return LogitMatrix.from_probs(probs)


def _tone_for_char(index: int, sample_rate: int, duration_s: float) -> np.ndarray:
    freq = 220.0 * 2.0 ** (index / 12.0)
    t = np.arange(int(round(duration_s * sample_rate))) / sample_rate
    fade = np.minimum(1.0, np.minimum(t, t[::-1] if len(t) else t) * 200.0)
    return 0.3 * np.sin(2.0 * np.pi * freq * t) * fade


def synth_corpus(
    out_dir,
    n_utterances: int,
    vocab: list[str],
    seed: int,
    sample_rate: int = 22050,
    words_per_utterance: tuple[int, int] = (2, 4),
) -> Path:
    """Write a tone corpus (one tone per character, silence for spaces) with
    manifest.csv and alphabets.csv. Returns the manifest path."""
    vocab = [normalize_transcript(w) for w in vocab]
    vocab = [w for w in vocab if w]
    if not vocab:
        raise ValueError("vocab must contain at least one non-empty word")
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    transcripts = []
    for _ in range(n_utterances):
        k = int(rng.integers(words_per_utterance[0], words_per_utterance[1] + 1))
        words = [vocab[int(rng.integers(0, len(vocab)))] for _ in range(k)]
        transcripts.append(" ".join(words))

    alphabet = build_alphabet(transcripts)
    write_alphabet(alphabet, out_dir / "alphabets.csv")

    entries = []
    for n, text in enumerate(transcripts):
        pieces = []
        for ch in text:
            if ch == " ":
                pieces.append(np.zeros(int(round(0.05 * sample_rate))))
            else:
                pieces.append(_tone_for_char(alphabet.index(ch), sample_rate, 0.1))
        samples = np.concatenate(pieces) if pieces else np.zeros(1)
        rel = f"wav/utt_{n:04d}.wav"
        path = out_dir / rel
        save_wav(AudioClip(samples, sample_rate), path)
        entries.append(
            ManifestEntry(rel, path.stat().st_size, text, "synthetic")
        )
    manifest_path = out_dir / "manifest.csv"
    write_manifest(entries, manifest_path)
    return manifest_path
