"""Manifest bookkeeping, transcript normalization, alphabet handling and
dataset splitting."""

from __future__ import annotations

import csv
import random
import re
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

MANIFEST_COLUMNS = ("wav_filename", "wav_filesize", "transcript", "dataset_tag")

_WS_RUN = re.compile(r"\s+")


class ManifestError(Exception):
    """Structural problem in a manifest or alphabet file."""


def normalize_transcript(text: str) -> str:
    """NFC-normalize, strip all Unicode punctuation (category P*, which covers
    the Bengali danda and double danda), collapse whitespace runs, trim."""
    text = unicodedata.normalize("NFC", text)
    text = "".join(c for c in text if not unicodedata.category(c).startswith("P"))
    return _WS_RUN.sub(" ", text).strip()


@dataclass(frozen=True)
class ManifestEntry:
    wav_filename: str
    wav_filesize: int
    transcript: str
    dataset_tag: str = "standard"

    def __post_init__(self):
        if self.transcript != normalize_transcript(self.transcript):
            raise ValueError(
                f"transcript not normalized: {self.transcript!r} "
                f"(expected {normalize_transcript(self.transcript)!r})"
            )
        if self.wav_filesize < 0:
            raise ValueError("wav_filesize must be non-negative")


class Alphabet:
    """Ordered, duplicate-free characters. Position defines the label index;
    the CTC blank is implicit (index len(alphabet) in a logit matrix)."""

    def __init__(self, chars: Iterable[str]):
        chars = list(chars)
        for c in chars:
            if len(c) != 1:
                raise ValueError(f"alphabet entries must be single characters: {c!r}")
        if len(set(chars)) != len(chars):
            raise ValueError("alphabet contains duplicate characters")
        self._chars = tuple(chars)
        self._index = {c: i for i, c in enumerate(chars)}

    def __len__(self) -> int:
        return len(self._chars)

    def __iter__(self):
        return iter(self._chars)

    def __contains__(self, c: str) -> bool:
        return c in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Alphabet) and self._chars == other._chars

    @property
    def chars(self) -> tuple:
        return self._chars

    def char(self, index: int) -> str:
        return self._chars[index]

    def index(self, c: str) -> int:
        return self._index[c]


def build_alphabet(transcripts: Iterable[str]) -> Alphabet:
    """Union of all characters over the corpus, sorted by code point."""
    chars = set()
    seen_any = False
    for t in transcripts:
        seen_any = True
        chars.update(t)
    if not seen_any:
        raise ValueError("cannot build an alphabet from an empty transcript set")
    return Alphabet(sorted(chars))


def write_alphabet(alphabet: Alphabet, path) -> None:
    """alphabets.csv layout: one character per line, no header; a line that is
    a single space denotes the space character; '#' lines are comments."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("# one character per line; a single-space line is the space\n")
        for c in alphabet:
            f.write(c + "\n")


def read_alphabet(path) -> Alphabet:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such alphabet file: {path}")
    chars = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\r\n")
            if line.startswith("#") or line == "":
                continue
            if len(line) != 1:
                raise ManifestError(f"alphabet line is not a single character: {line!r}")
            chars.append(line)
    return Alphabet(chars)


def write_manifest(entries: Sequence[ManifestEntry], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for e in entries:
            w.writerow([e.wav_filename, e.wav_filesize, e.transcript, e.dataset_tag])


def read_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such manifest: {path}")
    try:
        with open(path, encoding="utf-8", newline="") as f:
            rows = list(csv.reader(f))
    except UnicodeDecodeError as e:
        raise ManifestError(f"manifest is not valid UTF-8: {path}: {e}") from e
    if not rows:
        raise ManifestError(f"empty manifest: {path}")
    header = tuple(rows[0])
    if header != MANIFEST_COLUMNS:
        bad = next(
            (f"column {i} is {got!r}, expected {want!r}"
             for i, (got, want) in enumerate(zip(header, MANIFEST_COLUMNS))
             if got != want),
            f"expected {len(MANIFEST_COLUMNS)} columns, got {len(header)}",
        )
        raise ManifestError(f"manifest header mismatch: {bad}")
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(MANIFEST_COLUMNS):
            raise ManifestError(
                f"line {lineno}: expected {len(MANIFEST_COLUMNS)} fields, got {len(row)}"
            )
        try:
            size = int(row[1])
        except ValueError as e:
            raise ManifestError(f"line {lineno}: bad wav_filesize {row[1]!r}") from e
        entries.append(ManifestEntry(row[0], size, row[2], row[3]))
    return entries


def split_manifest(
    entries: Sequence[ManifestEntry],
    ratios: tuple[float, float, float],
    seed: int,
) -> tuple[list[ManifestEntry], list[ManifestEntry], list[ManifestEntry]]:
    """Seeded shuffle, then contiguous train/dev/test partition. Sizes are
    floor allocations with the remainder going to train."""
    train_r, dev_r, test_r = ratios
    if min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be non-negative and sum to 1: {ratios}")
    n = len(entries)
    n_dev = int(n * dev_r)
    n_test = int(n * test_r)
    n_train = n - n_dev - n_test
    for r, size, name in ((train_r, n_train, "train"), (dev_r, n_dev, "dev"),
                          (test_r, n_test, "test")):
        if r > 0 and size < 1:
            raise ValueError(
                f"not enough entries ({n}) to give the {name} split at least one"
            )
    shuffled = list(entries)
    random.Random(seed).shuffle(shuffled)
    return (
        shuffled[:n_train],
        shuffled[n_train : n_train + n_dev],
        shuffled[n_train + n_dev :],
    )
