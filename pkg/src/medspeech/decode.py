"""CTC decoding: greedy best-path, exact label probability via the forward
algorithm, a brute-force oracle, and LM-fused prefix beam search.

Logit matrices are T x C natural-log probabilities; class C-1 is the blank.
Language-model scores (log10 inside the model) are converted to natural log
before fusion, so every combined score lives in nats:

    log_score = acoustic_logp + alpha * lm_logp + beta * unit_count
"""

from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Alphabet
from .lm import SENT_START, NGramModel, score_token

LN10 = math.log(10.0)
NEG_INF = float("-inf")


class LogitFormatError(Exception):
    """Logit payload violates the binary format or normalization contract."""


@dataclass(frozen=True)
class LogitMatrix:
    """T x C natural-log probabilities; index C-1 is the CTC blank."""

    log_probs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.log_probs, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("logits must be a 2-D T x C matrix")
        if arr.shape[1] < 2:
            raise ValueError("logits need at least 2 classes (one label + blank)")
        object.__setattr__(self, "log_probs", arr)
        if arr.shape[0]:
            sums = np.exp(arr).sum(axis=1)
            if np.max(np.abs(sums - 1.0)) > 1e-4:
                worst = int(np.argmax(np.abs(sums - 1.0)))
                raise ValueError(
                    f"frame {worst} probabilities sum to {sums[worst]:.6f}, not 1"
                )

    @classmethod
    def from_probs(cls, probs) -> "LogitMatrix":
        probs = np.asarray(probs, dtype=np.float64)
        probs = probs / probs.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore"):
            return cls(np.log(probs))

    @property
    def frames(self) -> int:
        return self.log_probs.shape[0]

    @property
    def classes(self) -> int:
        return self.log_probs.shape[1]

    @property
    def blank(self) -> int:
        return self.log_probs.shape[1] - 1


@dataclass(frozen=True)
class Hypothesis:
    text: str
    log_score: float
    acoustic_logp: float
    lm_logp: float
    length_bonus_count: int


_CTCL_MAGIC = b"CTCL"
_CTCL_VERSION = 1


def write_logits(logits: LogitMatrix, path) -> None:
    """Binary layout: magic CTCL, u32 version, u32 T, u32 C, then T*C
    little-endian float32 natural-log probabilities, row-major."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_CTCL_MAGIC)
        f.write(struct.pack("<III", _CTCL_VERSION, logits.frames, logits.classes))
        f.write(logits.log_probs.astype("<f4").tobytes())


def read_logits(path) -> LogitMatrix:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such logit file: {path}")
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _CTCL_MAGIC:
            raise LogitFormatError(f"bad magic {magic!r} in {path}")
        header = f.read(12)
        if len(header) < 12:
            raise LogitFormatError(f"truncated header in {path}")
        version, t, c = struct.unpack("<III", header)
        if version != _CTCL_VERSION:
            raise LogitFormatError(f"unsupported CTCL version {version} in {path}")
        data = np.frombuffer(f.read(4 * t * c), dtype="<f4")
    if data.size != t * c:
        raise LogitFormatError(f"truncated payload in {path}")
    if c < 2:
        raise LogitFormatError(f"need at least 2 classes, file has {c}")
    arr = data.astype(np.float64).reshape(t, c)
    if t:
        sums = np.exp(arr).sum(axis=1)
        if np.max(np.abs(sums - 1.0)) > 1e-2:
            worst = int(np.argmax(np.abs(sums - 1.0)))
            raise LogitFormatError(
                f"frame {worst} sums to {sums[worst]:.4f}; refusing to renormalize"
            )
        arr = arr - np.log(sums)[:, None]
    return LogitMatrix(arr)


def _check_alphabet(logits: LogitMatrix, alphabet: Alphabet) -> None:
    if logits.classes != len(alphabet) + 1:
        raise ValueError(
            f"logits have {logits.classes} classes but alphabet needs "
            f"{len(alphabet) + 1} (characters + blank)"
        )


def greedy_decode(logits: LogitMatrix, alphabet: Alphabet) -> str:
    """Best path: per-frame argmax (ties to the lowest index), collapse
    repeats, drop blanks."""
    _check_alphabet(logits, alphabet)
    path = np.argmax(logits.log_probs, axis=1)
    out = []
    prev = -1
    for k in path:
        if k != prev and k != logits.blank:
            out.append(alphabet.char(int(k)))
        prev = k
    return "".join(out)


def ctc_label_logprob(logits: LogitMatrix, label: Sequence[int]) -> float:
    """Natural-log total probability of a label via the CTC forward recursion
    over the blank-interleaved extended label. Infeasible labels get -inf."""
    label = list(label)
    blank = logits.blank
    for k in label:
        if not 0 <= k < blank:
            raise ValueError(f"label index {k} out of range (blank is {blank})")
    t_max = logits.frames
    ext = [blank]
    for k in label:
        ext.extend((k, blank))
    s_len = len(ext)
    min_frames = len(label) + sum(
        1 for a, b in zip(label, label[1:]) if a == b
    )
    if t_max < min_frames or (t_max == 0 and label):
        return NEG_INF
    if t_max == 0:
        return 0.0  # empty label over zero frames
    lp = logits.log_probs
    alpha = np.full(s_len, NEG_INF)
    alpha[0] = lp[0, blank]
    if s_len > 1:
        alpha[1] = lp[0, ext[1]]
    for t in range(1, t_max):
        prev = alpha
        alpha = np.full(s_len, NEG_INF)
        for s in range(s_len):
            acc = prev[s]
            if s >= 1:
                acc = np.logaddexp(acc, prev[s - 1])
            if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                acc = np.logaddexp(acc, prev[s - 2])
            if acc != NEG_INF:
                alpha[s] = acc + lp[t, ext[s]]
    tail = alpha[s_len - 1]
    if s_len > 1:
        tail = np.logaddexp(tail, alpha[s_len - 2])
    return float(tail)


def _lm_text_score(lm: NGramModel, text: str) -> tuple[float, int]:
    """(log10 LM score, unit count) of a decoded text under the fusion
    convention: char mode scores every character, word mode scores each
    completed word plus the trailing partial word once at sequence end.
    History is primed with <s>; there is no </s> event."""
    lp = 0.0
    if lm.token_mode == "char":
        history: list[str] = [SENT_START]
        for ch in text:
            lp += score_token(lm, ch, history)
            history.append(ch)
        return lp, len(text)
    words = [w for w in text.split(" ") if w]
    history = [SENT_START]
    for w in words:
        lp += score_token(lm, w, history)
        history.append(w)
    return lp, len(words)


def _validate_lm(lm: NGramModel, alphabet: Alphabet) -> None:
    if lm.token_mode == "char":
        plain = lm.prediction_vocab - {"</s>", "<unk>"}
        bad = [t for t in plain if len(t) != 1]
        if bad:
            raise ValueError(
                f"char-mode LM has multi-character tokens (e.g. {bad[0]!r}); "
                "incompatible with per-character fusion"
            )
    elif lm.token_mode == "word":
        if " " not in alphabet:
            raise ValueError(
                "word-mode LM fusion needs the space character in the alphabet"
            )
    else:
        raise ValueError(f"unknown LM token mode {lm.token_mode!r}")


def brute_force_decode(
    logits: LogitMatrix,
    alphabet: Alphabet,
    max_label_len: int,
    lm: NGramModel | None = None,
    alpha: float = 0.0,
    beta: float = 0.0,
) -> str:
    """Exhaustive oracle: argmax of the combined score over every label string
    up to max_label_len. Ties break to the lexicographically smallest text."""
    _check_alphabet(logits, alphabet)
    n_chars = len(alphabet)
    n_candidates = sum(n_chars**k for k in range(max_label_len + 1))
    if n_candidates > 10**6:
        raise ValueError(f"{n_candidates} candidates exceed the enumeration guard")
    best_text = None
    best_score = NEG_INF
    for length in range(max_label_len + 1):
        for combo in itertools.product(range(n_chars), repeat=length):
            acoustic = ctc_label_logprob(logits, combo)
            score = acoustic
            if lm is not None and score > NEG_INF:
                text = "".join(alphabet.char(k) for k in combo)
                lm_log10, units = _lm_text_score(lm, text)
                score = acoustic + alpha * lm_log10 * LN10 + beta * units
            if score == NEG_INF:
                continue
            text = "".join(alphabet.char(k) for k in combo)
            if score > best_score or (score == best_score and
                                      (best_text is None or text < best_text)):
                best_score = score
                best_text = text
    return best_text if best_text is not None else ""


class _LmState:
    """Per-prefix fusion bookkeeping, derived only from the prefix text."""

    __slots__ = ("lm_log10", "units", "history", "partial")

    def __init__(self, lm_log10=0.0, units=0, history=(SENT_START,), partial=""):
        self.lm_log10 = lm_log10
        self.units = units
        self.history = history
        self.partial = partial


def beam_search(
    logits: LogitMatrix,
    alphabet: Alphabet,
    beam_width: int = 128,
    lm: NGramModel | None = None,
    alpha: float = 0.75,
    beta: float = 1.85,
    top_n: int | None = None,
) -> list[Hypothesis]:
    """CTC prefix beam search with optional n-gram shallow fusion.

    Tracks blank-/non-blank-ending acoustic mass per collapsed prefix; merges
    are summed with logaddexp. With a char-mode LM each extension is scored
    immediately; with a word-mode LM each word is scored at the space that
    completes it and the trailing partial word once at sequence end. Without
    an LM both alpha and beta are inert.
    """
    _check_alphabet(logits, alphabet)
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    if lm is not None:
        _validate_lm(lm, alphabet)
    else:
        alpha = 0.0
        beta = 0.0

    blank = logits.blank
    lp = logits.log_probs
    char_mode = lm is not None and lm.token_mode == "char"
    word_mode = lm is not None and lm.token_mode == "word"
    space_idx = alphabet.index(" ") if word_mode else -1
    max_order_ctx = (lm.order - 1) if lm is not None else 0

    def extend_state(state: _LmState, idx: int) -> _LmState:
        if lm is None:
            return state
        ch = alphabet.char(idx)
        if char_mode:
            lm_log10 = state.lm_log10 + score_token(lm, ch, state.history)
            history = (state.history + (ch,))[-max_order_ctx - 1 :]
            return _LmState(lm_log10, state.units + 1, history)
        if idx == space_idx:
            if state.partial:
                lm_log10 = state.lm_log10 + score_token(lm, state.partial, state.history)
                history = (state.history + (state.partial,))[-max_order_ctx - 1 :]
                return _LmState(lm_log10, state.units + 1, history, "")
            return _LmState(state.lm_log10, state.units, state.history, "")
        return _LmState(state.lm_log10, state.units, state.history,
                        state.partial + ch)

    def running_score(masses, state: _LmState) -> float:
        return np.logaddexp(masses[0], masses[1]) + alpha * state.lm_log10 * LN10 \
            + beta * state.units

    # prefix -> [blank-ending mass, non-blank-ending mass], both natural log
    beam: dict[tuple, list] = {(): [0.0, NEG_INF]}
    states: dict[tuple, _LmState] = {(): _LmState()}

    for t in range(logits.frames):
        frame = lp[t]
        cand: dict[tuple, list] = {}
        new_states: dict[tuple, _LmState] = {}

        def bucket(prefix: tuple):
            entry = cand.get(prefix)
            if entry is None:
                entry = [NEG_INF, NEG_INF]
                cand[prefix] = entry
            return entry

        for prefix, (p_b, p_nb) in beam.items():
            total = np.logaddexp(p_b, p_nb)
            state = states[prefix]
            if prefix not in new_states:
                new_states[prefix] = state
            entry = bucket(prefix)
            # stay on the same prefix: blank, or a repeat without a blank gap
            entry[0] = np.logaddexp(entry[0], total + frame[blank])
            if prefix and p_nb > NEG_INF:
                entry[1] = np.logaddexp(entry[1], p_nb + frame[prefix[-1]])
            for c in range(blank):
                base = p_b if (prefix and c == prefix[-1]) else total
                if base == NEG_INF:
                    continue
                new_prefix = prefix + (c,)
                ext = bucket(new_prefix)
                ext[1] = np.logaddexp(ext[1], base + frame[c])
                if new_prefix not in new_states:
                    new_states[new_prefix] = extend_state(state, c)

        ranked = sorted(
            cand.items(),
            key=lambda kv: (
                -running_score(kv[1], new_states[kv[0]]),
                tuple(alphabet.char(i) for i in kv[0]),
            ),
        )[:beam_width]
        beam = dict(ranked)
        states = {prefix: new_states[prefix] for prefix in beam}

    results = []
    for prefix, (p_b, p_nb) in beam.items():
        state = states[prefix]
        lm_log10, units = state.lm_log10, state.units
        if word_mode and state.partial:
            lm_log10 += score_token(lm, state.partial, state.history)
            units += 1
        acoustic = float(np.logaddexp(p_b, p_nb))
        lm_ln = lm_log10 * LN10
        text = "".join(alphabet.char(i) for i in prefix)
        results.append(
            Hypothesis(
                text=text,
                log_score=acoustic + alpha * lm_ln + beta * units,
                acoustic_logp=acoustic,
                lm_logp=lm_ln,
                length_bonus_count=units,
            )
        )
    results.sort(key=lambda h: (-h.log_score, h.text))
    if top_n is not None:
        results = results[:top_n]
    return results
