"""Back-off n-gram language model: interpolated Kneser-Ney training, ARPA
serialization and log10 scoring.

Conventions (matching the usual ARPA toolchain output):
  * sentences are wrapped <s> ... </s>; <s> is context only and carries the
    conventional -99 unigram log-probability,
  * one discount per order, D_n = n1 / (n1 + 2*n2) from the count-of-counts
    of that order's adjusted counts,
  * stored probabilities are the fully interpolated ones; the stored back-off
    weight of a context h is its interpolation weight, so the standard
    back-off walk (prob if present, else backoff(h) + score(shorter))
    reproduces the interpolated model exactly,
  * unseen mass at the unigram level is spread uniformly over the prediction
    vocabulary, which includes <unk>.
"""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

SENT_START = "<s>"
SENT_END = "</s>"
UNK = "<unk>"

# a space is the word delimiter in ARPA lines, so a char-mode space token is
# serialized under an escape name
_SPACE_ESCAPE = "<sp>"

log = logging.getLogger("medspeech.lm")


class ArpaParseError(Exception):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def tokenize(text: str, token_mode: str) -> list[str]:
    if token_mode == "word":
        return [w for w in text.split(" ") if w]
    if token_mode == "char":
        return list(text)
    raise ValueError(f"token_mode must be 'word' or 'char', got {token_mode!r}")


@dataclass
class NGramModel:
    order: int
    token_mode: str
    vocab: frozenset
    probs: dict = field(repr=False)      # ngram tuple -> log10 prob
    backoffs: dict = field(repr=False)   # context tuple -> log10 weight

    @property
    def prediction_vocab(self) -> frozenset:
        return self.vocab - {SENT_START}


def _count_ngrams(sentences: Sequence[Sequence[str]], order: int):
    """Raw counts per order; sentences are wrapped in <s> ... </s>
    (no <s> for order-1 models, where it would be dead weight)."""
    raw = [Counter() for _ in range(order + 1)]  # raw[n], 1-based
    for toks in sentences:
        stream = ([SENT_START] if order > 1 else []) + list(toks) + [SENT_END]
        for n in range(1, order + 1):
            for i in range(len(stream) - n + 1):
                raw[n][tuple(stream[i : i + n])] += 1
    return raw


def _adjusted_counts(raw, order: int):
    """Kneser-Ney adjusted counts: raw at the top order and for <s>-initial
    n-grams, continuation counts (distinct left extensions) elsewhere.
    The <s> unigram is dropped entirely: it is never predicted."""
    adjusted = [Counter() for _ in range(order + 1)]
    adjusted[order] = Counter(raw[order])
    for n in range(1, order):
        continuation = Counter()
        for gram in raw[n + 1]:
            continuation[gram[1:]] += 1
        for gram, c in raw[n].items():
            if gram[0] == SENT_START:
                adjusted[n][gram] = c
            elif continuation[gram]:
                adjusted[n][gram] = continuation[gram]
    if order > 1 and (SENT_START,) in adjusted[1]:
        del adjusted[1][(SENT_START,)]
    return adjusted


def _discount(counts: Counter, order_label: int, override) -> float:
    if override is not None:
        return float(override)
    n1 = sum(1 for c in counts.values() if c == 1)
    n2 = sum(1 for c in counts.values() if c == 2)
    if n1 == 0:
        log.warning(
            "order %d: cannot estimate a discount (n1=%d, n2=%d); using 0.5",
            order_label, n1, n2,
        )
        return 0.5
    return n1 / (n1 + 2.0 * n2)


def train_lm(
    transcripts: Iterable[str],
    order: int = 3,
    token_mode: str = "word",
    discount_override=None,
) -> NGramModel:
    """Estimate an interpolated Kneser-Ney model over normalized transcripts.

    discount_override may be a single float for all orders or a sequence with
    one discount per order.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    sentences = [tokenize(t, token_mode) for t in transcripts]
    sentences = [s for s in sentences if s]
    if not sentences:
        raise ValueError("need at least one non-empty transcript")

    if discount_override is None:
        overrides = [None] * (order + 1)
    elif isinstance(discount_override, (int, float)):
        overrides = [discount_override] * (order + 1)
    else:
        overrides = [None] + list(discount_override)
        if len(overrides) != order + 1:
            raise ValueError(f"need {order} discount overrides, got {len(overrides) - 1}")

    raw = _count_ngrams(sentences, order)
    adjusted = _adjusted_counts(raw, order)

    vocab = {SENT_END, UNK} | {g[0] for g in adjusted[1]}
    if order > 1:
        vocab.add(SENT_START)
    pred_vocab = sorted(vocab - {SENT_START})

    # unigram level
    d1 = _discount(adjusted[1], 1, overrides[1])
    total1 = sum(adjusted[1].values())
    distinct1 = len(adjusted[1])
    gamma1 = d1 * distinct1 / total1
    base = 1.0 / len(pred_vocab)
    interp = [dict()]  # interp[n]: ngram -> linear prob, 1-based below
    uni = {}
    for w in pred_vocab:
        c = adjusted[1].get((w,), 0)
        uni[(w,)] = max(c - d1, 0.0) / total1 + gamma1 * base
    interp.append(uni)

    backoff_weights = {}  # context tuple -> linear gamma
    for n in range(2, order + 1):
        dn = _discount(adjusted[n], n, overrides[n])
        by_context = defaultdict(dict)
        for gram, c in adjusted[n].items():
            by_context[gram[:-1]][gram[-1]] = c
        level = {}
        for ctx, conts in by_context.items():
            total = sum(conts.values())
            gamma = dn * len(conts) / total
            backoff_weights[ctx] = gamma
            for w, c in conts.items():
                lower = interp[n - 1][ctx[1:] + (w,)]
                level[ctx + (w,)] = max(c - dn, 0.0) / total + gamma * lower
        interp.append(level)

    probs = {}
    for n in range(1, order + 1):
        for gram, p in interp[n].items():
            probs[gram] = math.log10(p)
    if order > 1:
        probs[(SENT_START,)] = -99.0
    backoffs = {ctx: math.log10(g) for ctx, g in backoff_weights.items()}
    return NGramModel(order, token_mode, frozenset(vocab), probs, backoffs)


def score_token(model: NGramModel, token: str, context: Sequence[str]) -> float:
    """log10 P(token | context) by the standard back-off walk. OOV tokens and
    context entries map to <unk>; overlong contexts are truncated."""
    tok = token if token in model.vocab else UNK
    ctx = tuple(t if t in model.vocab else UNK for t in context)
    if model.order > 1:
        ctx = ctx[-(model.order - 1) :]
    else:
        ctx = ()
    acc = 0.0
    while True:
        hit = model.probs.get(ctx + (tok,))
        if hit is not None:
            return acc + hit
        if not ctx:
            # every prediction-vocab token has a unigram entry; <s> has -99.
            # -99 also covers foreign ARPA files that lack an <unk> record.
            return acc + model.probs.get((tok,), -99.0)
        acc += model.backoffs.get(ctx, 0.0)
        ctx = ctx[1:]


def sequence_logprob(model: NGramModel, tokens: Sequence[str]) -> float:
    """log10 probability of the token sequence with <s> priming and </s>
    termination."""
    history = [SENT_START] if model.order > 1 else []
    total = 0.0
    for tok in tokens:
        total += score_token(model, tok, history)
        history.append(tok)
    return total + score_token(model, SENT_END, history)


def sentence_logprob(model: NGramModel, text: str) -> float:
    return sequence_logprob(model, tokenize(text, model.token_mode))


def perplexity(model: NGramModel, transcripts: Iterable[str]) -> float:
    """10^(-avg log10 prob per token); the token count includes one </s> per
    sentence."""
    total_lp = 0.0
    n_tokens = 0
    for text in transcripts:
        toks = tokenize(text, model.token_mode)
        total_lp += sequence_logprob(model, toks)
        n_tokens += len(toks) + 1
    if n_tokens == 0:
        raise ValueError("perplexity needs a non-empty corpus")
    return 10.0 ** (-total_lp / n_tokens)


# ---------------------------------------------------------------------------
# ARPA text format


@dataclass(frozen=True)
class ArpaRecord:
    log10_prob: float
    tokens: tuple
    log10_backoff: float | None = None


@dataclass(frozen=True)
class ArpaDocument:
    counts: tuple                 # counts[n-1] = header count of order n
    records: tuple                # records[n-1] = tuple of ArpaRecord


def _escape(token: str) -> str:
    return _SPACE_ESCAPE if token == " " else token


def _unescape(token: str) -> str:
    return " " if token == _SPACE_ESCAPE else token


def _fmt(value: float) -> str:
    return f"{value:.7g}"


def write_arpa(model: NGramModel, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grams_by_order = [[] for _ in range(model.order)]
    for gram in model.probs:
        grams_by_order[len(gram) - 1].append(gram)
    for grams in grams_by_order:
        grams.sort()
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\\data\\\n")
        for n, grams in enumerate(grams_by_order, start=1):
            f.write(f"ngram {n}={len(grams)}\n")
        for n, grams in enumerate(grams_by_order, start=1):
            f.write(f"\n\\{n}-grams:\n")
            for gram in grams:
                line = f"{_fmt(model.probs[gram])}\t" + " ".join(map(_escape, gram))
                bo = model.backoffs.get(gram)
                if n < model.order and bo is not None:
                    line += f"\t{_fmt(bo)}"
                f.write(line + "\n")
        f.write("\n\\end\\\n")


def parse_arpa(text: str) -> ArpaDocument:
    """Parse ARPA text into header counts plus per-order records. Raises
    ArpaParseError (with a line number) on any structural problem."""
    lines = text.split("\n")
    i = 0

    def current() -> str:
        return lines[i].strip()

    n_lines = len(lines)
    while i < n_lines and current() != "\\data\\":
        if current() != "":
            raise ArpaParseError(i + 1, f"expected \\data\\, found {current()!r}")
        i += 1
    if i == n_lines:
        raise ArpaParseError(n_lines, "missing \\data\\ header")
    i += 1
    counts = []
    while i < n_lines and current().startswith("ngram "):
        body = current()[len("ngram "):]
        try:
            n_str, count_str = body.split("=")
            n, count = int(n_str), int(count_str)
        except ValueError:
            raise ArpaParseError(i + 1, f"bad count line {current()!r}") from None
        if n != len(counts) + 1:
            raise ArpaParseError(i + 1, f"orders must be contiguous from 1, got {n}")
        counts.append(count)
        i += 1
    if not counts:
        raise ArpaParseError(i + 1, "no 'ngram N=count' lines after \\data\\")

    records = [[] for _ in counts]
    order = len(counts)
    seen_end = False
    section = None
    while i < n_lines:
        line = current()
        if line == "":
            i += 1
            continue
        if line == "\\end\\":
            seen_end = True
            i += 1
            break
        if line.startswith("\\") and line.endswith("-grams:"):
            try:
                section = int(line[1:-len("-grams:")])
            except ValueError:
                raise ArpaParseError(i + 1, f"bad section header {line!r}") from None
            if not 1 <= section <= order:
                raise ArpaParseError(i + 1, f"section order {section} not in header")
            i += 1
            continue
        if section is None:
            raise ArpaParseError(i + 1, f"entry before any section: {line!r}")
        if "\t" in line:
            fields = line.split("\t")
            if len(fields) not in (2, 3):
                raise ArpaParseError(i + 1, f"expected 2 or 3 tab fields, got {len(fields)}")
            prob_str, token_str = fields[0], fields[1]
            backoff_str = fields[2] if len(fields) == 3 else None
            tokens = token_str.split(" ")
        else:
            parts = line.split()
            if len(parts) == section + 1:
                prob_str, tokens, backoff_str = parts[0], parts[1:], None
            elif len(parts) == section + 2:
                prob_str, tokens, backoff_str = parts[0], parts[1:-1], parts[-1]
            else:
                raise ArpaParseError(
                    i + 1, f"expected {section} tokens plus 1-2 numbers, got {len(parts)} fields"
                )
        if len(tokens) != section:
            raise ArpaParseError(
                i + 1, f"expected {section} tokens in a {section}-gram, got {len(tokens)}"
            )
        try:
            prob = float(prob_str)
            backoff = None if backoff_str is None else float(backoff_str)
        except ValueError:
            raise ArpaParseError(i + 1, f"non-numeric field in {line!r}") from None
        records[section - 1].append(
            ArpaRecord(prob, tuple(map(_unescape, tokens)), backoff)
        )
        i += 1
    if not seen_end:
        raise ArpaParseError(n_lines, "missing \\end\\ terminator")
    for n, (want, got) in enumerate(zip(counts, records), start=1):
        if want != len(got):
            raise ArpaParseError(
                n_lines, f"header says {want} {n}-grams but section has {len(got)}"
            )
    return ArpaDocument(tuple(counts), tuple(tuple(r) for r in records))


def model_from_document(doc: ArpaDocument, token_mode: str = "auto") -> NGramModel:
    probs = {}
    backoffs = {}
    for order_records in doc.records:
        for rec in order_records:
            probs[rec.tokens] = rec.log10_prob
            if rec.log10_backoff is not None:
                backoffs[rec.tokens] = rec.log10_backoff
    vocab = {rec.tokens[0] for rec in doc.records[0]} | {SENT_END, UNK}
    if token_mode == "auto":
        plain = vocab - {SENT_START, SENT_END, UNK}
        token_mode = "char" if plain and all(len(t) == 1 for t in plain) else "word"
    return NGramModel(len(doc.counts), token_mode, frozenset(vocab), probs, backoffs)


def read_arpa(path, token_mode: str = "auto") -> NGramModel:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such ARPA file: {path}")
    raw = path.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ArpaParseError(0, f"file is not valid UTF-8: {e}") from e
    return model_from_document(parse_arpa(text), token_mode)
