"""Word/character error rates and per-dataset reporting.

WER and CER are micro-averages: summed edit operations over summed reference
lengths, so rates above 100% are possible and meaningful.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Mapping, Sequence

from .corpus import normalize_transcript


@dataclass(frozen=True)
class EditOps:
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int

    @property
    def total(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def edit_distance(ref_tokens: Sequence, hyp_tokens: Sequence) -> EditOps:
    """Levenshtein with unit costs; the operation breakdown is recovered by
    backtrace, preferring substitution over deletion over insertion on ties."""
    n, m = len(ref_tokens), len(hyp_tokens)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dist[i][0] = i
    for j in range(1, m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        row = dist[i]
        prev = dist[i - 1]
        ref_tok = ref_tokens[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (ref_tok != hyp_tokens[j - 1])
            up = prev[j] + 1
            left = row[j - 1] + 1
            row[j] = diag if diag <= up and diag <= left else min(up, left)
    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        here = dist[i][j]
        if i > 0 and j > 0 and here == dist[i - 1][j - 1] + (
            ref_tokens[i - 1] != hyp_tokens[j - 1]
        ):
            subs += ref_tokens[i - 1] != hyp_tokens[j - 1]
            i -= 1
            j -= 1
        elif i > 0 and here == dist[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditOps(subs, dels, ins, n)


def _word_tokens(text: str) -> list[str]:
    text = normalize_transcript(text)
    return text.split(" ") if text else []


def _char_tokens(text: str) -> list[str]:
    return list(normalize_transcript(text))


def _tally(pairs, tokenizer) -> tuple[int, int, int, int]:
    s = d = i = n = 0
    for ref, hyp in pairs:
        ops = edit_distance(tokenizer(ref), tokenizer(hyp))
        s += ops.substitutions
        d += ops.deletions
        i += ops.insertions
        n += ops.ref_len
    return s, d, i, n


def wer(pairs: Sequence[tuple[str, str]]) -> float:
    """(S + D + I) / N over all pairs, tokenized on spaces."""
    s, d, i, n = _tally(pairs, _word_tokens)
    if n == 0:
        raise ValueError("no reference words; WER undefined")
    return (s + d + i) / n


def cer(pairs: Sequence[tuple[str, str]]) -> float:
    """(S + D + I) / N over all pairs, tokenized per character."""
    s, d, i, n = _tally(pairs, _char_tokens)
    if n == 0:
        raise ValueError("no reference characters; CER undefined")
    return (s + d + i) / n


@dataclass(frozen=True)
class ReportRow:
    dataset_tag: str
    utterance_count: int
    wer: float | None
    cer: float | None


@dataclass(frozen=True)
class EvalReport:
    rows: tuple  # per-dataset rows followed by the Overall row

    def render_text(self) -> str:
        header = ("Dataset", "Utterances", "WER", "CER")
        body = [
            (
                row.dataset_tag,
                str(row.utterance_count),
                "" if row.wer is None else f"{row.wer * 100:.2f}%",
                "" if row.cer is None else f"{row.cer * 100:.2f}%",
            )
            for row in self.rows
        ]
        widths = [
            max(len(header[k]), *(len(r[k]) for r in body)) for k in range(4)
        ]
        lines = []
        for cells in [header] + body:
            lines.append(
                cells[0].ljust(widths[0])
                + "".join("  " + cells[k].rjust(widths[k]) for k in range(1, 4))
            )
        return "\n".join(lines) + "\n"

    def render_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset_tag", "utterance_count", "wer_percent", "cer_percent"])
        for row in self.rows:
            w.writerow([
                row.dataset_tag,
                row.utterance_count,
                "" if row.wer is None else f"{row.wer * 100:.2f}",
                "" if row.cer is None else f"{row.cer * 100:.2f}",
            ])
        return buf.getvalue()


def build_report(groups: Mapping[str, Sequence[tuple[str, str]]]) -> EvalReport:
    """One row per dataset tag in input order, then an Overall micro-average
    over exactly the groups passed in."""
    if not groups:
        raise ValueError("need at least one group")
    rows = []
    ws = wd = wi = wn = 0
    cs_ = cd = ci = cn = 0
    for tag, pairs in groups.items():
        if len(pairs) == 0:
            rows.append(ReportRow(tag, 0, None, None))
            continue
        s, d, i, n = _tally(pairs, _word_tokens)
        s2, d2, i2, n2 = _tally(pairs, _char_tokens)
        ws, wd, wi, wn = ws + s, wd + d, wi + i, wn + n
        cs_, cd, ci, cn = cs_ + s2, cd + d2, ci + i2, cn + n2
        rows.append(
            ReportRow(
                tag,
                len(pairs),
                (s + d + i) / n if n else None,
                (s2 + d2 + i2) / n2 if n2 else None,
            )
        )
    total_utts = sum(r.utterance_count for r in rows)
    rows.append(
        ReportRow(
            "Overall",
            total_utts,
            (ws + wd + wi) / wn if wn else None,
            (cs_ + cd + ci) / cn if cn else None,
        )
    )
    return EvalReport(tuple(rows))


def read_pairs(path) -> list[tuple[str, str]]:
    """Pairs file: CSV with a ref,hyp header."""
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    if not rows or tuple(rows[0]) != ("ref", "hyp"):
        raise ValueError(f"pairs file must start with a ref,hyp header: {path}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise ValueError(f"{path} line {lineno}: expected 2 fields, got {len(row)}")
        out.append((row[0], row[1]))
    return out


def write_pairs(pairs: Sequence[tuple[str, str]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["ref", "hyp"])
        for ref, hyp in pairs:
            w.writerow([ref, hyp])
