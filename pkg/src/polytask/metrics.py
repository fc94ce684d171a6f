"""Evaluation metrics: WER, alignment-based task-token F1, exact-match
entity F1, LID accuracy, and inactive-task token (ITT) accounting."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

from .codec import AnnotatedUtterance, TokenVocab, encode_reference, parse_hypothesis
from .tasks import TaskId, TaskSet


class EditOp(NamedTuple):
    """One alignment step; positions are None for the side not consumed."""

    op: str  # "match" | "sub" | "del" | "ins"
    ref_pos: Optional[int]
    hyp_pos: Optional[int]


def align_tokens(ref: Sequence, hyp: Sequence) -> list[EditOp]:
    """Minimal unit-cost alignment with deterministic tie-breaking.

    On equal cost the backtrace prefers match > sub > del > ins.
    """
    n, m = len(ref), len(hyp)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dist[i][0] = i
    for j in range(1, m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        row, prev = dist[i], dist[i - 1]
        ri = ref[i - 1]
        for j in range(1, m + 1):
            row[j] = min(prev[j - 1] + (ri != hyp[j - 1]), prev[j] + 1, row[j - 1] + 1)
    ops: list[EditOp] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and dist[i][j] == dist[i - 1][j - 1]:
            ops.append(EditOp("match", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] + 1:
            ops.append(EditOp("sub", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and dist[i][j] == dist[i - 1][j] + 1:
            ops.append(EditOp("del", i - 1, None))
            i -= 1
        else:
            ops.append(EditOp("ins", None, j - 1))
            j -= 1
    ops.reverse()
    return ops


class WerResult(NamedTuple):
    wer: float
    substitutions: int
    insertions: int
    deletions: int


def wer(ref_words: Sequence, hyp_words: Sequence) -> WerResult:
    """Word error rate (S + I + D) / |ref|; inf for empty ref, non-empty hyp."""
    ops = align_tokens(ref_words, hyp_words)
    s = sum(1 for o in ops if o.op == "sub")
    i = sum(1 for o in ops if o.op == "ins")
    d = sum(1 for o in ops if o.op == "del")
    if len(ref_words) == 0:
        return WerResult(0.0 if len(hyp_words) == 0 else float("inf"), s, i, d)
    return WerResult((s + i + d) / len(ref_words), s, i, d)


class Prf(NamedTuple):
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, n_hyp: int, n_ref: int) -> "Prf":
        p = tp / n_hyp if n_hyp else 0.0
        r = tp / n_ref if n_ref else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        return cls(p, r, f1)


def token_f1_counts(ref_tokens: Sequence[int], hyp_tokens: Sequence[int],
                    task_token_ids: frozenset[int] | set[int]) -> tuple[int, int, int]:
    """(tp, n_hyp, n_ref) for one utterance's task tokens under alignment."""
    ops = align_tokens(ref_tokens, hyp_tokens)
    tp = sum(1 for o in ops if o.op == "match" and ref_tokens[o.ref_pos] in task_token_ids)
    n_ref = sum(1 for t in ref_tokens if t in task_token_ids)
    n_hyp = sum(1 for t in hyp_tokens if t in task_token_ids)
    return tp, n_hyp, n_ref


def token_f1(ref_tokens: Sequence[int], hyp_tokens: Sequence[int],
             task_token_ids: frozenset[int] | set[int]) -> Prf:
    """Text-based F1 over one task's tokens, aligned within full sequences."""
    tp, n_hyp, n_ref = token_f1_counts(ref_tokens, hyp_tokens, task_token_ids)
    return Prf.from_counts(tp, n_hyp, n_ref)


SurfaceSpan = tuple[str, tuple[str, ...]]  # (entity type, exact word sequence)


def surface_spans(words: Sequence[str], spans: Iterable) -> list[SurfaceSpan]:
    return [(sp.type, tuple(words[sp.start:sp.end])) for sp in spans]


def ner_f1_counts(ref_spans: Sequence[SurfaceSpan], hyp_spans: Sequence[SurfaceSpan]) -> tuple[int, int, int]:
    ref_counts = Counter(ref_spans)
    hyp_counts = Counter(hyp_spans)
    tp = sum((ref_counts & hyp_counts).values())
    return tp, sum(hyp_counts.values()), sum(ref_counts.values())


def ner_f1(ref_spans: Sequence[SurfaceSpan], hyp_spans: Sequence[SurfaceSpan]) -> Prf:
    """Exact-match F1: spans pair up only on identical (type, surface)."""
    tp, n_hyp, n_ref = ner_f1_counts(ref_spans, hyp_spans)
    return Prf.from_counts(tp, n_hyp, n_ref)


def lid_accuracy(ref_langs: Sequence[str], hyp_langs: Sequence[Optional[str]]) -> float:
    """Per-utterance accuracy; a missing prediction counts as incorrect."""
    if len(ref_langs) != len(hyp_langs):
        raise ValueError("ref/hyp language lists differ in length")
    if not ref_langs:
        return 0.0
    return sum(1 for r, h in zip(ref_langs, hyp_langs) if h == r) / len(ref_langs)


def itt_count(hyp_token_seqs: Iterable[Sequence[int]], active: TaskSet, vocab: TokenVocab) -> int:
    """Total task tokens emitted for tasks outside the active set."""
    total = 0
    for seq in hyp_token_seqs:
        for tok in seq:
            task = vocab.task_of(int(tok))
            if task is not None and task not in active:
                total += 1
    return total


@dataclass
class MetricReport:
    """Aggregated metrics for one evaluation run.

    Auxiliary-task fields are None when the task was not activated.
    """

    n_utts: int
    active: tuple[str, ...]
    wer: float
    substitutions: int
    insertions: int
    deletions: int
    ref_words: int
    wer_by_lang: dict[str, float]
    wer_macro: float
    scd: Optional[Prf]
    endpoint: Optional[Prf]
    ner: Optional[Prf]
    lid_acc: Optional[float]
    itt: int

    def to_flat(self) -> dict[str, object]:
        flat: dict[str, object] = {
            "n_utts": self.n_utts,
            "active": "+".join(self.active),
            "wer": self.wer,
            "wer_macro": self.wer_macro,
            "substitutions": self.substitutions,
            "insertions": self.insertions,
            "deletions": self.deletions,
            "ref_words": self.ref_words,
            "itt": self.itt,
        }
        for lang, w in sorted(self.wer_by_lang.items()):
            flat[f"wer_{lang}"] = w
        for name, prf in (("scd", self.scd), ("endpoint", self.endpoint), ("ner", self.ner)):
            if prf is not None:
                flat[f"{name}_precision"] = prf.precision
                flat[f"{name}_recall"] = prf.recall
                flat[f"{name}_f1"] = prf.f1
        if self.lid_acc is not None:
            flat["lid_accuracy"] = self.lid_acc
        return flat

    def format_table(self) -> str:
        def fmt(v: Optional[float]) -> str:
            return "--" if v is None else f"{v:.4f}"

        rows = [
            ("utterances", str(self.n_utts)),
            ("active tasks", "+".join(self.active)),
            ("WER", fmt(self.wer)),
            ("WER (macro over languages)", fmt(self.wer_macro)),
            ("SCD F1", fmt(self.scd.f1 if self.scd else None)),
            ("Endpoint F1", fmt(self.endpoint.f1 if self.endpoint else None)),
            ("NER F1", fmt(self.ner.f1 if self.ner else None)),
            ("LID accuracy", fmt(self.lid_acc)),
            ("ITT", str(self.itt)),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def write_report(report: MetricReport, text_path: Path | str, kv_path: Path | str) -> None:
    """Write the human-readable table and the flat key-value metrics file."""
    Path(text_path).write_text(report.format_table() + "\n", encoding="utf-8")
    lines = [f"{k}={v}" for k, v in report.to_flat().items()]
    Path(kv_path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def evaluate_utterances(refs: Sequence[AnnotatedUtterance], hyp_token_seqs: Sequence[Sequence[int]],
                        active: TaskSet, vocab: TokenVocab) -> MetricReport:
    """Score hypotheses against references for the activated tasks.

    WER and ITT are always reported; SCD/endpoint/NER/LID only when
    activated. WER is micro-averaged over the corpus, with a macro
    average over languages alongside.
    """
    if len(refs) != len(hyp_token_seqs):
        raise ValueError("refs and hypotheses differ in length")
    subs = ins = dels = ref_words = 0
    by_lang_err: dict[str, list[int]] = {}
    scd_c = [0, 0, 0]
    ep_c = [0, 0, 0]
    ner_c = [0, 0, 0]
    lid_ref: list[str] = []
    lid_hyp: list[Optional[str]] = []
    for utt, hyp in zip(refs, hyp_token_seqs):
        pred = parse_hypothesis(hyp, vocab)
        w = wer(utt.words, pred.words)
        subs += w.substitutions
        ins += w.insertions
        dels += w.deletions
        ref_words += len(utt.words)
        if utt.lang is not None:
            err, cnt = by_lang_err.setdefault(utt.lang, [0, 0])
            by_lang_err[utt.lang] = [err + w.substitutions + w.insertions + w.deletions,
                                     cnt + len(utt.words)]
        ref_tokens = encode_reference(utt, active, vocab)
        for task, ids, acc in ((TaskId.SCD, {vocab.scd_id}, scd_c),
                               (TaskId.ENDPOINT, {vocab.ep_id}, ep_c)):
            if task in active:
                tp, nh, nr = token_f1_counts(ref_tokens, list(hyp), ids)
                acc[0] += tp
                acc[1] += nh
                acc[2] += nr
        if TaskId.NER in active:
            tp, nh, nr = ner_f1_counts(surface_spans(utt.words, utt.spans or ()),
                                       surface_spans(pred.words, pred.spans))
            ner_c[0] += tp
            ner_c[1] += nh
            ner_c[2] += nr
        if TaskId.LID in active and utt.lang is not None:
            lid_ref.append(utt.lang)
            lid_hyp.append(pred.lang)
    by_lang = {lang: (err / cnt if cnt else 0.0) for lang, (err, cnt) in by_lang_err.items()}
    micro = (subs + ins + dels) / ref_words if ref_words else 0.0
    return MetricReport(
        n_utts=len(refs),
        active=active.names(),
        wer=micro,
        substitutions=subs,
        insertions=ins,
        deletions=dels,
        ref_words=ref_words,
        wer_by_lang=by_lang,
        wer_macro=sum(by_lang.values()) / len(by_lang) if by_lang else micro,
        scd=Prf.from_counts(*scd_c) if TaskId.SCD in active else None,
        endpoint=Prf.from_counts(*ep_c) if TaskId.ENDPOINT in active else None,
        ner=Prf.from_counts(*ner_c) if TaskId.NER in active else None,
        lid_acc=lid_accuracy(lid_ref, lid_hyp) if TaskId.LID in active else None,
        itt=itt_count(hyp_token_seqs, active, vocab),
    )
