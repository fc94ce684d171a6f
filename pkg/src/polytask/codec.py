"""Multitask token vocabulary and reference/hypothesis codecs.

Structured annotations are rendered as token sequences with task tokens
interspersed among the words:

  * ``<lid:LANG>``  language-id token, prepended (first position)
  * ``<scd>``       speaker change, placed at the inter-word gap
  * ``<ep>``        end of turn, placed at the gap (final gap included)
  * ``<ne:TYPE>`` / ``</ne>``  typed open and untyped close around a span
  * ``<blank>``     transducer blank, last id, never part of a hypothesis

At a shared gap the order is: ne-close, scd, ep, ne-open, then the word.
Closing before boundary events keeps every encoded sequence well nested.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .tasks import TaskId, TaskSet

BLANK_TOKEN = "<blank>"
SCD_TOKEN = "<scd>"
EP_TOKEN = "<ep>"
NE_CLOSE_TOKEN = "</ne>"


def ne_open_token(entity_type: str) -> str:
    return f"<ne:{entity_type}>"


def lid_token(lang: str) -> str:
    return f"<lid:{lang}>"


class EntitySpan(NamedTuple):
    """Entity span over word positions, end exclusive."""

    type: str
    start: int
    end: int


@dataclass(frozen=True)
class CodecConfig:
    """Inputs needed to build a token vocabulary."""

    languages: tuple[str, ...]
    entity_types: tuple[str, ...]
    lexicons: dict[str, tuple[str, ...]]

    def to_dict(self) -> dict:
        return {
            "languages": list(self.languages),
            "entity_types": list(self.entity_types),
            "lexicons": {k: list(v) for k, v in self.lexicons.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CodecConfig":
        return cls(
            languages=tuple(d["languages"]),
            entity_types=tuple(d["entity_types"]),
            lexicons={k: tuple(v) for k, v in d["lexicons"].items()},
        )


class TokenVocab:
    """Token inventory with a fixed, documented id layout.

    Ids are assigned deterministically: word tokens first (languages in
    sorted order, words sorted within each language, shared surface forms
    deduplicated), then specials in the order ``<scd>``, ``<ep>``,
    ``<ne:TYPE>`` for each sorted entity type, ``</ne>``, ``<lid:LANG>``
    for each sorted language, and ``<blank>`` last.
    """

    def __init__(self, tokens: Sequence[str], num_words: int, entity_types: Sequence[str], languages: Sequence[str]):
        self.tokens: tuple[str, ...] = tuple(tokens)
        self.num_words = num_words
        self.entity_types = tuple(entity_types)
        self.languages = tuple(languages)
        self._id_of = {t: i for i, t in enumerate(self.tokens)}
        self.scd_id = self._id_of[SCD_TOKEN]
        self.ep_id = self._id_of[EP_TOKEN]
        self.ne_close_id = self._id_of[NE_CLOSE_TOKEN]
        self.ne_open_ids = {t: self._id_of[ne_open_token(t)] for t in self.entity_types}
        self.lid_ids = {l: self._id_of[lid_token(l)] for l in self.languages}
        self.blank_id = self._id_of[BLANK_TOKEN]
        self._type_of_open = {v: k for k, v in self.ne_open_ids.items()}
        self._lang_of_lid = {v: k for k, v in self.lid_ids.items()}
        # Task of each non-word id; words and blank map to None.
        self._task_of: dict[int, TaskId] = {self.scd_id: TaskId.SCD, self.ep_id: TaskId.ENDPOINT,
                                            self.ne_close_id: TaskId.NER}
        self._task_of.update({i: TaskId.NER for i in self.ne_open_ids.values()})
        self._task_of.update({i: TaskId.LID for i in self.lid_ids.values()})

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def num_labels(self) -> int:
        """Number of emittable tokens (everything except blank)."""
        return len(self.tokens) - 1

    def id_of(self, token: str) -> int:
        return self._id_of[token]

    def word_id(self, word: str) -> int:
        i = self._id_of.get(word)
        if i is None or i >= self.num_words:
            raise ValueError(f"word {word!r} is not in the vocabulary")
        return i

    def is_word(self, token_id: int) -> bool:
        return 0 <= token_id < self.num_words

    def task_of(self, token_id: int) -> Optional[TaskId]:
        """Task a token id belongs to; None for words and blank."""
        return self._task_of.get(token_id)

    def entity_type_of(self, token_id: int) -> Optional[str]:
        return self._type_of_open.get(token_id)

    def lang_of(self, token_id: int) -> Optional[str]:
        return self._lang_of_lid.get(token_id)

    def to_strings(self, token_ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] if 0 <= i < len(self.tokens) else f"<unk:{i}>" for i in token_ids]

    def to_ids(self, token_strings: Iterable[str]) -> list[int]:
        return [self._id_of[s] for s in token_strings]


def build_vocab(config: CodecConfig) -> TokenVocab:
    """Build the token vocabulary from languages, entity types and lexicons."""
    if not config.languages:
        raise ValueError("at least one language is required")
    if len(set(config.languages)) != len(config.languages):
        raise ValueError("languages must be distinct")
    if len(set(config.entity_types)) != len(config.entity_types):
        raise ValueError("entity types must be distinct")
    words: list[str] = []
    seen: set[str] = set()
    for lang in sorted(config.languages):
        lex = config.lexicons.get(lang, ())
        if not lex:
            raise ValueError(f"lexicon for language {lang!r} is empty")
        for w in sorted(lex):
            if w not in seen:
                seen.add(w)
                words.append(w)
    specials = [SCD_TOKEN, EP_TOKEN]
    specials += [ne_open_token(t) for t in sorted(config.entity_types)]
    specials += [NE_CLOSE_TOKEN]
    specials += [lid_token(l) for l in sorted(config.languages)]
    specials += [BLANK_TOKEN]
    overlap = seen.intersection(specials)
    if overlap:
        raise ValueError(f"lexicon words collide with special tokens: {sorted(overlap)}")
    return TokenVocab(words + specials, num_words=len(words),
                      entity_types=sorted(config.entity_types), languages=sorted(config.languages))


@dataclass
class AnnotatedUtterance:
    """Feature frames with per-task optional annotations.

    Every annotation field is present exactly when the corresponding task
    is in ``available``; gap indices live in [0, len(words)] where gap g
    sits before word g (gap len(words) is the final gap).
    """

    utt_id: str
    frames: np.ndarray  # (T_in, d_in) float32
    words: tuple[str, ...]
    available: TaskSet
    lang: Optional[str] = None
    scd_gaps: Optional[frozenset[int]] = None
    ep_gaps: Optional[frozenset[int]] = None
    spans: Optional[tuple[EntitySpan, ...]] = None

    def __post_init__(self) -> None:
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError("frames must be a non-empty (T_in, d_in) array")
        if not self.words:
            raise ValueError("words must be non-empty (ASR is always available)")
        n = len(self.words)
        for task, value, name in ((TaskId.LID, self.lang, "lang"),
                                  (TaskId.SCD, self.scd_gaps, "scd_gaps"),
                                  (TaskId.ENDPOINT, self.ep_gaps, "ep_gaps"),
                                  (TaskId.NER, self.spans, "spans")):
            if (task in self.available) != (value is not None):
                raise ValueError(f"{name} must be present iff {task.name} is available")
        for gaps, name in ((self.scd_gaps, "scd_gaps"), (self.ep_gaps, "ep_gaps")):
            if gaps is not None and any(g < 0 or g > n for g in gaps):
                raise ValueError(f"{name} contains gap index outside [0, {n}]")
        if self.spans is not None:
            prev_end = 0
            for sp in sorted(self.spans, key=lambda s: s.start):
                if not (0 <= sp.start < sp.end <= n):
                    raise ValueError(f"span {sp} outside word bounds [0, {n})")
                if sp.start < prev_end:
                    raise ValueError(f"span {sp} overlaps a previous span")
                prev_end = sp.end

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])


@dataclass(frozen=True)
class TaskPredictions:
    """Per-task structures recovered from a decoded token sequence."""

    words: tuple[str, ...]
    lang: Optional[str]
    scd_gaps: frozenset[int]
    ep_gaps: frozenset[int]
    spans: tuple[EntitySpan, ...]
    malformed: int


def encode_reference(utt: AnnotatedUtterance, active: TaskSet, vocab: TokenVocab) -> list[int]:
    """Render the reference token sequence for the active task set.

    Tokens of inactive tasks never appear. Raises if ``active`` requests a
    task the utterance carries no annotation for.
    """
    if not active.is_subset(utt.available):
        missing = set(active.names()) - set(utt.available.names())
        raise ValueError(f"active tasks {sorted(missing)} not annotated on utterance {utt.utt_id}")
    n = len(utt.words)
    opens: dict[int, str] = {}
    closes: set[int] = set()
    if TaskId.NER in active and utt.spans:
        for sp in utt.spans:
            opens[sp.start] = sp.type
            closes.add(sp.end)
    scd = utt.scd_gaps if TaskId.SCD in active and utt.scd_gaps else frozenset()
    ep = utt.ep_gaps if TaskId.ENDPOINT in active and utt.ep_gaps else frozenset()
    out: list[int] = []
    if TaskId.LID in active:
        out.append(vocab.lid_ids[utt.lang])
    for g in range(n + 1):
        if g in closes:
            out.append(vocab.ne_close_id)
        if g in scd:
            out.append(vocab.scd_id)
        if g in ep:
            out.append(vocab.ep_id)
        if g in opens:
            out.append(vocab.ne_open_ids[opens[g]])
        if g < n:
            out.append(vocab.word_id(utt.words[g]))
    return out


def parse_hypothesis(tokens: Sequence[int], vocab: TokenVocab) -> TaskPredictions:
    """Recover words and per-task structures from arbitrary decoder output.

    Total over any int sequence: unmatched or empty ne tags and ids outside
    the vocabulary are counted as malformed, never raised on. The language
    is taken from the first lid token, if any.
    """
    words: list[str] = []
    lang: Optional[str] = None
    scd: set[int] = set()
    ep: set[int] = set()
    spans: list[EntitySpan] = []
    malformed = 0
    pending: Optional[tuple[str, int]] = None  # (entity type, start word pos)
    for tok in tokens:
        tok = int(tok)
        if vocab.is_word(tok):
            words.append(vocab.tokens[tok])
        elif tok == vocab.scd_id:
            scd.add(len(words))
        elif tok == vocab.ep_id:
            ep.add(len(words))
        elif tok in vocab._type_of_open:
            if pending is not None:
                malformed += 1  # previous open never closed
            pending = (vocab.entity_type_of(tok), len(words))
        elif tok == vocab.ne_close_id:
            if pending is None:
                malformed += 1  # close without open
            else:
                etype, start = pending
                pending = None
                if len(words) > start:
                    spans.append(EntitySpan(etype, start, len(words)))
                else:
                    malformed += 1  # empty span
        elif tok in vocab._lang_of_lid:
            if lang is None:
                lang = vocab.lang_of(tok)
        elif tok == vocab.blank_id:
            pass  # blanks carry no content
        else:
            malformed += 1  # id outside the vocabulary
    if pending is not None:
        malformed += 1
    return TaskPredictions(words=tuple(words), lang=lang, scd_gaps=frozenset(scd),
                           ep_gaps=frozenset(ep), spans=tuple(spans), malformed=malformed)


def strip_task_tokens(tokens: Sequence[int], vocab: TokenVocab) -> list[int]:
    """Drop every non-word token, preserving word order."""
    return [int(t) for t in tokens if vocab.is_word(int(t))]
