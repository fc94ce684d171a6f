"""Synthetic mixed-annotation corpora, task-combination sampling, batching.

Utterances are short multi-turn conversations. Every word has a fixed
mean feature vector; speaker and language identities add offset vectors
(norm about half the word-mean norm) so that SCD and LID are learnable
from acoustics, and Gaussian noise is added on top. The train-partial
split carries annotations for ASR and LID only, the other splits for all
tasks.

Generation is deterministic: every utterance derives its own RNG stream
from (seed, split, index), so results are independent of iteration or
thread order.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .codec import AnnotatedUtterance, CodecConfig, EntitySpan, TokenVocab, encode_reference
from .tasks import TaskId, TaskSet

SPLIT_TRAIN_FULL = "train-full"
SPLIT_TRAIN_PARTIAL = "train-partial"
SPLIT_DEV = "dev"
SPLIT_TEST = "test"
SPLITS = (SPLIT_TRAIN_FULL, SPLIT_TRAIN_PARTIAL, SPLIT_DEV, SPLIT_TEST)

PARTIAL_TASKS = TaskSet.of(TaskId.LID)  # ASR implicit

FRAMES_FILE = "frames.bin"
RECORDS_FILE = "corpus.jsonl"
META_FILE = "meta.json"


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    languages: tuple[str, ...] = ("en", "de")
    lexicon_size: int = 50
    entity_types: tuple[str, ...] = ("LOC", "PER")
    entity_phrases_per_type: int = 3
    entity_phrase_words: tuple[int, int] = (1, 2)
    speaker_pool: int = 6
    speakers_range: tuple[int, int] = (1, 3)
    turns_range: tuple[int, int] = (1, 4)
    words_per_turn_range: tuple[int, int] = (2, 6)
    frames_per_word_range: tuple[int, int] = (2, 4)
    d_in: int = 16
    noise_sigma: float = 0.05
    entity_prob: float = 0.3
    offset_scale: float = 0.5
    n_train: int = 800
    partial_fraction: float = 0.5
    n_dev: int = 100
    n_test: int = 100

    def __post_init__(self) -> None:
        if not 2 <= len(self.languages) <= 4:
            raise ValueError("expected 2-4 languages")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 <= self.partial_fraction <= 1.0:
            raise ValueError("partial_fraction must be in [0, 1]")
        for name in ("lexicon_size", "speaker_pool", "d_in", "n_dev", "n_test"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        for key, val in d.items():
            if isinstance(val, tuple):
                d[key] = list(val)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        kwargs = dict(d)
        for key in ("languages", "entity_types", "entity_phrase_words", "speakers_range",
                    "turns_range", "words_per_turn_range", "frames_per_word_range"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def base_words(lang: str, cfg: GenConfig) -> list[str]:
    return [f"{lang}_w{i:02d}" for i in range(cfg.lexicon_size)]


def entity_phrases(lang: str, cfg: GenConfig) -> dict[str, list[tuple[str, ...]]]:
    """Per-type inventory of entity phrases; phrase words are dedicated surfaces."""
    lo, hi = cfg.entity_phrase_words
    phrases: dict[str, list[tuple[str, ...]]] = {}
    for etype in sorted(cfg.entity_types):
        rows = []
        for j in range(cfg.entity_phrases_per_type):
            length = lo + j % (hi - lo + 1)
            rows.append(tuple(f"{lang}_{etype.lower()}{j}{chr(97 + k)}" for k in range(length)))
        phrases[etype] = rows
    return phrases


def codec_config(cfg: GenConfig) -> CodecConfig:
    lexicons = {}
    for lang in cfg.languages:
        words = list(base_words(lang, cfg))
        for rows in entity_phrases(lang, cfg).values():
            for phrase in rows:
                words.extend(phrase)
        lexicons[lang] = tuple(words)
    return CodecConfig(languages=tuple(cfg.languages), entity_types=tuple(sorted(cfg.entity_types)),
                       lexicons=lexicons)


@dataclass
class GenTables:
    """Seed-derived generative parameters (word means, identity offsets)."""

    word_means: dict[str, np.ndarray]
    lang_offsets: dict[str, np.ndarray]
    speaker_offsets: np.ndarray  # (speaker_pool, d_in)


def make_tables(cfg: GenConfig) -> GenTables:
    rng = np.random.default_rng([cfg.seed, 7001])
    cc = codec_config(cfg)
    all_words: list[str] = []
    seen: set[str] = set()
    for lang in sorted(cc.languages):
        for w in sorted(cc.lexicons[lang]):
            if w not in seen:
                seen.add(w)
                all_words.append(w)
    means = {w: rng.normal(size=cfg.d_in) for w in all_words}
    avg_norm = float(np.mean([np.linalg.norm(m) for m in means.values()]))
    target = cfg.offset_scale * avg_norm

    def offset() -> np.ndarray:
        v = rng.normal(size=cfg.d_in)
        return v / np.linalg.norm(v) * target

    lang_offsets = {lang: offset() for lang in sorted(cc.languages)}
    speaker_offsets = np.stack([offset() for _ in range(cfg.speaker_pool)])
    return GenTables(means, lang_offsets, speaker_offsets)


def _rand_int(rng: np.random.Generator, lo_hi: tuple[int, int]) -> int:
    return int(rng.integers(lo_hi[0], lo_hi[1] + 1))


def _gen_utterance(cfg: GenConfig, tables: GenTables, utt_id: str,
                   rng: np.random.Generator, partial: bool) -> AnnotatedUtterance:
    lang = cfg.languages[int(rng.integers(len(cfg.languages)))]
    lex = base_words(lang, cfg)
    phrases = entity_phrases(lang, cfg)
    n_speakers = _rand_int(rng, cfg.speakers_range)
    speakers = rng.choice(cfg.speaker_pool, size=n_speakers, replace=False)
    n_turns = _rand_int(rng, cfg.turns_range)

    words: list[str] = []
    word_speaker: list[int] = []
    scd_gaps: set[int] = set()
    ep_gaps: set[int] = set()
    spans: list[EntitySpan] = []
    prev_speaker: Optional[int] = None
    for _ in range(n_turns):
        speaker = int(speakers[int(rng.integers(n_speakers))])
        n_words = _rand_int(rng, cfg.words_per_turn_range)
        turn_words = [lex[int(rng.integers(len(lex)))] for _ in range(n_words)]
        if cfg.entity_types and rng.random() < cfg.entity_prob:
            etype = sorted(cfg.entity_types)[int(rng.integers(len(cfg.entity_types)))]
            phrase = phrases[etype][int(rng.integers(len(phrases[etype])))]
            pos = int(rng.integers(n_words + 1))
            turn_words[pos:pos] = list(phrase)
            spans.append(EntitySpan(etype, len(words) + pos, len(words) + pos + len(phrase)))
        start = len(words)
        if prev_speaker is not None and speaker != prev_speaker:
            scd_gaps.add(start)
        words.extend(turn_words)
        word_speaker.extend([speaker] * len(turn_words))
        ep_gaps.add(len(words))
        prev_speaker = speaker

    chunks = []
    for w, speaker in zip(words, word_speaker):
        n_frames = _rand_int(rng, cfg.frames_per_word_range)
        mean = tables.word_means[w] + tables.lang_offsets[lang] + tables.speaker_offsets[speaker]
        noise = rng.normal(scale=cfg.noise_sigma, size=(n_frames, cfg.d_in)) if cfg.noise_sigma > 0 \
            else np.zeros((n_frames, cfg.d_in))
        chunks.append(mean[None, :] + noise)
    frames = np.concatenate(chunks).astype(np.float32)

    if partial:
        return AnnotatedUtterance(utt_id=utt_id, frames=frames, words=tuple(words),
                                  available=PARTIAL_TASKS, lang=lang)
    return AnnotatedUtterance(utt_id=utt_id, frames=frames, words=tuple(words),
                              available=TaskSet.all_tasks(), lang=lang,
                              scd_gaps=frozenset(scd_gaps), ep_gaps=frozenset(ep_gaps),
                              spans=tuple(spans))


@dataclass
class Corpus:
    utterances: list[AnnotatedUtterance]
    splits: list[str]
    codec: CodecConfig
    gen_config: Optional[GenConfig] = None

    def by_split(self, split: str) -> list[AnnotatedUtterance]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}, expected one of {SPLITS}")
        return [u for u, s in zip(self.utterances, self.splits) if s == split]

    def indices_of(self, *splits: str) -> list[int]:
        wanted = set(splits)
        return [i for i, s in enumerate(self.splits) if s in wanted]

    def __len__(self) -> int:
        return len(self.utterances)


def gen_corpus(cfg: GenConfig) -> Corpus:
    """Generate all four splits; byte-identical for identical configs."""
    tables = make_tables(cfg)
    n_partial = round(cfg.n_train * cfg.partial_fraction)
    plan = ((SPLIT_TRAIN_FULL, cfg.n_train - n_partial, False),
            (SPLIT_TRAIN_PARTIAL, n_partial, True),
            (SPLIT_DEV, cfg.n_dev, False),
            (SPLIT_TEST, cfg.n_test, False))
    utts: list[AnnotatedUtterance] = []
    splits: list[str] = []
    for split_idx, (split, count, partial) in enumerate(plan):
        for i in range(count):
            rng = np.random.default_rng([cfg.seed, split_idx, i])
            utts.append(_gen_utterance(cfg, tables, f"{split}-{i:05d}", rng, partial))
            splits.append(split)
    return Corpus(utts, splits, codec_config(cfg), cfg)


class CombinationPolicy(str, Enum):
    FROM_AVAILABLE_LABELS = "from_available_labels"
    UNIFORM_RANDOM_SUBSET = "uniform_random_subset"


def select_task_combination(utt: AnnotatedUtterance, policy: CombinationPolicy,
                            rng: np.random.Generator) -> TaskSet:
    """Pick the active TaskSet for one utterance; always a subset of available."""
    policy = CombinationPolicy(policy)
    if policy is CombinationPolicy.FROM_AVAILABLE_LABELS:
        return utt.available
    aux = utt.available.aux()
    bits = int(rng.integers(1 << len(aux)))
    return TaskSet.of(*(t for i, t in enumerate(aux) if bits >> i & 1))


@dataclass
class Batch:
    utt_ids: list[str]
    frames: torch.Tensor        # (B, T_in_max, d_in) float32, zero padded
    frame_lens: torch.Tensor    # (B,) long
    targets: torch.Tensor       # (B, U_max) long, zero padded
    target_lens: torch.Tensor   # (B,) long
    task_sets: list[TaskSet]

    def __len__(self) -> int:
        return len(self.utt_ids)


def make_batch(corpus: Corpus, indices: Sequence[int], policy: CombinationPolicy,
               rng: np.random.Generator, vocab: TokenVocab) -> Batch:
    """Assemble a padded batch; each utterance activates its own task set."""
    utts = [corpus.utterances[i] for i in indices]
    task_sets = [select_task_combination(u, policy, rng) for u in utts]
    targets = [encode_reference(u, ts, vocab) for u, ts in zip(utts, task_sets)]
    b = len(utts)
    t_max = max(u.num_frames for u in utts)
    u_max = max(len(t) for t in targets)
    frames = torch.zeros(b, t_max, utts[0].frames.shape[1], dtype=torch.float32)
    tgt = torch.zeros(b, u_max, dtype=torch.long)
    for i, (u, t) in enumerate(zip(utts, targets)):
        frames[i, :u.num_frames] = torch.from_numpy(u.frames)
        if t:
            tgt[i, :len(t)] = torch.tensor(t, dtype=torch.long)
    return Batch(
        utt_ids=[u.utt_id for u in utts],
        frames=frames,
        frame_lens=torch.tensor([u.num_frames for u in utts], dtype=torch.long),
        targets=tgt,
        target_lens=torch.tensor([len(t) for t in targets], dtype=torch.long),
        task_sets=task_sets,
    )


def save_corpus(corpus: Corpus, out_dir: Path | str) -> None:
    """Write records (JSONL), frames sidecar (little-endian f32) and metadata."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    offset = 0
    with open(out / FRAMES_FILE, "wb") as fbin, open(out / RECORDS_FILE, "w", encoding="utf-8") as frec:
        for utt, split in zip(corpus.utterances, corpus.splits):
            raw = np.ascontiguousarray(utt.frames, dtype="<f4").tobytes()
            fbin.write(raw)
            rec = {
                "id": utt.utt_id,
                "split": split,
                "frames_ref": {"path": FRAMES_FILE, "offset": offset,
                               "rows": utt.num_frames, "cols": int(utt.frames.shape[1])},
                "words": list(utt.words),
                "available": list(utt.available.names()),
            }
            if utt.lang is not None:
                rec["lang"] = utt.lang
            if utt.scd_gaps is not None:
                rec["scd_gaps"] = sorted(utt.scd_gaps)
            if utt.ep_gaps is not None:
                rec["ep_gaps"] = sorted(utt.ep_gaps)
            if utt.spans is not None:
                rec["spans"] = [[sp.type, sp.start, sp.end] for sp in utt.spans]
            frec.write(json.dumps(rec, sort_keys=True) + "\n")
            offset += len(raw)
    meta = {
        "format": "polytask-corpus",
        "version": 1,
        "codec": corpus.codec.to_dict(),
        "gen_config": corpus.gen_config.to_dict() if corpus.gen_config else None,
        "num_utterances": len(corpus.utterances),
    }
    (out / META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_corpus(corpus_dir: Path | str) -> Corpus:
    src = Path(corpus_dir)
    meta = json.loads((src / META_FILE).read_text(encoding="utf-8"))
    codec = CodecConfig.from_dict(meta["codec"])
    gen_cfg = GenConfig.from_dict(meta["gen_config"]) if meta.get("gen_config") else None
    blob = (src / FRAMES_FILE).read_bytes()
    utts: list[AnnotatedUtterance] = []
    splits: list[str] = []
    with open(src / RECORDS_FILE, encoding="utf-8") as frec:
        for line in frec:
            rec = json.loads(line)
            ref = rec["frames_ref"]
            count = ref["rows"] * ref["cols"]
            frames = np.frombuffer(blob, dtype="<f4", count=count,
                                   offset=ref["offset"]).reshape(ref["rows"], ref["cols"]).copy()
            utts.append(AnnotatedUtterance(
                utt_id=rec["id"],
                frames=frames,
                words=tuple(rec["words"]),
                available=TaskSet.from_names(rec["available"]),
                lang=rec.get("lang"),
                scd_gaps=frozenset(rec["scd_gaps"]) if "scd_gaps" in rec else None,
                ep_gaps=frozenset(rec["ep_gaps"]) if "ep_gaps" in rec else None,
                spans=tuple(EntitySpan(t, s, e) for t, s, e in rec["spans"]) if "spans" in rec else None,
            ))
            splits.append(rec["split"])
    return Corpus(utts, splits, codec, gen_cfg)


def corpus_hash(corpus_dir: Path | str) -> str:
    """Content hash over records, frames and metadata."""
    src = Path(corpus_dir)
    h = hashlib.sha256()
    for name in (META_FILE, RECORDS_FILE, FRAMES_FILE):
        h.update(name.encode())
        h.update((src / name).read_bytes())
    return h.hexdigest()
