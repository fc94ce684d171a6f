from __future__ import annotations

import numpy as np
import pytest

from polytask.codec import AnnotatedUtterance, CodecConfig, EntitySpan, build_vocab
from polytask.tasks import TaskId, TaskSet


@pytest.fixture(scope="session")
def small_codec() -> CodecConfig:
    return CodecConfig(
        languages=("en", "de"),
        entity_types=("LOC", "PER"),
        lexicons={
            "en": tuple(f"en_w{i}" for i in range(6)) + ("en_per0", "en_loc0"),
            "de": tuple(f"de_w{i}" for i in range(6)) + ("de_per0", "de_loc0"),
        },
    )


@pytest.fixture(scope="session")
def small_vocab(small_codec):
    return build_vocab(small_codec)


def random_utterance(rng: np.random.Generator, codec: CodecConfig, utt_id: str = "u") -> AnnotatedUtterance:
    """Fully annotated utterance with random but valid structure."""
    lang = codec.languages[int(rng.integers(len(codec.languages)))]
    lex = [w for w in codec.lexicons[lang] if "_w" in w]
    n = int(rng.integers(1, 9))
    words = [lex[int(rng.integers(len(lex)))] for _ in range(n)]
    spans = []
    if rng.random() < 0.7:
        etype = codec.entity_types[int(rng.integers(len(codec.entity_types)))]
        pos = int(rng.integers(n + 1))
        words[pos:pos] = [f"{lang}_{etype.lower()}0"]
        spans.append(EntitySpan(etype, pos, pos + 1))
        n += 1
    scd = frozenset(int(g) for g in rng.integers(0, n + 1, size=rng.integers(0, 3)))
    ep = frozenset(int(g) for g in rng.integers(0, n + 1, size=rng.integers(0, 3)))
    frames = rng.normal(size=(max(4, 2 * n), 4)).astype(np.float32)
    return AnnotatedUtterance(utt_id=utt_id, frames=frames, words=tuple(words),
                              available=TaskSet.all_tasks(), lang=lang,
                              scd_gaps=scd, ep_gaps=ep, spans=tuple(spans))


def random_taskset(rng: np.random.Generator) -> TaskSet:
    bits = int(rng.integers(16))
    return TaskSet.of(*(t for i, t in enumerate((TaskId.SCD, TaskId.ENDPOINT, TaskId.NER, TaskId.LID))
                        if bits >> i & 1))
