import random

import pytest

from lowres import tokenizer
from lowres.corpus import Document

# Ethiopic syllable block used to synthesize target-language text.
SYLLABLES = [chr(cp) for cp in range(0x1200, 0x12E0)]


def make_lexicon(rng: random.Random, n_words: int) -> list[str]:
    words: set[str] = set()
    while len(words) < n_words:
        words.add("".join(rng.choice(SYLLABLES) for _ in range(rng.randint(2, 6))))
    return sorted(words)


def amharic_text(rng: random.Random, lexicon: list[str], min_bytes: int) -> str:
    """Sample text from a lexicon until at least ``min_bytes`` of UTF-8.

    Every lexicon word appears at least once per full pass, so pair
    frequencies stay above the trainer's minimum.
    """
    parts: list[str] = []
    size = 0
    while size < min_bytes:
        batch = lexicon[:]
        rng.shuffle(batch)
        for word in batch:
            if rng.random() < 0.12:
                word += "።"
            parts.append(word)
            size += len(word.encode("utf-8")) + 1
    return " ".join(parts)


def amharic_documents(rng: random.Random, lexicon: list[str], min_bytes: int,
                      source: str = "real") -> list[Document]:
    text = amharic_text(rng, lexicon, min_bytes)
    return [Document("doc0", source, text)]


@pytest.fixture(scope="session")
def byte_base() -> tokenizer.Vocabulary:
    return tokenizer.new_base_vocabulary()


@pytest.fixture(scope="session")
def byte_model(byte_base) -> tokenizer.TokenizerModel:
    return tokenizer.TokenizerModel(byte_base)


@pytest.fixture(scope="session")
def fixture_model() -> tokenizer.TokenizerModel:
    # 256 bytes + the word marker + "▁Hi"; the small vocab used across
    # the segmentation examples.
    vocab = tokenizer.new_base_vocabulary(["▁", "▁Hi"])
    return tokenizer.TokenizerModel(vocab)
