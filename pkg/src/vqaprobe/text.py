"""Frozen text tokenization and embedding.

The embedding table substitutes for a large frozen language model: each
token id maps to a unit-Gaussian row drawn from (text seed, id) only, so
the table is identical across runs and never updated by training. Words
outside the vocabulary map to a reserved id.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .scenes import AttributeVocabulary, DEFAULT_VOCAB
from .seeding import substream

PAD_ID = 0
UNK_ID = 1
_PUNCTUATION = "?.,;!"

# Fixed for the artifact's lifetime; independent of run seeds.
TEXT_SEED = 7_741_931

_TEMPLATE_WORDS = (
    "how many are there is a an the of another object objects with same as what does have "
    "more fewer than and number left right front behind in"
)


def tokenize(text: str) -> list[str]:
    """Lowercase, split punctuation into standalone tokens, split on spaces."""
    out: list[str] = []
    for raw in text.lower().split():
        word = raw
        while word and word[-1] in _PUNCTUATION:
            word = word[:-1]
        if word:
            out.append(word)
        for ch in raw[len(word):]:
            out.append(ch)
    return out


def build_vocabulary(vocab: AttributeVocabulary = DEFAULT_VOCAB) -> dict[str, int]:
    """Token id table covering the template engine's full word inventory."""
    words = set(_TEMPLATE_WORDS.split())
    words.update(w + "s" for w in vocab.shapes)
    for values in vocab.categories.values():
        words.update(values)
    words.update(("shape", "color", "size", "material"))
    words.update(_PUNCTUATION)
    table = {"<pad>": PAD_ID, "<unk>": UNK_ID}
    for i, w in enumerate(sorted(words)):
        table[w] = i + 2
    return table


@dataclass
class TextTokens:
    ids: np.ndarray  # int32 [N]
    embedding: np.ndarray  # float32 [N, d_text]


class FrozenTextEmbedder:
    """Tokenizer plus frozen per-id Gaussian embedding rows."""

    def __init__(self, d_text: int = 32, seed: int = TEXT_SEED, vocab: AttributeVocabulary = DEFAULT_VOCAB):
        if d_text < 8:
            raise ConfigError(f"text embedding dimension {d_text} < 8")
        self.d_text = d_text
        self.seed = seed
        self.vocabulary = build_vocabulary(vocab)
        n = len(self.vocabulary)
        table = np.empty((n, d_text), dtype=np.float32)
        for token_id in range(n):
            rng = substream(seed, "text-row", token_id)
            table[token_id] = rng.standard_normal(d_text).astype(np.float32)
        table.setflags(write=False)
        self.table = table

    def encode_ids(self, text: str) -> np.ndarray:
        ids = [self.vocabulary.get(tok, UNK_ID) for tok in tokenize(text)]
        return np.asarray(ids, dtype=np.int32)

    def embed(self, text: str) -> TextTokens:
        ids = self.encode_ids(text)
        return TextTokens(ids=ids, embedding=self.table[ids])

    def checksum(self) -> str:
        return hashlib.sha256(self.table.tobytes()).hexdigest()
