"""Caption normalization and the two token-ID mappers.

Tokenizer A is a frequency-trained word vocabulary with an UNK fallback.
Tokenizer B hashes each word with seeded FNV-1a into a fixed bucket space,
so it needs no training but suffers collisions when the space is small.
"""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

from .errors import CorpusEmpty
from .hashing import fnv1a64

PAD_ID = 0
UNK_ID = 1
DEFAULT_MAX_LEN = 32


def normalize(text: str) -> List[str]:
    """Lowercase, split on whitespace, drop punctuation, collapse adjacent repeats.

    >>> normalize("A Man, playing!! playing with his DOG.")
    ['a', 'man', 'playing', 'with', 'his', 'dog']
    """
    words: List[str] = []
    for raw in text.lower().split():
        word = "".join(ch for ch in raw if ch.isalnum())
        if not word:
            continue
        if words and words[-1] == word:
            continue
        words.append(word)
    return words


@dataclass
class Vocabulary:
    """Word <-> id bijection. Ids 0 and 1 are reserved for PAD and UNK."""

    word_to_id: Dict[str, int]
    id_to_word: Dict[int, str] = field(init=False)

    def __post_init__(self):
        self.id_to_word = {}
        for word, idx in self.word_to_id.items():
            if idx < 2:
                raise ValueError(f"word {word!r} collides with a reserved id ({idx})")
            if idx in self.id_to_word:
                raise ValueError(f"duplicate id {idx}")
            self.id_to_word[idx] = word
        expected = set(range(2, 2 + len(self.word_to_id)))
        if set(self.id_to_word) != expected:
            raise ValueError("vocabulary ids must be dense starting at 2")

    @property
    def size(self) -> int:
        return 2 + len(self.word_to_id)

    def __len__(self):
        return self.size

    def id_of(self, word: str) -> int:
        return self.word_to_id.get(word, UNK_ID)

    def word_of(self, idx: int) -> str:
        if idx == PAD_ID:
            return "<pad>"
        if idx == UNK_ID:
            return "<unk>"
        return self.id_to_word[idx]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for idx in sorted(self.id_to_word):
                f.write(f"{self.id_to_word[idx]}\t{idx}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        mapping: Dict[str, int] = {}
        seen_ids = set()
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line:
                continue
            word, _, idx_s = line.rpartition("\t")
            idx = int(idx_s)
            if idx in seen_ids:
                raise ValueError(f"{path}:{lineno}: duplicate id {idx}")
            if word in mapping:
                raise ValueError(f"{path}:{lineno}: duplicate word {word!r}")
            seen_ids.add(idx)
            mapping[word] = idx
        return cls(mapping)


def train_vocab(corpus: Iterable[Sequence[str]], size: int) -> Vocabulary:
    """Keep the ``size - 2`` most frequent words, ties broken lexicographically."""
    if size < 3:
        raise ValueError(f"vocabulary size must be >= 3, got {size}")
    counts: Counter = Counter()
    for words in corpus:
        counts.update(words)
    if not counts:
        raise CorpusEmpty("cannot train a vocabulary on a corpus without words")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[: size - 2]
    return Vocabulary({word: i + 2 for i, (word, _) in enumerate(ranked)})


def tokenize_a(words: Sequence[str], vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> List[int]:
    return [vocab.id_of(w) for w in words[:max_len]]


@lru_cache(maxsize=1 << 16)
def _bucket(word: str, num_buckets: int, seed: int) -> int:
    data = struct.pack("<Q", seed & 0xFFFFFFFFFFFFFFFF) + word.encode("utf-8")
    return fnv1a64(data) % num_buckets


def tokenize_b(words: Sequence[str], num_buckets: int, seed: int = 0,
               max_len: int = DEFAULT_MAX_LEN) -> List[int]:
    if num_buckets < 2:
        raise ValueError(f"num_buckets must be >= 2, got {num_buckets}")
    return [_bucket(w, num_buckets, seed) for w in words[:max_len]]


class WordTokenizer:
    """Tokenizer A bound to a trained vocabulary."""

    kind = "A"

    def __init__(self, vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN):
        self.vocab = vocab
        self.max_len = max_len

    @property
    def id_space(self) -> int:
        return self.vocab.size

    def __call__(self, words: Sequence[str]) -> List[int]:
        return tokenize_a(words, self.vocab, self.max_len)


class HashTokenizer:
    """Tokenizer B: seeded FNV-1a buckets."""

    kind = "B"

    def __init__(self, num_buckets: int, seed: int = 0, max_len: int = DEFAULT_MAX_LEN):
        if num_buckets < 2:
            raise ValueError(f"num_buckets must be >= 2, got {num_buckets}")
        self.num_buckets = num_buckets
        self.seed = seed
        self.max_len = max_len

    @property
    def id_space(self) -> int:
        return self.num_buckets

    def __call__(self, words: Sequence[str]) -> List[int]:
        return tokenize_b(words, self.num_buckets, self.seed, self.max_len)
