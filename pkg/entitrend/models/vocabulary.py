from __future__ import annotations

import logging
from collections.abc import Sequence
from itertools import combinations

import numpy as np

logger = logging.getLogger(__name__)

CONSONANTS = "bdfgklmnprstvz"
VOWELS = "aeiou"
ALPHABET = "".join(sorted(set(CONSONANTS + VOWELS)))


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Returns the edit distance between two sequences.

    Works on strings (character distance) as well as on word sequences
    (word distance). Insertions, deletions and substitutions all cost one.

    """
    n, m = len(a), len(b)
    if n > m:
        a, b, n, m = b, a, m, n

    current = list(range(n + 1))
    for i in range(1, m + 1):
        previous, current = current, [i] + [0] * n
        for j in range(1, n + 1):
            add, delete = previous[j] + 1, current[j - 1] + 1
            change = previous[j - 1]
            if a[j - 1] != b[i - 1]:
                change = change + 1
            current[j] = min(add, delete, change)

    return current[n]


def _deletes(word: str, depth: int) -> set[str]:
    variants = {word}
    for d in range(1, min(depth, len(word)) + 1):
        for positions in combinations(range(len(word)), d):
            variants.add(
                "".join(ch for k, ch in enumerate(word) if k not in positions))
    return variants


class WordPool:
    """Defines a ranked pool of vocabulary words.

    Words are stored in rank order, so index 0 is the most frequent one, and
    ``probs`` holds their Zipf probabilities. The pool also owns a deletion
    neighbourhood index, which finds every word within edit distance two of
    a string without scanning the whole pool.

    """
    MAX_INDEX_DISTANCE = 2

    def __init__(self, words: Sequence[str], zipf_exponent: float = 1.0) -> None:
        if isinstance(words, str) or not isinstance(words, Sequence):
            raise TypeError(f"'words' must be a sequence of strings: {repr(words)}")
        if len(words) == 0:
            raise ValueError("'words' must not be empty: []")
        for word in words:
            if not isinstance(word, str) or not word or " " in word:
                raise ValueError(f"'words' must hold single tokens: {repr(word)}")
        if len(set(words)) != len(words):
            raise ValueError("'words' must not contain duplicates")
        if not isinstance(zipf_exponent, (int, float)) or zipf_exponent <= 0:
            raise ValueError(
                f"'zipf_exponent' must be greater than zero: {repr(zipf_exponent)}")

        self.words = tuple(words)
        self.zipf_exponent = float(zipf_exponent)
        self.rank = {word: i for i, word in enumerate(self.words)}

        weights = 1.0 / np.arange(1, len(self.words) + 1) ** self.zipf_exponent
        self.probs = weights / weights.sum()

        self._index: dict[str, list[int]] = {}
        for i, word in enumerate(self.words):
            for variant in _deletes(word, self.MAX_INDEX_DISTANCE):
                self._index.setdefault(variant, []).append(i)

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: object) -> bool:
        return word in self.rank

    def sample(self, rng: np.random.Generator, size: int) -> list[str]:
        """Draws ``size`` words following the Zipf frequencies of the pool."""
        picks = rng.choice(len(self.words), size=size, p=self.probs)
        return [self.words[i] for i in picks]

    def neighbors(self, token: str) -> dict[str, int]:
        """Returns every pool word within distance two of ``token``."""
        candidates = set()
        for variant in _deletes(token, self.MAX_INDEX_DISTANCE):
            candidates.update(self._index.get(variant, ()))
        found = {}
        for i in sorted(candidates):
            word = self.words[i]
            distance = levenshtein(token, word)
            if distance <= self.MAX_INDEX_DISTANCE:
                found[word] = distance
        return found

    def nearest(self, token: str, exclude: frozenset[str] = frozenset(),
                slack: int = 0) -> str | None:
        """Snaps a string to a close pool word.

        Among the words whose distance is at most the best distance plus
        ``slack``, the most frequent one wins, which biases snapping toward
        head words. Words in ``exclude`` are never returned. If nothing lies
        within distance two, this returns None.

        """
        found = {
            word: distance for word, distance in self.neighbors(token).items()
            if word not in exclude
        }
        if not found:
            return None
        best = min(found.values())
        eligible = [word for word, d in found.items() if d <= best + slack]
        return min(eligible, key=lambda word: self.rank[word])


def generate_word_pool(n_words: int, seed: int,
                       zipf_exponent: float = 1.0) -> WordPool:
    """Generates a pool of pronounceable pseudo-words.

    Each word consists of two to four consonant-vowel syllables, optionally
    closed by a consonant. The ranking of words (hence their frequency) is a
    random permutation, so word length does not predict frequency.

    """
    if not isinstance(n_words, int) or n_words <= 0:
        raise ValueError(f"'n_words' must be a positive integer: {repr(n_words)}")

    rng = np.random.default_rng(seed)
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < n_words:
        n_syllables = int(rng.integers(2, 5))
        syllables = [
            CONSONANTS[rng.integers(len(CONSONANTS))]
            + VOWELS[rng.integers(len(VOWELS))]
            for _ in range(n_syllables)
        ]
        if rng.random() < 0.3:
            syllables.append(CONSONANTS[rng.integers(len(CONSONANTS))])
        word = "".join(syllables)
        if word in seen:
            continue
        seen.add(word)
        words.append(word)

    logger.debug("generated %d pseudo-words", n_words)
    return WordPool(words, zipf_exponent)


def generate_entity_names(pool: WordPool, n_entities: int,
                          rng: np.random.Generator) -> list[str]:
    """Generates ``n_entities`` distinct names of one to three pool words.

    Words are drawn uniformly from the pool, so names mix head and tail
    vocabulary. The result is in generation order.

    """
    if not isinstance(n_entities, int) or n_entities <= 0:
        raise ValueError(
            f"'n_entities' must be a positive integer: {repr(n_entities)}")

    lengths = (1, 2, 3)
    length_probs = (0.2, 0.5, 0.3)
    capacity = len(pool) + len(pool) ** 2 + len(pool) ** 3
    if n_entities > capacity // 2:
        raise ValueError(
            f"'n_entities' is too large for a pool of {len(pool)} words: "
            f"{repr(n_entities)}")

    names: list[str] = []
    seen: set[str] = set()
    while len(names) < n_entities:
        length = int(rng.choice(lengths, p=length_probs))
        picks = rng.integers(len(pool), size=length)
        name = " ".join(pool.words[i] for i in picks)
        if name in seen:
            continue
        seen.add(name)
        names.append(name)
    return names


def generate_sentences(pool: WordPool, n_sentences: int,
                       rng: np.random.Generator) -> list[tuple[str, ...]]:
    """Generates generic (non-entity) sentences of two to five Zipf words."""
    sentences = []
    for _ in range(n_sentences):
        length = int(rng.integers(2, 6))
        sentences.append(tuple(pool.sample(rng, length)))
    return sentences
