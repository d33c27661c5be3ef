from __future__ import annotations

import logging
import math
import threading
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

logger = logging.getLogger(__name__)

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
ENTITY = "ENTITY"
SPECIALS = frozenset({BOS, EOS, UNK, ENTITY})

LN10 = math.log(10.0)
ARPA_NEVER = -99.0

Sentence = tuple[str, ...]
WeightedCorpus = list[tuple[Sentence, float]]


def _check_words(words: Sequence[str], allow_entity: bool = False) -> None:
    if isinstance(words, str) or not isinstance(words, Sequence):
        raise TypeError(f"'words' must be a sequence of tokens: {repr(words)}")
    if len(words) == 0:
        raise ValueError("'words' must not be empty: []")
    forbidden = SPECIALS - {ENTITY} if allow_entity else SPECIALS
    for word in words:
        if not isinstance(word, str) or not word:
            raise TypeError(f"Tokens must be non-empty strings: {repr(word)}")
        if word in forbidden:
            raise ValueError(f"Special tokens are not allowed here: {repr(word)}")


def read_corpus(path: str | Path) -> WeightedCorpus:
    """Reads one sentence per line with an optional leading weight.

    A line is either ``sentence`` (weight 1) or ``weight<TAB>sentence``.

    """
    corpus: WeightedCorpus = []
    with open(path, encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            weight = 1.0
            if "\t" in line:
                head, line = line.split("\t", 1)
                try:
                    weight = float(head)
                except ValueError:
                    raise ValueError(
                        f"Malformed weight on line {line_number}: {repr(head)}"
                    ) from None
            corpus.append((tuple(line.split()), weight))
    return corpus


def write_corpus(path: str | Path, corpus: Iterable[tuple[Sentence, float]]) -> None:
    """Writes a weighted corpus in the format read by ``read_corpus``."""
    with open(path, "w", encoding="utf-8") as f:
        for words, weight in corpus:
            f.write(f"{weight!r}\t{' '.join(words)}\n")


def inject_entity_token(corpus: Sequence[tuple[Sentence, float]],
                        alpha: float) -> WeightedCorpus:
    """Appends the sentence ``ENTITY`` holding a share ``alpha`` of the weight.

    The injected weight is ``alpha * W / (1 - alpha)`` where ``W`` is the
    current total, so existing weights are left untouched.

    """
    if not isinstance(alpha, (int, float)) or not 0 < alpha < 1:
        raise ValueError(f"'alpha' must be within (0, 1): {repr(alpha)}")
    if len(corpus) == 0:
        raise ValueError("'corpus' must not be empty")
    total = math.fsum(weight for _, weight in corpus)
    injected = alpha * total / (1.0 - alpha)
    return [*corpus, ((ENTITY,), injected)]


class _SentenceScorer:
    """Shared chain-rule scoring over padded histories."""
    order: int
    vocab: frozenset[str]
    _cache_lock: threading.Lock

    def _remember(self, cache: dict, key, value: float) -> float:
        # Reads stay lock-free; concurrent misses store the same pure value
        with self._cache_lock:
            return cache.setdefault(key, value)

    def conditional_prob(self, word: str, history: Sequence[str]) -> float:
        raise NotImplementedError

    def _map(self, token: str) -> str:
        return token if token in self.vocab or token == BOS else UNK

    def _padded(self, words: Sequence[str]) -> list[str]:
        return [BOS] * (self.order - 1) + [self._map(w) for w in words] + [EOS]

    def _logprob_tokens(self, words: Sequence[str]) -> float:
        tokens = self._padded(words)
        start = self.order - 1
        total = 0.0
        for j in range(start, len(tokens)):
            context = tuple(tokens[j - start:j])
            total += math.log(self.conditional_prob(tokens[j], context))
        return total

    def sentence_logprob(self, words: Sequence[str]) -> float:
        """Returns ``log P(<s> words </s>)`` in natural log."""
        _check_words(words)
        key = tuple(words)
        cached = self._sentence_cache.get(key)
        if cached is None:
            cached = self._remember(
                self._sentence_cache, key, self._logprob_tokens(key))
        return cached

    def entity_sentence_prob(self) -> float:
        """Returns ``P(<s> ENTITY </s>)``."""
        return math.exp(self._logprob_tokens((ENTITY,)))

    def vocabulary_distribution(self, history: Sequence[str]) -> dict[str, float]:
        """Returns ``P(w | history)`` for every predictable token ``w``.

        ``history`` is given without padding; it is left-padded with ``<s>``.

        """
        padded = [BOS] * (self.order - 1) + [self._map(w) for w in history]
        context = tuple(padded[len(padded) - (self.order - 1):]) if self.order > 1 else ()
        return {w: self.conditional_prob(w, context) for w in sorted(self.vocab)}


class NGramLM(_SentenceScorer):
    """Defines a Witten-Bell interpolated n-gram language model.

    ``P(w|h) = (c(h, w) + T(h) * P(w|h')) / (c(h) + T(h))`` where ``T(h)`` is
    the number of distinct tokens seen after ``h`` and ``h'`` drops the
    oldest token of ``h``. The recursion ends in a uniform distribution over
    the vocabulary, which holds every training word plus ``</s>`` and
    ``<unk>``. Sentences are padded with ``order - 1`` leading ``<s>``.

    The model is immutable after training. Its memo tables only cache pure
    results and are filled under a lock, so one model can score from many
    threads.

    """
    def __init__(self, order: int,
                 counts: list[dict[tuple[str, ...], dict[str, float]]],
                 vocab: frozenset[str]) -> None:
        if not isinstance(order, int) or order < 1:
            raise ValueError(f"'order' must be a positive integer: {repr(order)}")
        if len(counts) != order:
            raise ValueError(f"Expected {order} count tables: {repr(len(counts))}")
        self.order = order
        self.vocab = frozenset(vocab)
        self._counts = counts
        self._totals = [
            {h: math.fsum(table.values()) for h, table in level.items()}
            for level in counts
        ]
        self._uniform = 1.0 / len(self.vocab)
        self._prob_cache: dict[tuple[tuple[str, ...], str], float] = {}
        self._sentence_cache: dict[tuple[str, ...], float] = {}
        self._cache_lock = threading.Lock()

    def _interpolated(self, word: str, context: tuple[str, ...]) -> float:
        p = self._uniform
        for o in range(1, len(context) + 2):
            h = context[len(context) - (o - 1):] if o > 1 else ()
            table = self._counts[o - 1].get(h)
            if table is None:
                break
            distinct = len(table)
            p = (table.get(word, 0.0) + distinct * p) / (self._totals[o - 1][h] + distinct)
        return p

    def conditional_prob(self, word: str, history: Sequence[str]) -> float:
        """Returns ``P(word | history)`` using the last ``order - 1`` tokens.

        Unknown tokens, in ``word`` or ``history``, are read as ``<unk>``.
        ``<s>`` is never predicted.

        """
        if word == BOS:
            raise ValueError("'<s>' is never predicted")
        word = self._map(word)
        context = tuple(self._map(w) for w in history)
        if self.order > 1:
            context = context[len(context) - (self.order - 1):]
            if len(context) < self.order - 1:
                context = (BOS,) * (self.order - 1 - len(context)) + context
        else:
            context = ()
        key = (context, word)
        p = self._prob_cache.get(key)
        if p is None:
            p = self._remember(
                self._prob_cache, key, self._interpolated(word, context))
        return p

    def contexts(self, order: int) -> list[tuple[str, ...]]:
        """Returns the observed contexts of length ``order - 1``."""
        return sorted(self._counts[order - 1])

    def arpa_entries(self) -> list[dict[tuple[str, ...], tuple[float, float | None]]]:
        """Returns the n-gram listing written to ARPA, per order.

        Each entry maps an n-gram to its log10 probability and, when the
        n-gram is itself an observed context, its log10 backoff weight.
        Runs of ``<s>`` that only occur as padding contexts are listed with
        the never-predicted probability -99.

        """
        entries: list[dict[tuple[str, ...], tuple[float, float | None]]] = [
            {} for _ in range(self.order)
        ]
        for w in sorted(self.vocab):
            entries[0][(w,)] = (math.log10(self._interpolated(w, ())), None)
        for o in range(2, self.order + 1):
            for h, table in sorted(self._counts[o - 1].items()):
                for w in sorted(table):
                    entries[o - 1][h + (w,)] = (
                        math.log10(self._interpolated(w, h)), None)
        for o in range(2, self.order + 1):
            for h, table in self._counts[o - 1].items():
                distinct = len(table)
                bow = math.log10(distinct / (self._totals[o - 1][h] + distinct))
                prob, _ = entries[o - 2].get(h, (ARPA_NEVER, None))
                entries[o - 2][h] = (prob, bow)
        entries[0].setdefault((BOS,), (ARPA_NEVER, None))
        return [dict(sorted(level.items())) for level in entries]

    def ngram_counts(self) -> dict[int, int]:
        """Returns the number of listed n-grams per order."""
        return {o + 1: len(level) for o, level in enumerate(self.arpa_entries())}


def train(corpus: Sequence[tuple[Sentence, float]], order: int = 4) -> NGramLM:
    """Trains a Witten-Bell interpolated model on a weighted corpus.

    Every sentence is padded with ``order - 1`` leading ``<s>`` and one
    trailing ``</s>``; weights scale the n-gram counts.

    """
    if not isinstance(order, int) or order < 1:
        raise ValueError(f"'order' must be a positive integer: {repr(order)}")
    if len(corpus) == 0:
        raise ValueError("'corpus' must not be empty")

    counts: list[dict[tuple[str, ...], dict[str, float]]] = [{} for _ in range(order)]
    vocab = {EOS, UNK}
    for words, weight in corpus:
        _check_words(words, allow_entity=True)
        if not weight > 0:
            raise ValueError(f"Sentence weights must be positive: {repr(weight)}")
        vocab.update(words)
        tokens = [BOS] * (order - 1) + list(words) + [EOS]
        for j in range(order - 1, len(tokens)):
            w = tokens[j]
            for o in range(1, order + 1):
                h = tuple(tokens[j - o + 1:j])
                level = counts[o - 1].setdefault(h, {})
                level[w] = level.get(w, 0.0) + weight

    logger.info(
        "trained a %d-gram model on %d sentences (%d tokens in vocabulary)",
        order, len(corpus), len(vocab))
    return NGramLM(order, counts, frozenset(vocab))


def sentence_logprob(lm: _SentenceScorer, words: Sequence[str]) -> float:
    """Returns the natural-log probability of ``<s> words </s>``."""
    return lm.sentence_logprob(words)


@dataclass(frozen=True)
class BoostConfig:
    """The ENTITY share ``alpha`` and the list of names to boost."""
    alpha: float = 0.01
    boosted: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.alpha, (int, float)) or not 0 < self.alpha < 1:
            raise ValueError(f"'alpha' must be within (0, 1): {repr(self.alpha)}")
        boosted = tuple(" ".join(name.split()) for name in self.boosted)
        for name in boosted:
            if not name:
                raise ValueError("Boosted names must not be blank")
            if any(word in SPECIALS for word in name.split()):
                raise ValueError(f"Boosted names must not hold specials: {repr(name)}")
        object.__setattr__(self, "boosted", boosted)

    @property
    def k(self) -> int:
        return len(self.boosted)


class BoostedLM:
    """Defines a base model with ``Q(.|ENTITY)`` spliced in.

    A boosted name is generated both by its word path and by the path
    ``<s> ENTITY </s>`` followed by the expansion ``Q(name|ENTITY)``; its
    probability is the sum of both. Every other sentence keeps its base
    probability. The base model is shared and never modified.

    """
    def __init__(self, base: _SentenceScorer, q: Mapping[str, float]) -> None:
        if not isinstance(base, _SentenceScorer):
            raise TypeError(f"'base' must be a language model: {repr(base)}")
        self.base = base
        self.q = dict(q)
        total = math.fsum(self.q.values())
        if self.q and abs(total - 1.0) > 1e-9:
            raise ValueError(f"'q' must sum to 1: {repr(total)}")
        self.entity_prob = base.entity_sentence_prob()

    def sentence_prob(self, words: Sequence[str]) -> float:
        """Returns the path-sum probability of ``<s> words </s>``."""
        p = math.exp(self.base.sentence_logprob(words))
        q = self.q.get(" ".join(words))
        if q is None:
            return p
        return p + self.entity_prob * q

    def sentence_logprob(self, words: Sequence[str]) -> float:
        """Returns the natural log of ``sentence_prob``."""
        base = self.base.sentence_logprob(words)
        q = self.q.get(" ".join(words))
        if q is None:
            return base
        return _logaddexp(base, math.log(self.entity_prob) + math.log(q))


def _logaddexp(a: float, b: float) -> float:
    """Returns ``log(exp(a) + exp(b))`` without overflow."""
    high, low = (a, b) if a >= b else (b, a)
    return high + math.log1p(math.exp(low - high))


def splice_entity_distribution(lm: _SentenceScorer, cfg: BoostConfig) -> BoostedLM:
    """Splices a uniform ``Q(.|ENTITY)`` over ``cfg.boosted`` into ``lm``."""
    if not isinstance(cfg, BoostConfig):
        raise TypeError(f"'cfg' must be an instance of BoostConfig: {repr(cfg)}")
    if cfg.k == 0:
        raise ValueError("The boosted list must not be empty")
    if ENTITY not in lm.vocab:
        raise ValueError("The base model was not trained with the ENTITY token")
    names = list(dict.fromkeys(cfg.boosted))
    q = {name: 1.0 / len(names) for name in names}
    return BoostedLM(lm, q)


def _format(value: float) -> str:
    return f"{value:.12g}"


def export_arpa(lm: NGramLM) -> str:
    """Writes the interpolated model as an ARPA backoff model.

    A listed n-gram carries its interpolated probability, and every
    observed context carries the weight ``T(h) / (c(h) + T(h))``, which
    reproduces the interpolated probabilities under backoff.

    """
    if not isinstance(lm, NGramLM):
        raise TypeError(f"'lm' must be an instance of NGramLM: {repr(lm)}")
    entries = lm.arpa_entries()

    lines = ["", "\\data\\"]
    for o, level in enumerate(entries, start=1):
        lines.append(f"ngram {o}={len(level)}")
    for o, level in enumerate(entries, start=1):
        lines.append("")
        lines.append(f"\\{o}-grams:")
        for ngram, (prob, bow) in level.items():
            fields = [_format(prob), " ".join(ngram)]
            if bow is not None:
                fields.append(_format(bow))
            lines.append("\t".join(fields))
    lines.append("")
    lines.append("\\end\\")
    return "\n".join(lines) + "\n"


class ArpaLM(_SentenceScorer):
    """Defines a backoff model read from an ARPA document."""
    def __init__(self, order: int,
                 entries: dict[tuple[str, ...], tuple[float, float]]) -> None:
        self.order = order
        self._entries = entries
        self.vocab = frozenset(
            ngram[0] for ngram in entries if len(ngram) == 1 and ngram[0] != BOS)
        self._sentence_cache: dict[tuple[str, ...], float] = {}
        self._cache_lock = threading.Lock()

    def conditional_prob(self, word: str, history: Sequence[str]) -> float:
        word = self._map(word)
        context = tuple(self._map(w) for w in history)
        context = context[len(context) - (self.order - 1):] if self.order > 1 else ()
        backoff = 0.0
        while True:
            entry = self._entries.get(context + (word,))
            if entry is not None:
                return 10.0 ** (entry[0] + backoff)
            if not context:
                raise ValueError(f"Token missing from the unigrams: {repr(word)}")
            backoff += self._entries.get(context, (0.0, 0.0))[1]
            context = context[1:]


def read_arpa(text: str) -> ArpaLM:
    """Parses an ARPA document into a scoring model."""
    declared: dict[int, int] = {}
    entries: dict[tuple[str, ...], tuple[float, float]] = {}
    section = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line == "\\data\\":
            section = 0
            continue
        if line == "\\end\\":
            break
        if line.startswith("\\") and line.endswith("-grams:"):
            section = int(line[1:line.index("-")])
            continue
        if section == 0 and line.startswith("ngram "):
            o, count = line[len("ngram "):].split("=")
            declared[int(o)] = int(count)
            continue
        if not section:
            continue
        fields = line.split()
        prob = float(fields[0])
        ngram = tuple(fields[1:1 + section])
        bow = float(fields[1 + section]) if len(fields) > 1 + section else 0.0
        entries[ngram] = (prob, bow)

    if not declared:
        raise ValueError("Missing \\data\\ section")
    for o, count in declared.items():
        found = sum(1 for ngram in entries if len(ngram) == o)
        if found != count:
            raise ValueError(
                f"Declared {count} {o}-grams but found {found}")
    return ArpaLM(max(declared), entries)
