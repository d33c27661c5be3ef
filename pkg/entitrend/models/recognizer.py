from __future__ import annotations

import hashlib
import json
import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from entitrend.models.ranking import RankedList
from entitrend.models.vocabulary import ALPHABET, WordPool, levenshtein

logger = logging.getLogger(__name__)

EDIT_OPERATIONS = ("substitute", "delete", "insert", "split", "merge")


@dataclass(frozen=True)
class Hypothesis:
    """A candidate transcription with its acoustic-score proxy.

    ``edits`` is the character edit distance to the reference, and the
    acoustic score is ``-strength * edits``.

    """
    words: tuple[str, ...]
    acoustic_logscore: float
    edits: int = 0

    def __post_init__(self) -> None:
        if not self.words:
            raise ValueError("'words' must not be empty")
        if self.acoustic_logscore > 0:
            raise ValueError(
                "'acoustic_logscore' must not be positive: "
                f"{repr(self.acoustic_logscore)}")


@dataclass(frozen=True)
class HypothesisSet:
    """The reference of an utterance and the candidates competing for it."""
    reference: tuple[str, ...]
    candidates: tuple[Hypothesis, ...]

    def __post_init__(self) -> None:
        seen = set()
        for hypothesis in self.candidates:
            if hypothesis.words in seen:
                raise ValueError(
                    f"Candidates must be distinct: {repr(hypothesis.words)}")
            seen.add(hypothesis.words)
        if self.reference not in seen:
            raise ValueError(
                f"The reference must be a candidate: {repr(self.reference)}")


@dataclass(frozen=True)
class DecodeConfig:
    """Settings of the simulated recognizer.

    ``confusion_strength`` is the acoustic penalty per character edit;
    ``target_error_rate``, when set, lets the experiment calibrate it.

    """
    lm_weight: float = 1.0
    confusion_count: int = 9
    confusion_strength: float = 4.0
    seed: int = 0
    target_error_rate: float | None = 0.15

    def __post_init__(self) -> None:
        if not isinstance(self.lm_weight, (int, float)) or not self.lm_weight >= 0:
            raise ValueError(f"'lm_weight' must not be negative: {repr(self.lm_weight)}")
        strength = self.confusion_strength
        if not isinstance(strength, (int, float)) or not strength > 0:
            raise ValueError(
                f"'confusion_strength' must be greater than zero: {repr(strength)}")
        if not isinstance(self.confusion_count, int) or self.confusion_count <= 0:
            raise ValueError(
                "'confusion_count' must be a positive integer: "
                f"{repr(self.confusion_count)}")
        if not isinstance(self.seed, int):
            raise TypeError(f"'seed' must be an integer: {repr(self.seed)}")
        target = self.target_error_rate
        if target is not None and not 0 < target < 1:
            raise ValueError(
                f"'target_error_rate' must be within (0, 1): {repr(target)}")


def _name_rng(words: Sequence[str], seed: int) -> np.random.Generator:
    digest = hashlib.blake2b(
        " ".join(words).encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng([seed & (2**63 - 1), int.from_bytes(digest, "big")])


def _edit_once(words: list[str], vocab: WordPool,
               rng: np.random.Generator) -> list[str] | None:
    operation = EDIT_OPERATIONS[rng.integers(len(EDIT_OPERATIONS))]
    pos = int(rng.integers(len(words)))
    word = words[pos]
    letter = ALPHABET[rng.integers(len(ALPHABET))]
    match operation:
        case "substitute" | "delete" | "insert":
            i = int(rng.integers(len(word) + (operation == "insert")))
            if operation == "substitute":
                edited = word[:i] + letter + word[i + 1:]
            elif operation == "delete":
                edited = word[:i] + word[i + 1:]
            else:
                edited = word[:i] + letter + word[i:]
            if not edited:
                return None
            snapped = vocab.nearest(edited, exclude=frozenset({word}), slack=1)
            if snapped is None:
                return None
            return words[:pos] + [snapped] + words[pos + 1:]
        case "split":
            if len(word) < 4:
                return None
            i = int(rng.integers(2, len(word) - 1))
            left = vocab.nearest(word[:i], slack=1)
            right = vocab.nearest(word[i:], slack=1)
            if left is None or right is None:
                return None
            return words[:pos] + [left, right] + words[pos + 1:]
        case "merge":
            if len(words) < 2:
                return None
            pos = min(pos, len(words) - 2)
            merged = vocab.nearest(words[pos] + words[pos + 1], slack=1)
            if merged is None:
                return None
            return words[:pos] + [merged] + words[pos + 2:]
    return None


def generate_confusions(name: Sequence[str], vocab: WordPool,
                        cfg: DecodeConfig) -> HypothesisSet:
    """Builds the hypothesis set of a spoken name.

    Confusions come from character edits (substitution, deletion,
    insertion, word split, word merge) snapped back to nearby pool words,
    preferring frequent ones. Up to ``cfg.confusion_count`` distinct
    confusions are produced; a very small pool may yield fewer. The random
    stream is seeded from ``cfg.seed`` and the name, so the set does not
    depend on call order.

    """
    if isinstance(name, str):
        name = name.split()
    reference = tuple(word.casefold() for word in name)
    if not reference:
        raise ValueError("'name' must not be empty")
    if not isinstance(vocab, WordPool) or len(vocab) == 0:
        raise ValueError(f"'vocab' must be a non-empty WordPool: {repr(vocab)}")

    rng = _name_rng(reference, cfg.seed)
    reference_text = " ".join(reference)
    found: dict[tuple[str, ...], int] = {}
    attempts = 0
    while len(found) < cfg.confusion_count and attempts < 30 * cfg.confusion_count:
        attempts += 1
        words = _edit_once(list(reference), vocab, rng)
        if words is not None and rng.random() < 0.35:
            words = _edit_once(words, vocab, rng) or words
        if words is None:
            continue
        confusion = tuple(words)
        if confusion == reference or confusion in found:
            continue
        found[confusion] = levenshtein(reference_text, " ".join(confusion))

    if len(found) < cfg.confusion_count:
        logger.debug(
            "only %d confusions for %r", len(found), reference_text)
    candidates = [Hypothesis(reference, 0.0, 0)]
    candidates += [
        Hypothesis(words, -cfg.confusion_strength * edits, edits)
        for words, edits in found.items()
    ]
    return HypothesisSet(reference, tuple(candidates))


def rescore(hset: HypothesisSet, strength: float) -> HypothesisSet:
    """Returns ``hset`` with acoustic scores recomputed for ``strength``."""
    return HypothesisSet(hset.reference, tuple(
        Hypothesis(h.words, -strength * h.edits, h.edits) for h in hset.candidates))


def combined_score(hypothesis: Hypothesis, lm, cfg: DecodeConfig) -> float:
    """Returns ``acoustic + lm_weight * log P(words)``."""
    return hypothesis.acoustic_logscore + cfg.lm_weight * lm.sentence_logprob(
        hypothesis.words)


def decode(hset: HypothesisSet, lm, cfg: DecodeConfig) -> Hypothesis:
    """Returns the candidate maximizing the combined score.

    ``lm`` is any model with ``sentence_logprob``; a boosted model scores
    boosted names by the sum of both paths. Ties go to the lexicographically
    smallest word sequence.

    """
    if not isinstance(hset, HypothesisSet):
        raise TypeError(f"'hset' must be an instance of HypothesisSet: {repr(hset)}")
    return min(
        hset.candidates,
        key=lambda h: (-combined_score(h, lm, cfg), h.words))


def _as_words(value: str | Sequence[str]) -> list[str]:
    return value.split() if isinstance(value, str) else list(value)


def word_error_rate(pairs: Sequence[tuple[str | Sequence[str], str | Sequence[str]]]
                    ) -> tuple[float, list[tuple[int, int]]]:
    """Returns the corpus WER and per-utterance ``(edits, ref_len)``."""
    if len(pairs) == 0:
        raise ValueError("'pairs' must not be empty")
    per_utterance = []
    for reference, hypothesis in pairs:
        ref = _as_words(reference)
        if not ref:
            raise ValueError("References must not be empty")
        per_utterance.append((levenshtein(ref, _as_words(hypothesis)), len(ref)))
    edits = sum(e for e, _ in per_utterance)
    words = sum(n for _, n in per_utterance)
    return edits / words, per_utterance


def is_recognized(hset: HypothesisSet, lm, cfg: DecodeConfig) -> bool:
    """Checks whether decoding yields the reference word for word."""
    decoded = decode(hset, lm, cfg)
    return [w.casefold() for w in decoded.words] == list(hset.reference)


def feedback_filter(ranked: RankedList, base_lm, vocab: WordPool,
                    cfg: DecodeConfig, k: int,
                    cache: dict[str, bool] | None = None) -> list[str]:
    """Selects up to ``k`` names the unboosted recognizer gets wrong.

    The ranking is walked in order; every name is synthesized into a
    hypothesis set and decoded with ``base_lm``, and names recognized
    exactly are skipped. ``cache`` may carry recognition outcomes between
    calls that share the model and settings.

    """
    if not isinstance(ranked, RankedList):
        raise TypeError(f"'ranked' must be an instance of RankedList: {repr(ranked)}")
    if not isinstance(k, int) or k < 0:
        raise ValueError(f"'k' must be a non-negative integer: {repr(k)}")
    if cache is None:
        cache = {}

    selected: list[str] = []
    for entity in ranked.entities:
        if len(selected) >= k:
            break
        recognized = cache.get(entity)
        if recognized is None:
            hset = generate_confusions(entity.split(), vocab, cfg)
            recognized = is_recognized(hset, base_lm, cfg)
            cache[entity] = recognized
        if not recognized:
            selected.append(entity)
    logger.debug("feedback filter kept %d of budget %d", len(selected), k)
    return selected


def calibrate_confusion_strength(hsets: Sequence[HypothesisSet], lm,
                                 lm_weight: float, target: float) -> float:
    """Chooses the acoustic strength giving a target misrecognition rate.

    For every utterance the reference loses exactly when the strength is
    below ``max_c lm_weight * (log P(c) - log P(ref)) / edits(c)``. The
    strength is set between the order statistics around the target
    fraction of these critical values.

    """
    if not hsets:
        raise ValueError("'hsets' must not be empty")
    if not 0 < target < 1:
        raise ValueError(f"'target' must be within (0, 1): {repr(target)}")

    critical = []
    for hset in hsets:
        reference = lm.sentence_logprob(hset.reference)
        worst = 0.0
        for h in hset.candidates:
            if h.edits == 0:
                continue
            gap = lm_weight * (lm.sentence_logprob(h.words) - reference)
            worst = max(worst, gap / h.edits)
        critical.append(worst)

    values = np.sort(np.array(critical))[::-1]
    m = int(round(target * values.size))
    floor = 1e-6
    if m == 0:
        strength = values[0] + 1.0
    elif m >= values.size:
        strength = values[-1] / 2.0
    else:
        strength = (values[m - 1] + values[m]) / 2.0
    if strength <= floor:
        logger.warning(
            "too few confusable utterances for a %.2f error rate; strength "
            "clamped", target)
        strength = floor
    logger.info(
        "calibrated confusion strength %.4f on %d utterances", strength,
        values.size)
    return float(strength)


@dataclass(frozen=True)
class DecodeTrace:
    """The audit record of one decoded utterance."""
    reference: tuple[str, ...]
    hypothesis: tuple[str, ...]
    edits: int
    ref_len: int
    scores: tuple[tuple[str, float, float], ...]

    def to_dict(self) -> dict:
        return {
            "reference": " ".join(self.reference),
            "hypothesis": " ".join(self.hypothesis),
            "edits": self.edits,
            "ref_len": self.ref_len,
            "candidates": [
                {"words": words, "acoustic": acoustic, "lm": lm_score}
                for words, acoustic, lm_score in self.scores
            ],
        }


def trace_decode(hset: HypothesisSet, lm, cfg: DecodeConfig) -> DecodeTrace:
    """Decodes ``hset`` and keeps the score breakdown of every candidate."""
    best = decode(hset, lm, cfg)
    scores = tuple(
        (" ".join(h.words), h.acoustic_logscore, lm.sentence_logprob(h.words))
        for h in hset.candidates)
    return DecodeTrace(
        hset.reference, best.words, levenshtein(list(hset.reference), list(best.words)),
        len(hset.reference), scores)


def write_traces(path: str | Path, traces: Iterable[DecodeTrace]) -> None:
    """Writes decode traces as JSON Lines."""
    with open(path, "w", encoding="utf-8") as f:
        for trace in traces:
            f.write(json.dumps(trace.to_dict(), ensure_ascii=False) + "\n")


def read_traces(path: str | Path) -> list[tuple[int, int]]:
    """Reads ``(edits, ref_len)`` pairs back from a trace file."""
    with open(path, encoding="utf-8") as f:
        return [
            (int(row["edits"]), int(row["ref_len"]))
            for row in map(json.loads, filter(str.strip, f))
        ]


def write_utterances(path: str | Path, references: Iterable[str]) -> None:
    """Writes an utterance set as JSON Lines ``{"reference": ...}``."""
    with open(path, "w", encoding="utf-8") as f:
        for reference in references:
            f.write(json.dumps({"reference": reference}, ensure_ascii=False) + "\n")


def read_utterances(path: str | Path) -> list[str]:
    """Reads the references of an utterance set."""
    with open(path, encoding="utf-8") as f:
        return [json.loads(line)["reference"] for line in f if line.strip()]


def relative_change(before: float, after: float) -> float:
    """Returns ``(after - before) / before``, 0 when both are 0."""
    if before == 0:
        return 0.0 if after == 0 else math.inf
    return (after - before) / before
