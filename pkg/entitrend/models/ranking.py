from __future__ import annotations

import csv
import json
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import betainc

from entitrend.models.features import DEFAULT_PARAMS, FeatureParams, feature_value
from entitrend.models.querylog import FrequencyTable, candidate_set

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RankedList:
    """Entities ordered by descending score, ties by ascending entity id."""
    entries: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        seen = set()
        previous = None
        for entity, score in self.entries:
            if entity in seen:
                raise ValueError(f"Duplicate entity in ranking: {repr(entity)}")
            seen.add(entity)
            key = (-score, entity)
            if previous is not None and not previous < key:
                raise ValueError(
                    f"Entries are not in (score desc, id asc) order: {repr(entity)}")
            previous = key

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def entities(self) -> list[str]:
        return [entity for entity, _ in self.entries]


def rank_scores(scores: Mapping[str, float] | Iterable[tuple[str, float]]
                ) -> RankedList:
    """Sorts ``(entity, score)`` pairs into a ranked list."""
    pairs = scores.items() if isinstance(scores, Mapping) else scores
    entries = []
    for entity, score in pairs:
        value = float(score)
        if math.isnan(value):
            raise ValueError(f"Scores must not be NaN: {repr(entity)}")
        entries.append((entity, value))
    entries.sort(key=lambda pair: (-pair[1], pair[0]))
    return RankedList(tuple(entries))


def oracle_ranking(labels: Mapping[str, bool]) -> RankedList:
    """Ranks the true trending entities first, using labels as scores."""
    return rank_scores({e: 1.0 if y else 0.0 for e, y in labels.items()})


class BaseHeuristic:
    """Defines the base class of every heuristic scorer.

    A heuristic scores the candidate set of a frequency table for target
    window ``n`` without any training. You may override ``score_entity`` in
    a subclass to define another scoring rule. ``lookback`` is the number of
    windows before ``n`` the rule reads.

    """
    name = "base"
    lookback = 1

    def __init__(self, params: FeatureParams = DEFAULT_PARAMS,
                 seed: int = 0) -> None:
        if not isinstance(params, FeatureParams):
            raise TypeError(
                f"'params' must be an instance of FeatureParams: {repr(params)}")
        self.params = params
        self.seed = seed

    def score_entity(self, table: FrequencyTable, n: int, entity: str) -> float:
        """Returns the score of a single entity."""
        raise NotImplementedError

    def rank(self, table: FrequencyTable, n: int,
             candidates: Iterable[str] | None = None) -> RankedList:
        """Scores the candidates (the candidate set by default) and ranks them."""
        if candidates is None:
            candidates = candidate_set(table, n)
        entities = sorted(candidates)
        return rank_scores(
            [(e, self.score_entity(table, n, e)) for e in entities])


class RandomHeuristic(BaseHeuristic):
    """Scores entities uniformly at random from a seeded generator."""
    name = "random"

    def rank(self, table: FrequencyTable, n: int,
             candidates: Iterable[str] | None = None) -> RankedList:
        if candidates is None:
            candidates = candidate_set(table, n)
        entities = sorted(candidates)
        rng = np.random.default_rng(self.seed)
        return rank_scores(zip(entities, rng.random(len(entities)).tolist()))


class PopularLastWeek(BaseHeuristic):
    """Scores entities by their relative frequency F1 at window ``n-1``."""
    name = "popular_last_week"

    def score_entity(self, table: FrequencyTable, n: int, entity: str) -> float:
        return feature_value(1, table, n - 1, entity, self.params)


class SuddenlyPopular(BaseHeuristic):
    """Scores entities by F6 at ``n-1``: popular now, unpopular before."""
    name = "suddenly_popular"
    lookback = 2

    def score_entity(self, table: FrequencyTable, n: int, entity: str) -> float:
        return feature_value(6, table, n - 1, entity, self.params)


class TrendingLastWeek(BaseHeuristic):
    """Scores entities by the count ratio F7 at window ``n-1``."""
    name = "trending_last_week"
    lookback = 2

    def score_entity(self, table: FrequencyTable, n: int, entity: str) -> float:
        return feature_value(7, table, n - 1, entity, self.params)


HEURISTICS = {
    cls.name: cls
    for cls in (RandomHeuristic, PopularLastWeek, SuddenlyPopular, TrendingLastWeek)
}


def heuristic_score(name: str, table: FrequencyTable, n: int, seed: int = 0,
                    params: FeatureParams = DEFAULT_PARAMS,
                    candidates: Iterable[str] | None = None) -> RankedList:
    """Ranks the candidates of target window ``n`` with a named heuristic."""
    if name not in HEURISTICS:
        raise ValueError(
            "Unsupported value. The value of 'name' must be any one of "
            f"{', '.join(HEURISTICS)}: {repr(name)}")
    if not isinstance(n, int) or not 2 <= n <= table.n_windows:
        raise ValueError(f"'n' must be within [2, {table.n_windows}]: {repr(n)}")
    heuristic = HEURISTICS[name](params, seed)
    if n <= heuristic.lookback:
        raise ValueError(
            f"Heuristic {name} reads {heuristic.lookback} windows before n, so "
            f"'n' must be at least {heuristic.lookback + 1}: {repr(n)}")
    return heuristic.rank(table, n, candidates)


def _count_positives(labels: Mapping[str, bool]) -> int:
    positives = sum(1 for y in labels.values() if y)
    if positives == 0:
        raise ValueError("'labels' must contain at least one positive")
    return positives


def average_precision(ranked: RankedList, labels: Mapping[str, bool]) -> float:
    """Returns the average precision of a ranking over the whole list.

    Precision is accumulated at the rank of each positive and divided by the
    number of positives in ``labels``, so positives missing from the ranking
    contribute zero.

    """
    positives = _count_positives(labels)
    hits = 0
    total = 0.0
    for rank, entity in enumerate(ranked.entities, start=1):
        try:
            relevant = labels[entity]
        except KeyError:
            raise ValueError(f"Ranked entity has no label: {repr(entity)}") from None
        if relevant:
            hits += 1
            total += hits / rank
    return total / positives


def precision_recall_at_k(ranked: RankedList, labels: Mapping[str, bool],
                          k: int) -> tuple[float, float]:
    """Returns ``(precision@k, recall@k)``.

    Precision divides the hits in the top ``k`` by ``min(k, len(ranked))``.

    """
    if not isinstance(k, int) or k < 1:
        raise ValueError(f"'k' must be a positive integer: {repr(k)}")
    positives = _count_positives(labels)
    top = ranked.entities[:k]
    if not top:
        return 0.0, 0.0
    hits = sum(1 for entity in top if labels.get(entity, False))
    return hits / len(top), hits / positives


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> float:
    """Returns the two-tailed p-value of a paired Student's t-test.

    The t statistic is computed on the differences ``a - b`` and the tail
    probability comes from the regularized incomplete beta function with
    ``len(a) - 1`` degrees of freedom. When every difference is equal (which
    includes ``a == b``), the p-value is 1 by convention.

    """
    x = np.asarray(a, dtype=np.float64)
    z = np.asarray(b, dtype=np.float64)
    if x.shape != z.shape or x.ndim != 1:
        raise ValueError(
            f"'a' and 'b' must be paired sequences: {repr((x.shape, z.shape))}")
    if x.size < 2:
        raise ValueError(f"At least two pairs are needed: {repr(x.size)}")

    d = x - z
    if np.all(d == d[0]):
        return 1.0
    n = d.size
    sd = float(np.std(d, ddof=1))
    t = float(np.mean(d)) / (sd / math.sqrt(n))
    df = n - 1
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


@dataclass
class EvalReport:
    """Evaluation of one method: AP plus precision, recall and WER per k."""
    ap: float | None
    per_k: dict[int, dict[str, float | None]] = field(default_factory=dict)
    p_value: float | None = None

    def __post_init__(self) -> None:
        if self.ap is not None and not 0.0 <= self.ap <= 1.0:
            raise ValueError(f"'ap' must be within [0, 1]: {repr(self.ap)}")

    def to_dict(self) -> dict:
        return {
            "ap": self.ap,
            "per_k": {str(k): dict(v) for k, v in sorted(self.per_k.items())},
            "p_value": self.p_value,
        }


def evaluate_ranking(ranked: RankedList, labels: Mapping[str, bool],
                     k_cuts: Sequence[int]) -> EvalReport:
    """Computes AP and precision/recall at every cut."""
    report = EvalReport(average_precision(ranked, labels))
    for k in k_cuts:
        precision, recall = precision_recall_at_k(ranked, labels, k)
        report.per_k[k] = {"precision": precision, "recall": recall}
    return report


def write_ranking_csv(path: str | Path, ranked: RankedList) -> None:
    """Writes a ranking as CSV ``rank,entity,score``."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["rank", "entity", "score"])
        for rank, (entity, value) in enumerate(ranked.entries, start=1):
            writer.writerow([rank, entity, repr(value)])


def read_ranking_csv(path: str | Path) -> RankedList:
    """Reads a ranking written by ``write_ranking_csv``."""
    with open(path, encoding="utf-8", newline="") as f:
        pairs = [(row["entity"], float(row["score"])) for row in csv.DictReader(f)]
    return rank_scores(pairs)


def write_report_json(path: str | Path, report: EvalReport) -> None:
    """Writes an evaluation report as JSON."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
