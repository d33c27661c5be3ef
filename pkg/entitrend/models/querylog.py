from __future__ import annotations

import csv
import json
import logging
import sys
from collections import Counter
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType

import numpy as np

from entitrend.models.vocabulary import (
    WordPool,
    generate_entity_names,
    generate_word_pool
)

logger = logging.getLogger(__name__)

WEEK = 604800


def normalize_entity(name: str) -> str:
    """Case-folds an entity name and collapses its whitespace.

    The result is interned, so equal names share one object and the mapping
    between names and ids stays bijective.

    """
    if not isinstance(name, str):
        raise TypeError(f"'name' must be a string: {repr(name)}")
    normalized = " ".join(name.casefold().split())
    if not normalized:
        raise ValueError(f"'name' must not be blank: {repr(name)}")
    return sys.intern(normalized)


@dataclass(frozen=True, slots=True)
class QueryRecord:
    """One line of a query log: a timestamp and the queried entity."""
    timestamp: int
    entity: str

    def __post_init__(self) -> None:
        if not isinstance(self.timestamp, int):
            raise TypeError(
                f"'timestamp' must be an integer: {repr(self.timestamp)}")
        if self.timestamp < 0:
            raise ValueError(
                f"'timestamp' must not be negative: {repr(self.timestamp)}")
        if not isinstance(self.entity, str) or not self.entity:
            raise TypeError(
                f"'entity' must be a non-empty string: {repr(self.entity)}")


@dataclass(frozen=True)
class WindowConfig:
    """Defines ``n_windows`` consecutive half-open windows of equal length.

    Window ``i`` (1-based) covers ``[start + (i-1)*window_len, start +
    i*window_len)``.

    """
    start: int = 0
    window_len: int = WEEK
    n_windows: int = 8

    def __post_init__(self) -> None:
        values = {
            "start": self.start, "window_len": self.window_len,
            "n_windows": self.n_windows
        }
        for key in values:
            value = values.get(key)
            if not isinstance(value, int) or isinstance(value, bool):
                raise TypeError(f"'{key}' must be an integer: {repr(value)}")
        if self.start < 0:
            raise ValueError(f"'start' must not be negative: {repr(self.start)}")
        if self.window_len <= 0:
            raise ValueError(
                f"'window_len' must be greater than zero: {repr(self.window_len)}")
        if self.n_windows < 2:
            raise ValueError(
                f"'n_windows' must be at least 2: {repr(self.n_windows)}")

    @property
    def end(self) -> int:
        """The first timestamp after the last window."""
        return self.start + self.n_windows * self.window_len

    def bounds(self, i: int) -> tuple[int, int]:
        """Returns ``(t_i, t_{i+1})`` of window ``i``."""
        if not 1 <= i <= self.n_windows:
            raise ValueError(
                f"'i' must be within [1, {self.n_windows}]: {repr(i)}")
        t_i = self.start + (i - 1) * self.window_len
        return (t_i, t_i + self.window_len)

    def window_of(self, timestamp: int) -> int | None:
        """Returns the window index holding ``timestamp``, or None."""
        if not self.start <= timestamp < self.end:
            return None
        return (timestamp - self.start) // self.window_len + 1


class FrequencyTable:
    """Holds the counts ``f(T_i, e)`` of entities per window.

    Only positive counts are stored; absent pairs read as zero. The table is
    immutable once built and may be shared read-only between threads.

    """
    def __init__(self, config: WindowConfig,
                 counts: Mapping[tuple[int, str], int]) -> None:
        if not isinstance(config, WindowConfig):
            raise TypeError(
                f"'config' must be an instance of WindowConfig: {repr(config)}")
        self.config = config

        by_window: dict[int, dict[str, int]] = {
            i: {} for i in range(1, config.n_windows + 1)
        }
        for (i, entity), count in sorted(counts.items()):
            if not 1 <= i <= config.n_windows:
                raise ValueError(
                    f"Window index out of range [1, {config.n_windows}]: "
                    f"{repr(i)}")
            if not isinstance(count, (int, np.integer)) or count < 1:
                raise ValueError(
                    f"Stored counts must be positive integers: {repr(count)}")
            by_window[i][entity] = int(count)

        self._windows = MappingProxyType(
            {i: MappingProxyType(window) for i, window in by_window.items()})
        self._totals = {i: sum(w.values()) for i, w in by_window.items()}

    @property
    def n_windows(self) -> int:
        return self.config.n_windows

    def count(self, i: int, entity: str) -> int:
        """Returns ``f(T_i, entity)``, zero when absent."""
        return self._windows[i].get(entity, 0)

    def window(self, i: int) -> Mapping[str, int]:
        """Returns the read-only entity counts of window ``i``."""
        return self._windows[i]

    def total(self, i: int) -> int:
        """Returns the sum of all retained counts in window ``i``."""
        return self._totals[i]

    def items(self) -> list[tuple[int, str, int]]:
        """Returns every stored ``(window, entity, count)`` in sorted order."""
        return [
            (i, entity, count)
            for i in range(1, self.n_windows + 1)
            for entity, count in sorted(self._windows[i].items())
        ]

    def restrict(self, first: int, last: int) -> FrequencyTable:
        """Returns the windows ``first..last`` re-indexed from 1.

        The new window configuration starts at ``t_first``, so ``n`` in the
        restricted table always refers to its last window.

        """
        if not 1 <= first < last <= self.n_windows:
            raise ValueError(
                f"'first' and 'last' must satisfy 1 <= first < last <= "
                f"{self.n_windows}: {repr((first, last))}")
        config = WindowConfig(
            start=self.config.bounds(first)[0],
            window_len=self.config.window_len,
            n_windows=last - first + 1
        )
        counts = {
            (i - first + 1, entity): count
            for i in range(first, last + 1)
            for entity, count in self._windows[i].items()
        }
        return FrequencyTable(config, counts)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FrequencyTable):
            return NotImplemented
        return self.config == other.config and self.items() == other.items()


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic query-log generator."""
    n_entities: int = 20000
    n_windows: int = 8
    zipf_exponent: float = 1.0
    base_volume: float = 100000.0
    trend_fraction: float = 0.05
    trend_multiplier_range: tuple[float, float] = (3.0, 10.0)
    sample_threshold: int = 3
    seed: int = 0
    start: int = 0
    window_len: int = WEEK
    n_words: int = 4000

    def __post_init__(self) -> None:
        integers = {
            "n_entities": self.n_entities, "n_windows": self.n_windows,
            "sample_threshold": self.sample_threshold, "seed": self.seed,
            "start": self.start, "window_len": self.window_len,
            "n_words": self.n_words
        }
        for key in integers:
            value = integers.get(key)
            if not isinstance(value, int) or isinstance(value, bool):
                raise TypeError(f"'{key}' must be an integer: {repr(value)}")
        if self.n_entities <= 0:
            raise ValueError(
                f"'n_entities' must be greater than zero: {repr(self.n_entities)}")
        if self.n_windows < 2:
            raise ValueError(
                f"'n_windows' must be at least 2: {repr(self.n_windows)}")
        if self.zipf_exponent <= 0:
            raise ValueError(
                "'zipf_exponent' must be greater than zero: "
                f"{repr(self.zipf_exponent)}")
        if self.base_volume <= 0:
            raise ValueError(
                f"'base_volume' must be greater than zero: {repr(self.base_volume)}")
        if not 0 <= self.trend_fraction < 1:
            raise ValueError(
                "'trend_fraction' must be within [0, 1): "
                f"{repr(self.trend_fraction)}")
        low, high = self.trend_multiplier_range
        if not 0 < low <= high:
            raise ValueError(
                "'trend_multiplier_range' must satisfy 0 < low <= high: "
                f"{repr(self.trend_multiplier_range)}")
        if self.sample_threshold < 0:
            raise ValueError(
                "'sample_threshold' must not be negative: "
                f"{repr(self.sample_threshold)}")
        # Normalize JSON lists into a hashable tuple
        object.__setattr__(
            self, "trend_multiplier_range", (float(low), float(high)))

    @property
    def window(self) -> WindowConfig:
        return WindowConfig(self.start, self.window_len, self.n_windows)


@dataclass(frozen=True)
class TrendEvent:
    """An injected trend: the entity's rate jumps from ``onset_window`` on."""
    entity: str
    onset_window: int
    multiplier: float


@dataclass(frozen=True)
class SyntheticLog:
    """The output of the generator: records plus ground-truth metadata.

    ``entities`` lists names in popularity rank order, and ``pool`` is the
    word pool the names were built from.

    """
    records: tuple[QueryRecord, ...]
    trend_events: tuple[TrendEvent, ...]
    entities: tuple[str, ...]
    pool: WordPool = field(compare=False)


def generate_synthetic_log(cfg: SynthConfig) -> SyntheticLog:
    """Generates a seeded Zipf + Poisson query log with injected trends.

    Entity base rates follow a Zipf law scaled to ``cfg.base_volume``
    queries per window. A ``trend_fraction`` of the entities receives one
    onset window ``w >= 2`` from which its rate is multiplied by a factor
    drawn uniformly from ``trend_multiplier_range``. Per-window counts are
    Poisson draws, and every query gets a uniform timestamp inside its
    window. Records are ordered by timestamp, then entity.

    """
    if not isinstance(cfg, SynthConfig):
        raise TypeError(f"'cfg' must be an instance of SynthConfig: {repr(cfg)}")

    rng = np.random.default_rng(cfg.seed)
    pool = generate_word_pool(
        cfg.n_words, seed=int(rng.integers(2**63)))
    names = [
        normalize_entity(name)
        for name in generate_entity_names(pool, cfg.n_entities, rng)
    ]

    ranks = np.arange(1, cfg.n_entities + 1, dtype=np.float64)
    weights = ranks ** -cfg.zipf_exponent
    base_rates = cfg.base_volume * weights / weights.sum()
    rates = np.tile(base_rates, (cfg.n_windows, 1))

    # Inject trend events
    n_trending = int(round(cfg.trend_fraction * cfg.n_entities))
    chosen = np.sort(rng.choice(cfg.n_entities, size=n_trending, replace=False))
    onsets = rng.integers(2, cfg.n_windows + 1, size=n_trending)
    low, high = cfg.trend_multiplier_range
    multipliers = rng.uniform(low, high, size=n_trending)
    events = []
    for j, onset, multiplier in zip(chosen, onsets, multipliers):
        rates[onset - 1:, j] *= multiplier
        events.append(TrendEvent(names[j], int(onset), float(multiplier)))

    counts = rng.poisson(rates)

    records: list[QueryRecord] = []
    for i in range(cfg.n_windows):
        entity_index = np.repeat(np.arange(cfg.n_entities), counts[i])
        t_i = cfg.start + i * cfg.window_len
        timestamps = t_i + rng.integers(
            0, cfg.window_len, size=entity_index.size)
        order = np.lexsort((entity_index, timestamps))
        records.extend(
            QueryRecord(int(timestamps[k]), names[entity_index[k]])
            for k in order
        )

    logger.info(
        "generated %d records for %d entities over %d windows "
        "(%d trend events)", len(records), cfg.n_entities, cfg.n_windows,
        len(events))
    return SyntheticLog(tuple(records), tuple(events), tuple(names), pool)


def aggregate(records: Iterable[QueryRecord], cfg: WindowConfig,
              sample_threshold: int = 0) -> FrequencyTable:
    """Counts records per (window, entity) and applies the sample threshold.

    Records outside ``[start, start + n*window_len)`` are dropped. Pairs
    whose count is below ``sample_threshold`` are removed after counting.

    """
    if not isinstance(cfg, WindowConfig):
        raise TypeError(f"'cfg' must be an instance of WindowConfig: {repr(cfg)}")
    if not isinstance(sample_threshold, int) or sample_threshold < 0:
        raise ValueError(
            "'sample_threshold' must be a non-negative integer: "
            f"{repr(sample_threshold)}")

    counter: Counter[tuple[int, str]] = Counter()
    dropped = 0
    for record in records:
        i = cfg.window_of(record.timestamp)
        if i is None:
            dropped += 1
            continue
        counter[(i, record.entity)] += 1

    counts = {
        key: count for key, count in counter.items()
        if count >= sample_threshold
    }
    if dropped:
        logger.debug("dropped %d out-of-range records", dropped)
    logger.debug(
        "aggregated %d (window, entity) pairs, %d kept after threshold %d",
        len(counter), len(counts), sample_threshold)
    return FrequencyTable(cfg, counts)


def _check_target(table: FrequencyTable, n: int) -> None:
    if not isinstance(table, FrequencyTable):
        raise TypeError(
            f"'table' must be an instance of FrequencyTable: {repr(table)}")
    if not isinstance(n, int) or not 2 <= n <= table.n_windows:
        raise ValueError(
            f"'n' must be within [2, {table.n_windows}]: {repr(n)}")


def candidate_set(table: FrequencyTable, n: int) -> set[str]:
    """Returns every entity counted in any of the windows ``1..n-1``."""
    _check_target(table, n)
    candidates: set[str] = set()
    for i in range(1, n):
        candidates.update(table.window(i))
    return candidates


def label_trending(table: FrequencyTable, n: int, c: float) -> dict[str, bool]:
    """Labels each candidate by ``f(T_n, e) >= c * f(T_{n-1}, e)``.

    The keys are the candidate set in lexicographic order. Absent counts
    read as zero, so a candidate missing from window ``n-1`` but present in
    window ``n`` is trending.

    """
    _check_target(table, n)
    if not isinstance(c, (int, float)) or c <= 0:
        raise ValueError(f"'c' must be greater than zero: {repr(c)}")
    return {
        entity: table.count(n, entity) >= c * table.count(n - 1, entity)
        for entity in sorted(candidate_set(table, n))
    }


def write_query_log(path: str | Path, records: Iterable[QueryRecord]) -> None:
    """Writes records as JSON Lines ``{"ts": ..., "entity": ...}``."""
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(
                {"ts": record.timestamp, "entity": record.entity},
                ensure_ascii=False) + "\n")


def _timestamp(value) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TypeError(f"'ts' must be an integer: {repr(value)}")
    if isinstance(value, float) and not value.is_integer():
        raise ValueError(f"'ts' must be a whole number of seconds: {repr(value)}")
    return int(value)


def read_query_log(path: str | Path) -> list[QueryRecord]:
    """Reads a JSON Lines query log, normalizing entity names."""
    records = []
    with open(path, encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                records.append(
                    QueryRecord(_timestamp(row["ts"]), normalize_entity(row["entity"])))
            except (KeyError, ValueError, TypeError) as err:
                raise ValueError(
                    f"Malformed query log line {line_number}: {err}") from None
    return records


def write_frequency_csv(path: str | Path, table: FrequencyTable) -> None:
    """Writes a table as CSV with the header ``window,entity,count``."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["window", "entity", "count"])
        for i, entity, count in table.items():
            writer.writerow([i, entity, count])


def read_frequency_csv(path: str | Path, config: WindowConfig) -> FrequencyTable:
    """Reads a CSV written by ``write_frequency_csv``."""
    counts = {}
    with open(path, encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            counts[(int(row["window"]), normalize_entity(row["entity"]))] = (
                int(row["count"]))
    return FrequencyTable(config, counts)


def write_trend_events(path: str | Path, events: Iterable[TrendEvent]) -> None:
    """Writes ground-truth trend events as JSON Lines."""
    with open(path, "w", encoding="utf-8") as f:
        for event in events:
            f.write(json.dumps({
                "entity": event.entity, "onset_window": event.onset_window,
                "multiplier": event.multiplier
            }, ensure_ascii=False) + "\n")


def read_trend_events(path: str | Path) -> list[TrendEvent]:
    """Reads trend events written by ``write_trend_events``."""
    events = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                row = json.loads(line)
                events.append(TrendEvent(
                    row["entity"], int(row["onset_window"]),
                    float(row["multiplier"])))
    return events
