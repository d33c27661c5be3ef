from __future__ import annotations

import csv
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from entitrend.models.querylog import (
    FrequencyTable,
    candidate_set,
    label_trending
)

logger = logging.getLogger(__name__)

FEATURE_INDICES = (1, 2, 3, 4, 5, 6, 7)
PAIR_FEATURES = (2, 3, 4, 5, 6, 7)


@dataclass(frozen=True)
class FeatureParams:
    """Numerical guards of the time-series features.

    ``log_zero`` is the value taken by ``log(0)`` itself (not the logarithm
    of it), and ``clip_max`` is the ceiling applied to every feature.

    """
    log_zero: float = 1e-6
    clip_max: float = 1e3

    def __post_init__(self) -> None:
        values = {"log_zero": self.log_zero, "clip_max": self.clip_max}
        for key in values:
            value = values.get(key)
            if not isinstance(value, (int, float)):
                raise TypeError(f"'{key}' must be a real number: {repr(value)}")
            if not value > 0:
                raise ValueError(f"'{key}' must be greater than zero: {repr(value)}")


DEFAULT_PARAMS = FeatureParams()


def safe_log(x: float, params: FeatureParams = DEFAULT_PARAMS) -> float:
    """Returns the natural logarithm of ``x``, and ``log_zero`` for zero.

    Note that ``safe_log(0)`` is 1e-6 with the default parameters, not
    ``log(1e-6)``.

    """
    if x < 0:
        raise ValueError(f"'x' must not be negative: {repr(x)}")
    if x == 0:
        return params.log_zero
    return math.log(x)


def clip_feature(x: float, params: FeatureParams = DEFAULT_PARAMS) -> float:
    """Clips a raw feature value into a finite number not above ``clip_max``.

    NaN maps to 0, and infinities map to ``clip_max`` with their sign.

    """
    if math.isnan(x):
        return 0.0
    if x == -math.inf:
        return -params.clip_max
    return min(x, params.clip_max)


def _divide(numerator: float, denominator: float) -> float:
    # x/0 -> +-inf, 0/0 -> nan
    if denominator == 0:
        if numerator > 0:
            return math.inf
        if numerator < 0:
            return -math.inf
        return math.nan
    return numerator / denominator


def _relative(count: int, total: int) -> float:
    return count / total if total > 0 else 0.0


def _pair_feature(m: int, f_prev: int, f_cur: int, p_prev: float,
                  p_cur: float, params: FeatureParams) -> float:
    match m:
        case 2:
            raw = p_cur - p_prev
        case 3:
            raw = safe_log(p_cur, params) - safe_log(p_prev, params)
        case 4:
            raw = _divide(f_cur - f_prev, f_prev)
        case 5:
            log_prev = safe_log(f_prev, params)
            raw = _divide(safe_log(f_cur, params) - log_prev, log_prev)
        case 6:
            raw = p_cur * (1.0 - p_prev)
        case 7:
            raw = _divide(f_cur, f_prev)
        case _:
            raise ValueError(
                "Unsupported value. The value of 'm' must be any one of "
                f"{', '.join(map(str, FEATURE_INDICES))}: {repr(m)}")
    return clip_feature(raw, params)


def feature_value(m: int, table: FrequencyTable, i: int, entity: str,
                  params: FeatureParams = DEFAULT_PARAMS) -> float:
    """Evaluates feature ``Fm`` of ``entity`` at window ``i``.

    F1 is the relative frequency ``P(e|T_i)``. F2 to F7 compare window ``i``
    with window ``i-1``: the difference of relative frequencies, their log
    difference, the relative count change, the relative log-count change,
    the "suddenly popular" product ``P(e|T_i) * (1 - P(e|T_{i-1}))`` and the
    count ratio.

    """
    if not isinstance(table, FrequencyTable):
        raise TypeError(
            f"'table' must be an instance of FrequencyTable: {repr(table)}")
    if m not in FEATURE_INDICES:
        raise ValueError(
            "Unsupported value. The value of 'm' must be any one of "
            f"{', '.join(map(str, FEATURE_INDICES))}: {repr(m)}")
    minimum = 1 if m == 1 else 2
    if not isinstance(i, int) or not minimum <= i <= table.n_windows:
        raise ValueError(
            f"'i' must be within [{minimum}, {table.n_windows}] for F{m}: "
            f"{repr(i)}")

    f_cur = table.count(i, entity)
    p_cur = _relative(f_cur, table.total(i))
    if m == 1:
        return clip_feature(p_cur, params)
    f_prev = table.count(i - 1, entity)
    p_prev = _relative(f_prev, table.total(i - 1))
    return _pair_feature(m, f_prev, f_cur, p_prev, p_cur, params)


def column_names(n: int) -> tuple[str, ...]:
    """Returns the column layout for target window ``n``.

    F1 for every feature window comes first, followed by the six pair
    features for each window from 2 on.

    """
    if not isinstance(n, int) or n < 2:
        raise ValueError(f"'n' must be an integer of at least 2: {repr(n)}")
    names = [f"F1@{i}" for i in range(1, n)]
    names += [f"F{m}@{i}" for i in range(2, n) for m in PAIR_FEATURES]
    return tuple(names)


def _parse_column(name: str) -> tuple[int, int]:
    feature, window = name[1:].split("@")
    return int(feature), int(window)


@dataclass(frozen=True)
class FeatureMatrix:
    """Per-entity feature vectors, optionally with trending labels.

    Rows follow ``entities`` (lexicographic order of the candidate set) and
    columns follow ``column_names``.

    """
    entities: tuple[str, ...]
    features: np.ndarray
    column_names: tuple[str, ...]
    labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise ValueError(
                f"'features' must be two-dimensional: {repr(self.features.shape)}")
        if self.features.shape != (len(self.entities), len(self.column_names)):
            raise ValueError(
                "Shape mismatch between features, entities and column names: "
                f"{repr(self.features.shape)}")
        if self.labels is not None and self.labels.shape != (len(self.entities),):
            raise ValueError(
                f"'labels' must hold one value per row: {repr(self.labels.shape)}")

    @property
    def n_rows(self) -> int:
        return len(self.entities)

    def label_map(self) -> dict[str, bool]:
        """Returns the labels keyed by entity."""
        if self.labels is None:
            raise ValueError("This feature matrix has no labels")
        return {e: bool(y) for e, y in zip(self.entities, self.labels)}

    def select_columns(self, names: Sequence[str]) -> FeatureMatrix:
        """Returns a matrix restricted to ``names`` in the given order."""
        positions = {name: j for j, name in enumerate(self.column_names)}
        try:
            index = [positions[name] for name in names]
        except KeyError as err:
            raise ValueError(f"Unknown column: {err}") from None
        return FeatureMatrix(
            self.entities, self.features[:, index], tuple(names), self.labels)

    def select_family(self, m: int) -> FeatureMatrix:
        """Returns only the columns of feature ``Fm`` across all windows."""
        names = [
            name for name in self.column_names if _parse_column(name)[0] == m
        ]
        if not names:
            raise ValueError(f"No column of feature F{m} in this matrix: {repr(m)}")
        return self.select_columns(names)


def build_feature_matrix(table: FrequencyTable, n: int,
                         params: FeatureParams = DEFAULT_PARAMS,
                         c: float | None = None) -> FeatureMatrix:
    """Builds the feature matrix of the candidate set for target window ``n``.

    The windows ``1..n-1`` supply features; when ``c`` is given, labels come
    from the trending rule between windows ``n-1`` and ``n``.

    """
    if not isinstance(table, FrequencyTable):
        raise TypeError(
            f"'table' must be an instance of FrequencyTable: {repr(table)}")
    if not isinstance(n, int) or not 2 <= n <= table.n_windows:
        raise ValueError(
            f"'n' must be within [2, {table.n_windows}]: {repr(n)}")

    entities = tuple(sorted(candidate_set(table, n)))
    names = column_names(n)
    totals = {i: table.total(i) for i in range(1, n)}

    features = np.zeros((len(entities), len(names)), dtype=np.float64)
    for r, entity in enumerate(entities):
        f = {i: table.count(i, entity) for i in range(1, n)}
        p = {i: _relative(f[i], totals[i]) for i in range(1, n)}
        row = [clip_feature(p[i], params) for i in range(1, n)]
        for i in range(2, n):
            for m in PAIR_FEATURES:
                row.append(
                    _pair_feature(m, f[i - 1], f[i], p[i - 1], p[i], params))
        features[r] = row

    labels = None
    if c is not None:
        trending = label_trending(table, n, c)
        labels = np.array([trending[e] for e in entities], dtype=bool)

    logger.debug(
        "built a %d x %d feature matrix for n=%d", len(entities), len(names), n)
    return FeatureMatrix(entities, features, names, labels)


def zscore_statistics(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Returns per-column mean and standard deviation.

    Constant columns get a deviation of 1 so that normalizing maps them to 0.

    """
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def apply_zscore(features: np.ndarray, mean: np.ndarray,
                 std: np.ndarray) -> np.ndarray:
    """Normalizes columns with statistics computed on a training matrix."""
    return (features - mean) / std


def write_feature_csv(path: str | Path, matrix: FeatureMatrix) -> None:
    """Writes ``entity,<column_names...>,label``; the label may be empty."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["entity", *matrix.column_names, "label"])
        for r, entity in enumerate(matrix.entities):
            label = "" if matrix.labels is None else int(matrix.labels[r])
            writer.writerow(
                [entity, *(repr(float(v)) for v in matrix.features[r]), label])


def read_feature_csv(path: str | Path) -> FeatureMatrix:
    """Reads a matrix written by ``write_feature_csv``."""
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        names = tuple(header[1:-1])
        entities, rows, labels = [], [], []
        for row in reader:
            entities.append(row[0])
            rows.append([float(v) for v in row[1:-1]])
            labels.append(row[-1])
    features = np.array(rows, dtype=np.float64).reshape(len(entities), len(names))
    label_array = None
    if entities and all(label != "" for label in labels):
        label_array = np.array([label == "1" for label in labels], dtype=bool)
    return FeatureMatrix(tuple(entities), features, names, label_array)
