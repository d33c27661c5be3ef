from __future__ import annotations

import json
import logging
import time
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from entitrend.errors import ConfigError
from entitrend.models.classifiers import TrainConfig, train_adaboost, train_mlp
from entitrend.models.features import (
    DEFAULT_PARAMS,
    FEATURE_INDICES,
    FeatureMatrix,
    FeatureParams,
    build_feature_matrix
)
from entitrend.models.lm import (
    BoostConfig,
    NGramLM,
    WeightedCorpus,
    inject_entity_token,
    splice_entity_distribution,
    train
)
from entitrend.models.querylog import (
    FrequencyTable,
    SynthConfig,
    SyntheticLog,
    WindowConfig,
    aggregate,
    generate_synthetic_log,
    label_trending
)
from entitrend.models.ranking import (
    HEURISTICS,
    EvalReport,
    RankedList,
    evaluate_ranking,
    heuristic_score,
    oracle_ranking,
    paired_t_test,
    rank_scores
)
from entitrend.models.recognizer import (
    DecodeConfig,
    HypothesisSet,
    calibrate_confusion_strength,
    decode,
    feedback_filter,
    generate_confusions,
    is_recognized,
    relative_change,
    word_error_rate
)
from entitrend.models.vocabulary import WordPool, generate_sentences

logger = logging.getLogger(__name__)

MODEL_METHODS = ("adaboost", "mlp")
ORACLE = "oracle"
NO_BOOST = "no_boost"

_SECTIONS = {
    "synth": SynthConfig,
    "window": WindowConfig,
    "boost": BoostConfig,
    "decode": DecodeConfig,
    "train": TrainConfig,
    "features": FeatureParams,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Every setting of an end-to-end run.

    The defaults are the desk-scale setup: 20 000 entities over 8 weekly
    windows, training on window 7, testing on window 8 with three feature
    weeks, ``c = 3`` and cuts ``k`` in {250, 500, 1000}.

    """
    synth: SynthConfig = field(default_factory=SynthConfig)
    window: WindowConfig | None = None
    c: float = 3.0
    k_cuts: tuple[int, ...] = (250, 500, 1000)
    primary_k: int = 500
    train_target_window: int = 7
    test_target_window: int = 8
    feature_weeks: int = 3
    boost: BoostConfig = field(default_factory=BoostConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    features: FeatureParams = DEFAULT_PARAMS
    lm_order: int = 4
    lm_entity_share: float | None = 0.05
    n_general_sentences: int = 20000
    n_heldout_sentences: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.window is None:
            object.__setattr__(self, "window", self.synth.window)
        object.__setattr__(self, "k_cuts", tuple(self.k_cuts))
        self.validate()

    def validate(self) -> None:
        """Raises ConfigError on any inconsistency between the settings."""
        window = self.window
        if (window.n_windows, window.start, window.window_len) != (
                self.synth.n_windows, self.synth.start, self.synth.window_len):
            raise ConfigError(
                "'window' must match the windows of 'synth': "
                f"{repr(window)}")
        if not self.c > 0:
            raise ConfigError(f"'c' must be greater than zero: {repr(self.c)}")
        if self.synth.trend_multiplier_range[0] < self.c:
            raise ConfigError(
                "The lowest trend multiplier must be at least 'c': "
                f"{repr(self.synth.trend_multiplier_range)}")
        if not self.k_cuts or any(
                not isinstance(k, int) or k < 1 for k in self.k_cuts):
            raise ConfigError(f"'k_cuts' must be positive integers: {repr(self.k_cuts)}")
        if self.primary_k not in self.k_cuts:
            raise ConfigError(
                f"'primary_k' must be one of 'k_cuts': {repr(self.primary_k)}")
        if self.test_target_window != self.train_target_window + 1:
            raise ConfigError(
                "'test_target_window' must follow 'train_target_window': "
                f"{repr((self.train_target_window, self.test_target_window))}")
        if not 3 <= self.test_target_window <= window.n_windows:
            raise ConfigError(
                f"'test_target_window' must be within [3, {window.n_windows}]: "
                f"{repr(self.test_target_window)}")
        if not 1 <= self.feature_weeks <= self.train_target_window - 1:
            raise ConfigError(
                "'feature_weeks' must be within "
                f"[1, {self.train_target_window - 1}]: {repr(self.feature_weeks)}")
        if not isinstance(self.lm_order, int) or self.lm_order < 1:
            raise ConfigError(f"'lm_order' must be positive: {repr(self.lm_order)}")
        share = self.lm_entity_share
        if share is not None and (
                not isinstance(share, (int, float)) or not 0 <= share < 1):
            raise ConfigError(
                f"'lm_entity_share' must be within [0, 1) or null: {repr(share)}")
        sizes = {
            "n_general_sentences": self.n_general_sentences,
            "n_heldout_sentences": self.n_heldout_sentences
        }
        for key in sizes:
            value = sizes.get(key)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"'{key}' must be a positive integer: {repr(value)}")

    @classmethod
    def from_dict(cls, document: Mapping) -> ExperimentConfig:
        """Builds a configuration from a JSON document.

        Missing keys keep their defaults; unknown keys, at the top level or
        inside a section, raise ConfigError.

        """
        if not isinstance(document, Mapping):
            raise ConfigError(
                f"The configuration must be a JSON object: {repr(document)}")
        unknown = sorted(set(document) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError(f"Unknown configuration keys: {', '.join(unknown)}")

        values = {}
        for key, value in document.items():
            section = _SECTIONS.get(key)
            if section is not None and value is not None:
                if not isinstance(value, Mapping):
                    raise ConfigError(f"'{key}' must be a JSON object: {repr(value)}")
                unknown = sorted(set(value) - {f.name for f in fields(section)})
                if unknown:
                    raise ConfigError(
                        f"Unknown keys in '{key}': {', '.join(unknown)}")
                try:
                    value = section(**value)
                except (TypeError, ValueError) as err:
                    raise ConfigError(f"Invalid '{key}' section: {err}") from None
            elif key == "k_cuts" and isinstance(value, list):
                value = tuple(value)
            values[key] = value
        try:
            return cls(**values)
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from None

    def to_dict(self) -> dict:
        """Returns the JSON-ready form read back by ``from_dict``."""
        return asdict(self)

    def with_seed(self, seed: int) -> ExperimentConfig:
        """Returns a copy whose nested seeds all derive from ``seed``."""
        synth_seed, train_seed, decode_seed = (
            int(s) for s in np.random.SeedSequence(seed).generate_state(3, np.uint64)
            >> np.uint64(1))
        return replace(
            self,
            seed=seed,
            synth=replace(self.synth, seed=synth_seed),
            train=replace(self.train, seed=train_seed),
            decode=replace(self.decode, seed=decode_seed),
        )


@dataclass
class RunReport:
    """The outcome of one end-to-end run.

    ``methods`` maps every ranking method (the four heuristics, both
    models and the oracle) to its evaluation; WER without boosting and the
    general-traffic WERs are shared by all of them.

    """
    methods: dict[str, EvalReport]
    no_boost_wer: float
    general_wer: dict[str, float]
    confusion_strength: float
    counts: dict[str, int]
    config: dict
    timings: dict[str, float] = field(default_factory=dict)

    def general_change(self, method: str) -> float:
        """Returns the relative general-traffic WER change of a method."""
        return relative_change(self.general_wer[NO_BOOST], self.general_wer[method])

    def to_dict(self, include_timings: bool = True) -> dict:
        document = {
            "methods": {name: r.to_dict() for name, r in sorted(self.methods.items())},
            "no_boost_wer": self.no_boost_wer,
            "general_wer": dict(sorted(self.general_wer.items())),
            "confusion_strength": self.confusion_strength,
            "counts": dict(sorted(self.counts.items())),
            "config": self.config,
        }
        if include_timings:
            document["timings"] = dict(sorted(self.timings.items()))
        return document

    def to_json(self, include_timings: bool = True) -> str:
        return json.dumps(self.to_dict(include_timings), indent=2, sort_keys=True)


@dataclass
class World:
    """The artifacts shared by every method and every sweep point.

    Everything here depends on the log, the LM history and the recognizer
    settings, but not on the number of feature weeks.

    """
    log: SyntheticLog
    table: FrequencyTable
    lm: NGramLM
    pool: WordPool
    decode: DecodeConfig
    test_labels: dict[str, bool]
    test_sets: list[HypothesisSet]
    heldout_sets: list[HypothesisSet]
    recognized: dict[str, bool] = field(default_factory=dict)


class _Stopwatch:
    def __init__(self) -> None:
        self.timings: dict[str, float] = {}

    def measure(self, name: str, since: float) -> float:
        now = time.perf_counter()
        self.timings[name] = self.timings.get(name, 0.0) + now - since
        return now


def feature_matrices(table: FrequencyTable, cfg: ExperimentConfig,
                     feature_weeks: int | None = None
                     ) -> tuple[FeatureMatrix, FeatureMatrix]:
    """Builds the labelled training and test matrices.

    Each target window ``n`` gets the ``feature_weeks`` windows before it as
    features, so the test matrix is the training one shifted by a window.

    """
    weeks = cfg.feature_weeks if feature_weeks is None else feature_weeks
    matrices = []
    for n in (cfg.train_target_window, cfg.test_target_window):
        window_slice = table.restrict(n - weeks, n)
        matrices.append(
            build_feature_matrix(window_slice, weeks + 1, cfg.features, cfg.c))
    return matrices[0], matrices[1]


def build_lm_corpus(table: FrequencyTable, pool: WordPool, upto_window: int,
                    n_sentences: int, rng: np.random.Generator,
                    entity_share: float | None = None) -> WeightedCorpus:
    """Builds the LM training corpus available before ``upto_window``.

    Generic sentences have weight 1; every entity name seen in windows
    ``1..upto_window-1`` is a sentence weighted by its total count. With
    ``entity_share`` set, the entity weights are rescaled so that names make
    up that share of the total weight, which keeps the query log from
    drowning the general text.

    """
    corpus: WeightedCorpus = [
        (sentence, 1.0) for sentence in generate_sentences(pool, n_sentences, rng)
    ]
    history: dict[str, int] = {}
    for i in range(1, upto_window):
        for entity, count in table.window(i).items():
            history[entity] = history.get(entity, 0) + count
    if entity_share == 0 or not history:
        return corpus
    scale = 1.0
    if entity_share is not None:
        scale = entity_share / (1 - entity_share) * n_sentences / sum(history.values())
    corpus += [
        (tuple(entity.split()), count * scale)
        for entity, count in sorted(history.items())
    ]
    return corpus


def trending_utterances(labels: Mapping[str, bool]) -> list[str]:
    """Returns the names of the true trending entities, sorted."""
    return sorted(e for e, y in labels.items() if y)


def utterance_sets(references: Iterable[str], pool: WordPool,
                   cfg: DecodeConfig) -> list[HypothesisSet]:
    return [generate_confusions(name.split(), pool, cfg) for name in references]


def calibrate_decoder(table: FrequencyTable, pool: WordPool, lm,
                      cfg: ExperimentConfig) -> DecodeConfig:
    """Returns the decode settings with a calibrated confusion strength.

    Calibration uses the trending names of the training target window, so
    the test utterances never influence the strength.

    """
    decode_cfg = cfg.decode
    if decode_cfg.target_error_rate is None:
        return decode_cfg
    names = trending_utterances(label_trending(table, cfg.train_target_window, cfg.c))
    if not names:
        logger.warning("no trending names to calibrate on; keeping strength")
        return decode_cfg
    strength = calibrate_confusion_strength(
        utterance_sets(names, pool, decode_cfg), lm, decode_cfg.lm_weight,
        decode_cfg.target_error_rate)
    return replace(decode_cfg, confusion_strength=strength)


def train_base_lm(table: FrequencyTable, pool: WordPool,
                  cfg: ExperimentConfig) -> tuple[WeightedCorpus, NGramLM]:
    """Builds the corpus seen before the test window and trains on it."""
    rng = np.random.default_rng([cfg.seed, 1])
    corpus = build_lm_corpus(
        table, pool, cfg.test_target_window, cfg.n_general_sentences, rng,
        cfg.lm_entity_share)
    return corpus, train(inject_entity_token(corpus, cfg.boost.alpha), cfg.lm_order)


def prepare_world(cfg: ExperimentConfig, stopwatch: _Stopwatch | None = None) -> World:
    """Generates the log and trains the base LM and the recognizer settings."""
    stopwatch = stopwatch or _Stopwatch()
    tick = time.perf_counter()

    log = generate_synthetic_log(cfg.synth)
    tick = stopwatch.measure("generate", tick)
    table = aggregate(log.records, cfg.window, cfg.synth.sample_threshold)
    tick = stopwatch.measure("aggregate", tick)

    _, lm = train_base_lm(table, log.pool, cfg)
    tick = stopwatch.measure("lm", tick)

    decode_cfg = calibrate_decoder(table, log.pool, lm, cfg)
    test_labels = label_trending(table, cfg.test_target_window, cfg.c)
    test_sets = utterance_sets(trending_utterances(test_labels), log.pool, decode_cfg)
    heldout_rng = np.random.default_rng([cfg.seed, 2])
    heldout_sets = [
        generate_confusions(sentence, log.pool, decode_cfg)
        for sentence in generate_sentences(
            log.pool, cfg.n_heldout_sentences, heldout_rng)
    ]
    stopwatch.measure("recognizer_setup", tick)
    logger.info(
        "prepared world: %d test utterances, strength %.4f",
        len(test_sets), decode_cfg.confusion_strength)
    return World(
        log, table, lm, log.pool, decode_cfg, test_labels, test_sets, heldout_sets)


def rank_methods(world: World, cfg: ExperimentConfig, X_train: FeatureMatrix,
                 X_test: FeatureMatrix, stopwatch: _Stopwatch | None = None
                 ) -> dict[str, RankedList]:
    """Produces the ranking of every method over the test candidate set."""
    stopwatch = stopwatch or _Stopwatch()
    rankings: dict[str, RankedList] = {}
    tick = time.perf_counter()
    for name in HEURISTICS:
        rankings[name] = heuristic_score(
            name, world.table, cfg.test_target_window, cfg.seed, cfg.features,
            candidates=X_test.entities)
    tick = stopwatch.measure("heuristics", tick)

    adaboost = train_adaboost(X_train, cfg.train)
    rankings["adaboost"] = rank_scores(
        zip(X_test.entities, adaboost.score(X_test).tolist()))
    tick = stopwatch.measure("adaboost", tick)

    mlp = train_mlp(X_train, cfg.train)
    rankings["mlp"] = rank_scores(zip(X_test.entities, mlp.score(X_test).tolist()))
    tick = stopwatch.measure("mlp", tick)

    rankings[ORACLE] = oracle_ranking(X_test.label_map())
    return rankings


def _decode_edits(hsets: Sequence[HypothesisSet], lm,
                  cfg: DecodeConfig) -> tuple[float, list[int]]:
    pairs = [(h.reference, decode(h, lm, cfg).words) for h in hsets]
    wer, per_utterance = word_error_rate(pairs)
    return wer, [edits for edits, _ in per_utterance]


def evaluate_methods(world: World, cfg: ExperimentConfig,
                     rankings: dict[str, RankedList], labels: dict[str, bool],
                     stopwatch: _Stopwatch | None = None
                     ) -> tuple[dict[str, EvalReport], float, dict[str, float]]:
    """Boosts each method's filtered list and measures AP, P/R@k and WER@k.

    Returns the per-method reports, the WER without boosting and the
    general-traffic WER (without boosting and per method at the primary k).

    """
    stopwatch = stopwatch or _Stopwatch()
    tick = time.perf_counter()
    has_tests = bool(world.test_sets)
    if has_tests:
        no_boost_wer, no_boost_edits = _decode_edits(world.test_sets, world.lm, world.decode)
    else:
        no_boost_wer, no_boost_edits = 0.0, []
    general_base, _ = _decode_edits(world.heldout_sets, world.lm, world.decode)
    general = {NO_BOOST: general_base}
    tick = stopwatch.measure("decode_baseline", tick)

    reports: dict[str, EvalReport] = {}
    budget = max(cfg.k_cuts)
    for name, ranked in rankings.items():
        report = evaluate_ranking(ranked, labels, cfg.k_cuts)
        boosted = feedback_filter(
            ranked, world.lm, world.pool, world.decode, budget, world.recognized)
        for k in cfg.k_cuts:
            selected = boosted[:k]
            entry = report.per_k[k]
            entry["boosted"] = len(selected)
            if not selected or not has_tests:
                entry["wer"], entry["p_value"] = no_boost_wer, 1.0
                boosted_lm = None
            else:
                boosted_lm = splice_entity_distribution(
                    world.lm, BoostConfig(cfg.boost.alpha, tuple(selected)))
                wer, edits = _decode_edits(world.test_sets, boosted_lm, world.decode)
                entry["wer"] = wer
                entry["p_value"] = (
                    paired_t_test(edits, no_boost_edits) if len(edits) >= 2 else 1.0)
            if k == cfg.primary_k:
                report.p_value = entry["p_value"]
                general[name] = (
                    general_base if boosted_lm is None else
                    _decode_edits(world.heldout_sets, boosted_lm, world.decode)[0])
        reports[name] = report
        tick = stopwatch.measure(f"evaluate_{name}", tick)
        logger.info(
            "%s: AP %.4f, WER@%d %.4f (no boost %.4f)", name, report.ap,
            cfg.primary_k, report.per_k[cfg.primary_k]["wer"], no_boost_wer)
    return reports, no_boost_wer, general


def _run_with_world(world: World, cfg: ExperimentConfig,
                    stopwatch: _Stopwatch) -> RunReport:
    tick = time.perf_counter()
    X_train, X_test = feature_matrices(world.table, cfg)
    stopwatch.measure("featurize", tick)
    rankings = rank_methods(world, cfg, X_train, X_test, stopwatch)
    labels = X_test.label_map()
    if not any(labels.values()):
        raise ConfigError("The test window has no trending candidate")
    reports, no_boost_wer, general = evaluate_methods(
        world, cfg, rankings, labels, stopwatch)
    reports[NO_BOOST] = EvalReport(
        None, {k: {"wer": no_boost_wer, "boosted": 0} for k in cfg.k_cuts})
    counts = {
        "candidates": X_test.n_rows,
        "test_positives": int(X_test.labels.sum()),
        "train_positives": int(X_train.labels.sum()),
        "test_utterances": len(world.test_sets),
        "misrecognized_utterances": sum(
            not is_recognized(h, world.lm, world.decode) for h in world.test_sets),
        "feature_columns": len(X_test.column_names),
    }
    return RunReport(
        reports, no_boost_wer, general, world.decode.confusion_strength, counts,
        cfg.to_dict(), dict(stopwatch.timings))


def run_end_to_end(cfg: ExperimentConfig) -> RunReport:
    """Runs generate, aggregate, featurize, train, rank, filter, boost,
    recognize and evaluate for every method."""
    if not isinstance(cfg, ExperimentConfig):
        raise TypeError(
            f"'cfg' must be an instance of ExperimentConfig: {repr(cfg)}")
    stopwatch = _Stopwatch()
    world = prepare_world(cfg, stopwatch)
    return _run_with_world(world, cfg, stopwatch)


def sweep_history(cfg: ExperimentConfig, weeks_range: Iterable[int]
                  ) -> list[tuple[int, RunReport]]:
    """Re-runs the pipeline for every number of feature weeks.

    The log, the LM and the recognizer are shared by all points, so only
    the features, the models and the rankings change.

    """
    weeks_list = list(weeks_range)
    if not weeks_list:
        raise ConfigError("'weeks_range' must not be empty")
    for weeks in weeks_list:
        if not 1 <= weeks <= cfg.train_target_window - 1:
            raise ConfigError(
                "Insufficient history for "
                f"{weeks} feature weeks (at most {cfg.train_target_window - 1})")

    world = prepare_world(cfg)
    series = []
    for weeks in weeks_list:
        point = replace(cfg, feature_weeks=weeks)
        logger.info("history sweep: %d feature weeks", weeks)
        series.append((weeks, _run_with_world(world, point, _Stopwatch())))
    return series


def history_rows(series: Sequence[tuple[int, RunReport]], k: int) -> list[dict]:
    """Flattens a history sweep into plot-ready rows."""
    rows = []
    for weeks, report in series:
        for method, result in sorted(report.methods.items()):
            rows.append({
                "weeks": weeks, "method": method, "ap": result.ap,
                "wer": result.per_k[k]["wer"], "no_boost_wer": report.no_boost_wer,
            })
    return rows


@dataclass
class FeatureSweep:
    """Average precision of single-feature models, with references."""
    rows: list[dict]
    all_features: dict[str, float]
    heuristics: dict[str, float]


def sweep_individual_features(cfg: ExperimentConfig) -> FeatureSweep:
    """Trains both models on each feature family F1..F7 in isolation."""
    if cfg.feature_weeks < 3:
        raise ConfigError(
            "The per-feature sweep needs at least 3 feature weeks: "
            f"{repr(cfg.feature_weeks)}")

    log = generate_synthetic_log(cfg.synth)
    table = aggregate(log.records, cfg.window, cfg.synth.sample_threshold)
    X_train, X_test = feature_matrices(table, cfg)
    labels = X_test.label_map()

    def average_precision_of(model, X: FeatureMatrix) -> float:
        ranked = rank_scores(zip(X.entities, model.score(X).tolist()))
        return evaluate_ranking(ranked, labels, cfg.k_cuts).ap

    trainers = {"adaboost": train_adaboost, "mlp": train_mlp}
    rows = []
    for name, trainer in trainers.items():
        for m in FEATURE_INDICES:
            family_train = X_train.select_family(m)
            family_test = X_test.select_family(m)
            model = trainer(family_train, cfg.train)
            rows.append({
                "model": name, "feature": f"F{m}",
                "ap": average_precision_of(model, family_test),
            })
            logger.info("feature sweep: %s on F%d -> AP %.4f", name, m, rows[-1]["ap"])

    all_features = {
        name: average_precision_of(trainer(X_train, cfg.train), X_test)
        for name, trainer in trainers.items()
    }
    heuristics = {
        name: evaluate_ranking(
            heuristic_score(
                name, table, cfg.test_target_window, cfg.seed, cfg.features,
                candidates=X_test.entities),
            labels, cfg.k_cuts).ap
        for name in HEURISTICS
    }
    return FeatureSweep(rows, all_features, heuristics)
