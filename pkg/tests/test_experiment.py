import json

import numpy as np
import pytest

from entitrend.errors import ConfigError, EntitrendError
from entitrend.models.classifiers import TrainConfig
from entitrend.models.experiment import (
    MODEL_METHODS,
    NO_BOOST,
    ORACLE,
    ExperimentConfig,
    build_lm_corpus,
    feature_matrices,
    history_rows,
    run_end_to_end,
    sweep_history,
    sweep_individual_features,
    trending_utterances
)
from entitrend.models.querylog import SynthConfig, WindowConfig
from entitrend.models.ranking import HEURISTICS
from entitrend.models.vocabulary import WordPool


def tiny_config(**overrides) -> ExperimentConfig:
    values = dict(
        synth=SynthConfig(
            n_entities=400, n_windows=5, base_volume=20000.0, trend_fraction=0.15,
            n_words=2000, sample_threshold=1, seed=3),
        k_cuts=(5, 10, 20),
        primary_k=10,
        train_target_window=4,
        test_target_window=5,
        feature_weeks=2,
        train=TrainConfig(
            adaboost_rounds=10, hidden_sizes=(8, 8), max_epochs=10, batch_size=64),
        n_general_sentences=300,
        n_heldout_sentences=30,
    )
    values.update(overrides)
    return ExperimentConfig(**values)


@pytest.fixture(scope="module")
def tiny_report():
    return run_end_to_end(tiny_config())


class TestExperimentConfig:

    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.window == cfg.synth.window
        assert cfg.k_cuts == (250, 500, 1000)
        assert cfg.test_target_window == cfg.train_target_window + 1
        assert cfg.train.max_epochs == 500
        assert cfg.lm_entity_share == 0.05

    @pytest.mark.parametrize("overrides", [
        {"c": 0.0},
        {"c": 4.0},
        {"k_cuts": ()},
        {"k_cuts": (0, 500)},
        {"primary_k": 7},
        {"test_target_window": 9, "train_target_window": 7},
        {"test_target_window": 8, "train_target_window": 6},
        {"feature_weeks": 7},
        {"feature_weeks": 0},
        {"window": WindowConfig(n_windows=5)},
        {"lm_order": 0},
        {"lm_entity_share": 1.0},
        {"lm_entity_share": -0.1},
        {"n_heldout_sentences": 0},
    ])
    def test_rejects_inconsistent_settings(self, overrides):
        with pytest.raises(ConfigError):
            ExperimentConfig(**overrides)

    def test_config_error_is_domain_error(self):
        assert issubclass(ConfigError, EntitrendError)

    def test_json_round_trip(self):
        cfg = tiny_config().with_seed(42)
        document = json.loads(json.dumps(cfg.to_dict()))
        assert ExperimentConfig.from_dict(document) == cfg

    def test_partial_document_keeps_defaults(self):
        cfg = ExperimentConfig.from_dict({"c": 3.5, "synth": {"n_entities": 500}})
        assert cfg.c == 3.5
        assert cfg.synth.n_entities == 500
        assert cfg.synth.n_windows == 8
        assert cfg.train == ExperimentConfig().train

    @pytest.mark.parametrize("document", [
        {"colour": 1},
        {"synth": {"n_entitys": 5}},
        {"synth": {"n_entities": -1}},
        {"synth": 5},
        {"k_cuts": [250, 500], "primary_k": 1000},
        [1, 2],
    ])
    def test_rejects_bad_documents(self, document):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(document)

    def test_with_seed(self):
        cfg = ExperimentConfig().with_seed(7)
        assert cfg == ExperimentConfig().with_seed(7)
        assert cfg.seed == 7
        seeds = {cfg.synth.seed, cfg.train.seed, cfg.decode.seed}
        assert len(seeds) == 3
        assert all(0 <= s < 2**63 for s in seeds)
        assert ExperimentConfig().with_seed(8).synth.seed != cfg.synth.seed


class TestPipelineHelpers:

    def test_feature_matrices_shift_by_one_window(self, make_table):
        cfg = tiny_config()
        table = make_table(np.random.default_rng(0), 60, 5)
        X_train, X_test = feature_matrices(table, cfg)
        assert len(X_train.column_names) == len(X_test.column_names) == 2 + 6
        assert set(X_test.entities) == set(table.window(3)) | set(table.window(4))
        assert set(X_train.entities) == set(table.window(2)) | set(table.window(3))
        single, _ = feature_matrices(table, cfg, feature_weeks=1)
        assert single.column_names == ("F1@1",)

    def test_lm_corpus_weights(self, small_table):
        pool = WordPool(["ba", "da"])
        corpus = build_lm_corpus(small_table, pool, 3, 4, np.random.default_rng(0))
        assert len(corpus) == 8
        assert all(weight == 1.0 for _, weight in corpus[:4])
        assert corpus[4:] == [
            (("alpha",), 6.0), (("beta",), 20.0), (("eps",), 1.0), (("gamma",), 3.0)]

    @pytest.mark.parametrize("share", [0.05, 0.25, 0.5])
    def test_lm_corpus_entity_share(self, small_table, share):
        pool = WordPool(["ba", "da"])
        corpus = build_lm_corpus(
            small_table, pool, 3, 4, np.random.default_rng(0), entity_share=share)
        names = corpus[4:]
        assert [words for words, _ in names] == [
            ("alpha",), ("beta",), ("eps",), ("gamma",)]
        total = sum(weight for _, weight in names)
        assert total / (total + 4) == pytest.approx(share, rel=1e-12)
        assert names[1][1] / names[0][1] == pytest.approx(20 / 6, rel=1e-12)

    def test_lm_corpus_without_names(self, small_table):
        pool = WordPool(["ba", "da"])
        corpus = build_lm_corpus(
            small_table, pool, 3, 4, np.random.default_rng(0), entity_share=0.0)
        assert len(corpus) == 4

    def test_trending_utterances(self):
        assert trending_utterances({"b a": True, "c": False, "a": True}) == ["a", "b a"]

    def test_run_needs_config(self):
        with pytest.raises(TypeError):
            run_end_to_end({"c": 3})


class TestEndToEnd:

    def test_every_method_is_reported(self, tiny_report):
        expected = set(HEURISTICS) | set(MODEL_METHODS) | {ORACLE, NO_BOOST}
        assert set(tiny_report.methods) == expected
        for name, report in tiny_report.methods.items():
            assert set(report.per_k) == {5, 10, 20}
            if name != NO_BOOST:
                assert 0.0 <= report.ap <= 1.0
                assert 0.0 <= report.p_value <= 1.0

    def test_budget_law(self, tiny_report):
        for report in tiny_report.methods.values():
            for k, entry in report.per_k.items():
                assert entry["boosted"] <= k

    def test_shared_baseline(self, tiny_report):
        for k, entry in tiny_report.methods[NO_BOOST].per_k.items():
            assert entry["wer"] == tiny_report.no_boost_wer
        assert tiny_report.general_change(NO_BOOST) == 0.0
        assert set(tiny_report.general_wer) == set(tiny_report.methods)

    def test_oracle(self, tiny_report):
        oracle = tiny_report.methods[ORACLE]
        assert oracle.ap == 1.0
        k = 10
        for name, report in tiny_report.methods.items():
            assert oracle.per_k[k]["wer"] <= report.per_k[k]["wer"]

    def test_counts(self, tiny_report):
        counts = tiny_report.counts
        assert counts["feature_columns"] == 8
        assert counts["test_positives"] >= 1
        assert counts["test_positives"] <= counts["candidates"]
        assert 0 <= counts["misrecognized_utterances"] <= counts["test_utterances"]

    def test_deterministic(self, tiny_report):
        again = run_end_to_end(tiny_config())
        assert again.to_json(include_timings=False) == tiny_report.to_json(
            include_timings=False)
        assert "timings" not in json.loads(again.to_json(include_timings=False))


class TestSweeps:

    def test_history(self):
        series = sweep_history(tiny_config(), [1, 2, 3])
        assert [weeks for weeks, _ in series] == [1, 2, 3]
        assert [r.counts["feature_columns"] for _, r in series] == [1, 8, 15]
        assert len({r.no_boost_wer for _, r in series}) == 1

        rows = history_rows(series, 10)
        assert len(rows) == 3 * len(series[0][1].methods)
        assert {row["weeks"] for row in rows} == {1, 2, 3}

    @pytest.mark.parametrize("weeks", [[], [4], [0, 1]])
    def test_history_needs_available_windows(self, weeks):
        with pytest.raises(ConfigError):
            sweep_history(tiny_config(), weeks)

    def test_individual_features(self):
        sweep = sweep_individual_features(tiny_config(feature_weeks=3))
        assert len(sweep.rows) == 14
        for model in MODEL_METHODS:
            features = [row["feature"] for row in sweep.rows if row["model"] == model]
            assert features == [f"F{m}" for m in range(1, 8)]
        assert all(0.0 <= row["ap"] <= 1.0 for row in sweep.rows)
        assert set(sweep.all_features) == set(MODEL_METHODS)
        assert set(sweep.heuristics) == set(HEURISTICS)

    def test_individual_features_need_three_weeks(self):
        with pytest.raises(ConfigError):
            sweep_individual_features(tiny_config())


@pytest.mark.slow
class TestDeskScale:

    @pytest.fixture(scope="class")
    def report(self):
        return run_end_to_end(ExperimentConfig())

    @pytest.fixture(scope="class")
    def history(self):
        cfg = ExperimentConfig()
        return dict(sweep_history(cfg, range(1, cfg.train_target_window)))

    def test_calibrated_error_rate(self, report):
        counts = report.counts
        rate = counts["misrecognized_utterances"] / counts["test_utterances"]
        target = report.config["decode"]["target_error_rate"]
        assert rate == pytest.approx(target, abs=0.05)
        assert report.confusion_strength > 1e-6

    def test_models_beat_heuristics(self, report):
        best_heuristic = max(report.methods[name].ap for name in HEURISTICS)
        for name in MODEL_METHODS:
            assert report.methods[name].ap > best_heuristic

    def test_models_reduce_wer(self, report):
        for name in MODEL_METHODS:
            entry = report.methods[name].per_k[500]
            assert entry["wer"] <= 0.9 * report.no_boost_wer
            assert entry["p_value"] < 0.01

    def test_ranking_quality_drives_wer(self, report):
        random_wer = report.methods["random"].per_k[500]["wer"]
        for name in MODEL_METHODS:
            assert report.methods[name].per_k[500]["wer"] < random_wer

    def test_general_traffic(self, report):
        for name in MODEL_METHODS:
            assert abs(report.general_change(name)) < 0.01

    def test_history_improves(self, history):
        for name in MODEL_METHODS:
            one, three = history[1].methods[name], history[3].methods[name]
            assert three.ap >= one.ap
            assert three.per_k[500]["wer"] <= one.per_k[500]["wer"]
            assert one.per_k[500]["wer"] < history[1].no_boost_wer

    def test_history_plateaus(self, history):
        last = max(history)
        assert last == 6
        for name in MODEL_METHODS:
            aps = {weeks: report.methods[name].ap for weeks, report in history.items()}
            early_gain = aps[3] - aps[1]
            assert abs(aps[last] - aps[last - 1]) <= max(0.5 * early_gain, 0.02)
            assert aps[last] >= aps[1]

    def test_no_single_feature_suffices(self):
        sweep = sweep_individual_features(ExperimentConfig())
        for row in sweep.rows:
            assert row["ap"] < 0.9 * sweep.all_features[row["model"]]
        f7 = [row["ap"] for row in sweep.rows if row["feature"] == "F7"]
        assert min(f7) > sweep.heuristics["trending_last_week"]
