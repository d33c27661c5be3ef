import json

import pytest

from entitrend.interfaces.cli import colored_str, format_report, main
from entitrend.interfaces.config import load_config
from entitrend.models.ranking import EvalReport

STAGES = [
    "generate", "aggregate", "featurize", "train", "rank", "boost", "recognize",
    "evaluate",
]

TINY = {
    "synth": {
        "n_entities": 300, "n_windows": 5, "base_volume": 15000.0,
        "trend_fraction": 0.15, "n_words": 1500, "sample_threshold": 1, "seed": 5,
    },
    "k_cuts": [5, 10],
    "primary_k": 5,
    "train_target_window": 4,
    "test_target_window": 5,
    "feature_weeks": 2,
    "train": {"adaboost_rounds": 5, "hidden_sizes": [8], "max_epochs": 5},
    "n_general_sentences": 200,
    "n_heldout_sentences": 20,
}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY), encoding="utf-8")
    return path


class TestColoredStr:

    def test_no_color(self):
        assert colored_str("plain") == "plain"
        assert colored_str(0.5) == "0.5"

    def test_colors(self):
        assert colored_str("x", "red") == "\033[31mx\033[39m"
        assert colored_str("x", "red", "green") == "\033[31;32mx\033[39m"

    def test_bad_colors(self):
        with pytest.raises(ValueError):
            colored_str("x", "purple")
        with pytest.raises(TypeError):
            colored_str("x", 31)


def test_format_report_marks_significant_gains():
    methods = {
        "adaboost": EvalReport(0.3, {5: {"precision": 0.4, "recall": 0.1,
                                         "wer": 0.1, "p_value": 0.001}}),
        "random": EvalReport(0.02, {5: {"precision": 0.0, "recall": 0.0,
                                        "wer": 0.3, "p_value": 0.2}}),
    }
    table = format_report(methods, 5, 0.2)
    lines = table.splitlines()
    assert len(lines) == 3
    assert lines[1].startswith("adaboost") and "\033[32m" in lines[1]
    assert lines[2].startswith("random") and "\033[31m" in lines[2]


class TestLoadConfig:

    def test_seed_override(self, config_path):
        cfg = load_config(config_path, seed=3)
        assert cfg.seed == 3
        assert cfg.synth.n_entities == 300

    def test_defaults_without_file(self):
        assert load_config().synth.n_entities == 20000


class TestExitCodes:

    def test_missing_config(self, tmp_path):
        assert main(["--config", str(tmp_path / "nope.json"), "--out",
                     str(tmp_path / "out"), "generate"]) == 2

    def test_malformed_config(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{not json", encoding="utf-8")
        assert main(["--config", str(path), "--out", str(tmp_path), "generate"]) == 2

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({**TINY, "speed": 2}), encoding="utf-8")
        assert main(["--config", str(path), "--out", str(tmp_path), "generate"]) == 2

    def test_negative_seed(self, config_path, tmp_path):
        assert main(["--config", str(config_path), "--seed", "-1", "--out",
                     str(tmp_path), "generate"]) == 2

    def test_missing_artifact(self, config_path, tmp_path):
        out = tmp_path / "out"
        assert main(["--config", str(config_path), "--out", str(out),
                     "aggregate"]) == 1
        assert (out / "config.json").exists()

    def test_history_beyond_available_windows(self, config_path, tmp_path):
        assert main(["--config", str(config_path), "--out", str(tmp_path),
                     "sweep-history", "--weeks", "4"]) == 2


class TestPipeline:

    def test_staged_commands(self, config_path, tmp_path, capsys):
        out = tmp_path / "out"
        for stage in STAGES:
            assert main(["--config", str(config_path), "--out", str(out), stage]) == 0, stage

        for name in ("queries.jsonl", "words.txt", "frequencies.csv",
                     "features_train.csv", "features_test.csv", "adaboost.json",
                     "mlp.json", "lm.arpa", "decode_config.json", "utterances.jsonl"):
            assert (out / name).exists(), name
        assert (out / "rankings" / "oracle.csv").exists()
        assert (out / "traces" / "no_boost.jsonl").exists()
        assert (out / "traces" / "mlp_k10.jsonl").exists()

        for path in (out / "boosted").glob("*.txt"):
            assert len(path.read_text(encoding="utf-8").splitlines()) <= 10

        report = json.loads((out / "report.json").read_text(encoding="utf-8"))
        assert set(report["methods"]) == {
            "random", "popular_last_week", "suddenly_popular",
            "trending_last_week", "adaboost", "mlp", "oracle"}
        assert report["methods"]["oracle"]["ap"] == 1.0
        assert "WER@k" in capsys.readouterr().out

    def test_run_is_reproducible(self, config_path, tmp_path):
        reports = []
        for name in ("first", "second"):
            out = tmp_path / name
            assert main(["--config", str(config_path), "--out", str(out),
                         "run", "--no-timings"]) == 0
            reports.append((out / "report.json").read_bytes())
        assert reports[0] == reports[1]
        assert "timings" not in json.loads(reports[0])
