"""The command-line surface of entitrend.

Every stage subcommand reads the artifacts of the previous stages from the
output directory and writes its own next to them, so running ``generate``,
``aggregate``, ``featurize``, ``train``, ``rank``, ``boost``, ``recognize``
and ``evaluate`` in turn reproduces what ``run`` does in one process.

"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from collections.abc import Callable, Sequence
from dataclasses import asdict
from pathlib import Path

from entitrend.errors import ConfigError, EntitrendError
from entitrend.interfaces.config import load_config, write_config
from entitrend.models.classifiers import model_from_json, train_adaboost, train_mlp
from entitrend.models.experiment import (
    MODEL_METHODS,
    NO_BOOST,
    ORACLE,
    ExperimentConfig,
    RunReport,
    calibrate_decoder,
    feature_matrices,
    history_rows,
    run_end_to_end,
    sweep_history,
    sweep_individual_features,
    train_base_lm,
    trending_utterances,
    utterance_sets
)
from entitrend.models.features import read_feature_csv, write_feature_csv
from entitrend.models.lm import (
    BoostConfig,
    export_arpa,
    read_arpa,
    splice_entity_distribution,
    write_corpus
)
from entitrend.models.querylog import (
    FrequencyTable,
    aggregate,
    generate_synthetic_log,
    label_trending,
    read_frequency_csv,
    read_query_log,
    write_frequency_csv,
    write_query_log,
    write_trend_events
)
from entitrend.models.ranking import (
    HEURISTICS,
    EvalReport,
    evaluate_ranking,
    heuristic_score,
    oracle_ranking,
    paired_t_test,
    rank_scores,
    read_ranking_csv,
    write_ranking_csv
)
from entitrend.models.recognizer import (
    DecodeConfig,
    feedback_filter,
    read_traces,
    trace_decode,
    write_traces,
    write_utterances
)
from entitrend.models.vocabulary import WordPool

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

QUERIES = "queries.jsonl"
TREND_EVENTS = "trend_events.jsonl"
WORDS = "words.txt"
FREQUENCIES = "frequencies.csv"
FEATURES_TRAIN = "features_train.csv"
FEATURES_TEST = "features_test.csv"
CORPUS = "corpus.txt"
ARPA = "lm.arpa"
DECODE_CONFIG = "decode_config.json"
UTTERANCES = "utterances.jsonl"
REPORT = "report.json"


def colored_str(text: object, *colors: str) -> str:
    """Colors a string by using ANSI escape sequences.

    ``text`` is converted into a string first; later colors in ``colors``
    take priority. Nothing is added when no color is given.

    """
    converted_text = text if isinstance(text, str) else repr(text)
    if len(colors) == 0:
        return converted_text

    mapping = {
        "black": 30, "red": 31, "green": 32, "yellow": 33, "blue": 34,
        "magenta": 35, "cyan": 36, "white": 37, "default": 39
    }
    color_codes = []
    for key in colors:
        if not isinstance(key, str):
            raise TypeError(f"'colors' must be passed strings: {repr(key)}")
        try:
            color_codes.append(str(mapping[key]))
        except KeyError:
            raise ValueError(f"Unsupported value: {repr(key)}") from None
    return f"\033[{';'.join(color_codes)}m{converted_text}\033[{mapping['default']}m"


def format_report(methods: dict[str, EvalReport], k: int,
                  no_boost_wer: float) -> str:
    """Renders a per-method comparison table at cut ``k``.

    A WER below the unboosted one is green when its paired t-test gives
    p < 0.01, yellow otherwise; a higher WER is red.

    """
    header = f"{'method':<20} {'AP':>8} {'P@k':>8} {'R@k':>8} {'WER@k':>8} {'p':>10}"
    lines = [colored_str(header, "cyan")]
    for name, report in sorted(methods.items()):
        entry = report.per_k.get(k, {})
        ap = "-" if report.ap is None else f"{report.ap:.4f}"
        precision = entry.get("precision")
        recall = entry.get("recall")
        wer = entry.get("wer", no_boost_wer)
        p_value = entry.get("p_value")
        cells = [
            f"{name:<20}", f"{ap:>8}",
            f"{'-' if precision is None else f'{precision:.4f}':>8}",
            f"{'-' if recall is None else f'{recall:.4f}':>8}",
        ]
        wer_cell = f"{wer:>8.4f}"
        if wer < no_boost_wer:
            significant = p_value is not None and p_value < 0.01
            wer_cell = colored_str(wer_cell, "green" if significant else "yellow")
        elif wer > no_boost_wer:
            wer_cell = colored_str(wer_cell, "red")
        cells.append(wer_cell)
        cells.append(f"{'-' if p_value is None else f'{p_value:.3g}':>10}")
        lines.append(" ".join(cells))
    return "\n".join(lines)


def _write_json(path: Path, document: object) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")


def _write_rows(path: Path, rows: Sequence[dict]) -> None:
    if not rows:
        raise EntitrendError(f"Nothing to write into {path}")
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def _read_pool(out: Path) -> WordPool:
    words = (out / WORDS).read_text(encoding="utf-8").split()
    return WordPool(words)


def _read_table(out: Path, cfg: ExperimentConfig) -> FrequencyTable:
    return read_frequency_csv(out / FREQUENCIES, cfg.window)


def _ranking_names(out: Path) -> list[str]:
    paths = sorted((out / "rankings").glob("*.csv"))
    if not paths:
        raise EntitrendError(f"No ranking under {out / 'rankings'}; run 'rank' first")
    return [path.stem for path in paths]


def _load_decode_config(out: Path) -> DecodeConfig:
    with open(out / DECODE_CONFIG, encoding="utf-8") as f:
        return DecodeConfig(**json.load(f))


def cmd_generate(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> None:
    log = generate_synthetic_log(cfg.synth)
    write_query_log(out / QUERIES, log.records)
    write_trend_events(out / TREND_EVENTS, log.trend_events)
    (out / WORDS).write_text("\n".join(log.pool.words) + "\n", encoding="utf-8")
    print(f"generated {len(log.records)} queries for {len(log.entities)} entities")


def cmd_aggregate(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> None:
    records = read_query_log(out / QUERIES)
    table = aggregate(records, cfg.window, cfg.synth.sample_threshold)
    write_frequency_csv(out / FREQUENCIES, table)
    print(f"aggregated {len(table.items())} (window, entity) counts")


def cmd_featurize(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> None:
    X_train, X_test = feature_matrices(_read_table(out, cfg), cfg)
    write_feature_csv(out / FEATURES_TRAIN, X_train)
    write_feature_csv(out / FEATURES_TEST, X_test)
    print(
        f"featurized {X_train.n_rows} training and {X_test.n_rows} test rows "
        f"with {len(X_test.column_names)} columns")


def cmd_train(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> None:
    X_train = read_feature_csv(out / FEATURES_TRAIN)
    for name, trainer in (("adaboost", train_adaboost), ("mlp", train_mlp)):
        model = trainer(X_train, cfg.train)
        (out / f"{name}.json").write_text(model.to_json(), encoding="utf-8")
        print(f"trained {model.name}")


def cmd_rank(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> None:
    table = _read_table(out, cfg)
    X_test = read_feature_csv(out / FEATURES_TEST)
    rankings = {
        name: heuristic_score(
            name, table, cfg.test_target_window, cfg.seed, cfg.features,
            candidates=X_test.entities)
        for name in HEURISTICS
    }
    for name in MODEL_METHODS:
        model = model_from_json((out / f"{name}.json").read_text(encoding="utf-8"))
        rankings[name] = rank_scores(zip(X_test.entities, model.score(X_test).tolist()))
    rankings[ORACLE] = oracle_ranking(X_test.label_map())

    (out / "rankings").mkdir(exist_ok=True)
    for name, ranked in rankings.items():
        write_ranking_csv(out / "rankings" / f"{name}.csv", ranked)
    print(f"ranked {X_test.n_rows} candidates with {len(rankings)} methods")


def cmd_boost(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> None:
    table = _read_table(out, cfg)
    pool = _read_pool(out)
    corpus, lm = train_base_lm(table, pool, cfg)
    write_corpus(out / CORPUS, corpus)
    (out / ARPA).write_text(export_arpa(lm), encoding="utf-8")

    decode_cfg = calibrate_decoder(table, pool, lm, cfg)
    _write_json(out / DECODE_CONFIG, asdict(decode_cfg))

    (out / "boosted").mkdir(exist_ok=True)
    budget = max(cfg.k_cuts)
    recognized: dict[str, bool] = {}
    for name in _ranking_names(out):
        ranked = read_ranking_csv(out / "rankings" / f"{name}.csv")
        selected = feedback_filter(ranked, lm, pool, decode_cfg, budget, recognized)
        text = "".join(f"{entity}\n" for entity in selected)
        (out / "boosted" / f"{name}.txt").write_text(text, encoding="utf-8")
        print(f"{name}: {len(selected)} names to boost")


def cmd_recognize(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> None:
    lm = read_arpa((out / ARPA).read_text(encoding="utf-8"))
    pool = _read_pool(out)
    decode_cfg = _load_decode_config(out)
    references = trending_utterances(
        label_trending(_read_table(out, cfg), cfg.test_target_window, cfg.c))
    write_utterances(out / UTTERANCES, references)
    hsets = utterance_sets(references, pool, decode_cfg)

    traces = out / "traces"
    traces.mkdir(exist_ok=True)
    write_traces(traces / f"{NO_BOOST}.jsonl", (trace_decode(h, lm, decode_cfg) for h in hsets))
    for path in sorted((out / "boosted").glob("*.txt")):
        boosted = path.read_text(encoding="utf-8").splitlines()
        for k in cfg.k_cuts:
            selected = tuple(boosted[:k])
            scorer = lm if not selected else splice_entity_distribution(
                lm, BoostConfig(cfg.boost.alpha, selected))
            write_traces(
                traces / f"{path.stem}_k{k}.jsonl",
                (trace_decode(h, scorer, decode_cfg) for h in hsets))
    print(f"decoded {len(hsets)} utterances")


def _wer(pairs: Sequence[tuple[int, int]]) -> float:
    words = sum(n for _, n in pairs)
    return sum(e for e, _ in pairs) / words if words else 0.0


def cmd_evaluate(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> None:
    labels = read_feature_csv(out / FEATURES_TEST).label_map()
    base = read_traces(out / "traces" / f"{NO_BOOST}.jsonl")
    base_edits = [e for e, _ in base]
    no_boost_wer = _wer(base)

    methods: dict[str, EvalReport] = {}
    for name in _ranking_names(out):
        report = evaluate_ranking(
            read_ranking_csv(out / "rankings" / f"{name}.csv"), labels, cfg.k_cuts)
        for k in cfg.k_cuts:
            pairs = read_traces(out / "traces" / f"{name}_k{k}.jsonl")
            edits = [e for e, _ in pairs]
            entry = report.per_k[k]
            entry["wer"] = _wer(pairs)
            entry["p_value"] = (
                paired_t_test(edits, base_edits) if len(edits) >= 2 else 1.0)
        report.p_value = report.per_k[cfg.primary_k]["p_value"]
        methods[name] = report

    _write_json(out / REPORT, {
        "methods": {name: r.to_dict() for name, r in sorted(methods.items())},
        "no_boost_wer": no_boost_wer,
        "config": cfg.to_dict(),
    })
    print(format_report(methods, cfg.primary_k, no_boost_wer))


def _print_run(report: RunReport, cfg: ExperimentConfig) -> None:
    print(format_report(report.methods, cfg.primary_k, report.no_boost_wer))
    for name in sorted(report.general_wer):
        if name == NO_BOOST:
            continue
        print(f"general traffic, {name}: {report.general_change(name):+.4%}")


def cmd_run(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> None:
    report = run_end_to_end(cfg)
    _write_json(out / REPORT, report.to_dict(include_timings=not args.no_timings))
    _print_run(report, cfg)


def cmd_sweep_history(args: argparse.Namespace, cfg: ExperimentConfig,
                      out: Path) -> None:
    weeks = args.weeks or list(range(1, cfg.train_target_window))
    series = sweep_history(cfg, weeks)
    rows = history_rows(series, cfg.primary_k)
    _write_rows(out / "sweep_history.csv", rows)
    _write_json(out / "sweep_history.json", {
        str(w): report.to_dict(include_timings=False) for w, report in series
    })
    for row in rows:
        if row["method"] in MODEL_METHODS:
            print(
                f"weeks={row['weeks']} {row['method']}: AP {row['ap']:.4f}, "
                f"WER {row['wer']:.4f}")


def cmd_sweep_features(args: argparse.Namespace, cfg: ExperimentConfig,
                       out: Path) -> None:
    sweep = sweep_individual_features(cfg)
    rows = list(sweep.rows)
    rows += [{"model": name, "feature": "all", "ap": ap}
             for name, ap in sorted(sweep.all_features.items())]
    rows += [{"model": name, "feature": "heuristic", "ap": ap}
             for name, ap in sorted(sweep.heuristics.items())]
    _write_rows(out / "sweep_features.csv", rows)
    for row in rows:
        print(f"{row['model']:<20} {row['feature']:<10} {row['ap']:.4f}")


COMMANDS: dict[str, Callable[[argparse.Namespace, ExperimentConfig, Path], None]] = {
    "generate": cmd_generate,
    "aggregate": cmd_aggregate,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "rank": cmd_rank,
    "boost": cmd_boost,
    "recognize": cmd_recognize,
    "evaluate": cmd_evaluate,
    "run": cmd_run,
    "sweep-history": cmd_sweep_history,
    "sweep-features": cmd_sweep_features,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="entitrend",
        description="Predict trending entities and boost them in a language model.")
    parser.add_argument("--config", type=Path, help="JSON experiment configuration")
    parser.add_argument("--seed", type=int, help="override every seed of the configuration")
    parser.add_argument("--out", type=Path, default=Path("out"), help="artifact directory")
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")

    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub = subparsers.add_parser(name)
        if name == "run":
            sub.add_argument(
                "--no-timings", action="store_true",
                help="leave wall-clock timings out of the report")
        if name == "sweep-history":
            sub.add_argument(
                "--weeks", type=int, nargs="+",
                help="numbers of feature weeks (default: all available)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """The main function.

    Returns 0 on success, 2 when the configuration is rejected and 1 when
    a stage fails at runtime.

    """
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)

    try:
        cfg = load_config(args.config, args.seed)
    except ConfigError as err:
        print(colored_str(f"configuration error: {err}", "red"), file=sys.stderr)
        return 2

    try:
        args.out.mkdir(parents=True, exist_ok=True)
        write_config(args.out / "config.json", cfg)
        COMMANDS[args.command](args, cfg, args.out)
    except ConfigError as err:
        print(colored_str(f"configuration error: {err}", "red"), file=sys.stderr)
        return 2
    except (EntitrendError, OSError, ValueError, KeyError) as err:
        logger.debug("stage %s failed", args.command, exc_info=True)
        print(colored_str(f"{args.command} failed: {err}", "red"), file=sys.stderr)
        return 1
    return 0
