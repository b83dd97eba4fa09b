"""Command-line surface: inspect, search, transform, train, analyze.

The config file is the source of truth; repeatable `--set section.key=value`
flags override it. Structured logs go to stderr, data goes to files under
`--out`. Exit codes: 0 success, 1 config error, 2 data error, 3 runtime
failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__
from .analysis import (
    cs_aefe,
    cs_fm,
    emit_reports,
    relaimpr_table,
    sampling_gap_study,
)
from .dataset import load, sample
from .errors import CombifeatError, ConfigError, DataError
from .learners import save_model, train_fm, train_gbdt
from .pipeline import (
    EvalOptions,
    load_config,
    read_feature_file,
    read_template,
    run,
    save_importances,
    train_and_evaluate,
    write_history_csv,
    write_report,
    write_template,
)
from .pipeline import transform as transform_files

logger = logging.getLogger("combifeat")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="combifeat",
        description="Automatic combinatorial feature engineering for categorical logs",
    )
    parser.add_argument("--version", action="version", version=f"combifeat {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", required=needs_config, help="TOML run config")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key (repeatable)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument("--parallelism", type=int, default=None,
                       help="override run.parallelism")
        p.add_argument("--window-open-lower", action="store_true",
                       help="use an open lower window bound")

    p_inspect = sub.add_parser("inspect", help="profile a data file against the schema")
    common(p_inspect)
    p_inspect.add_argument("--data", required=True)

    p_search = sub.add_parser("search", help="mine a feature template from sampled data")
    common(p_search)
    p_search.add_argument("--data", required=True)

    p_transform = sub.add_parser("transform", help="apply a template to a full data file")
    common(p_transform, needs_config=False)
    p_transform.add_argument("--data", required=True)
    p_transform.add_argument("--template", required=True)

    p_train = sub.add_parser("train", help="train and evaluate a downstream model")
    common(p_train)
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--features", required=True)
    p_train.add_argument("--model", choices=("lr", "gbdt"), default="gbdt")
    p_train.add_argument("--baseline-auc", type=float, default=None)
    p_train.add_argument("--test-fraction", type=float, default=0.2)

    p_analyze = sub.add_parser("analyze", help="emit interpretability reports")
    common(p_analyze)
    p_analyze.add_argument("--data", required=True)
    p_analyze.add_argument("--template", required=True)
    p_analyze.add_argument("--importances", default=None,
                           help="importances CSV from `train` (for the strength matrix)")
    p_analyze.add_argument("--report", default=None,
                           help="report.json from `search` (for the curves)")
    p_analyze.add_argument("--dowg-rates", default=None,
                           help="comma-separated sampling rates for the gap study")
    p_analyze.add_argument("--dowg-repeats", type=int, default=3)

    return parser


def _config_for(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.parallelism is not None:
        overrides.append(f"run.parallelism={args.parallelism}")
    if args.window_open_lower:
        overrides.append("run.window_open_lower=true")
    return load_config(args.config, overrides)


def _cmd_inspect(args) -> int:
    config = _config_for(args)
    dataset = load(args.data, config.schema, config.delimiter, config.header)
    lines = [f"rows: {dataset.n_rows}",
             f"positive rate: {dataset.label.mean():.6f}",
             f"fingerprint: {dataset.fingerprint()}"]
    for name in config.schema.categorical_fields:
        lines.append(f"field {name}: cardinality {dataset.cardinality(name)}")
    if dataset.timestamp is not None:
        lines.append(f"timestamp range: [{dataset.timestamp.min()}, {dataset.timestamp.max()}]")
    print("\n".join(lines))
    return 0


def _cmd_search(args) -> int:
    config = _config_for(args)
    result = run(config, args.data)
    os.makedirs(args.out, exist_ok=True)
    write_template(result.template, os.path.join(args.out, "template.json"))
    write_report(result.report, os.path.join(args.out, "report.json"))
    write_history_csv(result.report, os.path.join(args.out, "history.csv"))
    logger.info("wrote template.json, report.json, history.csv to %s", args.out)
    return 0


def _cmd_transform(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "features.csv")
    matrix = transform_files(args.data, args.template, out_path)
    logger.info("wrote %d rows x %d features to %s", matrix.n_rows,
                matrix.n_features, out_path)
    return 0


def _cmd_train(args) -> int:
    config = _config_for(args)
    dataset = load(args.data, config.schema, config.delimiter, config.header)
    features, names = read_feature_file(args.features)
    if len(features) != dataset.n_rows:
        raise DataError("features file row count does not match the data file")
    options = EvalOptions(
        test_fraction=args.test_fraction,
        by_time=dataset.timestamp is not None,
        seed=config.seed,
        baseline_auc=args.baseline_auc,
    )
    model, metrics = train_and_evaluate(
        features, dataset.label, args.model, options,
        lr_config=config.lr, gbdt_config=config.selection_gbdt,
        timestamps=dataset.timestamp,
    )
    os.makedirs(args.out, exist_ok=True)
    save_model(model, os.path.join(args.out, f"model_{args.model}.json"))
    if args.model == "gbdt":
        save_importances(names, model.importances,
                         os.path.join(args.out, "importances.csv"))
    with open(os.path.join(args.out, "metrics.txt"), "w") as handle:
        for key, value in metrics.items():
            handle.write(f"{key}: {value}\n")
    for key, value in metrics.items():
        logger.info("%s = %s", key, value)
    return 0


def _cmd_analyze(args) -> int:
    import json

    config = _config_for(args)
    template = read_template(args.template)
    dataset = load(args.data, template.schema, config.delimiter, config.header)

    cs_engine = None
    if args.importances:
        from .pipeline import load_importances

        names, weights = load_importances(args.importances)
        if names != template.names:
            raise DataError("importances file does not match the template's features")
        from .learners import GBDTModel

        stub = GBDTModel(trees=[], base_score=0.0, importances=weights,
                         n_features=len(names), config=config.selection_gbdt)
        cs_engine = cs_aefe(stub, template)

    fm_sample = sample(dataset, config.sampling_rate, config.sampling_seed)
    fm_model = train_fm(fm_sample, config.fm)
    cs_factor = cs_fm(fm_model, template.schema)

    gap_study = None
    if args.dowg_rates:
        rates = [float(r) for r in args.dowg_rates.split(",") if r]
        gap_study = sampling_gap_study(dataset, template, config.selection_gbdt,
                                       rates, args.dowg_repeats, seed=config.seed)

    run_report = None
    if args.report:
        with open(args.report) as handle:
            run_report = json.load(handle)

    written = emit_reports(args.out, cs_engine=cs_engine, cs_factorization=cs_factor,
                           gap_study=gap_study, run_report=run_report)
    logger.info("wrote %s", ", ".join(written))
    return 0


_COMMANDS = {
    "inspect": _cmd_inspect,
    "search": _cmd_search,
    "transform": _cmd_transform,
    "train": _cmd_train,
    "analyze": _cmd_analyze,
}


def dispatch(args) -> int:
    return _COMMANDS[args.verb](args)


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return dispatch(args)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return 1
    except DataError as exc:
        logger.error("data error: %s", exc)
        return 2
    except CombifeatError as exc:
        logger.error("error: %s", exc)
        return 3
    except Exception as exc:  # runtime failure
        logger.error("runtime failure: %s", exc, exc_info=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
