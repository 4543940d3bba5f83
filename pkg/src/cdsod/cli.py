"""Command-line front end: prepare, score, split, detect, run.

Each stage reads the previous stage's files, so partial reruns are possible.
Options come from built-in defaults, then ``--preset``, then a JSON
``--config`` file, then explicit flags (later wins).

Exit codes: 0 success, 2 configuration error, 3 data error (including an
empty consistent pool), 4 solver convergence failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from cdsod import __version__
from cdsod.dataset import (
    Dataset,
    generate_synthetic,
    group_outlier_classes,
    load_delimited,
    load_prepared,
    write_delimited,
)
from cdsod.ensemble import EnsembleConfig, read_scores, score_ensemble, write_scores
from cdsod.errors import CdsError, ConfigError, DataError
from cdsod.occ_svm import KERNELS, KernelParams
from cdsod.pipeline import PRESETS, SCALINGS, ClassifierConfig, build_report, resolve_theta
from cdsod.pool_split import (
    COMPARATORS,
    PoolSplit,
    bucket_histogram,
    read_pools,
    split_pools,
    write_histogram,
    write_pools,
)

logger = logging.getLogger("cdsod")

ENV_OUTPUT_DIR = "CDS_OUTPUT_DIR"
ENV_THREADS = "CDS_THREADS"
ENV_DATA_DIR = "CDS_DATA_DIR"

# Raw UCI files looked up under the data directory when --preset is given without --input.
PRESET_FILES = {
    "ionosphere": ("ionosphere.data", "?"),
    "arrhythmia": ("arrhythmia.data", "?"),
    "musk": ("musk2.data", "?"),
}

BUILTIN = {
    "seed": 0,
    "max_iter": 300,
    "tol": 1e-6,
    "comparator": "gt",
    "bucket_width": 0.1,
    "classifier": "svm",
}


def _parse_k(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(k) for k in text)
    try:
        return tuple(int(k) for k in str(text).split(",") if k.strip())
    except ValueError:
        raise ConfigError(f"--k expects comma-separated integers, got {text!r}") from None


def _parse_theta(text):
    if text is None or text == "auto":
        return text
    try:
        return float(text)
    except (TypeError, ValueError):
        raise ConfigError(f"--theta expects a number or 'auto', got {text!r}") from None


def _opt(args, name):
    """Value from flags/config, else preset, else built-in default."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    preset = PRESETS.get(getattr(args, "preset", None) or "")
    if preset is not None:
        if name == "k":
            return preset.k_schedule
        if name == "theta":
            return "auto" if preset.theta is None else preset.theta
        if name == "comparator":
            return preset.comparator
    return BUILTIN.get(name)


def _out_dir(args) -> Path:
    path = Path(args.out_dir or os.environ.get(ENV_OUTPUT_DIR) or ".")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _threads(args) -> int | None:
    value = args.threads if args.threads is not None else os.environ.get(ENV_THREADS)
    if value is None:
        return None
    try:
        threads = int(value)
    except ValueError:
        raise ConfigError(f"thread count must be an integer, got {value!r}") from None
    if threads < 1:
        raise ConfigError(f"thread count must be >= 1, got {threads}")
    return threads


def _load_input(args) -> Dataset:
    if args.input:
        return load_prepared(args.input)
    if args.preset in PRESET_FILES:
        name, missing = PRESET_FILES[args.preset]
        data_dir = Path(os.environ.get(ENV_DATA_DIR, "data"))
        raw = load_delimited(data_dir / name, label_column="last", missing_token=missing)
        return group_outlier_classes(raw)[0]
    raise ConfigError("--input is required (or a dataset preset whose file is under $CDS_DATA_DIR)")


def _ensemble_config(args) -> EnsembleConfig:
    k = _opt(args, "k")
    if k is None:
        raise ConfigError("a k schedule is required: pass --k or --preset")
    return EnsembleConfig(_parse_k(k), base_seed=int(_opt(args, "seed")), max_iter=int(_opt(args, "max_iter")), tol=float(_opt(args, "tol")))


def _split_options(args) -> tuple[object, str, float]:
    theta = _parse_theta(_opt(args, "theta"))
    if theta is None:
        raise ConfigError("a threshold is required: pass --theta (a number or 'auto') or --preset")
    if theta != "auto" and not -1.0 <= theta <= 1.0:
        raise ConfigError(f"theta must lie in [-1, 1], got {theta}")
    comparator = _opt(args, "comparator")
    if comparator not in COMPARATORS:
        raise ConfigError(f"comparator must be one of {COMPARATORS}")
    width = float(_opt(args, "bucket_width"))
    if not 0 < width <= 2:
        raise ConfigError(f"bucket width must be in (0, 2], got {width}")
    return theta, comparator, width


def _classifier_config(args) -> ClassifierConfig:
    kernel_fields = {"kind": args.kernel or "polynomial"}
    for name in ("degree", "gamma", "coef0"):
        if getattr(args, name) is not None:
            kernel_fields[name] = getattr(args, name)
    fields = {"kind": _opt(args, "classifier"), "kernel": KernelParams(**kernel_fields)}
    for flag, name in (
        ("nu", "nu"),
        ("svm_tol", "tol"),
        ("max_passes", "max_passes"),
        ("gram_cache", "gram_cache"),
        ("shrinkage", "shrinkage"),
        ("ridge", "ridge"),
        ("quantile", "quantile"),
        ("scaling", "scaling"),
    ):
        if getattr(args, flag) is not None:
            fields[name] = getattr(args, flag)
    fields["score_consistent"] = bool(args.score_consistent)
    return ClassifierConfig(**fields)


def _write_split(split: PoolSplit, scores, labels, width: float, out: Path) -> None:
    write_pools(split, scores, out / "pools.csv")
    (out / "pools.json").write_text(
        json.dumps({"theta": split.threshold, "comparator": split.comparator}, sort_keys=True) + "\n"
    )
    write_histogram(bucket_histogram(scores, labels, width), out / "histogram.csv")


def _aligned_labels(dataset: Dataset | None, ids):
    if dataset is None or dataset.labels is None:
        return None
    index = {int(i): pos for pos, i in enumerate(dataset.ids)}
    try:
        return dataset.labels[[index[int(i)] for i in ids]]
    except KeyError as exc:
        raise DataError(f"id {exc} in the scores file is not in the dataset") from None


def cmd_prepare(args) -> int:
    out = Path(args.output) if args.output else _out_dir(args) / "prepared.csv"
    if args.synthetic:
        try:
            n_c, n_o = (int(v) for v in args.synthetic.split(":"))
        except ValueError:
            raise ConfigError(f"--synthetic expects N:M, got {args.synthetic!r}") from None
        dataset = generate_synthetic(n_c, n_o, args.dims, int(_opt(args, "seed")))
    else:
        if not args.input:
            raise ConfigError("prepare needs --input or --synthetic")
        label_col = None if args.label_col in (None, "none") else args.label_col
        dataset = load_delimited(
            args.input,
            label_column=label_col,
            missing_token=args.missing,
            delimiter=args.delimiter,
            header=args.header,
        )
        if dataset.labels is not None and not args.keep_labels:
            dataset, truth = group_outlier_classes(dataset, args.group_threshold, args.outlier_class)
            logger.info("grouped labels: %d consistent, %d outliers", dataset.n - truth.m, truth.m)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_delimited(dataset, out)
    for note in dataset.notes:
        logger.info(note)
    print(f"wrote {out} ({dataset.n} rows, {dataset.d} features)")
    return 0


def cmd_score(args) -> int:
    config = _ensemble_config(args)
    dataset = _load_input(args)
    if args.zscore:
        dataset = dataset.zscored()
    scores = score_ensemble(dataset, config, threads=_threads(args))
    out = Path(args.output) if args.output else _out_dir(args) / "scores.csv"
    write_scores(scores, out)
    print(f"wrote {out}")
    return 0


def cmd_split(args) -> int:
    theta, comparator, width = _split_options(args)
    scores = read_scores(args.scores)
    dataset = _load_input(args) if (args.input or args.preset in PRESET_FILES) else None
    split = split_pools(scores, resolve_theta(scores, None if theta == "auto" else theta), comparator)
    out = _out_dir(args)
    _write_split(split, scores, _aligned_labels(dataset, scores.ids), width, out)
    print(f"wrote {out / 'pools.csv'}: {int(split.consistent_mask.sum())} consistent, "
          f"{int((~split.consistent_mask).sum())} inconsistent")
    return 0


def cmd_detect(args) -> int:
    config = _classifier_config(args)
    dataset = _load_input(args)
    pools = Path(args.pools)
    ids, values, mask = read_pools(pools)
    meta_path = pools.with_suffix(".json")
    if not meta_path.exists():
        raise DataError(f"{meta_path} (written by 'split') is missing")
    meta = json.loads(meta_path.read_text())
    index = {int(i): pos for pos, i in enumerate(ids)}
    if len(index) != dataset.n or set(index) != {int(i) for i in dataset.ids}:
        raise DataError(f"{pools} does not cover the same ids as the dataset")
    order = [index[int(i)] for i in dataset.ids]
    split = PoolSplit(float(meta["theta"]), meta["comparator"], dataset.ids, mask[order])
    report = build_report(dataset, values[order], split, config)
    out = _out_dir(args)
    report.write(out)
    sys.stdout.write(report.to_text())
    return 0


def cmd_run(args) -> int:
    config = _ensemble_config(args)
    theta, comparator, width = _split_options(args)
    classifier = _classifier_config(args)
    dataset = _load_input(args)
    scored = dataset.zscored() if args.zscore else dataset
    scores = score_ensemble(scored, config, threads=_threads(args))
    split = split_pools(scores, resolve_theta(scores, None if theta == "auto" else theta), comparator)
    out = _out_dir(args)
    write_scores(scores, out / "scores.csv")
    _write_split(split, scores, dataset.labels, width, out)
    # Round-trip scores through text so run and score->split->detect agree byte for byte.
    ids, values, _ = read_pools(out / "pools.csv")
    index = {int(i): pos for pos, i in enumerate(ids)}
    report = build_report(dataset, values[[index[int(i)] for i in dataset.ids]], split, classifier)
    report.write(out)
    sys.stdout.write(report.to_text())
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of option values (flag names, dashes as underscores)")
    p.add_argument("--out-dir", help=f"output directory (env {ENV_OUTPUT_DIR}, default .)")
    p.add_argument("--threads", type=int, help=f"worker cap for the ensemble (env {ENV_THREADS})")
    p.add_argument("--preset", choices=sorted(PRESETS), help="k schedule and threshold from a named experiment")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_input(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", help="prepared dataset (header row, optional 'label' column)")


def _add_ensemble(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", help="comma-separated k schedule, e.g. 2,5,10,100,500")
    p.add_argument("--seed", type=int, help="base seed for the k-means runs (default 0)")
    p.add_argument("--max-iter", type=int, help="Lloyd iteration cap per run (default 300)")
    p.add_argument("--tol", type=float, help="relative centroid shift for convergence (default 1e-6)")
    p.add_argument("--zscore", action="store_true", default=None, help="standardize features before clustering")


def _add_split(p: argparse.ArgumentParser) -> None:
    p.add_argument("--theta", help="score threshold in [-1, 1], or 'auto' for the widest-gap heuristic")
    p.add_argument("--comparator", choices=COMPARATORS, help="gt: score > theta is consistent; ge: score >= theta")
    p.add_argument("--bucket-width", type=float, help="histogram bucket width (default 0.1)")


def _add_classifier(p: argparse.ArgumentParser) -> None:
    p.add_argument("--classifier", choices=("svm", "gaussian"), help="one-class backend (default svm)")
    p.add_argument("--nu", type=float, help="svm: nu in (0, 1] (default 0.5)")
    p.add_argument("--kernel", choices=KERNELS, help="svm: kernel (default polynomial)")
    p.add_argument("--degree", type=int, help="svm: polynomial degree (default 3)")
    p.add_argument("--gamma", type=float, help="svm: kernel gamma (default 1/d)")
    p.add_argument("--coef0", type=float, help="svm: polynomial coef0 (default 0)")
    p.add_argument("--svm-tol", type=float, help="svm: KKT stopping tolerance (default 1e-3)")
    p.add_argument("--max-passes", type=int, help="svm: pair updates allowed, in multiples of n (default 1000)")
    p.add_argument("--gram-cache", type=int, help="svm: largest n for a fully cached Gram matrix (default 8192)")
    p.add_argument("--shrinkage", type=float, help="gaussian: shrinkage toward the diagonal (default 0.1)")
    p.add_argument("--ridge", type=float, help="gaussian: ridge added to the diagonal (default 1e-6 trace/d)")
    p.add_argument("--quantile", type=float, help="gaussian: chi-square quantile for the threshold (default 0.975)")
    p.add_argument("--scaling", choices=SCALINGS, help="feature scaling fitted on the consistent pool")
    p.add_argument("--score-consistent", action="store_true", default=None, help="also score the consistent pool (audit only)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdsod", description="Outlier detection by consistent data selection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = sub.choices

    p = sub.add_parser("prepare", help="load raw data, group rare classes as outliers, write a prepared file")
    _add_common(p)
    p.add_argument("--input", help="raw delimited file")
    p.add_argument("--synthetic", help="generate N:M consistent:outlier points instead of reading a file")
    p.add_argument("--dims", type=int, default=10, help="synthetic dimension (default 10)")
    p.add_argument("--seed", type=int, help="synthetic seed (default 0)")
    p.add_argument("--missing", default="?", help="missing-value token (default '?')")
    p.add_argument("--label-col", default="last", help="label column: index, header name, 'last' or 'none'")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--header", action="store_true", help="the first row holds column names")
    p.add_argument("--group-threshold", type=float, default=0.05, help="classes rarer than this fraction are outliers")
    p.add_argument("--outlier-class", action="append", help="explicit outlier class (repeatable)")
    p.add_argument("--keep-labels", action="store_true", help="write labels as-is, without grouping")
    p.add_argument("--output", help="prepared file path (default <out-dir>/prepared.csv)")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("score", help="run the k-means ensemble and write per-point scores")
    _add_common(p)
    _add_input(p)
    _add_ensemble(p)
    p.add_argument("--output", help="scores file path (default <out-dir>/scores.csv)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("split", help="split scores into pools and write histogram data")
    _add_common(p)
    _add_input(p)
    p.add_argument("--scores", required=True, help="scores file from 'score'")
    _add_split(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("detect", help="train on the consistent pool and label the inconsistent pool")
    _add_common(p)
    _add_input(p)
    p.add_argument("--pools", required=True, help="pools file from 'split'")
    _add_classifier(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("run", help="score, split and detect in one go")
    _add_common(p)
    _add_input(p)
    _add_ensemble(p)
    _add_split(p)
    _add_classifier(p)
    p.set_defaults(func=cmd_run)
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        values = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(values, dict):
        raise ConfigError(f"config {args.config} must hold a JSON object")
    values = {key.replace("-", "_"): value for key, value in values.items()}
    unknown = set(values) - set(vars(args))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    # Config values become defaults, so explicit flags still win.
    parser.subcommands[args.command].set_defaults(**values)
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config_file(parser, argv)
        logging.basicConfig(
            level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        return args.func(args)
    except CdsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
