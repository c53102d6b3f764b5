"""Command-line entry point wiring the pipeline end to end.

Exit codes: 0 success, 1 validation error (bad arguments or inconsistent
inputs), 2 I/O or parse error. The SEGQA_LOG environment variable
(error, warn, info, debug) controls verbosity. Every source of
randomness is an explicit --seed flag.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import phantom, regressor, stats
from .errors import ParseError, ValidationError
from .feature_pipeline import DICE_COLUMNS, FEATURE_NAMES, FeatureVector, process_subject
from .grid import SCORED_TISSUES
from .morphometry import DiceScores
from .nifti_io import read_feature_csv, read_manifest, write_feature_csv

log = logging.getLogger("segqa")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are validation errors, exit 1
        raise _UsageError(message)


def _configure_logging() -> None:
    name = os.environ.get("SEGQA_LOG", "warn").lower()
    if name not in _LOG_LEVELS:
        logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        log.warning("unknown SEGQA_LOG value %r, using 'warn'", name)
        return
    logging.basicConfig(level=_LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s")


def _extract_worker(record):
    """Per-subject feature extraction, run in worker processes."""
    try:
        features, targets = process_subject(record)
        return (record.id, features.values, None if targets is None else targets.as_array(), None, None)
    except (ParseError, OSError) as exc:
        return (record.id, None, None, "io", str(exc))
    except (ValidationError, ValueError) as exc:
        return (record.id, None, None, "validation", str(exc))


def _extract_cohort(manifest, jobs: int):
    """Extract features for every subject; raises on any failure.

    Results keep manifest order regardless of worker scheduling.
    """
    if jobs <= 1 or len(manifest.subjects) <= 1:
        results = [_extract_worker(r) for r in manifest.subjects]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_extract_worker, manifest.subjects))

    failures = [(sid, kind, msg) for sid, _, _, kind, msg in results if kind is not None]
    for sid, _, msg in failures:
        log.error("subject %s: %s", sid, msg)
    if failures:
        kind = "io" if any(k == "io" for _, k, _ in failures) else "validation"
        raise (ParseError if kind == "io" else ValidationError)(
            f"{len(failures)} subject(s) failed: " + ", ".join(sid for sid, _, _ in failures)
        )
    return [(sid, values, dice) for sid, values, dice, _, _ in results]


def _require_subjects(manifest, path) -> None:
    if not manifest.subjects:
        raise ValidationError(f"{path}: manifest holds no subjects")


def cmd_features(args) -> int:
    manifest = read_manifest(args.manifest)
    _require_subjects(manifest, args.manifest)
    results = _extract_cohort(manifest, args.jobs)
    rows = [
        (sid, FeatureVector(values), None if dice is None else DiceScores.from_array(dice))
        for sid, values, dice in results
    ]
    write_feature_csv(rows, args.out)
    log.info("wrote %d feature rows to %s", len(rows), args.out)
    return EXIT_OK


def _complete_rows(ids, X, D, path):
    """Rows of a feature CSV whose five Dice cells are all present."""
    have = ~np.any(np.isnan(D), axis=1)
    if not np.all(have):
        log.info("%s: %d row(s) lack Dice targets", path, int(np.count_nonzero(~have)))
    return [ids[i] for i in np.nonzero(have)[0]], X[have], D[have]


def cmd_evaluate(args) -> int:
    manifest = read_manifest(args.manifest)
    _require_subjects(manifest, args.manifest)
    if len(manifest.subjects) < 2:
        raise ValidationError("evaluation needs at least 2 subjects")
    results = _extract_cohort(manifest, args.jobs)
    missing = [sid for sid, _, dice in results if dice is None]
    if missing:
        raise ValidationError(
            "evaluation needs validated segmentations for every subject; missing: "
            + ", ".join(missing)
        )
    X = np.array([values for _, values, _ in results])
    Y = np.array([dice for _, _, dice in results])

    params = regressor.TreeParams(max_depth=args.max_depth, min_samples_leaf=args.min_leaf)
    predicted, actual = regressor.loo_evaluate(X, Y, params)
    report = stats.summarize(predicted, actual)
    matrix = stats.correlation_matrix(X, Y) if X.shape[0] >= 3 else None

    doc = report.to_json_dict()
    doc["matrix"] = None if matrix is None else stats.matrix_to_json(matrix)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    if args.svg is not None:
        from . import plots

        plots.render_scatter(report, Path(args.svg) / "scatter.svg")
        if matrix is not None:
            plots.render_matrix(matrix, Path(args.svg) / "matrix.svg")
    r_txt = "undefined" if report.pearson_r is None else f"{report.pearson_r:.4f}"
    log.info("pooled MAE %.4f, r %s", report.mean_abs_diff, r_txt)
    return EXIT_OK


def cmd_train(args) -> int:
    ids, X, D = read_feature_csv(args.features)
    ids, X, D = _complete_rows(ids, X, D, args.features)
    if not ids:
        raise ValidationError(f"{args.features}: no rows carry complete Dice targets")
    params = regressor.TreeParams(max_depth=args.max_depth, min_samples_leaf=args.min_leaf)
    models = regressor.fit_tissue_models(X, D, params)
    regressor.save_models(models, args.out)
    log.info("trained on %d subjects, wrote %s", len(ids), args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    models = regressor.load_models(args.model)
    manifest = read_manifest(args.manifest)
    _require_subjects(manifest, args.manifest)
    results = _extract_cohort(manifest, args.jobs)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = ["subject," + ",".join(f"pred_{c}" for c in DICE_COLUMNS)]
    for sid, values, _ in results:
        pred = models.predict(values)
        lines.append(sid + "," + ",".join(repr(float(v)) for v in pred))
    out.write_text("\n".join(lines) + "\n")
    log.info("wrote predictions for %d subjects to %s", len(results), out)
    return EXIT_OK


def cmd_correlate(args) -> int:
    ids, X, D = read_feature_csv(args.features)
    ids, X, D = _complete_rows(ids, X, D, args.features)
    if len(ids) < 3:
        raise ValidationError(
            f"{args.features}: correlation needs at least 3 rows with Dice targets, got {len(ids)}"
        )
    matrix = stats.correlation_matrix(X, D)
    doc = {
        "tissues": [t.name.lower() for t in SCORED_TISSUES],
        "features": list(FEATURE_NAMES),
        "matrix": stats.matrix_to_json(matrix),
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if args.svg is not None:
        from . import plots

        plots.render_matrix(matrix, args.svg)
    return EXIT_OK


def cmd_phantom(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ValidationError(f"{out}: output directory is not empty (use --force to overwrite)")
    phantom.generate_cohort(args.n, args.seed, out, size=args.size)
    log.info("wrote %d-subject cohort to %s", args.n, out)
    return EXIT_OK


def _add_jobs_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                   help="parallel workers for per-subject extraction")


def _add_tree_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-depth", type=int, default=5, help="regression tree depth limit")
    p.add_argument("--min-leaf", type=int, default=2, help="minimum samples per leaf")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="segqa", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="extract the per-subject feature CSV")
    p.add_argument("--manifest", required=True, help="cohort manifest JSON")
    p.add_argument("--out", required=True, help="feature CSV to write")
    _add_jobs_flag(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("evaluate", help="leave-one-out evaluation with report and figures")
    p.add_argument("--manifest", required=True, help="cohort manifest JSON (all subjects validated)")
    p.add_argument("--out", required=True, help="report JSON to write")
    p.add_argument("--svg", default=None, help="directory for scatter.svg and matrix.svg")
    _add_tree_flags(p)
    _add_jobs_flag(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("train", help="fit the five per-tissue trees from a feature CSV")
    p.add_argument("--features", required=True, help="feature CSV with Dice columns")
    p.add_argument("--out", required=True, help="model JSON to write")
    _add_tree_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict per-tissue Dice without ground truth")
    p.add_argument("--model", required=True, help="model JSON from train")
    p.add_argument("--manifest", required=True, help="cohort manifest JSON")
    p.add_argument("--out", required=True, help="prediction CSV to write")
    _add_jobs_flag(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("correlate", help="feature-vs-Dice correlation matrix")
    p.add_argument("--features", required=True, help="feature CSV with Dice columns")
    p.add_argument("--out", required=True, help="matrix JSON to write")
    p.add_argument("--svg", default=None, help="path for the heat-map SVG")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("phantom", help="generate a synthetic cohort")
    p.add_argument("--n", type=int, required=True, help="number of subjects (>= 2)")
    p.add_argument("--seed", type=int, required=True, help="cohort seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--size", type=int, default=64, help="grid edge length in voxels")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    p.set_defaults(func=cmd_phantom)

    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"segqa: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except (ValidationError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except (ParseError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
