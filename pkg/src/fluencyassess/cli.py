"""Command-line entry point.

Exit codes: 0 success, 1 validation or usage error, 2 runtime or endpoint error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from . import __version__
from .core import (
    Dataset,
    FluencyError,
    FluencyLabel,
    Language,
    MetricRow,
    ParseError,
    ValidationError,
    export_metrics,
    parse_manifest,
    read_metrics,
)

log = logging.getLogger("fluencyassess")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
DEFAULT_SEED = 42


class UsageError(FluencyError):
    pass


class RuntimeFailure(FluencyError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def write_atomic(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _read_metric_rows(path: str) -> list[MetricRow]:
    return read_metrics(_read(path))


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


# ---------------------------------------------------------------- extract


def cmd_extract(args) -> int:
    from .g2p import default_table, load_rule_table
    from .tempo import extract_metric_vector

    tables = {}
    for lang, path in ((Language.MALAY, args.malay_rules), (Language.TAMIL, args.tamil_rules)):
        tables[lang] = load_rule_table(_read(path), lang) if path else default_table(lang)
    if args.pause_threshold <= 0:
        raise UsageError("--pause-threshold must be positive")

    dataset, errors = parse_manifest(_read(args.manifest), strict=False)
    records, metrics = [], []
    for rec, line in zip(dataset.records, dataset.lines):
        try:
            metrics.append(extract_metric_vector(rec, tables[rec.language], args.pause_threshold))
            records.append(rec)
        except FluencyError as exc:
            errors.append(exc.located(line=line) if isinstance(exc, ValidationError) else exc)
    for err in errors:
        print(f"{args.manifest}: {err}", file=sys.stderr)
    if errors and args.strict:
        print(f"{len(errors)} bad record(s); nothing written (--strict)", file=sys.stderr)
        return EXIT_USAGE
    write_atomic(args.output, export_metrics(Dataset(records, metrics)))
    print(f"extracted {len(records)} record(s) -> {args.output}", file=sys.stderr)
    if errors:
        print(f"skipped {len(errors)} bad record(s)", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------- train


def cmd_train(args) -> int:
    from . import ensemble

    rows = _read_metric_rows(args.metrics)
    if not rows:
        raise UsageError("no rows in metrics file")
    unlabeled = [r.id for r in rows if r.label is None]
    if unlabeled:
        raise UsageError(f"labels required; unlabeled rows: {', '.join(unlabeled[:5])}")
    X = ensemble.feature_matrix([r.vector for r in rows])
    labels = [r.label for r in rows]
    if args.kind == "forest":
        config = ensemble.ForestConfig(n_trees=args.n_trees, max_depth=args.max_depth)
        model = ensemble.train_forest(X, labels, config, args.seed)
    else:
        config = ensemble.BoostConfig(
            n_rounds=args.rounds, learning_rate=args.learning_rate, max_depth=args.max_depth or 6
        )
        model = ensemble.train_boosted(X, labels, config, args.seed)
    write_atomic(args.output, ensemble.save_model(model))
    counts = {lab.text: labels.count(lab) for lab in FluencyLabel}
    print(
        f"trained {args.kind}: {len(rows)} rows, classes {counts}, seed {args.seed}, "
        f"{len(model.trees)} trees -> {args.output}"
    )
    return EXIT_OK


# ---------------------------------------------------------------- score


def _endpoint_config(args):
    from .llm import LlmEndpointConfig

    return LlmEndpointConfig(
        base_url=args.endpoint or LlmEndpointConfig.base_url,
        model=args.model,
        token_env=args.token_env,
        temperature=args.temperature,
        max_retries=args.max_retries,
        timeout=args.timeout,
        max_concurrent=args.max_concurrent,
    )


def _prototype_pool(args, rows):
    if args.prototypes:
        pool_rows = _read_metric_rows(args.prototypes)
        exclude = [r.id for r in rows]
    else:
        pool_rows, exclude = rows, []
        log.info("drawing prototypes from the scored file itself")
    return [(r.id, r.vector, r.label) for r in pool_rows], exclude


PREDICTION_HEADER = ("id", "language", "task", "prediction", "p_low", "p_medium", "p_high", "attempts", "error")


def cmd_score(args) -> int:
    rows = _read_metric_rows(args.metrics)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(PREDICTION_HEADER)
    n_errors = 0
    if args.model_file:
        from . import ensemble

        model = ensemble.load_model(_read(args.model_file))
        if rows:
            proba = model.predict_proba(ensemble.feature_matrix([r.vector for r in rows], model.feature_order))
        for i, r in enumerate(rows):
            probs = dict(zip(model.classes, proba[i]))
            label = model.classes[int(proba[i].argmax())]
            writer.writerow(
                [r.id, r.vector.language.value, r.vector.task.value, label.text]
                + [repr(float(probs.get(c, 0.0))) for c in FluencyLabel]
                + ["", ""]
            )
    elif args.stub or args.endpoint:
        from . import llm

        pool, exclude = _prototype_pool(args, rows)
        try:
            prototypes = llm.select_prototypes(pool, args.prototypes_per_class, args.seed, exclude)
        except ValueError as exc:
            raise UsageError(f"cannot select prototypes: {exc}") from None
        bundles = [llm.build_prompt(r.vector, prototypes) for r in rows]
        scorer = llm.BatchScorer(_endpoint_config(args), stub=args.stub)
        items = scorer.score(bundles)
        for r, item in zip(rows, items):
            if item.error:
                n_errors += 1
                if not args.continue_on_error:
                    raise RuntimeFailure(f"row {r.id}: {item.error}")
                writer.writerow([r.id, r.vector.language.value, r.vector.task.value, "", "", "", "", "", item.error])
            else:
                resp = item.response
                writer.writerow(
                    [r.id, r.vector.language.value, r.vector.task.value, resp.label.text, "", "", "", resp.attempts, ""]
                )
    else:
        raise UsageError("missing model path: give --model-file, --stub or --endpoint")
    write_atomic(args.output, out.getvalue().encode("utf-8"))
    print(f"scored {len(rows)} row(s) ({n_errors} error(s)) -> {args.output}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------- evaluate


def read_predictions(data: bytes) -> list[tuple[str, FluencyLabel | None, str]]:
    reader = csv.DictReader(io.StringIO(data.decode("utf-8")))
    if reader.fieldnames is None or "id" not in reader.fieldnames or "prediction" not in reader.fieldnames:
        raise ParseError("predictions file needs 'id' and 'prediction' columns", line=1)
    out = []
    for row in reader:
        pred = row["prediction"].strip()
        out.append((row["id"], FluencyLabel.parse(pred) if pred else None, row.get("error") or ""))
    return out


def read_truth(data: bytes) -> dict[str, tuple[FluencyLabel | None, Language]]:
    """Labels by id from either a manifest (JSON Lines) or an exported metrics file."""
    if data.lstrip()[:1] == b"{":
        dataset = parse_manifest(data)
        return {rec.id: (rec.label, rec.language) for rec in dataset.records}
    return {r.id: (r.label, r.vector.language) for r in read_metrics(data)}


def cmd_evaluate(args) -> int:
    from .evaluation import evaluate_groups, render_results_table

    truth = read_truth(_read(args.truth))
    results, summary = {}, {}
    for item in args.predictions:
        name, _, path = item.rpartition("=") if "=" in item else ("", "", item)
        name = name or Path(path).stem
        preds = read_predictions(_read(path))
        missing = [pid for pid, _, _ in preds if pid not in truth]
        if missing:
            raise ValidationError(f"{path}: id(s) missing from truth: {', '.join(missing)}")
        unlabeled = [pid for pid, _, _ in preds if truth[pid][0] is None]
        if unlabeled:
            raise ValidationError(f"truth has no human label for: {', '.join(unlabeled)}")
        scored = [(pid, p) for pid, p, _ in preds if p is not None]
        if not scored:
            raise ValidationError(f"{path}: no scored rows")
        results[name] = evaluate_groups(
            [truth[pid][0] for pid, _ in scored], [p for _, p in scored], [truth[pid][1] for pid, _ in scored]
        )
        summary[name] = {"n_rows": len(preds), "n_failed": len(preds) - len(scored)}
    notes = []
    if args.audio_baseline_row:
        notes.append("gpt-audio: audio-input baseline not implemented (needs raw audio)")
    text = render_results_table(results, args.seed, notes=notes)
    report = {
        "tool": "fluencyassess",
        "version": __version__,
        "seed": args.seed,
        "truth": str(args.truth),
        "methods": {
            name: {"rows": summary[name], **{g: rep.to_json() for g, rep in reps.items()}}
            for name, reps in results.items()
        },
    }
    write_atomic(args.output, _json_bytes(report))
    if args.text_output:
        write_atomic(args.text_output, text.encode("utf-8"))
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------- ablate


def _read_ids(path: str) -> tuple[str, ...]:
    return tuple(line.strip() for line in _read(path).decode("utf-8").splitlines() if line.strip())


def cmd_ablate(args) -> int:
    from .core import METRIC_FIELDS
    from .evaluation import EnsembleScorer, LlmScorer, Split, make_split, render_ablation_table, run_ablation

    rows = _read_metric_rows(args.metrics)
    if any(r.label is None for r in rows):
        raise UsageError("labels required for ablation")
    if args.train_ids or args.test_ids:
        if not (args.train_ids and args.test_ids):
            raise UsageError("--train-ids and --test-ids go together")
        split = Split(_read_ids(args.train_ids), _read_ids(args.test_ids))
        unknown = set(split.train_ids + split.test_ids) - {r.id for r in rows}
        if unknown:
            raise ValidationError(f"split ids not in metrics file: {', '.join(sorted(unknown))}")
    else:
        split = make_split([r.id for r in rows], args.test_fraction, args.seed)
    if args.scorer in ("forest", "boosted"):
        scorer = EnsembleScorer(args.scorer, args.seed)
    else:
        from .llm import BatchScorer

        stub = args.scorer == "llm-stub"
        if not stub:
            _endpoint_config(args).token()
        scorer = LlmScorer(
            BatchScorer(_endpoint_config(args), stub=stub),
            args.prototypes_per_class,
            args.seed,
            name=args.scorer,
        )
    features = tuple(args.features.split(",")) if args.features else METRIC_FIELDS
    report = run_ablation(rows, scorer, features, split, args.seed)
    text = render_ablation_table(report)
    write_atomic(args.output, _json_bytes({"tool": "fluencyassess", "version": __version__, **report.to_json()}))
    if args.text_output:
        write_atomic(args.text_output, text.encode("utf-8"))
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------- prompt-preview


def cmd_prompt_preview(args) -> int:
    from . import llm
    from .core import VECTOR_FIELDS

    rows = _read_metric_rows(args.metrics)
    by_id = {r.id: r for r in rows}
    if args.id not in by_id:
        raise UsageError(f"id {args.id!r} not in {args.metrics}")
    pool, exclude = _prototype_pool(args, rows)
    exclude = list(exclude) + [args.id]
    prototypes = llm.select_prototypes(pool, args.prototypes_per_class, args.seed, exclude)
    fields = [f for f in VECTOR_FIELDS if f not in set(args.exclude_feature or [])]
    bundle = llm.build_prompt(by_id[args.id].vector, prototypes, fields)
    print("=== system ===")
    print(bundle.system_content)
    print("=== user ===")
    print(bundle.user_content)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_llm_flags(p):
    p.add_argument("--endpoint", help="chat-completion base URL, e.g. https://api.openai.com/v1")
    p.add_argument("--model", default="gpt-4o-mini", help="LLM model name")
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--token-env", default="OPENAI_API_KEY", help="environment variable holding the bearer token")
    p.add_argument("--max-retries", type=int, default=2)
    p.add_argument("--max-concurrent", type=int, default=4)
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--prototypes", help="labelled metrics file to draw prototypes from")
    p.add_argument("--prototypes-per-class", type=int, default=3)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fluencyassess", description="Fluency metrics, scoring and evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="random seed (default 42)")

    p = sub.add_parser("extract", help="manifest -> per-utterance metrics CSV")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--pause-threshold", type=float, default=0.2, help="minimum gap in seconds counted as a pause")
    p.add_argument("--malay-rules", help="Malay G2P rule file (default: shipped table)")
    p.add_argument("--tamil-rules", help="Tamil G2P rule file (default: shipped table)")
    p.add_argument("--strict", action="store_true", help="fail without output on any bad record")
    common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a forest or boosted model on labelled metrics")
    p.add_argument("metrics")
    p.add_argument("--kind", choices=("forest", "boosted"), required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--rounds", type=int, default=100)
    p.add_argument("--learning-rate", type=float, default=0.3)
    p.add_argument("--max-depth", type=int, default=None, help="default: unlimited (forest), 6 (boosted)")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="predict fluency classes for a metrics file")
    p.add_argument("metrics")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--model-file", help="ensemble model written by 'train'")
    p.add_argument("--stub", action="store_true", help="use the offline deterministic stub evaluator")
    p.add_argument("--continue-on-error", action="store_true")
    _add_llm_flags(p)
    common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="compare predictions with human labels")
    p.add_argument("predictions", nargs="+", help="predictions CSV, optionally NAME=PATH")
    p.add_argument("--truth", required=True, help="manifest or labelled metrics file")
    p.add_argument("-o", "--output", required=True, help="JSON report path")
    p.add_argument("--text-output", help="also write the text table here")
    p.add_argument("--audio-baseline-row", action="store_true", help="note the unimplemented audio-input baseline")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="leave-one-metric-out ablation")
    p.add_argument("metrics")
    p.add_argument("--scorer", choices=("forest", "boosted", "llm-stub", "llm-live"), default="llm-stub")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--text-output")
    p.add_argument("--test-fraction", type=float, default=0.3, help="0 trains and tests on all rows")
    p.add_argument("--train-ids", help="file with one training id per line")
    p.add_argument("--test-ids", help="file with one test id per line")
    p.add_argument("--features", help="comma-separated metrics to ablate (default: all eight)")
    _add_llm_flags(p)
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("prompt-preview", help="print the exact prompt for one utterance")
    p.add_argument("metrics")
    p.add_argument("--id", required=True)
    p.add_argument("--exclude-feature", action="append", help="drop a metric from the prompt (repeatable)")
    _add_llm_flags(p)
    common(p)
    p.set_defaults(func=cmd_prompt_preview)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    from .llm import EndpointError

    try:
        return args.func(args)
    except (EndpointError, RuntimeFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (FluencyError, ValueError) as exc:  # validation, parse, config and model-format errors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
