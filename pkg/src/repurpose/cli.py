"""Command-line pipeline: every stage is a file-to-file subcommand.

Stages communicate through plain artifacts (snapshot store directory,
change-event JSONL, feature CSV, model JSON, prediction CSV, report JSON),
so each one is independently runnable and resumable.  ``pipeline`` chains
ingest -> changes -> features -> classify and writes a report; with a
labels file it also trains a forest on a stratified split and evaluates on
the held-out part.

Exit codes: 0 success, 2 missing input, 3 corrupted store, 4 model or
feature mismatch, 5 invalid configuration, 1 anything else.  Failures
print a machine-readable error object to stderr.

Reproducibility: the seed is recorded in every artifact (inside JSON
artifacts; as a .meta.json sidecar next to CSV artifacts).  Timestamps
appear only inside "meta" blocks.
"""

from __future__ import annotations

import argparse
import csv
import glob as globmod
import json
import logging
import os
import shlex
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import annotation, features as feats, forest, ingest as ing, stats as statsmod, store as storemod
from .embedding import CommandEmbeddingProvider, HashedNgramEmbedding, HttpEmbeddingProvider
from .metrics import evaluate
from .synthetic import SyntheticConfig, generate_archive

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_GENERIC = 1
EXIT_MISSING_INPUT = 2
EXIT_CORRUPT_STORE = 3
EXIT_MODEL_MISMATCH = 4
EXIT_BAD_CONFIG = 5

TOKEN_ENV_VAR = "REPURPOSE_SERVICE_TOKEN"


class CliError(Exception):
    def __init__(self, category: str, detail: str, code: int):
        super().__init__(detail)
        self.category = category
        self.code = code


def _missing(detail: str) -> CliError:
    return CliError("missing_input", detail, EXIT_MISSING_INPUT)


def _bad_config(detail: str) -> CliError:
    return CliError("invalid_config", detail, EXIT_BAD_CONFIG)


# --- small shared helpers ------------------------------------------------------


def _expand_inputs(patterns: list[str]) -> list[Path]:
    paths: list[Path] = []
    for pattern in patterns:
        matches = sorted(globmod.glob(pattern))
        if matches:
            paths.extend(Path(m) for m in matches)
        elif Path(pattern).exists():
            paths.append(Path(pattern))
    if not paths:
        raise _missing(f"no input files match {patterns}")
    return paths


def _load_config_file(path: str | None) -> dict[str, str]:
    """KEY=VALUE lines; '#' starts a comment.  Flags override these."""
    if path is None:
        return {}
    if not Path(path).exists():
        raise _missing(f"config file {path} does not exist")
    out: dict[str, str] = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise _bad_config(f"{path}:{line_no}: expected KEY=VALUE")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _make_provider(spec: str, dimension: int, hash_seed: int):
    if spec == "default":
        return HashedNgramEmbedding(dimension=dimension, hash_seed=hash_seed)
    if spec.startswith("http:") or spec.startswith("https:"):
        return HttpEmbeddingProvider(spec)
    if spec.startswith("command:"):
        return CommandEmbeddingProvider(shlex.split(spec[len("command:"):]))
    raise _bad_config(f"provider must be default, http(s)://..., or command:..., got {spec!r}")


def _read_labels_csv(path) -> dict[str, str]:
    if not Path(path).exists():
        raise _missing(f"labels file {path} does not exist")
    labels: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["event_ref", "label"]:
            raise _bad_config(f"{path}: labels CSV must start with header event_ref,label")
        for row in reader:
            if not row:
                continue
            ref, label = row[0], row[1]
            if label not in ("positive", "negative", "unsure"):
                raise _bad_config(f"{path}: bad label {label!r} for {ref}")
            labels[ref] = label
    return labels


def _write_predictions_csv(rows: list[tuple[str, float, str]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["event_ref", "score", "label"])
        for ref, score, label in rows:
            writer.writerow([ref, repr(score), label])


def _read_predictions_csv(path) -> list[tuple[str, float, str]]:
    if not Path(path).exists():
        raise _missing(f"predictions file {path} does not exist")
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["event_ref", "score"]:
            raise _bad_config(f"{path}: predictions CSV must start with event_ref,score")
        for row in reader:
            if row:
                out.append((row[0], float(row[1]), row[2] if len(row) > 2 else ""))
    return out


def _write_sidecar(artifact_path, payload: dict) -> None:
    side = Path(str(artifact_path) + ".meta.json")
    side.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _events_or_die(path) -> list:
    if not Path(path).exists():
        raise _missing(f"events file {path} does not exist")
    return storemod.read_events_jsonl(path)


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# --- subcommand implementations ---------------------------------------------------


def cmd_ingest(args) -> int:
    paths = _expand_inputs(args.input)
    with storemod.SnapshotStore(args.store) as sink:
        stats = ing.ingest_stream(paths, sink, workers=args.workers)
    _print_json(stats.to_dict())
    return EXIT_OK


def cmd_changes(args) -> int:
    store = storemod.SnapshotStore(args.store, create=False)
    scan = store.scan_changed_users()
    events = []
    for user_id in scan:
        events.extend(store.extract_change_events(user_id))
    storemod.write_events_jsonl(events, args.out)
    _print_json(
        {
            "users_total": scan.total_users,
            "users_changed": scan.changed_users,
            "events": scan.total_events,
            "out": str(args.out),
        }
    )
    return EXIT_OK


def _assemble_features(events, families, provider):
    vectors = []
    skipped = []
    for event in events:
        try:
            vectors.append(feats.assemble(event, families, provider))
        except feats.FeatureComputationError as exc:
            logger.warning("skipping %s: %s", event.event_ref, exc)
            skipped.append(event.event_ref)
    return vectors, skipped


def cmd_features(args) -> int:
    events = _events_or_die(args.events)
    families = [f.strip() for f in args.families.split(",") if f.strip()]
    provider = _make_provider(args.provider, args.hash_dim, args.hash_seed)
    vectors, skipped = _assemble_features(events, families, provider)
    if not vectors:
        raise _missing("no feature vectors could be computed")
    feats.write_features_csv(vectors, args.out)
    _write_sidecar(
        args.out,
        {
            "families": families,
            "provider": args.provider,
            "hash_dim": args.hash_dim,
            "hash_seed": args.hash_seed,
            "events": len(events),
            "skipped": skipped,
        },
    )
    _print_json({"vectors": len(vectors), "skipped": len(skipped), "out": str(args.out)})
    return EXIT_OK


def _join_examples(vectors, labels):
    examples = []
    for fv in vectors:
        label = labels.get(fv.event_ref)
        if label == "positive":
            examples.append((fv, 1))
        elif label == "negative":
            examples.append((fv, 0))
    return examples


def cmd_train(args) -> int:
    vectors = feats.read_features_csv(args.features)
    labels = _read_labels_csv(args.labels)
    examples = _join_examples(vectors, labels)
    if not examples:
        raise _missing("no feature vectors matched the labels file")
    config = forest.TrainConfig(
        n_trees=args.trees,
        max_depth=args.depth,
        min_leaf=args.min_leaf,
        features_per_split=args.features_per_split,
        seed=args.seed,
    )
    model = forest.train_forest(examples, config, n_jobs=args.jobs)
    forest.save_model(model, args.model)
    _print_json(
        {
            "model": str(args.model),
            "examples": len(examples),
            "positives": sum(lbl for _, lbl in examples),
            "config": config.to_dict(),
        }
    )
    return EXIT_OK


def cmd_classify(args) -> int:
    vectors = feats.read_features_csv(args.features)
    if args.model and args.baseline:
        raise _bad_config("pass either --model or --baseline, not both")
    model = forest.load_model(args.model) if args.model else forest.baseline_model()
    rows = []
    for fv in vectors:
        score = forest.predict(model, fv)
        label = "positive" if score >= args.threshold else "negative"
        rows.append((fv.event_ref, score, label))
    _write_predictions_csv(rows, args.out)
    _write_sidecar(
        args.out,
        {
            "model": str(args.model) if args.model else "baseline",
            "threshold": args.threshold,
            "vectors": len(rows),
        },
    )
    _print_json(
        {
            "predictions": len(rows),
            "positives": sum(1 for _, _, label in rows if label == "positive"),
            "out": str(args.out),
        }
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    predictions = _read_predictions_csv(args.predictions)
    labels = _read_labels_csv(args.labels)
    scores, truth = [], []
    for ref, score, _ in predictions:
        label = labels.get(ref)
        if label == "positive":
            scores.append(score)
            truth.append(1)
        elif label == "negative":
            scores.append(score)
            truth.append(0)
    if not scores:
        raise _missing("no predictions matched the labels file")
    report = evaluate(scores, truth, args.threshold)
    payload = report.to_dict()
    if args.out:
        Path(args.out).write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    _print_json(payload)
    return EXIT_OK


def cmd_characterize(args) -> int:
    events = _events_or_die(args.events)
    labels = _read_labels_csv(args.labels)
    report = statsmod.characterize(events, labels)
    statsmod.write_report(report, events, labels, args.out_dir)
    _print_json(report.to_dict())
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    events = _events_or_die(args.events)
    vectors = feats.read_features_csv(args.features)
    features_by_ref = {fv.event_ref: fv for fv in vectors}
    model = forest.load_model(args.model) if args.model else None
    store = annotation.AnnotationStore(
        args.annotation_dir, required_annotators=args.required_annotators
    )
    for annotator in args.annotators.split(","):
        annotator = annotator.strip()
        if annotator:
            store.register_annotator(annotator)
    if args.enqueue:
        result = store.enqueue(events, stratum=args.stratum, seed=args.seed)
        logger.info("enqueued %d candidates (%d rejected)", result.enqueued,
                    len(result.rejected))
    service = annotation.AnnotationService(
        store,
        events,
        features_by_ref,
        models_dir=Path(args.annotation_dir) / "models",
        model=model,
        train_config=forest.TrainConfig(seed=args.seed),
    )
    app = create_app(service, auth_token=os.environ.get(TOKEN_ENV_VAR) or None,
                     static_dir=args.static or None)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def _stratified_split(examples, test_fraction: float, seed: int):
    labels = [label for _, label in examples]
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0x5B11,)))
    test_idx: set[int] = set()
    for cls in (0, 1):
        idx = [i for i, label in enumerate(labels) if label == cls]
        rng.shuffle(idx)
        take = max(1, int(round(len(idx) * test_fraction))) if idx else 0
        test_idx.update(idx[:take])
    train = [ex for i, ex in enumerate(examples) if i not in test_idx]
    test = [ex for i, ex in enumerate(examples) if i in test_idx]
    return train, test


def cmd_pipeline(args) -> int:
    work = Path(args.work_dir)
    work.mkdir(parents=True, exist_ok=True)
    paths = _expand_inputs(args.input)

    with storemod.SnapshotStore(work / "store") as sink:
        ingest_stats = ing.ingest_stream(paths, sink, workers=args.workers)
        scan = sink.scan_changed_users()
        events = []
        for user_id in scan:
            events.extend(sink.extract_change_events(user_id))
    events_path = work / "events.jsonl"
    storemod.write_events_jsonl(events, events_path)

    families = [f.strip() for f in args.families.split(",") if f.strip()]
    provider = _make_provider(args.provider, args.hash_dim, args.hash_seed)
    vectors, skipped = _assemble_features(events, families, provider)
    if not vectors:
        raise _missing("pipeline produced no feature vectors (no change events?)")
    features_path = work / "features.csv"
    feats.write_features_csv(vectors, features_path)

    metrics_block = None
    model_path = None
    if args.labels:
        labels = _read_labels_csv(args.labels)
        examples = _join_examples(vectors, labels)
        if len(examples) < 8:
            raise _missing(f"labels matched only {len(examples)} events; need at least 8")
        train, held_out = _stratified_split(examples, args.test_fraction, args.seed)
        config = forest.TrainConfig(seed=args.seed)
        model = forest.train_forest(train, config)
        model_path = work / "model.json"
        forest.save_model(model, model_path)
        held_scores = forest.predict_many(model, [fv for fv, _ in held_out])
        report = evaluate(held_scores, [label for _, label in held_out], args.threshold)
        metrics_block = {
            "held_out": report.to_dict(),
            "train_size": len(train),
            "test_size": len(held_out),
            "train_config": config.to_dict(),
        }
    else:
        model = forest.baseline_model()

    rows = []
    for fv in vectors:
        score = forest.predict(model, fv)
        label = "positive" if score >= args.threshold else "negative"
        rows.append((fv.event_ref, score, label))
    predictions_path = work / "predictions.csv"
    _write_predictions_csv(rows, predictions_path)

    report_payload = {
        "meta": {"created_at": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")},
        "config": {
            "seed": args.seed,
            "families": families,
            "provider": args.provider,
            "threshold": args.threshold,
            "inputs": [str(p) for p in paths],
            "model": "trained" if args.labels else "baseline",
        },
        "ingest": ingest_stats.to_dict(),
        "scan": {
            "users_total": scan.total_users,
            "users_changed": scan.changed_users,
            "events": scan.total_events,
        },
        "features": {"vectors": len(vectors), "skipped": skipped},
        "metrics": metrics_block,
        "positives": sorted(ref for ref, _, label in rows if label == "positive"),
        "artifacts": {
            "store": str(work / "store"),
            "events": str(events_path),
            "features": str(features_path),
            "model": str(model_path) if model_path else None,
            "predictions": str(predictions_path),
        },
    }
    report_path = work / "report.json"
    report_path.write_text(
        json.dumps(report_payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    summary = dict(report_payload)
    summary["positives"] = len(report_payload["positives"])
    summary["report"] = str(report_path)
    _print_json(summary)
    return EXIT_OK


def cmd_synth(args) -> int:
    config = SyntheticConfig(accounts=args.accounts, seed=args.seed, gzip_output=args.gzip)
    truth = generate_archive(args.out_dir, config)
    _print_json(
        {
            "archive": str(truth.archive_path),
            "records": truth.records_written,
            "events": len(truth.labels),
            "positives": sum(1 for v in truth.labels.values() if v == "positive"),
            "labels": str(Path(args.out_dir) / "labels.csv"),
        }
    )
    return EXIT_OK


# --- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="repurpose",
        description="Detect misleading account repurposing from archived tweet streams.",
    )
    parser.add_argument("--config", help="KEY=VALUE config file; flags override it")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse archive files into a snapshot store")
    p.add_argument("--input", nargs="+", required=True, help="file paths or globs")
    p.add_argument("--store", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("changes", help="extract change events from a store")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_changes)

    p = sub.add_parser("features", help="compute feature vectors for events")
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--families", default="EDT,DSIM,MD,STY")
    p.add_argument("--provider", default="default")
    p.add_argument("--hash-dim", type=int, default=512)
    p.add_argument("--hash-seed", type=int, default=0x5EED)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train a random forest on labeled features")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--min-leaf", type=int, default=2)
    p.add_argument("--features-per-split", type=int, default=None)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="score feature vectors with a model")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model")
    p.add_argument("--baseline", action="store_true",
                   help="use the fixed threshold rule (default when no model)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="score predictions against labels")
    p.add_argument("--predictions", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("characterize", help="statistics over labeled events")
    p.add_argument("--events", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_characterize)

    p = sub.add_parser("serve", help="run the annotation service")
    p.add_argument("--annotation-dir", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--model")
    p.add_argument("--annotators", default="a1")
    p.add_argument("--required-annotators", type=int, default=1)
    p.add_argument("--enqueue", action="store_true",
                   help="enqueue all events as candidates at startup")
    p.add_argument("--stratum", default="integrity", choices=list(annotation.STRATA))
    p.add_argument("--static", help="directory with the UI bundle to serve at /")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("pipeline", help="ingest -> changes -> features -> classify -> report")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--work-dir", required=True)
    p.add_argument("--labels", help="truth labels; enables train + held-out evaluation")
    p.add_argument("--families", default="EDT,DSIM,MD,STY")
    p.add_argument("--provider", default="default")
    p.add_argument("--hash-dim", type=int, default=512)
    p.add_argument("--hash-seed", type=int, default=0x5EED)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--test-fraction", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("synth", help="generate the synthetic fixture archive")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--accounts", type=int, default=1000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--gzip", action="store_true")
    p.set_defaults(func=cmd_synth)

    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Prepend config-file values as flags so command-line flags win."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    try:
        config_path = argv[idx + 1]
    except IndexError as exc:
        raise _bad_config("--config needs a file path") from exc
    values = _load_config_file(config_path)
    if not values:
        return argv
    command_idx = idx  # insert extra flags right after the subcommand name
    for i, token in enumerate(argv):
        if not token.startswith("-") and token in {
            "ingest", "changes", "features", "train", "classify",
            "evaluate", "characterize", "serve", "pipeline", "synth",
        }:
            command_idx = i
            break
    extra: list[str] = []
    for key, value in values.items():
        flag = "--" + key.replace("_", "-")
        extra.extend([flag, value])
    return argv[: command_idx + 1] + extra + argv[command_idx + 1 :]


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s",
        )
        return args.func(args)
    except CliError as exc:
        print(json.dumps({"error": {"category": exc.category, "detail": str(exc)}}),
              file=sys.stderr)
        return exc.code
    except storemod.CorruptStoreError as exc:
        print(json.dumps({"error": {"category": "corrupted_store", "detail": str(exc)}}),
              file=sys.stderr)
        return EXIT_CORRUPT_STORE
    except storemod.StoreError as exc:
        print(json.dumps({"error": {"category": "missing_input", "detail": str(exc)}}),
              file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (forest.FeatureOrderMismatch, forest.MissingFeatureError,
            forest.ModelFormatError, forest.ModelVersionError) as exc:
        print(json.dumps({"error": {"category": "model_feature_mismatch",
                                    "detail": str(exc)}}), file=sys.stderr)
        return EXIT_MODEL_MISMATCH
    except FileNotFoundError as exc:
        print(json.dumps({"error": {"category": "missing_input", "detail": str(exc)}}),
              file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (ValueError, forest.TrainingError, annotation.AnnotationError) as exc:
        print(json.dumps({"error": {"category": "invalid_config", "detail": str(exc)}}),
              file=sys.stderr)
        return EXIT_BAD_CONFIG
    except Exception as exc:  # pragma: no cover - last resort
        print(json.dumps({"error": {"category": "internal", "detail": str(exc)}}),
              file=sys.stderr)
        return EXIT_GENERIC


if __name__ == "__main__":
    sys.exit(main())
