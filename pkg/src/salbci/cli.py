"""Command-line entry point: ``salbci <subcommand> ...``.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 backend error.
Logs go to stderr as ``key=value`` lines; data goes to files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

from . import __version__
from .distributions import CategoricalDistribution, TASKS, space_for_task
from .errors import ConfigError, SalbciError, SchemaViolation

log = logging.getLogger("salbci")


class KeyValueFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        parts = [f"level={record.levelname}", f"module={record.name}"]
        for key in ("stage", "video_id"):
            if hasattr(record, key):
                parts.append(f"{key}={getattr(record, key)}")
        parts.append(f"msg={json.dumps(record.getMessage())}")
        return " ".join(parts)


def _setup_logging(verbosity: int) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(KeyValueFormatter())
    root = logging.getLogger("salbci")
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbosity > 1 else logging.INFO if verbosity == 1 else logging.WARNING)
    root.propagate = False
    logging.captureWarnings(True)
    pyw = logging.getLogger("py.warnings")
    pyw.handlers[:] = [handler]
    pyw.propagate = False


def _read_dists(path) -> dict[str, CategoricalDistribution]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    obj = json.loads(path.read_text())
    if isinstance(obj, dict) and "distributions" in obj:
        obj = obj["distributions"]
    return {vid: CategoricalDistribution.from_dict(d, source=str(path)) for vid, d in obj.items()}


def _write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# ---------------------------------------------------------------- commands


def cmd_validate(args) -> int:
    from .ingest import load_dataset

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        records = load_dataset(args.manifest)
    for w in caught:
        log.warning(str(w.message))
    with_features = sum(r.features is not None for r in records)
    log.warning("ok: %d videos, %d with features, %d warnings", len(records), with_features, len(caught))
    return 0


def cmd_expressivity(args) -> int:
    from .expressivity import score_dataset, scores_to_csv
    from .ingest import load_dataset
    from .metrics import fingerprint

    records = load_dataset(args.manifest)
    calibration = None
    if args.calibration_min is not None or args.calibration_max is not None:
        if args.calibration_min is None or args.calibration_max is None:
            raise ConfigError("--calibration-min and --calibration-max go together")
        calibration = (args.calibration_min, args.calibration_max)
    wr = (args.weight_low, args.weight_high)
    scores = score_dataset(records, wr, calibration, jobs=args.jobs)
    fp = fingerprint({"manifest": str(args.manifest), "weight_range": list(wr), "calibration": calibration})
    _write(args.out, scores_to_csv(scores, fp))
    return 0


def cmd_fuse(args) -> int:
    from .expressivity import read_scores_csv
    from .fusion import FusionConfig, PriorSpec, fuse_many, resolve_prior
    from .metrics import fingerprint

    faces = _read_dists(args.face)
    contexts = _read_dists(args.context)
    if set(faces) != set(contexts):
        raise SchemaViolation("face and context files cover different videos")
    ids = sorted(faces)
    space = faces[ids[0]].space
    records = None
    if args.prior == "empirical":
        if not args.manifest:
            raise ConfigError("--prior empirical needs --manifest")
        from .ingest import load_dataset

        records = load_dataset(args.manifest)
        prior_spec = PriorSpec("empirical")
    elif args.prior == "file":
        if not args.prior_file:
            raise ConfigError("--prior file needs --prior-file")
        prior_spec = PriorSpec("explicit", _read_single(args.prior_file))
    else:
        prior_spec = PriorSpec("uniform")
    task = "valence" if space == space_for_task("valence") else "basic_emotion"
    config = FusionConfig(prior=prior_spec, epsilon=args.epsilon)
    prior = resolve_prior(prior_spec, space, records, task)
    weights = None
    if not args.no_salience:
        if not args.weights:
            raise ConfigError("salience fusion needs --weights (or pass --no-salience)")
        table = {s.video_id: s.weight for s in read_scores_csv(args.weights)}
        missing = [v for v in ids if v not in table]
        if missing:
            raise SchemaViolation(f"no weight for videos {missing[:5]}", file=str(args.weights))
        weights = [table[v] for v in ids]
    fused = fuse_many([faces[v] for v in ids], [contexts[v] for v in ids], prior, weights, args.epsilon)
    variant = "bci" if args.no_salience else "salience"
    fp = fingerprint({"fusion": config.describe(), "variant": variant, "face": str(args.face), "context": str(args.context), "weights": str(args.weights)})
    body = {
        "config_fingerprint": fp,
        "task": task,
        "variant": variant,
        "distributions": {v: d.to_dict() for v, d in zip(ids, fused)},
    }
    _write(args.out, json.dumps(body, indent=2, sort_keys=True) + "\n")
    return 0


def _read_single(path) -> CategoricalDistribution:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    return CategoricalDistribution.from_dict(json.loads(path.read_text()), source=str(path))


def cmd_evaluate(args) -> int:
    from .metrics import evaluate, format_table

    preds = _read_dists(args.predictions)
    if args.truths:
        truths = _read_dists(args.truths)
    elif args.manifest:
        from .ingest import load_dataset
        from .pipeline import truths_for

        truths = truths_for(load_dataset(args.manifest), args.task)
    else:
        raise ConfigError("evaluate needs --truths or --manifest")
    task = args.task
    report = evaluate(preds, truths, task, args.pearson_mode, args.epsilon,
                      {"predictions": str(args.predictions), "truths": str(args.truths or args.manifest)})
    _write(args.out, report.to_json())
    if args.table:
        _write(args.table, format_table([(args.label, args.salience, report)]))
    return 0


def cmd_analyze_salience(args) -> int:
    from .expressivity import read_scores_csv, score_dataset
    from .ingest import load_dataset
    from .metrics import closeness_analysis, closeness_to_csv, fingerprint, plot_closeness

    records = load_dataset(args.manifest)
    scores = read_scores_csv(args.expressivity) if args.expressivity else score_dataset(records)
    tertiles = {s.video_id: s.tertile for s in scores}
    result = closeness_analysis(records, tertiles, args.task, args.metric, args.epsilon)
    fp = fingerprint({"manifest": str(args.manifest), "task": args.task, "metric": args.metric,
                      "epsilon": args.epsilon, "expressivity": str(args.expressivity)})
    _write(args.out, closeness_to_csv(result, fp))
    if args.plot:
        plot_closeness(result, args.plot, fp)
    return 0


def cmd_query_context(args) -> int:
    from .context_llm import ContextQuerySpec, LiveBackend, MockBackend, ResponseCache, query_context_distribution

    if args.mock:
        backend = MockBackend.from_file(args.mock)
        kind = "mock"
    else:
        if not args.base_url or not args.model:
            raise ConfigError("live backend needs --base-url and --model (or use --mock)")
        backend = LiveBackend(args.base_url, args.model, api_key_env=args.api_key_env)
        kind = "live"
    spec = ContextQuerySpec(outcome=args.outcome, task=args.task, n_samples=args.n_samples, backend=kind)
    cache = ResponseCache(args.cache_dir) if args.cache_dir else None
    dist = query_context_distribution(spec, backend, cache, max_concurrency=args.max_concurrency)
    text = json.dumps(dist.to_dict(), indent=2) + "\n"
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_simulate(args) -> int:
    from .synth import SynthConfig, write_synthetic

    config = SynthConfig(
        n_videos=args.n_videos,
        seed=args.seed,
        concentration=args.concentration,
        rating_count=args.rating_count,
        weight_link=args.weight_link,
        annotation_noise=args.noise,
    )
    manifest = write_synthetic(config, args.out)
    log.info("wrote %s", manifest)
    return 0


def cmd_run(args) -> int:
    from .pipeline import load_config, run_pipeline

    overrides = {
        "pipeline.manifest": args.manifest,
        "pipeline.out": args.out,
        "pipeline.tasks": args.task,
        "pipeline.jobs": args.jobs,
        "pipeline.plot": "true" if args.plot else None,
        "fusion.prior": args.prior,
        "fusion.epsilon": args.epsilon,
        "metrics.pearson_mode": args.pearson_mode,
        "metrics.closeness": args.closeness,
        "sources.face": args.face_source,
        "sources.context": args.context_source,
        "llm.mock_table": args.mock,
        "llm.cache_dir": args.cache_dir,
    }
    config = load_config(args.config, overrides)
    run_pipeline(config)
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="salbci", description="Salience-adjusted cue integration for emotion recognition.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="load a manifest and check every file")
    s.add_argument("--manifest", required=True)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("expressivity", help="score expressivity and weights per video (CSV)")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--weight-low", type=float, default=0.5)
    s.add_argument("--weight-high", type=float, default=1.0)
    s.add_argument("--calibration-min", type=float)
    s.add_argument("--calibration-max", type=float)
    s.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    s.set_defaults(func=cmd_expressivity)

    s = sub.add_parser("fuse", help="fuse face and context distributions")
    s.add_argument("--face", required=True, help="JSON {video_id: distribution}")
    s.add_argument("--context", required=True, help="JSON {video_id: distribution}")
    s.add_argument("--weights", help="expressivity CSV with a weight column")
    s.add_argument("--prior", choices=["uniform", "empirical", "file"], default="uniform")
    s.add_argument("--prior-file")
    s.add_argument("--manifest", help="needed for --prior empirical")
    s.add_argument("--epsilon", type=float, default=1e-6)
    s.add_argument("--no-salience", action="store_true", help="plain rule (both exponents 1)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("evaluate", help="score predictions against context-based truths")
    s.add_argument("--predictions", required=True)
    s.add_argument("--truths")
    s.add_argument("--manifest")
    s.add_argument("--task", choices=TASKS, required=True)
    s.add_argument("--pearson-mode", choices=["pooled", "per_video"], default="pooled")
    s.add_argument("--epsilon", type=float, default=1e-6)
    s.add_argument("--out", required=True)
    s.add_argument("--table", help="also write a plain-text table here")
    s.add_argument("--label", default="model")
    s.add_argument("--salience", default="-")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("analyze-salience", help="face- vs situation-closer shares per expressivity tertile")
    s.add_argument("--manifest", required=True)
    s.add_argument("--task", choices=TASKS, required=True)
    s.add_argument("--expressivity", help="precomputed expressivity CSV")
    s.add_argument("--metric", choices=["kld", "l1", "l2"], default="kld")
    s.add_argument("--epsilon", type=float, default=1e-6)
    s.add_argument("--out", required=True)
    s.add_argument("--plot", help="bar chart image path")
    s.set_defaults(func=cmd_analyze_salience)

    s = sub.add_parser("query-context", help="context-only distribution from a completion service")
    s.add_argument("--outcome", required=True, choices=["CC", "CD", "DC", "DD"])
    s.add_argument("--task", choices=TASKS, required=True)
    s.add_argument("--mock", help="mock response table (JSON)")
    s.add_argument("--base-url")
    s.add_argument("--model")
    s.add_argument("--api-key-env", default="SALBCI_API_KEY")
    s.add_argument("--n-samples", type=int, default=20)
    s.add_argument("--max-concurrency", type=int, default=4)
    s.add_argument("--cache-dir")
    s.add_argument("--out")
    s.set_defaults(func=cmd_query_context)

    s = sub.add_parser("simulate", help="write a synthetic dataset with known weights")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-videos", type=int, default=100)
    s.add_argument("--concentration", type=float, default=0.8)
    s.add_argument("--rating-count", type=int, default=20)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--weight-link", default="linear", help="'linear' or 'constant:<w>'")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("run", help="full pipeline")
    s.add_argument("--config", help="INI config file; flags override it")
    s.add_argument("--manifest")
    s.add_argument("--out")
    s.add_argument("--task", help="'all' or comma-separated tasks")
    s.add_argument("--jobs", type=int)
    s.add_argument("--plot", action="store_true")
    s.add_argument("--prior", help="uniform, empirical, or a distribution JSON path")
    s.add_argument("--epsilon", type=float)
    s.add_argument("--pearson-mode", choices=["pooled", "per_video"])
    s.add_argument("--closeness", choices=["kld", "l1", "l2"])
    s.add_argument("--face-source", help="'human' or a model name from the predictions files")
    s.add_argument("--context-source", help="'human', 'llm', or a model name")
    s.add_argument("--mock", help="mock table for --context-source llm")
    s.add_argument("--cache-dir")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except SalbciError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
