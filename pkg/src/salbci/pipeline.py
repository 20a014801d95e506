"""End-to-end orchestration: expressivity -> both fusion rules -> reports."""

from __future__ import annotations

import configparser
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .distributions import DEFAULT_EPSILON, CategoricalDistribution, TASKS, space_for_task
from .errors import ConfigError, MissingCondition
from .expressivity import ExpressivityScore, score_dataset, scores_to_csv, validate_against_human
from .fusion import FusionConfig, PriorSpec, fuse_many, resolve_prior
from .ingest import VideoRecord, load_dataset
from .metrics import (
    CLOSENESS_METRICS,
    PEARSON_MODES,
    EvaluationReport,
    closeness_analysis,
    closeness_to_csv,
    evaluate,
    fingerprint,
    format_table,
    plot_closeness,
)

log = logging.getLogger(__name__)

VARIANT_LABELS = {
    "face_only": ("face only", "-"),
    "bci": ("face + context", "w/o"),
    "salience": ("face + context", "w/"),
    "salience_oracle": ("face + context (true w)", "w/"),
}


@dataclass
class LLMSettings:
    backend: str = "mock"
    mock_table: str | None = None
    base_url: str | None = None
    model: str | None = None
    n_samples: int = 20
    max_concurrency: int = 4
    cache_dir: str | None = None

    def describe(self) -> dict:
        return {"backend": self.backend, "mock_table": self.mock_table, "base_url": self.base_url,
                "model": self.model, "n_samples": self.n_samples}


@dataclass
class PipelineConfig:
    manifest: Path
    out_dir: Path
    tasks: tuple[str, ...] = TASKS
    fusion: FusionConfig = field(default_factory=FusionConfig)
    calibration: tuple[float, float] | None = None
    pearson_mode: str = "pooled"
    closeness_metric: str = "kld"
    face_source: str = "human"
    context_source: str = "human"
    llm: LLMSettings = field(default_factory=LLMSettings)
    jobs: int = 1
    plot: bool = False

    def __post_init__(self):
        self.manifest = Path(self.manifest)
        self.out_dir = Path(self.out_dir)
        for t in self.tasks:
            space_for_task(t)
        if self.pearson_mode not in PEARSON_MODES:
            raise ConfigError(f"pearson_mode must be one of {PEARSON_MODES}")
        if self.closeness_metric not in CLOSENESS_METRICS:
            raise ConfigError(f"closeness metric must be one of {CLOSENESS_METRICS}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    def describe(self) -> dict:
        """Everything that can change results (paths to outputs and job count excluded)."""
        return {
            "manifest": str(self.manifest),
            "tasks": list(self.tasks),
            "fusion": self.fusion.describe(),
            "calibration": list(self.calibration) if self.calibration else None,
            "pearson_mode": self.pearson_mode,
            "closeness_metric": self.closeness_metric,
            "face_source": self.face_source,
            "context_source": self.context_source,
            "llm": self.llm.describe() if self.context_source == "llm" else None,
        }

    def fingerprint(self) -> str:
        return fingerprint(self.describe())


CONFIG_KEYS = {
    "pipeline": {"manifest", "out", "tasks", "jobs", "plot"},
    "fusion": {"prior", "epsilon", "weight_low", "weight_high", "path", "calibration_min", "calibration_max"},
    "metrics": {"pearson_mode", "closeness"},
    "sources": {"face", "context"},
    "llm": {"backend", "mock_table", "base_url", "model", "n_samples", "max_concurrency", "cache_dir"},
}


def _getlist(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.replace(";", ",").split(",") if v.strip())


def load_config(path=None, overrides: Mapping | None = None) -> PipelineConfig:
    """Read an INI-style config file and apply flag overrides (flags win).

    Override keys use ``section.key`` names, e.g. ``{"fusion.epsilon": 1e-4}``.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    base = Path(".")
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        cp.read(path)
        base = path.parent
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, str(value))

    for section in cp.sections():
        if section not in CONFIG_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        unknown = sorted(set(cp.options(section)) - CONFIG_KEYS[section])
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {', '.join(unknown)}")

    def get(section, key, default=None):
        return cp.get(section, key, fallback=default)

    def resolve(p):
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() or path is None else base / p

    manifest = get("pipeline", "manifest")
    out = get("pipeline", "out")
    if not manifest or not out:
        raise ConfigError("config needs pipeline.manifest and pipeline.out")
    overridden = {k for k, v in (overrides or {}).items() if v is not None}
    manifest_path = Path(manifest) if "pipeline.manifest" in overridden else resolve(manifest)
    out_path = Path(out) if "pipeline.out" in overridden else resolve(out)

    try:
        prior_value = get("fusion", "prior", "uniform")
        if prior_value in ("uniform", "empirical"):
            prior = PriorSpec(prior_value)
        else:
            prior_file = Path(prior_value) if "fusion.prior" in overridden else resolve(prior_value)
            if not prior_file.is_file():
                raise ConfigError(f"prior file not found: {prior_file}")
            prior = PriorSpec("explicit", CategoricalDistribution.from_dict(json.loads(prior_file.read_text())))
        fusion = FusionConfig(
            prior=prior,
            epsilon=float(get("fusion", "epsilon", DEFAULT_EPSILON)),
            weight_range=(float(get("fusion", "weight_low", 0.5)), float(get("fusion", "weight_high", 1.0))),
            path=get("fusion", "path", "log"),
        )
        cal_lo, cal_hi = get("fusion", "calibration_min"), get("fusion", "calibration_max")
        calibration = (float(cal_lo), float(cal_hi)) if cal_lo and cal_hi else None
        tasks_value = get("pipeline", "tasks", "all")
        tasks = TASKS if tasks_value == "all" else _getlist(tasks_value)
        llm = LLMSettings(
            backend=get("llm", "backend", "mock"),
            mock_table=get("llm", "mock_table"),
            base_url=get("llm", "base_url"),
            model=get("llm", "model"),
            n_samples=int(get("llm", "n_samples", 20)),
            max_concurrency=int(get("llm", "max_concurrency", 4)),
            cache_dir=get("llm", "cache_dir"),
        )
        return PipelineConfig(
            manifest=manifest_path,
            out_dir=out_path,
            tasks=tasks,
            fusion=fusion,
            calibration=calibration,
            pearson_mode=get("metrics", "pearson_mode", "pooled"),
            closeness_metric=get("metrics", "closeness", "kld"),
            face_source=get("sources", "face", "human"),
            context_source=get("sources", "context", "human"),
            llm=llm,
            jobs=int(get("pipeline", "jobs", os.cpu_count() or 1)),
            plot=get("pipeline", "plot", "false").lower() in ("1", "true", "yes"),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------- stages


def _source_dist(rec: VideoRecord, source: str, condition: str, task: str) -> CategoricalDistribution:
    if source == "human":
        d = rec.distribution(condition, task)
        if d is None:
            raise MissingCondition(f"{rec.video_id}: no {condition} {task} ratings")
        return d
    d = rec.model_predictions.get(source)
    if d is None:
        raise MissingCondition(f"{rec.video_id}: no predictions from model {source!r}")
    if d.space != space_for_task(task):
        raise MissingCondition(f"{rec.video_id}: model {source!r} does not predict {task}")
    return d


def fuse_variants(
    records: Sequence[VideoRecord],
    task: str,
    weights: Mapping[str, float],
    fusion: FusionConfig,
    face_source: str = "human",
    context_source: str = "human",
    context_override: Mapping[str, CategoricalDistribution] | None = None,
    oracle_weights: Mapping[str, float] | None = None,
) -> dict[str, dict[str, CategoricalDistribution]]:
    """Predictions of every variant, keyed ``variant -> video_id -> distribution``."""
    space = space_for_task(task)
    ids = [r.video_id for r in records]
    faces = [_source_dist(r, face_source, "context_free", task) for r in records]
    if context_override is not None:
        contexts = [context_override[r.video_id] for r in records]
    else:
        contexts = [_source_dist(r, context_source, "context_only", task) for r in records]
    prior = resolve_prior(fusion.prior, space, records, task)
    eps, path = fusion.epsilon, fusion.path
    out = {
        "face_only": dict(zip(ids, faces)),
        "bci": dict(zip(ids, fuse_many(faces, contexts, prior, None, eps, path))),
        "salience": dict(zip(ids, fuse_many(faces, contexts, prior, [weights[v] for v in ids], eps, path))),
    }
    if oracle_weights is not None:
        out["salience_oracle"] = dict(
            zip(ids, fuse_many(faces, contexts, prior, [oracle_weights[v] for v in ids], eps, path))
        )
    return out


def truths_for(records: Sequence[VideoRecord], task: str) -> dict[str, CategoricalDistribution]:
    return {r.video_id: _source_dist(r, "human", "context_based", task) for r in records}


def evaluate_variants(
    records: Sequence[VideoRecord],
    task: str,
    weights: Mapping[str, float],
    fusion: FusionConfig,
    pearson_mode: str = "pooled",
    config_extra: Mapping | None = None,
    **fuse_kwargs,
) -> dict[str, EvaluationReport]:
    predictions = fuse_variants(records, task, weights, fusion, **fuse_kwargs)
    truths = truths_for(records, task)
    cfg = {"fusion": fusion.describe(), **(config_extra or {})}
    return {
        name: evaluate(preds, truths, task, pearson_mode, fusion.epsilon, {**cfg, "variant": name})
        for name, preds in predictions.items()
    }


def llm_context_distributions(records, task: str, settings: LLMSettings) -> dict[str, CategoricalDistribution]:
    from .context_llm import ContextQuerySpec, LiveBackend, MockBackend, ResponseCache, query_context_distribution

    if settings.backend == "mock":
        if not settings.mock_table:
            raise ConfigError("llm.mock_table is required for the mock backend")
        backend = MockBackend.from_file(settings.mock_table)
    else:
        if not settings.base_url or not settings.model:
            raise ConfigError("llm.base_url and llm.model are required for the live backend")
        backend = LiveBackend(settings.base_url, settings.model)
    cache = ResponseCache(settings.cache_dir) if settings.cache_dir else None
    by_outcome = {}
    for outcome in sorted({r.outcome for r in records}):
        spec = ContextQuerySpec(outcome=outcome, task=task, n_samples=settings.n_samples, backend=settings.backend)
        by_outcome[outcome] = query_context_distribution(spec, backend, cache, max_concurrency=settings.max_concurrency)
    return {r.video_id: by_outcome[r.outcome] for r in records}


# ---------------------------------------------------------------- driver


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run_pipeline(config: PipelineConfig, records: Sequence[VideoRecord] | None = None) -> dict:
    """Run every stage and write artifacts into ``config.out_dir``.

    Returns the summary dictionary that is also written to ``summary.json``.
    """
    fp = config.fingerprint()
    if records is None:
        if not config.manifest.is_file():
            raise ConfigError(f"manifest not found: {config.manifest}")
        records = load_dataset(config.manifest)
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    log.info("loaded %d videos", len(records), extra={"stage": "ingest"})

    scores = score_dataset(records, config.fusion.weight_range, config.calibration, jobs=config.jobs)
    (out / "expressivity.csv").write_text(scores_to_csv(scores, fp))
    weights = {s.video_id: s.weight for s in scores}
    tertiles = {s.video_id: s.tertile for s in scores}
    log.info("expressivity scored", extra={"stage": "expressivity"})

    summary = {"config_fingerprint": fp, "config": config.describe(), "n_videos": len(records), "tasks": {}}
    human = _human_validation(records, scores)
    if human is not None:
        summary["human_validation"] = human
        _dump_json(out / "human_validation.json", {"config_fingerprint": fp, **human})

    table_blocks = []
    for task in config.tasks:
        override = None
        if config.context_source == "llm":
            override = llm_context_distributions(records, task, config.llm)
        predictions = fuse_variants(
            records, task, weights, config.fusion, config.face_source,
            "human" if config.context_source == "llm" else config.context_source, override,
        )
        truths = truths_for(records, task)
        reports = {}
        for name in ("bci", "salience"):
            _dump_json(
                out / f"fused_{name}_{task}.json",
                {
                    "config_fingerprint": fp,
                    "task": task,
                    "variant": name,
                    "distributions": {v: d.to_dict() for v, d in sorted(predictions[name].items())},
                },
            )
        for name, preds in predictions.items():
            rep = evaluate(preds, truths, task, config.pearson_mode, config.fusion.epsilon, {**config.describe(), "variant": name})
            rep.config_fingerprint = fp
            rep.metadata["variant"] = name
            reports[name] = rep
            _dump_json(out / f"report_{name}_{task}.json", rep.to_dict())
        rows = [(*VARIANT_LABELS[n], reports[n]) for n in ("face_only", "bci", "salience")]
        table = format_table(rows)
        (out / f"report_{task}.txt").write_text(table)
        table_blocks.append(table)

        analysis = closeness_analysis(records, tertiles, task, config.closeness_metric, config.fusion.epsilon)
        (out / f"salience_analysis_{task}.csv").write_text(closeness_to_csv(analysis, fp))
        if config.plot:
            plot_closeness(analysis, out / f"salience_analysis_{task}.png", fp)
        summary["tasks"][task] = {
            "variants": {n: r.aggregate for n, r in reports.items()},
            "salience_analysis": analysis["tertiles"],
        }
        log.info("task %s done", task, extra={"stage": "evaluate"})

    _dump_json(out / "summary.json", summary)
    (out / "summary.txt").write_text("\n".join(table_blocks))
    return summary


def _human_validation(records, scores: Sequence[ExpressivityScore]) -> dict | None:
    raw = {s.video_id: s.raw for s in scores}
    pairs = [(raw[r.video_id], r.human_expressivity) for r in records if r.human_expressivity is not None]
    if len(pairs) < 3:
        return None
    xs, ys = zip(*pairs)
    try:
        r = validate_against_human(list(xs), list(ys))
    except ValueError as exc:
        log.warning("human validation skipped: %s", exc)
        return None
    return {"n_pairs": len(pairs), "pearson": r}
