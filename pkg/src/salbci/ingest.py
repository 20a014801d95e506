"""Dataset loading, validation and serialization.

On-disk layout (all paths in a manifest are relative to the manifest file)::

    manifest.json      {"videos": [{"id", "outcome", "annotations", "features"?,
                                    "predictions"?, "human_expressivity"?}],
                        "context_only"?: {"CC": {...} | "path.json", ...}}
    <annotations>.json {"context_free": {"valence": [1..5], "basic_emotion": [labels]},
                        "context_only": {...}, "context_based": {...}}
    <features>.csv     one row per frame, header FEATURE_HEADER
    <predictions>.json {"<model name>": {"space": [...], "probs": [...]}}
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .distributions import (
    CategoricalDistribution,
    RatingCountWarning,
    RatingSet,
    TASKS,
    discretize_valence,
    from_ratings,
    space_for_task,
    CANONICAL_RATING_COUNT,
)
from .errors import DuplicateVideoId, KTooLarge, MissingFile, OutOfScale, SchemaViolation

log = logging.getLogger(__name__)

CONDITIONS = ("context_free", "context_only", "context_based")

AU_CHANNELS = ("AU1", "AU2", "AU4", "AU6", "AU7", "AU10", "AU12", "AU14", "AU15", "AU17", "AU25", "AU26")
GAZE_CHANNELS = ("gaze_x", "gaze_y", "gaze_z", "gaze_angle_x", "gaze_angle_y")
HEAD_CHANNELS = ("head_x", "head_y", "head_z")
FEATURE_HEADER = ("timestamp",) + AU_CHANNELS + GAZE_CHANNELS + HEAD_CHANNELS + ("flow_mag",)

DEFAULT_FRAME_COUNT = 4


class JointOutcome(str, enum.Enum):
    """Prisoner's-dilemma round outcome; first letter is the target player's choice."""

    CC = "CC"
    CD = "CD"
    DC = "DC"
    DD = "DD"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, value) -> "JointOutcome":
        try:
            return cls(str(value).upper())
        except ValueError:
            raise SchemaViolation(f"unknown joint outcome {value!r}") from None


@dataclass(frozen=True, eq=False)
class FeatureTimeSeries:
    timestamps: np.ndarray  # (n,)
    aus: np.ndarray  # (n, 12)
    gaze: np.ndarray  # (n, 5): direction vector + 2 angles
    head: np.ndarray  # (n, 3)
    flow: np.ndarray  # (n,)

    def __post_init__(self):
        for name in ("timestamps", "aus", "gaze", "head", "flow"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.timestamps.shape[0]
        if n < 2:
            raise SchemaViolation(f"need at least 2 frames, got {n}")
        shapes = {"aus": (n, 12), "gaze": (n, 5), "head": (n, 3), "flow": (n,)}
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise SchemaViolation(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if not np.all(np.diff(self.timestamps) > 0):
            raise SchemaViolation("timestamps must be strictly increasing")
        if np.any(self.aus < 0):
            raise SchemaViolation("AU intensities must be >= 0")
        if np.any(self.flow < 0):
            raise SchemaViolation("flow magnitudes must be >= 0")
        for name in ("timestamps", "aus", "gaze", "head", "flow"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise SchemaViolation(f"non-finite values in {name}")

    def __len__(self) -> int:
        return self.timestamps.shape[0]

    def __eq__(self, other):
        if not isinstance(other, FeatureTimeSeries):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, n), getattr(other, n))
            for n in ("timestamps", "aus", "gaze", "head", "flow")
        )

    def to_matrix(self) -> np.ndarray:
        return np.column_stack([self.timestamps, self.aus, self.gaze, self.head, self.flow])

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "FeatureTimeSeries":
        m = np.asarray(m, dtype=np.float64)
        if m.ndim != 2 or m.shape[1] != len(FEATURE_HEADER):
            raise SchemaViolation(f"feature matrix must have {len(FEATURE_HEADER)} columns")
        return cls(
            timestamps=m[:, 0], aus=m[:, 1:13], gaze=m[:, 13:18], head=m[:, 18:21], flow=m[:, 21]
        )


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    outcome: JointOutcome
    annotations: Mapping[str, Mapping[str, RatingSet]] = field(default_factory=dict)
    features: FeatureTimeSeries | None = None
    model_predictions: Mapping[str, CategoricalDistribution] = field(default_factory=dict)
    human_expressivity: int | None = None

    def ratings(self, condition: str, task: str) -> RatingSet | None:
        return self.annotations.get(condition, {}).get(task)

    def distribution(self, condition: str, task: str) -> CategoricalDistribution | None:
        rs = self.ratings(condition, task)
        return None if rs is None else from_ratings(rs)


# ---------------------------------------------------------------- parsing


def parse_rating_block(block: Mapping, source: str, where: str) -> dict[str, RatingSet]:
    out = {}
    if not isinstance(block, Mapping):
        raise SchemaViolation("rating block must be an object", file=source, where=where)
    for task, values in block.items():
        if task not in TASKS:
            raise SchemaViolation(f"unknown task {task!r}", file=source, where=where)
        if not isinstance(values, list) or not values:
            raise SchemaViolation("ratings must be a non-empty list", file=source, where=f"{where}.{task}")
        space = space_for_task(task)
        try:
            if task == "valence":
                labels = tuple(discretize_valence(v) for v in values)
            else:
                labels = tuple(str(v) for v in values)
            out[task] = RatingSet(space, labels)
        except (OutOfScale, ValueError, TypeError) as exc:
            raise SchemaViolation(str(exc), file=source, where=f"{where}.{task}") from exc
    return out


def _read_json(path: Path):
    if not path.is_file():
        raise MissingFile(f"missing file: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"invalid JSON: {exc.msg}", file=str(path), where=f"line {exc.lineno}") from exc


def read_annotations(path: Path) -> dict[str, dict[str, RatingSet]]:
    obj = _read_json(path)
    if not isinstance(obj, dict):
        raise SchemaViolation("annotation file must hold an object", file=str(path))
    out = {}
    for cond, block in obj.items():
        if cond not in CONDITIONS:
            raise SchemaViolation(f"unknown condition {cond!r}", file=str(path))
        out[cond] = parse_rating_block(block, str(path), cond)
    return out


def read_features(path: Path) -> FeatureTimeSeries:
    if not path.is_file():
        raise MissingFile(f"missing file: {path}")
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != FEATURE_HEADER:
            raise SchemaViolation("feature CSV header does not match", file=str(path), where="line 1")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(FEATURE_HEADER):
                raise SchemaViolation(f"expected {len(FEATURE_HEADER)} fields, got {len(row)}", file=str(path), where=f"line {lineno}")
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise SchemaViolation(str(exc), file=str(path), where=f"line {lineno}") from exc
            for name, v in zip(FEATURE_HEADER, vals):
                if not math.isfinite(v):
                    raise SchemaViolation(f"non-finite {name}", file=str(path), where=f"line {lineno}")
                if (name.startswith("AU") or name == "flow_mag") and v < 0:
                    raise SchemaViolation(f"{name} = {v} is negative", file=str(path), where=f"line {lineno}")
            rows.append(vals)
    try:
        return FeatureTimeSeries.from_matrix(np.array(rows).reshape(-1, len(FEATURE_HEADER)))
    except SchemaViolation as exc:
        raise SchemaViolation(str(exc), file=str(path)) from exc


def read_predictions(path: Path) -> dict[str, CategoricalDistribution]:
    obj = _read_json(path)
    if not isinstance(obj, dict):
        raise SchemaViolation("predictions file must hold an object", file=str(path))
    return {name: CategoricalDistribution.from_dict(d, source=str(path)) for name, d in obj.items()}


def load_dataset(manifest_path) -> list[VideoRecord]:
    """Load every video listed in a manifest.

    Rating counts other than 20 emit a :class:`RatingCountWarning`. Optional
    parts that are absent stay ``None``/empty rather than being defaulted.
    Context-only ratings given at the manifest level (keyed by outcome) are
    fanned out to every video with that outcome that lacks its own.
    """
    manifest_path = Path(manifest_path)
    manifest = _read_json(manifest_path)
    base = manifest_path.parent
    src = str(manifest_path)
    if not isinstance(manifest, dict) or not isinstance(manifest.get("videos"), list):
        raise SchemaViolation("manifest needs a 'videos' list", file=src)

    shared_context = {}
    for key, block in (manifest.get("context_only") or {}).items():
        outcome = JointOutcome.parse(key)
        if isinstance(block, str):
            block = _read_json(base / block)
        shared_context[outcome] = parse_rating_block(block, src, f"context_only.{key}")

    records = []
    seen = set()
    for i, entry in enumerate(manifest["videos"]):
        where = f"videos[{i}]"
        if not isinstance(entry, dict):
            raise SchemaViolation("video entry must be an object", file=src, where=where)
        for key in ("id", "outcome", "annotations"):
            if key not in entry:
                raise SchemaViolation(f"missing field {key!r}", file=src, where=where)
        vid = str(entry["id"])
        if vid in seen:
            raise DuplicateVideoId(f"duplicate video id {vid!r} in {src}")
        seen.add(vid)
        try:
            outcome = JointOutcome.parse(entry["outcome"])
        except SchemaViolation as exc:
            raise SchemaViolation(str(exc), file=src, where=f"{where}.outcome") from exc

        annotations = read_annotations(base / entry["annotations"])
        if outcome in shared_context:
            merged = dict(shared_context[outcome])
            merged.update(annotations.get("context_only", {}))
            annotations["context_only"] = merged

        features = read_features(base / entry["features"]) if entry.get("features") else None
        predictions = read_predictions(base / entry["predictions"]) if entry.get("predictions") else {}

        human = entry.get("human_expressivity")
        if human is not None:
            if isinstance(human, bool) or not isinstance(human, int) or not 1 <= human <= 7:
                raise SchemaViolation(f"human_expressivity {human!r} outside 1..7", file=src, where=where)

        for cond, tasks in annotations.items():
            for task, rs in tasks.items():
                if rs.count != CANONICAL_RATING_COUNT:
                    msg = f"{vid} {cond}/{task}: expected {CANONICAL_RATING_COUNT} ratings, got {rs.count}"
                    log.warning(msg, extra={"video_id": vid})
                    warnings.warn(msg, RatingCountWarning, stacklevel=2)

        records.append(
            VideoRecord(
                video_id=vid,
                outcome=outcome,
                annotations=annotations,
                features=features,
                model_predictions=predictions,
                human_expressivity=human,
            )
        )
    return records


# ---------------------------------------------------------------- writing


def _ratings_to_json(rs: RatingSet, task: str) -> list:
    if task == "valence":
        return [int(lab[1:]) for lab in rs.ratings]
    return list(rs.ratings)


def annotations_to_dict(annotations: Mapping[str, Mapping[str, RatingSet]]) -> dict:
    return {
        cond: {task: _ratings_to_json(rs, task) for task, rs in sorted(annotations[cond].items())}
        for cond in CONDITIONS
        if cond in annotations
    }


def write_features(path: Path, features: FeatureTimeSeries) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FEATURE_HEADER)
        for row in features.to_matrix():
            writer.writerow([repr(float(v)) for v in row])


def write_dataset(records: list[VideoRecord], out_dir) -> Path:
    """Write records in the manifest layout; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "annotations").mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in records:
        entry = {"id": rec.video_id, "outcome": rec.outcome.value}
        ann_rel = f"annotations/{rec.video_id}.json"
        (out_dir / ann_rel).write_text(json.dumps(annotations_to_dict(rec.annotations), indent=1) + "\n")
        entry["annotations"] = ann_rel
        if rec.features is not None:
            (out_dir / "features").mkdir(exist_ok=True)
            feat_rel = f"features/{rec.video_id}.csv"
            write_features(out_dir / feat_rel, rec.features)
            entry["features"] = feat_rel
        if rec.model_predictions:
            (out_dir / "predictions").mkdir(exist_ok=True)
            pred_rel = f"predictions/{rec.video_id}.json"
            body = {k: v.to_dict() for k, v in sorted(rec.model_predictions.items())}
            (out_dir / pred_rel).write_text(json.dumps(body, indent=1) + "\n")
            entry["predictions"] = pred_rel
        if rec.human_expressivity is not None:
            entry["human_expressivity"] = rec.human_expressivity
        entries.append(entry)
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps({"videos": entries}, indent=1) + "\n")
    return manifest


def canonical_dump(records: list[VideoRecord]) -> str:
    """Stable text form of a record list, used for determinism checks."""
    out = []
    for rec in records:
        out.append(
            {
                "id": rec.video_id,
                "outcome": rec.outcome.value,
                "annotations": annotations_to_dict(rec.annotations),
                "features": None if rec.features is None else [[repr(float(v)) for v in row] for row in rec.features.to_matrix()],
                "predictions": {k: v.to_dict() for k, v in sorted(rec.model_predictions.items())},
                "human_expressivity": rec.human_expressivity,
            }
        )
    return json.dumps(out, sort_keys=True)


def frame_indices(total_frames: int, k: int = DEFAULT_FRAME_COUNT) -> list[int]:
    """Indices of ``k`` frames sampled at the centres of ``k`` equal strata."""
    if total_frames < 1 or k < 1:
        raise ValueError("total_frames and k must be positive")
    if k > total_frames:
        raise KTooLarge(f"cannot sample {k} distinct frames from {total_frames}")
    step = total_frames / k
    return [min(int(math.floor((i + 0.5) * step)), total_frames - 1) for i in range(k)]
