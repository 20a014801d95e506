"""Per-video facial expressivity scores and their mapping to fusion weights.

Four channel families are summarized per clip (AU activity, gaze movement,
head movement, optical flow), z-scored across the cohort with population
statistics, and averaged with equal weight. The cohort min/max of that score
is then mapped linearly onto the face-cue weight range.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .errors import LengthMismatch, SchemaViolation, TooFewFrames, TooFewVideos
from .ingest import FeatureTimeSeries, VideoRecord
from .metrics import pearson

CHANNELS = ("au", "gaze", "head", "flow")
TERTILES = ("low", "mid", "high")
DEFAULT_WEIGHT_RANGE = (0.5, 1.0)
CSV_HEADER = ("video_id", "raw", "z_au", "z_gaze", "z_head", "z_flow", "weight", "tertile")

# a channel whose spread is this small relative to its magnitude is constant
_CONSTANT_RTOL = 1e-12


@dataclass(frozen=True)
class ChannelSummary:
    au_activity: float
    gaze_movement: float
    head_movement: float
    flow_activity: float

    def __post_init__(self):
        for v in self.as_array():
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"channel summaries must be finite and >= 0: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.au_activity, self.gaze_movement, self.head_movement, self.flow_activity])


@dataclass(frozen=True)
class ExpressivityScore:
    video_id: str
    raw: float
    z_components: tuple[float, float, float, float]
    weight: float | None = None
    tertile: str | None = None


def summarize_channels(features: FeatureTimeSeries) -> ChannelSummary:
    """Temporal means: AU intensity, inter-frame gaze/head deltas, flow magnitude."""
    if len(features) < 2:
        raise TooFewFrames(f"need >= 2 frames, got {len(features)}")
    return ChannelSummary(
        au_activity=float(features.aus.mean()),
        gaze_movement=kernels.mean_step(features.gaze),
        head_movement=kernels.mean_step(features.head),
        flow_activity=float(features.flow.mean()),
    )


def zscore_columns(x: np.ndarray) -> np.ndarray:
    """Population z-score per column; constant columns become all zeros."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    scale = np.abs(x).max(axis=0)
    constant = std <= _CONSTANT_RTOL * scale
    safe = np.where(constant, 1.0, std)
    z = (x - mean) / safe
    z[:, constant] = 0.0
    return z


def standardize_and_score(summaries: Sequence[tuple[str, ChannelSummary]]) -> list[ExpressivityScore]:
    if len(summaries) < 2:
        raise TooFewVideos(f"standardization needs >= 2 videos, got {len(summaries)}")
    x = np.stack([s.as_array() for _, s in summaries])
    z = zscore_columns(x)
    raw = z.mean(axis=1)
    return [
        ExpressivityScore(video_id=vid, raw=float(r), z_components=tuple(float(v) for v in zrow))
        for (vid, _), r, zrow in zip(summaries, raw, z)
    ]


def map_weight(
    raw_scores: Sequence[float],
    weight_range: tuple[float, float] = DEFAULT_WEIGHT_RANGE,
    calibration: tuple[float, float] | None = None,
) -> list[float]:
    """Linear min-max map of raw scores onto ``weight_range``.

    With ``calibration=(lo, hi)`` the bounds are frozen instead of taken from
    the batch, and scores outside them are clipped to the range ends.
    """
    raw = np.asarray(raw_scores, dtype=np.float64)
    if raw.size == 0:
        return []
    low, high = weight_range
    lo, hi = (raw.min(), raw.max()) if calibration is None else calibration
    if hi < lo:
        raise ValueError(f"calibration max {hi} below min {lo}")
    if hi == lo:
        return [0.5 * (low + high)] * raw.size
    frac = np.clip((raw - lo) / (hi - lo), 0.0, 1.0)
    w = low + (high - low) * frac
    return [float(v) for v in w]


def assign_tertiles(raw_scores: Sequence[float], video_ids: Sequence[str] | None = None) -> list[str]:
    """Balanced three-way split by ascending score; extras go to lower groups."""
    n = len(raw_scores)
    if n < 3:
        raise TooFewVideos(f"tertiles need >= 3 videos, got {n}")
    ids = list(video_ids) if video_ids is not None else [f"{i:09d}" for i in range(n)]
    order = sorted(range(n), key=lambda i: (raw_scores[i], ids[i]))
    sizes = [n // 3 + (1 if g < n % 3 else 0) for g in range(3)]
    labels = [""] * n
    pos = 0
    for g, size in enumerate(sizes):
        for i in order[pos : pos + size]:
            labels[i] = TERTILES[g]
        pos += size
    return labels


def validate_against_human(scores: Sequence[float], human_ratings: Sequence[int]) -> float:
    """Pearson correlation between automatic scores and 1..7 human ratings."""
    if len(scores) != len(human_ratings):
        raise LengthMismatch(f"{len(scores)} scores vs {len(human_ratings)} ratings")
    if len(scores) < 3:
        raise ValueError("need at least 3 pairs")
    for h in human_ratings:
        if not 1 <= h <= 7:
            raise ValueError(f"human rating {h} outside 1..7")
    return pearson(scores, human_ratings)


def score_dataset(
    records: Sequence[VideoRecord],
    weight_range: tuple[float, float] = DEFAULT_WEIGHT_RANGE,
    calibration: tuple[float, float] | None = None,
    jobs: int = 1,
) -> list[ExpressivityScore]:
    """Full expressivity stage for a cohort: summaries, z-scores, weights, tertiles."""
    missing = [r.video_id for r in records if r.features is None]
    if missing:
        raise SchemaViolation(f"videos without features: {', '.join(missing)}")
    feats = [r.features for r in records]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(summarize_channels, feats))
    else:
        summaries = [summarize_channels(f) for f in feats]
    scores = standardize_and_score([(r.video_id, s) for r, s in zip(records, summaries)])
    raw = [s.raw for s in scores]
    weights = map_weight(raw, weight_range, calibration)
    tertiles = assign_tertiles(raw, [s.video_id for s in scores])
    return [replace(s, weight=w, tertile=t) for s, w, t in zip(scores, weights, tertiles)]


def scores_to_csv(scores: Sequence[ExpressivityScore], fingerprint: str | None = None) -> str:
    buf = io.StringIO()
    if fingerprint:
        buf.write(f"# config_fingerprint={fingerprint}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for s in scores:
        writer.writerow([s.video_id, repr(s.raw), *(repr(z) for z in s.z_components), repr(s.weight), s.tertile])
    return buf.getvalue()


def read_scores_csv(path) -> list[ExpressivityScore]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) != CSV_HEADER:
        raise SchemaViolation("expressivity CSV header does not match", file=str(path))
    out = []
    for row in reader:
        out.append(
            ExpressivityScore(
                video_id=row["video_id"],
                raw=float(row["raw"]),
                z_components=tuple(float(row[f"z_{c}"]) for c in CHANNELS),
                weight=float(row["weight"]),
                tertile=row["tertile"],
            )
        )
    return out
