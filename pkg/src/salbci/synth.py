"""Synthetic corpora drawn from the salience-weighted fusion model.

Each video gets a latent expressivity score, face and context cue
distributions, and a face weight linked to the score. The context-based
distribution is the exact salience-weighted fusion of the two cues, and every
condition is then observed only through a finite set of simulated ratings,
mimicking crowd annotation. Feature time series are synthesized so that the
real expressivity pipeline recovers the latent ordering.

Randomness comes from numpy's Philox counter-based generator, one stream per
video spawned from a single ``SeedSequence``; outputs are reproducible for a
fixed seed and numpy version (pinned in pyproject).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .distributions import (
    DEFAULT_EPSILON,
    CategoricalDistribution,
    RatingSet,
    TASKS,
    space_for_task,
)
from .errors import InvalidConfig
from .fusion import fuse_arrays
from .ingest import FeatureTimeSeries, JointOutcome, VideoRecord, write_dataset

OUTCOMES = (JointOutcome.CC, JointOutcome.CD, JointOutcome.DC, JointOutcome.DD)

# published human-annotation benchmark, kept for side-by-side display only
REFERENCE_HUMAN_BENCHMARK = {
    "valence": {"without_salience": {"mse": 0.199, "rmse": 0.446, "pearson": 0.743},
                "with_salience": {"mse": 0.108, "rmse": 0.328, "pearson": 0.870}},
    "basic_emotion": {"without_salience": {"kld": 0.308, "rmse": 0.122, "pearson": 0.873},
                      "with_salience": {"kld": 0.146, "rmse": 0.093, "pearson": 0.889}},
}


@dataclass(frozen=True)
class SynthConfig:
    n_videos: int = 100
    seed: int = 0
    concentration: float = 0.8
    rating_count: int = 20
    weight_link: str = "linear"  # or "constant:<w>"
    annotation_noise: float = 0.0
    tasks: tuple[str, ...] = TASKS
    n_frames: int = 35
    fps: float = 5.0
    n_human_rated: int = 24
    human_target_r: float = 0.61

    def __post_init__(self):
        if self.n_videos < 3:
            raise InvalidConfig("n_videos must be >= 3")
        if not self.concentration > 0:
            raise InvalidConfig("concentration must be > 0")
        if not 0.0 <= self.annotation_noise <= 1.0:
            raise InvalidConfig("annotation_noise must lie in [0, 1]")
        if self.rating_count < 1:
            raise InvalidConfig("rating_count must be >= 1")
        if self.n_frames < 2:
            raise InvalidConfig("n_frames must be >= 2")
        for t in self.tasks:
            if t not in TASKS:
                raise InvalidConfig(f"unknown task {t!r}")
        self.constant_weight()  # validates the link string

    def constant_weight(self) -> float | None:
        if self.weight_link == "linear":
            return None
        kind, _, value = self.weight_link.partition(":")
        try:
            w = float(value)
        except ValueError:
            w = float("nan")
        if kind != "constant" or not 0.0 <= w <= 1.0:
            raise InvalidConfig(f"weight_link must be 'linear' or 'constant:<w in [0,1]>', got {self.weight_link!r}")
        return w


@dataclass
class VideoTruth:
    w: float
    expressivity: float
    face: dict = field(default_factory=dict)
    context: dict = field(default_factory=dict)
    context_based: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "w": self.w,
            "expressivity": self.expressivity,
            "face": {t: d.to_dict() for t, d in self.face.items()},
            "context": {t: d.to_dict() for t, d in self.context.items()},
            "context_based": {t: d.to_dict() for t, d in self.context_based.items()},
        }


def _simplex(rng: np.random.Generator, k: int, concentration: float) -> np.ndarray:
    p = rng.dirichlet(np.full(k, concentration))
    return p / p.sum()


def _ratings(rng, space, probs, count, noise) -> RatingSet:
    idx = rng.choice(len(space), size=count, p=probs)
    if noise > 0:
        corrupt = rng.random(count) < noise
        idx = np.where(corrupt, rng.integers(0, len(space), size=count), idx)
    return RatingSet(space, tuple(space.labels[i] for i in idx))


def _zigzag(rng, n: int, dim: int, step: float) -> np.ndarray:
    """Back-and-forth track whose every inter-frame move has length ``step``."""
    origin = rng.normal(0.0, 0.2, size=dim)
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    parity = (np.arange(n) % 2)[:, None]
    return origin + parity * step * direction


def synth_features(rng, u: float, n_frames: int, fps: float) -> FeatureTimeSeries:
    """Feature track whose channel summaries are increasing functions of ``u`` in [0, 1]."""
    t = np.arange(n_frames) / fps
    phase = 2 * np.pi * np.arange(n_frames) / n_frames
    au_level = 0.3 + 1.7 * u
    gaze_step = 0.01 + 0.05 * u**1.5
    head_step = 0.005 + 0.03 * math.log1p(3 * u) / math.log(4)
    flow_level = 0.2 + 2.0 * u * u
    # full-period sinusoids average to zero, so temporal means equal the levels
    offsets = rng.uniform(0, 2 * np.pi, size=12)
    aus = au_level * (1.0 + 0.5 * np.sin(phase[:, None] + offsets[None, :]))
    flow = flow_level * (1.0 + 0.3 * np.sin(phase + rng.uniform(0, 2 * np.pi)))
    return FeatureTimeSeries(
        timestamps=t,
        aus=aus,
        gaze=_zigzag(rng, n_frames, 5, gaze_step),
        head=_zigzag(rng, n_frames, 3, head_step),
        flow=flow,
    )


def correlated_ratings(rng, scores: np.ndarray, target_r: float) -> tuple[np.ndarray, float]:
    """1..7 Likert ratings whose latent continuous version correlates exactly ``target_r`` with ``scores``.

    Returns the integer ratings and the realized latent correlation.
    """
    x = np.asarray(scores, dtype=np.float64)
    zx = (x - x.mean()) / x.std()
    noise = rng.normal(size=x.size)
    noise -= noise.mean()
    noise -= zx * (noise @ zx) / (zx @ zx)
    noise /= noise.std()
    latent = target_r * zx + math.sqrt(1 - target_r**2) * noise
    realized = float(np.corrcoef(zx, latent)[0, 1])
    ratings = np.clip(np.rint(4 + 1.5 * latent), 1, 7).astype(int)
    return ratings, realized


def human_rating_fixture(n: int = 24, target_r: float = 0.61, seed: int = 0):
    """(automatic scores, human 1..7 ratings, realized latent correlation)."""
    rng = np.random.Generator(np.random.Philox(seed))
    scores = rng.normal(size=n)
    ratings, realized = correlated_ratings(rng, scores, target_r)
    return scores, ratings, realized


def generate(config: SynthConfig) -> tuple[list[VideoRecord], dict[str, VideoTruth]]:
    """Draw a synthetic corpus; returns records and per-video ground truth."""
    children = np.random.SeedSequence(config.seed).spawn(config.n_videos)
    rngs = [np.random.Generator(np.random.Philox(c)) for c in children]
    expr = np.array([rng.normal() for rng in rngs])
    lo, hi = expr.min(), expr.max()
    u = (expr - lo) / (hi - lo) if hi > lo else np.full(expr.size, 0.5)
    const = config.constant_weight()
    weights = np.full(expr.size, const) if const is not None else 0.5 + 0.5 * u

    spaces = {t: space_for_task(t) for t in config.tasks}
    truths: dict[str, VideoTruth] = {}
    records = []
    for i, rng in enumerate(rngs):
        vid = f"syn{i:04d}"
        truth = VideoTruth(w=float(weights[i]), expressivity=float(expr[i]))
        annotations = {c: {} for c in ("context_free", "context_only", "context_based")}
        for task, space in spaces.items():
            face = _simplex(rng, len(space), config.concentration)
            ctx = _simplex(rng, len(space), config.concentration)
            uni = np.full(len(space), 1.0 / len(space))
            fused = fuse_arrays(face, ctx, uni, np.array([weights[i]]), epsilon=0.0)[0]
            fused /= fused.sum()
            truth.face[task] = CategoricalDistribution(space, face)
            truth.context[task] = CategoricalDistribution(space, ctx)
            truth.context_based[task] = CategoricalDistribution(space, fused)
            for cond, p in (("context_free", face), ("context_only", ctx), ("context_based", fused)):
                annotations[cond][task] = _ratings(rng, space, p, config.rating_count, config.annotation_noise)
        features = synth_features(rng, float(u[i]), config.n_frames, config.fps)
        truths[vid] = truth
        records.append(VideoRecord(vid, OUTCOMES[i % 4], annotations, features))

    n_h = min(config.n_human_rated, config.n_videos)
    if n_h >= 3:
        hrng = np.random.Generator(np.random.Philox(np.random.SeedSequence([config.seed, 7])))
        ratings, _ = correlated_ratings(hrng, expr[:n_h], config.human_target_r)
        records[:n_h] = [
            VideoRecord(r.video_id, r.outcome, r.annotations, r.features, {}, int(h))
            for r, h in zip(records[:n_h], ratings)
        ]
    return records, truths


def write_synthetic(config: SynthConfig, out_dir) -> Path:
    """Generate and write a manifest-compatible dataset plus ground_truth.json."""
    records, truths = generate(config)
    out_dir = Path(out_dir)
    manifest = write_dataset(records, out_dir)
    payload = {
        "config": asdict(config),
        "videos": {vid: t.to_dict() for vid, t in truths.items()},
    }
    (out_dir / "ground_truth.json").write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return manifest


def recovery_experiment(
    config: SynthConfig,
    epsilon: float = DEFAULT_EPSILON,
    pearson_mode: str = "pooled",
) -> dict:
    """Fit the plain and salience-weighted rules to a synthetic corpus.

    Weights for the salience rule come from the expressivity pipeline run on
    the synthetic features; a third row uses the generator's true weights.
    Returns per-task aggregate metrics for each row plus weight-recovery
    statistics.
    """
    from .expressivity import score_dataset
    from .fusion import FusionConfig
    from .metrics import pearson
    from .pipeline import evaluate_variants

    records, truths = generate(config)
    scores = score_dataset(records)
    est = {s.video_id: s.weight for s in scores}
    true_w = {vid: t.w for vid, t in truths.items()}
    fusion = FusionConfig(epsilon=epsilon)
    out = {"config": asdict(config), "tasks": {}}
    for task in config.tasks:
        reports = evaluate_variants(records, task, est, fusion, pearson_mode=pearson_mode, oracle_weights=true_w)
        out["tasks"][task] = {name: rep.aggregate for name, rep in reports.items()}
    ids = sorted(est)
    ew = np.array([est[v] for v in ids])
    tw = np.array([true_w[v] for v in ids])
    out["weight_recovery"] = {
        "max_abs_error": float(np.abs(ew - tw).max()),
        "pearson": pearson(ew, tw) if np.ptp(tw) > 0 else None,
    }
    out["reference_human_benchmark"] = REFERENCE_HUMAN_BENCHMARK
    return out
