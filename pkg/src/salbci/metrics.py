"""Evaluation metrics and report assembly.

KLD is always computed truth-first (``KL(truth || prediction)``) in nats,
after additive smoothing of both arguments.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .distributions import (
    DEFAULT_EPSILON,
    CategoricalDistribution,
    expected_valence,
    smooth_array,
    space_for_task,
)
from .errors import Empty, KeyMismatch, LengthMismatch, MissingCondition, SpaceMismatch, ZeroVariance

PEARSON_MODES = ("pooled", "per_video")
CLOSENESS_METRICS = ("kld", "l1", "l2")


def fingerprint(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _check_space(p: CategoricalDistribution, q: CategoricalDistribution) -> None:
    if p.space != q.space:
        raise SpaceMismatch(f"{p.space.labels} vs {q.space.labels}")


def kld(p: CategoricalDistribution, q: CategoricalDistribution, epsilon: float = DEFAULT_EPSILON) -> float:
    """KL(p || q) in nats; ``p`` is the ground truth, ``q`` the prediction."""
    _check_space(p, q)
    ps = smooth_array(p.probs[None, :], epsilon)
    qs = smooth_array(q.probs[None, :], epsilon)
    return max(0.0, float(kernels.kld_rows(ps, qs)[0]))


def mse_rmse(pred: Sequence[float], truth: Sequence[float]) -> tuple[float, float]:
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(truth, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.shape} vs {b.shape}")
    if a.size == 0:
        raise Empty("mse of empty sequences")
    mse = float(np.mean((a - b) ** 2))
    return mse, math.sqrt(mse)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.shape} vs {b.shape}")
    if a.size < 2:
        raise LengthMismatch("pearson needs at least 2 pairs")
    da = a - a.mean()
    db = b - b.mean()
    sa = math.sqrt(float(np.dot(da, da)))
    sb = math.sqrt(float(np.dot(db, db)))
    if sa == 0 or sb == 0:
        raise ZeroVariance("pearson undefined for a constant sequence")
    r = float(np.dot(da, db)) / (sa * sb)
    return min(1.0, max(-1.0, r))


@dataclass
class EvaluationReport:
    task: str
    per_video: list[dict]
    aggregate: dict
    config_fingerprint: str
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "config_fingerprint": self.config_fingerprint,
            "aggregate": self.aggregate,
            "metadata": self.metadata,
            "per_video": self.per_video,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _safe_pearson(x, y):
    try:
        return pearson(x, y)
    except ZeroVariance:
        return None


def evaluate(
    predictions: Mapping[str, CategoricalDistribution],
    truths: Mapping[str, CategoricalDistribution],
    task: str,
    pearson_mode: str = "pooled",
    epsilon: float = DEFAULT_EPSILON,
    config: Mapping | None = None,
) -> EvaluationReport:
    """Score context-based predictions against context-based truths.

    Valence: both sides are reduced to their expected valence and compared
    across videos. Basic emotion: per-video KLD/MSE/RMSE over the label
    probabilities, averaged; Pearson over pooled (video, label) pairs, or the
    mean of per-video correlations when ``pearson_mode="per_video"``.
    """
    if set(predictions) != set(truths):
        missing = sorted(set(predictions) ^ set(truths))
        raise KeyMismatch(f"prediction/truth video sets differ: {missing[:5]}")
    if not predictions:
        raise Empty("nothing to evaluate")
    if pearson_mode not in PEARSON_MODES:
        raise ValueError(f"pearson_mode must be one of {PEARSON_MODES}")
    space = space_for_task(task)
    ids = sorted(predictions)
    for vid in ids:
        for d in (predictions[vid], truths[vid]):
            if d.space != space:
                raise SpaceMismatch(f"{vid}: distribution space does not match task {task}")

    config = dict(config or {})
    config.update({"task": task, "pearson_mode": pearson_mode, "epsilon": epsilon})
    metadata = {"kld_direction": "truth||prediction", "log_base": "e (nats)", "pearson_mode": pearson_mode}
    per_video = []

    if task == "valence":
        pv = [expected_valence(predictions[v]) for v in ids]
        tv = [expected_valence(truths[v]) for v in ids]
        for vid, p, t in zip(ids, pv, tv):
            per_video.append({"video_id": vid, "pred": p, "truth": t, "sq_error": (p - t) ** 2})
        mse, rmse = mse_rmse(pv, tv)
        aggregate = {"mse": mse, "rmse": rmse, "pearson": _safe_pearson(pv, tv), "n_videos": len(ids)}
        metadata["valence_scalarization"] = "expected bin index (1..5)"
    else:
        p_mat = np.stack([predictions[v].probs for v in ids])
        t_mat = np.stack([truths[v].probs for v in ids])
        klds = np.maximum(
            kernels.kld_rows(smooth_array(t_mat, epsilon), smooth_array(p_mat, epsilon)), 0.0
        )
        mses = ((p_mat - t_mat) ** 2).mean(axis=1)
        rmses = np.sqrt(mses)
        per_corr = []
        for i, vid in enumerate(ids):
            row = {"video_id": vid, "kld": float(klds[i]), "mse": float(mses[i]), "rmse": float(rmses[i])}
            if pearson_mode == "per_video":
                row["pearson"] = _safe_pearson(p_mat[i], t_mat[i])
                if row["pearson"] is not None:
                    per_corr.append(row["pearson"])
            per_video.append(row)
        if pearson_mode == "pooled":
            corr = _safe_pearson(p_mat.ravel(), t_mat.ravel())
        else:
            corr = float(np.mean(per_corr)) if per_corr else None
        aggregate = {
            "kld": float(klds.mean()),
            "mse": float(mses.mean()),
            "rmse": float(rmses.mean()),
            "pearson": corr,
            "n_videos": len(ids),
        }
    return EvaluationReport(task, per_video, aggregate, fingerprint(config), metadata)


def _distance(ref: CategoricalDistribution, other: CategoricalDistribution, metric: str, epsilon: float) -> float:
    if metric == "kld":
        return kld(ref, other, epsilon)
    diff = ref.probs - other.probs
    if metric == "l1":
        return float(np.abs(diff).sum())
    if metric == "l2":
        return float(np.sqrt((diff * diff).sum()))
    raise ValueError(f"unknown closeness metric {metric!r}")


def classify_closeness(
    face_only: CategoricalDistribution,
    context_only: CategoricalDistribution,
    context_based: CategoricalDistribution,
    metric: str = "kld",
    epsilon: float = DEFAULT_EPSILON,
) -> str:
    """'face', 'situation' or 'tie' depending on which cue the fused judgment sits nearer."""
    d_face = _distance(context_based, face_only, metric, epsilon)
    d_sit = _distance(context_based, context_only, metric, epsilon)
    if d_face < d_sit:
        return "face"
    if d_sit < d_face:
        return "situation"
    return "tie"


def closeness_analysis(
    records,
    tertiles: Mapping[str, str],
    task: str,
    metric: str = "kld",
    epsilon: float = DEFAULT_EPSILON,
) -> dict:
    """Per-tertile share of videos whose context-based judgment is closer to the face.

    ``records`` are :class:`~salbci.ingest.VideoRecord` objects, or tuples
    ``(video_id, face_only, context_only, context_based)`` of distributions.
    Exact ties are counted but left out of the proportions' denominator.
    """
    from .ingest import VideoRecord

    groups = {t: {"n": 0, "face_closer": 0, "situation_closer": 0, "ties": 0} for t in ("low", "mid", "high")}
    per_video = []
    for item in records:
        if isinstance(item, VideoRecord):
            dists = [item.distribution(c, task) for c in ("context_free", "context_only", "context_based")]
            if any(d is None for d in dists):
                raise MissingCondition(f"{item.video_id}: all three conditions needed for task {task}")
            vid = item.video_id
        else:
            vid, *dists = item
        if vid not in tertiles:
            raise MissingCondition(f"{vid}: no tertile assignment")
        verdict = classify_closeness(*dists, metric=metric, epsilon=epsilon)
        g = groups[tertiles[vid]]
        g["n"] += 1
        key = {"face": "face_closer", "situation": "situation_closer", "tie": "ties"}[verdict]
        g[key] += 1
        per_video.append({"video_id": vid, "tertile": tertiles[vid], "closer": verdict})
    for g in groups.values():
        denom = g["face_closer"] + g["situation_closer"]
        g["face_closer_prop"] = g["face_closer"] / denom if denom else None
        g["situation_closer_prop"] = g["situation_closer"] / denom if denom else None
    return {"task": task, "metric": metric, "tertiles": groups, "per_video": per_video}


def closeness_to_csv(result: dict, fingerprint_: str | None = None) -> str:
    lines = []
    if fingerprint_:
        lines.append(f"# config_fingerprint={fingerprint_}")
    lines.append("tertile,n,face_closer,situation_closer,ties,face_closer_prop,situation_closer_prop")
    for t in ("low", "mid", "high"):
        g = result["tertiles"][t]
        fmt = lambda v: "" if v is None else repr(v)
        lines.append(
            f"{t},{g['n']},{g['face_closer']},{g['situation_closer']},{g['ties']},"
            f"{fmt(g['face_closer_prop'])},{fmt(g['situation_closer_prop'])}"
        )
    return "\n".join(lines) + "\n"


def plot_closeness(result: dict, path, fingerprint_: str | None = None) -> None:
    """Stacked bar chart of face- vs situation-closer shares per tertile."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    tertiles = ("low", "mid", "high")
    face = [result["tertiles"][t]["face_closer_prop"] or 0.0 for t in tertiles]
    sit = [result["tertiles"][t]["situation_closer_prop"] or 0.0 for t in tertiles]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.bar(tertiles, face, label="closer to face-only")
    ax.bar(tertiles, sit, bottom=face, label="closer to context-only")
    ax.set_ylim(0, 1)
    ax.set_xlabel("expressivity tertile")
    ax.set_ylabel("proportion of videos")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    meta = {"Software": None}
    if fingerprint_:
        meta["Description"] = f"config_fingerprint={fingerprint_}"
    fig.savefig(path, metadata=meta)
    plt.close(fig)


def format_table(rows: Sequence[tuple[str, str, EvaluationReport]]) -> str:
    """Plain-text results table; rows are ``(model, salience, report)``."""
    if not rows:
        return ""
    task = rows[0][2].task
    cols = ("MSE", "RMSE", "Correlation") if task == "valence" else ("KLD", "RMSE", "Correlation")
    keys = ("mse", "rmse", "pearson") if task == "valence" else ("kld", "rmse", "pearson")
    header = f"{'Model':<24} {'Salience':<9} " + " ".join(f"{c:>12}" for c in cols)
    out = [f"task: {task}", header, "-" * len(header)]
    for model, salience, rep in rows:
        vals = []
        for k in keys:
            v = rep.aggregate.get(k)
            vals.append(f"{'n/a':>12}" if v is None else f"{v:>12.3f}")
        out.append(f"{model:<24} {salience:<9} " + " ".join(vals))
    fps = sorted({rep.config_fingerprint for _, _, rep in rows})
    out.append(f"config_fingerprint: {','.join(fps)}")
    return "\n".join(out) + "\n"
