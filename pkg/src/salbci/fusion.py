"""Cue integration rules.

Plain rule:     p(e | c, f) ∝ p(e | f) · p(e | c) / p(e)
Salience rule:  p(e | c, f) ∝ p(e | f)^w · p(e | c)^(1 - w) / p(e)

Inputs are smoothed before fusing. Both rules run through one batched kernel
with per-row exponents; the log-domain path is the default and the direct
power path is kept for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .distributions import (
    DEFAULT_EPSILON,
    CategoricalDistribution,
    LabelSpace,
    RatingSet,
    smooth_array,
    space_for_task,
    uniform,
)
from .errors import AllZeroProduct, ConfigError, NoAnnotations, SpaceMismatch, WeightOutOfRange, ZeroMass

PRIOR_MODES = ("uniform", "empirical", "explicit")
PATHS = ("log", "direct")


@dataclass(frozen=True)
class PriorSpec:
    mode: str = "uniform"
    explicit_dist: CategoricalDistribution | None = None

    def __post_init__(self):
        if self.mode not in PRIOR_MODES:
            raise ConfigError(f"prior mode must be one of {PRIOR_MODES}, got {self.mode!r}")
        if (self.mode == "explicit") != (self.explicit_dist is not None):
            raise ConfigError("explicit_dist is required iff mode == 'explicit'")

    def describe(self) -> dict:
        d = {"mode": self.mode}
        if self.explicit_dist is not None:
            d["dist"] = self.explicit_dist.to_dict()
        return d


@dataclass(frozen=True)
class FusionConfig:
    prior: PriorSpec = field(default_factory=PriorSpec)
    epsilon: float = DEFAULT_EPSILON
    weight_range: tuple[float, float] = (0.5, 1.0)
    path: str = "log"

    def __post_init__(self):
        low, high = self.weight_range
        if not (0.0 <= low <= high <= 1.0):
            raise ConfigError(f"weight_range must satisfy 0 <= low <= high <= 1, got {self.weight_range}")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.path not in PATHS:
            raise ConfigError(f"path must be one of {PATHS}")

    def describe(self) -> dict:
        return {
            "prior": self.prior.describe(),
            "epsilon": self.epsilon,
            "weight_range": list(self.weight_range),
            "path": self.path,
        }


def empirical_prior(records, task: str) -> CategoricalDistribution:
    """Pooled relative frequency of every context-based rating for ``task``."""
    space = space_for_task(task)
    counts = np.zeros(len(space), dtype=np.int64)
    for rec in records:
        rs: RatingSet | None = rec.ratings("context_based", task)
        if rs is not None:
            counts += rs.counts()
    if counts.sum() == 0:
        raise NoAnnotations(f"no context-based {task} ratings to estimate a prior from")
    return CategoricalDistribution(space, counts / counts.sum())


def resolve_prior(prior, space: LabelSpace, records=None, task: str | None = None) -> CategoricalDistribution:
    """Turn a PriorSpec (or a distribution, or None) into a concrete prior."""
    if prior is None:
        return uniform(space)
    if isinstance(prior, CategoricalDistribution):
        dist = prior
    elif prior.mode == "uniform":
        return uniform(space)
    elif prior.mode == "explicit":
        dist = prior.explicit_dist
    else:
        if records is None or task is None:
            raise ConfigError("empirical prior needs records and task to be resolved")
        dist = empirical_prior(records, task)
    if dist.space != space:
        raise SpaceMismatch("prior label space does not match the cues")
    return dist


def fuse_arrays(
    face: np.ndarray,
    context: np.ndarray,
    prior: np.ndarray,
    w: np.ndarray | None = None,
    epsilon: float = DEFAULT_EPSILON,
    path: str = "log",
) -> np.ndarray:
    """Batched fusion on (n, K) probability arrays.

    ``w=None`` selects the plain rule (both exponents 1); otherwise each row
    uses face exponent ``w[i]`` and context exponent ``1 - w[i]``.
    """
    face = np.atleast_2d(np.asarray(face, dtype=np.float64))
    context = np.atleast_2d(np.asarray(context, dtype=np.float64))
    if face.shape != context.shape:
        raise SpaceMismatch(f"face {face.shape} vs context {context.shape}")
    n, k = face.shape
    prior = np.asarray(prior, dtype=np.float64)
    prior = np.broadcast_to(prior, (n, k)) if prior.ndim == 1 else prior
    if prior.shape != (n, k):
        raise SpaceMismatch(f"prior shape {prior.shape} does not match {(n, k)}")
    if w is None:
        a = np.ones(n)
        b = np.ones(n)
    else:
        a = np.broadcast_to(np.asarray(w, dtype=np.float64), (n,)).copy()
        if np.any(~np.isfinite(a)) or np.any(a < 0) or np.any(a > 1):
            raise WeightOutOfRange(f"weights must lie in [0, 1]: {a[(a < 0) | (a > 1)][:5]}")
        b = 1.0 - a
    f = np.ascontiguousarray(smooth_array(face, epsilon))
    c = np.ascontiguousarray(smooth_array(context, epsilon))
    p = np.ascontiguousarray(smooth_array(prior, epsilon))
    if np.any(p <= 0):
        raise ZeroMass("prior has zero mass on some label; use epsilon > 0")
    kernel = kernels.fuse_log if path == "log" else kernels.fuse_direct
    out = kernel(f, c, p, a, b)
    bad = ~np.all(np.isfinite(out), axis=1)
    if np.any(bad):
        raise AllZeroProduct(f"cue product has no mass in rows {np.flatnonzero(bad)[:5].tolist()}")
    return out


def _fuse_one(face, context, prior, w, epsilon, path) -> CategoricalDistribution:
    if face.space != context.space:
        raise SpaceMismatch(f"{face.space.labels} vs {context.space.labels}")
    prior_dist = resolve_prior(prior, face.space)
    out = fuse_arrays(
        face.probs[None, :],
        context.probs[None, :],
        prior_dist.probs,
        None if w is None else np.array([w]),
        epsilon,
        path,
    )[0]
    return CategoricalDistribution(face.space, out / out.sum())


def bci(
    face: CategoricalDistribution,
    context: CategoricalDistribution,
    prior: PriorSpec | CategoricalDistribution | None = None,
    epsilon: float = DEFAULT_EPSILON,
    path: str = "log",
) -> CategoricalDistribution:
    """Plain cue integration: product of the two cues divided by the prior."""
    return _fuse_one(face, context, prior, None, epsilon, path)


def salience_bci(
    face: CategoricalDistribution,
    context: CategoricalDistribution,
    prior: PriorSpec | CategoricalDistribution | None = None,
    w: float = 0.5,
    epsilon: float = DEFAULT_EPSILON,
    path: str = "log",
) -> CategoricalDistribution:
    """Salience-weighted integration; ``w`` is the face-cue exponent in [0, 1]."""
    if not 0.0 <= w <= 1.0:
        raise WeightOutOfRange(f"w = {w} outside [0, 1]")
    return _fuse_one(face, context, prior, w, epsilon, path)


def fuse_many(
    faces: Sequence[CategoricalDistribution],
    contexts: Sequence[CategoricalDistribution],
    prior: CategoricalDistribution,
    weights: Sequence[float] | None = None,
    epsilon: float = DEFAULT_EPSILON,
    path: str = "log",
) -> list[CategoricalDistribution]:
    """Vectorized :func:`bci` (``weights=None``) or :func:`salience_bci` over many videos."""
    if not faces:
        return []
    space = faces[0].space
    for d in list(faces) + list(contexts) + [prior]:
        if d.space != space:
            raise SpaceMismatch("all cues and the prior must share one label space")
    f = np.stack([d.probs for d in faces])
    c = np.stack([d.probs for d in contexts])
    w = None if weights is None else np.asarray(weights, dtype=np.float64)
    out = fuse_arrays(f, c, prior.probs, w, epsilon, path)
    out = out / out.sum(axis=1, keepdims=True)
    return [CategoricalDistribution(space, row) for row in out]
