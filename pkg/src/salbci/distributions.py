"""Label spaces and categorical emotion distributions.

Everything here is immutable: probability vectors are stored as read-only
float64 arrays so a distribution can be shared between threads freely.
"""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    EmptyRatings,
    LengthMismatch,
    NegativeWeight,
    NormalizationError,
    OutOfScale,
    SchemaViolation,
    WrongSpace,
    ZeroMass,
)

NORM_TOL = 1e-9
DEFAULT_EPSILON = 1e-6
CANONICAL_RATING_COUNT = 20


@dataclass(frozen=True)
class LabelSpace:
    labels: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        if not labels:
            raise ValueError("label space must not be empty")
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate labels in {labels}")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_index", {lab: i for i, lab in enumerate(labels)})

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label) -> bool:
        return label in self._index

    def __iter__(self):
        return iter(self.labels)

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise WrongSpace(f"label {label!r} not in space {self.labels}") from None


BASIC_EMOTION = LabelSpace(
    ("anger", "disgust", "fear", "joy", "neutral", "sadness", "surprise")
)
VALENCE = LabelSpace(("v1", "v2", "v3", "v4", "v5"))

TASKS = ("valence", "basic_emotion")


def space_for_task(task: str) -> LabelSpace:
    if task == "valence":
        return VALENCE
    if task == "basic_emotion":
        return BASIC_EMOTION
    raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")


class CategoricalDistribution:
    """Normalized probability vector over a :class:`LabelSpace`."""

    __slots__ = ("space", "probs")

    def __init__(self, space: LabelSpace, probs):
        arr = np.array(probs, dtype=np.float64).reshape(-1)
        if arr.shape[0] != len(space):
            raise LengthMismatch(
                f"{arr.shape[0]} probabilities for {len(space)} labels"
            )
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise NormalizationError(f"invalid probability entries: {arr}")
        if abs(arr.sum() - 1.0) > NORM_TOL:
            raise NormalizationError(f"probabilities sum to {arr.sum()!r}, not 1")
        arr.setflags(write=False)
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "probs", arr)

    def __setattr__(self, name, value):
        raise AttributeError("CategoricalDistribution is immutable")

    def __eq__(self, other):
        if not isinstance(other, CategoricalDistribution):
            return NotImplemented
        return self.space == other.space and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash((self.space, self.probs.tobytes()))

    def __repr__(self):
        body = ", ".join(f"{lab}={p:.4g}" for lab, p in zip(self.space, self.probs))
        return f"CategoricalDistribution({body})"

    def __getitem__(self, label: str) -> float:
        return float(self.probs[self.space.index(label)])

    def argmax(self) -> str:
        return self.space.labels[int(np.argmax(self.probs))]

    def to_dict(self) -> dict:
        return {"space": list(self.space.labels), "probs": [float(p) for p in self.probs]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict, source: str | None = None) -> "CategoricalDistribution":
        try:
            space = LabelSpace(tuple(obj["space"]))
            return cls(space, obj["probs"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaViolation(f"bad distribution object: {exc}", file=source) from exc

    @classmethod
    def from_json(cls, text: str) -> "CategoricalDistribution":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class RatingSet:
    space: LabelSpace
    ratings: tuple[str, ...]

    def __post_init__(self):
        ratings = tuple(self.ratings)
        for r in ratings:
            if r not in self.space:
                raise WrongSpace(f"rating {r!r} not in space {self.space.labels}")
        object.__setattr__(self, "ratings", ratings)

    @property
    def count(self) -> int:
        return len(self.ratings)

    def counts(self) -> np.ndarray:
        tally = Counter(self.ratings)
        return np.array([tally.get(lab, 0) for lab in self.space.labels], dtype=np.int64)


def make_distribution(space: LabelSpace, weights: Sequence[float]) -> CategoricalDistribution:
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != len(space):
        raise LengthMismatch(f"{w.shape[0]} weights for {len(space)} labels")
    if np.any(w < 0):
        raise NegativeWeight(f"negative weight in {w}")
    total = w.sum()
    if total == 0:
        raise ZeroMass("weights sum to zero")
    return CategoricalDistribution(space, w / total)


def uniform(space: LabelSpace) -> CategoricalDistribution:
    return CategoricalDistribution(space, np.full(len(space), 1.0 / len(space)))


def point_mass(space: LabelSpace, label: str) -> CategoricalDistribution:
    p = np.zeros(len(space))
    p[space.index(label)] = 1.0
    return CategoricalDistribution(space, p)


def smooth_array(probs: np.ndarray, epsilon: float) -> np.ndarray:
    """Additive smoothing on raw arrays (last axis is the label axis)."""
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    if epsilon == 0:
        return np.asarray(probs, dtype=np.float64)
    k = probs.shape[-1]
    out = (probs + epsilon) / (1.0 + k * epsilon)
    # re-normalize to absorb rounding from the closed form
    return out / out.sum(axis=-1, keepdims=True)


def smooth(dist: CategoricalDistribution, epsilon: float = DEFAULT_EPSILON) -> CategoricalDistribution:
    """Mix in ``epsilon`` mass per label: ``(p_i + eps) / (1 + K * eps)``."""
    if epsilon == 0:
        return dist
    return CategoricalDistribution(dist.space, smooth_array(dist.probs, epsilon))


def from_ratings(ratings: RatingSet) -> CategoricalDistribution:
    if ratings.count == 0:
        raise EmptyRatings("cannot estimate a distribution from zero ratings")
    counts = ratings.counts()
    return CategoricalDistribution(ratings.space, counts / counts.sum())


def from_labels(space: LabelSpace, labels: Iterable[str]) -> CategoricalDistribution:
    return from_ratings(RatingSet(space, tuple(labels)))


def discretize_valence(rating: int) -> str:
    """Map a 1..5 Likert point onto its valence bin label."""
    if isinstance(rating, bool) or int(rating) != rating or not 1 <= rating <= 5:
        raise OutOfScale(f"valence rating {rating!r} outside 1..5")
    return f"v{int(rating)}"


def expected_valence(dist: CategoricalDistribution) -> float:
    if dist.space != VALENCE:
        raise WrongSpace("expected_valence needs the 5-bin valence space")
    return float(np.dot(np.arange(1, 6), dist.probs))


def check_rating_count(ratings: RatingSet, context: str = "") -> None:
    if ratings.count != CANONICAL_RATING_COUNT:
        warnings.warn(
            f"{context}expected {CANONICAL_RATING_COUNT} ratings, got {ratings.count}",
            RatingCountWarning,
            stacklevel=2,
        )


class RatingCountWarning(UserWarning):
    pass
