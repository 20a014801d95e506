"""Context-only emotion estimates from a text-completion service.

The situation (game + joint outcome) is described in a prompt that asks for a
single label; the prompt is sampled ``n_samples`` times and the parsed labels
are turned into an empirical distribution. A deterministic mock backend
stands in for the live service in tests and offline runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from .distributions import CategoricalDistribution, from_labels, space_for_task
from .errors import AuthMissing, BackendUnavailable, ConfigError, UnparseableAfterRetries, WeightOutOfRange
from .ingest import JointOutcome

log = logging.getLogger(__name__)

PROMPT_VERSION = "context-v1"
DEFAULT_API_KEY_ENV = "SALBCI_API_KEY"
DEFAULT_N_SAMPLES = 20
DEFAULT_MAX_RETRIES = 3

DEFAULT_GAME_DESCRIPTION = (
    "Two players take part in a ten-round prisoner's dilemma game played for a pot of "
    "lottery tickets. In every round each player privately chooses to either SPLIT "
    "(cooperate) or STEAL (defect). If both split, the pot is shared equally. If one "
    "steals and the other splits, the stealer takes the entire pot and the other gets "
    "nothing. If both steal, neither player gets anything."
)

OUTCOME_SENTENCES = {
    JointOutcome.CC: "In this round the player chose to split and the partner also chose to split, so they shared the pot.",
    JointOutcome.CD: "In this round the player chose to split but the partner chose to steal, so the partner took the entire pot and the player got nothing.",
    JointOutcome.DC: "In this round the player chose to steal while the partner chose to split, so the player took the entire pot.",
    JointOutcome.DD: "In this round the player chose to steal and the partner also chose to steal, so neither of them got anything.",
}

VALENCE_ANCHORS = (
    ("v1", "very negative"),
    ("v2", "somewhat negative"),
    ("v3", "neutral"),
    ("v4", "somewhat positive"),
    ("v5", "very positive"),
)


@dataclass(frozen=True)
class ContextQuerySpec:
    outcome: JointOutcome
    task: str
    n_samples: int = DEFAULT_N_SAMPLES
    game_description: str = DEFAULT_GAME_DESCRIPTION
    backend: str = "mock"

    def __post_init__(self):
        object.__setattr__(self, "outcome", JointOutcome.parse(self.outcome))
        space_for_task(self.task)
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if self.backend not in ("live", "mock"):
            raise ConfigError(f"backend must be 'live' or 'mock', got {self.backend!r}")


def build_context_prompt(spec: ContextQuerySpec) -> str:
    space = space_for_task(spec.task)
    lines = [
        spec.game_description,
        "",
        f"{OUTCOME_SENTENCES[spec.outcome]} (Joint outcome: {spec.outcome.value}; "
        "the first letter is the player's choice, the second is the partner's. C = split, D = steal.)",
        "",
    ]
    if spec.task == "valence":
        lines.append("How pleasant or unpleasant does the player most likely feel right after learning this outcome?")
        lines.append("Answer with one of these labels:")
        lines.extend(f"- {lab}: {desc}" for lab, desc in VALENCE_ANCHORS)
    else:
        lines.append("Which emotion does the player most likely feel right after learning this outcome?")
        lines.append("Answer with one of these labels: " + ", ".join(space.labels) + ".")
    lines.append("")
    lines.append("Reply with exactly one label from the list and nothing else.")
    return "\n".join(lines) + "\n"


def build_salience_vlm_prompt(outcome, w: float, frame_count: int) -> str:
    """Three-step face / context / integration prompt for a multimodal model."""
    outcome = JointOutcome.parse(outcome)
    if not 0.5 <= w <= 1.0:
        raise WeightOutOfRange(f"W = {w} outside [0.5, 1.0]")
    if frame_count < 1:
        raise ValueError("frame_count must be >= 1")
    valence = ", ".join(f"{lab} ({desc})" for lab, desc in VALENCE_ANCHORS)
    emotions = ", ".join(space_for_task("basic_emotion").labels)
    frames = "\n".join(f"<image_{i + 1}>" for i in range(frame_count))
    return (
        f"You will see {frame_count} frames sampled uniformly from a short video of a player's "
        "face, recorded right after the player learned the outcome of a round in a prisoner's "
        "dilemma game.\n"
        f"{frames}\n\n"
        "Step 1 - Face-only recognition.\n"
        "Using only the facial expression in the frames, rate the player's valence "
        f"({valence}) and choose the basic emotion ({emotions}).\n\n"
        "Step 2 - Context-only recognition.\n"
        f"{DEFAULT_GAME_DESCRIPTION} {OUTCOME_SENTENCES[outcome]} "
        f"(Joint outcome: {outcome.value}.) Ignoring the face, rate the valence and choose the "
        "basic emotion the player most likely feels.\n\n"
        "Step 3 - Face and context integration.\n"
        f"The facial expressivity score is W = {w:.2f} on a scale from 0.50 to 1.00. Higher W "
        "means the face is more expressive and should be given more weight; lower W means the "
        "game context should be given more weight. Combine your answers from Step 1 and Step 2 "
        "accordingly and give the final valence and basic emotion.\n"
    )


def parse_label(text: str, labels: Sequence[str]) -> str | None:
    cleaned = text.strip().lower()
    return cleaned if cleaned in labels else None


# ---------------------------------------------------------------- backends


class CompletionBackend(Protocol):
    cache_tag: str

    def complete(self, prompt: str, *, key: tuple[str, str], sample_index: int, attempt: int) -> str: ...


class MockBackend:
    """Offline backend answering from a table.

    ``responses`` is either a list (answers cycle through it by
    ``sample_index + attempt``) or a mapping ``{outcome: {task: list}}``.
    ``distribution`` instead draws answers from label probabilities with an
    RNG seeded from ``seed``, the prompt and the sample index.
    """

    def __init__(self, responses=None, distribution: Mapping[str, float] | None = None, seed: int = 0):
        if (responses is None) == (distribution is None):
            raise ConfigError("mock backend needs exactly one of responses or distribution")
        self.responses = responses
        self.distribution = dict(distribution) if distribution is not None else None
        self.seed = seed
        self.calls = 0
        self._lock = threading.Lock()
        table = json.dumps({"r": responses, "d": self.distribution, "s": seed}, sort_keys=True)
        self.cache_tag = "mock:" + hashlib.sha256(table.encode()).hexdigest()[:12]

    @classmethod
    def from_file(cls, path) -> "MockBackend":
        obj = json.loads(Path(path).read_text())
        if isinstance(obj, list):
            return cls(responses=obj)
        if "distribution" in obj:
            return cls(distribution=obj["distribution"], seed=int(obj.get("seed", 0)))
        if "responses" in obj:
            return cls(responses=obj["responses"])
        return cls(responses=obj)

    def complete(self, prompt: str, *, key: tuple[str, str], sample_index: int, attempt: int) -> str:
        with self._lock:
            self.calls += 1
        if self.distribution is not None:
            digest = hashlib.sha256(f"{self.seed}|{prompt}|{sample_index}|{attempt}".encode()).digest()
            rng = random.Random(int.from_bytes(digest[:8], "big"))
            labels = sorted(self.distribution)
            return rng.choices(labels, weights=[self.distribution[k] for k in labels])[0]
        seq = self.responses
        if isinstance(seq, Mapping):
            outcome, task = key
            try:
                seq = seq[outcome][task]
            except KeyError:
                raise BackendUnavailable(f"mock table has no entry for {outcome}/{task}") from None
        if not seq:
            raise BackendUnavailable("mock table is empty")
        return str(seq[(sample_index + attempt) % len(seq)])


class TokenBucket:
    """Thread-safe token bucket; ``acquire`` blocks until a token is free."""

    def __init__(self, rate: float, capacity: float | None = None):
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self.tokens = self.capacity
        self.updated = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self.tokens = min(self.capacity, self.tokens + (now - self.updated) * self.rate)
                self.updated = now
                if self.tokens >= 1:
                    self.tokens -= 1
                    return
                wait = (1 - self.tokens) / self.rate
            time.sleep(wait)


class LiveBackend:
    """Chat-completions style HTTP backend (``POST {base_url}/chat/completions``)."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = DEFAULT_API_KEY_ENV,
        timeout: float = 60.0,
        temperature: float = 1.0,
        requests_per_second: float | None = None,
        transport_retries: int = 3,
    ):
        self.api_key = os.environ.get(api_key_env, "")
        if not self.api_key:
            raise AuthMissing(f"environment variable {api_key_env} is not set")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.timeout = timeout
        self.temperature = temperature
        self.transport_retries = transport_retries
        self.bucket = TokenBucket(requests_per_second) if requests_per_second else None
        self.cache_tag = f"live:{self.base_url}:{model}"

    def complete(self, prompt: str, *, key: tuple[str, str], sample_index: int, attempt: int) -> str:
        import httpx

        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        }
        headers = {"Authorization": f"Bearer {self.api_key}"}
        delay = 1.0
        last = None
        for _ in range(self.transport_retries + 1):
            if self.bucket:
                self.bucket.acquire()
            try:
                resp = httpx.post(f"{self.base_url}/chat/completions", json=body, headers=headers, timeout=self.timeout)
            except httpx.HTTPError as exc:
                last = exc
            else:
                if resp.status_code in (401, 403):
                    raise AuthMissing(f"backend rejected credentials ({resp.status_code})")
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = RuntimeError(f"HTTP {resp.status_code}")
                else:
                    resp.raise_for_status()
                    try:
                        return resp.json()["choices"][0]["message"]["content"]
                    except (KeyError, IndexError, ValueError) as exc:
                        raise BackendUnavailable(f"malformed completion response: {exc}") from exc
            time.sleep(delay)
            delay *= 2
        raise BackendUnavailable(f"backend unreachable after retries: {last}")


# ---------------------------------------------------------------- cache


class ResponseCache:
    """One JSON file per (prompt hash, sample index)."""

    def __init__(self, cache_dir):
        self.dir = Path(cache_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, prompt_hash: str, index: int) -> Path:
        return self.dir / f"{prompt_hash}_{index:04d}.json"

    def get(self, prompt_hash: str, index: int) -> dict | None:
        path = self._path(prompt_hash, index)
        if not path.is_file():
            return None
        return json.loads(path.read_text())

    def put(self, prompt_hash: str, index: int, entry: dict) -> None:
        path = self._path(prompt_hash, index)
        with self._lock:
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps(entry, indent=1, sort_keys=True) + "\n")
            tmp.replace(path)


def prompt_hash(prompt: str, cache_tag: str) -> str:
    return hashlib.sha256(f"{PROMPT_VERSION}\n{cache_tag}\n{prompt}".encode()).hexdigest()[:24]


def query_context_distribution(
    spec: ContextQuerySpec,
    backend: CompletionBackend,
    cache: ResponseCache | None = None,
    max_retries: int = DEFAULT_MAX_RETRIES,
    max_concurrency: int = 4,
) -> CategoricalDistribution:
    """Sample the context prompt ``spec.n_samples`` times and count the labels.

    Each sample is retried up to ``max_retries`` extra times when the answer
    is not exactly one label; a sample that never parses raises
    :class:`UnparseableAfterRetries` with the raw answers attached.
    """
    space = space_for_task(spec.task)
    prompt = build_context_prompt(spec)
    phash = prompt_hash(prompt, backend.cache_tag)
    key = (spec.outcome.value, spec.task)

    def one(index: int) -> str:
        if cache is not None:
            hit = cache.get(phash, index)
            if hit is not None and hit.get("label") in space:
                return hit["label"]
        raws = []
        for attempt in range(max_retries + 1):
            raw = backend.complete(prompt, key=key, sample_index=index, attempt=attempt)
            raws.append(raw)
            label = parse_label(raw, space.labels)
            if label is not None:
                if cache is not None:
                    cache.put(phash, index, {"prompt_hash": phash, "index": index, "raw": raw, "label": label, "attempts": attempt + 1})
                return label
            log.debug("unparseable response %r (sample %d, attempt %d)", raw, index, attempt)
        raise UnparseableAfterRetries(
            f"sample {index}: no valid label after {max_retries + 1} attempts", raw_responses=raws
        )

    indices = range(spec.n_samples)
    if max_concurrency > 1 and spec.n_samples > 1:
        with ThreadPoolExecutor(max_workers=max_concurrency) as pool:
            labels = list(pool.map(one, indices))
    else:
        labels = [one(i) for i in indices]
    return from_labels(space, sorted(labels))
