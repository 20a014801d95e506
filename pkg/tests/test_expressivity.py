import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from salbci.errors import LengthMismatch, TooFewVideos, ZeroVariance
from salbci.expressivity import (
    ChannelSummary,
    assign_tertiles,
    map_weight,
    read_scores_csv,
    score_dataset,
    scores_to_csv,
    standardize_and_score,
    summarize_channels,
    validate_against_human,
)
from salbci.ingest import FeatureTimeSeries, load_dataset
from salbci.synth import human_rating_fixture


def _series(n=4, aus=None, gaze=None, head=None, flow=None):
    return FeatureTimeSeries(
        timestamps=np.arange(n) * 0.2,
        aus=np.zeros((n, 12)) if aus is None else aus,
        gaze=np.zeros((n, 5)) if gaze is None else gaze,
        head=np.zeros((n, 3)) if head is None else head,
        flow=np.zeros(n) if flow is None else flow,
    )


def test_null_motion_summarizes_to_zero():
    assert summarize_channels(_series()).as_array().tolist() == [0, 0, 0, 0]


def test_constant_au12():
    aus = np.zeros((6, 12))
    aus[:, 6] = 2.0  # AU12 is the seventh channel
    s = summarize_channels(_series(6, aus=aus))
    assert s.au_activity == pytest.approx(2.0 / 12, abs=1e-15)
    assert (s.gaze_movement, s.head_movement, s.flow_activity) == (0, 0, 0)


def test_rotating_gaze_vector():
    theta = 0.1
    gaze = np.zeros((3, 5))
    for i in range(3):
        gaze[i, :3] = [math.cos(i * theta), math.sin(i * theta), 0.0]
    # hand computation: chord between unit vectors theta apart
    delta = 2 * math.sin(theta / 2)
    s = summarize_channels(_series(3, gaze=gaze))
    assert s.gaze_movement == pytest.approx(delta, abs=1e-12)
    assert s.head_movement == 0.0


def test_flow_mean_and_head():
    head = np.array([[0, 0, 0], [3, 4, 0], [3, 4, 0], [3, 4, 12]], dtype=float)
    s = summarize_channels(_series(4, head=head, flow=np.array([1.0, 2.0, 3.0, 6.0])))
    assert s.head_movement == pytest.approx((5 + 0 + 12) / 3)
    assert s.flow_activity == 3.0


def test_two_video_standardization():
    scores = standardize_and_score([("a", ChannelSummary(0, 0, 0, 0)), ("b", ChannelSummary(2, 2, 2, 2))])
    assert scores[0].z_components == (-1.0, -1.0, -1.0, -1.0)
    assert scores[1].z_components == (1.0, 1.0, 1.0, 1.0)
    assert [s.raw for s in scores] == [-1.0, 1.0]


def test_identical_videos_score_zero():
    same = ChannelSummary(0.3, 0.1, 0.2, 1.7)
    scores = standardize_and_score([(str(i), same) for i in range(5)])
    assert all(s.raw == 0 and s.z_components == (0, 0, 0, 0) for s in scores)


def test_standardize_needs_two_videos():
    with pytest.raises(TooFewVideos):
        standardize_and_score([("a", ChannelSummary(1, 1, 1, 1))])


def _random_summaries(rng, n):
    x = rng.gamma(2.0, 1.0, size=(n, 4))
    return [(f"v{i:03d}", ChannelSummary(*row)) for i, row in enumerate(x)]


def test_zscore_moments_on_random_cohort():
    rng = np.random.default_rng(1)
    scores = standardize_and_score(_random_summaries(rng, 100))
    z = np.array([s.z_components for s in scores])
    np.testing.assert_allclose(z.mean(axis=0), 0, atol=1e-9)
    np.testing.assert_allclose(z.std(axis=0), 1, atol=1e-9)
    assert abs(np.mean([s.raw for s in scores])) < 1e-9


def test_map_weight_examples():
    assert map_weight([-1, 0, 1]) == [0.5, 0.75, 1.0]
    assert map_weight([3.3, 3.3]) == [0.75, 0.75]
    w = map_weight([0.2, -4.1, 9.7, 1.0])
    assert w[1] == 0.5 and w[2] == 1.0
    assert map_weight([]) == []


def test_map_weight_frozen_calibration_clips():
    assert map_weight([-2, 0, 1, 5], calibration=(-1, 1)) == [0.5, 0.75, 1.0, 1.0]
    assert map_weight([0.0], weight_range=(0.2, 0.4), calibration=(-1, 1)) == [pytest.approx(0.3)]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
def test_map_weight_monotone_and_bounded(raw):
    w = map_weight(raw)
    assert all(0.5 <= x <= 1.0 for x in w)
    order = np.argsort(raw, kind="stable")
    ws = np.array(w)[order]
    assert np.all(np.diff(ws) >= 0)
    if max(raw) > min(raw):
        assert w[int(np.argmin(raw))] == 0.5 and w[int(np.argmax(raw))] == 1.0


def test_tertile_sizes_for_100():
    labels = assign_tertiles(list(np.random.default_rng(0).normal(size=100)))
    counts = Counter(labels)
    assert (counts["low"], counts["mid"], counts["high"]) == (34, 33, 33)


@pytest.mark.parametrize("n, sizes", [(3, (1, 1, 1)), (4, (2, 1, 1)), (5, (2, 2, 1)), (101, (34, 34, 33))])
def test_tertile_balance(n, sizes):
    counts = Counter(assign_tertiles(list(range(n))))
    assert (counts["low"], counts["mid"], counts["high"]) == sizes


def test_tertile_examples_and_ties():
    assert assign_tertiles([1, 2, 3]) == ["low", "mid", "high"]
    assert assign_tertiles([3, 1, 2]) == ["high", "low", "mid"]
    assert assign_tertiles([5, 5, 5], ["c", "a", "b"]) == ["high", "low", "mid"]
    with pytest.raises(TooFewVideos):
        assign_tertiles([1, 2])


def test_tertiles_order_consistent():
    rng = np.random.default_rng(5)
    raw = list(rng.normal(size=40))
    labels = assign_tertiles(raw)
    rank = {"low": 0, "mid": 1, "high": 2}
    for i in range(40):
        for j in range(40):
            if raw[i] < raw[j]:
                assert rank[labels[i]] <= rank[labels[j]]


def test_affine_invariance_of_scores_weights_tertiles():
    rng = np.random.default_rng(2)
    base = _random_summaries(rng, 100)
    x = np.array([s.as_array() for _, s in base])
    shift = rng.uniform(0, 5, size=4)
    scale = rng.uniform(0.1, 20, size=4)
    moved = [(vid, ChannelSummary(*row)) for (vid, _), row in zip(base, x * scale + shift)]
    a, b = standardize_and_score(base), standardize_and_score(moved)
    np.testing.assert_allclose([s.z_components for s in a], [s.z_components for s in b], atol=1e-9)
    ra, rb = [s.raw for s in a], [s.raw for s in b]
    np.testing.assert_allclose(map_weight(ra), map_weight(rb), atol=1e-9)
    assert assign_tertiles(ra) == assign_tertiles(rb)


def test_validate_against_human_extremes():
    ratings = [1, 3, 4, 7, 2, 5]
    assert validate_against_human([float(r) for r in ratings], ratings) == pytest.approx(1.0)
    assert validate_against_human([-float(r) for r in ratings], ratings) == pytest.approx(-1.0)
    with pytest.raises(LengthMismatch):
        validate_against_human([1.0, 2.0, 3.0], [1, 2])
    with pytest.raises(ZeroVariance):
        validate_against_human([1.0, 2.0, 3.0], [4, 4, 4])


def test_validate_on_generated_fixture():
    scores, ratings, realized = human_rating_fixture(24, 0.61, seed=0)
    assert realized == pytest.approx(0.61, abs=1e-12)
    assert abs(validate_against_human(list(scores), list(ratings)) - realized) <= 0.05


def test_score_dataset_and_csv_round_trip(tiny_dataset, tmp_path):
    records = load_dataset(tiny_dataset)
    scores = score_dataset(records, jobs=2)
    assert sorted(s.weight for s in scores)[0] == 0.5 and max(s.weight for s in scores) == 1.0
    assert Counter(s.tertile for s in scores) == {"low": 2, "mid": 1, "high": 1}
    text = scores_to_csv(scores, "abc123")
    assert text.splitlines()[0] == "# config_fingerprint=abc123"
    assert text.splitlines()[1] == "video_id,raw,z_au,z_gaze,z_head,z_flow,weight,tertile"
    path = tmp_path / "e.csv"
    path.write_text(text)
    assert read_scores_csv(path) == scores
